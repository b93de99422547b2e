"""On-disk formats: recordings, event tables and a versioned array container.

All writers go through :func:`atomic_write`, so an interrupted run never
leaves a truncated file under its final name.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import EpochSet, EventList, Onset, Recording
from .errors import DataError

RECORDING_MAGIC = b"EEGR"
RECORDING_VERSION = 1
ARRAYS_MAGIC = b"MRCA"
ARRAYS_VERSION = 1


class FormatError(DataError):
    pass


def atomic_write(path, payload: bytes) -> None:
    """Write ``payload`` to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        # mkstemp creates 0600; give the file the mode a plain open() would
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# --- recordings ---------------------------------------------------------

def recording_bytes(r: Recording) -> bytes:
    out = io.BytesIO()
    out.write(RECORDING_MAGIC)
    out.write(struct.pack("<HdIQ", RECORDING_VERSION, r.fs, r.n_channels, r.n_samples))
    for label in r.channel_labels:
        raw = label.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
    out.write(np.ascontiguousarray(r.data, dtype="<f4").tobytes())
    return out.getvalue()


def write_recording(path, r: Recording) -> None:
    """Samples are stored as little-endian float32 in µV, channel-major."""
    atomic_write(path, recording_bytes(r))


def read_recording(path) -> Recording:
    buf = Path(path).read_bytes()
    if buf[:4] != RECORDING_MAGIC:
        raise FormatError(f"{path}: not a recording file (bad magic)")
    head = struct.calcsize("<HdIQ")
    if len(buf) < 4 + head:
        raise FormatError(f"{path}: truncated header")
    version, fs, n_ch, n_s = struct.unpack_from("<HdIQ", buf, 4)
    if version != RECORDING_VERSION:
        raise FormatError(f"{path}: unsupported recording version {version}")
    pos = 4 + head
    labels = []
    for _ in range(n_ch):
        if pos + 4 > len(buf):
            raise FormatError(f"{path}: truncated label table")
        (k,) = struct.unpack_from("<I", buf, pos)
        labels.append(buf[pos + 4:pos + 4 + k].decode("utf-8"))
        pos += 4 + k
    need = n_ch * n_s * 4
    if len(buf) - pos != need:
        raise FormatError(f"{path}: expected {need} sample bytes, found {len(buf) - pos}")
    data = np.frombuffer(buf, dtype="<f4", count=n_ch * n_s, offset=pos).reshape(n_ch, n_s)
    return Recording(data.astype(np.float64), fs, tuple(labels))


# --- events -------------------------------------------------------------

def events_text(ev: EventList) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    out.write("#rest,start,end\n")
    for a, b in ev.rest_intervals:
        out.write(f"#rest,{a},{b}\n")
    w.writerow(["sample_index", "label"])
    for onset, label in ev.onsets:
        w.writerow([onset, label])
    return out.getvalue()


def write_events(path, ev: EventList) -> None:
    atomic_write_text(path, events_text(ev))


def read_events(path) -> EventList:
    rest, onsets, header_seen = [], [], False
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split(",")
                if parts[0] != "rest" or len(parts) != 3:
                    raise FormatError(f"{path}:{lineno}: bad comment line {line!r}")
                if parts[1:] == ["start", "end"]:
                    continue
                try:
                    rest.append((int(parts[1]), int(parts[2])))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad rest interval") from exc
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if row != ["sample_index", "label"]:
                    raise FormatError(f"{path}:{lineno}: expected header sample_index,label")
                header_seen = True
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                onsets.append(Onset(int(row[0]), row[1]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad sample index {row[0]!r}") from exc
    if not header_seen:
        raise FormatError(f"{path}: missing header sample_index,label")
    return EventList(tuple(onsets), tuple(rest))


# --- array container ----------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def arrays_bytes(meta: dict, arrays: dict) -> bytes:
    """Deterministic container: JSON header (sorted keys) then raw arrays.

    Layout: magic, u16 version, u64 header length, header, array bytes.
    Arrays are stored little-endian in name order.
    """
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": _jsonable(meta), "arrays": table}, sort_keys=True,
                        separators=(",", ":"), allow_nan=True).encode("utf-8")
    return (ARRAYS_MAGIC + struct.pack("<HQ", ARRAYS_VERSION, len(header)) + header
            + b"".join(blobs))


def write_arrays(path, meta: dict, arrays: dict) -> None:
    atomic_write(path, arrays_bytes(meta, arrays))


def read_arrays(path) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != ARRAYS_MAGIC:
        raise FormatError(f"{path}: not an array container (bad magic)")
    version, hlen = struct.unpack_from("<HQ", buf, 4)
    if version != ARRAYS_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    start = 4 + struct.calcsize("<HQ")
    header = json.loads(buf[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for ent in header["arrays"]:
        lo = base + ent["offset"]
        if lo + ent["nbytes"] > len(buf):
            raise FormatError(f"{path}: array {ent['name']!r} is truncated")
        a = np.frombuffer(buf[lo:lo + ent["nbytes"]], dtype=np.dtype(ent["dtype"]))
        arrays[ent["name"]] = a.reshape(ent["shape"]).copy()
    return header["meta"], arrays


# --- epochs -------------------------------------------------------------

def write_epochs(path, e: EpochSet, meta: dict | None = None) -> None:
    """Epoch amplitudes are stored as float32, labels as int64."""
    m = dict(meta or {})
    m.update(kind="epochs", classes=list(e.classes), fs=e.fs, t0_offset=e.t0_offset,
             channel_labels=list(e.channel_labels))
    write_arrays(path, m, {"tensor": e.tensor.astype("<f4"),
                           "labels": e.labels.astype("<i8")})


def read_epochs(path) -> tuple[EpochSet, dict]:
    meta, arrays = read_arrays(path)
    if meta.get("kind") != "epochs":
        raise FormatError(f"{path}: not an epoch file")
    e = EpochSet(arrays["tensor"].astype(np.float64), arrays["labels"],
                 tuple(meta["classes"]), meta["fs"], meta["t0_offset"],
                 tuple(meta["channel_labels"]))
    return e, meta


# --- models -------------------------------------------------------------

def model_arrays(model) -> tuple[dict, dict]:
    """Split a trained model into (metadata, arrays) for the container."""
    from .nn.model import CnnModel
    from .rf import RfModel
    from .slda import SldaModel

    if isinstance(model, SldaModel):
        meta = {"kind": "slda", "gamma": model.gamma, "window_len": model.window_len,
                "window_start": model.window_start}
        arrays = {"class_means": model.class_means, "shrunk_covariance": model.shrunk_covariance,
                  "priors": model.priors, "classes": np.asarray(model.classes, dtype=np.int64)}
        return meta, arrays
    if isinstance(model, RfModel):
        meta = {"kind": "rf", "n_classes": model.n_classes, "n_features": model.n_features,
                "mtry": model.mtry, "seed": model.seed, "min_leaf": model.min_leaf,
                "oob_accuracy": model.oob_accuracy, "n_trees": model.n_trees}
        sizes = np.array([t.n_nodes for t in model.trees], dtype=np.int64)
        cat = (lambda f: np.concatenate([getattr(t, f) for t in model.trees])
               if model.trees else np.zeros(0))
        arrays = {"tree_sizes": sizes, "feature": cat("feature").astype(np.int64),
                  "threshold": cat("threshold").astype(np.float64),
                  "left": cat("left").astype(np.int64), "right": cat("right").astype(np.int64),
                  "counts": (np.concatenate([t.counts for t in model.trees])
                             if model.trees else np.zeros((0, model.n_classes), np.int64))}
        return meta, arrays
    if isinstance(model, CnnModel):
        meta = {"kind": "cnn", "spec": model.spec.as_dict(), "n_samples": model.n_samples,
                "seed": model.seed}
        arrays = {f"param/{k}": v for k, v in model.params.items()}
        arrays.update({f"buffer/{k}": v for k, v in model.buffers.items()})
        return meta, arrays
    raise DataError(f"cannot serialise {type(model).__name__}")


def model_from_arrays(meta: dict, arrays: dict):
    from .nn.model import CnnModel, CnnSpec
    from .rf import RfModel, Tree
    from .slda import SldaModel

    kind = meta.get("kind")
    if kind == "slda":
        return SldaModel(arrays["class_means"], arrays["shrunk_covariance"], meta["gamma"],
                         arrays["priors"], arrays["classes"], meta["window_len"],
                         meta["window_start"])
    if kind == "rf":
        ends = np.cumsum(arrays["tree_sizes"])
        trees = []
        for lo, hi in zip(np.concatenate([[0], ends[:-1]]), ends):
            trees.append(Tree(arrays["feature"][lo:hi], arrays["threshold"][lo:hi],
                              arrays["left"][lo:hi], arrays["right"][lo:hi],
                              arrays["counts"][lo:hi]))
        return RfModel(tuple(trees), meta["n_classes"], meta["n_features"], meta["mtry"],
                       meta["seed"], meta["min_leaf"], meta["oob_accuracy"])
    if kind == "cnn":
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        buffers = {k[len("buffer/"):]: v for k, v in arrays.items() if k.startswith("buffer/")}
        return CnnModel(CnnSpec(**meta["spec"]), meta["n_samples"], params, buffers,
                        meta["seed"])
    raise FormatError(f"unknown model kind {kind!r}")


def write_model(path, model, extra: dict | None = None) -> None:
    meta, arrays = model_arrays(model)
    meta.update(extra or {})
    write_arrays(path, meta, arrays)


def read_model(path):
    """Return ``(model, metadata)``."""
    meta, arrays = read_arrays(path)
    return model_from_arrays(meta, arrays), meta
