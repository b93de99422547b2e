"""Filter design, zero-phase filtering, common-average reference, resampling.

Filters are held as cascades of second-order sections. The transfer-function
form (``b``, ``a``) is available for inspection, but an order-8 Chebyshev
band-pass with a 0.01 Hz edge is not representable stably that way, so all
filtering runs section by section.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal

from .core import Recording
from .errors import InvalidBand, InvalidTarget, SignalTooShort, SingleChannel, UnstableDesign
from .parallel import pmap

STABILITY_MARGIN = 1e-9


def _trim(p: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(p)
    return p[: nz[-1] + 1] if nz.size else p[:1]


@dataclass(frozen=True)
class IirFilter:
    sos: np.ndarray
    family: str = "custom"
    order: int = 0
    band: tuple = ()
    fs: float = 0.0
    design_param: float | None = None
    tf_order: int = field(init=False)

    def __post_init__(self):
        sos = np.array(self.sos, dtype=np.float64).reshape(-1, 6)
        if not np.all(np.isfinite(sos)):
            raise UnstableDesign("non-finite filter coefficients")
        # normalise each section so that a0 = 1
        sos = sos / sos[:, 3:4]
        sos.flags.writeable = False
        object.__setattr__(self, "sos", sos)
        b, a = signal.sos2tf(sos)
        object.__setattr__(self, "tf_order", max(len(_trim(b)), len(_trim(a))) - 1)

    @classmethod
    def from_ba(cls, b, a, **meta) -> "IirFilter":
        b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        b, a = b / a[0], a / a[0]
        n = max(len(b), len(a))
        if n <= 3:
            sos = np.concatenate([np.pad(b, (0, 3 - len(b))), np.pad(a, (0, 3 - len(a)))])
        else:
            sos = signal.tf2sos(b, a)
        return cls(sos, **meta)

    @property
    def b(self) -> np.ndarray:
        return _trim(signal.sos2tf(self.sos)[0])

    @property
    def a(self) -> np.ndarray:
        return _trim(signal.sos2tf(self.sos)[1])

    def poles(self) -> np.ndarray:
        out = [np.roots(_trim(s[3:])) for s in self.sos]
        return np.concatenate(out) if out else np.zeros(0, dtype=complex)

    def is_stable(self) -> bool:
        p = self.poles()
        return bool(np.all(np.abs(p) < 1.0 - STABILITY_MARGIN))

    def response(self, freqs_hz, fs: float | None = None) -> np.ndarray:
        """Complex frequency response at ``freqs_hz``."""
        fs = fs or self.fs
        _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(freqs_hz), fs=fs)
        return h

    @property
    def padlen(self) -> int:
        return 3 * self.tf_order


def design_filter(family: str, order: int | None, band, fs: float, ripple_or_q=None) -> IirFilter:
    """Design a band-pass (``chebyshev1``/``butterworth``) or ``notch`` filter.

    ``order`` is the prototype order handed to the design routine; a
    band-pass of order N has 2N poles. For the notch, ``band`` is the centre
    frequency and ``ripple_or_q`` its quality factor.
    """
    nyq = fs / 2.0
    if family == "notch":
        center = float(np.ravel(band)[0])
        if not 0 < center < nyq:
            raise InvalidBand(f"notch centre {center} Hz not inside (0, {nyq})")
        q = 35.0 if ripple_or_q is None else float(ripple_or_q)
        b, a = signal.iirnotch(center, q, fs=fs)
        f = IirFilter.from_ba(b, a, family="notch", order=2, band=(center,), fs=fs, design_param=q)
    elif family in ("chebyshev1", "butterworth"):
        lo, hi = (float(x) for x in band)
        if not 0 < lo < hi < nyq:
            raise InvalidBand(f"band ({lo}, {hi}) Hz must satisfy 0 < low < high < {nyq}")
        if order is None or order < 1:
            raise InvalidBand(f"order must be positive, got {order}")
        if family == "chebyshev1":
            rp = 0.5 if ripple_or_q is None else float(ripple_or_q)
            sos = signal.cheby1(order, rp, [lo, hi], btype="bandpass", fs=fs, output="sos")
        else:
            rp = None
            sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
        f = IirFilter(sos, family=family, order=int(order), band=(lo, hi), fs=fs, design_param=rp)
    else:
        raise InvalidBand(f"unknown filter family {family!r}")
    if not f.is_stable():
        raise UnstableDesign(
            f"{family} design has a pole at |z| = {np.abs(f.poles()).max():.12f}"
        )
    return f


def _odd_ext(x: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return x
    left = 2 * x[..., :1] - x[..., n:0:-1]
    right = 2 * x[..., -1:] - x[..., -2:-n - 2:-1]
    return np.concatenate([left, x, right], axis=-1)


def _forward_backward(f: IirFilter, x: np.ndarray) -> np.ndarray:
    n = f.padlen
    sos = np.array(f.sos)  # sosfilt rejects read-only buffers
    ext = _odd_ext(x, n)
    zi = signal.sosfilt_zi(sos)
    zi = zi.reshape((zi.shape[0],) + (1,) * (x.ndim - 1) + (2,))
    y, _ = signal.sosfilt(sos, ext, axis=-1, zi=zi * ext[..., :1][None])
    y = y[..., ::-1]
    y, _ = signal.sosfilt(sos, y, axis=-1, zi=zi * y[..., :1][None])
    y = y[..., ::-1]
    return y[..., n: y.shape[-1] - n] if n else y


def filtfilt(f: IirFilter, x, axis: int = -1) -> np.ndarray:
    """Zero-phase filtering along ``axis``.

    The signal is extended at both ends by odd reflection of length
    ``3 * tf_order``, the section states start at the step-response steady
    state, and the filter runs forward then backward. The result is averaged
    with the backward-then-forward pass, which makes the operator exactly
    commute with time reversal.
    """
    x = np.moveaxis(np.array(x, dtype=np.float64), axis, -1)
    need = 3 * (f.tf_order + 1)
    if x.shape[-1] <= need:
        raise SignalTooShort(f"signal of length {x.shape[-1]} needs more than {need} samples")
    fwd = _forward_backward(f, x)
    bwd = _forward_backward(f, x[..., ::-1])[..., ::-1]
    y = 0.5 * (fwd + bwd)
    return np.moveaxis(y, -1, axis)


def car(r: Recording) -> Recording:
    """Common average reference over all channels of ``r``."""
    if r.n_channels < 2:
        raise SingleChannel("common average reference needs at least two channels")
    return r.with_data(r.data - r.data.mean(axis=0, keepdims=True))


def resample(r: Recording, target_fs: float) -> Recording:
    """Polyphase rational downsampling with a Kaiser (beta 5) anti-alias filter."""
    if not 0 < target_fs < r.fs:
        raise InvalidTarget(f"target rate {target_fs} Hz must be below {r.fs} Hz")
    ratio = Fraction(target_fs / r.fs).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    out_len = int(np.floor(r.n_samples * target_fs / r.fs + 0.5))
    y = signal.resample_poly(r.data, up, down, axis=1, window=("kaiser", 5.0))
    if y.shape[1] >= out_len:
        y = y[:, :out_len]
    else:
        y = np.pad(y, ((0, 0), (0, out_len - y.shape[1])))
    return r.with_data(y, fs=float(target_fs))


@dataclass(frozen=True)
class PreprocessConfig:
    wide_band: tuple[float, float] = (0.01, 100.0)
    wide_order: int = 8
    wide_ripple_db: float = 0.5
    notch_hz: float = 50.0
    notch_q: float = 35.0
    mrcp_band: tuple[float, float] = (0.3, 3.0)
    mrcp_order: int = 4
    target_fs: float = 16.0


def design_chain(cfg: PreprocessConfig, fs: float) -> list[IirFilter]:
    return [
        design_filter("chebyshev1", cfg.wide_order, cfg.wide_band, fs, cfg.wide_ripple_db),
        design_filter("notch", None, cfg.notch_hz, fs, cfg.notch_q),
        design_filter("butterworth", cfg.mrcp_order, cfg.mrcp_band, fs),
    ]


def preprocess_chain(r: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Wide band-pass, notch, MRCP band-pass (all zero-phase), CAR, downsample."""
    filters = design_chain(cfg, r.fs)

    def one_channel(row):
        for f in filters:
            row = filtfilt(f, row)
        return row

    filtered = np.vstack(pmap(one_channel, list(r.data)))
    return resample(car(r.with_data(filtered)), cfg.target_fs)
