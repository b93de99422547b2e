"""The seven-layer MRCP convolutional network."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DataError, NonFiniteLoss, ShapeMismatch
from .. import rng
from .layers import (
    AvgPool,
    BatchNorm,
    Dense,
    Elu,
    Flatten,
    SpatialConv,
    TemporalConv,
    softmax,
    softmax_cross_entropy,
)

PARAM_NAMES = (
    "conv1.weight", "conv1.bias", "bn1.scale", "bn1.shift",
    "conv2.weight", "conv2.bias", "bn2.scale", "bn2.shift",
    "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
)
BUFFER_NAMES = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")


@dataclass(frozen=True)
class CnnSpec:
    temporal_kernel: int = 30
    spatial_kernel: int = 58
    depth: int = 40
    pool_kernel: int = 15
    fc1_units: int = 80
    n_classes: int = 3
    elu_alpha: float = 1.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def conv_length(self, n_samples: int) -> int:
        return n_samples - self.temporal_kernel + 1

    def pooled_length(self, n_samples: int) -> int:
        return self.conv_length(n_samples) // self.pool_kernel

    def flat_size(self, n_samples: int) -> int:
        return self.depth * self.pooled_length(n_samples)

    def check(self, n_channels: int, n_samples: int) -> None:
        sizes = (self.temporal_kernel, self.spatial_kernel, self.depth,
                 self.pool_kernel, self.fc1_units, self.n_classes)
        if min(sizes) < 1:
            raise DataError(f"all CNN sizes must be positive: {sizes}")
        if self.spatial_kernel != n_channels:
            raise ShapeMismatch(
                f"spatial kernel {self.spatial_kernel} must equal the channel count {n_channels}"
            )
        if self.pooled_length(n_samples) < 1:
            raise ShapeMismatch(
                f"{n_samples} samples leave no pooled output for kernel "
                f"{self.temporal_kernel} and pool {self.pool_kernel}"
            )

    def as_dict(self) -> dict:
        return asdict(self)


def _uniform(g, fan_in, shape, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return g.uniform(-bound, bound, size=shape).astype(dtype)


class CnnModel:
    """Parameters, batch-norm buffers and the layer graph built over them.

    Layers hold references to the arrays in ``params``/``buffers``; updating
    those arrays in place updates the network.
    """

    def __init__(self, spec: CnnSpec, n_samples: int, params: dict, buffers: dict,
                 seed: int = 0):
        self.spec = spec
        self.n_samples = int(n_samples)
        self.params = params
        self.buffers = buffers
        self.seed = int(seed)
        self.mode = "inference"
        self._build()

    @classmethod
    def init(cls, spec: CnnSpec, n_channels: int, n_samples: int, seed: int = 0,
             dtype=np.float64) -> "CnnModel":
        spec.check(n_channels, n_samples)
        g = rng.stream(seed, "cnn", "init")
        d, k, c = spec.depth, spec.temporal_kernel, spec.spatial_kernel
        flat = spec.flat_size(n_samples)
        p = {
            "conv1.weight": _uniform(g, k, (d, k), dtype),
            "conv1.bias": _uniform(g, k, (d,), dtype),
            "bn1.scale": np.ones(d, dtype=dtype),
            "bn1.shift": np.zeros(d, dtype=dtype),
            "conv2.weight": _uniform(g, d * c, (d, d, c), dtype),
            "conv2.bias": _uniform(g, d * c, (d,), dtype),
            "bn2.scale": np.ones(d, dtype=dtype),
            "bn2.shift": np.zeros(d, dtype=dtype),
            "fc1.weight": _uniform(g, flat, (flat, spec.fc1_units), dtype),
            "fc1.bias": _uniform(g, flat, (spec.fc1_units,), dtype),
            "fc2.weight": _uniform(g, spec.fc1_units, (spec.fc1_units, spec.n_classes), dtype),
            "fc2.bias": _uniform(g, spec.fc1_units, (spec.n_classes,), dtype),
        }
        b = {
            "bn1.running_mean": np.zeros(d, dtype=dtype),
            "bn1.running_var": np.ones(d, dtype=dtype),
            "bn2.running_mean": np.zeros(d, dtype=dtype),
            "bn2.running_var": np.ones(d, dtype=dtype),
        }
        return cls(spec, n_samples, p, b, seed)

    def _build(self):
        p, b, s = self.params, self.buffers, self.spec
        self.layers = [
            ("conv1", TemporalConv(p["conv1.weight"], p["conv1.bias"])),
            ("bn1", BatchNorm(p["bn1.scale"], p["bn1.shift"], b["bn1.running_mean"],
                              b["bn1.running_var"], s.bn_momentum, s.bn_eps)),
            ("elu1", Elu(s.elu_alpha)),
            ("conv2", SpatialConv(p["conv2.weight"], p["conv2.bias"])),
            ("bn2", BatchNorm(p["bn2.scale"], p["bn2.shift"], b["bn2.running_mean"],
                              b["bn2.running_var"], s.bn_momentum, s.bn_eps)),
            ("elu2", Elu(s.elu_alpha)),
            ("pool", AvgPool(s.pool_kernel)),
            ("flatten", Flatten()),
            ("fc1", Dense(p["fc1.weight"], p["fc1.bias"])),
            ("elu3", Elu(s.elu_alpha)),
            ("fc2", Dense(p["fc2.weight"], p["fc2.bias"])),
        ]

    @property
    def dtype(self):
        return self.params["fc2.weight"].dtype

    def copy(self) -> "CnnModel":
        m = CnnModel(self.spec, self.n_samples,
                     {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()}, self.seed)
        m.mode = self.mode
        return m

    def load_state(self, params: dict, buffers: dict) -> None:
        for k, v in params.items():
            self.params[k][...] = v
        for k, v in buffers.items():
            self.buffers[k][...] = v

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.spec.spatial_kernel, self.n_samples):
            raise ShapeMismatch(
                f"expected epochs of shape ({self.spec.spatial_kernel}, {self.n_samples}), "
                f"got {x.shape[-2:]}"
            )
        return x

    def logits(self, x: np.ndarray, train: bool = False, trace: list | None = None) -> np.ndarray:
        """Pre-softmax outputs for a batch ``(B, C, T)``.

        With ``trace`` given, per-trial output shapes are appended in
        (depth, channels, time) order as each layer completes.
        """
        x = self.check_input(x).astype(self.dtype, copy=False)
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        for name, layer in self.layers:
            h = layer.forward(h, train=train)
            if train and name.startswith("bn"):
                np.maximum(layer.running_var, layer.eps, out=layer.running_var)
            if trace is not None:
                if h.ndim == 4:
                    d, c, _, t = h.shape
                    trace.append((name, (d, c, t)))
                else:
                    trace.append((name, (h.shape[1],)))
        return h

    def backward(self, g: np.ndarray) -> dict:
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
        grads = {}
        for name, layer in self.layers:
            for k, v in layer.grads.items():
                grads[f"{name}.{k}"] = v
        return grads


def forward(m: CnnModel, x, trace: list | None = None) -> np.ndarray:
    """Class probabilities for one epoch ``(C, T)`` or a batch ``(B, C, T)``."""
    x = np.asarray(x)
    single = x.ndim == 2
    probs = softmax(m.logits(x, train=m.mode == "train", trace=trace).astype(np.float64))
    return probs[0] if single else probs


def loss_and_gradients(m: CnnModel, x, labels):
    """Mean cross-entropy of a batch and gradients for every parameter."""
    loss, grads, _ = train_step_gradients(m, x, labels)
    return loss, grads


def train_step_gradients(m: CnnModel, x, labels):
    """As :func:`loss_and_gradients`, also returning the train-mode logits."""
    x = m.check_input(x)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0 or labels.shape[0] != x.shape[0]:
        raise ShapeMismatch("batch must be non-empty with one label per epoch")
    logits = m.logits(x, train=True)
    loss, g = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")
    grads = m.backward(g.astype(m.dtype, copy=False))
    return loss, grads, logits


def predict_proba(m: CnnModel, x, batch_size: int = 64) -> np.ndarray:
    x = m.check_input(x)
    out = [softmax(m.logits(x[i:i + batch_size], train=False).astype(np.float64))
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros((0, m.spec.n_classes))


def predict(m: CnnModel, x, batch_size: int = 64) -> np.ndarray:
    return np.argmax(predict_proba(m, x, batch_size), axis=1)
