"""Shared numerical helpers for the test suite."""
import numpy as np

from mrcp.nn import CnnModel, CnnSpec, loss_and_gradients
from mrcp.nn.model import PARAM_NAMES

STEP = 1e-4


def close_enough(analytic, numeric):
    return np.abs(analytic - numeric) <= np.maximum(1e-4, 1e-3 * np.abs(numeric))


def numeric_grad(f, arr):
    out = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + STEP
        up = f()
        flat[i] = old - STEP
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * STEP)
    return out


def _random_spec(g):
    k = int(g.integers(2, 5))
    pool = int(g.integers(1, 4))
    n_samples = k - 1 + pool * int(g.integers(1, 4)) + int(g.integers(0, 2))
    spec = CnnSpec(temporal_kernel=k, spatial_kernel=int(g.integers(1, 4)),
                   depth=int(g.integers(1, 4)), pool_kernel=pool,
                   fc1_units=int(g.integers(2, 5)), n_classes=int(g.integers(2, 4)))
    return spec, n_samples


def _perturb_bn(model, g):
    # move batch-norm affine parameters off their identity initialisation
    for k in ("bn1.scale", "bn2.scale", "bn1.shift", "bn2.shift"):
        model.params[k][...] = g.uniform(0.5, 1.5, model.params[k].shape) * (
            1 if k.endswith("scale") else g.choice([-1, 1], model.params[k].shape))


def check_random_models(n_configs: int, seed: int = 0) -> int:
    """Finite-difference check of every parameter on random small networks.

    Returns the number of configurations checked; raises AssertionError on
    the first mismatch.
    """
    g = np.random.default_rng(seed)
    for trial in range(n_configs):
        spec, n_samples = _random_spec(g)
        model = CnnModel.init(spec, spec.spatial_kernel, n_samples, seed=trial)
        _perturb_bn(model, g)
        batch = int(g.integers(3, 6))
        x = g.standard_normal((batch, spec.spatial_kernel, n_samples))
        y = g.integers(0, spec.n_classes, batch)
        _, grads = loss_and_gradients(model, x, y)
        assert set(grads) == set(PARAM_NAMES)
        for name in PARAM_NAMES:
            p = model.params[name]
            assert grads[name].shape == p.shape
            num = numeric_grad(lambda: loss_and_gradients(model, x, y)[0], p)
            ok = close_enough(grads[name], num)
            assert ok.all(), (trial, name, np.max(np.abs(grads[name] - num)))
    return n_configs
