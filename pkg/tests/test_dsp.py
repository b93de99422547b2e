import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from mrcp import dsp, synth
from mrcp.core import Recording
from mrcp.dsp import IirFilter, car, design_filter, filtfilt, preprocess_chain, resample
from mrcp.errors import InvalidBand, InvalidTarget, SignalTooShort, SingleChannel

FS = 256.0


def _grid_gain(f: IirFilter, freqs):
    """Independent frequency-response oracle: evaluate b(z)/a(z) on the unit circle."""
    z = np.exp(1j * 2 * np.pi * np.asarray(freqs) / f.fs)
    h = np.ones_like(z)
    for sec in f.sos:
        h *= np.polyval(sec[2::-1], 1 / z) / np.polyval(sec[:2:-1], 1 / z)
    return np.abs(h)


@pytest.fixture(scope="module")
def mrcp_bp():
    return design_filter("butterworth", 4, (0.3, 3.0), FS)


def test_butterworth_template(mrcp_bp):
    grid = np.linspace(0.001, 20, 20000)
    peak = _grid_gain(mrcp_bp, grid).max()
    assert _grid_gain(mrcp_bp, [1.0])[0] >= 0.99 * peak
    assert _grid_gain(mrcp_bp, [0.01])[0] <= 0.01
    assert np.allclose(np.abs(mrcp_bp.response([1.0, 0.01])), _grid_gain(mrcp_bp, [1.0, 0.01]))


def test_notch_template():
    n = design_filter("notch", None, 50.0, FS, 35.0)
    g50, g10 = _grid_gain(n, [50.0, 10.0])
    assert g50 <= 0.01
    assert 20 * np.log10(max(g50, 1e-300)) <= -40
    assert g10 >= 0.95


def test_chebyshev_wide_band_is_stable_with_small_ripple():
    f = design_filter("chebyshev1", 8, (0.01, 100.0), FS, 0.5)
    assert f.is_stable()
    g = _grid_gain(f, np.linspace(1, 90, 500))
    assert g.max() <= 1 + 1e-6
    assert 20 * np.log10(g.min()) >= -0.5 - 1e-6
    assert f.a[0] == 1.0


@pytest.mark.parametrize("band", [(3.0, 0.3), (0.0, 3.0), (0.3, 200.0)])
def test_invalid_band(band):
    with pytest.raises(InvalidBand):
        design_filter("butterworth", 4, band, FS)


def test_invalid_notch_centre():
    with pytest.raises(InvalidBand):
        design_filter("notch", None, 130.0, FS, 35.0)


def test_identity_filter_passes_signal():
    ident = IirFilter.from_ba([1.0], [1.0])
    x = np.random.default_rng(1).standard_normal(50)
    assert np.allclose(filtfilt(ident, x), x, atol=1e-14)


def test_constant_signal_is_removed(mrcp_bp):
    y = filtfilt(mrcp_bp, np.full(256 * 60, 7.0))
    mid = y[256 * 20: 256 * 40]
    assert np.max(np.abs(mid)) < 1e-3


def test_one_hz_sinusoid_has_no_lag(mrcp_bp):
    t = np.arange(256 * 30) / FS
    x = np.sin(2 * np.pi * 1.0 * t)
    y = filtfilt(mrcp_bp, x)
    core = slice(256 * 5, 256 * 25)
    xs, ys = x[core], y[core]
    lags = np.arange(-128, 129)
    cc = [np.dot(xs[max(0, -k): len(xs) - max(0, k)], ys[max(0, k): len(ys) - max(0, -k)])
          for k in lags]
    assert lags[int(np.argmax(cc))] == 0


def test_matches_reference_forward_backward(mrcp_bp):
    # each half of the symmetrised operator is the classic padded forward-backward pass
    x = np.random.default_rng(2).standard_normal(4000)
    n = mrcp_bp.padlen
    fwd = signal.sosfiltfilt(np.array(mrcp_bp.sos), x, padtype="odd", padlen=n)
    bwd = signal.sosfiltfilt(np.array(mrcp_bp.sos), x[::-1], padtype="odd", padlen=n)[::-1]
    assert np.allclose(filtfilt(mrcp_bp, x), 0.5 * (fwd + bwd), atol=1e-10)


def test_signal_too_short(mrcp_bp):
    need = 3 * (mrcp_bp.tf_order + 1)
    with pytest.raises(SignalTooShort):
        filtfilt(mrcp_bp, np.zeros(need))
    filtfilt(mrcp_bp, np.zeros(need + 1))


def test_time_reversal_symmetry_1000_signals(mrcp_bp):
    g = np.random.default_rng(3)
    notch = design_filter("notch", None, 50.0, FS, 35.0)
    for i in range(1000):
        f = mrcp_bp if i % 2 else notch
        x = g.standard_normal(int(g.integers(60, 400)))
        lhs = filtfilt(f, x[::-1])
        rhs = filtfilt(f, x)[::-1]
        assert np.max(np.abs(lhs - rhs)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(-5, 5), beta=st.floats(-5, 5), seed=st.integers(0, 10_000))
def test_linearity(mrcp_bp, alpha, beta, seed):
    g = np.random.default_rng(seed)
    x, y = g.standard_normal((2, 300))
    lhs = filtfilt(mrcp_bp, alpha * x + beta * y)
    rhs = alpha * filtfilt(mrcp_bp, x) + beta * filtfilt(mrcp_bp, y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


def test_filtfilt_axis_argument(mrcp_bp):
    x = np.random.default_rng(4).standard_normal((3, 500))
    rows = np.vstack([filtfilt(mrcp_bp, r) for r in x])
    assert np.allclose(filtfilt(mrcp_bp, x.T, axis=0).T, rows, atol=1e-12)


def _recording(data, fs=FS):
    return Recording(data, fs, [f"E{i}" for i in range(data.shape[0])])


def test_car_examples():
    out = car(_recording(np.array([[1.0], [2.0], [3.0]])))
    assert out.data[:, 0].tolist() == [-1.0, 0.0, 1.0]
    same = car(_recording(np.tile(np.arange(10.0), (4, 1))))
    assert not np.any(same.data)


def test_car_zero_mean_and_idempotent():
    r = _recording(np.random.default_rng(5).standard_normal((58, 100)) * 50)
    once = car(r)
    assert np.max(np.abs(once.data.sum(axis=0))) < 1e-10
    assert np.max(np.abs(car(once).data - once.data)) < 1e-10


def test_car_single_channel():
    with pytest.raises(SingleChannel):
        car(_recording(np.zeros((1, 10))))


def test_resample_lengths():
    out = resample(_recording(np.zeros((2, 1280))), 16.0)
    assert out.fs == 16.0 and out.n_samples == 80
    for n in (1000, 1001, 1279, 77):
        got = resample(_recording(np.zeros((1, n))), 16.0).n_samples
        assert abs(got - n * 16 / FS) <= 1


def test_resample_non_integer_ratio():
    out = resample(_recording(np.zeros((1, 1000)), fs=250.0), 16.0)
    assert out.n_samples == 64


def test_resample_keeps_2hz_and_removes_100hz():
    t = np.arange(256 * 20) / FS
    low = resample(_recording(np.sin(2 * np.pi * 2.0 * t)[None]), 16.0).data[0]
    spec = np.abs(np.fft.rfft(low))
    freqs = np.fft.rfftfreq(low.size, 1 / 16.0)
    assert freqs[int(np.argmax(spec))] == pytest.approx(2.0)
    hi_in = np.sin(2 * np.pi * 100.0 * t)
    hi_out = resample(_recording(hi_in[None]), 16.0).data[0]
    assert np.mean(hi_out ** 2) <= 0.01 * np.mean(hi_in ** 2)


def test_resample_rejects_upsampling():
    with pytest.raises(InvalidTarget):
        resample(_recording(np.zeros((1, 100))), 512.0)


def test_chain_length_arithmetic():
    r = _recording(np.random.default_rng(6).standard_normal((58, 256 * 60)))
    out = preprocess_chain(r)
    assert out.n_channels == 58 and out.fs == 16.0 and out.n_samples == 960


def test_chain_removes_line_noise():
    t = np.arange(256 * 60) / FS
    phase = np.linspace(0, np.pi, 4)[:, None]
    r = _recording(10 * np.sin(2 * np.pi * 50 * t[None] + phase))
    out = preprocess_chain(r)
    rms_in = np.sqrt(np.mean(r.data ** 2))
    # steady state: skip the 2 s settling time of the 0.3 Hz high-pass at each end
    settle = int(2 * out.fs)
    steady = out.data[:, settle:-settle]
    assert np.sqrt(np.mean(steady ** 2)) <= 0.01 * rms_in
    # truncation transients at the edges stay small overall
    assert np.sqrt(np.mean(out.data ** 2)) <= 0.02 * rms_in


def test_chain_preserves_mrcp_peak_latency():
    spec = synth.SynthSpec(seed=3)
    rec, ev, labels = synth.generate(spec)
    out = preprocess_chain(rec)
    ev16 = ev.rescaled(rec.fs, out.fs)
    ch = int(np.argmax(synth.channel_weights(spec)))
    for cls, tpl in zip(spec.classes, spec.templates):
        onsets = [o.sample for o in ev16.onsets if o.label == cls]
        assert len(onsets) >= 40
        avg = np.mean([out.data[ch, s - 32: s + 48] for s in onsets], axis=0)
        t_min = (int(np.argmin(avg)) - 32) / out.fs
        assert abs(t_min - tpl.latency_s) <= 0.25


def test_channels_filtered_in_parallel_match_sequential(monkeypatch):
    r = _recording(np.random.default_rng(7).standard_normal((6, 256 * 10)))
    monkeypatch.setenv("MRCP_THREADS", "1")
    a = preprocess_chain(r)
    monkeypatch.setenv("MRCP_THREADS", "4")
    b = preprocess_chain(r)
    assert np.array_equal(a.data, b.data)


def test_filters_are_immutable(mrcp_bp):
    with pytest.raises(ValueError):
        mrcp_bp.sos[0, 0] = 1.0
    assert dsp.design_chain(dsp.PreprocessConfig(), FS)[0].is_stable()
