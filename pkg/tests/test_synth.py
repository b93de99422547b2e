from dataclasses import replace

import numpy as np
import pytest
from scipy import signal

from mrcp import synth
from mrcp.epoching import extract_epochs
from mrcp.errors import InvalidSpec

SMALL = synth.SynthSpec(n_channels=8, n_trials_per_class=8, rest_block_s=30.0, seed=5)


def test_noise_free_epochs_equal_weighted_templates():
    spec = replace(SMALL, noise_rms_uv=0.0, line_uv=0.0)
    rec, ev, labels = synth.generate(spec)
    e = extract_epochs(rec, ev)
    w = synth.channel_weights(spec)
    t = (np.arange(e.n_samples) - e.t0_offset) / rec.fs
    shapes = {c: tpl.waveform(t) for c, tpl in zip(spec.classes, spec.templates)}
    for i, lab in enumerate(labels):
        assert np.allclose(e.tensor[i], w[:, None] * shapes[lab][None, :], atol=1e-12)


def test_same_seed_bit_identical():
    a, ea, la = synth.generate(SMALL)
    b, eb, lb = synth.generate(SMALL)
    assert np.array_equal(a.data, b.data)
    assert ea == eb and la == lb
    c, _, _ = synth.generate(replace(SMALL, seed=6))
    assert not np.array_equal(a.data, c.data)


def test_template_injection_is_linear():
    rec, ev, labels = synth.generate(SMALL)
    bare, _, _ = synth.generate(replace(SMALL, template_scale=0.0))
    injected = synth.template_signal(SMALL, [o.sample for o in ev.onsets], labels, rec.n_samples)
    assert np.allclose(rec.data - bare.data, injected, atol=1e-12)


def test_events_consistent():
    rec, ev, labels = synth.generate(SMALL)
    assert len(ev.onsets) == 2 * SMALL.n_trials_per_class
    assert tuple(o.label for o in ev.onsets) == labels
    assert len(ev.rest_intervals) == SMALL.rest_blocks
    onsets = np.array([o.sample for o in ev.onsets])
    assert np.all(np.diff(onsets) >= SMALL.min_spacing_s * SMALL.fs - 1)
    for a, b in ev.rest_intervals:
        assert not np.any((onsets + int(3 * SMALL.fs) > a) & (onsets - int(2 * SMALL.fs) < b))
    # every onset carries a template, rest intervals carry none
    clean = synth.template_signal(SMALL, onsets, labels, rec.n_samples)
    c1 = list(rec.channel_labels).index("C1")
    for s in onsets:
        assert clean[c1, s] < 0
    for a, b in ev.rest_intervals:
        assert not np.any(clean[:, a:b])


def test_channel_weights_peak_at_centre():
    w = synth.channel_weights(synth.SynthSpec())
    labels = synth.channel_labels(synth.SynthSpec())
    assert len(labels) == 58 and len(set(labels)) == 58
    assert w.sum() > 0
    assert labels[int(np.argmax(w))] == "C1"
    assert w.max() == pytest.approx(1.0)


def test_noise_spectrum_slope():
    spec = replace(SMALL, n_channels=2, template_scale=0.0, line_uv=0.0)
    rec, _, _ = synth.generate(spec)
    f, p = signal.welch(rec.data, fs=rec.fs, nperseg=4096, axis=1)
    band = (f >= 0.5) & (f <= 30)
    for row in p:
        slope = np.polyfit(np.log(f[band]), np.log(row[band]), 1)[0]
        assert abs(-slope - spec.noise_exponent) <= 0.1 * spec.noise_exponent


def test_noise_rms():
    spec = replace(SMALL, n_channels=3, template_scale=0.0, line_uv=0.0)
    rec, _, _ = synth.generate(spec)
    assert np.allclose(np.sqrt(np.mean(rec.data ** 2, axis=1)), spec.noise_rms_uv)


def test_snr_sweep_shares_noise_and_scales_templates():
    (r1, e1, _), (r2, e2, _), (r0, e0, _) = synth.snr_sweep(SMALL, [1.0, 3.0, 0.0])
    assert e1 == e2 == e0
    d1, d2 = r1.data - r0.data, r2.data - r0.data
    assert np.allclose(d2, 3.0 * d1, atol=1e-9)
    # SNR is defined on the first template; the deepest class sets the peak
    ratio = max(abs(t.peak_uv) for t in SMALL.templates) / abs(SMALL.templates[0].peak_uv)
    # the peak latency falls between samples, hence the small tolerance
    assert np.abs(d1).max() == pytest.approx(ratio * SMALL.noise_rms_uv, rel=1e-5)


@pytest.mark.parametrize("bad", [
    dict(noise_rms_uv=-1.0),
    dict(n_trials_per_class=7),
    dict(classes=("touch", "touch")),
    dict(templates=(synth.Template(1.0, 0.0), synth.Template(-1.0, 0.0))),
    dict(min_spacing_s=4.0),
    dict(center_channel="XX"),
])
def test_invalid_spec(bad):
    with pytest.raises(InvalidSpec):
        synth.generate(replace(SMALL, **bad))


def test_snr_sweep_rejects_negative():
    with pytest.raises(InvalidSpec):
        synth.snr_sweep(SMALL, [-1.0])
