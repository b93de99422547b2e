"""Synthetic MRCP recordings with known ground truth.

The generator lays out a session like the recording protocol it imitates:
a rest block at the beginning, middle and end, with movement sessions in
between. Each movement onset carries a slow onset-locked negativity whose
amplitude is largest over the contralateral central channel (C1) and falls
off with scalp distance. Background activity is 1/f noise plus 50 Hz line
interference. All amplitudes are artifact parameters, not measurements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sp_fft

from . import rng
from .core import MOVEMENT_LABELS, EventList, Recording
from .errors import InvalidSpec
from .parallel import pmap

# 10-10 positions on a unit disk: x grows to the right, y to the front.
_ROWS = [
    ("Fp", 0.92, ["1", "z", "2"]),
    ("AF", 0.76, ["7", "3", "z", "4", "8"]),
    ("F", 0.55, ["7", "5", "3", "1", "z", "2", "4", "6", "8"]),
    ("FC", 0.28, ["5", "3", "1", "z", "2", "4", "6"]),
    ("C", 0.0, ["5", "3", "1", "z", "2", "4", "6"]),
    ("CP", -0.28, ["5", "3", "1", "z", "2", "4", "6"]),
    ("P", -0.55, ["7", "5", "3", "1", "z", "2", "4", "6", "8"]),
    ("PO", -0.76, ["7", "3", "z", "4", "8"]),
    ("O", -0.92, ["1", "z", "2"]),
]


def _layout():
    names, pos = [], []
    for prefix, y, cols in _ROWS:
        for c in cols:
            if c == "z":
                x = 0.0
            else:
                n = int(c)
                x = -0.22 * ((n + 1) // 2) if n % 2 else 0.22 * (n // 2)
            names.append(prefix + c)
            pos.append((x, y))
    names += ["T7", "T8", "Iz"]
    pos += [(-0.95, 0.0), (0.95, 0.0), (0.0, -1.0)]
    return names, np.array(pos)


LAYOUT_NAMES, LAYOUT_POS = _layout()
assert len(LAYOUT_NAMES) == 58


@dataclass(frozen=True)
class Template:
    """Asymmetric Gaussian negativity: slow build-up, sharper rebound."""

    peak_uv: float
    latency_s: float
    rise_s: float = 0.5
    fall_s: float = 0.2

    def waveform(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        width = np.where(t < self.latency_s, self.rise_s, self.fall_s)
        return self.peak_uv * np.exp(-0.5 * ((t - self.latency_s) / width) ** 2)


def _default_templates():
    return (Template(-8.0, 0.05), Template(-8.0 * 1.3, 0.05 + 0.15))


@dataclass(frozen=True)
class SynthSpec:
    n_channels: int = 58
    fs: float = 256.0
    n_trials_per_class: int = 80
    classes: tuple[str, str] = ("touch", "grasp")
    templates: tuple[Template, Template] = field(default_factory=_default_templates)
    center_channel: str = "C1"
    weight_radius: float = 0.9
    noise_exponent: float = 1.0
    noise_rms_uv: float = 4.0
    line_uv: float = 10.0
    line_hz: float = 50.0
    n_sessions: int = 4
    rest_blocks: int = 3
    rest_block_s: float = 180.0
    min_spacing_s: float = 6.0
    jitter_s: float = 2.0
    template_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if not 1 <= self.n_channels <= len(LAYOUT_NAMES):
            raise InvalidSpec(f"n_channels must be in [1, {len(LAYOUT_NAMES)}]")
        if self.fs <= 2 * self.line_hz and self.line_uv:
            raise InvalidSpec("sampling rate too low for the line-noise component")
        if self.n_trials_per_class < 1 or self.n_trials_per_class % self.n_sessions:
            raise InvalidSpec("n_trials_per_class must be a positive multiple of n_sessions")
        if len(self.classes) != 2 or len(set(self.classes)) != 2:
            raise InvalidSpec("exactly two distinct movement classes are required")
        for c in self.classes:
            if c not in MOVEMENT_LABELS:
                raise InvalidSpec(f"unknown movement class {c!r}")
        for t in self.templates:
            if not t.peak_uv < 0:
                raise InvalidSpec("movement templates must have negative peak amplitude")
            if t.rise_s <= 0 or t.fall_s <= 0:
                raise InvalidSpec("template widths must be positive")
        if self.min_spacing_s < 5.0:
            raise InvalidSpec("onsets closer than 5 s would overlap epochs")
        if self.noise_rms_uv < 0 or self.line_uv < 0 or self.template_scale < 0:
            raise InvalidSpec("amplitudes must be non-negative")
        if self.center_channel not in LAYOUT_NAMES:
            raise InvalidSpec(f"unknown centre channel {self.center_channel!r}")


def channel_labels(spec: SynthSpec) -> tuple[str, ...]:
    """The ``n_channels`` layout channels nearest the centre, in layout order."""
    center = LAYOUT_POS[LAYOUT_NAMES.index(spec.center_channel)]
    d = np.linalg.norm(LAYOUT_POS - center, axis=1)
    chosen = np.sort(np.argsort(d, kind="stable")[: spec.n_channels])
    return tuple(LAYOUT_NAMES[i] for i in chosen)


def channel_weights(spec: SynthSpec) -> np.ndarray:
    """Cosine fall-off from the centre channel, zero beyond ``weight_radius``."""
    labels = channel_labels(spec)
    center = LAYOUT_POS[LAYOUT_NAMES.index(spec.center_channel)]
    pos = LAYOUT_POS[[LAYOUT_NAMES.index(c) for c in labels]]
    d = np.linalg.norm(pos - center, axis=1)
    return np.cos(0.5 * np.pi * np.minimum(d / spec.weight_radius, 1.0))


def pink_noise(n: int, fs: float, exponent: float, rms: float, g: np.random.Generator,
               f_floor: float = 0.1) -> np.ndarray:
    """Gaussian noise with power spectrum ~ 1/f**exponent, scaled to ``rms``.

    Below ``f_floor`` the spectrum is held flat so that the variance stays
    finite; the DC bin is removed.
    """
    m = sp_fft.next_fast_len(n, real=True)
    white = g.standard_normal(m)
    if rms == 0:
        return np.zeros(n)
    spec = sp_fft.rfft(white)
    f = sp_fft.rfftfreq(m, 1.0 / fs)
    gain = np.maximum(f, f_floor) ** (-exponent / 2.0)
    gain[0] = 0.0
    x = sp_fft.irfft(spec * gain, m)[:n]
    x = x - x.mean()
    return x * (rms / np.sqrt(np.mean(x * x)))


def _schedule(spec: SynthSpec, g: np.random.Generator):
    """Onset times (s), labels and rest intervals (s)."""
    onsets, labels, rest = [], [], []
    t = 2.0
    per_session = spec.n_trials_per_class // spec.n_sessions
    rest_after = {0, spec.n_sessions // 2, spec.n_sessions}  # before, middle, end
    rest_left = spec.rest_blocks

    def add_rest():
        nonlocal t, rest_left
        rest.append((t, t + spec.rest_block_s))
        t += spec.rest_block_s + 1.0
        rest_left -= 1

    for s in range(spec.n_sessions + 1):
        if s in rest_after and rest_left > 0:
            add_rest()
        if s == spec.n_sessions:
            break
        order = np.repeat(np.arange(2), per_session)
        order = order[g.permutation(order.size)]
        onset = t + 2.0 + g.uniform(0, spec.jitter_s)
        for c in order:
            onsets.append(onset)
            labels.append(spec.classes[c])
            onset += spec.min_spacing_s + g.uniform(0, spec.jitter_s)
        t = onsets[-1] + 3.0 + 1.0
    while rest_left > 0:
        add_rest()
    return onsets, labels, rest, t + 2.0


def generate(spec: SynthSpec = SynthSpec()):
    """Build a continuous recording, its events and the true trial labels.

    Returns
    -------
    (Recording, EventList, tuple of str)
    """
    spec.validate()
    fs = spec.fs
    onsets_s, labels, rest_s, total_s = _schedule(spec, rng.stream(spec.seed, "schedule"))
    n = int(math.ceil(total_s * fs))
    names = channel_labels(spec)
    n_ch = len(names)

    def noise_row(c):
        return pink_noise(n, fs, spec.noise_exponent, spec.noise_rms_uv,
                          rng.stream(spec.seed, "noise", c))

    data = np.vstack(pmap(noise_row, range(n_ch)))
    if spec.line_uv:
        g = rng.stream(spec.seed, "line")
        phase = g.uniform(0, 2 * np.pi, n_ch)
        amp = spec.line_uv * g.uniform(0.5, 1.5, n_ch)
        tt = np.arange(n) / fs
        data += amp[:, None] * np.sin(2 * np.pi * spec.line_hz * tt[None, :] + phase[:, None])

    onset_idx = [int(round(o * fs)) for o in onsets_s]
    data += template_signal(spec, onset_idx, labels, n)
    rest_idx = tuple((int(math.ceil(a * fs)), int(math.floor(b * fs))) for a, b in rest_s)
    ev = EventList(tuple(zip(onset_idx, labels)), rest_idx)
    return Recording(data, fs, names), ev, tuple(labels)


def template_signal(spec: SynthSpec, onset_idx, labels, n: int,
                    t_pre: float = -2.0, t_post: float = 3.0) -> np.ndarray:
    """Sum of weighted class templates placed at each onset."""
    w = channel_weights(spec) * spec.template_scale
    out = np.zeros((len(w), n))
    if spec.template_scale == 0:
        return out
    pre, post = int(round(t_pre * spec.fs)), int(round(t_post * spec.fs))
    rel = np.arange(pre, post)
    t = rel / spec.fs
    shapes = {c: tpl.waveform(t) for c, tpl in zip(spec.classes, spec.templates)}
    for s, lab in zip(onset_idx, labels):
        lo, hi = max(s + pre, 0), min(s + post, n)
        seg = shapes[lab][lo - (s + pre): hi - (s + pre)]
        out[:, lo:hi] += w[:, None] * seg[None, :]
    return out


def snr_sweep(spec: SynthSpec, snr_values):
    """One dataset per SNR (first template's peak over noise RMS).

    Only the template amplitude changes between datasets; every dataset
    shares the base seed, so noise and timing are identical.
    """
    base_peak = abs(spec.templates[0].peak_uv)
    out = []
    for snr in snr_values:
        if snr < 0:
            raise InvalidSpec("SNR values must be non-negative")
        scale = 0.0 if snr == 0 else snr * spec.noise_rms_uv / base_peak
        out.append(generate(replace(spec, template_scale=scale)))
    return out
