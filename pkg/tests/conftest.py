import numpy as np
import pytest

from mrcp import dsp, epoching, synth
from mrcp.core import EpochSet, concat_epochs


def pipeline_epochs(spec: synth.SynthSpec, reject: bool = True) -> EpochSet:
    """Synthetic recording run through the default preprocessing and epoching."""
    rec, ev, _ = synth.generate(spec)
    pre = dsp.preprocess_chain(rec)
    ev16 = ev.rescaled(rec.fs, pre.fs)
    e = concat_epochs([epoching.extract_epochs(pre, ev16),
                       epoching.extract_rest_epochs(pre, ev16)])
    if reject:
        e, _ = epoching.reject_outliers(e)
    return e


@pytest.fixture(scope="session")
def default_epochs():
    return pipeline_epochs(synth.SynthSpec())


def gaussian_epochs(rng, n_per_class=(20, 20, 20), n_channels=4, n_samples=40, shift=1.0):
    """Small labelled epoch set with a class-dependent offset in every sample."""
    xs, ys = [], []
    for c, n in enumerate(n_per_class):
        xs.append(rng.standard_normal((n, n_channels, n_samples)) + shift * c)
        ys.append(np.full(n, c))
    names = ("touch", "grasp", "rest")[: len(n_per_class)]
    return EpochSet(np.concatenate(xs), np.concatenate(ys), names, 16.0, 8)
