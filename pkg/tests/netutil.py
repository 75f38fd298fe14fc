"""Small network fixtures shared by the model tests."""

import numpy as np

from normcraft.bench import BenchSpec, gen_shape
from normcraft.cmgnet import NetConfig, init_state, sample_training_set


def small_config(**kw):
    base = dict(patch_size=32, lfe_scales=(8, 16), hier_scales=(8, 8, 4, 4), pff_neighbors=4,
                feature_widths=(6, 8, 10), seed=0)
    base.update(kw)
    return NetConfig(**base)


def small_batch(cfg, n=3, seed=0, labels="cnd"):
    clean, noisy = gen_shape(BenchSpec("sphere", 400, 0.01, seed=seed))
    return sample_training_set([(noisy, clean)], cfg, n, labels, seed=seed)


def perturbed_state(cfg, seed=1, scale=0.1):
    """Random init with non-zero biases so no unit sits exactly on a kink."""
    state = init_state(cfg, seed=seed)
    r = np.random.default_rng(seed)
    for name, p in state.params.items():
        if name.endswith(".b"):
            p.data += r.normal(scale=scale, size=p.data.shape)
    return state
