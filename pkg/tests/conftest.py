"""Session fixtures shared by the acceptance criteria (expensive runs cached)."""

import time

import numpy as np
import pytest

import bimem
from bimem.adapt import AdaptConfig

BENCHMARK_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_SHIFT = np.array([1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def benchmark_pipelines():
    """Default benchmark: per seed, the generated target set and its black-box predictions."""
    pipelines = {}
    for seed in BENCHMARK_SEEDS:
        source, target = bimem.gen_shifted_gaussians(
            n_categories=5,
            feature_dim=8,
            n_per_class=100,
            class_separation=4.0,
            target_shift=DEFAULT_SHIFT,
            target_rotation_deg=25.0,
            noise_sigma=1.0,
            seed=seed,
        )
        params = bimem.train_source(source, epochs=50, lr=0.05, seed=seed)
        pipelines[seed] = (target, bimem.predict(params, target))
    return pipelines


@pytest.fixture(scope="session")
def benchmark_traces(benchmark_pipelines):
    """Default-config adaptation traces for both methods on all benchmark seeds."""
    start = time.monotonic()
    traces = {"bimem": {}, "vanilla_st": {}}
    for seed, (target, preds) in benchmark_pipelines.items():
        cfg_b = AdaptConfig(method="bimem", seed=seed)
        traces["bimem"][seed] = bimem.run_bimem(target, preds, cfg_b)[1]
        cfg_v = AdaptConfig(method="vanilla_st", seed=seed)
        traces["vanilla_st"][seed] = bimem.run_vanilla_st(target, preds, cfg_v)[1]
    traces["elapsed"] = time.monotonic() - start
    return traces
