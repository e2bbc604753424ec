"""Shared plumbing: worker-count resolution and the named counter-based RNG."""

import os

import numpy as np

# Identifier written into run manifests so outputs are reproducible across machines.
RNG_NAME = "philox4x64"


def worker_count(explicit=None):
    """Resolve a worker count: explicit arg, then GOOM_WORKERS env, then CPU count."""
    if explicit is not None:
        n = int(explicit)
    else:
        env = os.environ.get("GOOM_WORKERS")
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ValueError("worker count must be >= 1")
    return n


def make_rng(seed, stream=0):
    """Counter-based generator keyed by (seed, stream); identical on any scheduler."""
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
