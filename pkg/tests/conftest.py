"""Shared helpers for the test suite."""

import numpy as np

from fermion_monitor import half_filling_state
from fermion_monitor.engine import initial_mode_matrix, precompute, step
from fermion_monitor.state import BdGState


def evolved_state(params, n_steps, seed=0):
    """Evolve the half-filled product state by sampled steps.

    Returns a BdGState with a generic entanglement pattern, used wherever a
    test needs a non-product pure state.
    """
    pre = precompute(params)
    rng = np.random.default_rng(seed)
    W = initial_mode_matrix(half_filling_state(params), pre)
    for i in range(n_steps):
        W, _ = step(W, pre, rng, index=i)
    return BdGState(np.asarray(W, dtype=complex))
