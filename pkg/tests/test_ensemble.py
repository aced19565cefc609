"""Trajectory ensembles: seeding, reduction, and steady-state statistics."""

import warnings

import numpy as np
import pytest

from fermion_monitor import (
    OBSERVABLES,
    InvalidInputError,
    SeedScheme,
    SimParams,
    StationarityWarning,
    b_indicator,
    correlators,
    half_cut_entropy,
    half_filling_state,
    init_dual_product_state,
    run_ensemble,
    topological_entropy,
)
from fermion_monitor import engine
from fermion_monitor.ensemble import (
    default_burn_in,
    rc_label,
    result_rows,
    run_trajectory,
    sample_steps,
)
from fermion_monitor.state import BdGState, dual_correlators

LN2 = np.log(2.0)


def _quiet_ensemble(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        return run_ensemble(*args, **kwargs)


# ------------------------------------------------------------ reproducibility


def test_same_seed_reproduces_bitwise():
    p = SimParams(L=8, w=0.0, gamma=1.0, alpha=1.0, dt=0.05, seed=42,
                  boundary="periodic")
    a = _quiet_ensemble(p, n_traj=6, burn_in=2.0, t_max=8.0)
    b = _quiet_ensemble(p, n_traj=6, burn_in=2.0, t_max=8.0)
    for name in OBSERVABLES:
        assert a[name].mean == b[name].mean
        assert a[name].stderr == b[name].stderr


def test_worker_count_does_not_change_results():
    p = SimParams(L=8, w=0.3, gamma=0.8, alpha=1.1, dt=0.05, seed=7,
                  boundary="periodic")
    a = _quiet_ensemble(p, n_traj=20, burn_in=2.0, t_max=8.0, workers=1)
    b = _quiet_ensemble(p, n_traj=20, burn_in=2.0, t_max=8.0, workers=2)
    assert np.array_equal(a.traj_means, b.traj_means)
    for name in OBSERVABLES:
        assert a[name].mean == b[name].mean


def test_seed_scheme_streams_are_distinct_and_stable():
    scheme = SeedScheme(123)
    a = scheme.rng(0).random(4)
    b = scheme.rng(1).random(4)
    again = scheme.rng(0).random(4)
    assert np.array_equal(a, again)
    assert not np.array_equal(a, b)


# ------------------------------------------------------- observable pipeline


def test_batched_observables_match_scalar_reference():
    p = SimParams(L=8, w=0.0, gamma=0.9, alpha=1.2, dt=0.05, seed=11,
                  boundary="periodic")
    res = _quiet_ensemble(p, n_traj=3, burn_in=1.0, t_max=4.0, keep_series=True)
    assert res.series.shape == (3, len(res.times), len(OBSERVABLES))

    # re-evolve trajectory 0 alone and score it with the scalar entropy API
    pre = engine.precompute(p)
    rng = SeedScheme(p.seed).rng(0)
    W = engine.initial_mode_matrix(half_filling_state(p), pre)
    for i in range(int(round(res.times[-1] / p.dt))):
        W, _ = engine.step(W, pre, rng, index=i)
    st = BdGState(np.asarray(W, complex))
    corr = correlators(st)
    dual = dual_correlators(st, p)
    expected = {
        "S_half": half_cut_entropy(corr),
        "S_top": topological_entropy(corr),
        "S_half_dual": half_cut_entropy(dual),
        "S_top_dual": topological_entropy(dual),
        "B": b_indicator(corr),
        "B_dual": b_indicator(dual),
    }
    for name in OBSERVABLES:
        got = res.series[0, -1, OBSERVABLES.index(name)]
        assert got == pytest.approx(expected[name], abs=1e-10), name


def test_stderr_shrinks_like_root_n():
    p = SimParams(L=12, w=0.0, gamma=2.0, alpha=2.0, dt=0.05, seed=5)
    ses = []
    for n in (50, 200, 800):
        res = _quiet_ensemble(p, n_traj=n, burn_in=5.0, t_max=25.0)
        ses.append(res["S_top"].stderr)
        assert res["S_top"].n_traj == n
    assert ses[0] > ses[1] > ses[2]
    assert 2.8 < ses[0] / ses[2] < 5.7  # expect about sqrt(16) = 4


def test_frozen_bond_basis_start_stays_topological():
    # with only the bond channel on, a bond-occupation eigenstate is frozen,
    # so the topological term is exactly one bit forever
    p = SimParams(L=12, w=0.0, gamma=0.0, alpha=1.0, dt=0.05, seed=9)
    init = init_dual_product_state(p)
    res = _quiet_ensemble(p, n_traj=4, burn_in=2.0, t_max=8.0, init_state=init)
    assert res["S_top"].mean == pytest.approx(LN2, abs=1e-9)
    assert res["S_top"].stderr == pytest.approx(0.0, abs=1e-12)


def test_channel_swap_symmetry_of_steady_state():
    # swapping the two measurement rates swaps the site and bond roles, so
    # the swapped run seen in its bond basis must match the original.  The
    # match is exact for mid-step sampling; sampling at the step boundary
    # instead offsets the two ensembles by one density layer of the weak
    # rate, an O(gamma dt) shift covered by the small fixed allowance.
    pa = SimParams(L=16, w=0.0, gamma=0.3, alpha=1.1, dt=0.05, seed=21,
                   boundary="periodic")
    pb = SimParams(L=16, w=0.0, gamma=1.1, alpha=0.3, dt=0.05, seed=22,
                   boundary="periodic")
    ra = _quiet_ensemble(pa, n_traj=64, t_max=default_burn_in(pa) + 30.0)
    rb = _quiet_ensemble(pb, n_traj=64, t_max=default_burn_in(pb) + 30.0)
    for site, swapped in (("S_top", "S_top_dual"), ("S_half", "S_half_dual")):
        a, b = ra[site], rb[swapped]
        assert abs(a.mean - b.mean) < 0.012 + 3.0 * np.hypot(a.stderr, b.stderr)


# ---------------------------------------------------------- run bookkeeping


def test_burn_in_default_formula():
    p = SimParams(L=16, w=0.0, gamma=1.0, alpha=0.5, dt=0.05)
    assert default_burn_in(p) == pytest.approx(max(4 * 16 / 1.0, 10 / 0.5))
    q = SimParams(L=16, w=2.0, gamma=0.0, alpha=0.0, dt=0.05)
    assert default_burn_in(q) == pytest.approx(4 * 16 / 2.0)
    z = SimParams(L=16, w=0.0, gamma=0.0, alpha=0.0, dt=0.05)
    assert default_burn_in(z) == 0.0


def test_sample_steps_spacing_and_validation():
    p = SimParams(L=8, dt=0.05)
    steps, times = sample_steps(p, t_max=10.0, burn_in=5.0, cadence=0.5)
    assert len(steps) == len(times)
    assert times[0] > 5.0 - 1e-9 and times[-1] <= 10.0 + 1e-9
    assert np.all(np.diff(steps) > 0)
    with pytest.raises(InvalidInputError):
        sample_steps(p, t_max=4.0, burn_in=5.0, cadence=1.0)
    with pytest.raises(InvalidInputError):
        sample_steps(p, t_max=10.0, burn_in=5.0, cadence=-1.0)


def test_non_stationary_window_warns():
    p = SimParams(L=16, w=0.0, gamma=0.0, alpha=0.7, dt=0.05, seed=3)
    # no burn-in: the window straddles the initial entanglement growth
    with pytest.warns(StationarityWarning):
        res = run_ensemble(p, n_traj=16, burn_in=0.0, t_max=12.0)
    assert not all(res.stationary.values())


def test_relaxed_window_does_not_warn():
    p = SimParams(L=8, w=0.0, gamma=2.0, alpha=2.0, dt=0.05, seed=3,
                  boundary="periodic")
    with warnings.catch_warnings():
        warnings.simplefilter("error", StationarityWarning)
        res = run_ensemble(p, n_traj=24, burn_in=30.0, t_max=60.0)
    assert all(res.stationary.values())


def test_trajectory_series_shape_and_initial_point():
    p = SimParams(L=8, w=0.4, gamma=0.6, alpha=0.8, dt=0.05,
                  boundary="periodic")
    series = run_trajectory(p, seed=0, t_max=5.0, cadence=1.0)
    assert series.times[0] == 0.0
    assert series.values.shape == (len(series.times), len(OBSERVABLES))
    assert series.column("S_half").shape == (len(series.times),)
    with pytest.raises(ValueError):
        series.column("not_an_observable")


def test_result_rows_schema():
    p = SimParams(L=8, w=0.0, gamma=1.0, alpha=1.0, dt=0.05, seed=2,
                  rc_alpha=-1.5, boundary="periodic")
    res = _quiet_ensemble(p, n_traj=4, burn_in=1.0, t_max=4.0)
    rows = result_rows(res)
    assert len(rows) == len(OBSERVABLES)
    for row in rows:
        assert set(row) == {"L", "w", "gamma", "alpha", "rc", "observable",
                            "mean", "stderr", "n"}
        assert row["L"] == 8
        assert row["n"] == 4
        assert row["rc"] == "-1.5"
    assert rc_label(SimParams(L=8)) == ""


def test_rejects_degenerate_requests():
    with pytest.raises(InvalidInputError):
        run_ensemble(SimParams(L=8, boundary="periodic"), n_traj=1, t_max=5.0)
    with pytest.raises(InvalidInputError):
        run_ensemble(SimParams(L=10), n_traj=4, t_max=5.0)  # L % 4 != 0
