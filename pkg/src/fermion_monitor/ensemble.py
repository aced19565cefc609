"""Trajectory ensembles: parallel execution, burn-in, and steady-state averages.

A run evolves many independent trajectories of the same parameter set and
records six observables per sample time: the half-chain entropy and the
four-partition topological combination, both also in the bond-fermion
(dual) basis, plus the product of the two as a transition indicator.

Each trajectory owns one RNG stream derived from the master seed and the
trajectory index only, and the reduction order is fixed by the trajectory
index, so results are bitwise independent of the worker count.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np
from scipy.special import xlogy

from . import engine
from .errors import InvalidInputError, NumericalConsistencyError, StationarityWarning
from .state import (
    EIG_CLAMP,
    SPECTRUM_TOL,
    BdGState,
    SimParams,
    dual_rotation,
    half_filling_state,
    quarter_regions,
)

#: Column order of every per-sample observable vector.
OBSERVABLES = ("S_half", "S_top", "S_half_dual", "S_top_dual", "B", "B_dual")

#: Trajectories evolved together in one stacked batch.  Fixed (never derived
#: from the worker count) so that chunk composition, and with it every
#: floating-point intermediate, is identical however the work is spread.
CHUNK_TRAJ = 16

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class SeedScheme:
    """Derives one independent, reproducible RNG stream per trajectory.

    Stream ``i`` is ``SeedSequence(master, spawn_key=(i,))``; neither the
    worker layout nor the order trajectories are launched in can change it.
    """

    master: int

    def sequence(self, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master, spawn_key=(index,))

    def rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng(self.sequence(index))


@dataclass(frozen=True)
class EnsembleStats:
    """Trajectory-averaged value of one observable.

    Each trajectory contributes a single effective sample (its time average
    over the steady-state window), which absorbs within-trajectory
    autocorrelation, so ``stderr = std(trajectory means) / sqrt(n_traj)``.
    """

    observable: str
    mean: float
    stderr: float
    n_traj: int
    samples_per_traj: int
    burn_in: float


@dataclass
class TrajectorySeries:
    """Observable time series of one trajectory."""

    times: np.ndarray
    values: np.ndarray  # shape (n_samples, len(OBSERVABLES))
    n_forced: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.values[:, OBSERVABLES.index(name)]


@dataclass
class EnsembleResult:
    """Everything :func:`run_ensemble` measured."""

    params: SimParams
    seed: int
    n_traj: int
    burn_in: float
    cadence: float
    times: np.ndarray
    stats: dict = field(default_factory=dict)
    traj_means: np.ndarray | None = None  # (n_traj, 6)
    mean_series: np.ndarray | None = None  # (n_samples, 6)
    stationary: dict = field(default_factory=dict)
    n_forced: int = 0
    series: np.ndarray | None = None  # (n_traj, n_samples, 6) if kept

    def __getitem__(self, observable: str) -> EnsembleStats:
        return self.stats[observable]


def default_burn_in(params: SimParams) -> float:
    """Transient time discarded before averaging.

    Four ballistic traversals at the fastest scale, but never less than ten
    lifetimes of the slowest active measurement channel.
    """
    scales = [v for v in (params.w, params.gamma, params.alpha) if v > 0]
    if not scales:
        return 0.0
    t = 4.0 * params.L / max(scales)
    rates = [v for v in (params.gamma, params.alpha) if v > 0]
    if rates:
        t = max(t, 10.0 / min(rates))
    return t


def sample_steps(params: SimParams, t_max: float, burn_in: float, cadence: float):
    """Trotter step indices hit by the sampling cadence.

    Samples sit at ``burn_in + cadence, burn_in + 2 cadence, ... <= t_max``,
    each rounded to the nearest step.  Returns ``(steps, times)`` with the
    actual times ``steps * dt``.
    """
    if cadence <= 0:
        raise InvalidInputError("cadence must be positive")
    if t_max <= burn_in:
        raise InvalidInputError(
            f"t_max = {t_max} leaves no averaging window after burn_in = {burn_in}"
        )
    n = int(np.floor((t_max - burn_in) / cadence + 1e-9))
    ts = burn_in + cadence * np.arange(1, n + 1)
    steps = np.unique(np.rint(ts / params.dt).astype(int))
    steps = steps[steps >= 1]
    if steps.size == 0:
        raise InvalidInputError("sampling window contains no full Trotter step")
    return steps, steps * params.dt


def _region_indices(n: int):
    """Index arrays for the blocks AB, BC, B, ABC of an ``n``-site chain."""
    a, b, d, c = quarter_regions(n)
    return (
        a.union(b).indices,
        b.union(c).indices,
        b.indices,
        a.union(b).union(c).indices,
    )


def _stacked_region_entropy(C, F, ix, log_unit):
    """Entanglement entropy of one region for a stack of states."""
    Cb = C[:, ix][:, :, ix]
    Fb = F[:, ix][:, :, ix]
    eye = np.eye(ix.size, dtype=Cb.real.dtype)
    block = np.concatenate(
        [
            np.concatenate([Cb, -Fb.conj()], axis=-1),
            np.concatenate([Fb, eye - np.swapaxes(Cb, -1, -2)], axis=-1),
        ],
        axis=-2,
    )
    defect = np.abs(block - np.conj(np.swapaxes(block, -1, -2))).max()
    if defect > SPECTRUM_TOL:
        raise NumericalConsistencyError(
            f"correlation block not hermitian (defect {defect:.3e})"
        )
    lam = np.linalg.eigvalsh(block)
    if lam.min() < -SPECTRUM_TOL or lam.max() > 1.0 + SPECTRUM_TOL:
        raise NumericalConsistencyError(
            f"correlation eigenvalues outside [0, 1]: [{lam.min():.3e}, {lam.max():.3e}]"
        )
    lam = np.clip(lam, EIG_CLAMP, 1.0 - EIG_CLAMP)
    s = -0.5 * (xlogy(lam, lam) + xlogy(1.0 - lam, 1.0 - lam)).sum(axis=-1)
    return s / log_unit


def _basis_entropies(C, F, regions, log_unit):
    """(S_half, S_top) for a stack; the half cut is exactly the AB block."""
    s_ab, s_bc, s_b, s_abc = (
        _stacked_region_entropy(C, F, ix, log_unit) for ix in regions
    )
    return s_ab, s_ab + s_bc - s_b - s_abc


class _ObservableSet:
    """Precomputed geometry for evaluating all six observables on a stack."""

    def __init__(self, params: SimParams):
        if params.L % 4 != 0:
            raise InvalidInputError(
                f"ensemble observables need L divisible by 4, got {params.L}"
            )
        self.params = params
        self.R = dual_rotation(params)  # real by construction
        self.site_regions = _region_indices(params.L)
        self.dual_regions = _region_indices(params.n_dual)
        self.log_unit = _LN2 if params.entropy_base == "bits" else 1.0

    def __call__(self, W: np.ndarray) -> np.ndarray:
        L, nd = self.params.L, self.params.n_dual
        U, V = W[..., :L, :], W[..., L:, :]
        Vh = np.conj(np.swapaxes(V, -1, -2))
        s_half, s_top = _basis_entropies(V @ Vh, U @ Vh, self.site_regions, self.log_unit)
        Wd = self.R @ W
        Ud, Vd = Wd[..., :L, :], Wd[..., L:, :]
        Vdh = np.conj(np.swapaxes(Vd, -1, -2))
        Cd = (Vd @ Vdh)[..., :nd, :nd]
        Fd = (Ud @ Vdh)[..., :nd, :nd]
        sd_half, sd_top = _basis_entropies(Cd, Fd, self.dual_regions, self.log_unit)
        return np.stack(
            [s_half, s_top, sd_half, sd_top, s_half * s_top, sd_half * sd_top],
            axis=-1,
        )


def _evolve_with_snapshots(params, rngs, steps, init_W, include_t0=False):
    """Evolve a stacked batch, recording observables at the given steps.

    ``rngs`` fixes the batch size; each generator is consumed exactly as a
    lone run of the same trajectory would consume it.
    """
    precomp = engine.precompute(params)
    observe = _ObservableSet(params)
    if init_W is None:
        init_W = engine.initial_mode_matrix(half_filling_state(params), precomp)
    batch = len(rngs)
    W = np.repeat(init_W[None], batch, axis=0)
    n_out = len(steps) + (1 if include_t0 else 0)
    out = np.empty((batch, n_out, len(OBSERVABLES)))
    col = 0
    if include_t0:
        out[:, 0] = observe(W)
        col = 1
    measured = params.alpha > 0 or params.gamma > 0
    forced = 0
    next_i = 0
    last = int(steps[-1]) if len(steps) else 0
    for s in range(1, last + 1):
        W, nf = engine.step_batch(W, precomp, rngs)
        forced += nf
        if not measured and s % engine.UNITARY_ORTHO_EVERY == 0:
            W = engine.orthonormalize_stack(W)
        if next_i < len(steps) and s == steps[next_i]:
            out[:, col + next_i] = observe(W)
            next_i += 1
    return out, forced


def _run_chunk(params, master_seed, start, count, steps, init_W):
    scheme = SeedScheme(master_seed)
    rngs = [scheme.rng(start + j) for j in range(count)]
    return _evolve_with_snapshots(params, rngs, np.asarray(steps, dtype=int), init_W)


def run_trajectory(
    params: SimParams,
    seed: int,
    t_max: float | None = None,
    cadence: float = 1.0,
    init_state: BdGState | None = None,
    include_initial: bool = True,
) -> TrajectorySeries:
    """Observable time trace of a single trajectory.

    Samples every ``cadence`` time units from ``t = 0`` (no burn-in is
    discarded here; this is the raw trace).  Deterministic in ``seed``.
    """
    t_max = params.t_max if t_max is None else t_max
    if t_max is None:
        raise InvalidInputError("t_max missing from both the call and params")
    steps, times = sample_steps(params, t_max, 0.0, cadence)
    init_W = None
    if init_state is not None:
        init_W = engine.initial_mode_matrix(init_state, engine.precompute(params))
    values, forced = _evolve_with_snapshots(
        params, [SeedScheme(seed).rng(0)], steps, init_W, include_t0=include_initial
    )
    if include_initial:
        times = np.concatenate([[0.0], times])
    return TrajectorySeries(times=times, values=values[0], n_forced=forced)


def _resolve_workers(workers, n_chunks):
    if workers is None:
        env = os.environ.get("FERMION_MONITOR_THREADS", "")
        workers = int(env) if env.strip() else (os.cpu_count() or 1)
    if workers < 1:
        raise InvalidInputError("worker count must be at least 1")
    return min(workers, n_chunks)


def run_ensemble(
    params: SimParams,
    n_traj: int,
    t_max: float | None = None,
    burn_in: float | None = None,
    cadence: float = 1.0,
    seed: int | None = None,
    workers: int | None = None,
    init_state: BdGState | None = None,
    keep_series: bool = False,
) -> EnsembleResult:
    """Average the six observables over ``n_traj`` independent trajectories.

    Sampling runs every ``cadence`` time units inside ``[burn_in, t_max]``;
    the burn-in default is :func:`default_burn_in`.  Each trajectory's
    window mean is one effective sample.  If the two halves of the window
    disagree by more than three standard errors for any observable, a
    :class:`~fermion_monitor.errors.StationarityWarning` is emitted and the
    observable is flagged in ``result.stationary``.

    The output is a pure function of ``(params, n_traj, t_max, burn_in,
    cadence, seed)`` — the worker count never changes any number.
    """
    if n_traj < 2:
        raise InvalidInputError("need at least 2 trajectories")
    t_max = params.t_max if t_max is None else t_max
    if t_max is None:
        raise InvalidInputError("t_max missing from both the call and params")
    burn_in = default_burn_in(params) if burn_in is None else float(burn_in)
    seed = params.seed if seed is None else seed
    steps, times = sample_steps(params, t_max, burn_in, cadence)
    n_samples = steps.size

    init_W = None
    if init_state is not None:
        init_W = engine.initial_mode_matrix(init_state, engine.precompute(params))

    spans = [
        (start, min(CHUNK_TRAJ, n_traj - start))
        for start in range(0, n_traj, CHUNK_TRAJ)
    ]
    workers = _resolve_workers(workers, len(spans))
    steps_arg = tuple(int(s) for s in steps)

    series = np.empty((n_traj, n_samples, len(OBSERVABLES)))
    n_forced = 0
    if workers == 1:
        for start, count in spans:
            values, forced = _run_chunk(params, seed, start, count, steps_arg, init_W)
            series[start : start + count] = values
            n_forced += forced
    else:
        # fork keeps interactive / stdin callers working (spawn would try to
        # re-import __main__); fall back to spawn where fork is unavailable
        try:
            ctx = get_context("fork")
        except ValueError:
            ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [
                (start, count, pool.submit(_run_chunk, params, seed, start, count, steps_arg, init_W))
                for start, count in spans
            ]
            for start, count, fut in futures:
                values, forced = fut.result()
                series[start : start + count] = values
                n_forced += forced

    traj_means = series.mean(axis=1)
    result = EnsembleResult(
        params=params,
        seed=seed,
        n_traj=n_traj,
        burn_in=burn_in,
        cadence=cadence,
        times=times,
        traj_means=traj_means,
        mean_series=series.mean(axis=0),
        n_forced=n_forced,
        series=series if keep_series else None,
    )

    half = n_samples // 2
    drifts = None
    if half >= 1 and n_samples >= 2:
        drifts = series[:, n_samples - half :].mean(axis=1) - series[:, :half].mean(axis=1)
    for k, name in enumerate(OBSERVABLES):
        col = traj_means[:, k]
        mean = math.fsum(col) / n_traj
        var = math.fsum((c - mean) ** 2 for c in col) / (n_traj - 1)
        stderr = math.sqrt(var / n_traj)
        result.stats[name] = EnsembleStats(
            observable=name,
            mean=mean,
            stderr=stderr,
            n_traj=n_traj,
            samples_per_traj=n_samples,
            burn_in=burn_in,
        )
        if drifts is None:
            result.stationary[name] = True
            continue
        d = drifts[:, k]
        d_mean = math.fsum(d) / n_traj
        d_var = math.fsum((x - d_mean) ** 2 for x in d) / (n_traj - 1)
        d_se = math.sqrt(d_var / n_traj)
        stationary = abs(d_mean) <= 3.0 * d_se + 1e-12
        result.stationary[name] = bool(stationary)
        if not stationary:
            warnings.warn(
                f"{name}: steady-state window drift {d_mean:.3g} exceeds "
                f"3 x {d_se:.3g}; increase burn_in (currently {burn_in:g})",
                StationarityWarning,
            )
    return result


def rc_label(params: SimParams) -> str:
    """Compact text form of the post-selection cutoff(s) for result tables."""
    vals = {v for v in (params.rc_gamma, params.rc_alpha) if v is not None}
    if not vals:
        return ""
    if len(vals) == 1:
        return format(vals.pop(), ".17g")
    return f"{params.rc_gamma:.17g}/{params.rc_alpha:.17g}"


def result_rows(result: EnsembleResult):
    """Flatten an :class:`EnsembleResult` into result-table rows."""
    p = result.params
    rows = []
    for name in OBSERVABLES:
        st = result.stats[name]
        rows.append(
            {
                "L": p.L,
                "w": p.w,
                "gamma": p.gamma,
                "alpha": p.alpha,
                "rc": rc_label(p),
                "observable": name,
                "mean": st.mean,
                "stderr": st.stderr,
                "n": st.n_traj,
            }
        )
    return rows
