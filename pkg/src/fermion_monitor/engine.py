"""Stochastic trajectory evolution of the monitored chain.

Each Trotter step applies, in order,

1. the nearest-neighbour hopping unitary over ``dt``,
2. the bond-pairing measurement layer (all bond modes at once),
3. the on-site density measurement layer (all sites at once).

A weak measurement of a two-outcome operator ``M`` (eigenvalues +-1) over a
window ``dt`` produces a continuous readout ``x``.  Conditioned on the
branch ``M = m`` the readout is normal with mean ``-m`` and variance
``1 / (2 rate dt)``; the state is then multiplied by ``exp(-rate dt x M)``
and renormalized.  Sampling the branch from the Born weights and the
readout from the matching branch distribution reproduces the exact
two-outcome statistics of the monitored channel, while pinning every
readout at ``x = +1`` yields the deterministic no-click update
``exp(-rate dt sum M)`` used by the post-selected propagator.

Readouts may additionally be conditioned on ``x >= rc``: branch weights are
multiplied by their upper-tail masses and readouts drawn from truncated
normals.  Growing ``rc`` interpolates from Born-rule sampling to the forced
no-click limit.

All update generators are quadratic, so the state stays Gaussian and is
evolved through its mode matrix ``W`` (see :mod:`.state`).  Functions here
accept either a single ``(2L, L)`` matrix or a stacked batch ``(B, 2L, L)``
and broadcast over the batch.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtr, ndtri

from .errors import (
    BranchImpossibleError,
    DegenerateStateError,
    InvalidInputError,
)
from .state import (
    QR_COND_TOL,
    RANK_TOL,
    BdGState,
    SimParams,
    dual_rotation,
    half_filling_state,
)

#: measurement log-amplitudes beyond this are clipped before exponentiation;
#: the renormalized state is already an exact branch projection at this size
#: (occupation suppression e^{-4g} underflows double rounding), while the
#: scaled mode matrix stays orthonormalizable
G_CLIP = 12.0

#: orthonormalize every this many steps when no measurement layer runs
UNITARY_ORTHO_EVERY = 100

_T_LO = 1e-300
_T_HI = 1.0 - 1e-16


def hopping_matrix(params: SimParams) -> np.ndarray:
    """Real symmetric single-particle hopping matrix (amplitude ``w``)."""
    L = params.L
    h = np.zeros((L, L))
    for j in range(L - 1):
        h[j, j + 1] = params.w
        h[j + 1, j] = params.w
    if params.boundary == "periodic":
        h[0, L - 1] += params.w
        h[L - 1, 0] += params.w
    return h


def unitary_propagator(params: SimParams) -> np.ndarray:
    """Mode-matrix propagator ``diag(e^{-i h dt}, conj(e^{-i h dt}))``."""
    h = hopping_matrix(params)
    evals, evecs = np.linalg.eigh(h)
    u = (evecs * np.exp(-1j * params.dt * evals)) @ evecs.conj().T
    L = params.L
    out = np.zeros((2 * L, 2 * L), dtype=complex)
    out[:L, :L] = u
    out[L:, L:] = u.conj()
    return out


def measurement_generator(params: SimParams, channel: str) -> np.ndarray:
    """Adjoint generator ``tau`` of ``exp(-t sum_m M_m)`` at unit rate.

    ``W(t) = expm(+t tau) @ W(0)`` evolves the mode matrix under the state
    update ``exp(-t sum_m M_m)`` for the summed two-outcome operators of
    the channel: every on-site density operator for ``"density"``, every
    bond-fermion occupation operator for ``"bond"`` (the open-chain
    boundary mode is left untouched).
    """
    L = params.L
    diag = np.zeros(L)
    if channel == "density":
        diag[:] = 2.0
        return np.diag(np.concatenate([diag, -diag]))
    if channel == "bond":
        diag[: params.n_dual] = 2.0
        tau_d = np.diag(np.concatenate([diag, -diag]))
        R = dual_rotation(params)
        return R.conj().T @ tau_d @ R
    raise InvalidInputError(f"unknown measurement channel {channel!r}")


@dataclass(frozen=True)
class EnginePrecomp:
    """Per-run constants: propagators, the dual rotation, readout widths."""

    params: SimParams
    unitary: np.ndarray | None
    dual_R: np.ndarray | None
    sigma_bond: float | None
    sigma_density: float | None

    @property
    def real_dtype_ok(self) -> bool:
        """True when every generator is real (``w = 0``)."""
        return self.unitary is None


def precompute(params: SimParams) -> EnginePrecomp:
    unitary = unitary_propagator(params) if params.w > 0 else None
    # the dual rotation is real in this phase convention, so it never
    # promotes a real mode matrix to complex
    dual_R = dual_rotation(params) if params.alpha > 0 else None
    sig_b = 1.0 / np.sqrt(2.0 * params.alpha * params.dt) if params.alpha > 0 else None
    sig_d = 1.0 / np.sqrt(2.0 * params.gamma * params.dt) if params.gamma > 0 else None
    return EnginePrecomp(
        params=params,
        unitary=unitary,
        dual_R=dual_R,
        sigma_bond=sig_b,
        sigma_density=sig_d,
    )


def orthonormalize_stack(W: np.ndarray) -> np.ndarray:
    """Batched column orthonormalization with a per-member SVD fallback."""
    single = W.ndim == 2
    Ws = W[None] if single else W
    Q, Rm = np.linalg.qr(Ws)
    diag = np.abs(np.diagonal(Rm, axis1=-2, axis2=-1))
    dmax = diag.max(axis=-1)
    bad = (dmax == 0.0) | (diag.min(axis=-1) <= QR_COND_TOL * dmax)
    if np.any(bad):
        Q = np.ascontiguousarray(Q)
        for i in np.nonzero(bad)[0]:
            u, s, _ = np.linalg.svd(Ws[i], full_matrices=False)
            if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
                raise DegenerateStateError(
                    "mode matrix became numerically rank deficient during evolution"
                )
            Q[i] = u
    return Q[0] if single else Q


def _branch_masses(rate, dt, rc):
    """Readout width and per-branch mass above the cutoff."""
    sigma = 1.0 / np.sqrt(2.0 * rate * dt)
    if rc is None:
        return sigma, 1.0, 1.0
    q_up = float(ndtr((-1.0 - rc) / sigma))  # branch M=+1 has mean -1
    q_dn = float(ndtr((1.0 - rc) / sigma))  # branch M=-1 has mean +1
    return sigma, q_up, q_dn


def _sample_core(p_plus, u_branch, u_x, sigma, q_up, q_dn, rc):
    """Inverse-CDF draw from the truncated two-branch mixture (vectorized)."""
    w_up = p_plus * q_up
    w_dn = (1.0 - p_plus) * q_dn
    tot = w_up + w_dn
    accepted = tot > 0.0
    branch_up = u_branch * tot < w_up  # forced members fall through to -1
    mu = np.where(branch_up, -1.0, 1.0)
    q_b = np.where(branch_up, q_up, q_dn)
    t = np.clip(u_x * q_b, _T_LO, _T_HI)
    x = mu - sigma * ndtri(t)
    if not accepted.all():
        x = np.where(accepted, x, float(rc))
    return x, accepted


def sample_readouts(p_plus, rate, dt, rng, rc=None, strict=False):
    """Draw one readout per measured mode.

    Parameters
    ----------
    p_plus : array
        Born probability of the ``M = +1`` branch for each mode.
    rate, dt : float
        Channel rate and Trotter step; the readout width is
        ``sigma = 1 / sqrt(2 rate dt)``.
    rng : numpy Generator
        Consumes exactly two uniform blocks of ``len(p_plus)`` draws.
    rc : float or None
        Condition readouts on ``x >= rc``; ``None`` disables truncation.
    strict : bool
        If no branch has any mass above ``rc``: raise instead of forcing
        the readout to ``rc``.

    Returns
    -------
    x : ndarray
        Sampled readouts.
    accepted : ndarray of bool
        False where both truncated branch weights underflowed and the
        readout had to be pinned at ``rc`` instead of drawn.
    """
    p_plus = np.clip(np.asarray(p_plus, dtype=float), 0.0, 1.0)
    n = p_plus.size
    sigma, q_up, q_dn = _branch_masses(rate, dt, rc)
    u_branch = rng.random(n)
    u_x = rng.random(n)
    x, accepted = _sample_core(p_plus, u_branch, u_x, sigma, q_up, q_dn, rc)
    n_forced = int(np.count_nonzero(~accepted))
    if n_forced:
        if strict:
            raise BranchImpossibleError(
                f"{n_forced} readout(s) have no branch weight above the cutoff rc={rc}"
            )
        warnings.warn(
            "readout cutoff left no branch weight; pinning readouts at rc",
            RuntimeWarning,
        )
    return x, accepted


def _sample_batch(p_plus, rate, dt, rngs, rc, strict):
    """Batched :func:`sample_readouts`: one stream per row of ``p_plus``.

    Each generator is consumed in the exact order the single-trajectory
    path uses, so batch composition never changes any stream.
    """
    p_plus = np.clip(p_plus, 0.0, 1.0)
    n = p_plus.shape[-1]
    u_branch = np.empty_like(p_plus)
    u_x = np.empty_like(p_plus)
    for i, rng in enumerate(rngs):
        u_branch[i] = rng.random(n)
        u_x[i] = rng.random(n)
    sigma, q_up, q_dn = _branch_masses(rate, dt, rc)
    x, accepted = _sample_core(p_plus, u_branch, u_x, sigma, q_up, q_dn, rc)
    n_forced = int(np.count_nonzero(~accepted))
    if n_forced:
        if strict:
            raise BranchImpossibleError(
                f"{n_forced} readout(s) have no branch weight above the cutoff rc={rc}"
            )
        warnings.warn(
            "readout cutoff left no branch weight; pinning readouts at rc",
            RuntimeWarning,
        )
    return x, n_forced


def _log_kicks(rate, dt, x):
    g = rate * dt * np.asarray(x, dtype=float)
    if np.any(np.abs(g) > G_CLIP):
        warnings.warn(
            "clipping oversized measurement log-amplitudes", RuntimeWarning
        )
        g = np.clip(g, -G_CLIP, G_CLIP)
    return g


def apply_density_layer(W: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Multiply the state by ``exp(-sum_j g_j (2 n_j - 1))`` (not normalized).

    The annihilators of the updated state are ``e^{-g M} beta e^{+g M}``,
    which in the stored convention scales ``U`` rows by ``e^{+2g}`` and
    ``V`` rows by ``e^{-2g}`` — positive readouts suppress occupation.
    """
    L = W.shape[-1]
    out = W.copy()
    out[..., :L, :] *= np.exp(2.0 * g)[..., :, None]
    out[..., L:, :] *= np.exp(-2.0 * g)[..., :, None]
    return out


def apply_bond_layer(W: np.ndarray, g: np.ndarray, R: np.ndarray, n_dual: int) -> np.ndarray:
    """Same as the density layer but for the bond-fermion occupations."""
    L = W.shape[-1]
    Wd = R @ W
    su = np.ones(g.shape[:-1] + (L,))
    sv = np.ones(g.shape[:-1] + (L,))
    su[..., :n_dual] = np.exp(2.0 * g)
    sv[..., :n_dual] = np.exp(-2.0 * g)
    Wd[..., :L, :] *= su[..., :, None]
    Wd[..., L:, :] *= sv[..., :, None]
    return R.conj().T @ Wd if np.iscomplexobj(Wd) else R.T @ Wd


def density_occupations(W: np.ndarray) -> np.ndarray:
    """``<n_j>`` for every site, from the mode matrix."""
    L = W.shape[-1]
    V = W[..., L:, :]
    return (np.abs(V) ** 2).sum(axis=-1)


def bond_occupations(W: np.ndarray, R: np.ndarray, n_dual: int) -> np.ndarray:
    """``<d_m^dag d_m>`` for every bond mode."""
    L = W.shape[-1]
    Vd = (R @ W)[..., L:, :]
    return (np.abs(Vd) ** 2).sum(axis=-1)[..., :n_dual]


@dataclass
class StepRecord:
    """Readouts of one Trotter step, sufficient to replay it exactly.

    ``accepted`` flags are False where the truncated two-branch mixture had
    no remaining mass and the readout was pinned at the cutoff instead of
    being drawn.
    """

    index: int
    time: float = 0.0
    x_bond: np.ndarray | None = None
    x_density: np.ndarray | None = None
    accepted_bond: np.ndarray | None = None
    accepted_density: np.ndarray | None = None

    @property
    def n_forced(self) -> int:
        total = 0
        for acc in (self.accepted_bond, self.accepted_density):
            if acc is not None:
                total += int(np.count_nonzero(~acc))
        return total


def advance(W: np.ndarray, precomp: EnginePrecomp, x_bond=None, x_density=None) -> np.ndarray:
    """Deterministic step given the readouts (shared by run and replay)."""
    p = precomp.params
    if precomp.unitary is not None:
        W = precomp.unitary @ W
    if x_bond is not None:
        g = _log_kicks(p.alpha, p.dt, x_bond)
        W = apply_bond_layer(W, g, precomp.dual_R, p.n_dual)
        W = orthonormalize_stack(W)
    if x_density is not None:
        g = _log_kicks(p.gamma, p.dt, x_density)
        W = apply_density_layer(W, g)
        W = orthonormalize_stack(W)
    return W


def step(W: np.ndarray, precomp: EnginePrecomp, rng, index: int = 0, strict: bool = False):
    """One sampled Trotter step for a single trajectory.

    Returns the updated mode matrix and the :class:`StepRecord` holding the
    drawn readouts.
    """
    p = precomp.params
    rec = StepRecord(index=index, time=(index + 1) * p.dt)
    if precomp.unitary is not None:
        W = precomp.unitary @ W
    if p.alpha > 0:
        probs = bond_occupations(W, precomp.dual_R, p.n_dual)
        x, acc = sample_readouts(probs, p.alpha, p.dt, rng, p.rc_alpha, strict)
        rec.x_bond, rec.accepted_bond = x, acc
        gk = _log_kicks(p.alpha, p.dt, x)
        W = apply_bond_layer(W, gk, precomp.dual_R, p.n_dual)
        W = orthonormalize_stack(W)
    if p.gamma > 0:
        probs = density_occupations(W)
        x, acc = sample_readouts(probs, p.gamma, p.dt, rng, p.rc_gamma, strict)
        rec.x_density, rec.accepted_density = x, acc
        gk = _log_kicks(p.gamma, p.dt, x)
        W = apply_density_layer(W, gk)
        W = orthonormalize_stack(W)
    return W, rec


def step_batch(W: np.ndarray, precomp: EnginePrecomp, rngs, strict: bool = False):
    """One sampled step for a stacked batch of trajectories.

    ``rngs`` holds one Generator per batch member; each consumes draws in
    the same order as :func:`step` would, so a batched run reproduces the
    corresponding independent single-trajectory runs.
    """
    p = precomp.params
    if precomp.unitary is not None:
        W = precomp.unitary @ W
    total_forced = 0
    if p.alpha > 0:
        probs = bond_occupations(W, precomp.dual_R, p.n_dual)
        xs, n_forced = _sample_batch(probs, p.alpha, p.dt, rngs, p.rc_alpha, strict)
        total_forced += n_forced
        gk = _log_kicks(p.alpha, p.dt, xs)
        W = apply_bond_layer(W, gk, precomp.dual_R, p.n_dual)
        W = orthonormalize_stack(W)
    if p.gamma > 0:
        probs = density_occupations(W)
        xs, n_forced = _sample_batch(probs, p.gamma, p.dt, rngs, p.rc_gamma, strict)
        total_forced += n_forced
        gk = _log_kicks(p.gamma, p.dt, xs)
        W = apply_density_layer(W, gk)
        W = orthonormalize_stack(W)
    return W, total_forced


def initial_mode_matrix(state: BdGState, precomp: EnginePrecomp) -> np.ndarray:
    """Mode matrix in the cheapest dtype the run supports.

    With ``w = 0`` every generator is real, so a real initial state can be
    evolved entirely in real arithmetic.
    """
    W = state.W
    if precomp.real_dtype_ok and np.abs(W.imag).max() == 0.0:
        return W.real.copy()
    return W.copy()


def run_trajectory(
    params: SimParams,
    n_steps: int,
    rng,
    init_state: BdGState | None = None,
    keep_log: bool = False,
    callback=None,
    callback_every: int = 1,
):
    """Evolve one trajectory for ``n_steps`` Trotter steps.

    ``callback(step_index, W)`` is invoked every ``callback_every`` steps
    after the update.  Returns ``(final_state, records)`` where ``records``
    is the readout log when ``keep_log`` else an empty list.
    """
    precomp = precompute(params)
    if init_state is None:
        init_state = half_filling_state(params)
    W = initial_mode_matrix(init_state, precomp)
    records = []
    measured = params.alpha > 0 or params.gamma > 0
    for i in range(n_steps):
        W, rec = step(W, precomp, rng, index=i)
        if not measured and (i + 1) % UNITARY_ORTHO_EVERY == 0:
            W = orthonormalize_stack(W)
        if keep_log:
            records.append(rec)
        if callback is not None and (i + 1) % callback_every == 0:
            callback(i + 1, W)
    return BdGState(W.astype(complex, copy=False)), records


def replay(
    params: SimParams,
    records,
    init_state: BdGState | None = None,
) -> BdGState:
    """Re-run a trajectory from its readout log; must match the original."""
    precomp = precompute(params)
    if init_state is None:
        init_state = half_filling_state(params)
    W = initial_mode_matrix(init_state, precomp)
    measured = params.alpha > 0 or params.gamma > 0
    for rec in sorted(records, key=lambda r: r.index):
        W = advance(W, precomp, rec.x_bond, rec.x_density)
        if not measured and (rec.index + 1) % UNITARY_ORTHO_EVERY == 0:
            W = orthonormalize_stack(W)
    return BdGState(W.astype(complex, copy=False))


def save_readout_log(path, records):
    """Write a readout log as delimited text: t, channel, site, x, accepted."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "channel", "site", "x", "accepted"])
        for rec in records:
            for name, xs, acc in (
                ("bond", rec.x_bond, rec.accepted_bond),
                ("density", rec.x_density, rec.accepted_density),
            ):
                if xs is None:
                    continue
                for m, x in enumerate(xs):
                    ok = 1 if acc is None else int(acc[m])
                    wr.writerow(
                        [format(float(rec.time), ".17g"), name, m,
                         format(float(x), ".17g"), ok]
                    )


def load_readout_log(path):
    """Read a log written by :func:`save_readout_log`.

    Step ordering is recovered from the distinct ``t`` values, so the log
    replays identically regardless of the ``dt`` used to stamp it.
    """
    path = Path(path)
    by_time = {}
    with path.open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:5] != ["t", "channel", "site", "x", "accepted"]:
            raise InvalidInputError(f"unrecognized readout log header {header!r}")
        for row in rd:
            t, channel, site = float(row[0]), row[1], int(row[2])
            x, ok = float(row[3]), bool(int(row[4]))
            if channel not in ("bond", "density"):
                raise InvalidInputError(f"unknown readout channel {channel!r}")
            by_time.setdefault(t, {"bond": {}, "density": {}})[channel][site] = (x, ok)
    records = []
    for idx, t in enumerate(sorted(by_time)):
        rec = StepRecord(index=idx, time=t)
        for channel, attr in (("bond", "x_bond"), ("density", "x_density")):
            entries = by_time[t][channel]
            if entries:
                xs = np.empty(max(entries) + 1)
                acc = np.ones(max(entries) + 1, dtype=bool)
                for m, (x, ok) in entries.items():
                    xs[m] = x
                    acc[m] = ok
                setattr(rec, attr, xs)
                setattr(rec, "accepted_" + channel, acc)
        records.append(rec)
    return records


def postselected_propagator(params: SimParams) -> np.ndarray:
    """One-step propagator with every readout pinned at ``x = +1``.

    The two measurement channels are combined into a single exponential
    ``expm(-dt (gamma tau_density + alpha tau_bond))`` applied after the
    hopping unitary; iterating it drives the state toward the dark state
    of the non-unitary evolution.
    """
    L = params.L
    tau = np.zeros((2 * L, 2 * L))
    if params.gamma > 0:
        tau = tau + params.gamma * measurement_generator(params, "density")
    if params.alpha > 0:
        tau = tau + params.alpha * measurement_generator(params, "bond")
    T = expm(params.dt * tau)
    if params.w > 0:
        T = T.astype(complex) @ unitary_propagator(params)
    return T


def postselected_step(W: np.ndarray, T: np.ndarray) -> np.ndarray:
    return orthonormalize_stack(T @ W)


def postselected_fixed_point(
    params: SimParams,
    init_state: BdGState | None = None,
    tol: float = 1e-12,
    max_steps: int = 200_000,
):
    """Iterate the pinned-readout propagator until the correlations freeze.

    Returns ``(state, info)`` with ``info = {"converged", "steps", "delta"}``
    where ``delta`` is the final max-norm change of ``<c^dag c>`` per step.
    """
    if init_state is None:
        init_state = half_filling_state(params)
    precomp = precompute(params)
    T = postselected_propagator(params)
    W = initial_mode_matrix(init_state, precomp)
    if np.iscomplexobj(T) and not np.iscomplexobj(W):
        W = W.astype(complex)
    L = params.L
    C_prev = None
    delta = np.inf
    steps_done = 0
    check_every = 10
    for i in range(max_steps):
        W = postselected_step(W, T)
        steps_done = i + 1
        if (i + 1) % check_every == 0:
            V = W[L:]
            C = V @ V.conj().T
            if C_prev is not None:
                delta = float(np.abs(C - C_prev).max()) / check_every
                if delta <= tol:
                    C_prev = C
                    break
            C_prev = C
    converged = delta <= tol
    return (
        BdGState(W.astype(complex, copy=False)),
        {"converged": converged, "steps": steps_done, "delta": delta},
    )


def steps_for(params: SimParams, t: float) -> int:
    """Number of Trotter steps covering a time span ``t``."""
    return max(1, int(round(t / params.dt)))
