"""Gaussian (Bogoliubov-de Gennes) states of a monitored fermion chain.

A pure Gaussian state of ``L`` spinless lattice fermions is stored through
the ``L`` quasiparticle modes built from its mode matrix ``W = (U; V)``:

    beta_n^dag = sum_x U[x, n] c_x^dag + V[x, n] c_x

The physical state is the joint vacuum of the ``beta_n``; any invertible
mixing of the columns of ``W`` describes the same state, so after a
non-unitary measurement update it is enough to re-orthonormalize the
columns.  Two structural constraints characterize a valid mode matrix,

    U^dag U + V^dag V = 1      (canonical anticommutation),
    U^T V + V^T U = 0          (Pauli exclusion among the modes),

and both are preserved exactly by quadratic evolution and by column mixing.

All two-point functions follow from ``C = V V^dag`` (``<c_i^dag c_j>``) and
``F = U V^dag`` (``<c_i c_j>``).  Entanglement entropies of a subregion are
computed from the particle-hole doubled correlation block, whose eigenvalues
come in ``(lam, 1 - lam)`` pairs.

The module also provides the "bond" (dual) fermion basis

    d_j = (c_j + c_{j+1} + c_j^dag - c_{j+1}^dag) / 2,

which diagonalizes the pairing-type measurement operators; on an open chain
there are ``L - 1`` such modes plus one boundary mode built from the two
leftover Majorana operators.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import xlogy

from .errors import (
    DegenerateStateError,
    InvalidInputError,
    NumericalConsistencyError,
)

#: tolerance on the mode-matrix orthonormality defect
ORTHO_TOL = 1e-10
#: allowed excursion of correlation eigenvalues outside [0, 1]
SPECTRUM_TOL = 1e-8
#: eigenvalues are clamped away from {0, 1} by this amount before taking logs
EIG_CLAMP = 1e-12
#: QR condition-number threshold that triggers the SVD orthonormalization path
QR_COND_TOL = 1e-8
#: singular-value ratio below which the state is declared rank deficient
RANK_TOL = 1e-13

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class SimParams:
    """Static parameters of a simulation run.

    Parameters
    ----------
    L : int
        Number of lattice sites.
    w : float
        Nearest-neighbour hopping amplitude of the unitary part.
    gamma : float
        Rate of the on-site density measurement channel.
    alpha : float
        Rate of the bond-pairing measurement channel.
    dt : float
        Trotter step.
    t_max : float or None
        Total simulated time (``None`` lets the caller decide).
    boundary : str
        ``"open"`` or ``"periodic"``.
    rc_gamma, rc_alpha : float or None
        Post-selection thresholds: readouts of the corresponding channel
        are conditioned on ``x >= rc``.  ``None`` disables truncation.
    seed : int
        Master seed for trajectory ensembles.
    entropy_base : str
        ``"nats"`` or ``"bits"``; unit used when reporting entropies.
    """

    L: int
    w: float = 0.0
    gamma: float = 0.0
    alpha: float = 0.0
    dt: float = 0.05
    t_max: float | None = None
    boundary: str = "open"
    rc_gamma: float | None = None
    rc_alpha: float | None = None
    seed: int = 0
    entropy_base: str = "nats"

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise InvalidInputError(f"L must be an integer >= 2, got {self.L}")
        object.__setattr__(self, "L", int(self.L))
        for name in ("w", "gamma", "alpha"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        if self.t_max is not None and self.t_max <= 0:
            raise InvalidInputError("t_max must be positive when given")
        if self.boundary not in ("open", "periodic"):
            raise InvalidInputError(f"unknown boundary {self.boundary!r}")
        if self.entropy_base not in ("nats", "bits"):
            raise InvalidInputError(f"unknown entropy base {self.entropy_base!r}")

    def with_(self, **kwargs):
        """Return a copy with the given fields replaced."""
        return replace(self, **kwargs)

    @property
    def n_dual(self) -> int:
        """Number of bond-fermion modes (``L - 1`` open, ``L`` periodic)."""
        return self.L if self.boundary == "periodic" else self.L - 1


@dataclass(frozen=True)
class RegionSpec:
    """A subset of sites, kept as a sorted tuple of zero-based indices."""

    sites: tuple

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if len(sites) == 0:
            raise InvalidInputError("region must contain at least one site")
        if len(set(sites)) != len(sites):
            raise InvalidInputError("region contains duplicate sites")
        object.__setattr__(self, "sites", tuple(sorted(sites)))

    def __len__(self):
        return len(self.sites)

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.sites, dtype=int)

    @staticmethod
    def contiguous(start: int, stop: int) -> "RegionSpec":
        """Sites ``start, ..., stop - 1``."""
        return RegionSpec(tuple(range(start, stop)))

    def union(self, other: "RegionSpec") -> "RegionSpec":
        return RegionSpec(self.sites + other.sites)


def quarter_regions(n: int):
    """Split ``n`` sites into the four consecutive blocks A, B, D, C.

    The labels follow the order of the blocks **on the chain**: A, B and D
    are the first three quarters (``n // 4`` sites each) and C is the final
    quarter including any remainder.  The topological combination below
    pairs the non-adjacent blocks B and C.
    """
    if n < 8:
        raise InvalidInputError(f"need at least 8 sites to quarter, got {n}")
    q = n // 4
    a = RegionSpec.contiguous(0, q)
    b = RegionSpec.contiguous(q, 2 * q)
    d = RegionSpec.contiguous(2 * q, 3 * q)
    c = RegionSpec.contiguous(3 * q, n)
    return a, b, d, c


class BdGState:
    """Pure Gaussian state stored as the stacked mode matrix ``W = (U; V)``.

    Attributes
    ----------
    W : (2 L, L) complex ndarray
        Column ``n`` holds the coefficients of ``beta_n^dag``.
    """

    __slots__ = ("W", "L")

    def __init__(self, W: np.ndarray):
        W = np.asarray(W, dtype=complex)
        if W.ndim != 2 or W.shape[0] != 2 * W.shape[1]:
            raise InvalidInputError(f"mode matrix must be (2L, L), got {W.shape}")
        self.W = W
        self.L = W.shape[1]

    @property
    def U(self) -> np.ndarray:
        return self.W[: self.L]

    @property
    def V(self) -> np.ndarray:
        return self.W[self.L :]

    @classmethod
    def from_blocks(cls, U: np.ndarray, V: np.ndarray) -> "BdGState":
        return cls(np.vstack([np.asarray(U, dtype=complex), np.asarray(V, dtype=complex)]))

    def copy(self) -> "BdGState":
        return BdGState(self.W.copy())

    def orthonormality_defect(self) -> float:
        """Largest violation of the two mode-matrix constraints."""
        U, V = self.U, self.V
        g1 = U.conj().T @ U + V.conj().T @ V - np.eye(self.L)
        g2 = U.T @ V + V.T @ U
        return max(np.abs(g1).max(), np.abs(g2).max())

    def validate(self, tol: float = ORTHO_TOL):
        defect = self.orthonormality_defect()
        if defect > tol:
            raise NumericalConsistencyError(
                f"mode matrix violates canonical constraints by {defect:.3e}"
            )


@dataclass
class CorrelationData:
    """Two-point functions ``C[i, j] = <c_i^dag c_j>`` and ``F[i, j] = <c_i c_j>``."""

    C: np.ndarray
    F: np.ndarray

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def validate(self, tol: float = ORTHO_TOL):
        """Check hermiticity / antisymmetry and the doubled-block spectrum."""
        if np.abs(self.C - self.C.conj().T).max() > tol:
            raise NumericalConsistencyError("C is not hermitian within tolerance")
        if np.abs(self.F + self.F.T).max() > tol:
            raise NumericalConsistencyError("F is not antisymmetric within tolerance")
        lam = np.linalg.eigvalsh(nambu_block(self, RegionSpec.contiguous(0, self.n)))
        if lam.min() < -SPECTRUM_TOL or lam.max() > 1 + SPECTRUM_TOL:
            raise NumericalConsistencyError(
                f"correlation spectrum outside [0, 1]: [{lam.min():.3e}, {lam.max():.3e}]"
            )


def init_product_state(params: SimParams, occupied) -> BdGState:
    """Site-occupation product state with the given sites filled.

    ``occupied`` is an iterable of zero-based site indices.  Empty sites
    contribute ``beta_n = c_n`` columns, filled sites ``beta_n = c_n^dag``.
    """
    L = params.L
    occ = set(int(j) for j in occupied)
    if occ and (min(occ) < 0 or max(occ) >= L):
        raise InvalidInputError("occupied site index out of range")
    U = np.zeros((L, L), dtype=complex)
    V = np.zeros((L, L), dtype=complex)
    for j in range(L):
        if j in occ:
            V[j, j] = 1.0
        else:
            U[j, j] = 1.0
    return BdGState.from_blocks(U, V)


def half_filling_state(params: SimParams) -> BdGState:
    """Neel-like product state with every other site filled."""
    return init_product_state(params, range(0, params.L, 2))


def dual_mode_coefficients(params: SimParams):
    """Coefficient rows ``(P, Q)`` with ``d_m = sum_x P[m, x] c_x + Q[m, x] c_x^dag``.

    Open boundary returns ``L`` rows: the ``L - 1`` bond modes followed by
    the boundary mode assembled from the two unpaired Majorana operators at
    the chain ends.  Periodic boundary returns the ``L`` bond modes with the
    wrap-around ``d_L``.
    """
    L = params.L
    P = np.zeros((L, L))
    Q = np.zeros((L, L))
    n_bond = params.n_dual
    for m in range(n_bond):
        nxt = (m + 1) % L
        P[m, m] = 0.5
        P[m, nxt] = 0.5
        Q[m, m] = 0.5
        Q[m, nxt] = -0.5
    if params.boundary == "open":
        # boundary mode pairing the leftover end Majoranas, phased to be real:
        # f = (c_1^dag - c_1 + c_L + c_L^dag) / 2
        P[L - 1, 0] = -0.5
        P[L - 1, L - 1] = 0.5
        Q[L - 1, 0] = 0.5
        Q[L - 1, L - 1] = 0.5
    return P, Q


def dual_rotation(params: SimParams) -> np.ndarray:
    """Unitary ``(2L, 2L)`` Bogoliubov rotation from site to bond modes.

    Acting on a mode matrix, ``R @ W`` re-expresses every quasiparticle in
    the ``d`` basis; row blocks of the result are the dual ``(U', V')``.
    """
    P, Q = dual_mode_coefficients(params)
    R = np.block([[P, Q], [Q.conj(), P.conj()]])
    defect = np.abs(R @ R.conj().T - np.eye(2 * params.L)).max()
    if defect > 1e-12:
        raise NumericalConsistencyError(f"dual rotation not unitary ({defect:.3e})")
    return R


def init_dual_product_state(
    params: SimParams, occupied_dual=None, edge_occupied: bool = False
) -> BdGState:
    """Product state in the bond-fermion basis.

    Parameters
    ----------
    occupied_dual : iterable or None
        Indices of filled ``d`` modes; ``None`` fills all of them.
    edge_occupied : bool
        Occupation of the boundary mode (open chains only); it fixes the
        fermion parity but not the entanglement structure.
    """
    L = params.L
    n_bond = params.n_dual
    if occupied_dual is None:
        occupied_dual = range(n_bond)
    occ = set(int(m) for m in occupied_dual)
    if occ and (min(occ) < 0 or max(occ) >= n_bond):
        raise InvalidInputError("dual mode index out of range")
    P, Q = dual_mode_coefficients(params)
    U = np.zeros((L, L), dtype=complex)
    V = np.zeros((L, L), dtype=complex)
    occ_all = set(occ)
    if params.boundary == "open" and edge_occupied:
        occ_all.add(L - 1)
    for m in range(L):
        if params.boundary == "periodic" and m >= n_bond:
            break
        if m in occ_all:
            # filled mode: annihilated by d_m^dag, so beta^dag = d_m
            U[:, m] = Q[m]
            V[:, m] = P[m]
        else:
            U[:, m] = P[m].conj()
            V[:, m] = Q[m].conj()
    return BdGState.from_blocks(U, V)


def orthonormalize(state: BdGState) -> BdGState:
    """Restore orthonormal mode columns after a non-unitary update.

    QR is used by default; if the triangular factor signals a condition
    number beyond ``1 / QR_COND_TOL`` the more robust SVD route is taken.
    A genuinely rank-deficient mode matrix raises ``DegenerateStateError``.
    """
    W = state.W
    Qm, Rm = np.linalg.qr(W)
    diag = np.abs(np.diagonal(Rm))
    dmax = diag.max()
    if dmax == 0.0:
        raise DegenerateStateError("mode matrix is identically zero")
    if diag.min() > QR_COND_TOL * dmax:
        return BdGState(Qm)
    u, s, _ = np.linalg.svd(W, full_matrices=False)
    if s.min() <= RANK_TOL * s.max():
        raise DegenerateStateError(
            f"mode matrix numerically rank deficient (sigma ratio {s.min() / s.max():.3e})"
        )
    return BdGState(u)


def overlap_magnitude(a: BdGState, b: BdGState) -> float:
    """``|<a|b>|`` for two normalized Gaussian states.

    Evaluated as ``|det(Ua^dag Ub + Va^dag Vb)|^(1/2)``, which is invariant
    under unitary column mixing of either mode matrix.
    """
    if a.L != b.L:
        raise InvalidInputError("states live on different chain lengths")
    m = a.U.conj().T @ b.U + a.V.conj().T @ b.V
    sign, logdet = np.linalg.slogdet(m)
    if sign == 0:
        return 0.0
    return float(np.exp(0.5 * logdet))


def correlators(state: BdGState) -> CorrelationData:
    """Equal-time two-point functions of the state."""
    U, V = state.U, state.V
    C = V @ V.conj().T
    F = U @ V.conj().T
    return CorrelationData(C=C, F=F)


def dual_correlators(state: BdGState, params: SimParams) -> CorrelationData:
    """Two-point functions in the bond-fermion basis.

    Returns an ``n_dual``-site :class:`CorrelationData`; on an open chain
    the boundary mode is excluded, leaving the ``L - 1`` bond modes.
    """
    if state.L != params.L:
        raise InvalidInputError("state size does not match params.L")
    R = dual_rotation(params)
    Wd = R @ state.W
    L, nd = params.L, params.n_dual
    Ud, Vd = Wd[:L], Wd[L:]
    C = (Vd @ Vd.conj().T)[:nd, :nd]
    F = (Ud @ Vd.conj().T)[:nd, :nd]
    return CorrelationData(C=C, F=F)


def nambu_block(corr: CorrelationData, region) -> np.ndarray:
    """Particle-hole doubled correlation block of a region.

    The ``2 m x 2 m`` hermitian matrix ``[[C, -F*], [F, 1 - C^T]]``
    restricted to the region, i.e. ``<Psi_a^dag Psi_b>`` for the doubled
    vector ``Psi = (c_1 .. c_m, c_1^dag .. c_m^dag)``; its eigenvalues lie
    in ``[0, 1]`` and pair up as ``(lam, 1 - lam)``.
    """
    ix = region.indices if isinstance(region, RegionSpec) else np.asarray(region, dtype=int)
    n = corr.n
    if ix.min() < 0 or ix.max() >= n:
        raise InvalidInputError("region site outside correlation matrix")
    Cb = corr.C[np.ix_(ix, ix)]
    Fb = corr.F[np.ix_(ix, ix)]
    eye = np.eye(len(ix))
    return np.block([[Cb, -Fb.conj()], [Fb, eye - Cb.T]])


def _entropy_from_eigs(lam: np.ndarray, base: str) -> float:
    if lam.min() < -SPECTRUM_TOL or lam.max() > 1 + SPECTRUM_TOL:
        raise NumericalConsistencyError(
            f"correlation eigenvalues outside [0, 1]: [{lam.min():.3e}, {lam.max():.3e}]"
        )
    lam = np.clip(lam, EIG_CLAMP, 1.0 - EIG_CLAMP)
    s = -0.5 * float(np.sum(xlogy(lam, lam) + xlogy(1.0 - lam, 1.0 - lam)))
    return s / _LN2 if base == "bits" else s


def region_entropy(corr: CorrelationData, region, base: str = "nats") -> float:
    """Von Neumann entanglement entropy of a site region.

    The factor 1/2 compensates the particle-hole doubling of the block, so
    a single mode at half occupation gives ``ln 2`` nats (one bit).
    """
    if base not in ("nats", "bits"):
        raise InvalidInputError(f"unknown entropy base {base!r}")
    block = nambu_block(corr, region)
    herm_defect = np.abs(block - block.conj().T).max()
    if herm_defect > SPECTRUM_TOL:
        raise NumericalConsistencyError(
            f"correlation block not hermitian (defect {herm_defect:.3e})"
        )
    lam = np.linalg.eigvalsh(block)
    return _entropy_from_eigs(lam, base)


def half_cut_entropy(corr: CorrelationData, base: str = "nats") -> float:
    """Entropy of the first two quarters (equals L/2 sites when 4 | n)."""
    q = corr.n // 4
    return region_entropy(corr, RegionSpec.contiguous(0, 2 * q), base)


def topological_entropy(
    corr: CorrelationData, base: str = "nats", allow_uneven: bool = False
) -> float:
    """Four-partition entropy combination sensitive to the bond-pairing order.

    With consecutive quarters A, B, D, C the combination

        S_top = S(AB) + S(BC) - S(B) - S(ABC)

    pairs the two non-adjacent blocks B and C.  It vanishes on site-product
    states and equals ``ln 2`` nats (one bit) on bond-fermion product
    states, where every cut severs a Majorana pair.

    ``allow_uneven`` admits sizes not divisible by four (the last quarter
    absorbs the remainder), as needed for the dual lattice of an open chain.
    """
    n = corr.n
    if n % 4 != 0 and not allow_uneven:
        raise InvalidInputError(
            f"topological entropy needs a site count divisible by 4, got {n}"
        )
    a, b, d, c = quarter_regions(n)
    s_ab = region_entropy(corr, a.union(b), base)
    s_bc = region_entropy(corr, b.union(c), base)
    s_b = region_entropy(corr, b, base)
    s_abc = region_entropy(corr, a.union(b).union(c), base)
    return s_ab + s_bc - s_b - s_abc


def b_indicator(
    corr: CorrelationData, base: str = "nats", allow_uneven: bool = False
) -> float:
    """Product of topological and half-cut entropies.

    Zero in both area-law phases (one factor vanishes in each) and finite
    at criticality, which makes its size dependence a convenient
    transition locator.
    """
    s_top = topological_entropy(corr, base, allow_uneven)
    s_half = half_cut_entropy(corr, base)
    return s_top * s_half
