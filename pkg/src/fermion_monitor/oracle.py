"""Dense many-body oracle for small chains.

Everything the Gaussian engine computes through ``(2L, L)`` mode matrices is
recomputed here with full state vectors in the ``2^L`` Fock space, built
from explicit ladder operators.  The point of this module is to be obviously
correct rather than fast: measurement layers are applied with literal
matrix exponentials and entropies with literal reduced density matrices.
It is used by the test suite to pin down every sign and ordering convention
of the fast path, and is exposed through the command line for spot checks.

Site ``j`` maps to tensor axis ``j``; the empty state is index 0.
"""

from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from .errors import InvalidInputError, NumericalConsistencyError, ResourceLimitError
from .state import BdGState, CorrelationData, RegionSpec, SimParams, dual_mode_coefficients

#: largest chain the dense oracle accepts (the Fock space is 2^L)
MAX_SITES = 10

_LN2 = float(np.log(2.0))

_A = np.array([[0.0, 1.0], [0.0, 0.0]])  # annihilation on one site
_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
_I2 = np.eye(2)


def _check_size(L: int):
    if L > MAX_SITES:
        raise ResourceLimitError(
            f"dense oracle supports at most {MAX_SITES} sites, got L={L}"
        )


def site_annihilators(L: int):
    """Dense ladder operators ``c_0 .. c_{L-1}`` with fermionic signs."""
    _check_size(L)
    ops = []
    for j in range(L):
        op = np.array([[1.0]])
        for k in range(L):
            if k < j:
                op = np.kron(op, _Z)
            elif k == j:
                op = np.kron(op, _A)
            else:
                op = np.kron(op, _I2)
        ops.append(op)
    return ops


def _expm_sym(G: np.ndarray) -> np.ndarray:
    """``expm`` of a real symmetric matrix through its eigenbasis."""
    evals, evecs = np.linalg.eigh(G)
    return (evecs * np.exp(evals)) @ evecs.T


class DenseOracle:
    """Exact reference implementation on the full Fock space.

    Parameters mirror the Gaussian engine; the oracle can replay a recorded
    trajectory readout-by-readout, report branch probabilities, reduced
    density matrices, entropies and two-point functions.
    """

    def __init__(self, params: SimParams):
        _check_size(params.L)
        self.params = params
        L = params.L
        self.dim = 2**L
        self.c = site_annihilators(L)
        self.cdag = [op.T for op in self.c]
        self.number = [self.cdag[j] @ self.c[j] for j in range(L)]
        # density measurement operators are diagonal: keep only the signs
        self.density_signs = np.stack(
            [2.0 * np.diag(self.number[j]) - 1.0 for j in range(L)]
        )
        P, Q = dual_mode_coefficients(params)
        self.d = []
        for m in range(L):
            op = np.zeros((self.dim, self.dim))
            for x in range(L):
                if P[m, x] != 0.0:
                    op += P[m, x] * self.c[x]
                if Q[m, x] != 0.0:
                    op += Q[m, x] * self.cdag[x]
            self.d.append(op)
        self.bond_ops = [
            2.0 * self.d[m].T @ self.d[m] - np.eye(self.dim)
            for m in range(params.n_dual)
        ]
        h = np.zeros((L, L))
        for j in range(L - 1):
            h[j, j + 1] = h[j + 1, j] = params.w
        if params.boundary == "periodic":
            h[0, L - 1] += params.w
            h[L - 1, 0] += params.w
        self.hamiltonian = sum(
            h[i, j] * (self.cdag[i] @ self.c[j])
            for i in range(L)
            for j in range(L)
            if h[i, j] != 0.0
        )
        if params.w > 0:
            evals, evecs = np.linalg.eigh(self.hamiltonian)
            self.unitary = (evecs * np.exp(-1j * params.dt * evals)) @ evecs.conj().T
        else:
            self.unitary = None
        self._pinned_kick = None

    # -- state construction ------------------------------------------------

    def product_state(self, occupied) -> np.ndarray:
        occ = set(int(j) for j in occupied)
        L = self.params.L
        psi = np.array([1.0])
        for j in range(L):
            psi = np.kron(psi, np.array([0.0, 1.0]) if j in occ else np.array([1.0, 0.0]))
        return psi.astype(complex)

    def from_gaussian(self, state: BdGState) -> np.ndarray:
        """Dense vector of a Gaussian state, up to a global phase.

        The state is the unique zero mode of ``sum_n beta_n^dag beta_n``,
        whose spectrum is integer with unit gap for orthonormal modes.
        """
        if state.L != self.params.L:
            raise InvalidInputError("state size does not match oracle size")
        K = np.zeros((self.dim, self.dim), dtype=complex)
        for n in range(state.L):
            b = np.zeros((self.dim, self.dim), dtype=complex)
            for x in range(state.L):
                b += state.U[x, n].conj() * self.c[x] + state.V[x, n].conj() * self.cdag[x]
            K += b.conj().T @ b
        evals, evecs = np.linalg.eigh(K)
        if evals[0] > 1e-8 or evals[1] < 0.5:
            raise NumericalConsistencyError(
                f"mode kernel not one dimensional (lowest levels {evals[:2]})"
            )
        return evecs[:, 0]

    # -- evolution ---------------------------------------------------------

    def born_probs(self, psi: np.ndarray, channel: str) -> np.ndarray:
        """Probability of the ``+1`` outcome for every operator of a layer."""
        if channel == "density":
            occ = np.abs(psi) ** 2 @ ((self.density_signs.T + 1.0) / 2.0)
            return occ
        if channel == "bond":
            return np.array(
                [
                    float(np.real(psi.conj() @ ((np.eye(self.dim) + M) / 2.0) @ psi))
                    for M in self.bond_ops
                ]
            )
        raise InvalidInputError(f"unknown measurement channel {channel!r}")

    def apply_density_layer(self, psi: np.ndarray, g: np.ndarray) -> np.ndarray:
        weight = np.exp(-self.density_signs.T @ np.asarray(g))
        psi = weight * psi
        return psi / np.linalg.norm(psi)

    def apply_bond_layer(self, psi: np.ndarray, g: np.ndarray) -> np.ndarray:
        G = sum(gm * M for gm, M in zip(np.asarray(g), self.bond_ops))
        psi = _expm_sym(-G) @ psi
        return psi / np.linalg.norm(psi)

    def replay_step(self, psi, x_bond=None, x_density=None) -> np.ndarray:
        """One Trotter step driven by recorded readouts (unitary, bond, density)."""
        p = self.params
        if self.unitary is not None:
            psi = self.unitary @ psi
        if x_bond is not None:
            psi = self.apply_bond_layer(psi, p.alpha * p.dt * np.asarray(x_bond))
        if x_density is not None:
            psi = self.apply_density_layer(psi, p.gamma * p.dt * np.asarray(x_density))
        return psi

    def replay(self, psi, records) -> np.ndarray:
        for rec in sorted(records, key=lambda r: r.index):
            psi = self.replay_step(psi, rec.x_bond, rec.x_density)
        return psi

    def postselected_step(self, psi) -> np.ndarray:
        """Pinned-readout update ``exp(-dt (gamma sum M + alpha sum Mt))``.

        Both channels sit in one joint exponential (matching the fast path),
        so with no hopping the fixed point is exactly the dark state of the
        summed generator rather than a Trotter approximation to it.
        """
        p = self.params
        if self.unitary is not None:
            psi = self.unitary @ psi
        if self._pinned_kick is None:
            G = np.zeros((self.dim, self.dim))
            if p.gamma > 0:
                G += p.gamma * np.diag(self.density_signs.sum(axis=0))
            if p.alpha > 0:
                G += p.alpha * sum(self.bond_ops)
            self._pinned_kick = _expm_sym(-p.dt * G)
        psi = self._pinned_kick @ psi
        return psi / np.linalg.norm(psi)

    # -- observables -------------------------------------------------------

    def reduced_density(self, psi: np.ndarray, region) -> np.ndarray:
        """Fermionic reduced density matrix of a set of sites.

        The kept modes are first permuted to the front of the ordering;
        for fermions that permutation contributes a sign per occupied pair
        whose relative order flips.  Only then is the tail traced out, so
        disjoint regions get the mode entropy, not the spin-chain one.
        """
        sites = region.indices if isinstance(region, RegionSpec) else np.asarray(region, dtype=int)
        L = self.params.L
        keep = [int(s) for s in sites]
        rest = [j for j in range(L) if j not in set(keep)]
        # bits[n, j] = occupation of site j in basis state n (site 0 is the
        # most significant factor of the kron ordering)
        bits = (np.arange(self.dim)[:, None] >> (L - 1 - np.arange(L))) & 1
        crossings = np.zeros(self.dim, dtype=np.int64)
        for r in rest:
            for k in keep:
                if r < k:
                    crossings += bits[:, r] * bits[:, k]
        signed = np.where(crossings % 2, -1.0, 1.0) * psi
        tensor = signed.reshape((2,) * L).transpose(keep + rest)
        mat = tensor.reshape(2 ** len(keep), 2 ** len(rest))
        return mat @ mat.conj().T

    def entropy(self, psi: np.ndarray, region, base: str = "nats") -> float:
        rho = self.reduced_density(psi, region)
        lam = np.linalg.eigvalsh(rho)
        lam = np.clip(lam, 0.0, 1.0)
        s = -float(np.sum(xlogy(lam, lam)))
        return s / _LN2 if base == "bits" else s

    def correlators(self, psi: np.ndarray) -> CorrelationData:
        L = self.params.L
        C = np.empty((L, L), dtype=complex)
        F = np.empty((L, L), dtype=complex)
        cpsi = [op @ psi for op in self.c]
        for i in range(L):
            for j in range(L):
                C[i, j] = np.vdot(cpsi[i], cpsi[j])
                F[i, j] = np.vdot(psi, self.c[i] @ cpsi[j])
        return CorrelationData(C=C, F=F)

    def overlap_magnitude(self, psi: np.ndarray, phi: np.ndarray) -> float:
        return float(abs(np.vdot(psi, phi)))
