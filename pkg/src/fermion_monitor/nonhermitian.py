"""Momentum-space analysis of the pinned-readout (deterministic) evolution.

With every readout pinned at its post-selected value the chain evolves
under a quadratic non-hermitian generator.  On a periodic lattice it
splits into independent momentum blocks governed by three real functions,

    xi(k)    = alpha cos k + gamma     (net decay / pairing balance)
    delta(k) = alpha sin k             (pairing amplitude)
    wk(k)    = w cos k                 (coherent hopping)

and by the pair of chiral-basis functions

    q_{1,2}(k) = xi(k) + i [wk(k) +- delta(k)],

whose product gives the squared quasiparticle spectrum E(k)^2 = q1 q2.
The long-time ("dark") state is gapped whenever Re E(k) stays away from
zero for all k; its correlators have a closed form that this module also
cross-checks by integrating the correlator equations of motion.

All functions accept scalar or array ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import GaplessPointError, InvalidInputError, StiffnessError
from .state import CorrelationData

#: |q| below this counts as an exact spectral zero
ZERO_TOL = 1e-9
#: |Re E| below this counts as a closed decay gap
GAP_TOL = 1e-9


def bloch_components(k, w, gamma, alpha):
    """Return ``(xi, delta, wk)`` at momentum ``k``."""
    k = np.asarray(k, dtype=float)
    return alpha * np.cos(k) + gamma, alpha * np.sin(k), w * np.cos(k)


def chiral_functions(k, w, gamma, alpha):
    """The two complex loop functions ``q1(k)``, ``q2(k)``."""
    xi, delta, wk = bloch_components(k, w, gamma, alpha)
    return xi + 1j * (wk + delta), xi + 1j * (wk - delta)


@dataclass(frozen=True)
class NHPoint:
    """All momentum-space data of the non-hermitian generator at one ``k``."""

    w: float
    gamma: float
    alpha: float
    k: float
    xi: float
    delta: float
    wk: float
    q1: complex
    q2: complex


def nh_point(k, w, gamma, alpha) -> NHPoint:
    xi, delta, wk = bloch_components(k, w, gamma, alpha)
    q1, q2 = chiral_functions(k, w, gamma, alpha)
    return NHPoint(
        w=w, gamma=gamma, alpha=alpha, k=float(k),
        xi=float(xi), delta=float(delta), wk=float(wk),
        q1=complex(q1), q2=complex(q2),
    )


@dataclass(frozen=True)
class PhaseLabel:
    """Winding pair and gap status of one parameter point.

    ``nu1``/``nu2`` are the magnitudes of the (oppositely signed) windings
    of ``q1`` and ``q2`` around the origin; ``None`` when an exact spectral
    zero makes them undefined.
    """

    nu1: int | None
    nu2: int | None
    gapless: bool

    @property
    def kind(self) -> str:
        if self.gapless:
            return "gapless"
        return "topological" if self.nu1 == 1 else "trivial"


def _grid(n_k: int) -> np.ndarray:
    return np.linspace(-np.pi, np.pi, n_k, endpoint=False)


def winding_numbers(w, gamma, alpha, n_k: int = 1024):
    """Winding magnitudes of the two chiral loops around the origin.

    Computed as unwrapped phase accumulation over a uniform momentum grid.
    The two loops traverse with opposite orientation, so their signed
    windings differ by sign; the magnitudes are returned, which label the
    gapped phases as (0, 0) or (1, 1).

    Raises
    ------
    GaplessPointError
        If the decay gap closes, where the winding is undefined: in the
        gapless region a loop passes through the origin at some momentum
        even when the sampling grid narrowly misses it.
    """
    if n_k < 256:
        raise InvalidInputError("winding grid needs n_k >= 256")
    if is_gapless(w, gamma, alpha):
        raise GaplessPointError(
            f"winding undefined: (w, gamma, alpha) = ({w}, {gamma}, {alpha}) "
            "has no decay gap"
        )
    k = _grid(n_k)
    out = []
    for q in chiral_functions(k, w, gamma, alpha):
        qmin = float(np.abs(q).min())
        if qmin < ZERO_TOL:
            raise GaplessPointError(
                f"chiral loop passes through the origin (min |q| = {qmin:.3e})"
            )
        phases = np.unwrap(np.angle(q))
        wrap = phases[0] + np.angle(q[0] / q[-1])  # close the loop
        nu = (wrap - phases[-1]) / (2.0 * np.pi)
        out.append(abs(int(round(nu))))
    return out[0], out[1]


def gapless_boundary(alpha, w):
    """Critical density-measurement rate where the decay gap closes."""
    if alpha <= 0:
        raise InvalidInputError("boundary undefined for alpha = 0")
    return alpha / np.sqrt(1.0 + (w / alpha) ** 2)


def spectral_gap(w, gamma, alpha, n_k: int = 4096) -> float:
    """Smallest decay rate ``min_k |Re sqrt(q1 q2)|`` over the zone.

    The product ``q1 q2`` is scanned on a dense grid and its crossings of
    the real axis are refined by bisection, since the minimum of
    ``|Re sqrt|`` sits where the product meets the negative real axis.
    """
    k = _grid(n_k)
    q1, q2 = chiral_functions(k, w, gamma, alpha)
    z = q1 * q2
    gap = float(np.abs(np.sqrt(z).real).min())
    # refine the Im(z) sign changes; a crossing with Re < 0 closes the gap.
    # Only samples whose imaginary part is resolved above roundoff count:
    # when z is numerically real (w = 0), signbit noise would otherwise
    # fake thousands of crossings.
    im = z.imag
    ridx = np.nonzero(np.abs(im) > 1e-12 * np.abs(z))[0]
    ims = im[ridx]
    flips = np.nonzero(np.signbit(ims[:-1]) != np.signbit(ims[1:]))[0]
    for j in flips:
        lo, hi = k[ridx[j]], k[ridx[j + 1]]
        sign_lo = np.signbit(ims[j])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            q1m, q2m = chiral_functions(mid, w, gamma, alpha)
            if np.signbit((q1m * q2m).imag) == sign_lo:
                lo = mid
            else:
                hi = mid
        q1m, q2m = chiral_functions(0.5 * (lo + hi), w, gamma, alpha)
        gap = min(gap, float(abs(np.sqrt(q1m * q2m).real)))
    return gap


def is_gapless(w, gamma, alpha, n_k: int = 4096) -> bool:
    return spectral_gap(w, gamma, alpha, n_k) < GAP_TOL


def classify_phase(w, gamma, alpha, n_k: int = 1024) -> PhaseLabel:
    """Label a parameter point as topological, trivial, or gapless.

    A point is gapless when the decay gap closes (the loop ``q1 q2``
    touches the negative real axis, so some mode never relaxes) or when
    winding numbers are undefined or unequal.
    """
    gapless = is_gapless(w, gamma, alpha, max(n_k, 2048))
    try:
        nu1, nu2 = winding_numbers(w, gamma, alpha, n_k)
    except GaplessPointError:
        return PhaseLabel(nu1=None, nu2=None, gapless=True)
    return PhaseLabel(nu1=nu1, nu2=nu2, gapless=gapless or nu1 != nu2)


def steady_correlators_k(k, w, gamma, alpha):
    """Closed-form dark-state correlators ``(C_k, F_k)`` at momentum ``k``.

    The dark state of each momentum block is the dominant eigenvector of
    the non-hermitian generator; writing ``zeta = xi + i wk`` and
    ``E = sqrt(zeta^2 + delta^2)`` (principal branch) the eigenvector
    ratio is ``r = i delta / (E + zeta)`` and

        C_k = |r|^2 / (1 + |r|^2),     F_k = r / (1 + |r|^2).

    At ``w = 0`` this reduces to the ground-state correlators of the
    corresponding hermitian pairing chain, ``C_k = (E - xi)/(2E)`` and
    ``F_k = i delta/(2E)``.

    Raises
    ------
    GaplessPointError
        If the parameters sit in the gapless region (no dark state), or
        the requested mode itself has no decay gap.
    """
    if is_gapless(w, gamma, alpha):
        raise GaplessPointError(
            f"no dark state: (w, gamma, alpha) = ({w}, {gamma}, {alpha}) is gapless"
        )
    k = np.asarray(k, dtype=float)
    xi, delta, wk = bloch_components(k, w, gamma, alpha)
    zeta = xi + 1j * wk
    E = np.sqrt(zeta**2 + delta**2 + 0j)
    if np.any(np.abs(E.real) < GAP_TOL):
        raise GaplessPointError("requested momentum has no decay gap")
    # r = i delta/(E + zeta) = i (E - zeta)/delta; pick the stable form
    denom = E + zeta
    use_alt = np.abs(denom) < np.abs(delta)
    r = np.where(
        use_alt,
        1j * (E - zeta) / np.where(delta == 0.0, 1.0, delta),
        1j * np.asarray(delta, dtype=complex) / np.where(np.abs(denom) == 0.0, 1.0, denom),
    )
    norm = 1.0 + np.abs(r) ** 2
    C = (np.abs(r) ** 2 / norm).real
    F = r / norm
    if k.ndim == 0:
        return float(C), complex(F)
    return C, F


def eom_rhs(t, y, xi, delta, wk):
    """Right-hand side of the per-mode correlator equations of motion.

    ``y`` stacks ``[C, Re F, Im F]`` for each momentum; the equations are

        dC/dt = -4 xi [C(1-C) + |F|^2] + 2i delta (2C-1)(F - F*)
        dF/dt = -4 xi F (1-2C) - 4i wk F + 2i delta (2F^2 + 2C^2 - 2C + 1)

    which preserve purity (the doubled-block spectrum stays {0, 1}).
    """
    n = y.size // 3
    C, fr, fi = y[:n], y[n : 2 * n], y[2 * n :]
    dC = -4.0 * xi * (C * (1.0 - C) + fr**2 + fi**2) - 4.0 * delta * (2.0 * C - 1.0) * fi
    one_m2C = 1.0 - 2.0 * C
    re_s = 2.0 * (fr**2 - fi**2) + 2.0 * C**2 - 2.0 * C + 1.0
    dfr = -4.0 * xi * fr * one_m2C + 4.0 * wk * fi - 8.0 * delta * fr * fi
    dfi = -4.0 * xi * fi * one_m2C - 4.0 * wk * fr + 2.0 * delta * re_s
    return np.concatenate([dC, dfr, dfi])


def integrate_eom(k, w, gamma, alpha, C0, F0, T, rtol=1e-10, atol=1e-12):
    """Integrate the correlator equations of motion to time ``T``.

    Parameters
    ----------
    k : scalar or array
        Momenta; all are integrated as one uncoupled system.
    C0, F0 : scalar or array
        Initial occupation (real, in [0, 1]) and pairing (complex).
    T : float
        Final time.

    Returns
    -------
    (C_T, F_T) matching the shape of ``k``.
    """
    k = np.asarray(k, dtype=float)
    scalar = k.ndim == 0
    kv = np.atleast_1d(k)
    C0 = np.broadcast_to(np.asarray(C0, dtype=float), kv.shape).copy()
    F0 = np.broadcast_to(np.asarray(F0, dtype=complex), kv.shape).copy()
    if C0.min() < -1e-12 or C0.max() > 1.0 + 1e-12:
        raise InvalidInputError("initial occupation must lie in [0, 1]")
    if T <= 0:
        raise InvalidInputError("integration time must be positive")
    xi, delta, wk = bloch_components(kv, w, gamma, alpha)
    y0 = np.concatenate([C0, F0.real, F0.imag])
    sol = solve_ivp(
        eom_rhs,
        (0.0, float(T)),
        y0,
        args=(xi, delta, wk),
        method="RK45",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise StiffnessError(f"correlator integration failed: {sol.message}")
    n = kv.size
    C = sol.y[:n, -1]
    F = sol.y[n : 2 * n, -1] + 1j * sol.y[2 * n :, -1]
    if scalar:
        return float(C[0]), complex(F[0])
    return C, F


def darkstate_realspace(params) -> CorrelationData:
    """Real-space dark-state correlators on the ``L``-site periodic ring.

    Inverse Fourier transform of the closed-form momentum correlators over
    the grid ``k_n = 2 pi n / L``; both matrices are circulant.
    """
    if params.boundary != "periodic":
        raise InvalidInputError(
            "dark-state correlators live on the periodic ring; "
            "build the params with boundary='periodic'"
        )
    L = params.L
    k = 2.0 * np.pi * np.arange(L) / L
    Ck, Fk = steady_correlators_k(k, params.w, params.gamma, params.alpha)
    rc = np.fft.ifft(Ck)
    rf = np.fft.ifft(Fk)
    d = (np.arange(L)[None, :] - np.arange(L)[:, None]) % L
    return CorrelationData(C=rc[d], F=rf[d])
