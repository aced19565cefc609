"""Mode-matrix states, regions, and entanglement measures."""

import numpy as np
import pytest

from conftest import evolved_state
from fermion_monitor import (
    BdGState,
    InvalidInputError,
    RegionSpec,
    SimParams,
    b_indicator,
    correlators,
    dual_correlators,
    dual_rotation,
    half_cut_entropy,
    half_filling_state,
    init_dual_product_state,
    init_product_state,
    orthonormalize,
    overlap_magnitude,
    quarter_regions,
    region_entropy,
    topological_entropy,
)
from fermion_monitor.state import nambu_block

LN2 = np.log(2.0)


# ---------------------------------------------------------------- parameters


@pytest.mark.parametrize(
    "kwargs",
    [
        {"L": 1},
        {"L": 8, "w": -0.1},
        {"L": 8, "gamma": -1.0},
        {"L": 8, "alpha": -0.5},
        {"L": 8, "dt": 0.0},
        {"L": 8, "dt": -0.05},
        {"L": 8, "boundary": "moebius"},
        {"L": 8, "entropy_base": "trits"},
    ],
)
def test_params_rejects_bad_values(kwargs):
    with pytest.raises(InvalidInputError):
        SimParams(**kwargs)


def test_params_error_is_a_value_error():
    with pytest.raises(ValueError):
        SimParams(L=0)


def test_params_with_replaces_fields():
    p = SimParams(L=16, gamma=1.0, alpha=0.5)
    q = p.with_(alpha=2.0)
    assert q.alpha == 2.0
    assert q.gamma == 1.0 and q.L == 16
    assert p.alpha == 0.5  # original untouched


@pytest.mark.parametrize(
    "boundary, expected", [("open", 11), ("periodic", 12)]
)
def test_dual_mode_count(boundary, expected):
    assert SimParams(L=12, boundary=boundary).n_dual == expected


# ------------------------------------------------------------------- regions


def test_region_sites_are_sorted_and_unique():
    r = RegionSpec((5, 1, 3))
    assert r.sites == (1, 3, 5)
    with pytest.raises(InvalidInputError):
        RegionSpec((2, 2))


def test_region_contiguous_and_union():
    a = RegionSpec.contiguous(2, 5)
    assert a.sites == (2, 3, 4)
    b = a.union(RegionSpec((0,)))
    assert b.sites == (0, 2, 3, 4)
    assert list(b.indices) == [0, 2, 3, 4]


def test_quarter_regions_partition_the_chain():
    A, B, D, C = quarter_regions(10)
    assert A.sites == (0, 1)
    assert B.sites == (2, 3)
    assert D.sites == (4, 5)
    assert C.sites == (6, 7, 8, 9)  # remainder goes to the last block
    merged = sorted(A.sites + B.sites + D.sites + C.sites)
    assert merged == list(range(10))


def test_quarter_regions_needs_eight_sites():
    with pytest.raises(InvalidInputError):
        quarter_regions(7)


# ------------------------------------------------------- mode-matrix algebra


def test_orthonormalize_restores_invariants():
    rng = np.random.default_rng(42)
    L = 7
    W = rng.normal(size=(2 * L, L)) + 1j * rng.normal(size=(2 * L, L))
    st = orthonormalize(BdGState(W))
    U, V = st.U, st.V
    # a raw random matrix is not a valid pairing state, so only the
    # normalization half of the invariant is guaranteed here
    assert np.allclose(U.conj().T @ U + V.conj().T @ V, np.eye(L), atol=1e-12)


def test_pairing_constraint_survives_evolution():
    p = SimParams(L=8, w=0.6, gamma=0.7, alpha=0.9, dt=0.05)
    st = evolved_state(p, 60, seed=3)
    U, V = st.U, st.V
    assert np.abs(U.T @ V + V.T @ U).max() < 1e-10
    assert st.orthonormality_defect() < 1e-10


def test_correlator_structure_on_generic_state():
    p = SimParams(L=8, w=0.6, gamma=0.7, alpha=0.9, dt=0.05)
    corr = correlators(evolved_state(p, 60, seed=1))
    assert np.allclose(corr.C, corr.C.conj().T, atol=1e-10)
    assert np.allclose(corr.F, -corr.F.T, atol=1e-10)
    block = nambu_block(corr, RegionSpec.contiguous(0, 8))
    ev = np.linalg.eigvalsh(block)
    assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8


# ------------------------------------------------------------------ entropy


def test_full_chain_entropy_of_pure_state_vanishes():
    p = SimParams(L=8, w=0.5, gamma=0.8, alpha=0.6, dt=0.05)
    corr = correlators(evolved_state(p, 50, seed=9))
    assert abs(region_entropy(corr, RegionSpec.contiguous(0, 8))) < 1e-8


def test_entropy_complement_symmetry():
    p = SimParams(L=10, w=0.4, gamma=0.9, alpha=0.7, dt=0.05)
    corr = correlators(evolved_state(p, 50, seed=5))
    for stop in (2, 5, 7):
        left = region_entropy(corr, RegionSpec.contiguous(0, stop))
        right = region_entropy(corr, RegionSpec.contiguous(stop, 10))
        assert left == pytest.approx(right, abs=1e-8)


def test_single_shared_mode_carries_ln2():
    p = SimParams(L=2, boundary="open")
    corr = correlators(init_dual_product_state(p))
    assert region_entropy(corr, RegionSpec((0,))) == pytest.approx(LN2, abs=1e-12)
    assert region_entropy(corr, RegionSpec((0,)), base="bits") == pytest.approx(
        1.0, abs=1e-12
    )


def test_entropy_base_conversion_factor():
    p = SimParams(L=8, w=0.5, gamma=0.8, alpha=0.6, dt=0.05)
    corr = correlators(evolved_state(p, 40, seed=2))
    region = RegionSpec.contiguous(0, 3)
    nats = region_entropy(corr, region)
    bits = region_entropy(corr, region, base="bits")
    assert bits == pytest.approx(nats / LN2, rel=1e-12)


def test_site_product_state_has_no_topological_term():
    p = SimParams(L=16)
    corr = correlators(init_product_state(p, range(0, 16, 2)))
    assert topological_entropy(corr) == pytest.approx(0.0, abs=1e-10)


def test_bond_product_state_topological_term_is_one_bit():
    p = SimParams(L=16, boundary="open")
    corr = correlators(init_dual_product_state(p))
    assert topological_entropy(corr) == pytest.approx(LN2, abs=1e-9)
    assert topological_entropy(corr, base="bits") == pytest.approx(1.0, abs=1e-9)


def test_topological_entropy_length_gates():
    p = SimParams(L=10)
    corr = correlators(half_filling_state(p))
    with pytest.raises(InvalidInputError):
        topological_entropy(corr)  # 10 sites do not split into even quarters
    assert topological_entropy(corr, allow_uneven=True) == pytest.approx(
        0.0, abs=1e-10
    )
    small = correlators(half_filling_state(SimParams(L=6)))
    with pytest.raises(InvalidInputError):
        topological_entropy(small, allow_uneven=True)


def test_b_indicator_is_product_of_topological_and_half_cut_terms():
    p = SimParams(L=12, w=0.3, gamma=0.8, alpha=1.1, dt=0.05)
    corr = correlators(evolved_state(p, 60, seed=7))
    expected = topological_entropy(corr) * half_cut_entropy(corr)
    assert b_indicator(corr) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- dual basis


@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_dual_rotation_is_real_orthogonal(boundary):
    p = SimParams(L=10, boundary=boundary)
    R = dual_rotation(p)
    assert R.dtype == np.float64
    assert np.allclose(R @ R.T, np.eye(2 * p.L), atol=1e-12)


def test_dual_correlators_of_dual_product_state_are_diagonal():
    p = SimParams(L=6, boundary="open")
    st = init_dual_product_state(p, occupied_dual={2})
    dc = dual_correlators(st, p)
    assert dc.n == p.n_dual
    assert np.allclose(np.diag(dc.C).real, [0, 0, 1, 0, 0], atol=1e-12)
    assert np.abs(dc.F).max() < 1e-12


# ------------------------------------------------------------------ overlap


def test_overlap_magnitude_limits():
    p = SimParams(L=4)
    a = init_product_state(p, {0, 2})
    b = init_product_state(p, {1, 3})
    assert overlap_magnitude(a, a) == pytest.approx(1.0, abs=1e-12)
    assert overlap_magnitude(a, b) == pytest.approx(0.0, abs=1e-12)


def test_overlap_magnitude_on_generic_states_is_in_unit_interval():
    p = SimParams(L=6, w=0.4, gamma=0.6, alpha=0.5, dt=0.05)
    a = evolved_state(p, 30, seed=1)
    b = evolved_state(p, 30, seed=2)
    val = overlap_magnitude(a, b)
    assert 0.0 < val < 1.0
