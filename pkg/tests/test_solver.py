"""Assembly, Dirichlet solver, and maximum/comparison principle tests.

Frozen oracle values come from tests/oracles/torsion_ode.py (independent
radial BVP solve): the torsion center value 1/6 and the continuum
well-posedness bound ratio for f = 1 on the unit ball.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab import solver as sv
from driftlab.function_spaces import sample
from driftlab.mesh import FeFunction, ball_mesh, build_mesh, interpolate, norm, zero_function

TORSION_CENTER = 1.0 / 6.0  # tests/oracles/torsion_ode.py
RATIO_CONTINUUM = 0.201170811357  # (||u||_L6 + ||grad u||_L2) / |B|^{5/6}

UNIT = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]

_TINY = build_mesh(UNIT, 1.0 / 3.0)


@pytest.fixture(scope="module")
def cube8():
    return build_mesh(UNIT, 1.0 / 8.0)


@pytest.fixture(scope="module")
def ball16():
    return ball_mesh(1.0, 1.0 / 16.0)


def _random_coeffs(mesh, seed, mode="none"):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 2 * np.pi, size=8)
    co = sv.CoefficientSet.from_fields(
        mesh,
        A=lambda x: 1.0 + 0.4 * np.sin(2 * np.pi * x[:, 0] + p[0]) * np.cos(2 * np.pi * x[:, 1] + p[1]),
        b=lambda x: np.stack(
            [np.sin(x[:, 0] + p[2]), np.cos(x[:, 1] + p[3]), x[:, 2] ** 2], axis=1
        ),
        c=lambda x: np.stack([x[:, 1], -x[:, 0], np.sin(x[:, 2] + p[4])], axis=1),
        d=lambda x: -1.0 - x[:, 0] ** 2,
        negativity_mode=mode,
    )
    return co


# -- assembly ---------------------------------------------------------------


def test_assemble_laplace_symmetric_and_affine_pairing(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    M = sv.assemble(cube8, co)
    assert abs(M - M.T).max() < 1e-14

    # affine u pairs to zero against interior hats: sum_T V grad(hat) = 0
    aff = interpolate(cube8, lambda x: 0.3 * x[:, 0] - 2.0 * x[:, 1] + x[:, 2] + 0.5)
    r = (M @ aff.values)[cube8.interior_nodes]
    assert np.abs(r).max() < 1e-12 * abs(M).max()

    # positive definite on zero-trace vectors
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = rng.standard_normal(cube8.n_nodes)
        z[cube8.boundary_nodes] = 0.0
        u = FeFunction(cube8, z, zero_trace=True)
        energy = float(z @ (M @ z))
        assert energy >= co.lam * norm(u, "grad_L2") ** 2 * (1 - 1e-10)


def test_adjoint_is_exact_transpose(cube8):
    co = _random_coeffs(cube8, seed=1)
    M = sv.assemble(cube8, co)
    Mt = sv.assemble(cube8, co, adjoint=True)
    scale = abs(M).max()
    assert abs(M.T - Mt).max() <= 1e-12 * scale

    # quadratic identity L(u, phi) = L^t(phi, u) on random zero-trace pairs
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = rng.standard_normal(cube8.n_nodes)
        phi = rng.standard_normal(cube8.n_nodes)
        u[cube8.boundary_nodes] = 0.0
        phi[cube8.boundary_nodes] = 0.0
        lhs = float(phi @ (M @ u))
        rhs = float(u @ (Mt @ phi))
        assert lhs == pytest.approx(rhs, abs=1e-12 * scale * np.abs(u).max() * np.abs(phi).max())


def test_symmetric_a_equal_drifts_transpose(cube8):
    drift = lambda x: np.stack([x[:, 1], np.sin(x[:, 0]), x[:, 2]], axis=1)
    co = sv.CoefficientSet.from_fields(cube8, b=drift, c=drift)
    M = sv.assemble(cube8, co)
    Mt = sv.assemble(cube8, co, adjoint=True)
    assert abs(M.T - Mt).max() <= 1e-13 * abs(M).max()


def test_coercivity_nonpositive_d(cube8):
    co = sv.CoefficientSet.from_fields(cube8, d=-0.5, negativity_mode="bd")
    M = sv.assemble(cube8, co)
    rng = np.random.default_rng(4)
    for _ in range(5):
        z = rng.standard_normal(cube8.n_nodes)
        z[cube8.boundary_nodes] = 0.0
        u = FeFunction(cube8, z, zero_trace=True)
        assert float(z @ (M @ z)) >= co.lam * norm(u, "grad_L2") ** 2 * (1 - 1e-10)


def test_nan_coefficient_names_element(cube8):
    co = sv.CoefficientSet.from_fields(cube8)
    A = co.A.copy()
    A[37, 1, 1] = np.nan
    bad = sv.CoefficientSet(A, co.b, co.c, co.d, co.lam, co.Lam, "none")
    with pytest.raises(ValueError, match="element 37"):
        sv.assemble(cube8, bad)


def test_ellipticity_probe_violation(cube8):
    co = sv.CoefficientSet.from_fields(cube8, A=np.diag([2.0, 1.0, 0.5]), lam=0.6, Lam=2.0)
    with pytest.raises(ValueError, match="ellipticity"):
        co.validate(cube8)
    ok = sv.CoefficientSet.from_fields(cube8, A=np.diag([2.0, 1.0, 0.5]), lam=0.5, Lam=2.0)
    ok.validate(cube8)
    with pytest.raises(ValueError, match="Lambda"):
        sv.CoefficientSet.from_fields(cube8, A=np.diag([2.0, 1.0, 0.5]), lam=0.5, Lam=1.5).validate(cube8)


def test_field_shape_and_mode_errors(cube8):
    with pytest.raises(ValueError, match="negativity_mode"):
        sv.CoefficientSet.from_fields(cube8, negativity_mode="both")
    with pytest.raises(ValueError, match="lam"):
        sv.CoefficientSet.from_fields(cube8, lam=-1.0, Lam=1.0)
    with pytest.raises(ValueError, match="shape|3-vector"):
        sv.CoefficientSet.from_fields(cube8, b=np.zeros((5, 3)))


# -- negativity checks ------------------------------------------------------


def test_negativity_validate_rejects_positive_d(cube8):
    bad = sv.CoefficientSet.from_fields(cube8, d=1.0, negativity_mode="bd")
    with pytest.raises(ValueError, match="negativity"):
        bad.validate(cube8)
    bad_cd = sv.CoefficientSet.from_fields(cube8, d=1.0, negativity_mode="cd")
    with pytest.raises(ValueError, match="negativity"):
        bad_cd.validate(cube8)


def test_negativity_seeded_constructions(cube8):
    for seed in (0, 1, 2):
        for mode in ("bd", "cd"):
            co = sv.random_negativity_coefficients(cube8, seed=seed, mode=mode)
            co.validate(cube8)
            vals, scale = sv.negativity_functional(cube8, co, mode)
            assert vals.max() <= 0.0


def test_negativity_functional_divergence_free_invariance(cube8):
    co = sv.random_negativity_coefficients(cube8, seed=5, mode="bd")
    base, scale = sv.negativity_functional(cube8, co, "bd")

    # constant fields integrate to zero against interior-hat gradients
    shifted = sv.CoefficientSet(co.A, co.b + np.array([3.0, -1.0, 2.0]), co.c, co.d,
                                co.lam, co.Lam, "bd")
    vals, _ = sv.negativity_functional(cube8, shifted, "bd")
    assert np.abs(vals - base).max() <= 1e-11 * (np.abs(base).max() + 1.0)

    # element-wise curl of a P1 vector potential: tangential continuity of
    # the potential makes the field discretely divergence-free
    rng = np.random.default_rng(6)
    W = rng.standard_normal((cube8.n_nodes, 3))
    g = cube8.basis_gradients
    Wv = W[cube8.elements]  # (M,4,3)
    jac = np.einsum("mjk,mjd->mkd", Wv, g)  # d W_k / d x_d
    curl = np.stack(
        [jac[:, 2, 1] - jac[:, 1, 2], jac[:, 0, 2] - jac[:, 2, 0], jac[:, 1, 0] - jac[:, 0, 1]],
        axis=1,
    )
    shifted2 = sv.CoefficientSet(co.A, co.b + curl, co.c, co.d, co.lam, co.Lam, "bd")
    vals2, _ = sv.negativity_functional(cube8, shifted2, "bd")
    scale2 = np.abs(base).max() + float(np.abs(curl).max())
    assert np.abs(vals2 - base).max() <= 1e-11 * scale2


# -- Dirichlet solves -------------------------------------------------------


def test_torsion_center_value(ball16):
    co = sv.CoefficientSet.from_fields(ball16, negativity_mode="bd")
    rep = sv.solve_dirichlet(ball16, co, f=1.0)
    u0 = rep.solution.evaluate(np.array([[0.0, 0.0, 0.0]]))[0]
    assert u0 == pytest.approx(TORSION_CENTER, rel=0.03)
    assert rep.residual <= 1e-10
    assert rep.shift_sigma == 0.0
    assert rep.ratio == pytest.approx(RATIO_CONTINUUM, rel=0.15)

    # Galerkin orthogonality: the residual annihilates every interior hat
    M = sv.assemble(ball16, co)
    F = sv.load_vector(ball16, f=1.0)
    r = (M @ rep.solution.values - F)[ball16.interior_nodes]
    assert np.abs(r).max() <= 1e-8 * np.abs(F).max()


def test_zero_data_zero_solution(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="cd")
    rep = sv.solve_dirichlet(cube8, co)
    assert np.all(rep.solution.values == 0.0)
    assert rep.ratio == 0.0


def test_solve_requires_negativity_mode(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="none")
    with pytest.raises(ValueError, match="negativity_mode"):
        sv.solve_dirichlet(cube8, co, f=1.0)


def test_scale_family_ratio_invariance():
    ratios = []
    for r in (1.0, 2.0, 4.0):
        mesh = ball_mesh(r, r / 8.0)
        co = sv.CoefficientSet.from_fields(mesh, negativity_mode="bd")
        rep = sv.solve_dirichlet(mesh, co, f=1.0)
        ratios.append(rep.ratio)
    drift = max(ratios) / min(ratios)
    assert drift <= 1.5
    assert ratios[0] == pytest.approx(RATIO_CONTINUUM, rel=0.2)


def test_forced_shift_matches_direct_and_uniqueness(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    direct = sv.solve_dirichlet(cube8, co, f=1.0)
    shifted = sv.solve_dirichlet(cube8, co, f=1.0, force_sigma=5.0)
    assert shifted.shift_sigma == 5.0
    assert shifted.iterations > 1
    scale = np.abs(direct.solution.values).max()
    assert np.abs(shifted.solution.values - direct.solution.values).max() <= 1e-9 * max(scale, 1.0)

    rng = np.random.default_rng(3)
    other = sv.solve_dirichlet(
        cube8, co, f=1.0, force_sigma=5.0,
        initial_guess=rng.standard_normal(len(cube8.interior_nodes)),
    )
    assert np.abs(other.solution.values - shifted.solution.values).max() <= 1e-9 * max(scale, 1.0)


def test_divergence_is_reported():
    co = sv.CoefficientSet.from_fields(_TINY, negativity_mode="bd")
    with pytest.raises(sv.SolveDivergenceError) as exc:
        sv.solve_dirichlet(_TINY, co, f=1.0, force_sigma=1.0, max_shifts=0)
    assert exc.value.history == []

    # oscillating fixed point on a contrived shifted system never converges
    from scipy import sparse

    M = sparse.identity(4, format="csr") * -2.0
    mass = sparse.identity(4, format="csr")
    factor = sv._Factorized((M + 1.0 * mass).tocsr(), direct=True)
    x, its, hist, ok = sv._fredholm_iteration(factor, mass, np.ones(4), 1.0, np.zeros(4), max_iter=50)
    assert not ok
    assert len(hist) == 50 or its < 50


def test_iterative_tier_matches_direct(monkeypatch):
    mesh = ball_mesh(1.0, 1.0 / 4.0)
    co = sv.CoefficientSet.from_fields(mesh, negativity_mode="bd")
    direct = sv.solve_dirichlet(mesh, co, f=1.0)
    monkeypatch.setattr(sv, "DIRECT_LIMIT", 10)
    iterative = sv.solve_dirichlet(mesh, co, f=1.0)
    scale = np.abs(direct.solution.values).max()
    assert np.abs(iterative.solution.values - direct.solution.values).max() <= 1e-8 * scale


def test_boundary_data_mesh_mismatch(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    other = interpolate(_TINY, lambda x: x[:, 0])
    with pytest.raises(ValueError, match="mesh"):
        sv.solve_dirichlet(cube8, co, boundary_data=other)


def test_load_vector_and_data_norm(cube8):
    F = sv.load_vector(cube8, f=1.0)
    assert F.sum() == pytest.approx(1.0, abs=1e-13)  # sum of hats is 1
    assert sv.data_norm(cube8, f=1.0) == pytest.approx(1.0, abs=1e-12)

    g = np.broadcast_to(np.array([1.0, 0.0, 0.0]), (cube8.n_elements, 3))
    Fg = sv.load_vector(cube8, g=g)
    assert np.abs(Fg[cube8.interior_nodes]).max() < 1e-13
    assert sv.data_norm(cube8, g=g) == pytest.approx(1.0, abs=1e-12)

    f = sample(cube8, lambda x: np.ones(len(x)))
    assert np.abs(sv.load_vector(cube8, f=f) - F).max() < 1e-15
    with pytest.raises(ValueError, match="different mesh"):
        sv.load_vector(cube8, f=sample(_TINY, lambda x: np.ones(len(x))))


def test_solve_report_json(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    rep = sv.solve_dirichlet(cube8, co, f=1.0)
    import json

    obj = json.loads(rep.to_json())
    assert set(obj) == {"residual", "y12_norm", "data_norm", "ratio", "shift_sigma",
                        "iterations", "solution"}
    assert obj["ratio"] == pytest.approx(rep.ratio)


# -- maximum and comparison principles --------------------------------------


def test_max_principle_harmonic_cube(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    bdata = interpolate(cube8, lambda x: x[:, 0])
    rep = sv.solve_dirichlet(cube8, co, boundary_data=bdata)
    assert sv.check_max_principle(cube8, co, rep.solution) == 0.0


def test_max_principle_constant(cube8):
    co = sv.CoefficientSet.from_fields(cube8, d=-1.0, negativity_mode="bd")
    # with d < 0 a constant is a subsolution of Lu = 0 only when it is <= 0
    u = interpolate(cube8, lambda x: np.full(len(x), -2.0))
    assert sv.check_max_principle(cube8, co, u) == 0.0


def test_max_principle_seeded_drift(cube8):
    bdata = interpolate(cube8, lambda x: x[:, 0] - 0.5 * x[:, 1] + 0.25)
    for seed in (0, 1, 2):
        for mode in ("bd", "cd"):
            co = sv.random_negativity_coefficients(cube8, seed=seed, mode=mode)
            rep = sv.solve_dirichlet(cube8, co, boundary_data=bdata)
            viol = sv.check_max_principle(cube8, co, rep.solution, mode="bd")
            assert viol <= 1e-8


def test_max_principle_cd_zero_trace(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="cd")
    rep = sv.solve_dirichlet(cube8, co, f=-1.0)
    assert sv.check_max_principle(cube8, co, rep.solution) == 0.0

    up = sv.solve_dirichlet(cube8, co, f=1.0)  # positive torsion solution
    with pytest.raises(ValueError, match="subsolution"):
        sv.check_max_principle(cube8, co, up.solution)


def test_max_principle_constructed_violation(cube8):
    co = sv.CoefficientSet.from_fields(cube8, d=4.0 * np.pi**2, negativity_mode="none")
    with pytest.raises(ValueError, match="negativity"):
        sv.CoefficientSet(co.A, co.b, co.c, co.d, co.lam, co.Lam, "bd").validate(cube8)
    bump = interpolate(
        cube8,
        lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.sin(np.pi * x[:, 2]),
        zero_trace=True,
    )
    viol = sv.check_max_principle(cube8, co, bump)
    assert viol > 0.5


def test_max_principle_subsolution_precondition(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    rng = np.random.default_rng(9)
    noise = FeFunction(cube8, rng.standard_normal(cube8.n_nodes))
    with pytest.raises(ValueError, match="subsolution"):
        sv.check_max_principle(cube8, co, noise)


def test_comparison_trivial_and_monotone(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    rep = sv.solve_dirichlet(cube8, co, f=1.0)
    z = zero_function(cube8)
    assert sv.comparison(cube8, co, rep.solution, rep.solution, f=1.0)
    assert sv.comparison(cube8, co, rep.solution, z, f=1.0)
    with pytest.raises(ValueError, match="supersolution"):
        sv.comparison(cube8, co, z, rep.solution, f=1.0)


def test_comparison_seeded_drift(cube8):
    for seed in (3, 4, 5):
        co = sv.random_negativity_coefficients(cube8, seed=seed, mode="bd")
        hi = sv.solve_dirichlet(cube8, co, f=1.0)
        lo = sv.solve_dirichlet(cube8, co, f=0.5)
        assert sv.comparison(cube8, co, hi.solution, lo.solution, f=1.0)


def test_comparison_boundary_gap_rejected(cube8):
    co = sv.CoefficientSet.from_fields(cube8, negativity_mode="bd")
    u = zero_function(cube8)
    v = interpolate(cube8, lambda x: np.full(len(x), 1.0))
    with pytest.raises(ValueError, match="zero-trace"):
        sv.comparison(cube8, co, u, v)


# -- helpers ----------------------------------------------------------------


def test_volume_percentile_frozen():
    vals = np.array([1.0, 2.0, 3.0])
    assert sv._volume_percentile(vals, np.array([1.0, 1.0, 98.0]), 0.99) == 3.0
    assert sv._volume_percentile(vals, np.array([98.0, 1.0, 1.0]), 0.5) == 1.0
    assert sv._volume_percentile(vals, np.zeros(3), 0.99) == 0.0


def test_sigma_zero_constant_drift(cube8):
    co = sv.CoefficientSet.from_fields(cube8, b=(3.0, 0.0, 0.0), lam=1.0, Lam=1.0)
    assert sv.sigma_zero(cube8, co) == pytest.approx(18.0, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_adjoint_transpose_property(seed):
    co = _random_coeffs(_TINY, seed)
    M = sv.assemble(_TINY, co)
    Mt = sv.assemble(_TINY, co, adjoint=True)
    assert abs(M.T - Mt).max() <= 1e-12 * max(abs(M).max(), 1.0)


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    shift=st.tuples(
        st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False),
        st.floats(-5, 5, allow_nan=False)
    ),
)
def test_negativity_invariant_under_constant_drift_property(seed, shift):
    co = sv.random_negativity_coefficients(_TINY, seed=seed, mode="bd")
    base, _ = sv.negativity_functional(_TINY, co, "bd")
    moved = sv.CoefficientSet(co.A, co.b + np.asarray(shift), co.c, co.d,
                              co.lam, co.Lam, "bd")
    vals, _ = sv.negativity_functional(_TINY, moved, "bd")
    assert np.abs(vals - base).max() <= 1e-10 * (np.abs(base).max() + np.abs(np.asarray(shift)).max() + 1.0)
