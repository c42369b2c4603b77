"""Construction-time behavior of the atomic systems.

Expected numbers come from closed forms (eigenvalues of small integer
matrices, the composite shear multiplier |lambda_s| (1 + s/m)^m, logistic
flow formulas) or from independent scipy integrations done inside the
test; nothing is copied from the implementation under test.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from attractorlab import _kernels
from attractorlab.geometry import (
    Point,
    Torus,
    numeric_jacobian,
    quotient_canonical,
    torus_delta,
    wrap_torus,
)
from attractorlab.recipes import (
    build_recipe,
    parse_recipe,
    recipe_document,
    recipe_hash,
)
from attractorlab.systems import (
    CollarProfile,
    ConstructionError,
    FixedPointRecord,
    SurgeryBump,
    SurgeryParams,
    SystemSpec,
    classify_multipliers,
    da_surgery,
    make_diffeotopy,
    north_south_sphere,
    plykin_system,
    radial_logistic_flow,
    radial_logistic_map,
    standard_collar,
    standard_surgery_bump,
    toral_automorphism,
    torus_gradient_ms,
    torus_translation,
    validate_system,
)

# roots of t^2 - 3t + 1, the cat-map multiplier moduli
LAM_U = (3.0 + math.sqrt(5.0)) / 2.0
LAM_S = (3.0 - math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="module")
def cat():
    return toral_automorphism([[2, 1], [1, 1]])


@pytest.fixture(scope="module")
def da(cat):
    return da_surgery(cat)


@pytest.fixture(scope="module")
def ply():
    return plykin_system()


# ---------------------------------------------------------------------------
# profiles and classification


def test_standard_bump_endpoints_and_evenness():
    assert standard_surgery_bump(0.0) == 1.0
    assert standard_surgery_bump(1.0) == 0.0
    assert standard_surgery_bump(1.7) == 0.0
    assert standard_surgery_bump(-0.3) == standard_surgery_bump(0.3)


def test_standard_bump_derivative_matches_differences():
    r = np.linspace(0.02, 0.97, 41)
    closed = standard_surgery_bump.derivative(r)
    h = 1e-6
    diffed = (standard_surgery_bump(r + h) - standard_surgery_bump(r - h)) / (2 * h)
    assert np.max(np.abs(closed - diffed)) < 1e-6


def test_collar_profile_exact_endpoints_and_monotonicity():
    theta = CollarProfile()
    assert theta(0.0) == 0.0
    assert theta(1.0) == 1.0
    assert theta(2.5) == 1.0
    assert theta(0.5) == 0.5
    assert theta(-0.3) == theta(0.3)
    grid = theta(np.linspace(0.0, 1.0, 257))
    assert np.all(np.diff(grid) >= 0.0)
    assert standard_collar(0.0) == 0.0


def test_classify_multipliers():
    assert classify_multipliers((2.0, 3.0)) == "source"
    assert classify_multipliers((0.2,)) == "sink"
    assert classify_multipliers((2.0, 0.5)) == "saddle"
    with pytest.raises(ConstructionError):
        classify_multipliers((1.0 + 1e-9, 2.0))


# ---------------------------------------------------------------------------
# torus automorphisms


def test_cat_eigen_moduli(cat):
    moduli = cat.fixed_points[0].multipliers
    assert abs(moduli[0] - LAM_U) < 1e-12
    assert abs(moduli[1] - LAM_S) < 1e-12
    assert cat.fixed_points[0].kind == "saddle"


def test_cat_half_point_image(cat):
    img = cat.step(np.array([0.5, 0.5]))
    assert np.allclose(img, [0.5, 0.0], atol=0.0)


def test_cat_stable_unit_sign_convention(cat):
    es = cat.extras["stable_unit"]
    # eigenvector of [[2,1],[1,1]] for the contracting root, leading
    # component positive
    assert es[0] > 0
    expected = np.array([1.0, LAM_S - 2.0])
    expected = expected / np.linalg.norm(expected)
    assert np.allclose(es, expected, atol=1e-12)


def test_rotation_rejected_with_eigenvalue_report():
    with pytest.raises(ConstructionError) as err:
        toral_automorphism([[0, -1], [1, 0]])
    assert "modulus" in str(err.value)


def test_non_unimodular_rejected():
    with pytest.raises(ConstructionError) as err:
        toral_automorphism([[2, 0], [0, 1]])
    assert "det" in str(err.value)


def test_non_integer_rejected():
    with pytest.raises(ConstructionError):
        toral_automorphism([[1.5, 1.0], [1.0, 1.0]])


def test_cat_fast_orbit_matches_scalar_steps(cat):
    x0 = np.array([0.21, 0.43])
    orb = cat.orbit(x0, 20)
    x = x0.copy()
    for k in range(20):
        x = cat.step(x)
        assert np.array_equal(orb[k], x)


# ---------------------------------------------------------------------------
# stable-direction surgery


def test_da_source_and_saddle_records(da):
    kinds = [r.kind for r in da.fixed_points]
    assert kinds.count("source") == 1
    assert kinds.count("saddle") == 2
    assert len(da.fixed_points) == 3
    src = da.fixed_points[0]
    # composite fiber multiplier: lambda_s (1 + s/m)^m, s=1.2, m=5
    expect = LAM_S * (1.0 + 1.2 / 5.0) ** 5
    assert abs(src.multipliers[1] - expect) < 1e-12
    assert abs(src.multipliers[0] - LAM_U) < 1e-12
    assert all(m > 1.0 for m in src.multipliers)


def test_da_center_tangent_matches_record(da):
    sur = da.extras["surgery"]
    J = da.tangent(sur["center"])
    moduli = sorted(np.abs(np.linalg.eigvals(J)), reverse=True)
    assert abs(moduli[0] - LAM_U) < 1e-9
    assert abs(moduli[1] - LAM_S * 1.24**5) < 1e-9


def test_da_saddle_is_fixed_on_stable_fiber(da):
    sur = da.extras["surgery"]
    t_star = sur["saddle_offset"]
    assert t_star is not None and 0.0 < t_star < sur["radius"]
    # replay the 1D fiber map and confirm t_star is its fixed point
    u = LAM_S * t_star
    for _ in range(sur["steps"]):
        r = abs(u) / sur["radius"]
        if r < 1.0:
            u *= 1.0 + sur["step_strength"] * standard_surgery_bump(r)
    assert abs(u - t_star) < 1e-12
    saddle = [r for r in da.fixed_points if r.kind == "saddle"][0]
    assert 0.0 < saddle.multipliers[1] < 1.0


def test_da_compact_support_is_bitwise(da, cat):
    rng = np.random.default_rng(2)
    X = rng.random((4000, 2))
    sur = da.extras["surgery"]
    images = cat.step_many(X)
    outside = np.linalg.norm(torus_delta(images, sur["center"]), axis=1) > sur["radius"]
    assert outside.sum() > 3000
    da_img = da.step_many(X[outside])
    assert np.array_equal(da_img, images[outside])


def test_da_inverse_round_trip_at_scale(da):
    rng = np.random.default_rng(3)
    X = rng.random((10_000, 2))
    back = da.back_many(da.step_many(X))
    err = np.linalg.norm(torus_delta(back, X), axis=1)
    assert np.max(err) < 1e-9


def test_da_lyapunov_exponents(da):
    lam = da.extras["fast_lyap"](np.array([0.37, 0.58]), 200_000, 200, 4)
    assert abs(lam[0] - math.log(LAM_U)) < 2e-3
    assert lam[1] < -0.5


def test_da_trapping_region_margin(da):
    region = da.extras["trapping_region"]
    assert region.radius == pytest.approx(0.06)
    assert da.extras["trapping_margin_estimate"] > 1e-3
    rng = np.random.default_rng(8)
    sample = region.sample_states(1000, rng)
    depths = region.depth_many(da.step_many(sample))
    assert float(np.min(depths)) > 0.0


def test_da_weak_strength_reports_threshold(cat):
    with pytest.raises(ConstructionError) as err:
        da_surgery(cat, SurgeryParams(strength=0.2))
    msg = str(err.value)
    assert "threshold" in msg
    smin = float(msg.rsplit("=", 1)[1])
    # threshold solves lambda_s (1 + s/m(s))^(m(s)) = 1 with m = ceil(s/0.25)
    m = math.ceil(smin / 0.25)
    assert abs(LAM_S * (1.0 + smin / m) ** m - 1.0) < 1e-5


def test_da_rejects_bad_parameters(cat):
    with pytest.raises(ConstructionError):
        da_surgery(cat, SurgeryParams(center=(0.3, 0.3)))
    with pytest.raises(ConstructionError):
        da_surgery(cat, SurgeryParams(radius=0.6))
    with pytest.raises(ConstructionError):
        da_surgery(cat, SurgeryParams(steps=2))


def test_da_custom_bump_builds_and_round_trips(cat):
    cos_bump = SurgeryBump(
        lambda r: np.cos(0.5 * np.pi * r) ** 2,
        lambda r: -0.5 * np.pi * np.sin(np.pi * r),
        name="cosine",
    )
    sys2 = da_surgery(cat, SurgeryParams(bump=cos_bump))
    # center multiplier only depends on bump(0) = 1
    src = sys2.fixed_points[0]
    m = sys2.extras["surgery"]["steps"]
    assert abs(src.multipliers[1] - LAM_S * (1.0 + 1.2 / m) ** m) < 1e-12
    rng = np.random.default_rng(4)
    X = rng.random((500, 2))
    back = sys2.back_many(sys2.step_many(X))
    assert np.max(np.linalg.norm(torus_delta(back, X), axis=1)) < 1e-9


def test_da_recipe_rebuild_matches(da):
    rebuilt = build_recipe(parse_recipe(recipe_document(da.recipe)))
    assert recipe_hash(rebuilt.recipe) == recipe_hash(da.recipe)
    x = np.array([0.123, 0.456])
    assert np.array_equal(rebuilt.step(x), da.step(x))


def test_da_custom_bump_recipe_refuses_rebuild(cat):
    tri_bump = SurgeryBump(
        lambda r: np.cos(0.5 * np.pi * r) ** 2,
        lambda r: -0.5 * np.pi * np.sin(np.pi * r),
    )
    sys2 = da_surgery(cat, SurgeryParams(bump=tri_bump))
    with pytest.raises(ConstructionError):
        build_recipe(sys2.recipe)


# ---------------------------------------------------------------------------
# quotient sphere model


def test_plykin_upstairs_equivariance(ply):
    up = ply.extras["upstairs"]
    rng = np.random.default_rng(6)
    X = rng.random((10_000, 2))
    fwd = up.step_many(X)
    fwd_neg = up.step_many(wrap_torus(-X))
    err = np.linalg.norm(torus_delta(fwd_neg, wrap_torus(-fwd)), axis=1)
    assert np.max(err) < 1e-12


def test_plykin_quotient_well_defined(ply):
    rng = np.random.default_rng(7)
    X = rng.random((200, 2))
    for x in X:
        a = ply.step(x)
        b = ply.step(wrap_torus(-x))
        assert ply.manifold.distance(a, b) < 1e-12


def test_plykin_fixed_classes(ply):
    kinds = sorted(r.kind for r in ply.fixed_points)
    assert kinds == ["saddle", "saddle", "saddle", "source"]
    locs = np.array([r.location.state for r in ply.fixed_points])
    for target in ([0.4, 0.8], [0.2, 0.4]):
        d = np.linalg.norm(locs - np.array(target), axis=1)
        assert d.min() < 1e-9


def test_plykin_positive_top_exponent(ply):
    lam = ply.extras["fast_lyap"](ply.extras["attractor_seed"], 200_000, 200, 4)
    assert lam[0] > 0.5


def test_plykin_invariant_disk(ply):
    disk = ply.extras["invariant_disk"]
    assert disk.boundary_margin > 0.0
    assert disk.interior_margin > 0.0
    # the expelled source sits strictly outside the chart disk
    assert disk.region.depth(np.zeros(2)) < 0.0


def test_plykin_trapping_region(ply):
    region = ply.extras["trapping_region"]
    rng = np.random.default_rng(9)
    sample = region.sample_states(1000, rng)
    depths = region.depth_many(ply.step_many(sample))
    assert float(np.min(depths)) > 0.0


def test_plykin_round_trip(ply):
    rng = np.random.default_rng(10)
    X = _kernels.quotient_canonical_rows(rng.random((2000, 2)))
    back = ply.back_many(ply.step_many(X))
    dists = [ply.manifold.distance(a, b) for a, b in zip(X, back)]
    assert max(dists) < 1e-9


# ---------------------------------------------------------------------------
# north-south sphere maps


def test_ns_poles_exact():
    ns = north_south_sphere(2)
    north = ns.extras["global_chart"].missing_state
    south = -north
    assert np.array_equal(ns.step(north), north)
    assert np.array_equal(ns.step(south), south)
    assert np.array_equal(ns.back(north), north)


def test_ns_records():
    ns = north_south_sphere(3, 0.37)
    sink = [r for r in ns.fixed_points if r.kind == "sink"][0]
    source = [r for r in ns.fixed_points if r.kind == "source"][0]
    assert sink.multipliers == (0.37,) * 3
    assert source.multipliers == (1.0 / 0.37,) * 3


def test_ns_height_strictly_decreases():
    ns = north_south_sphere(2)
    x = np.array([1.0, 0.0, 0.0])
    heights = []
    for _ in range(5):
        x = ns.step(x)
        heights.append(x[-1])
    assert all(b < a for a, b in zip([0.0] + heights, heights))


def test_ns_orbits_converge_to_sink():
    ns = north_south_sphere(2, 0.5)
    south = ns.extras["sink_state"]
    rng = np.random.default_rng(12)
    X = ns.manifold.random_states(rng, 100)
    for _ in range(200):
        X = ns.step_many(X)
    dists = [ns.manifold.distance(x, south) for x in X]
    assert max(dists) < 1e-6


def test_ns_numeric_tangent_at_sink_is_scaling():
    ns = north_south_sphere(2, 0.6)
    south = ns.extras["sink_state"]
    J = numeric_jacobian(ns.step_state, ns.manifold, south)
    assert np.allclose(J, 0.6 * np.eye(2), atol=1e-6)


def test_ns_parameter_validation():
    with pytest.raises(ConstructionError):
        north_south_sphere(0)
    with pytest.raises(ConstructionError):
        north_south_sphere(2, 1.0)


# ---------------------------------------------------------------------------
# torus gradient systems


def test_gradient_census_k2():
    g2 = torus_gradient_ms(2)
    kinds = [r.kind for r in g2.fixed_points]
    assert len(kinds) == 4
    assert kinds.count("sink") == 1
    assert kinds.count("saddle") == 2
    assert kinds.count("source") == 1


def test_gradient_extreme_points():
    g2 = torus_gradient_ms(2)
    by_loc = {tuple(r.location.state): r for r in g2.fixed_points}
    sink = by_loc[(0.5, 0.5)]
    source = by_loc[(0.0, 0.0)]
    assert all(m < 1.0 for m in sink.multipliers)
    assert all(m > 1.0 for m in source.multipliers)


def test_gradient_corners_bitwise_fixed():
    g3 = torus_gradient_ms(3)
    for rec in g3.fixed_points:
        x = rec.location.state
        assert np.array_equal(g3.step(x), x)


def test_gradient_short_time_map_against_ode():
    # the same two-branch formula drives the time-1 map; at time 0.1 the
    # gain is mild and an independent integration can resolve it
    from attractorlab.systems import _GRAD_RATE, _grad_branch

    gain = math.exp(_GRAD_RATE * 0.1)
    v0 = np.linspace(-0.49, 0.49, 197)
    sol = solve_ivp(
        lambda t, y: 2.0 * np.pi * np.sin(2.0 * np.pi * y),
        (0.0, 0.1),
        v0,
        rtol=1e-12,
        atol=1e-14,
        dense_output=False,
    )
    expect = sol.y[:, -1]
    got = _grad_branch(v0, gain)
    # compare as circle points (the ODE solution never wraps here)
    assert np.max(np.abs(got - expect)) < 1e-9


def test_gradient_branch_seam_is_continuous():
    from attractorlab.systems import _GRAD_RATE, _grad_branch, _grad_branch_deriv

    gain = math.exp(_GRAD_RATE)
    lo, hi = 0.25 - 1e-12, 0.25 + 1e-12
    assert abs(_grad_branch(lo, gain) - _grad_branch(hi, gain)) < 1e-11
    assert abs(_grad_branch_deriv(lo, gain) - _grad_branch_deriv(hi, gain)) < 1e-11


def test_gradient_derivative_formula_matches_differences():
    from attractorlab.systems import _GRAD_RATE, _grad_branch, _grad_branch_deriv

    gain = math.exp(_GRAD_RATE * 0.1)
    v = np.linspace(-0.45, 0.45, 101)
    h = 1e-7
    diffed = (_grad_branch(v + h, gain) - _grad_branch(v - h, gain)) / (2 * h)
    assert np.max(np.abs(_grad_branch_deriv(v, gain) - diffed) / np.abs(diffed)) < 1e-5


def test_gradient_has_no_backward_map_but_analytic_reverse():
    g2 = torus_gradient_ms(2)
    assert g2.back_state is None
    reverse = g2.extras["analytic_backward"]
    rng = np.random.default_rng(13)
    X = rng.random((100, 2))
    for x in X:
        y = g2.step(reverse(x))
        assert np.linalg.norm(torus_delta(y, x)) < 1e-12


def test_gradient_dimension_guard():
    with pytest.raises(ConstructionError):
        torus_gradient_ms(13)


# ---------------------------------------------------------------------------
# radial logistic map


def test_radial_logistic_exact_fixed_values():
    assert radial_logistic_flow(0.0, 1.0) == 0.0
    assert radial_logistic_flow(1.0, 1.0) == 1.0
    assert radial_logistic_flow(2.0, 1.0) == 2.0


def test_radial_logistic_midpoint_against_ode():
    got = radial_logistic_flow(0.5, 1.0)
    expect = 0.5 * math.e / (1.0 + 0.5 * (math.e - 1.0))
    assert abs(got - expect) < 1e-15
    sol = solve_ivp(
        lambda t, y: y * (1.0 - y), (0.0, 1.0), [0.5], rtol=1e-12, atol=1e-14
    )
    assert abs(got - sol.y[0, -1]) < 1e-9


def test_radial_logistic_grid_against_one_vector_ode():
    rho = np.linspace(0.0, 2.0, 1001)
    mirrored = np.where(rho <= 1.0, rho, 2.0 - rho)
    sol = solve_ivp(
        lambda t, y: y * (1.0 - y), (0.0, 1.0), mirrored, rtol=1e-12, atol=1e-14
    )
    expect = np.where(rho <= 1.0, sol.y[:, -1], 2.0 - sol.y[:, -1])
    got = radial_logistic_flow(rho, 1.0)
    assert np.max(np.abs(got - expect)) < 1e-9


def test_radial_logistic_mirror_symmetry_and_flow_property():
    rho = np.linspace(0.0, 1.0, 57)
    left = radial_logistic_flow(rho, 1.0)
    right = radial_logistic_flow(2.0 - rho, 1.0)
    assert np.max(np.abs((2.0 - left) - right)) < 1e-14
    two_leg = radial_logistic_flow(radial_logistic_flow(rho, 0.3), 0.7)
    assert np.max(np.abs(two_leg - left)) < 1e-13


def test_radial_logistic_map_unit_multipliers():
    rl = radial_logistic_map()
    g0 = rl.tangent(np.array([0.0]))[0, 0]
    g1 = rl.tangent(np.array([1.0]))[0, 0]
    assert abs(g0 - math.e) < 1e-14
    assert abs(g1 - 1.0 / math.e) < 1e-14
    kinds = [r.kind for r in rl.fixed_points]
    assert kinds == ["source", "sink", "source"]


def test_radial_logistic_band_traps():
    rl = radial_logistic_map()
    region = rl.extras["trapping_region"]
    for rho in (0.25, 0.6, 1.4, 1.75):
        assert region.depth(rl.step(np.array([rho]))) > 0.0


# ---------------------------------------------------------------------------
# translations


def test_translation_has_no_fixed_points_and_unit_tangent():
    tr = torus_translation((0.37, 0.61))
    assert tr.fixed_points == ()
    x = np.array([0.2, 0.9])
    assert np.allclose(tr.step(x), wrap_torus(x + np.array([0.37, 0.61])), atol=0.0)
    assert np.array_equal(tr.tangent(x), np.eye(2))
    rebuilt = build_recipe(parse_recipe(recipe_document(tr.recipe)))
    assert recipe_hash(rebuilt.recipe) == recipe_hash(tr.recipe)


# ---------------------------------------------------------------------------
# system validation


def test_validate_system_catches_bad_inverse():
    man = Torus(1)
    spec = SystemSpec(
        name="broken",
        manifold=man,
        step_state=lambda x: wrap_torus(x + 0.1),
        back_state=lambda x: wrap_torus(x - 0.2),
        fixed_points=(),
        recipe=None,
    )
    with pytest.raises(ConstructionError) as err:
        validate_system(spec)
    assert "backward(forward(x))" in str(err.value)


def test_validate_system_catches_kind_mismatch():
    man = Torus(1)
    rec = FixedPointRecord(Point(man, [0.0]), "sink", (2.0,))
    spec = SystemSpec(
        name="mislabeled",
        manifold=man,
        step_state=lambda x: wrap_torus(2.0 * x),
        back_state=None,
        fixed_points=(rec,),
        recipe=None,
    )
    with pytest.raises(ConstructionError) as err:
        validate_system(spec)
    assert "classifies" in str(err.value)


def test_validate_system_catches_moving_record():
    man = Torus(1)
    rec = FixedPointRecord(Point(man, [0.25]), "source", (2.0,))
    spec = SystemSpec(
        name="drifting",
        manifold=man,
        step_state=lambda x: wrap_torus(2.0 * x),
        back_state=None,
        fixed_points=(rec,),
        recipe=None,
    )
    with pytest.raises(ConstructionError) as err:
        validate_system(spec)
    assert "moves" in str(err.value)


# ---------------------------------------------------------------------------
# diffeotopies


def test_ns_diffeotopy_is_exact_scaling():
    ns = north_south_sphere(2, 0.5)
    dt = make_diffeotopy(ns)
    assert dt.approximate is False
    chart = ns.extras["global_chart"]
    x = ns.manifold.canon(np.array([0.3, -0.5, 0.2]))
    got = dt.forward_state(0.37, x)
    expect = chart.from_plane(0.5 ** (1.0 - 0.37) * chart.to_plane(x))
    assert np.allclose(got, expect, atol=1e-15)
    y = dt.forward_state(0.5, x)
    assert ns.manifold.distance(dt.backward_state(0.5, y), x) < 1e-12


def test_plykin_diffeotopy_endpoints_and_classes(ply):
    dt = make_diffeotopy(ply)
    assert dt.approximate is True
    rng = np.random.default_rng(14)
    X = _kernels.quotient_canonical_rows(rng.random((50, 2)))
    for x in X:
        assert ply.manifold.distance(dt.forward_state(0.0, x), ply.step(x)) < 1e-12
        assert ply.manifold.distance(dt.forward_state(1.0, x), x) < 1e-12
        # family of quotient maps: representative choice cannot matter
        a = dt.forward_state(0.4, x)
        b = dt.forward_state(0.4, wrap_torus(-x))
        assert ply.manifold.distance(a, b) < 1e-12


def test_unregistered_isotopy_rejected(cat):
    with pytest.raises(ConstructionError) as err:
        make_diffeotopy(cat)
    assert "isotopy strategy" in str(err.value)


# ---------------------------------------------------------------------------
# recipes


def test_recipe_round_trips_for_atomic_systems(ply):
    for spec in (
        toral_automorphism([[2, 1], [1, 1]]),
        ply,
        north_south_sphere(2, 0.5),
        torus_gradient_ms(2),
        radial_logistic_map(),
    ):
        rebuilt = build_recipe(parse_recipe(recipe_document(spec.recipe)))
        assert recipe_hash(rebuilt.recipe) == recipe_hash(spec.recipe)
