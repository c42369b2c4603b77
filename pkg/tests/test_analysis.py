"""Verification-toolkit behavior on systems with known answers.

Oracles: eigenvalues of integer matrices, the trace identity for
periodic counts of a linear automorphism, synthetic clouds with known
box dimension (square, circle, middle-thirds product), and closed-form
pole dynamics of the sphere models.
"""

import math

import numpy as np
import pytest

from attractorlab.analysis import (
    AnalysisError,
    AttractorSample,
    LyapunovReport,
    box_dimension,
    cone_check,
    expanding_attractor_check,
    lyapunov_spectrum,
    mixing_probe,
    orbit_sample,
    periodic_census,
    transversal_cantor_probe,
    transversal_scan,
    unstable_dim,
    verify_trapping,
)
from attractorlab.geometry import Torus, torus_delta
from attractorlab.systems import (
    SystemSpec,
    da_surgery,
    north_south_sphere,
    plykin_system,
    toral_automorphism,
    torus_translation,
)

LAM_U = (3.0 + math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="module")
def cat():
    return toral_automorphism([[2, 1], [1, 1]])


@pytest.fixture(scope="module")
def da(cat):
    return da_surgery(cat)


@pytest.fixture(scope="module")
def da_cloud(da):
    return orbit_sample(da, n=300_000, transient=2000, seed=31)


# ---------------------------------------------------------------------------
# orbit sampling


def test_sample_collapses_on_global_sink():
    ns = north_south_sphere(2, 0.5)
    cloud = orbit_sample(ns, n=200, transient=300, seed=3)
    sink = ns.extras["sink_state"]
    dists = [ns.manifold.distance(p, sink) for p in cloud.points]
    assert max(dists) < 1e-6


def test_sample_is_deterministic(da):
    a = orbit_sample(da, n=5000, transient=500, seed=42)
    b = orbit_sample(da, n=5000, transient=500, seed=42)
    assert np.array_equal(a.points, b.points)
    assert a.recipe_id == b.recipe_id != ""


def test_sample_avoids_expelled_source(da_cloud, da):
    center = da.extras["surgery"]["center"]
    dists = np.linalg.norm(torus_delta(da_cloud.points, center), axis=1)
    assert dists.min() > 0.06
    assert da_cloud.min_trap_depth is not None and da_cloud.min_trap_depth >= 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sample_reports_divergence_step():
    man = Torus(1)
    toy = SystemSpec(
        name="toy-blowup",
        manifold=man,
        step_state=lambda x: np.sqrt(x - 0.5),
        back_state=None,
        fixed_points=(),
        recipe=None,
    )
    with pytest.raises(AnalysisError) as err:
        orbit_sample(toy, n=5, transient=0, x0=np.array([0.7]), seed=0)
    assert "diverged at step" in str(err.value)


# ---------------------------------------------------------------------------
# trapping


def test_trapping_da_grid(da):
    report = verify_trapping(da, resolution=512, seed=7)
    assert report.proper and report.passed
    assert report.margin > 0.0
    assert report.samples > 250_000


def test_trapping_whole_space_is_flagged(cat):
    report = verify_trapping(cat)
    assert report.passed and not report.proper
    assert "not a proper" in report.region_note


def test_trapping_cap_margin_matches_linear_model():
    ns = north_south_sphere(2, 0.5)
    report = verify_trapping(ns, resolution=128, seed=9)
    # equator points map to height (c^2-1)/(c^2+1) = -0.6
    assert report.proper and report.passed
    assert abs(report.margin - 0.6) < 0.01


# ---------------------------------------------------------------------------
# Lyapunov spectra


def test_lyapunov_cat_matches_eigenvalues(cat):
    report = lyapunov_spectrum(cat, n=300_000, seeds=3, seed0=1)
    expect = math.log(LAM_U)
    assert abs(report.exponents[0] - expect) < 1e-3
    assert abs(report.exponents[1] + expect) < 1e-3
    assert report.spread < 2e-2
    assert report.converged


def test_lyapunov_sink_constant_contraction():
    ns = north_south_sphere(2, 0.5)
    report = lyapunov_spectrum(ns, n=2500, transient=400, seeds=3, renorm=5, seed0=2)
    assert np.all(np.abs(report.exponents - math.log(0.5)) < 1e-3)


def test_lyapunov_da_band(da):
    report = lyapunov_spectrum(da, n=200_000, seeds=5, seed0=3)
    assert 0.5 < report.exponents[0] < 1.1
    assert report.exponents[1] < -0.2
    assert report.spread < 2e-2


def test_unstable_dim_rules(cat):
    report = lyapunov_spectrum(cat, n=100_000, seeds=2, seed0=4)
    assert unstable_dim(report) == 1

    def fake(exps, is_flow):
        return LyapunovReport(
            exponents=np.array(exps),
            per_seed=np.array([exps]),
            spread=0.0,
            orbit_length=10,
            renorm_interval=1,
            seeds=1,
            is_flow=is_flow,
            converged=True,
        )

    assert unstable_dim(fake([0.9, 1e-8, -0.9], True)) == 1
    with pytest.raises(AnalysisError):
        unstable_dim(fake([0.9, 1e-4], False))
    with pytest.raises(AnalysisError):
        unstable_dim(fake([0.9, 1e-8, 2e-8, -0.9], True))


# ---------------------------------------------------------------------------
# box dimension


def _cantor_interval_cloud(n, rng):
    digits = rng.integers(0, 2, size=(n, 25))
    weights = 3.0 ** -np.arange(1, 26)
    x = (2.0 * digits) @ weights
    y = rng.random(n)
    return np.column_stack([x, y])


def test_box_dimension_square():
    rng = np.random.default_rng(10)
    report = box_dimension(rng.random((1_000_000, 2)))
    assert abs(report.dimension - 2.0) < 0.05
    assert report.reliable and report.r_squared >= 0.98
    assert len(report.scales) >= 5


def test_box_dimension_circle():
    rng = np.random.default_rng(11)
    t = rng.random(200_000) * 2.0 * np.pi
    report = box_dimension(np.column_stack([np.cos(t), np.sin(t)]))
    assert abs(report.dimension - 1.0) < 0.05


def test_box_dimension_cantor_product():
    rng = np.random.default_rng(12)
    cloud = _cantor_interval_cloud(1_000_000, rng)
    report = box_dimension(cloud)
    expect = 1.0 + math.log(2.0) / math.log(3.0)
    assert abs(report.dimension - expect) < 0.05


def test_box_dimension_rejects_degenerate_input():
    with pytest.raises(AnalysisError):
        box_dimension(np.zeros((5000, 2)))
    with pytest.raises(AnalysisError):
        box_dimension(np.zeros((10, 2)) + np.arange(10)[:, None])


# ---------------------------------------------------------------------------
# cone check


def test_cone_check_cat_exact_structure(cat):
    cloud = orbit_sample(cat, n=3000, transient=200, seed=13)
    report = cone_check(cat, cloud, aperture=0.3, lambda_min=2.6)
    assert report.violations == 0
    assert report.min_expansion >= LAM_U - 0.01
    assert report.excluded == 0
    assert report.passed


def test_cone_check_translation_fails_everywhere():
    tr = torus_translation((0.3819, 0.6180))
    cloud = orbit_sample(tr, n=2000, transient=50, seed=14)
    report = cone_check(tr, cloud, aperture=0.3, lambda_min=1.05)
    assert report.violations == report.sample_size > 0
    assert not report.passed


def test_cone_check_da_outside_ball(da, da_cloud):
    sur = da.extras["surgery"]
    mask = np.linalg.norm(torus_delta(da_cloud.points, sur["center"]), axis=1) > sur["radius"]
    outside = AttractorSample(
        system_name=da_cloud.system_name,
        recipe_id=da_cloud.recipe_id,
        points=da_cloud.points[mask],
        coords=da_cloud.coords[mask],
        transient=da_cloud.transient,
        seed=da_cloud.seed,
        x0=da_cloud.x0,
        min_trap_depth=da_cloud.min_trap_depth,
    )
    report = cone_check(da, outside, aperture=0.4, lambda_min=2.0)
    assert report.violations == 0
    assert report.min_expansion >= LAM_U - 0.01


# ---------------------------------------------------------------------------
# periodic census


def test_census_cat_trace_identity(cat):
    # |det(A^p - I)| = lam^p + lam^-p - 2
    for p, expect in ((1, 1), (2, 5), (3, 16)):
        report = periodic_census(cat, p, grid_resolution=16)
        assert report.count == expect
    rep2 = periodic_census(cat, 2, grid_resolution=16)
    lam2 = LAM_U**2
    found = [m for m in rep2.multipliers if m is not None]
    assert all(abs(m[0] - lam2) < 1e-6 for m in found)


def test_census_da_counts_surgery_points(da):
    report = periodic_census(da, 1, grid_resolution=20)
    assert report.count == 3
    sur = da.extras["surgery"]
    dists = np.linalg.norm(torus_delta(report.locations, sur["center"]), axis=1)
    assert dists.min() < 1e-9


def test_census_quotient_counts_classes():
    ply = plykin_system()
    report = periodic_census(ply, 1, grid_resolution=24)
    assert report.count == 4


def test_census_sphere_includes_chart_missing_state():
    ns = north_south_sphere(2, 0.5)
    report = periodic_census(ns, 1, grid_resolution=16)
    assert report.count == 2


def test_census_guards(cat):
    with pytest.raises(AnalysisError):
        periodic_census(cat, 5)
    flow_like = SystemSpec(
        name="flowish",
        manifold=Torus(1),
        step_state=lambda x: x,
        back_state=None,
        fixed_points=(),
        recipe=None,
        extras={"is_flow": True},
    )
    with pytest.raises(AnalysisError):
        periodic_census(flow_like, 1)


# ---------------------------------------------------------------------------
# transverse probe


def test_transversal_square_is_connected():
    rng = np.random.default_rng(15)
    report = transversal_cantor_probe(
        rng.random((40_000, 2)), center=np.array([0.5, 0.5]), radius=0.2
    )
    assert report.verdict == "connected"
    assert not report.disconnected


def test_transversal_cantor_scales_detected():
    rng = np.random.default_rng(16)
    cloud = _cantor_interval_cloud(60_000, rng)
    report = transversal_cantor_probe(
        cloud,
        center=np.array([0.5, 0.5]),
        frame=(np.array([0.0, 1.0]), np.array([1.0, 0.0])),
        radius=0.8,
        bins=243,
    )
    assert report.verdict == "cantor-like"
    assert any(abs(g - 1.0 / 3.0) < 0.03 for g in report.gaps)
    assert any(abs(g - 1.0 / 9.0) < 0.02 for g in report.gaps)
    assert report.fill_density > 0.95


def test_transversal_thin_data_is_inconclusive():
    rng = np.random.default_rng(17)
    report = transversal_cantor_probe(rng.random((300, 2)), radius=10.0)
    assert report.verdict == "inconclusive"


def test_transversal_scan_finds_surgered_torus_gaps(da_cloud):
    # single-window probes at the default center miss the layering; the
    # scan must locate a window where a gap is macroscopic
    report = transversal_scan(da_cloud)
    assert report.disconnected
    assert report.gaps[0] >= 0.02
    again = transversal_scan(da_cloud)
    assert again.verdict == report.verdict
    assert np.array_equal(again.gaps, report.gaps)


def test_transversal_scan_solid_cloud_stays_connected():
    rng = np.random.default_rng(20)
    report = transversal_scan(rng.random((60_000, 2)))
    assert report.verdict == "connected"


# ---------------------------------------------------------------------------
# mixing probe


def test_mixing_cat_equidistributes(cat):
    curve = mixing_probe(cat, n=2_000_000, grid=128, transient=100, seed=18)
    assert curve.final > 0.999
    assert np.all(np.diff(curve.coverage) >= 0.0)


def test_mixing_sink_stays_in_one_box():
    ns = north_south_sphere(2, 0.5)
    ref = orbit_sample(ns, n=2000, transient=400, seed=19)
    curve = mixing_probe(ns, n=20_000, grid=64, reference=ref, transient=400, seed=19)
    assert curve.boxes_visited == 1
    assert curve.final == 1.0


def test_mixing_da_covers_reference(da, da_cloud):
    other = orbit_sample(da, n=200_000, transient=2000, seed=77)
    curve = mixing_probe(
        da, n=600_000, grid=64, reference=[da_cloud, other], transient=500, seed=20
    )
    assert curve.final > 0.95


# ---------------------------------------------------------------------------
# assembled verdict


def test_expanding_check_da_passes(da, da_cloud):
    verdict = expanding_attractor_check(da, sample=da_cloud, lyap_n=100_000, seed=21)
    assert verdict.checks["a"][0], verdict.describe()
    assert verdict.checks["b"][0], verdict.describe()
    assert verdict.checks["c"][0], verdict.describe()
    assert verdict.checks["d"][0], verdict.describe()
    assert verdict.passed


def test_expanding_check_anosov_fails_trapping(cat):
    verdict = expanding_attractor_check(cat, lyap_n=50_000, sample_n=50_000, seed=22)
    assert not verdict.checks["a"][0]
    assert "improper" in verdict.checks["a"][1]
    assert not verdict.passed


def test_expanding_check_sink_fails_dimension():
    ns = north_south_sphere(2, 0.5)
    for claimed in (1, 2):
        verdict = expanding_attractor_check(
            ns, declared_dim=claimed, lyap_n=3000, sample_n=3000, seed=23
        )
        assert not verdict.checks["b"][0]
        assert not verdict.passed
