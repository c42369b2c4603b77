"""Chart and serialization tests for the state-space layer."""

import numpy as np
import pytest

from attractorlab import geometry as geo

RNG = np.random.default_rng(3)


def test_wrap_and_delta():
    assert np.allclose(geo.wrap_torus([1.25, -0.25, 2.0]), [0.25, 0.75, 0.0])
    d = geo.torus_delta([0.9, 0.1], [0.1, 0.9])
    assert np.allclose(d, [-0.2, 0.2])
    # the representative of the half distance is -1/2, not +1/2
    assert geo.torus_delta([0.75], [0.25])[0] == -0.5


def test_sphere_normalize_rejects_zero():
    with pytest.raises(ValueError):
        geo.sphere_normalize([0.0, 1e-12])
    v = geo.sphere_normalize([3.0, 4.0])
    assert np.allclose(v, [0.6, 0.8])


def test_quotient_canonical_involution():
    for x in RNG.random((50, 2)):
        a = geo.quotient_canonical(x)
        b = geo.quotient_canonical(-x)
        assert np.allclose(a, b)
    batch = RNG.random((200, 2))
    one_by_one = np.array([geo.quotient_canonical(x) for x in batch])
    assert np.allclose(geo.quotient_canonical_many(batch), one_by_one)


def test_join_round_trip():
    for _ in range(25):
        w = geo.sphere_normalize(RNG.normal(size=7))
        jc = geo.join_decompose(w, 3)
        assert 0.0 <= jc.t <= np.pi / 2
        assert np.allclose(geo.join_compose(jc.u, jc.v, jc.t), w, atol=1e-12)
    # degenerate split: all mass on the left block
    w = np.array([1.0, 0.0, 0.0, 0.0])
    jc = geo.join_decompose(w, 2)
    assert jc.degenerate_v and not jc.degenerate_u
    assert jc.t == pytest.approx(0.0)


@pytest.mark.parametrize(
    "m",
    [
        geo.Torus(2),
        geo.Torus(3),
        geo.Sphere(2),
        geo.Sphere(3),
        geo.QuotientSphere(),
        geo.Interval(0.0, 2.0),
        geo.Plane(3),
        geo.ProductManifold([geo.Torus(2), geo.Sphere(2)]),
        geo.TubeSphere(geo.QuotientSphere()),
        geo.MappingTorusSpace(geo.Torus(2)),
        geo.CompactifiedPlane(4),
    ],
)
def test_chart_round_trip(m):
    xs = m.random_states(RNG, 40)
    assert xs.shape == (40, m.state_len)
    for x in xs:
        x = m.canon(x)
        v = RNG.normal(scale=1e-3, size=m.dim)
        try:
            y = m.decode(x, v)
        except geo.ChartError:
            continue
        v_back = m.encode(x, y)
        assert np.allclose(v_back, v, atol=1e-9), m.describe()
        # the chart is centred: encode(x, x) = 0
        assert np.linalg.norm(m.encode(x, x)) < 1e-12


def test_sphere_chart_exactness():
    s = geo.Sphere(3)
    x0 = s.canon(RNG.normal(size=4))
    v = np.array([0.3, -0.2, 0.1])
    y = s.decode(x0, v)
    assert np.linalg.norm(y) == pytest.approx(1.0)
    assert np.allclose(s.encode(x0, y), v, atol=1e-12)
    with pytest.raises(geo.ChartError):
        s.encode(x0, -x0)  # antipode is outside the hemisphere chart


def test_torus_chart_wraps():
    t = geo.Torus(2)
    x0 = np.array([0.95, 0.5])
    y = t.decode(x0, np.array([0.1, 0.0]))
    assert np.allclose(y, [0.05, 0.5])
    assert np.allclose(t.encode(x0, y), [0.1, 0.0])


def test_tube_pole_chart_rejected():
    tube = geo.TubeSphere(geo.QuotientSphere())
    pole = tube.join(np.array([0.25, 0.125]), 0.0)
    with pytest.raises(geo.ChartError):
        tube.encode(pole, pole)


def test_quotient_chart_rejects_branch_centre():
    q = geo.QuotientSphere()
    with pytest.raises(geo.ChartError):
        q.encode(np.array([0.5, 0.5]), np.array([0.4, 0.4]))


def test_numeric_jacobian_linear_map():
    t = geo.Torus(2)
    A = np.array([[2.0, 1.0], [1.0, 1.0]])

    def step(x):
        return geo.wrap_torus(A @ x)

    J = geo.numeric_jacobian(step, t, np.array([0.3, 0.7]))
    assert np.allclose(J, A, atol=1e-9)


def test_numeric_jacobian_scalar_and_bounds():
    iv = geo.Interval(0.0, 2.0)
    e = np.e

    def g(x):
        return x * e / (1.0 + x * (e - 1.0))

    J = geo.numeric_jacobian(g, iv, np.array([0.0]), h=1e-4)
    assert J.shape == (1, 1)
    assert J[0, 0] == pytest.approx(e, abs=1e-8)
    with pytest.raises(ValueError):
        geo.numeric_jacobian(g, iv, np.array([0.5]), h=1e-2)


def test_numeric_jacobian_on_sphere():
    s = geo.Sphere(2)
    # rotation about the z axis: tangent map has unit singular values
    th = 0.7
    R = np.array(
        [
            [np.cos(th), -np.sin(th), 0.0],
            [np.sin(th), np.cos(th), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    x0 = geo.sphere_normalize([0.3, -0.5, 0.8])
    J = geo.numeric_jacobian(lambda x: R @ x, s, x0)
    s_vals = np.linalg.svd(J, compute_uv=False)
    assert np.allclose(s_vals, 1.0, atol=1e-7)


def test_invert_chart():
    z = np.array([3.0, 4.0])
    w = geo.invert_chart(z)
    assert np.allclose(geo.invert_chart(w), z)
    with pytest.raises(geo.ChartError):
        geo.invert_chart(np.zeros(2))


def test_point_validation_and_infinity():
    t = geo.Torus(2)
    p = geo.Point(t, np.array([1.2, -0.3]))
    assert np.allclose(p.state, [0.2, 0.7])
    with pytest.raises(ValueError):
        geo.Point(t, np.array([0.1, 0.2, 0.3]))
    c = geo.CompactifiedPlane(3)
    inf = geo.Point(c, np.zeros(3), at_infinity=True)
    assert inf.at_infinity and inf.variant_name == "capped"


def test_point_io_round_trip(tmp_path):
    t = geo.Torus(3)
    pts = [geo.Point(t, x) for x in RNG.random((17, 3))]
    csv_path = tmp_path / "pts.csv"
    bin_path = tmp_path / "pts.bin"
    geo.save_points_csv(csv_path, pts)
    geo.save_points_binary(bin_path, pts)
    back_csv = geo.load_points_csv(csv_path, t)
    back_bin = geo.load_points_binary(bin_path, t)
    for a, b, c in zip(pts, back_csv, back_bin):
        assert np.array_equal(a.state, b.state)  # repr round trip is exact
        assert np.array_equal(a.state, c.state)
    # header is 13 bytes, rows are 8 * dim bytes
    assert bin_path.stat().st_size == 13 + 17 * 3 * 8


def test_point_io_rejects_mismatch(tmp_path):
    t2, t3 = geo.Torus(2), geo.Torus(3)
    pts = [geo.Point(t2, x) for x in RNG.random((4, 2))]
    path = tmp_path / "p.bin"
    geo.save_points_binary(path, pts)
    with pytest.raises(ValueError):
        geo.load_points_binary(path, t3)
    with pytest.raises(ValueError):
        geo.save_points_csv(tmp_path / "m.csv", [geo.Point(t2, [0.1, 0.2]), geo.Point(t3, [0.1, 0.2, 0.3])])
    sph = geo.Sphere(2)
    with pytest.raises(ValueError):
        geo.load_points_binary(path, sph)


def test_binary_corruption_detected(tmp_path):
    t = geo.Torus(2)
    path = tmp_path / "p.bin"
    geo.save_points_binary(path, [geo.Point(t, [0.1, 0.2])])
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        geo.load_points_binary(bad, t)
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ValueError):
        geo.load_points_binary(trunc, t)
