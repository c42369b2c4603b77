"""Composition machinery for expanding attractors.

Every operation here takes finished systems and produces a new one whose
nonwandering structure is controlled: Cartesian products, sink padding,
spinning a sphere system into one more dimension, capping two disk systems
into a higher sphere, implanting a sphere attractor into a gradient world
through a connected sum, and suspending a map into a flow.  The driver
functions at the bottom assemble these into the standard families on tori,
spheres, and arbitrary supported manifolds.

Constructed systems are immutable and carry a recipe tree; rebuilding the
tree reproduces the system bit for bit.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .geometry import (
    ChartError,
    CompactifiedPlane,
    Manifold,
    MappingTorusSpace,
    Point,
    ProductManifold,
    TubeSphere,
    numeric_jacobian,
)
from .recipes import Recipe, build_recipe, derived_recipe, register_builder
from .regions import (
    GaugeDiskRegion,
    ProductRegion,
    Region,
    TransportedRegion,
    certify_invariant_disk,
)
from .systems import (
    ConstructionError,
    FixedPointRecord,
    SurgeryParams,
    SystemSpec,
    classify_multipliers,
    da_surgery,
    make_diffeotopy,
    north_south_sphere,
    plykin_system,
    radial_logistic_flow,
    register_isotopy,
    standard_collar,
    toral_automorphism,
    torus_gradient_ms,
    validate_system,
)

__all__ = [
    "FlowSpec",
    "NeckParams",
    "TubeJoinChart",
    "build_any_manifold",
    "build_sphere_attractor",
    "build_torus_attractor",
    "capped_product",
    "connected_sum",
    "product",
    "suspension",
    "tube_spinup",
    "with_sink",
]


# ---------------------------------------------------------------------------
# small shared helpers


def _unit_rows(rng, count: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _clamp01(t: float) -> float:
    return min(max(t, 0.0), 1.0)


def _eig_moduli(mat) -> tuple:
    vals = np.abs(np.linalg.eigvals(np.asarray(mat, dtype=float)))
    return tuple(float(v) for v in sorted(vals, reverse=True))


def _polish_fixed(step_state, man: Manifold, x, tol: float = 1e-13, iters: int = 25):
    """Newton-refine a near-fixed state so records pass strict residual checks."""
    x = man.canon(np.asarray(x, dtype=float))
    for _ in range(iters):
        r = man.encode(x, step_state(x.copy()))
        if float(np.linalg.norm(r)) < tol:
            break
        jac = numeric_jacobian(step_state, man, x)
        try:
            dx = np.linalg.solve(jac - np.eye(len(r)), -r)
        except np.linalg.LinAlgError:
            break
        nd = float(np.linalg.norm(dx))
        if nd > 0.125:
            dx *= 0.125 / nd
        x = man.canon(man.decode(x, dx))
    return x


def _fixed_residual(step_state, man: Manifold, x) -> float:
    return man.distance(step_state(np.asarray(x, dtype=float).copy()), x)


# ---------------------------------------------------------------------------
# products


class _CylinderRegion(Region):
    """A base region crossed with the full circle fiber of a mapping torus."""

    kind = "cylinder"

    def __init__(self, manifold, base_region: Region):
        super().__init__(manifold)
        self.base_region = base_region
        self.degenerate = base_region.degenerate

    def depth(self, state):
        return self.base_region.depth(np.asarray(state, dtype=float)[:-1])

    def boundary_states(self, count, rng):
        b = np.atleast_2d(self.base_region.boundary_states(count, rng).reshape(count, -1))
        return np.hstack([b, rng.random((count, 1))])

    def interior_states(self, count, rng):
        b = np.atleast_2d(self.base_region.interior_states(count, rng).reshape(count, -1))
        return np.hstack([b, rng.random((count, 1))])

    def describe(self):
        return f"cylinder({self.base_region.describe()})"


def product(systems) -> SystemSpec:
    """Cartesian product acting factorwise, with block diagonal tangents.

    Fixed points are all Cartesian combinations of factor fixed points
    (records pinned at infinity are skipped, they have no joint state); the
    declared attractor dimension adds up when every factor declares one.
    """
    systems = list(systems)
    if len(systems) < 2:
        raise ConstructionError("product needs at least two systems")
    man = ProductManifold([s.manifold for s in systems])
    state_lens = [s.manifold.state_len for s in systems]
    state_splits = np.cumsum(state_lens)[:-1]
    dims = [s.manifold.dim for s in systems]
    dim_bounds = np.concatenate([[0], np.cumsum(dims)])

    def step_state(x):
        parts = np.split(np.asarray(x, dtype=float), state_splits)
        return np.concatenate([s.step_state(p) for s, p in zip(systems, parts)])

    back_state = None
    if all(s.back_state is not None for s in systems):

        def back_state(x):
            parts = np.split(np.asarray(x, dtype=float), state_splits)
            return np.concatenate([s.back_state(p) for s, p in zip(systems, parts)])

    def tangent_state(x):
        parts = np.split(np.asarray(x, dtype=float), state_splits)
        out = np.zeros((man.dim, man.dim))
        for i, (s, p) in enumerate(zip(systems, parts)):
            lo, hi = dim_bounds[i], dim_bounds[i + 1]
            out[lo:hi, lo:hi] = s.tangent(p)
        return out

    records = []
    pools = []
    for s in systems:
        pools.append([r for r in s.fixed_points if not r.location.at_infinity])
    for combo in itertools.product(*pools):
        loc = np.concatenate([r.location.state for r in combo])
        mults = tuple(m for r in combo for m in r.multipliers)
        label = " x ".join(r.label or r.kind for r in combo)
        records.append(
            FixedPointRecord(Point(man, loc), classify_multipliers(mults), mults, label)
        )

    declared = None
    if all(s.declared_attractor_dim is not None for s in systems):
        declared = int(sum(s.declared_attractor_dim for s in systems))
    orientable = None
    if all(s.declared_orientable is not None for s in systems):
        orientable = all(s.declared_orientable for s in systems)

    extras = {}
    regions = [s.extras.get("trapping_region") for s in systems]
    if all(r is not None for r in regions):
        bounds = [0] + list(np.cumsum(state_lens))
        region = ProductRegion(man, regions, bounds)
        region.degenerate = any(r.degenerate for r in regions)
        extras["trapping_region"] = region
    seeds = [s.extras.get("attractor_seed") for s in systems]
    if all(sd is not None for sd in seeds):
        extras["attractor_seed"] = np.concatenate([np.atleast_1d(sd) for sd in seeds])

    fasts = [s.extras.get("fast_step_many") for s in systems]
    if all(f is not None for f in fasts):

        def fast_step_many(X):
            parts = np.split(np.asarray(X, dtype=float), state_splits, axis=1)
            return np.hstack([f(p) for f, p in zip(fasts, parts)])

        extras["fast_step_many"] = fast_step_many
    fbacks = [s.extras.get("fast_back_many") for s in systems]
    if back_state is not None and all(f is not None for f in fbacks):

        def fast_back_many(X):
            parts = np.split(np.asarray(X, dtype=float), state_splits, axis=1)
            return np.hstack([f(p) for f, p in zip(fbacks, parts)])

        extras["fast_back_many"] = fast_back_many

    def fast_tangent_many(X):
        X = np.asarray(X, dtype=float)
        parts = np.split(X, state_splits, axis=1)
        out = np.zeros((len(X), man.dim, man.dim))
        for i, (s, p) in enumerate(zip(systems, parts)):
            lo, hi = dim_bounds[i], dim_bounds[i + 1]
            out[:, lo:hi, lo:hi] = s.tangent_many(p)
        return out

    extras["fast_tangent_many"] = fast_tangent_many
    extras["factors"] = tuple(systems)

    spec = SystemSpec(
        name="product(" + ", ".join(s.name for s in systems) + ")",
        manifold=man,
        step_state=step_state,
        back_state=back_state,
        fixed_points=tuple(records),
        recipe=derived_recipe("product", [s.recipe for s in systems]),
        declared_attractor_dim=declared,
        declared_orientable=orientable,
        tangent_state=tangent_state,
        extras=extras,
    )
    validate_system(spec)
    return spec


def with_sink(main: SystemSpec, ms: SystemSpec) -> SystemSpec:
    """Pad a system with a gradient-like factor so the attractor rides on its sink.

    The attractor of the result is attractor(main) x {sink}, so the declared
    dimension is main's, not the sum.
    """
    if "sink_state" not in ms.extras:
        raise ConstructionError(
            f"{ms.name} declares no isolated sink; with_sink needs a gradient-like factor"
        )
    prod = product([main, ms])
    extras = dict(prod.extras)
    extras["sink_state"] = np.asarray(ms.extras["sink_state"], dtype=float).copy()
    return replace(
        prod,
        name=f"{main.name}+sink({ms.name})",
        recipe=derived_recipe("with_sink", [main.recipe, ms.recipe]),
        declared_attractor_dim=main.declared_attractor_dim,
        declared_orientable=main.declared_orientable,
        extras=extras,
    )


# ---------------------------------------------------------------------------
# suspension flows


@dataclass(frozen=True)
class FlowSpec:
    """A flow built over a map: state (x, s) with unit speed in s.

    flow_state(t, state) evaluates the flow for any real t; system is the
    time-1 return map as an ordinary SystemSpec on the mapping torus.
    """

    name: str
    manifold: Manifold
    system: SystemSpec
    flow_state: object
    recipe: Recipe
    declared_attractor_dim: object = None
    extras: dict = None

    def flow(self, t, state):
        return self.flow_state(float(t), np.asarray(state, dtype=float))

    def time_one_map(self) -> SystemSpec:
        return self.system

    def describe(self) -> str:
        d = self.declared_attractor_dim
        dd = "?" if d is None else str(d)
        return f"{self.name} on {self.manifold.describe()}, attractor dim {dd}"


def suspension(system: SystemSpec) -> FlowSpec:
    """Suspend an invertible map into a flow on its mapping torus.

    The fiber coordinate s advances at unit speed and crossing s = 1 applies
    the map once, so the time-1 map at s = 0 is exactly the original system
    and the flow direction contributes an exactly neutral tangent factor.
    """
    if system.back_state is None:
        raise ConstructionError(
            f"suspension needs an invertible map; {system.name} has no backward map"
        )
    man = MappingTorusSpace(system.manifold)
    base = system

    def flow_state(t, state):
        state = man.canon(np.asarray(state, dtype=float))
        b, s = man.split(state)
        total = s + float(t)
        k = int(math.floor(total))
        frac = total - k
        if frac >= 1.0:  # guard the floor against roundoff at the seam
            frac -= 1.0
            k += 1
        for _ in range(k):
            b = base.step_state(b)
        for _ in range(-k):
            b = base.back_state(b)
        return man.join(b, frac)

    def step_state(x):
        b, s = man.split(np.asarray(x, dtype=float))
        return man.join(base.step_state(b), s % 1.0)

    def back_state(x):
        b, s = man.split(np.asarray(x, dtype=float))
        return man.join(base.back_state(b), s % 1.0)

    def tangent_state(x):
        b, _ = man.split(np.asarray(x, dtype=float))
        out = np.zeros((man.dim, man.dim))
        out[:-1, :-1] = base.tangent(b)
        out[-1, -1] = 1.0
        return out

    extras = {"is_flow": True, "flow_base": base}
    region = base.extras.get("trapping_region")
    if region is not None:
        extras["trapping_region"] = _CylinderRegion(man, region)
    seed = base.extras.get("attractor_seed")
    if seed is not None:
        extras["attractor_seed"] = man.join(np.atleast_1d(seed), 0.25)
    fast = base.extras.get("fast_step_many")
    if fast is not None:

        def fast_step_many(X):
            X = np.asarray(X, dtype=float)
            return np.hstack([fast(X[:, :-1]), X[:, -1:] % 1.0])

        extras["fast_step_many"] = fast_step_many

    def fast_tangent_many(X):
        X = np.asarray(X, dtype=float)
        blocks = base.tangent_many(X[:, :-1])
        out = np.zeros((len(X), man.dim, man.dim))
        out[:, :-1, :-1] = blocks
        out[:, -1, -1] = 1.0
        return out

    extras["fast_tangent_many"] = fast_tangent_many

    declared = None
    if base.declared_attractor_dim is not None:
        declared = int(base.declared_attractor_dim) + 1

    recipe = derived_recipe("suspension", [base.recipe])
    time_one = SystemSpec(
        name=f"time1(susp({base.name}))",
        manifold=man,
        step_state=step_state,
        back_state=back_state,
        fixed_points=(),
        recipe=recipe,
        declared_attractor_dim=declared,
        declared_orientable=base.declared_orientable,
        tangent_state=tangent_state,
        extras=extras,
    )
    validate_system(time_one)

    # the flow property and the time endpoints are part of the contract
    rng = np.random.default_rng(60901)
    probes = man.random_states(rng, 40)
    for x in probes[:10]:
        if man.distance(flow_state(0.0, x), man.canon(x)) > 1e-14:
            raise ConstructionError("suspension flow fails the time-0 identity")
    ts = rng.uniform(-1.5, 1.5, (len(probes), 2))
    for x, (t, s) in zip(probes, ts):
        a = flow_state(t + s, x)
        bstep = flow_state(t, flow_state(s, x))
        if man.distance(a, bstep) > 1e-8:
            raise ConstructionError(
                f"suspension flow property fails at (t, s) = ({t:.4f}, {s:.4f})"
            )

    return FlowSpec(
        name=f"susp({base.name})",
        manifold=man,
        system=time_one,
        flow_state=flow_state,
        recipe=recipe,
        declared_attractor_dim=declared,
        extras={"flow_base": base},
    )


# ---------------------------------------------------------------------------
# tube spin-up


class TubeJoinChart:
    """Global chart of a tube sphere, centered on the near pole.

    Base directions are healed through an inverse stereographic lift, so the
    base chart's missing class maps to the lift's north direction and the
    chart covers everything except the far pole.  The radial scale is chosen
    so the standard invariant disk boundary sits on the unit sphere.
    """

    def __init__(self, man: TubeSphere, base_chart, excluded_state=None, disk_rho: float = 1.5):
        self.man = man
        self.base_chart = base_chart
        self.excluded_state = None
        if excluded_state is not None:
            self.excluded_state = np.asarray(excluded_state, dtype=float).copy()
        self.scale = math.tan(math.pi * disk_rho / 4.0)
        self.dim = man.dim
        self._center = np.asarray(
            base_chart.from_plane(np.zeros(self.dim - 1)), dtype=float
        )
        self.missing_state = man.join(self._center, 2.0)

    def _dir(self, b) -> np.ndarray:
        try:
            z = np.asarray(self.base_chart.to_plane(b), dtype=float)
        except ChartError:
            z = None
        if z is None or not np.all(np.isfinite(z)):
            d = np.zeros(self.dim)
            d[-1] = 1.0
            return d
        n2 = float(z @ z)
        return np.concatenate([2.0 * z, [n2 - 1.0]]) / (n2 + 1.0)

    def to_plane(self, state):
        b, rho = self.man.split(np.asarray(state, dtype=float))
        if rho >= 2.0 - 1e-9:
            raise ChartError("chart does not cover the far pole")
        radial = math.tan(math.pi * rho / 4.0) / self.scale
        if radial == 0.0:
            return np.zeros(self.dim)
        return self._dir(b) * radial

    def from_plane(self, vec):
        w = np.asarray(vec, dtype=float)
        r = float(np.linalg.norm(w))
        rho = 4.0 / math.pi * math.atan(r * self.scale)
        if r < 1e-300:
            return self.man.join(self._center.copy(), 0.0)
        d = w / r
        last = min(max(float(d[-1]), -1.0), 1.0)
        if last >= 1.0 - 1e-12:
            if self.excluded_state is None:
                raise ChartError("direction hits the excluded base class")
            return self.man.join(self.excluded_state.copy(), rho)
        z = d[:-1] / (1.0 - last)
        return self.man.join(self.base_chart.from_plane(z), rho)

    def to_plane_many(self, states):
        return np.array([self.to_plane(s) for s in np.asarray(states, dtype=float)])

    def from_plane_many(self, vecs):
        return np.array([self.from_plane(v) for v in np.asarray(vecs, dtype=float)])


class _TubeBandRegion(Region):
    """Band lo <= rho <= hi around the equator of a tube sphere."""

    kind = "tube-band"

    def __init__(self, manifold: TubeSphere, lo: float, hi: float):
        super().__init__(manifold)
        self.lo = float(lo)
        self.hi = float(hi)

    def depth(self, state):
        rho = float(np.asarray(state, dtype=float)[-1])
        return min(rho - self.lo, self.hi - rho)

    def boundary_states(self, count, rng):
        b = self.manifold.base.random_states(rng, count)
        rho = np.where(np.arange(count) % 2 == 0, self.lo, self.hi)
        return np.hstack([b, rho[:, None]])

    def interior_states(self, count, rng):
        b = self.manifold.base.random_states(rng, count)
        rho = rng.uniform(self.lo + 0.05, self.hi - 0.05, (count, 1))
        return np.hstack([b, rho])

    def describe(self):
        return f"tube band rho in [{self.lo:.6g}, {self.hi:.6g}]"


_TUBE_BAND = 0.9
_TUBE_DISK_RHO = 1.5


def tube_spinup(system: SystemSpec, dtp=None, theta=None) -> SystemSpec:
    """Spin a sphere system into one more dimension along a collar profile.

    States are (x, rho) with rho in [0, 2]; the equator rho = 1 carries the
    original dynamics exactly, copies at |rho - 1| >= the band width move by
    the radial logistic map alone, and in between the diffeotopy interpolates
    toward the identity.  Both poles become sources with uniform rate e, and
    the declared attractor dimension is unchanged.
    """
    if dtp is None:
        try:
            dtp = make_diffeotopy(system)
        except ConstructionError as err:
            raise ConstructionError(
                f"tube spin-up needs a family connecting {system.name} to the "
                f"identity; make_diffeotopy failed: {err}"
            ) from err
    custom_theta = theta is not None
    if theta is None:
        theta = standard_collar

    base_man = system.manifold
    man = TubeSphere(base_man)
    band = _TUBE_BAND

    def family(alpha, x):
        x = np.asarray(x, dtype=float)
        b, rho = man.split(x)
        th = float(theta(_clamp01(abs(rho - 1.0) / band)))
        par = max(float(alpha), th)
        b2 = dtp.forward_state(par, b)
        rho2 = radial_logistic_flow(rho, 1.0 - float(alpha))
        return man.join(b2, rho2)

    def step_state(x):
        return family(0.0, x)

    family_inverse = None
    back_state = None
    if not dtp.approximate and system.back_state is not None:

        def family_inverse(alpha, y):
            y = np.asarray(y, dtype=float)
            b2, rho2 = man.split(y)
            rho = float(radial_logistic_flow(rho2, float(alpha) - 1.0))
            th = float(theta(_clamp01(abs(rho - 1.0) / band)))
            par = max(float(alpha), th)
            b = dtp.backward_state(par, b2)
            return man.join(b, rho)

        def back_state(y):
            return family_inverse(0.0, y)

    # fixed points: equator copies of the base records plus the two poles
    records = []
    radial_mult = math.exp(-1.0)
    for rec in system.fixed_points:
        if rec.location.at_infinity:
            continue
        mults = tuple(rec.multipliers) + (radial_mult,)
        records.append(
            FixedPointRecord(
                Point(man, man.join(rec.location.state, 1.0)),
                classify_multipliers(mults),
                mults,
                (rec.label or rec.kind) + " on equator",
            )
        )
    if records:
        placeholder = records[0].location.state[:-1]
    else:
        placeholder = base_man.random_states(np.random.default_rng(4), 1)[0]
    pole_mults = (math.e,) * man.dim
    for rho0, tag in ((0.0, "near pole"), (2.0, "far pole")):
        records.append(
            FixedPointRecord(
                Point(man, man.join(placeholder, rho0)),
                "source",
                pole_mults,
                f"spin source at {tag}",
            )
        )

    base_chart = system.extras.get("global_chart")
    if base_chart is None:
        raise ConstructionError(
            f"tube spin-up needs a global chart on {system.name} to build its own"
        )
    excluded = getattr(base_chart, "missing_state", None)
    for rec in system.fixed_points:
        if rec.location.at_infinity:
            continue
        try:
            base_chart.to_plane(rec.location.state)
        except ChartError:
            excluded = rec.location.state
            break
    chart = TubeJoinChart(man, base_chart, excluded, _TUBE_DISK_RHO)

    disk_scale = chart.scale

    def gauge(state):
        rho = float(np.asarray(state, dtype=float)[-1])
        return math.tan(math.pi * min(rho, 2.0 - 1e-9) / 4.0) / disk_scale

    region = GaugeDiskRegion(
        man,
        gauge,
        lambda count, rng: _unit_rows(rng, count, man.dim),
        chart.from_plane_many,
        scale_note=f"rho <= {_TUBE_DISK_RHO}",
    )
    rng = np.random.default_rng(81517)
    disk = certify_invariant_disk(
        region,
        lambda X: np.array([step_state(s) for s in X]),
        rng,
        exclude_states=[man.join(placeholder, 2.0)],
        note="far spin source excluded; the near source is interior by design",
    )

    extras = {
        "trapping_region": _TubeBandRegion(man, 0.25, 1.75),
        "invariant_disk": disk,
        "global_chart": chart,
        "plane_gauge": lambda v: float(np.linalg.norm(v)),
        "spin_family": family,
        "spin_family_inverse": family_inverse,
        "spin_family_approximate": dtp.approximate or system.back_state is None,
        "spin_theta": theta,
        "spin_band": band,
    }
    seed = system.extras.get("attractor_seed")
    if seed is not None:
        extras["attractor_seed"] = man.join(np.atleast_1d(seed), 1.0)

    spec = SystemSpec(
        name=f"spin({system.name})",
        manifold=man,
        step_state=step_state,
        back_state=back_state,
        fixed_points=tuple(records),
        recipe=derived_recipe(
            "tube_spinup",
            [system.recipe],
            band=band,
            profile="custom" if custom_theta else "standard",
        ),
        declared_attractor_dim=system.declared_attractor_dim,
        declared_orientable=system.declared_orientable,
        extras=extras,
    )
    validate_system(spec)
    return spec


def _tube_isotopy(system: SystemSpec):
    family = system.extras["spin_family"]
    family_inverse = system.extras["spin_family_inverse"]
    approximate = bool(system.extras["spin_family_approximate"])

    def fwd(alpha, x):
        return family(alpha, x)

    if family_inverse is None:

        def inv(alpha, y):
            raise ArithmeticError("spin family over a one-way base has no inverse")

    else:

        def inv(alpha, y):
            return family_inverse(alpha, y)

    return fwd, inv, approximate


register_isotopy("tube_spinup", _tube_isotopy)


# ---------------------------------------------------------------------------
# capped products


def _corner_gauge(p, q, corner: float):
    """Rounded joint level of two nonnegative gauges.

    Away from the diagonal sector this is max(p, q); inside, the corner of
    the square level set is replaced by a quarter circle of relative width
    `corner`, which keeps the level sets C^1 and the gauge homogeneous.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a = 1.0 - corner
    top = np.maximum(p, q)
    r2 = p * p + q * q
    dot = a * (p + q)
    coef = 2.0 * a * a - corner * corner
    disc = np.maximum(dot * dot - coef * r2, 0.0)
    sector = (a * p < q) & (a * q < p) & (r2 > 0.0)
    denom = np.where(sector, dot + np.sqrt(disc), 1.0)
    return np.where(sector, r2 / denom, top)


def _chartball_radius(system: SystemSpec) -> float:
    disk = system.extras.get("invariant_disk")
    chart = system.extras.get("global_chart")
    if disk is None or chart is None:
        raise ConstructionError(
            f"capped product needs a certified invariant disk and a global chart "
            f"on {system.name}"
        )
    if not (disk.margin > 0.0):
        raise ConstructionError(
            f"invariant disk of {system.name} has nonpositive margin {disk.margin:.3g}"
        )
    rng = np.random.default_rng(7070)
    boundary = disk.region.boundary_states(256, rng)
    radii = np.array([float(np.linalg.norm(chart.to_plane(s))) for s in boundary])
    r = float(radii.mean())
    spread = float(radii.max() - radii.min())
    if spread > 1e-6 * max(r, 1.0):
        raise ConstructionError(
            f"invariant disk of {system.name} is not a round chart ball "
            f"(boundary radius spread {spread:.3g})"
        )
    return r


class _GaugeBallChart:
    """Identity-like chart rescaled radially so the trapping gauge is the norm."""

    def __init__(self, gauge_state, dim: int):
        self._gauge = gauge_state
        self.dim = dim
        self.missing_state = None

    def to_plane(self, state):
        w = np.asarray(state, dtype=float)
        r = float(np.linalg.norm(w))
        if r == 0.0:
            return w.copy()
        return w * (float(self._gauge(w)) / r)

    def from_plane(self, vec):
        u = np.asarray(vec, dtype=float)
        r = float(np.linalg.norm(u))
        if r == 0.0:
            return u.copy()
        return u * (r / float(self._gauge(u)))

    def to_plane_many(self, states):
        return np.array([self.to_plane(s) for s in np.asarray(states, dtype=float)])

    def from_plane_many(self, vecs):
        return np.array([self.from_plane(v) for v in np.asarray(vecs, dtype=float)])


def capped_product(
    left: SystemSpec,
    right: SystemSpec,
    corner: float = 0.1,
    spin_end: float = 4.0,
    rate: float = 1.35,
) -> SystemSpec:
    """Glue a cap onto the product of two invariant-disk systems.

    States are joint chart vectors over both factor disks, compactified by a
    single source at infinity.  Where the joint gauge is at most 1 the map is
    exactly the factor product in charts; beyond spin_end it is exactly
    w / rate; across the collar the factor dynamics are spun off through
    their diffeotopies while the radial level blends into the contraction.
    """
    if not 0.0 < corner < 0.5:
        raise ConstructionError(f"corner width {corner} outside (0, 0.5)")
    if spin_end <= 1.5 or rate <= 1.0:
        raise ConstructionError("cap needs spin_end > 1.5 and rate > 1")

    factors = (left, right)
    radii = [_chartball_radius(s) for s in factors]
    charts = [s.extras["global_chart"] for s in factors]
    gauges = [s.extras["plane_gauge"] for s in factors]
    dtps = []
    for s in factors:
        try:
            dtps.append(make_diffeotopy(s))
        except ConstructionError as err:
            raise ConstructionError(
                f"capped product spins factor dynamics off and needs a diffeotopy "
                f"for {s.name}; make_diffeotopy failed: {err}"
            ) from err

    k_left = left.manifold.dim
    dim = k_left + right.manifold.dim

    def encode_left(state):
        return charts[0].to_plane(state) / radii[0]

    def decode_left(w):
        return charts[0].from_plane(np.asarray(w, dtype=float) * radii[0])

    def encode_right(state):
        return charts[1].to_plane(state) / radii[1]

    def decode_right(w):
        return charts[1].from_plane(np.asarray(w, dtype=float) * radii[1])

    def gauge_left(w):
        return float(gauges[0](np.asarray(w, dtype=float) * radii[0])) / radii[0]

    def gauge_right(w):
        return float(gauges[1](np.asarray(w, dtype=float) * radii[1])) / radii[1]

    def joint_gauge(w):
        w = np.asarray(w, dtype=float)
        return float(_corner_gauge(gauge_left(w[:k_left]), gauge_right(w[k_left:]), corner))

    man = CompactifiedPlane(dim, gauge=joint_gauge)

    def spin(par, w):
        if par == 1.0:
            return np.asarray(w, dtype=float).copy()
        w = np.asarray(w, dtype=float)
        yl = dtps[0].forward_state(par, decode_left(w[:k_left]))
        yr = dtps[1].forward_state(par, decode_right(w[k_left:]))
        return np.concatenate([encode_left(yl), encode_right(yr)])

    def unspin(par, w):
        if par == 1.0:
            return np.asarray(w, dtype=float).copy()
        w = np.asarray(w, dtype=float)
        yl = dtps[0].backward_state(par, decode_left(w[:k_left]))
        yr = dtps[1].backward_state(par, decode_right(w[k_left:]))
        return np.concatenate([encode_left(yl), encode_right(yr)])

    span = spin_end - 1.0

    def family(alpha, w):
        alpha = float(alpha)
        w = np.asarray(w, dtype=float)
        if alpha == 1.0:
            return man.canon(w)
        rho = joint_gauge(w)
        kap = float(standard_collar(_clamp01((rho - 1.0) / span)))
        rate_eff = rate ** (1.0 - alpha)
        if kap == 1.0:
            return w / rate_eff
        par = max(kap, alpha)
        spun = spin(par, w)
        if kap == 0.0:
            return spun
        g_spun = joint_gauge(spun)
        level = g_spun ** (1.0 - kap) * (rho / rate_eff) ** kap
        return spun * (level / g_spun)

    def step_state(w):
        return family(0.0, w)

    exact = (
        not dtps[0].approximate
        and not dtps[1].approximate
        and left.back_state is not None
        and right.back_state is not None
    )

    def family_inverse(alpha, u):
        alpha = float(alpha)
        u = np.asarray(u, dtype=float)
        if alpha == 1.0:
            return man.canon(u)
        rate_eff = rate ** (1.0 - alpha)
        rho_img = joint_gauge(u)

        # disk zone candidate: the collar switch underflows to exactly zero
        w0 = unspin(alpha, u)
        rho0 = joint_gauge(w0)
        if float(standard_collar(_clamp01((rho0 - 1.0) / span))) == 0.0:
            if man.distance(family(alpha, w0), u) <= 1e-10:
                return w0

        # far zone candidate
        w1 = u * rate_eff
        if float(standard_collar(_clamp01((joint_gauge(w1) - 1.0) / span))) == 1.0:
            return w1

        def source_level(rho):
            kap = float(standard_collar(_clamp01((rho - 1.0) / span)))
            if kap >= 1.0 - 1e-12:
                return None
            return (rho_img * (rate_eff / rho) ** kap) ** (1.0 / (1.0 - kap))

        def mismatch(rho):
            g_spun = source_level(rho)
            if g_spun is None or not np.isfinite(g_spun) or g_spun <= 0.0:
                return None
            kap = float(standard_collar(_clamp01((rho - 1.0) / span)))
            w = unspin(max(kap, alpha), u * (g_spun / rho_img))
            return joint_gauge(w) - rho

        grid = np.geomspace(max(rho_img / rate, 0.2), spin_end * 1.2, 160)
        vals = [mismatch(r) for r in grid]
        for i in range(len(grid) - 1):
            a, b = vals[i], vals[i + 1]
            if a is None or b is None or a * b > 0.0:
                continue
            rho = brentq(mismatch, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15)
            g_spun = source_level(rho)
            kap = float(standard_collar(_clamp01((rho - 1.0) / span)))
            w = unspin(max(kap, alpha), u * (g_spun / rho_img))
            if man.distance(family(alpha, w), u) <= 1e-10:
                return w
        raise ArithmeticError("no preimage located in the cap collar")

    back_state = None
    if exact:

        def back_state(u):
            return family_inverse(0.0, u)

    # fixed points: Cartesian records inside the disk product, plus infinity
    records = []
    for rl, rr in itertools.product(left.fixed_points, right.fixed_points):
        if rl.location.at_infinity or rr.location.at_infinity:
            continue
        try:
            wl = encode_left(rl.location.state)
            wr = encode_right(rr.location.state)
        except ChartError:
            continue
        if gauge_left(wl) > 1.0 or gauge_right(wr) > 1.0:
            continue
        loc = _polish_fixed(step_state, man, np.concatenate([wl, wr]))
        mults = tuple(rl.multipliers) + tuple(rr.multipliers)
        records.append(
            FixedPointRecord(
                Point(man, loc),
                classify_multipliers(mults),
                mults,
                f"{rl.label or rl.kind} x {rr.label or rr.kind}",
            )
        )
    records.append(
        FixedPointRecord(
            Point(man, np.zeros(dim), at_infinity=True),
            "source",
            (rate,) * dim,
            "cap source at infinity",
        )
    )

    def to_level(vecs):
        vecs = np.asarray(vecs, dtype=float)
        out = np.empty_like(vecs)
        for i, v in enumerate(vecs):
            r = float(np.linalg.norm(v))
            out[i] = v if r == 0.0 else v * (r / joint_gauge(v))
        return out

    region = GaugeDiskRegion(
        man,
        joint_gauge,
        lambda count, rng: _unit_rows(rng, count, dim),
        to_level,
        scale_note="joint factor-disk gauge",
    )
    rng = np.random.default_rng(90021)
    step_many = lambda X: np.array([step_state(s) for s in X])
    disk = certify_invariant_disk(
        region,
        step_many,
        rng,
        note="cap source sits at infinity, outside every finite gauge level",
    )

    # sampled injectivity across the collar, where no structural argument holds
    cloud_levels = np.concatenate(
        [np.linspace(0.85, 1.0, 6), np.geomspace(1.001, spin_end * 1.1, 24)]
    )
    dirs = _unit_rows(rng, 160, dim)
    cloud = np.concatenate([to_level(dirs * lv) for lv in cloud_levels])
    images = step_many(cloud)
    tree = cKDTree(images)
    pair_d, pair_i = tree.query(images, k=2)
    for idx, (d_img, j) in enumerate(zip(pair_d[:, 1], pair_i[:, 1])):
        d_src = float(np.linalg.norm(cloud[idx] - cloud[j]))
        if d_src > 1e-5 and d_img < 1e-9:
            raise ConstructionError(
                "cap collar folds: two sampled states collide after one step"
            )

    extras = {
        "trapping_region": region,
        "invariant_disk": disk,
        "global_chart": _GaugeBallChart(joint_gauge, dim),
        "plane_gauge": lambda v: float(np.linalg.norm(v)),
        "infinity_fixed": True,
        "cap_factors": factors,
        "cap_charts": ((encode_left, decode_left), (encode_right, decode_right)),
        "cap_gauge": joint_gauge,
        "cap_family": family,
        "cap_family_inverse": family_inverse if exact else None,
        "cap_family_approximate": not exact,
    }
    seeds = [s.extras.get("attractor_seed") for s in factors]
    if all(sd is not None for sd in seeds):
        extras["attractor_seed"] = np.concatenate(
            [encode_left(np.atleast_1d(seeds[0])), encode_right(np.atleast_1d(seeds[1]))]
        )

    declared = None
    if left.declared_attractor_dim is not None and right.declared_attractor_dim is not None:
        declared = int(left.declared_attractor_dim) + int(right.declared_attractor_dim)

    spec = SystemSpec(
        name=f"cap({left.name}, {right.name})",
        manifold=man,
        step_state=step_state,
        back_state=back_state,
        fixed_points=tuple(records),
        recipe=derived_recipe(
            "capped_product",
            [left.recipe, right.recipe],
            corner=corner,
            spin_end=spin_end,
            rate=rate,
        ),
        declared_attractor_dim=declared,
        declared_orientable=False,
        extras=extras,
    )
    validate_system(spec)
    return spec


def _capped_isotopy(system: SystemSpec):
    family = system.extras["cap_family"]
    family_inverse = system.extras["cap_family_inverse"]
    approximate = bool(system.extras["cap_family_approximate"])

    def fwd(alpha, w):
        return family(alpha, w)

    if family_inverse is None:

        def inv(alpha, u):
            raise ArithmeticError("cap family over a one-way factor has no inverse")

    else:

        def inv(alpha, u):
            return family_inverse(alpha, u)

    return fwd, inv, approximate


register_isotopy("capped_product", _capped_isotopy)


# ---------------------------------------------------------------------------
# connected sums


@dataclass(frozen=True)
class NeckParams:
    """Geometry of the surgery neck for a connected sum.

    sink_center and sink_radius describe the absorbed ball around the base
    sink; source_radius is the chart gauge of the chamber around the sphere
    system's consumed source (None lets the constructor scan for one);
    collar_width is the fraction of the feed shell used for the crossing
    blend; core_fraction fixes which inner part of the neck receives the
    chamber of gauge at most the implant bound; boundary_map optionally
    rotates the identification of the two boundary spheres.
    """

    sink_center: object = None
    sink_radius: float = 0.2
    source_radius: object = None
    collar_width: float = 0.5
    core_fraction: float = 0.6
    boundary_map: object = None


_CHAMBER_OVERHANG = 1.01  # feed points probe the chamber up to this level ratio


def _chamber_sup(fc_vec, gauge_vec, dim: int, rng, r_alpha: float) -> float:
    """Largest one-step image gauge over chamber levels, overhang included."""
    dirs = _unit_rows(rng, 128, dim)
    sup = 0.0
    for lv in np.geomspace(0.05 * r_alpha, _CHAMBER_OVERHANG * r_alpha, 18):
        g = gauge_vec(fc_vec(dirs * lv))
        if not np.all(np.isfinite(g)):
            return np.inf
        sup = max(sup, float(g.max()))
    return sup


def _scan_source_radius(fc_vec, gauge_vec, dim: int, rng) -> tuple:
    """Pick a chamber gauge whose one-step image stays well inside it."""
    best = None
    for r_alpha in (2.5, 3.0, 4.0, 6.0, 8.0):
        sup = _chamber_sup(fc_vec, gauge_vec, dim, rng, r_alpha)
        if sup < 0.9 * r_alpha:
            return r_alpha, sup
        if np.isfinite(sup) and (best is None or sup / r_alpha < best[1] / best[0]):
            best = (r_alpha, sup)
    detail = "" if best is None else (
        f"; best candidate gauge {best[0]:g} still reaches {best[1]:.4g}"
    )
    raise ConstructionError(
        "no absorbed source chamber found: one-step images keep escaping "
        "every candidate gauge level" + detail
    )


def connected_sum(base: SystemSpec, sphere_sys: SystemSpec, neck=None) -> SystemSpec:
    """Implant a sphere attractor into a base system at its sink.

    The ball around the base sink is rebuilt to carry the sphere dynamics
    through a radial power-law transport of the sphere's global chart; away
    from the ball the base map is untouched; the shell of points the base
    map feeds into the ball crosses the neck through a monotone radial blend
    that delivers them just outside the implant's own image levels.
    """
    if neck is None:
        neck = NeckParams()
    base_man = base.manifold
    sphere_man = sphere_sys.manifold
    if base_man.dim != sphere_man.dim:
        raise ConstructionError(
            f"connected sum needs equal dimensions, got {base_man.dim} and {sphere_man.dim}"
        )
    dim = base_man.dim

    if neck.sink_center is not None:
        omega = base_man.canon(np.asarray(neck.sink_center, dtype=float))
    elif "sink_state" in base.extras:
        omega = np.asarray(base.extras["sink_state"], dtype=float).copy()
    else:
        raise ConstructionError(
            f"connected sum needs an isolated sink on {base.name}; none declared"
        )
    r_omega = float(neck.sink_radius)
    if not 0.0 < r_omega < 0.5:
        raise ConstructionError(f"sink radius {r_omega} outside (0, 0.5)")
    width = float(neck.collar_width)
    if not 0.0 < width < 1.0:
        raise ConstructionError(
            f"collar width {width} outside (0, 1); the crossing blend must "
            f"finish strictly before the far edge of the feed shell"
        )
    core_fraction = float(neck.core_fraction)

    chart = sphere_sys.extras.get("global_chart")
    if chart is None:
        raise ConstructionError(
            f"connected sum needs a global chart on {sphere_sys.name}"
        )

    q_mat = None
    if neck.boundary_map is not None:
        q_mat = np.asarray(neck.boundary_map, dtype=float)
        if q_mat.shape != (dim, dim) or np.abs(q_mat @ q_mat.T - np.eye(dim)).max() > 1e-9:
            raise ConstructionError("boundary identification must be an orthogonal matrix")

    def enc(x):
        try:
            return base_man.encode(omega, np.asarray(x, dtype=float))
        except ChartError:
            return None

    def dec(v):
        return base_man.decode(omega, np.asarray(v, dtype=float))

    def fc(z):
        return chart.to_plane(sphere_sys.step_state(chart.from_plane(z)))

    def fc_back(z):
        return chart.to_plane(sphere_sys.back_state(chart.from_plane(z)))

    def fc_vec(Z):
        out = np.full(np.shape(Z), np.inf)
        for i, z in enumerate(np.asarray(Z, dtype=float)):
            try:
                out[i] = fc(z)
            except ChartError:
                pass
        return out

    def gauge_vec(Z):
        return np.linalg.norm(np.asarray(Z, dtype=float), axis=-1)

    # consumed fixed points: whatever the sphere chart cannot represent
    consumed = []
    kept_sphere = []
    for rec in sphere_sys.fixed_points:
        if rec.location.at_infinity:
            consumed.append(rec)
            continue
        try:
            chart.to_plane(rec.location.state)
        except ChartError:
            consumed.append(rec)
            continue
        kept_sphere.append(rec)
    if not consumed:
        raise ConstructionError(
            f"{sphere_sys.name} exposes no fixed point at the chart's missing "
            f"spot; the connected sum has nothing to excise"
        )
    for rec in consumed:
        if rec.kind != "source":
            raise ConstructionError(
                f"the excised fixed point must be a source, found {rec.kind}"
            )

    # sink ball absorption, sampled with margin
    rng = np.random.default_rng(133719)
    shell = _unit_rows(rng, 256, dim) * r_omega
    psi_norms = []
    for v in shell:
        y = base.step_state(dec(v))
        vy = enc(y)
        if vy is None:
            raise ConstructionError("base map throws the sink shell out of the chart")
        psi_norms.append(float(np.linalg.norm(vy)))
    r_psi = max(psi_norms)
    if r_psi >= 0.98 * r_omega:
        raise ConstructionError(
            f"sink ball is not absorbed: boundary maps to radius {r_psi:.4g} "
            f"of {r_omega:.4g}"
        )

    if neck.source_radius is not None:
        r_alpha = float(neck.source_radius)
        sup = _chamber_sup(fc_vec, gauge_vec, dim, rng, r_alpha)
        if sup >= 0.95 * r_alpha:
            raise ConstructionError(
                f"source chamber of gauge {r_alpha:.4g} is not absorbed: "
                f"one-step images reach {sup:.4g}"
            )
    else:
        r_alpha, sup = _scan_source_radius(fc_vec, gauge_vec, dim, rng)
    r_core = 1.02 * sup
    gamma = math.log(r_alpha / r_core) / math.log(1.0 / core_fraction)

    def transport(v):
        v = np.asarray(v, dtype=float)
        r = float(np.linalg.norm(v))
        level = r_alpha * (r / r_omega) ** gamma
        d = v if q_mat is None else q_mat @ v
        return d * (level / r)

    def transport_clamped(v):
        # feed points sit past the chamber boundary; cap the probe level at
        # the overhang the absorption certificate actually covers
        v = np.asarray(v, dtype=float)
        r = float(np.linalg.norm(v))
        level = r_alpha * min((r / r_omega) ** gamma, _CHAMBER_OVERHANG)
        d = v if q_mat is None else q_mat @ v
        return d * (level / r)

    def transport_back(z):
        z = np.asarray(z, dtype=float)
        g = float(np.linalg.norm(z))
        r = r_omega * (g / r_alpha) ** (1.0 / gamma)
        d = z if q_mat is None else q_mat.T @ z
        return d * (r / g)

    def e_level(rho_y):
        return r_core * (r_alpha / r_core) ** (rho_y / r_omega)

    def to_sphere(x):
        v = enc(x)
        if v is None or float(np.linalg.norm(v)) >= r_omega:
            return None
        return chart.from_plane(transport(v))

    def from_sphere(s):
        return dec(transport_back(chart.to_plane(s)))

    def step_state(x):
        x = np.asarray(x, dtype=float)
        v = enc(x)
        if v is not None and float(np.linalg.norm(v)) < r_omega:
            if float(np.linalg.norm(v)) == 0.0:
                # the transport loses its direction at the center; the map
                # extends continuously because the chart map does not
                z = fc(np.zeros(dim))
                return x.copy() if float(np.linalg.norm(z)) == 0.0 else dec(
                    transport_back(z)
                )
            return dec(transport_back(fc(transport(v))))
        y = base.step_state(x)
        vy = enc(y)
        if vy is None or float(np.linalg.norm(vy)) >= r_omega:
            return y
        # feed shell: the base map hands this point into the implant
        ny = float(np.linalg.norm(vy))
        if v is None:
            kap = 1.0
        else:
            dv = float(np.linalg.norm(v)) - r_omega
            xi = dv / (dv + (r_omega - ny))
            kap = float(standard_collar(_clamp01(xi / width)))
        if ny == 0.0:
            ref = v if v is not None else np.eye(dim)[0]
            dir_e = ref if q_mat is None else q_mat @ ref
            dir_e = dir_e / float(np.linalg.norm(dir_e))
        else:
            dir_e = (vy if q_mat is None else q_mat @ vy) / ny
        z_e = dir_e * e_level(ny)
        if kap == 1.0:
            return dec(transport_back(z_e))
        try:
            z_s = fc(transport_clamped(v))
        except ChartError:
            z_s = None
        if z_s is None or not np.all(np.isfinite(z_s)):
            return dec(transport_back(z_e))
        g_s = float(np.linalg.norm(z_s))
        g_e = float(np.linalg.norm(z_e))
        level = math.exp((1.0 - kap) * math.log(g_s) + kap * math.log(g_e))
        d = (1.0 - kap) * (z_s / g_s) + kap * dir_e
        nd = float(np.linalg.norm(d))
        if nd < 1e-12:
            d, nd = dir_e, 1.0
        return dec(transport_back(d * (level / nd)))

    invertible = base.back_state is not None and sphere_sys.back_state is not None
    back_state = None
    if invertible:

        def back_state(xp):
            xp = np.asarray(xp, dtype=float)
            vp = enc(xp)
            if vp is None or float(np.linalg.norm(vp)) >= r_omega:
                # images outside the ball come only from the untouched zone
                return base.back_state(xp)
            z = transport(vp)
            try:
                w_pre = fc_back(z)
                v = transport_back(w_pre)
                if float(np.linalg.norm(v)) < r_omega:
                    cand = dec(v)
                    if base_man.distance(step_state(cand), xp) <= 1e-10:
                        return cand
            except (ChartError, ArithmeticError):
                pass
            g = float(np.linalg.norm(z))
            dirs = []
            d_img = (z if q_mat is None else q_mat.T @ z) / g
            dirs.append(d_img)
            try:
                # if the crossing were pure chart dynamics, the preimage ray
                # would be the pulled-back image direction
                w_pre = fc_back(z)
                nw = float(np.linalg.norm(w_pre))
                if nw > 0.0 and np.all(np.isfinite(w_pre)):
                    dirs.append((w_pre if q_mat is None else q_mat.T @ w_pre) / nw)
            except (ChartError, ArithmeticError):
                pass
            seeds = []
            if g > r_core:
                rho_y = r_omega * math.log(g / r_core) / math.log(r_alpha / r_core)
                y_guess = dec(d_img * min(rho_y, 0.999 * r_omega))
                try:
                    vg = enc(base.back_state(y_guess))
                    if vg is not None and float(np.linalg.norm(vg)) > r_omega:
                        seeds.append(vg)
                except (ChartError, ArithmeticError):
                    pass
            for d in dirs:
                for ratio in (1.005, 1.05, 1.2, 1.5):
                    seeds.append(d * (ratio * r_omega))

            def residual_at(v):
                img = enc(step_state(dec(v)))
                return None if img is None else img - vp

            lo_r, hi_r = r_omega * (1.0 + 1e-9), r_omega * 4.0
            for v0 in seeds:
                v = np.asarray(v0, dtype=float)
                resid = residual_at(v)
                if resid is None:
                    continue
                for _ in range(50):
                    rn = float(np.linalg.norm(resid))
                    if rn < 1e-13:
                        break
                    h = 1e-7
                    jac = np.empty((dim, dim))
                    for j in range(dim):
                        vv = v.copy()
                        vv[j] += h
                        rj = residual_at(vv)
                        if rj is None:
                            jac = None
                            break
                        jac[:, j] = (rj - resid) / h
                    if jac is None:
                        break
                    try:
                        dv = np.linalg.solve(jac, -resid)
                    except np.linalg.LinAlgError:
                        break
                    nd = float(np.linalg.norm(dv))
                    if nd > 0.3 * r_omega:
                        dv *= 0.3 * r_omega / nd
                    stepped = None
                    for damp in (1.0, 0.5, 0.25, 0.125, 0.0625):
                        vn = v + damp * dv
                        rv = float(np.linalg.norm(vn))
                        if not lo_r < rv < hi_r:
                            vn = vn * (min(max(rv, lo_r * 1.001), hi_r * 0.999) / rv)
                        r_new = residual_at(vn)
                        if r_new is not None and float(np.linalg.norm(r_new)) < rn:
                            stepped = (vn, r_new)
                            break
                    if stepped is None:
                        break
                    v, resid = stepped
                cand = dec(v)
                if base_man.distance(step_state(cand), xp) <= 1e-10:
                    return cand
            raise ArithmeticError("no preimage located in the connected-sum neck")

    # fold detection across the feed shell
    feed_dirs = _unit_rows(rng, 48, dim)
    feed_pts = []
    for d in feed_dirs:
        lo, hi = r_omega * 1.0001, r_omega * 3.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            y = base.step_state(dec(d * mid))
            vy = enc(y)
            inside = vy is not None and float(np.linalg.norm(vy)) < r_omega
            if inside:
                lo = mid
            else:
                hi = mid
        for t in np.linspace(0.02, 0.98, 9):
            feed_pts.append(d * (r_omega * 1.0001 + t * (lo - r_omega * 1.0001)))
    feed_pts = np.array(feed_pts)

    # sampled injectivity: feed-shell images must not collide with each other
    # or with implant images (zone separation handles everything else)
    implant_levels = np.linspace(0.15, 0.98, 8)
    implant_pts = np.concatenate(
        [_unit_rows(rng, 40, dim) * (lv * r_omega) for lv in implant_levels]
    )
    cloud = np.concatenate([feed_pts, implant_pts])
    cloud_imgs = []
    for v in cloud:
        vi = enc(step_state(dec(v)))
        if vi is None:
            raise ConstructionError("neck image escaped the base chart")
        cloud_imgs.append(vi)
    cloud_imgs = np.array(cloud_imgs)

    def _base_collapse(va, vb):
        # a base with subresolution contraction sends distinct feed points to
        # one bit pattern; only a base that already declares itself
        # forward-only may excuse a collision this way
        if base.back_state is not None:
            return False
        if min(float(np.linalg.norm(va)), float(np.linalg.norm(vb))) <= r_omega:
            return False
        ya = enc(base.step_state(dec(va)))
        yb = enc(base.step_state(dec(vb)))
        if ya is None or yb is None:
            return False
        return float(np.linalg.norm(ya - yb)) < 1e-12

    pair_d, pair_i = cKDTree(cloud_imgs).query(cloud_imgs, k=2)
    for idx, (d_img, j) in enumerate(zip(pair_d[:, 1], pair_i[:, 1])):
        if d_img < 1e-9 and float(np.linalg.norm(cloud[idx] - cloud[j])) > 1e-5:
            if _base_collapse(cloud[idx], cloud[j]):
                continue
            raise ConstructionError(
                f"collar width {width:g} is too thin for a monotone crossing "
                f"through the neck (sampled images collide); widen it, "
                f"collar_width >= {min(0.95, 2.0 * width):g} should cross cleanly"
            )

    det_signs = []
    for v in feed_pts[:: max(1, len(feed_pts) // 160)]:
        h = 1e-6 * r_omega
        yb0 = enc(base.step_state(dec(v)))
        if yb0 is not None:
            # a numerically constant base leaves no orientation to check
            moved = 0.0
            for j in range(dim):
                vv = v.copy()
                vv[j] += h
                ybj = enc(base.step_state(dec(vv)))
                if ybj is not None:
                    moved = max(moved, float(np.linalg.norm(ybj - yb0)) / h)
            if moved < 1e-9:
                continue
        cols = []
        f0 = enc(step_state(dec(v)))
        if f0 is None:
            continue
        for j in range(dim):
            vv = v.copy()
            vv[j] += h
            fj = enc(step_state(dec(vv)))
            if fj is None:
                cols = None
                break
            cols.append((fj - f0) / h)
        if cols is None:
            continue
        det_signs.append(math.copysign(1.0, float(np.linalg.det(np.array(cols).T))))
    if det_signs and (min(det_signs) != max(det_signs)):
        raise ConstructionError(
            f"collar width {width:g} is too thin for a monotone crossing through "
            f"the neck (fold detected); widen it, collar_width >= "
            f"{min(1.0, 10.0 * width):g} should cross cleanly"
        )

    # census assembly: base records survive in the untouched zone, sphere
    # records ride in through the transport, the excised source is gone
    records = []
    consumed_base = 0
    for rec in base.fixed_points:
        if rec.location.at_infinity:
            records.append(rec)
            continue
        v = enc(rec.location.state)
        if v is not None and float(np.linalg.norm(v)) < r_omega:
            consumed_base += 1
            if rec.kind != "sink":
                raise ConstructionError(
                    f"base record {rec.label or rec.kind} inside the neck is not the sink"
                )
            continue
        if _fixed_residual(step_state, base_man, rec.location.state) > 1e-10:
            raise ConstructionError(
                f"base record {rec.label or rec.kind} was disturbed by the surgery"
            )
        records.append(rec)
    if consumed_base != 1:
        raise ConstructionError(
            f"expected exactly the sink inside the neck, found {consumed_base} records"
        )
    for rec in kept_sphere:
        w_rec = chart.to_plane(rec.location.state)
        g_rec = float(np.linalg.norm(w_rec))
        if g_rec >= r_alpha:
            raise ConstructionError(
                f"sphere record {rec.label or rec.kind} sits outside the chamber"
            )
        if g_rec == 0.0:
            # at the transport center the radial power reparametrizes rates
            loc = omega.copy()
            mults = tuple(abs(float(m)) ** (1.0 / gamma) for m in rec.multipliers)
        else:
            # elsewhere the transport conjugates, so moduli carry over as is
            loc = dec(transport_back(w_rec))
            mults = tuple(rec.multipliers)
            if _fixed_residual(step_state, base_man, loc) > 1e-11 and g_rec > 1e-3:
                loc = _polish_fixed(step_state, base_man, loc)
        resid = _fixed_residual(step_state, base_man, loc)
        if resid > 1e-10:
            raise ConstructionError(
                f"transported record {rec.label or rec.kind} drifts by {resid:.3g}"
            )
        kind = classify_multipliers(mults)
        if kind != rec.kind:
            raise ConstructionError(
                f"transported record changed kind: {rec.kind} became {kind}"
            )
        records.append(
            FixedPointRecord(Point(base_man, loc), kind, mults, f"implanted {rec.label or rec.kind}")
        )

    inner_region = sphere_sys.extras.get("trapping_region")
    if inner_region is None:
        raise ConstructionError(f"{sphere_sys.name} carries no trapping region")
    far_reference = chart.from_plane(_unit_rows(rng, 1, dim)[0] * 5.0 * r_alpha)

    def region_to_inner(x):
        s = to_sphere(x)
        return far_reference if s is None else s

    region = TransportedRegion(base_man, inner_region, region_to_inner, from_sphere)

    extras = {
        "trapping_region": region,
        "sum_base": base,
        "sum_sphere": sphere_sys,
        "sum_to_sphere": to_sphere,
        "sum_from_sphere": from_sphere,
        "neck": {
            "sink_center": omega.copy(),
            "sink_radius": r_omega,
            "source_radius": r_alpha,
            "collar_width": width,
            "core_fraction": core_fraction,
            "core_gauge": r_core,
        },
    }
    seed = sphere_sys.extras.get("attractor_seed")
    if seed is not None:
        extras["attractor_seed"] = from_sphere(np.atleast_1d(seed))

    base_fast = base.extras.get("fast_step_many")

    def fast_step_many(X):
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        enc_rows = np.empty((len(X), dim))
        inside = np.zeros(len(X), dtype=bool)
        for i, x in enumerate(X):
            v = enc(x)
            if v is not None:
                enc_rows[i] = v
                inside[i] = float(np.linalg.norm(v)) < r_omega
        if inside.any():
            V = enc_rows[inside]
            Z = np.array([transport(v) for v in V])
            imgs = chart.to_plane_many(sphere_sys.step_many(chart.from_plane_many(Z)))
            out[inside] = np.array([dec(transport_back(z)) for z in imgs])
        rest = ~inside
        if rest.any():
            ys = base_fast(X[rest]) if base_fast is not None else np.array(
                [base.step_state(x) for x in X[rest]]
            )
            rows = np.flatnonzero(rest)
            for i, y in zip(rows, ys):
                vy = enc(y)
                if vy is None or float(np.linalg.norm(vy)) >= r_omega:
                    out[i] = y
                else:
                    out[i] = step_state(X[i])
        return out

    extras["fast_step_many"] = fast_step_many

    params = {
        "sink_radius": r_omega,
        "source_radius": r_alpha,
        "collar_width": width,
        "core_fraction": core_fraction,
    }
    if neck.sink_center is not None:
        params["sink_center"] = [float(c) for c in omega]
    if q_mat is not None:
        params["boundary_map"] = "custom"

    spec = SystemSpec(
        name=f"{base.name}#{sphere_sys.name}",
        manifold=base_man,
        step_state=step_state,
        back_state=back_state,
        fixed_points=tuple(records),
        recipe=derived_recipe(
            "connected_sum", [base.recipe, sphere_sys.recipe], **params
        ),
        declared_attractor_dim=sphere_sys.declared_attractor_dim,
        declared_orientable=sphere_sys.declared_orientable,
        extras=extras,
    )
    validate_system(spec)
    return spec


# ---------------------------------------------------------------------------
# theorem-level drivers


# symmetric tridiagonal unimodular matrices with exactly one contracting
# eigenvalue; symmetry keeps the eigenframe orthogonal, which the round-ball
# trapping certificate of the surgery needs
_CODIM_ONE_KNOWN = {
    3: ((-2, -1, 0), (-1, -2, -1), (0, -1, -1)),
    4: ((-2, -1, 0, 0), (-1, -2, -2, 0), (0, -2, -2, -1), (0, 0, -1, 1)),
    5: (
        (-2, -1, 0, 0, 0),
        (-1, -2, -2, 0, 0),
        (0, -2, -2, -1, 0),
        (0, 0, -1, 1, -1),
        (0, 0, 0, -1, -1),
    ),
    6: (
        (-2, -1, 0, 0, 0, 0),
        (-1, -2, -2, 0, 0, 0),
        (0, -2, -2, -1, 0, 0),
        (0, 0, -1, 0, -2, 0),
        (0, 0, 0, -2, -2, -1),
        (0, 0, 0, 0, -1, 2),
    ),
}


def _one_contracting(mat: np.ndarray) -> bool:
    mods = np.abs(np.linalg.eigvalsh(mat))
    if int(np.sum(mods < 0.999)) != 1 or mods.min() > 0.75:
        return False
    return not bool(np.any((mods > 0.999) & (mods < 1.25)))


def _search_codim_one(n: int, budget: int = 2_000_000) -> np.ndarray:
    diag_vals = (-2, -1, 0, 1, 2)
    off_vals = (-2, -1, 1, 2)
    tried = 0
    for diag in itertools.product(diag_vals, repeat=n):
        for off in itertools.product(off_vals, repeat=n - 1):
            tried += 1
            if tried > budget:
                raise ConstructionError(
                    f"no codimension-one automorphism found for n = {n} "
                    f"within the search budget"
                )
            d0, d1 = 1, diag[0]
            for k in range(1, n):
                d0, d1 = d1, diag[k] * d1 - off[k - 1] * off[k - 1] * d0
            if abs(d1) != 1:
                continue
            mat = np.diag(np.asarray(diag, dtype=float))
            for i, b in enumerate(off):
                mat[i, i + 1] = b
                mat[i + 1, i] = b
            if _one_contracting(mat):
                return mat
    raise ConstructionError(f"no codimension-one automorphism found for n = {n}")


def _codim_one_matrix(n: int) -> np.ndarray:
    """An integer hyperbolic matrix on the n-torus with a single contracting line."""
    if n == 2:
        return np.array([[2.0, 1.0], [1.0, 1.0]])
    if n in _CODIM_ONE_KNOWN:
        mat = np.array(_CODIM_ONE_KNOWN[n], dtype=float)
        if not _one_contracting(mat):
            raise ConstructionError(f"stored automorphism for n = {n} went bad")
        return mat
    return _search_codim_one(n)


def build_torus_attractor(n: int, d: int) -> SystemSpec:
    """A d-dimensional expanding attractor on the n-torus.

    Full codimension one comes straight from surgery on a hyperbolic
    automorphism; lower d pads the (d+1)-torus surgery with a gradient
    factor whose sink carries the attractor.
    """
    n, d = int(n), int(d)
    if not 1 <= d <= n - 1:
        raise ConstructionError(
            f"torus family needs 1 <= d <= n - 1, got (n, d) = ({n}, {d})"
        )
    if d == n - 1:
        aut = toral_automorphism(_codim_one_matrix(n))
        if n == 2:
            return da_surgery(aut)
        # deeper contraction needs a proportionally stronger outward push
        lam = abs(float(aut.extras["stable_eigenvalue"]))
        return da_surgery(aut, SurgeryParams(strength=1.3 * math.log(1.0 / lam)))
    return with_sink(build_torus_attractor(d + 1, d), torus_gradient_ms(n - d - 1))


_SPHERE_CACHE: dict = {}


def build_sphere_attractor(n: int, d: int) -> SystemSpec:
    """A d-dimensional expanding attractor on the n-sphere.

    The base case is the quotient construction on the 2-sphere; raising n at
    d = 1 spins the system through a tube; raising d caps the 2-sphere base
    with a recursively built factor.
    """
    n, d = int(n), int(d)
    if n < 2 or d < 1 or d > n // 2:
        raise ConstructionError(
            f"sphere family needs n >= 2 and 1 <= d <= floor(n/2) = {n // 2}, "
            f"got (n, d) = ({n}, {d})"
        )
    key = (n, d)
    if key in _SPHERE_CACHE:
        return _SPHERE_CACHE[key]
    if (n, d) == (2, 1):
        sys = plykin_system()
    elif d == 1:
        sys = tube_spinup(build_sphere_attractor(n - 1, 1))
    else:
        sys = capped_product(
            build_sphere_attractor(2, 1), build_sphere_attractor(n - 2, d - 1)
        )
    _SPHERE_CACHE[key] = sys
    return sys


def build_any_manifold(base_ms: SystemSpec, d: int) -> SystemSpec:
    """Implant a sphere attractor into any supported gradient-like world.

    The neck collar is widened automatically when the base flow crosses
    the feed shell too steeply for the default width.
    """
    sphere = build_sphere_attractor(base_ms.manifold.dim, int(d))
    last = None
    for width in (None, 0.75, 0.9, 0.95):
        neck = None if width is None else NeckParams(collar_width=width)
        try:
            return connected_sum(base_ms, sphere, neck)
        except ConstructionError as err:
            if "too thin" not in str(err):
                raise
            last = err
    raise last


# ---------------------------------------------------------------------------
# recipe builders


def _build_tube(node: Recipe):
    if node.param("profile") != "standard":
        raise ConstructionError(
            "recipe names a custom spin profile, which cannot be serialized"
        )
    return tube_spinup(build_recipe(node.children[0]))


def _build_sum(node: Recipe):
    if node.param("boundary_map") == "custom":
        raise ConstructionError(
            "recipe names a custom boundary identification, which cannot be serialized"
        )
    center = node.param("sink_center")
    neck = NeckParams(
        sink_center=None if center is None else np.array(center, dtype=float),
        sink_radius=float(node.param("sink_radius")),
        source_radius=float(node.param("source_radius")),
        collar_width=float(node.param("collar_width")),
        core_fraction=float(node.param("core_fraction")),
    )
    return connected_sum(
        build_recipe(node.children[0]), build_recipe(node.children[1]), neck
    )


register_builder("product", lambda node: product([build_recipe(c) for c in node.children]))
register_builder(
    "with_sink",
    lambda node: with_sink(build_recipe(node.children[0]), build_recipe(node.children[1])),
)
register_builder("tube_spinup", _build_tube)
register_builder(
    "capped_product",
    lambda node: capped_product(
        build_recipe(node.children[0]),
        build_recipe(node.children[1]),
        corner=float(node.param("corner")),
        spin_end=float(node.param("spin_end")),
        rate=float(node.param("rate")),
    ),
)
register_builder("connected_sum", _build_sum)
register_builder("suspension", lambda node: suspension(build_recipe(node.children[0])))
