"""Numerical verification toolkit: orbit sampling, trapping checks,
Lyapunov spectra, box-counting dimensions, hyperbolicity cone tests,
periodic censuses, transverse-structure probes, and mixing coverage.

Every routine takes an explicit seed and is deterministic for a fixed
seed; floating-point accumulations run in a fixed order, so results do
not depend on chunk sizes.  Functions return small report objects that
keep their raw data (scales, counts, per-seed values) alongside the
headline number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Manifold, QuotientSphere, Torus, torus_delta, wrap_torus
from .recipes import recipe_hash
from .systems import SystemSpec


class AnalysisError(RuntimeError):
    """A verification routine could not produce a trustworthy answer."""


# ---------------------------------------------------------------------------
# coordinates for counting

# Box counting, transverse probes, and mixing grids need coordinates in a
# fixed Euclidean chart.  A declared global chart (sphere models keep one in
# extras) wins because it is bi-Lipschitz on the attractor; otherwise the raw
# state coordinates serve: torus states live in the unit cube already and
# embedded-sphere coordinates preserve box dimension.


def state_coordinates(system: SystemSpec, points: np.ndarray) -> np.ndarray:
    chart = system.extras.get("global_chart")
    if chart is None:
        return np.asarray(points, dtype=float)
    coords = chart.to_plane_many(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(coords)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(coords), axis=1))[0])
        raise AnalysisError(
            f"{system.name}: chart coordinates blow up at sample index {bad}"
        )
    return coords


def _cell_keys(coords: np.ndarray, eps: float) -> np.ndarray:
    """Occupied-cell identifiers on a hashed sparse grid of size eps."""
    cells = np.floor(coords / eps).astype(np.int64)
    lo = cells.min(axis=0)
    cells -= lo
    extent = cells.max(axis=0) + 1
    if float(np.prod(extent.astype(float))) < 2**62:
        key = cells[:, 0].copy()
        for j in range(1, cells.shape[1]):
            key *= int(extent[j])
            key += cells[:, j]
        return np.unique(key)
    # mixed-radix overflow: fall back to row-wise uniqueness
    packed = np.unique(cells, axis=0)
    return np.arange(len(packed))


# ---------------------------------------------------------------------------
# attractor samples


@dataclass
class AttractorSample:
    """Forward-orbit point cloud after a discarded transient."""

    system_name: str
    recipe_id: str
    points: np.ndarray
    coords: np.ndarray
    transient: int
    seed: int
    x0: np.ndarray
    min_trap_depth: Optional[float] = None

    def __len__(self) -> int:
        return len(self.points)

    def describe(self) -> str:
        trap = (
            "no trapping region declared"
            if self.min_trap_depth is None
            else f"min trapping depth {self.min_trap_depth:.3g}"
        )
        return (
            f"{len(self.points)} points of {self.system_name} "
            f"after {self.transient} transient steps; {trap}"
        )


def orbit_sample(
    system: SystemSpec,
    n: int,
    transient: int = 1000,
    x0: Optional[np.ndarray] = None,
    seed: int = 2024,
) -> AttractorSample:
    """Iterate forward, discard the transient, and keep n states.

    Deterministic for fixed (seed, transient, n).  When the system
    declares a trapping region, every stored point is required to stay
    inside it; a violation or a non-finite state aborts with the step
    index rather than returning a poisoned cloud.
    """
    n = int(n)
    transient = int(transient)
    if n <= 0 or transient < 0:
        raise AnalysisError("need n > 0 and transient >= 0")
    region = system.extras.get("trapping_region")
    if x0 is None:
        rng = np.random.default_rng(seed)
        if region is not None and not getattr(region, "degenerate", False):
            x0 = region.sample_states(1, rng)[0]
        else:
            seeded = system.extras.get("attractor_seed")
            x0 = seeded if seeded is not None else system.manifold.random_states(rng, 1)[0]
    x0 = np.asarray(x0, dtype=float)

    points = system.orbit(x0, n, burn=transient)
    finite = np.all(np.isfinite(points), axis=1)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise AnalysisError(
            f"{system.name}: orbit diverged at step {transient + bad + 1}"
        )

    min_depth = None
    if region is not None and not getattr(region, "degenerate", False):
        depths = region.depth_many(points)
        min_depth = float(np.min(depths))
        if min_depth < 0.0:
            bad = int(np.argmin(depths))
            raise AnalysisError(
                f"{system.name}: sampled point {bad} leaves the trapping "
                f"region by {-min_depth:.3g}"
            )

    return AttractorSample(
        system_name=system.name,
        recipe_id=recipe_hash(system.recipe) if system.recipe is not None else "",
        points=points,
        coords=state_coordinates(system, points),
        transient=transient,
        seed=int(seed),
        x0=x0,
        min_trap_depth=min_depth,
    )


# ---------------------------------------------------------------------------
# trapping verification


@dataclass
class TrappingReport:
    region_note: str
    resolution: int
    samples: int
    margin: float
    passed: bool
    proper: bool
    worst_state: Optional[np.ndarray]

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        if not self.proper:
            return f"trapping: {status} ({self.region_note})"
        return (
            f"trapping: {status}, margin {self.margin:.4g} over "
            f"{self.samples} samples of {self.region_note}"
        )


def verify_trapping(
    system: SystemSpec,
    region=None,
    resolution: int = 512,
    seed: int = 7,
    required_margin: float = 0.0,
) -> TrappingReport:
    """Sample the region, push one step, and measure worst penetration.

    The margin is the minimum depth of any image point inside the
    region; pass requires margin > required_margin.  A degenerate
    whole-space region passes trivially but is flagged as improper.
    """
    if region is None:
        region = system.extras.get("trapping_region")
    if region is None:
        raise AnalysisError(f"{system.name} declares no trapping region")
    resolution = int(resolution)

    if getattr(region, "degenerate", False):
        return TrappingReport(
            region_note=region.describe(),
            resolution=resolution,
            samples=0,
            margin=math.inf,
            passed=True,
            proper=False,
            worst_state=None,
        )

    rng = np.random.default_rng(seed)
    blocks = []
    if hasattr(region, "grid_states"):
        blocks.append(region.grid_states(resolution))
    else:
        blocks.append(region.interior_states(min(resolution * resolution, 262144), rng))
    blocks.append(region.boundary_states(max(resolution * 8, 1024), rng))
    sample = np.concatenate(blocks, axis=0)
    inside = region.depth_many(sample) >= 0.0
    sample = sample[inside]
    if len(sample) == 0:
        raise AnalysisError("no sample points landed inside the region")

    depths = region.depth_many(system.step_many(sample))
    worst = int(np.argmin(depths))
    margin = float(depths[worst])
    return TrappingReport(
        region_note=region.describe(),
        resolution=resolution,
        samples=int(len(sample)),
        margin=margin,
        passed=bool(margin > required_margin),
        proper=True,
        worst_state=sample[worst],
    )


# ---------------------------------------------------------------------------
# Lyapunov spectra


@dataclass
class LyapunovReport:
    exponents: np.ndarray
    per_seed: np.ndarray
    spread: float
    orbit_length: int
    renorm_interval: int
    seeds: int
    is_flow: bool
    converged: bool

    def describe(self) -> str:
        vals = ", ".join(f"{v:+.4f}" for v in self.exponents)
        tag = "" if self.converged else "  [NOT CONVERGED]"
        return (
            f"lyapunov: [{vals}] over {self.orbit_length} steps x "
            f"{self.seeds} seeds, spread {self.spread:.2e}{tag}"
        )


def _fd_tangent_many(system: SystemSpec, X: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Batched central-difference tangents in the local encode charts."""
    man = system.manifold
    m, k = len(X), man.dim
    Y = system.step_many(X)
    out = np.empty((m, k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        Xp = np.array([man.decode(x, e) for x in X])
        Xm = np.array([man.decode(x, -e) for x in X])
        Yp = system.step_many(Xp)
        Ym = system.step_many(Xm)
        for i in range(m):
            out[i, :, j] = (
                np.asarray(man.encode(Y[i], Yp[i])) - np.asarray(man.encode(Y[i], Ym[i]))
            ) / (2.0 * h)
    return out


def _tangent_batch(system: SystemSpec, X: np.ndarray) -> np.ndarray:
    if system.extras.get("fast_tangent_many") is not None:
        return system.extras["fast_tangent_many"](X)
    if system.tangent_state is not None:
        return np.array([system.tangent_state(x) for x in X])
    return _fd_tangent_many(system, X)


def lyapunov_spectrum(
    system: SystemSpec,
    n: int = 200_000,
    renorm: int = 10,
    seeds: int = 5,
    transient: int = 1000,
    seed0: int = 2024,
    x0: Optional[np.ndarray] = None,
    spread_tol: float = 2e-2,
) -> LyapunovReport:
    """Average log expansion of an orthonormal frame along orbits.

    The frame is re-orthonormalized by QR every renorm steps; exponents
    are per unit time, sorted descending, averaged across seeds with the
    across-seed spread reported.  Spread beyond 10x spread_tol marks the
    report as not converged; it is never silently clipped.
    """
    n = int(n)
    renorm = max(1, int(renorm))
    seeds = max(1, int(seeds))
    man = system.manifold
    k = man.dim
    region = system.extras.get("trapping_region")

    starts = []
    for i in range(seeds):
        if x0 is not None:
            starts.append(np.asarray(x0, dtype=float))
            continue
        rng = np.random.default_rng(seed0 + i)
        if region is not None and not getattr(region, "degenerate", False):
            starts.append(region.sample_states(1, rng)[0])
        else:
            seeded = system.extras.get("attractor_seed")
            if seeded is not None and i == 0:
                starts.append(np.asarray(seeded, dtype=float))
            else:
                starts.append(man.random_states(rng, 1)[0])

    fast = system.extras.get("fast_lyap")
    per_seed = np.empty((seeds, k))
    if fast is not None:
        for i, s in enumerate(starts):
            per_seed[i] = np.sort(np.asarray(fast(s, n, transient, renorm)))[::-1]
    else:
        X = np.array(starts)
        for _ in range(int(transient)):
            X = system.step_many(X)
        rng = np.random.default_rng(seed0)
        Q = np.linalg.qr(rng.standard_normal((seeds, k, k)))[0]
        acc = np.zeros((seeds, k))
        done = 0
        while done < n:
            block = min(renorm, n - done)
            for _ in range(block):
                J = _tangent_batch(system, X)
                Q = np.einsum("sij,sjk->sik", J, Q)
                X = system.step_many(X)
            Q, R = np.linalg.qr(Q)
            diag = np.abs(np.einsum("sii->si", R))
            if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
                raise AnalysisError("tangent frame degenerated during averaging")
            acc += np.log(diag)
            done += block
        per_seed = np.sort(acc / float(n), axis=1)[:, ::-1]

    exponents = per_seed.mean(axis=0)
    spread = float(np.max(per_seed.max(axis=0) - per_seed.min(axis=0))) if seeds > 1 else 0.0
    return LyapunovReport(
        exponents=exponents,
        per_seed=per_seed,
        spread=spread,
        orbit_length=n,
        renorm_interval=renorm,
        seeds=seeds,
        is_flow=bool(system.extras.get("is_flow", False)),
        converged=bool(spread <= 10.0 * spread_tol),
    )


def unstable_dim(report: LyapunovReport, neutral_tol: float = 5e-3) -> int:
    """Count positive exponents; flows may carry exactly one neutral one.

    An exponent inside the neutral band that is not the flow direction
    is ambiguous and raises rather than guessing.
    """
    vals = np.asarray(report.exponents, dtype=float)
    near_zero = np.abs(vals) < neutral_tol
    if report.is_flow:
        if int(near_zero.sum()) != 1:
            raise AnalysisError(
                f"flow spectrum needs exactly one neutral exponent within "
                f"{neutral_tol:g}, found {int(near_zero.sum())}"
            )
        vals = vals[~near_zero]
    elif np.any(near_zero):
        worst = float(vals[near_zero][0])
        raise AnalysisError(
            f"exponent {worst:+.2e} is within {neutral_tol:g} of zero; "
            "unstable dimension is ambiguous at this orbit length"
        )
    return int(np.sum(vals > 0.0))


# ---------------------------------------------------------------------------
# box-counting dimension


@dataclass
class DimensionReport:
    scales: np.ndarray
    counts: np.ndarray
    dimension: float
    r_squared: float
    reliable: bool
    points: int

    def describe(self) -> str:
        tag = "" if self.reliable else "  [UNRELIABLE FIT]"
        return (
            f"box dimension {self.dimension:.3f} (r^2 {self.r_squared:.4f}, "
            f"{len(self.scales)} scales, {self.points} points){tag}"
        )


def box_dimension(
    sample,
    scales: Optional[Sequence[float]] = None,
    max_cell_fraction: float = 0.1,
    min_boxes: int = 20,
    r2_floor: float = 0.98,
) -> DimensionReport:
    """Slope of log N(eps) against log(1/eps) on a sparse hashed grid.

    Scales default to a geometric ladder of ratio sqrt(2) inside the
    cloud diameter, truncated where cells approach one point each (box
    counts there measure the sample, not the set).  At least 5 scales
    spanning two octaves are required; a fit with r^2 below r2_floor is
    flagged unreliable, not hidden.
    """
    coords = sample.coords if isinstance(sample, AttractorSample) else np.asarray(sample, dtype=float)
    npts = len(coords)
    if npts < 100:
        raise AnalysisError("box dimension needs at least 100 points")
    span = coords.max(axis=0) - coords.min(axis=0)
    diameter = float(np.linalg.norm(span))
    if diameter <= 0.0:
        raise AnalysisError("degenerate sample: zero diameter")

    if scales is None:
        ladder = []
        eps = diameter / 4.0
        while len(ladder) < 40:
            ladder.append(eps)
            eps /= math.sqrt(2.0)
        scales_arr = np.array(ladder)
    else:
        scales_arr = np.sort(np.asarray(list(scales), dtype=float))[::-1]
        if np.any(scales_arr > diameter):
            raise AnalysisError("requested scale exceeds the sample diameter")

    kept_scales, kept_counts = [], []
    cap = max_cell_fraction * npts
    for eps in scales_arr:
        count = len(_cell_keys(coords, float(eps)))
        if count < min_boxes:
            continue
        if count > cap:
            break
        kept_scales.append(float(eps))
        kept_counts.append(count)

    if len(kept_scales) < 5 or kept_scales[0] / kept_scales[-1] < 4.0:
        raise AnalysisError(
            f"only {len(kept_scales)} usable scales; need >= 5 spanning two octaves"
        )
    counts = np.array(kept_counts, dtype=float)
    if np.any(np.diff(counts) < 0):
        raise AnalysisError("box counts are not monotone across scales")

    x = np.log(1.0 / np.array(kept_scales))
    y = np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return DimensionReport(
        scales=np.array(kept_scales),
        counts=np.array(kept_counts),
        dimension=float(slope),
        r_squared=float(r2),
        reliable=bool(r2 >= r2_floor),
        points=npts,
    )


# ---------------------------------------------------------------------------
# hyperbolicity cone test


@dataclass
class ConeReport:
    sample_size: int
    aperture: float
    lambda_min: float
    min_expansion: float
    violations: int
    excluded: int
    worst_state: Optional[np.ndarray]

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.min_expansion > self.lambda_min

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"cone check: {status}, {self.violations}/{self.sample_size} "
            f"violations, min expansion {self.min_expansion:.4f} "
            f"(required > {self.lambda_min:.4f}), {self.excluded} excluded"
        )


def cone_check(
    system: SystemSpec,
    sample: AttractorSample,
    aperture: float = 0.3,
    lambda_min: float = 1.05,
    ref_steps: int = 25,
    max_points: int = 400,
    seed: int = 11,
) -> ConeReport:
    """Verify invariance of expansion/contraction cones along the sample.

    Unstable directions come from pushing a frame forward along a
    backward orbit; stable directions from pulling one back along a
    forward orbit.  At each point the unstable cone (slope <= aperture
    around the reference direction) must map into itself with growth of
    the reference component >= lambda_min, and the stable cone must map
    into itself under the inverse tangent map.  Points whose reference
    direction never settles are excluded and counted.

    Requires a flat state space (tangent matrices act on one global
    frame), which covers all torus-based systems.
    """
    if not isinstance(system.manifold, Torus):
        raise AnalysisError("cone check needs a single global tangent frame (torus state space)")
    if lambda_min <= 1.0:
        raise AnalysisError("lambda_min must exceed 1")
    pts = sample.points
    stride = max(1, len(pts) // max_points)
    X = pts[::stride][:max_points]
    m, k = X.shape
    rng = np.random.default_rng(seed)

    def normalize(V):
        return V / np.linalg.norm(V, axis=1, keepdims=True)

    # reference unstable directions: push forward along backward orbits
    path = [X]
    for _ in range(ref_steps):
        path.append(system.back_many(path[-1]))
    U = normalize(rng.standard_normal((m, k)))
    prev = None
    for depth in range(ref_steps, 0, -1):
        J = _tangent_batch(system, path[depth])
        prev = U
        U = normalize(np.einsum("mij,mj->mi", J, U))
    settled_u = np.abs(np.einsum("mi,mi->m", U, prev)) > 1.0 - 1e-8

    # reference stable directions: pull back along forward orbits
    fpath = [X]
    for _ in range(ref_steps):
        fpath.append(system.step_many(fpath[-1]))
    S = normalize(rng.standard_normal((m, k)))
    prev_s = None
    for depth in range(ref_steps, 0, -1):
        J = _tangent_batch(system, fpath[depth - 1])
        prev_s = S
        S = normalize(np.linalg.solve(J, S[..., None])[..., 0])
    settled_s = np.abs(np.einsum("mi,mi->m", S, prev_s)) > 1.0 - 1e-8

    settled = settled_u & settled_s
    excluded = int(m - settled.sum())
    X, U, S = X[settled], U[settled], S[settled]
    mm = len(X)
    if mm == 0:
        return ConeReport(0, aperture, lambda_min, math.nan, 0, excluded, None)

    J = _tangent_batch(system, X)
    JU = np.einsum("mij,mj->mi", J, U)
    U_img = normalize(JU)

    # complement frames per point via QR of [u | identity columns]
    def complement(V):
        base = np.broadcast_to(np.eye(k), (len(V), k, k))
        stacked = np.concatenate([V[:, :, None], base], axis=2)
        q = np.linalg.qr(stacked)[0]
        return q[:, :, 1:k]

    WU = complement(U)
    expansion = np.abs(np.einsum("mi,mi->m", JU, U_img))
    violations = np.zeros(mm, dtype=bool)
    # unstable cone: test extreme rays u + aperture * (+/- w_j)
    for j in range(k - 1):
        for sign in (1.0, -1.0):
            v = U + sign * aperture * WU[:, :, j]
            Jv = np.einsum("mij,mj->mi", J, v)
            a = np.einsum("mi,mi->m", Jv, U_img)
            b = np.linalg.norm(Jv - a[:, None] * U_img, axis=1)
            violations |= b > aperture * np.abs(a) + 1e-10
            violations |= np.abs(a) < lambda_min

    # stable cone under the inverse map, checked at the backward image
    Xb = system.back_many(X)
    Jb = _tangent_batch(system, Xb)
    S_img = normalize(np.linalg.solve(Jb, S[..., None])[..., 0])
    WS = complement(S)
    for j in range(k - 1):
        for sign in (1.0, -1.0):
            v = S + sign * aperture * WS[:, :, j]
            vb = np.linalg.solve(Jb, v[..., None])[..., 0]
            a = np.einsum("mi,mi->m", vb, S_img)
            b = np.linalg.norm(vb - a[:, None] * S_img, axis=1)
            violations |= b > aperture * np.abs(a) + 1e-10

    n_viol = int(violations.sum())
    min_exp = float(expansion.min())
    worst = X[int(np.argmin(expansion))] if n_viol or mm else None
    if n_viol:
        worst = X[int(np.flatnonzero(violations)[0])]
    return ConeReport(
        sample_size=mm,
        aperture=float(aperture),
        lambda_min=float(lambda_min),
        min_expansion=min_exp,
        violations=n_viol,
        excluded=excluded,
        worst_state=worst,
    )


# ---------------------------------------------------------------------------
# periodic census


@dataclass
class CensusReport:
    period: int
    count: int
    locations: np.ndarray
    multipliers: list
    merge_radius: float
    seeds_used: int

    def describe(self) -> str:
        return (
            f"census p={self.period}: {self.count} points "
            f"(merge radius {self.merge_radius:g}, {self.seeds_used} seeds)"
        )


def _census_seed_states(man: Manifold, per_axis: int, seed: int) -> np.ndarray:
    if isinstance(man, Torus):
        axes = [np.linspace(0.0, 1.0, per_axis, endpoint=False) + 0.31 / per_axis] * man.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return wrap_torus(np.stack([g.ravel() for g in mesh], axis=1))
    rng = np.random.default_rng(seed)
    count = min(per_axis ** man.dim, 4096)
    return man.random_states(rng, count)


def _newton_periodic(system: SystemSpec, X: np.ndarray, p: int, anti: bool = False):
    """Vectorized Newton for f^p(x) = x (or = -x upstairs when anti)."""
    man = system.manifold
    k = man.dim
    tol_g, iters, h = 1e-12, 40, 1e-6
    flat = isinstance(man, Torus)

    def apply_p(S):
        for _ in range(p):
            S = system.step_many(S)
        return S

    def residual(S):
        img = apply_p(S)
        target = wrap_torus(-S) if anti else S
        if flat:
            return torus_delta(img, target)
        return np.array([man.encode(target[i], img[i]) for i in range(len(S))])

    active = np.ones(len(X), dtype=bool)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        cur = X[idx]
        g = residual(cur)
        gn = np.linalg.norm(g, axis=1)
        newly_done = gn < tol_g
        if np.all(newly_done):
            active[idx] = False
            break
        # batched finite-difference Jacobian of the residual in chart coords
        J = np.empty((len(cur), k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            if flat:
                Sp, Sm = wrap_torus(cur + e), wrap_torus(cur - e)
            else:
                Sp = np.array([man.decode(s, e) for s in cur])
                Sm = np.array([man.decode(s, -e) for s in cur])
            J[:, :, j] = (residual(Sp) - residual(Sm)) / (2.0 * h)
        dets = np.abs(np.linalg.det(J))
        solvable = dets > 1e-14
        dx = np.zeros_like(g)
        if np.any(solvable):
            dx[solvable] = np.linalg.solve(J[solvable], -g[solvable][..., None])[..., 0]
        # kill seeds whose linearization is singular
        active[idx[~solvable]] = False
        norms = np.linalg.norm(dx, axis=1)
        big = norms > 0.125
        dx[big] *= (0.125 / norms[big])[:, None]
        if flat:
            moved = wrap_torus(cur + dx)
        else:
            moved = np.array([man.canon(man.decode(cur[i], dx[i])) for i in range(len(cur))])
        X[idx] = moved
        active[idx[newly_done]] = False

    g = residual(X)
    good = np.linalg.norm(g, axis=1) < 1e-9
    return X[good]


def periodic_census(
    system: SystemSpec,
    period: int,
    grid_resolution: int = 24,
    merge_radius: float = 1e-6,
    seed: int = 17,
) -> CensusReport:
    """Find all fixed points of the p-th iterate by seeded Newton runs.

    Seeds come from a deterministic grid (lattice on tori, fixed random
    states elsewhere); diverging seeds are dropped silently.  Roots are
    verified to residual 1e-9 and merged within merge_radius.  On the
    involution quotient the equation is solved upstairs for both the
    fixed and the point-swapping branch.
    """
    p = int(period)
    if not 1 <= p <= 4:
        raise AnalysisError("census supports periods 1 through 4")
    if system.extras.get("is_flow"):
        raise AnalysisError("census applies to maps, not flows")

    upstairs = system.extras.get("upstairs")
    if upstairs is not None and isinstance(system.manifold, QuotientSphere):
        work, man = upstairs, system.manifold
        seeds_arr = _census_seed_states(work.manifold, grid_resolution, seed)
        roots = [_newton_periodic(work, seeds_arr.copy(), p, anti=False)]
        roots.append(_newton_periodic(work, seeds_arr.copy(), p, anti=True))
        raw = np.concatenate(roots, axis=0)
        raw = np.array([man.canon(r) for r in raw]) if len(raw) else raw.reshape(0, 2)
    else:
        work, man = system, system.manifold
        seeds_arr = _census_seed_states(man, grid_resolution, seed)
        raw = _newton_periodic(work, seeds_arr.copy(), p, anti=False)
        # a global chart can miss one state; test it directly
        chart = system.extras.get("global_chart")
        if chart is not None and getattr(chart, "missing_state", None) is not None:
            ms = np.asarray(chart.missing_state, dtype=float)
            img = ms.copy()
            for _ in range(p):
                img = system.step_state(img)
            if man.distance(img, ms) < 1e-9:
                raw = np.concatenate([raw, ms[None, :]], axis=0) if len(raw) else ms[None, :]

    reps: list[np.ndarray] = []
    for r in raw:
        if all(man.distance(r, q) > merge_radius for q in reps):
            reps.append(r)
    reps_arr = np.array(reps) if reps else np.zeros((0, man.state_len))

    mults = []
    for r in reps_arr:
        try:
            J = np.eye(man.dim)
            y = r.copy()
            for _ in range(p):
                J = system.tangent(y) @ J
                y = system.step_state(y)
            mults.append(tuple(sorted(np.abs(np.linalg.eigvals(J)), reverse=True)))
        except Exception:
            mults.append(None)

    return CensusReport(
        period=p,
        count=len(reps_arr),
        locations=reps_arr,
        multipliers=mults,
        merge_radius=merge_radius,
        seeds_used=len(seeds_arr),
    )


# ---------------------------------------------------------------------------
# transverse structure probe


@dataclass
class TransversalReport:
    local_count: int
    gaps: np.ndarray
    fill_density: float
    bins: int
    verdict: str

    @property
    def disconnected(self) -> bool:
        return self.verdict in ("disconnected", "cantor-like")

    def describe(self) -> str:
        gaps = ", ".join(f"{g:.3f}" for g in self.gaps[:5])
        return (
            f"transversal probe: {self.verdict} ({self.local_count} local points, "
            f"gaps [{gaps}], unstable fill {self.fill_density:.3f})"
        )


def transversal_cantor_probe(
    sample,
    center: Optional[np.ndarray] = None,
    frame: Optional[tuple] = None,
    radius: float = 0.05,
    bins: int = 240,
    min_points: int = 500,
    gap_floor: float = 0.02,
) -> TransversalReport:
    """Project a local patch of the cloud onto a transverse line.

    The frame defaults to local principal axes: most variance = along
    the attractor, least variance = transverse.  Gaps are maximal empty
    bin runs inside the occupied hull, in units of the hull span.
    Verdicts: cantor-like (gaps on >= 2 scales), disconnected (at least
    one macroscopic gap), connected, or inconclusive (thin local data).
    """
    coords = sample.coords if isinstance(sample, AttractorSample) else np.asarray(sample, dtype=float)
    if center is None:
        centroid = coords.mean(axis=0)
        center = coords[int(np.argmin(np.linalg.norm(coords - centroid, axis=1)))]
    center = np.asarray(center, dtype=float)

    local = coords[np.linalg.norm(coords - center, axis=1) <= radius]
    if len(local) < min_points:
        return TransversalReport(len(local), np.array([]), math.nan, bins, "inconclusive")
    # cap the bin count so Poisson-empty bins stay below the gap floor
    bins = int(min(bins, max(len(local) // 4, 8)))

    if frame is None:
        _, sv, vt = np.linalg.svd(local - local.mean(axis=0), full_matrices=False)
        # transverse = least variance among directions with resolvable
        # extent; a direction the cloud has collapsed onto (a padded or
        # contracted coordinate) carries no countable structure
        resolved = np.flatnonzero(sv >= 1e-3 * sv[0])
        if len(resolved) < 2:
            return TransversalReport(len(local), np.array([]), math.nan, bins, "inconclusive")
        along, transverse = vt[0], vt[resolved[-1]]
    else:
        along, transverse = (np.asarray(v, dtype=float) for v in frame)
        along = along / np.linalg.norm(along)
        transverse = transverse / np.linalg.norm(transverse)

    def gap_profile(direction):
        t = (local - center) @ direction
        lo, hi = float(t.min()), float(t.max())
        if hi - lo <= 0:
            return np.array([]), 0.0
        occupied = np.zeros(bins, dtype=bool)
        idx = np.minimum(((t - lo) / (hi - lo) * bins).astype(int), bins - 1)
        occupied[idx] = True
        runs, run = [], 0
        for cell in occupied:
            if cell:
                if run:
                    runs.append(run)
                run = 0
            else:
                run += 1
        gaps = np.sort(np.array(runs, dtype=float))[::-1] / bins
        return gaps, float(occupied.mean())

    gaps, _ = gap_profile(transverse)
    _, fill = gap_profile(along)

    macro = gaps[gaps >= gap_floor] if len(gaps) else np.array([])
    if len(macro) >= 2 and macro[0] / macro[-1] >= 2.0:
        verdict = "cantor-like"
    elif len(macro) >= 1:
        verdict = "disconnected"
    else:
        verdict = "connected"
    return TransversalReport(len(local), gaps, fill, bins, verdict)


_VERDICT_RANK = {"inconclusive": 0, "connected": 1, "disconnected": 2, "cantor-like": 3}


def transversal_scan(
    sample,
    centers: int = 24,
    radii: Optional[tuple] = None,
    bins: int = 240,
    min_points: int = 400,
    gap_floor: float = 0.02,
) -> TransversalReport:
    """Probe transverse structure at many candidate centers and keep the
    strongest verdict.

    Transverse gaps decay geometrically away from the coarsest folds, so
    most windows on a thick attractor look solid at sampling resolution;
    only windows near a coarse fold, at a window size where the gap is a
    macroscopic fraction of the span, resolve the layering.  Centers are
    strided deterministically through the cloud and the window radius is
    swept as a fraction of the cloud diameter.
    """
    coords = sample.coords if isinstance(sample, AttractorSample) else np.asarray(sample, dtype=float)
    if len(coords) == 0:
        return TransversalReport(0, np.array([]), math.nan, bins, "inconclusive")
    diameter = float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))
    if radii is None:
        radii = tuple(diameter * f for f in (0.02, 0.04, 0.08))

    stride = max(len(coords) // max(centers, 1), 1)
    best: Optional[TransversalReport] = None
    for radius in radii:
        for i in range(0, len(coords), stride):
            rep = transversal_cantor_probe(
                sample,
                center=coords[i],
                radius=radius,
                bins=bins,
                min_points=min_points,
                gap_floor=gap_floor,
            )
            key = (_VERDICT_RANK[rep.verdict], rep.gaps[0] if len(rep.gaps) else 0.0)
            if best is None or key > best_key:
                best, best_key = rep, key
    return best


# ---------------------------------------------------------------------------
# mixing probe


@dataclass
class CoverageCurve:
    steps: np.ndarray
    coverage: np.ndarray
    boxes_visited: int
    boxes_reference: int
    grid: int

    @property
    def final(self) -> float:
        return float(self.coverage[-1]) if len(self.coverage) else 0.0

    def describe(self) -> str:
        return (
            f"mixing: coverage {self.final:.4f} of {self.boxes_reference} boxes "
            f"({self.boxes_visited} visited, grid {self.grid})"
        )


def mixing_probe(
    system: SystemSpec,
    n: int = 1_000_000,
    grid: int = 256,
    reference=None,
    x0: Optional[np.ndarray] = None,
    transient: int = 1000,
    seed: int = 5,
    chunk: int = 131072,
) -> CoverageCurve:
    """Fraction of reference boxes one orbit visits, as the orbit grows.

    The reference box set is the occupied-cell set of a given sample (or
    a union of samples); with no reference on a torus, every grid cell
    counts.  Coverage approaching 1 is the transitivity proxy.
    """
    n, grid = int(n), int(grid)
    man = system.manifold

    def keys_for(coords, lo, width):
        cells = np.clip(((coords - lo) / width * grid).astype(np.int64), 0, grid - 1)
        key = cells[:, 0].copy()
        for j in range(1, cells.shape[1]):
            key *= grid
            key += cells[:, j]
        return key

    # boxes live on the raw state coordinates: bounded for every state
    # space here, and a fixed floor keeps a collapsed reference cloud from
    # being stretched over the whole grid
    if reference is None:
        if not isinstance(man, Torus):
            raise AnalysisError("a reference sample is required off the torus")
        lo = np.zeros(man.dim)
        width = np.ones(man.dim)
        ref_keys = None
        ref_count = grid ** man.dim
    else:
        parts = reference if isinstance(reference, (list, tuple)) else [reference]
        ref_coords = np.concatenate(
            [p.points if isinstance(p, AttractorSample) else np.asarray(p, float) for p in parts]
        )
        lo = ref_coords.min(axis=0)
        hi = ref_coords.max(axis=0)
        width = np.maximum(hi - lo, 0.01)
        ref_keys = np.unique(keys_for(ref_coords, lo, width))
        ref_count = len(ref_keys)

    if x0 is None:
        rng = np.random.default_rng(seed)
        region = system.extras.get("trapping_region")
        if region is not None and not getattr(region, "degenerate", False):
            x0 = region.sample_states(1, rng)[0]
        else:
            x0 = man.random_states(rng, 1)[0]
    x = np.asarray(x0, dtype=float)
    if transient:
        x = system.orbit(x, 1, burn=transient - 1)[0]

    visited = np.array([], dtype=np.int64)
    steps_axis, cov_axis = [], []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        pts = system.orbit(x, m, burn=0)
        x = pts[-1]
        keys = np.unique(keys_for(pts, lo, width))
        if ref_keys is not None:
            keys = keys[np.isin(keys, ref_keys)]
        visited = np.union1d(visited, keys)
        done += m
        steps_axis.append(done)
        cov_axis.append(len(visited) / ref_count)

    return CoverageCurve(
        steps=np.array(steps_axis),
        coverage=np.array(cov_axis),
        boxes_visited=int(len(visited)),
        boxes_reference=int(ref_count),
        grid=grid,
    )


# ---------------------------------------------------------------------------
# the assembled verdict


@dataclass
class ExpandingVerdict:
    system_name: str
    declared_dim: Optional[int]
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def describe(self) -> str:
        head = "PASS" if self.passed else "FAIL"
        lines = [
            f"expanding attractor check [{self.system_name}, d={self.declared_dim}]: {head}"
        ]
        for name, (ok, detail) in self.checks.items():
            lines.append(f"  ({name}) {'pass' if ok else 'FAIL'}: {detail}")
        return "\n".join(lines)


def expanding_attractor_check(
    system: SystemSpec,
    sample: Optional[AttractorSample] = None,
    lyap: Optional[LyapunovReport] = None,
    dim_report: Optional[DimensionReport] = None,
    trapping: Optional[TrappingReport] = None,
    transversal: Optional[TransversalReport] = None,
    declared_dim: Optional[int] = None,
    sample_n: int = 200_000,
    lyap_n: int = 200_000,
    trap_resolution: int = 256,
    seed: int = 2024,
) -> ExpandingVerdict:
    """Four-part verdict: trapping, unstable count, box dimension, gaps.

    (a) a proper trapping region verified with positive margin,
    (b) positive Lyapunov count equal to the declared dimension (>= 1),
    (c) box dimension inside [d, d+1),
    (d) the transverse scan finds disconnected structure somewhere.
    Sub-results are reported individually; nothing raises, so negative
    controls produce an honest FAIL verdict.
    """
    d = declared_dim if declared_dim is not None else system.declared_attractor_dim
    verdict = ExpandingVerdict(system_name=system.name, declared_dim=d)

    # (a) trapping
    try:
        trap = trapping or verify_trapping(system, resolution=trap_resolution, seed=seed)
        if not trap.proper:
            verdict.checks["a"] = (False, f"improper region: {trap.region_note}")
        elif not trap.passed:
            verdict.checks["a"] = (False, f"margin {trap.margin:.3g} not positive")
        else:
            verdict.checks["a"] = (True, f"margin {trap.margin:.3g} at resolution {trap.resolution}")
    except AnalysisError as err:
        verdict.checks["a"] = (False, str(err))

    # (b) unstable dimension
    try:
        rep = lyap or lyapunov_spectrum(system, n=lyap_n, seeds=3, seed0=seed)
        got = unstable_dim(rep)
        if d is None:
            verdict.checks["b"] = (False, f"no declared dimension (measured {got})")
        elif got != d:
            verdict.checks["b"] = (False, f"unstable dimension {got} != declared {d}")
        elif got < 1:
            verdict.checks["b"] = (False, "attractor is a sink: dimension 0")
        else:
            verdict.checks["b"] = (True, f"unstable dimension {got}")
    except AnalysisError as err:
        verdict.checks["b"] = (False, str(err))

    # (c) box dimension within [d, d+1)
    try:
        if sample is None:
            sample = orbit_sample(system, n=sample_n, seed=seed)
        dims = dim_report or box_dimension(sample)
        if d is None:
            verdict.checks["c"] = (False, f"no declared dimension (measured {dims.dimension:.3f})")
        else:
            ok = d <= dims.dimension < d + 1 and dims.reliable
            verdict.checks["c"] = (
                ok,
                f"box dimension {dims.dimension:.3f} vs band [{d}, {d + 1}) "
                f"(r^2 {dims.r_squared:.3f})",
            )
    except AnalysisError as err:
        verdict.checks["c"] = (False, str(err))

    # (d) transverse disconnectedness
    try:
        probe = transversal
        if probe is None and sample is not None:
            probe = transversal_scan(sample)
        if probe is None:
            verdict.checks["d"] = (False, "no sample for the transverse probe")
        elif probe.verdict == "inconclusive":
            verdict.checks["d"] = (False, f"inconclusive: {probe.local_count} local points")
        else:
            verdict.checks["d"] = (probe.disconnected, probe.describe())
    except AnalysisError as err:
        verdict.checks["d"] = (False, str(err))

    return verdict
