"""Candidate trapping regions and invariant-disk geometry.

A region R is a closed subset of a manifold with a signed depth function:
depth(x) > 0 strictly inside, = 0 on the boundary, < 0 outside.  Forward
invariance of R under a map f is certified by sampling: the minimum of
depth(f(x)) over boundary and interior samples is the reported margin.
Depth units are region-specific (documented per class) but consistent
between boundary and image, which is all a margin comparison needs.
"""

from __future__ import annotations

import numpy as np

from .geometry import Manifold, torus_delta, wrap_torus

__all__ = [
    "Region",
    "BallRegion",
    "BallComplementRegion",
    "CapRegion",
    "BandRegion",
    "GaugeDiskRegion",
    "ProductRegion",
    "TransportedRegion",
    "WholeSpaceRegion",
    "InvariantDisk",
    "certify_invariant_disk",
]


class Region:
    kind = "abstract"
    degenerate = False

    def __init__(self, manifold: Manifold):
        self.manifold = manifold

    def depth(self, state: np.ndarray) -> float:
        raise NotImplementedError

    def depth_many(self, states: np.ndarray) -> np.ndarray:
        return np.array([self.depth(s) for s in states])

    def contains(self, state, tol: float = 0.0) -> bool:
        return self.depth(state) >= -tol

    def boundary_states(self, count: int, rng) -> np.ndarray:
        raise NotImplementedError

    def interior_states(self, count: int, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_states(self, count: int, rng) -> np.ndarray:
        nb = count // 2
        return np.concatenate(
            [self.boundary_states(nb, rng), self.interior_states(count - nb, rng)]
        )

    def describe(self) -> str:
        return self.kind


def _unit_directions(count: int, dim: int, rng) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0] if i % 2 == 0 else [-1.0] for i in range(count)])
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class BallComplementRegion(Region):
    """Torus minus an open metric ball.  Depth = distance to center − radius."""

    kind = "ball-complement"

    def __init__(self, manifold, center: np.ndarray, radius: float):
        super().__init__(manifold)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def depth(self, state):
        return float(np.linalg.norm(torus_delta(state, self.center))) - self.radius

    def depth_many(self, states):
        d = states - self.center
        d -= np.floor(d + 0.5)
        return np.linalg.norm(d, axis=1) - self.radius

    def boundary_states(self, count, rng):
        dirs = _unit_directions(count, len(self.center), rng)
        return wrap_torus(self.center + self.radius * dirs)

    def interior_states(self, count, rng):
        out = np.empty((count, len(self.center)))
        have = 0
        while have < count:
            cand = rng.random((2 * (count - have) + 8, len(self.center)))
            keep = cand[self.depth_many(cand) > 0]
            take = min(len(keep), count - have)
            out[have : have + take] = keep[:take]
            have += take
        return out

    def grid_states(self, resolution: int) -> np.ndarray:
        """Full-torus grid restricted to the region, plus a boundary ring."""
        n = len(self.center)
        axes = [(np.arange(resolution) + 0.5) / resolution] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts = pts[self.depth_many(pts) >= 0]
        ring = self.boundary_states(4 * resolution, np.random.default_rng(0))
        return np.concatenate([pts, ring])

    def describe(self):
        c = ", ".join(f"{v:.6g}" for v in self.center)
        return f"torus minus ball(center=({c}), radius={self.radius:.6g})"


class BallRegion(Region):
    """Closed metric ball on the torus.  Depth = radius − distance to center."""

    kind = "ball"

    def __init__(self, manifold, center: np.ndarray, radius: float):
        super().__init__(manifold)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def depth(self, state):
        return self.radius - float(np.linalg.norm(torus_delta(state, self.center)))

    def depth_many(self, states):
        d = states - self.center
        d -= np.floor(d + 0.5)
        return self.radius - np.linalg.norm(d, axis=1)

    def boundary_states(self, count, rng):
        dirs = _unit_directions(count, len(self.center), rng)
        return wrap_torus(self.center + self.radius * dirs)

    def interior_states(self, count, rng):
        n = len(self.center)
        dirs = _unit_directions(count, n, rng)
        radii = self.radius * rng.random(count) ** (1.0 / n)
        return wrap_torus(self.center + radii[:, None] * dirs)

    def describe(self):
        c = ", ".join(f"{v:.6g}" for v in self.center)
        return f"ball(center=({c}), radius={self.radius:.6g})"


class CapRegion(Region):
    """Sublevel cap {height <= h0} on a round sphere.  Depth in height units."""

    kind = "cap"

    def __init__(self, manifold, height0: float = 0.0):
        super().__init__(manifold)
        self.height0 = float(height0)

    def depth(self, state):
        return self.height0 - float(state[-1])

    def depth_many(self, states):
        return self.height0 - states[:, -1]

    def boundary_states(self, count, rng):
        k = self.manifold.dim
        h = self.height0
        r = np.sqrt(max(1.0 - h * h, 0.0))
        dirs = _unit_directions(count, k, rng)
        return np.concatenate([r * dirs, np.full((count, 1), h)], axis=1)

    def interior_states(self, count, rng):
        k = self.manifold.dim
        h = rng.uniform(-1.0, self.height0, count)
        r = np.sqrt(np.maximum(1.0 - h * h, 0.0))
        dirs = _unit_directions(count, k, rng)
        return np.concatenate([r[:, None] * dirs, h[:, None]], axis=1)

    def describe(self):
        return f"spherical cap(height <= {self.height0:.6g})"


class BandRegion(Region):
    """Closed interval [lo, hi] inside a 1D factor.  Depth = distance to ends."""

    kind = "band"

    def __init__(self, manifold, lo: float, hi: float):
        super().__init__(manifold)
        self.lo = float(lo)
        self.hi = float(hi)

    def depth(self, state):
        v = float(np.atleast_1d(state)[0])
        return min(v - self.lo, self.hi - v)

    def boundary_states(self, count, rng):
        vals = [self.lo if i % 2 == 0 else self.hi for i in range(count)]
        return np.array(vals)[:, None]

    def interior_states(self, count, rng):
        return rng.uniform(self.lo, self.hi, count)[:, None]

    def describe(self):
        return f"band[{self.lo:.6g}, {self.hi:.6g}]"


class GaugeDiskRegion(Region):
    """Sublevel set {gauge <= 1} of a continuous gauge.  Depth = 1 − gauge.

    Used for chart-disk regions on spheres, where the gauge is evaluated on
    the system's global plane chart.  `to_states` turns boundary-level chart
    vectors into manifold states.
    """

    kind = "gauge-disk"

    def __init__(self, manifold, gauge, boundary_vectors, to_states, scale_note=""):
        super().__init__(manifold)
        self._gauge = gauge
        self._boundary_vectors = boundary_vectors
        self._to_states = to_states
        self.scale_note = scale_note

    def gauge(self, state) -> float:
        return float(self._gauge(state))

    def depth(self, state):
        return 1.0 - self.gauge(state)

    def boundary_states(self, count, rng):
        return self._to_states(self._boundary_vectors(count, rng))

    def interior_states(self, count, rng):
        # half near-boundary level sets, half rejection over the whole space;
        # the level sets concentrate where invariance can actually fail
        nl = count // 2
        levels = rng.uniform(0.05, 0.999, nl)
        vecs = self._boundary_vectors(nl, rng)
        out = [self._to_states(vecs * levels[:, None])] if nl else []
        have = nl
        while have < count:
            cand = self.manifold.random_states(rng, 2 * (count - have) + 8)
            keep = cand[[self.depth(s) > 1e-3 for s in cand]]
            take = min(len(keep), count - have)
            out.append(keep[:take])
            have += take
        return np.concatenate(out, axis=0)

    def describe(self):
        note = f" ({self.scale_note})" if self.scale_note else ""
        return f"chart disk {{gauge <= 1}}{note}"


class ProductRegion(Region):
    """Product of per-factor regions on a product manifold.

    Depth = min over factors of the factor depth on its slice of the state.
    """

    kind = "product"

    def __init__(self, manifold, factors, splits):
        super().__init__(manifold)
        self.factors = list(factors)
        self.splits = list(splits)  # state slice bounds, len = #factors+1

    def _parts(self, state):
        return [
            state[self.splits[i] : self.splits[i + 1]] for i in range(len(self.factors))
        ]

    def depth(self, state):
        return min(
            f.depth(p) for f, p in zip(self.factors, self._parts(np.asarray(state)))
        )

    def boundary_states(self, count, rng):
        # boundary of a product: one factor at its boundary, others interior
        blocks = []
        nf = len(self.factors)
        for i in range(nf):
            c = count // nf if i < nf - 1 else count - (count // nf) * (nf - 1)
            cols = []
            for j, f in enumerate(self.factors):
                pts = f.boundary_states(c, rng) if j == i else f.interior_states(c, rng)
                cols.append(np.atleast_2d(pts.reshape(c, -1)))
            blocks.append(np.concatenate(cols, axis=1))
        return np.concatenate(blocks, axis=0)

    def interior_states(self, count, rng):
        cols = [
            np.atleast_2d(f.interior_states(count, rng).reshape(count, -1))
            for f in self.factors
        ]
        return np.concatenate(cols, axis=1)

    def describe(self):
        inner = " x ".join(f.describe() for f in self.factors)
        return f"product({inner})"


class TransportedRegion(Region):
    """A region seen through a coordinate transport (connected sums)."""

    kind = "transported"

    def __init__(self, manifold, inner: Region, to_inner, from_inner):
        super().__init__(manifold)
        self.inner = inner
        self._to_inner = to_inner
        self._from_inner = from_inner

    def depth(self, state):
        return self.inner.depth(self._to_inner(state))

    def boundary_states(self, count, rng):
        return np.array([self._from_inner(s) for s in self.inner.boundary_states(count, rng)])

    def interior_states(self, count, rng):
        return np.array([self._from_inner(s) for s in self.inner.interior_states(count, rng)])

    def describe(self):
        return f"transported({self.inner.describe()})"


class WholeSpaceRegion(Region):
    """The entire manifold: trivially invariant, flagged degenerate."""

    kind = "whole-space"
    degenerate = True

    def depth(self, state):
        return np.inf

    def depth_many(self, states):
        return np.full(len(states), np.inf)

    def boundary_states(self, count, rng):
        return self.manifold.random_states(rng, count)

    def interior_states(self, count, rng):
        return self.manifold.random_states(rng, count)

    def describe(self):
        return "whole space (not a proper attractor neighborhood)"


class InvariantDisk:
    """A certified forward-invariant disk: region plus measured margins.

    boundary_margin and interior_margin are minima of depth(f(x)) over the
    corresponding sample families; both must be positive for the disk to
    count as invariant with room to spare.
    """

    def __init__(self, region: Region, boundary_margin: float, interior_margin: float, note: str = ""):
        self.region = region
        self.boundary_margin = float(boundary_margin)
        self.interior_margin = float(interior_margin)
        self.note = note

    @property
    def margin(self) -> float:
        return min(self.boundary_margin, self.interior_margin)

    def describe(self) -> str:
        return (
            f"invariant disk on {self.region.describe()}, "
            f"margin {self.margin:.4g}"
        )


def certify_invariant_disk(
    region: Region,
    step_many,
    rng,
    boundary_count: int = 512,
    interior_count: int = 512,
    exclude_states=(),
    note: str = "",
) -> InvariantDisk:
    """Sampled certification that step maps the region strictly into itself.

    exclude_states (e.g. repelling fixed points the disk must avoid) are
    required to lie strictly outside.  Raises ValueError on any failure so
    callers can retry with a different region.
    """
    bdry = region.boundary_states(boundary_count, rng)
    inner = region.interior_states(interior_count, rng)
    bm = float(np.min(region.depth_many(step_many(bdry))))
    im = float(np.min(region.depth_many(step_many(inner))))
    if bm <= 0 or im <= 0:
        raise ValueError(
            f"disk not invariant: boundary margin {bm:.3g}, interior margin {im:.3g}"
        )
    for s in exclude_states:
        if region.depth(np.asarray(s, dtype=float)) >= 0:
            raise ValueError("excluded state lies inside the candidate disk")
    return InvariantDisk(region, bm, im, note=note)
