"""State spaces, local charts, and point serialization.

Every dynamical system in this package acts on a flat state vector whose
interpretation is fixed by a manifold object.  Manifolds provide canonical
forms, local orthonormal charts (used for Jacobians, Newton solves, and
dedup distances), and random probe states for validation sweeps.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "wrap_torus",
    "torus_delta",
    "sphere_normalize",
    "quotient_canonical",
    "quotient_canonical_many",
    "invert_chart",
    "JoinCoords",
    "join_compose",
    "join_decompose",
    "Manifold",
    "Torus",
    "Sphere",
    "QuotientSphere",
    "Interval",
    "Plane",
    "ProductManifold",
    "TubeSphere",
    "MappingTorusSpace",
    "CompactifiedPlane",
    "Point",
    "ChartError",
    "StereographicChart",
    "IdentityChart",
    "numeric_jacobian",
    "save_points_csv",
    "load_points_csv",
    "save_points_binary",
    "load_points_binary",
]

_NORM_FLOOR = 1e-9


class ChartError(ValueError):
    """Raised when a local chart is requested where none is defined."""


# ---------------------------------------------------------------------------
# elementary coordinate operations


def wrap_torus(x):
    """Reduce coordinates to the fundamental cube [0, 1)."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def torus_delta(a, b):
    """Shortest displacement a - b on the torus, componentwise in [-1/2, 1/2)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - np.floor(d + 0.5)


def sphere_normalize(v):
    """Project v onto the unit sphere.  Rejects vectors too close to 0."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < _NORM_FLOOR:
        raise ValueError(f"cannot normalize vector of norm {n:.3e}")
    return v / n


def quotient_canonical(x):
    """Canonical representative of {x, -x} mod 1, the lexicographically smaller."""
    a = wrap_torus(x)
    b = wrap_torus(-a)
    for ai, bi in zip(a, b):
        if ai < bi - 1e-15:
            return a
        if bi < ai - 1e-15:
            return b
    return a


def quotient_canonical_many(xs):
    """Vectorized quotient_canonical over rows of xs."""
    a = wrap_torus(xs)
    b = wrap_torus(-a)
    out = a.copy()
    # lexicographic: flip where the first differing coordinate favors -x
    diff = b - a
    first = np.abs(diff) > 1e-15
    pick_b = np.zeros(len(a), dtype=bool)
    undecided = np.ones(len(a), dtype=bool)
    for j in range(a.shape[1]):
        here = undecided & first[:, j]
        pick_b |= here & (diff[:, j] < 0)
        undecided &= ~here
    out[pick_b] = b[pick_b]
    return out


# ---------------------------------------------------------------------------
# join coordinates on a unit sphere split into two blocks


@dataclass
class JoinCoords:
    """Decomposition of a unit vector into two sphere factors and a mixing angle.

    u lies on the unit sphere of the first block, v on the second, and
    t in [0, pi/2] measures how the mass splits: the original vector is
    (cos t * u, sin t * v).  At t = 0 the v factor is unconstrained and at
    t = pi/2 the u factor is; those cases are flagged degenerate.
    """

    u: np.ndarray
    v: np.ndarray
    t: float
    degenerate_u: bool = False
    degenerate_v: bool = False


def join_compose(u, v, t):
    """Assemble a unit vector from join coordinates."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    t = float(t)
    if not 0.0 <= t <= np.pi / 2 + 1e-12:
        raise ValueError(f"mixing angle {t} outside [0, pi/2]")
    return np.concatenate([np.cos(t) * u, np.sin(t) * v])


def join_decompose(w, split):
    """Split a unit vector into join coordinates at the given block boundary.

    Degenerate factors (all mass in the other block) are replaced by the
    first basis vector and flagged.
    """
    w = np.asarray(w, dtype=float)
    if not 0 < split < len(w):
        raise ValueError(f"split {split} outside vector of length {len(w)}")
    p, q = w[:split], w[split:]
    np_, nq = float(np.linalg.norm(p)), float(np.linalg.norm(q))
    t = float(np.arctan2(nq, np_))
    deg_u = np_ < _NORM_FLOOR
    deg_v = nq < _NORM_FLOOR
    u = np.eye(split)[0] if deg_u else p / np_
    v = np.eye(len(w) - split)[0] if deg_v else q / nq
    return JoinCoords(u=u, v=v, t=t, degenerate_u=deg_u, degenerate_v=deg_v)


# ---------------------------------------------------------------------------
# manifolds


class Manifold:
    """Base for state-space descriptors.

    Subclasses fix the flat state layout and provide:
      canon        canonical form of a state
      encode       local orthonormal coordinates of y in a chart centred at x0
      decode       inverse of encode
      random_states  probe states for validation sweeps
    Charts are only required near their centre; encode/decode must be exact
    inverses of each other inside the injectivity radius.
    """

    name: str = "manifold"
    variant: int = 0
    dim: int = 0        # intrinsic dimension
    state_len: int = 0  # length of the flat state vector

    def canon(self, x):
        return np.asarray(x, dtype=float)

    def degenerate_state(self, x) -> bool:
        """True where coordinates lose meaning (tube poles); never an error."""
        return False

    def encode(self, x0, y):
        raise NotImplementedError

    def decode(self, x0, v):
        raise NotImplementedError

    def random_states(self, rng, count):
        raise NotImplementedError

    def distance(self, a, b):
        """Chart distance used for dedup and convergence tests."""
        return float(np.linalg.norm(self.encode(a, b)))

    def describe(self) -> str:
        return f"{self.name} (dim {self.dim})"

    def __repr__(self):
        return f"<{type(self).__name__} {self.describe()}>"


class Torus(Manifold):
    """Flat n-torus with coordinates in [0, 1)^n."""

    variant = 1

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("torus dimension must be positive")
        self.name = f"T{n}"
        self.dim = n
        self.state_len = n

    def canon(self, x):
        return wrap_torus(x)

    def encode(self, x0, y):
        return torus_delta(y, x0)

    def decode(self, x0, v):
        return wrap_torus(np.asarray(x0, dtype=float) + np.asarray(v, dtype=float))

    def random_states(self, rng, count):
        return rng.random((count, self.dim))


class Sphere(Manifold):
    """Round unit sphere S^k embedded in R^{k+1}."""

    variant = 2

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("sphere dimension must be positive")
        self.name = f"S{k}"
        self.dim = k
        self.state_len = k + 1

    def canon(self, x):
        return sphere_normalize(x)

    def tangent_frame(self, x0):
        """Deterministic orthonormal basis of the tangent space at x0.

        Columns of the returned (k+1) x k matrix span x0-perp.  Built from a
        Householder reflection so the frame varies smoothly away from the
        pivot axis.
        """
        x0 = sphere_normalize(x0)
        n = len(x0)
        i = int(np.argmax(np.abs(x0)))
        e = np.zeros(n)
        e[i] = 1.0 if x0[i] >= 0 else -1.0
        w = x0 + e
        H = np.eye(n) - 2.0 * np.outer(w, w) / float(w @ w)
        # H maps -e to x0; drop the pivot column to get the tangent frame
        cols = [j for j in range(n) if j != i]
        frame = H[:, cols]
        if x0[i] < 0:
            frame = -frame
        return frame

    def encode(self, x0, y):
        x0 = sphere_normalize(x0)
        y = np.asarray(y, dtype=float)
        c = float(x0 @ y)
        if c <= 1e-9:
            raise ChartError("gnomonic chart only covers the open hemisphere")
        V = self.tangent_frame(x0)
        return V.T @ (y / c)

    def decode(self, x0, v):
        x0 = sphere_normalize(x0)
        V = self.tangent_frame(x0)
        return sphere_normalize(x0 + V @ np.asarray(v, dtype=float))

    def random_states(self, rng, count):
        g = rng.normal(size=(count, self.state_len))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def distance(self, a, b):
        # great-circle angle via the chord: 2 asin(|a-b|/2) stays exact for
        # nearby states, where acos of the dot product bottoms out near
        # sqrt(machine epsilon)
        chord = 0.5 * float(np.linalg.norm(sphere_normalize(a) - sphere_normalize(b)))
        return 2.0 * float(np.arcsin(min(1.0, chord)))


class QuotientSphere(Manifold):
    """Topological 2-sphere presented as the 2-torus modulo x ~ -x.

    States are canonical representatives in [0, 1)^2.  The four branch
    classes (half-lattice points) are fixed by the involution; local charts
    centred there are half-charts and are rejected.
    """

    variant = 3

    def __init__(self):
        self.name = "T2/~"
        self.dim = 2
        self.state_len = 2

    def canon(self, x):
        return quotient_canonical(x)

    def _branch_distance(self, x):
        d = torus_delta(2.0 * np.asarray(x, dtype=float), 0.0)
        return float(np.linalg.norm(d)) / 2.0

    def encode(self, x0, y):
        x0 = quotient_canonical(x0)
        if self._branch_distance(x0) < 1e-7:
            raise ChartError("chart centred at an involution fixed point")
        y = quotient_canonical(y)
        da = torus_delta(y, x0)
        db = torus_delta(-y, x0)
        return da if np.linalg.norm(da) <= np.linalg.norm(db) else db

    def decode(self, x0, v):
        return quotient_canonical(np.asarray(x0, dtype=float) + np.asarray(v, dtype=float))

    def random_states(self, rng, count):
        return quotient_canonical_many(rng.random((count, 2)))

    def distance(self, a, b):
        # class distance: nearer of the two representatives, no chart involved
        da = np.linalg.norm(torus_delta(a, b))
        db = np.linalg.norm(torus_delta(a, -np.asarray(b, dtype=float)))
        return float(min(da, db))


class Interval(Manifold):
    """Closed interval, used by one dimensional radial models."""

    variant = 7

    def __init__(self, lo: float, hi: float):
        if not hi > lo:
            raise ValueError("interval needs hi > lo")
        self.lo, self.hi = float(lo), float(hi)
        self.name = f"[{lo:g},{hi:g}]"
        self.dim = 1
        self.state_len = 1

    def canon(self, x):
        x = np.asarray(x, dtype=float).reshape(1)
        if x[0] < self.lo - 1e-9 or x[0] > self.hi + 1e-9:
            raise ValueError(f"state {x[0]} outside {self.name}")
        return np.clip(x, self.lo, self.hi)

    def encode(self, x0, y):
        return np.asarray(y, dtype=float).reshape(1) - np.asarray(x0, dtype=float).reshape(1)

    def decode(self, x0, v):
        return np.asarray(x0, dtype=float).reshape(1) + np.asarray(v, dtype=float).reshape(1)

    def random_states(self, rng, count):
        pad = 1e-3 * (self.hi - self.lo)
        return rng.uniform(self.lo + pad, self.hi - pad, size=(count, 1))


class Plane(Manifold):
    """Plain R^n, for linear controls and chart-side computations."""

    variant = 8

    def __init__(self, n: int):
        self.name = f"R{n}"
        self.dim = n
        self.state_len = n

    def encode(self, x0, y):
        return np.asarray(y, dtype=float) - np.asarray(x0, dtype=float)

    def decode(self, x0, v):
        return np.asarray(x0, dtype=float) + np.asarray(v, dtype=float)

    def random_states(self, rng, count):
        return rng.normal(size=(count, self.dim))


class ProductManifold(Manifold):
    """Cartesian product with concatenated state vectors."""

    variant = 4

    def __init__(self, factors):
        factors = tuple(factors)
        if len(factors) < 2:
            raise ValueError("product needs at least two factors")
        self.factors = factors
        self.name = " x ".join(f.name for f in factors)
        self.dim = sum(f.dim for f in factors)
        self.state_len = sum(f.state_len for f in factors)
        self._state_splits = np.cumsum([f.state_len for f in factors])[:-1]
        self._chart_splits = np.cumsum([f.dim for f in factors])[:-1]

    def split_state(self, x):
        return np.split(np.asarray(x, dtype=float), self._state_splits)

    def split_chart(self, v):
        return np.split(np.asarray(v, dtype=float), self._chart_splits)

    def join_state(self, parts):
        return np.concatenate([np.atleast_1d(p) for p in parts])

    def canon(self, x):
        return self.join_state([f.canon(p) for f, p in zip(self.factors, self.split_state(x))])

    def encode(self, x0, y):
        return np.concatenate(
            [f.encode(p0, p) for f, p0, p in zip(self.factors, self.split_state(x0), self.split_state(y))]
        )

    def decode(self, x0, v):
        return self.join_state(
            [f.decode(p0, vp) for f, p0, vp in zip(self.factors, self.split_state(x0), self.split_chart(v))]
        )

    def random_states(self, rng, count):
        return np.hstack([f.random_states(rng, count) for f in self.factors])

    def distance(self, a, b):
        parts = zip(self.factors, self.split_state(a), self.split_state(b))
        return float(np.linalg.norm([f.distance(pa, pb) for f, pa, pb in parts]))


class TubeSphere(Manifold):
    """Sphere of one dimension above a base sphere, in two-disk coordinates.

    A state is (base state, rho) with rho in [0, 2].  Slices of constant
    rho in (0, 2) are copies of the base; rho = 0 and rho = 2 are single
    points (poles) where the base coordinate is meaningless.  Local charts
    are only offered away from the poles.
    """

    variant = 5

    def __init__(self, base: Manifold, pole_pad: float = 1e-6):
        self.base = base
        self.pole_pad = float(pole_pad)
        self.name = f"tube({base.name})"
        self.dim = base.dim + 1
        self.state_len = base.state_len + 1

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[:-1], float(x[-1])

    def join(self, b, rho):
        return np.concatenate([np.asarray(b, dtype=float), [float(rho)]])

    def canon(self, x):
        b, rho = self.split(x)
        if rho < -1e-9 or rho > 2.0 + 1e-9:
            raise ValueError(f"radial coordinate {rho} outside [0, 2]")
        return self.join(self.base.canon(b), min(max(rho, 0.0), 2.0))

    def degenerate_state(self, x) -> bool:
        _, rho = self.split(x)
        return rho < self.pole_pad or rho > 2.0 - self.pole_pad

    def encode(self, x0, y):
        b0, r0 = self.split(x0)
        if r0 < self.pole_pad or r0 > 2.0 - self.pole_pad:
            raise ChartError("no product chart at a pole")
        b, r = self.split(y)
        return np.concatenate([self.base.encode(b0, b), [r - r0]])

    def decode(self, x0, v):
        b0, r0 = self.split(x0)
        if r0 < self.pole_pad or r0 > 2.0 - self.pole_pad:
            raise ChartError("no product chart at a pole")
        v = np.asarray(v, dtype=float)
        return self.join(self.base.decode(b0, v[:-1]), r0 + v[-1])

    def random_states(self, rng, count):
        b = self.base.random_states(rng, count)
        rho = rng.uniform(0.05, 1.95, size=(count, 1))
        return np.hstack([b, rho])

    def distance(self, a, b):
        ba, ra = self.split(a)
        bb, rb = self.split(b)
        dr = abs(ra - rb)
        pad = self.pole_pad
        if min(ra, rb) < pad or max(ra, rb) > 2.0 - pad:
            # at a pole the base coordinate is meaningless
            return dr
        return float(np.hypot(self.base.distance(ba, bb), dr))


class MappingTorusSpace(Manifold):
    """Base manifold crossed with a circle fiber, state (x, s) with s mod 1."""

    variant = 6

    def __init__(self, base: Manifold):
        self.base = base
        self.name = f"susp({base.name})"
        self.dim = base.dim + 1
        self.state_len = base.state_len + 1

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[:-1], float(x[-1])

    def join(self, b, s):
        return np.concatenate([np.asarray(b, dtype=float), [float(s)]])

    def canon(self, x):
        b, s = self.split(x)
        return self.join(self.base.canon(b), s - np.floor(s))

    def encode(self, x0, y):
        b0, s0 = self.split(x0)
        b, s = self.split(y)
        ds = float(torus_delta(np.array([s]), np.array([s0]))[0])
        return np.concatenate([self.base.encode(b0, b), [ds]])

    def decode(self, x0, v):
        b0, s0 = self.split(x0)
        v = np.asarray(v, dtype=float)
        return self.join(self.base.decode(b0, v[:-1]), (s0 + v[-1]) % 1.0)

    def random_states(self, rng, count):
        b = self.base.random_states(rng, count)
        s = rng.random((count, 1))
        return np.hstack([b, s])

    def distance(self, a, b):
        ba, sa = self.split(a)
        bb, sb = self.split(b)
        ds = float(torus_delta(np.array([sa]), np.array([sb]))[0])
        return float(np.hypot(self.base.distance(ba, bb), ds))


class CompactifiedPlane(Manifold):
    """R^n as the chart of its one-point compactification (a sphere).

    States are plain vectors in R^n; the added point at infinity is not
    representable as a state and is handled by callers through the inverted
    chart w = z / |z|^2.  An optional gauge steers probe sampling toward
    the region of interest.
    """

    variant = 9

    def __init__(self, n: int, gauge=None, sample_scale: float = 1.2):
        self.name = f"R{n}+inf"
        self.dim = n
        self.state_len = n
        self.gauge = gauge
        self.sample_scale = float(sample_scale)

    def encode(self, x0, y):
        return np.asarray(y, dtype=float) - np.asarray(x0, dtype=float)

    def decode(self, x0, v):
        return np.asarray(x0, dtype=float) + np.asarray(v, dtype=float)

    def random_states(self, rng, count):
        g = rng.normal(size=(count, self.dim))
        if self.gauge is None:
            return self.sample_scale * g
        # spread gauge levels through the ball and a margin beyond it
        levels = rng.uniform(0.05, 1.6, size=count)
        out = np.empty_like(g)
        for i in range(count):
            d = g[i]
            gd = self.gauge(d)
            out[i] = d * (levels[i] / gd) if gd > _NORM_FLOOR else d
        return out


def invert_chart(z):
    """Coordinate inversion w = z / |z|^2, the chart swap around infinity."""
    z = np.asarray(z, dtype=float)
    n2 = float(z @ z)
    if n2 < 1e-30:
        raise ChartError("inversion undefined at the origin")
    return z / n2


class StereographicChart:
    """Global chart of a round sphere: projection from the last-axis pole.

    Covers everything except the projection pole itself, which is recorded
    as missing_state.  A sphere system whose designated repeller sits at
    that pole becomes a plain plane map in this chart.
    """

    def __init__(self, k: int):
        self.k = int(k)
        self.dim = int(k)
        self.missing_state = np.concatenate([np.zeros(k), [1.0]])

    def to_plane(self, state):
        state = np.asarray(state, dtype=float)
        h = float(state[-1])
        if h > 1.0 - 1e-12:
            raise ChartError("chart does not cover the projection pole")
        return state[:-1] / (1.0 - h)

    def to_plane_many(self, states):
        states = np.asarray(states, dtype=float)
        return states[:, :-1] / (1.0 - states[:, -1:])

    def from_plane(self, vec):
        vec = np.asarray(vec, dtype=float)
        n2 = float(vec @ vec)
        return np.concatenate([2.0 * vec, [n2 - 1.0]]) / (n2 + 1.0)

    def from_plane_many(self, vecs):
        vecs = np.asarray(vecs, dtype=float)
        n2 = np.sum(vecs * vecs, axis=1, keepdims=True)
        return np.concatenate([2.0 * vecs, n2 - 1.0], axis=1) / (n2 + 1.0)


class IdentityChart:
    """Trivial global chart of a compactified plane: states are chart values."""

    def __init__(self, n: int):
        self.dim = int(n)
        self.missing_state = None  # infinity is not a state

    def to_plane(self, state):
        return np.asarray(state, dtype=float)

    def to_plane_many(self, states):
        return np.asarray(states, dtype=float)

    def from_plane(self, vec):
        return np.asarray(vec, dtype=float)

    def from_plane_many(self, vecs):
        return np.asarray(vecs, dtype=float)


# ---------------------------------------------------------------------------
# points


_VARIANT_NAMES = {
    1: "torus",
    2: "sphere",
    3: "quotient",
    4: "product",
    5: "tube",
    6: "mapping_torus",
    7: "interval",
    8: "plane",
    9: "capped",
}
_VARIANT_CODES = {v: k for k, v in _VARIANT_NAMES.items()}


@dataclass
class Point:
    """A manifold point: a flat state vector tagged with its space.

    at_infinity marks the unrepresentable pole of a compactified plane;
    such points carry an all-zero placeholder state.
    """

    manifold: Manifold
    state: np.ndarray
    at_infinity: bool = False

    def __post_init__(self):
        if self.at_infinity:
            self.state = np.zeros(self.manifold.state_len)
            return
        self.state = np.asarray(self.state, dtype=float)
        if self.state.shape != (self.manifold.state_len,):
            raise ValueError(
                f"state length {self.state.shape} does not match {self.manifold.describe()}"
            )
        self.state = self.manifold.canon(self.state)

    @property
    def variant(self) -> int:
        return self.manifold.variant

    @property
    def variant_name(self) -> str:
        return _VARIANT_NAMES[self.manifold.variant]

    @property
    def is_degenerate(self) -> bool:
        return (not self.at_infinity) and self.manifold.degenerate_state(self.state)

    def __repr__(self):
        if self.at_infinity:
            return f"Point({self.manifold.name}, infinity)"
        inner = ", ".join(f"{c:.6g}" for c in self.state)
        return f"Point({self.manifold.name}, [{inner}])"


# ---------------------------------------------------------------------------
# chart based numeric differentiation


def numeric_jacobian(fn, manifold_in, x0, manifold_out=None, y0=None, h=2e-4):
    """Jacobian of a state map between manifolds, in local chart coordinates.

    Central differences at steps h and h/2 combined by one Richardson
    extrapolation step, so the truncation error is O(h^4).  fn maps states
    to states; the result is a (dim_out x dim_in) matrix expressed in the
    charts centred at x0 and at y0 (default fn(x0)).

    h must lie in [1e-8, 1e-3]; outside that range cancellation or chart
    curvature dominates and the result is not trustworthy.
    """
    if not 1e-8 <= h <= 1e-3:
        raise ValueError(f"step {h} outside [1e-8, 1e-3]")
    if manifold_out is None:
        manifold_out = manifold_in
    x0 = np.asarray(x0, dtype=float)
    if y0 is None:
        y0 = fn(x0)

    def diff(step):
        cols = []
        for j in range(manifold_in.dim):
            e = np.zeros(manifold_in.dim)
            e[j] = step
            fp = manifold_out.encode(y0, fn(manifold_in.decode(x0, e)))
            fm = manifold_out.encode(y0, fn(manifold_in.decode(x0, -e)))
            cols.append((fp - fm) / (2.0 * step))
        return np.column_stack(cols)

    j1 = diff(h)
    j2 = diff(h / 2.0)
    return (4.0 * j2 - j1) / 3.0


# ---------------------------------------------------------------------------
# serialization

_BIN_MAGIC = b"ATRF"
_BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<4sIBI")


def _states_of(points):
    pts = list(points)
    if not pts:
        raise ValueError("no points to save")
    m = pts[0].manifold
    for p in pts:
        if p.manifold.variant != m.variant or p.manifold.state_len != m.state_len:
            raise ValueError("points from mixed spaces in one file")
        if p.at_infinity:
            raise ValueError("the point at infinity has no coordinate row")
    return m, np.array([p.state for p in pts])


def save_points_csv(path, points):
    """Write points as CSV rows: variant, dim, then the state coordinates."""
    m, arr = _states_of(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in arr:
            w.writerow([m.variant, m.state_len] + [repr(float(c)) for c in row])


def load_points_csv(path, manifold):
    """Read points written by save_points_csv onto the given manifold."""
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            variant, dim = int(row[0]), int(row[1])
            if variant != manifold.variant:
                raise ValueError(f"row {i}: variant {variant} is not {manifold.variant}")
            if dim != manifold.state_len or len(row) != 2 + dim:
                raise ValueError(f"row {i}: bad coordinate count")
            out.append(Point(manifold, np.array([float(c) for c in row[2:]])))
    return out


def save_points_binary(path, points):
    """Write points in the packed binary layout (little endian float64)."""
    m, arr = _states_of(points)
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(_BIN_MAGIC, _BIN_VERSION, m.variant, m.state_len))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_points_binary(path, manifold):
    """Read points written by save_points_binary onto the given manifold."""
    with open(path, "rb") as fh:
        head = fh.read(_BIN_HEADER.size)
        if len(head) != _BIN_HEADER.size:
            raise ValueError("truncated header")
        magic, version, variant, dim = _BIN_HEADER.unpack(head)
        if magic != _BIN_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != _BIN_VERSION:
            raise ValueError(f"unsupported version {version}")
        if variant != manifold.variant or dim != manifold.state_len:
            raise ValueError("file does not match the target space")
        body = fh.read()
    if len(body) % (8 * dim) != 0:
        raise ValueError("truncated body")
    arr = np.frombuffer(body, dtype="<f8").reshape(-1, dim)
    return [Point(manifold, row) for row in arr]
