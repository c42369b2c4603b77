"""Atomic dynamical systems and their construction-time certification.

Everything downstream composes the systems built here: hyperbolic torus
automorphisms, the stable-direction surgery that carves an expanding
attractor out of one, its involution quotient on the topological sphere,
and the gradient-like reference maps (north-south spheres, torus gradient
systems, the radial logistic map).  Every builder returns an immutable
SystemSpec whose step, inverse, and fixed-point data have been checked by
sampling before the object escapes.

The surgery implemented here differs from the textbook single-displacement
form: the total strength is split into several identical shears applied in
sequence, each weak enough to be a certified diffeomorphism of the support
ball (per-shear strength stays below an invertibility cap derived from the
bump profile).  The composite keeps compact support, keeps the map equal to
the base automorphism outside the ball bitwise, and admits an exact inverse
by solving each shear's monotone one dimensional fiber equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .elliptic import EvenEllipticChart, weierstrass_p
from .geometry import (
    ChartError,
    Interval,
    Manifold,
    Point,
    QuotientSphere,
    Sphere,
    StereographicChart,
    Torus,
    numeric_jacobian,
    quotient_canonical,
    torus_delta,
    wrap_torus,
)
from .recipes import (
    Recipe,
    atomic_recipe,
    build_recipe,
    derived_recipe,
    register_builder,
)
from .regions import (
    BallComplementRegion,
    BallRegion,
    BandRegion,
    CapRegion,
    GaugeDiskRegion,
    TransportedRegion,
    WholeSpaceRegion,
    certify_invariant_disk,
)

__all__ = [
    "ConstructionError",
    "SurgeryBump",
    "standard_surgery_bump",
    "CollarProfile",
    "standard_collar",
    "FixedPointRecord",
    "classify_multipliers",
    "SystemSpec",
    "SurgeryParams",
    "validate_system",
    "toral_automorphism",
    "da_surgery",
    "plykin_system",
    "north_south_sphere",
    "torus_gradient_ms",
    "torus_translation",
    "radial_logistic_flow",
    "radial_logistic_map",
    "Diffeotopy",
    "register_isotopy",
    "make_diffeotopy",
]


class ConstructionError(ValueError):
    """A builder's preconditions or certification checks failed."""


# ---------------------------------------------------------------------------
# smooth profiles


class SurgeryBump:
    """Radial displacement profile: 1 at the origin, 0 from radius 1 on.

    The callable is evaluated on |r|, so the induced profile is even by
    construction.  derivative() is the closed form when one was supplied,
    otherwise a central difference.
    """

    def __init__(self, value, derivative=None, name: str = "custom"):
        self._value = value
        self._derivative = derivative
        self.name = name

    def _eval(self, fn, r):
        arr = np.atleast_1d(np.abs(np.asarray(r, dtype=float)))
        out = np.zeros_like(arr)
        inside = arr < 1.0
        if np.any(inside):
            out[inside] = fn(arr[inside])
        if np.asarray(r).ndim == 0:
            return float(out[0])
        return out

    def __call__(self, r):
        return self._eval(self._value, r)

    def derivative(self, r):
        if self._derivative is not None:
            return self._eval(self._derivative, r)
        h = 1e-6
        return (self.__call__(np.asarray(r) + h) - self.__call__(np.asarray(r) - h)) / (2 * h)


def _standard_bump_value(r):
    q = 1.0 - r * r
    return np.exp(1.0 - 1.0 / q)


def _standard_bump_derivative(r):
    q = 1.0 - r * r
    return _standard_bump_value(r) * (-2.0 * r / (q * q))


standard_surgery_bump = SurgeryBump(
    _standard_bump_value, _standard_bump_derivative, name="standard"
)


class CollarProfile:
    """Smooth even switch: exactly 0 at the origin, exactly 1 outside [-1, 1].

    Built from the flat exponential exp(-1/t), so every derivative vanishes
    at both endpoints and the values there are exact in floating point.
    """

    @staticmethod
    def _flat(t):
        out = np.zeros_like(t)
        pos = t > 0.0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    def __call__(self, x):
        arr = np.atleast_1d(np.abs(np.asarray(x, dtype=float)))
        a = self._flat(arr)
        b = self._flat(1.0 - arr)
        out = np.ones_like(arr)
        mid = arr < 1.0
        out[mid] = a[mid] / (a[mid] + b[mid])
        if np.asarray(x).ndim == 0:
            return float(out[0])
        return out


standard_collar = CollarProfile()


# ---------------------------------------------------------------------------
# fixed points and system specifications


def classify_multipliers(moduli, tol: float = 1e-6) -> str:
    """source / sink / saddle from multiplier moduli; rejects neutral ones."""
    ms = [float(m) for m in moduli]
    if not ms:
        raise ConstructionError("empty multiplier list")
    for m in ms:
        if abs(m - 1.0) <= tol:
            raise ConstructionError(f"multiplier modulus {m} is neutral within {tol:g}")
    expanding = sum(1 for m in ms if m > 1.0)
    if expanding == len(ms):
        return "source"
    if expanding == 0:
        return "sink"
    return "saddle"


@dataclass(frozen=True)
class FixedPointRecord:
    """A certified fixed point: location, stability kind, multiplier moduli."""

    location: Point
    kind: str
    multipliers: tuple
    label: str = ""

    def describe(self) -> str:
        ms = ", ".join(f"{m:.6g}" for m in self.multipliers)
        tag = f" [{self.label}]" if self.label else ""
        return f"{self.kind} at {self.location!r} with moduli ({ms}){tag}"


@dataclass(frozen=True)
class SystemSpec:
    """An immutable dynamical system on a manifold.

    step_state and back_state act on raw state vectors and return canonical
    raw states; tangent_state, when present, returns the differential in the
    manifold's local orthonormal charts at x and at step(x) (the same
    convention numeric_jacobian uses).  extras carries optional certified
    attachments; recognized keys include trapping_region, invariant_disk,
    attractor_seed, global_chart, plane_gauge, upstairs, matrix,
    matrix_inverse, stable_unit, surgery, and the vectorized fast paths
    fast_step_many, fast_back_many, fast_orbit, fast_lyap,
    fast_tangent_many.  Treat extras as read-only after construction.
    """

    name: str
    manifold: Manifold
    step_state: object
    back_state: object
    fixed_points: tuple
    recipe: Recipe
    declared_attractor_dim: object = None
    declared_orientable: object = None
    tangent_state: object = None
    extras: dict = field(default_factory=dict)

    # raw-state evaluation ---------------------------------------------------

    def step(self, x):
        return self.step_state(np.asarray(x, dtype=float))

    def back(self, x):
        if self.back_state is None:
            raise ConstructionError(f"{self.name} has no backward map")
        return self.back_state(np.asarray(x, dtype=float))

    def tangent(self, x):
        x = np.asarray(x, dtype=float)
        if self.tangent_state is not None:
            return self.tangent_state(x)
        return numeric_jacobian(self.step_state, self.manifold, x)

    def step_many(self, X):
        X = np.asarray(X, dtype=float)
        fast = self.extras.get("fast_step_many")
        if fast is not None:
            return fast(X)
        return np.array([self.step_state(row) for row in X])

    def back_many(self, X):
        X = np.asarray(X, dtype=float)
        fast = self.extras.get("fast_back_many")
        if fast is not None:
            return fast(X)
        if self.back_state is None:
            raise ConstructionError(f"{self.name} has no backward map")
        return np.array([self.back_state(row) for row in X])

    def tangent_many(self, X):
        X = np.asarray(X, dtype=float)
        fast = self.extras.get("fast_tangent_many")
        if fast is not None:
            return fast(X)
        return np.array([self.tangent(row) for row in X])

    def orbit(self, x0, count: int, burn: int = 0):
        """count states visited after burn preliminary steps."""
        fast = self.extras.get("fast_orbit")
        if fast is not None:
            return fast(np.asarray(x0, dtype=float), int(count), int(burn))
        x = self.manifold.canon(np.asarray(x0, dtype=float))
        out = np.empty((int(count), self.manifold.state_len))
        for k in range(int(burn) + int(count)):
            x = self.step_state(x)
            if k >= burn:
                out[k - burn] = x
        return out

    # Point-level evaluation ---------------------------------------------------

    def forward(self, p: Point) -> Point:
        if p.at_infinity:
            if self.extras.get("infinity_fixed"):
                return p
            raise ConstructionError(f"{self.name} does not act at infinity")
        return Point(self.manifold, self.step_state(p.state))

    def backward(self, p: Point) -> Point:
        if p.at_infinity:
            if self.extras.get("infinity_fixed"):
                return p
            raise ConstructionError(f"{self.name} does not act at infinity")
        if self.back_state is None:
            raise ConstructionError(f"{self.name} has no backward map")
        return Point(self.manifold, self.back_state(p.state))

    def describe(self) -> str:
        d = self.declared_attractor_dim
        dd = "?" if d is None else str(d)
        return f"{self.name} on {self.manifold.describe()}, attractor dim {dd}"


def validate_system(
    spec: SystemSpec,
    probes: int = 1000,
    seed: int = 20240811,
    roundtrip_tol: float = 1e-9,
    fixed_tol: float = 1e-10,
) -> None:
    """Sampled certification of a SystemSpec; raises ConstructionError.

    Checks backward(forward(x)) and forward(backward(x)) on random probe
    states, then every fixed-point record for displacement and for agreement
    between its declared kind and its multiplier moduli.
    """
    rng = np.random.default_rng(seed)
    man = spec.manifold
    if spec.back_state is not None and probes > 0:
        X = man.random_states(rng, probes)
        for label, there, back in (
            ("backward(forward(x))", spec.step_many, spec.back_many),
            ("forward(backward(x))", spec.back_many, spec.step_many),
        ):
            Y = back(there(X))
            worst = max(man.distance(x, y) for x, y in zip(X, Y))
            if worst > roundtrip_tol:
                raise ConstructionError(
                    f"{spec.name}: {label} drifts by {worst:.3e} "
                    f"(tolerance {roundtrip_tol:g})"
                )
    for rec in spec.fixed_points:
        if rec.location.at_infinity:
            if not spec.extras.get("infinity_fixed"):
                raise ConstructionError(
                    f"{spec.name}: fixed point at infinity without infinity_fixed"
                )
            kind = classify_multipliers(rec.multipliers)
            if kind != rec.kind:
                raise ConstructionError(
                    f"{spec.name}: record {rec.describe()} classifies as {kind}"
                )
            continue
        x = rec.location.state
        disp = man.distance(spec.step_state(x.copy()), x)
        if disp > fixed_tol:
            raise ConstructionError(
                f"{spec.name}: listed fixed point moves by {disp:.3e}: {rec.describe()}"
            )
        kind = classify_multipliers(rec.multipliers)
        if kind != rec.kind:
            raise ConstructionError(
                f"{spec.name}: record {rec.describe()} classifies as {kind}"
            )


# ---------------------------------------------------------------------------
# hyperbolic torus automorphisms


def toral_automorphism(matrix) -> SystemSpec:
    """Hyperbolic automorphism x -> Ax mod 1 of the n-torus.

    A must be an integer matrix with |det A| = 1 and no eigenvalue of
    modulus within 1e-9 of 1; violations are reported with the offending
    value.  The origin is listed as the (always saddle) fixed point.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConstructionError(f"matrix of shape {A.shape} is not square")
    if not np.allclose(A, np.rint(A), atol=1e-12):
        raise ConstructionError("torus automorphisms need an integer matrix")
    n = A.shape[0]
    Ai = np.rint(A).astype(np.int64)
    det = int(round(float(np.linalg.det(Ai.astype(float)))))
    if abs(det) != 1:
        raise ConstructionError(f"matrix is not unimodular: det = {det}")
    Minv = np.rint(np.linalg.inv(Ai.astype(float))).astype(np.int64)
    if not np.array_equal(Ai @ Minv, np.eye(n, dtype=np.int64)):
        raise ConstructionError("integer inverse verification failed")
    evals = np.linalg.eigvals(Ai.astype(float))
    for ev in evals:
        if abs(abs(ev) - 1.0) < 1e-9:
            raise ConstructionError(
                f"not hyperbolic: eigenvalue {ev:.9g} has modulus {abs(ev):.9f}"
            )
    M = Ai.astype(float)
    Mb = Minv.astype(float)
    moduli = tuple(sorted((float(abs(ev)) for ev in evals), reverse=True))
    unstable = tuple(m for m in moduli if m > 1.0)

    # stable data for the codimension one surgery: exactly one contracting
    # direction, necessarily real
    stable_unit = None
    stable_eigenvalue = None
    contracting = [ev for ev in evals if abs(ev) < 1.0]
    if len(contracting) == 1:
        lam = contracting[0]
        if abs(lam.imag) < 1e-12:
            lam = float(lam.real)
            w, V = np.linalg.eig(M)
            col = int(np.argmin(np.abs(w - lam)))
            v = np.real(V[:, col])
            v = v / np.linalg.norm(v)
            lead = int(np.argmax(np.abs(v) > 1e-12))
            if v[lead] < 0:
                v = -v
            stable_unit = v
            stable_eigenvalue = lam

    dummy = np.zeros(n)

    def step(x):
        row = wrap_torus(x)[None, :].copy()
        return _kernels.da_step_many(M, dummy, dummy, 0.1, 0.0, 0, row)[0]

    def back(x):
        row = wrap_torus(x)[None, :].copy()
        return _kernels.da_step_many(Mb, dummy, dummy, 0.1, 0.0, 0, row)[0]

    recipe = atomic_recipe(
        "toral_automorphism", n=n, matrix=tuple(int(v) for v in Ai.ravel())
    )
    manifold = Torus(n)
    origin = FixedPointRecord(
        location=Point(manifold, np.zeros(n)),
        kind="saddle",
        multipliers=moduli,
        label="origin",
    )
    extras = {
        "matrix": M,
        "matrix_inverse": Mb,
        "eigenvalues": tuple(complex(ev) for ev in evals),
        "unstable_moduli": unstable,
        "stable_unit": stable_unit,
        "stable_eigenvalue": stable_eigenvalue,
        "trapping_region": WholeSpaceRegion(manifold),
        "attractor_seed": wrap_torus(0.2 + 0.13 * np.arange(n)),
        "fast_step_many": lambda X: _kernels.da_step_many(
            M, dummy, dummy, 0.1, 0.0, 0, np.asarray(X, dtype=float).copy()
        ),
        "fast_back_many": lambda X: _kernels.da_step_many(
            Mb, dummy, dummy, 0.1, 0.0, 0, np.asarray(X, dtype=float).copy()
        ),
        "fast_orbit": lambda x0, count, burn: _kernels.toral_orbit(
            M, wrap_torus(x0), int(count), int(burn)
        ),
        "fast_lyap": lambda x0, nsteps, burn, renorm: _kernels.toral_lyap(
            M, wrap_torus(x0), int(nsteps), int(burn), int(renorm)
        ),
        "fast_tangent_many": lambda X: np.broadcast_to(
            M, (len(np.atleast_2d(X)), n, n)
        ).copy(),
    }
    spec = SystemSpec(
        name=f"torus-aut-{n}d",
        manifold=manifold,
        step_state=step,
        back_state=back,
        fixed_points=(origin,),
        recipe=recipe,
        declared_attractor_dim=len(unstable),
        declared_orientable=None,
        tangent_state=lambda x: M.copy(),
        extras=extras,
    )
    validate_system(spec)
    return spec


# ---------------------------------------------------------------------------
# stable-direction surgery


@dataclass
class SurgeryParams:
    """Parameters of the stable-direction surgery.

    center must be a fixed point of the base automorphism (None means the
    origin).  radius is the support ball radius on the torus.  strength is
    the total displacement gain; it is split into `steps` identical shears
    (None lets the builder choose the smallest certified count).
    """

    center: object = None
    radius: float = 0.15
    strength: float = 1.2
    bump: SurgeryBump = standard_surgery_bump
    steps: object = None


def _bump_certificate(bump: SurgeryBump):
    """Sampled smoothness data: endpoint values and min of psi + t psi'."""
    if abs(bump(0.0) - 1.0) > 1e-12:
        raise ConstructionError("bump profile must equal 1 at radius 0")
    for r in (1.0, 1.01, 1.5, 2.0):
        if bump(r) != 0.0:
            raise ConstructionError("bump profile must vanish from radius 1 on")
    t = np.linspace(0.0, 1.0, 4097)[:-1]
    vals = bump(t)
    ders = bump.derivative(t)
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(ders))):
        raise ConstructionError("bump profile or its derivative is not finite on [0, 1)")
    if np.max(np.abs(ders)) > 1e3:
        raise ConstructionError("bump derivative is too large to certify invertibility")
    dmin = float(np.min(vals + t * ders))
    return t, vals, dmin


def _source_threshold(lam_abs: float, cap: float) -> float:
    """Smallest strength whose composite fiber multiplier exceeds 1."""

    def fiber_mult(s):
        m = max(1, math.ceil(s / cap))
        return lam_abs * (1.0 + s / m) ** m

    lo, hi = 1e-9, cap
    while fiber_mult(hi) <= 1.0:
        hi *= 2.0
        if hi > 1e6:
            raise ConstructionError("no source-creating strength below 1e6")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fiber_mult(mid) > 1.0:
            hi = mid
        else:
            lo = mid
    return hi


def _py_shear_rows(Y, es, center, r0, s_step, m, bump):
    """Pure-python shear composition for non-standard bump profiles."""
    Y = Y.copy()
    for _ in range(m):
        d = Y - center
        d -= np.floor(d + 0.5)
        rn = np.linalg.norm(d, axis=1)
        act = (rn > 0.0) & (rn < r0)
        if np.any(act):
            u = d[act] @ es
            du = u * s_step * bump(rn[act] / r0)
            Y[act] = wrap_torus(Y[act] + du[:, None] * es)
    return Y


def _py_unshear_rows(Y, es, center, r0, s_step, m, bump):
    """Exact inverse of _py_shear_rows via per-shear monotone bisection."""
    Y = Y.copy()
    for _ in range(m):
        d = Y - center
        d -= np.floor(d + 0.5)
        rn2 = np.sum(d * d, axis=1)
        act = (rn2 > 0.0) & (rn2 < r0 * r0)
        if not np.any(act):
            continue
        da = d[act]
        up = da @ es
        w = da - up[:, None] * es
        wn2 = np.sum(w * w, axis=1)
        b = np.sqrt(np.maximum(r0 * r0 - wn2, 0.0))
        sgn = np.where(up >= 0.0, 1.0, -1.0)
        target = sgn * up
        ua = np.zeros_like(b)
        ub = b.copy()
        for _ in range(80):
            um = 0.5 * (ua + ub)
            rr = np.sqrt(wn2 + um * um) / r0
            h = um * (1.0 + s_step * bump(rr))
            low = h < target
            ua = np.where(low, um, ua)
            ub = np.where(low, ub, um)
        u = sgn * 0.5 * (ua + ub)
        Y[act] = wrap_torus(center + w + u[:, None] * es)
    return Y


def da_surgery(anosov: SystemSpec, params: SurgeryParams = None) -> SystemSpec:
    """Push the stable direction outward at a fixed point of a torus map.

    The base automorphism must have exactly one contracting eigenvalue.
    After the linear map, m identical shears displace points inside the
    support ball along the stable unit vector, each by
    s/m * psi(|y - center| / r0) * <y - center, e_s>.  Above the reported
    strength threshold the center becomes a source and the complement of a
    small ball around it becomes a verified trapping region for an
    (n-1)-dimensional attractor.
    """
    params = params if params is not None else SurgeryParams()
    man = anosov.manifold
    n = man.dim
    M = anosov.extras.get("matrix")
    if M is None:
        raise ConstructionError("surgery needs a torus automorphism as its base")
    es = anosov.extras.get("stable_unit")
    lam_s = anosov.extras.get("stable_eigenvalue")
    if es is None or lam_s is None:
        raise ConstructionError(
            "surgery needs exactly one contracting direction (codimension one)"
        )
    Mb = anosov.extras["matrix_inverse"]

    center = (
        np.zeros(n)
        if params.center is None
        else wrap_torus(np.asarray(params.center, dtype=float))
    )
    if center.shape != (n,):
        raise ConstructionError(f"center of shape {center.shape} does not fit T{n}")
    if np.linalg.norm(torus_delta(M @ center, center)) > 1e-12:
        raise ConstructionError("surgery center must be a fixed point of the base map")

    r0 = float(params.radius)
    if not 0.0 < r0 <= 0.49:
        raise ConstructionError(
            f"support radius {r0} invalid: the ball must embed in the torus (0 < r <= 0.49)"
        )
    s = float(params.strength)
    if s <= 0.0:
        raise ConstructionError("surgery strength must be positive")

    bump = params.bump
    t_grid, vals, dmin = _bump_certificate(bump)
    cap = 0.25 if dmin >= 0.0 else min(0.25, 0.8 / abs(dmin))
    if params.steps is None:
        m = max(1, math.ceil(s / cap))
    else:
        m = int(params.steps)
        if m < 1 or s / m > cap + 1e-12:
            raise ConstructionError(
                f"{m} shears leave per-shear strength {s / m:.4g} above the "
                f"invertibility cap {cap:.4g}"
            )
    if m > 200:
        raise ConstructionError(f"strength {s:g} would need {m} shears (limit 200)")
    s_step = s / m
    # each shear must map the support ball into itself
    if np.max(t_grid * (1.0 + s_step * vals)) > 1.0 + 1e-12:
        raise ConstructionError("bump profile lets a shear escape its support ball")

    for rec in anosov.fixed_points:
        delta = np.linalg.norm(torus_delta(rec.location.state, center))
        if delta > 1e-9 and delta <= r0:
            raise ConstructionError(
                f"support ball swallows another fixed point: {rec.describe()}"
            )

    lam_abs = abs(lam_s)
    fiber_mult = lam_abs * (1.0 + s_step) ** m
    if fiber_mult <= 1.0 + 1e-6:
        smin = _source_threshold(lam_abs, cap)
        raise ConstructionError(
            f"strength {s:g} is below the source-creation threshold; "
            f"minimal strength = {smin:.6f}"
        )

    is_standard = bump is standard_surgery_bump
    esc = es.copy()
    cc = center.copy()

    if is_standard:
        def step(x):
            row = wrap_torus(x)[None, :].copy()
            return _kernels.da_step_many(M, esc, cc, r0, s_step, m, row)[0]

        def back(x):
            row = wrap_torus(x)[None, :].copy()
            return _kernels.da_back_many(Mb, esc, cc, r0, s_step, m, row)[0]

        def tangent(x):
            row = wrap_torus(x)[None, :].copy()
            return _kernels.da_tangent_many(M, esc, cc, r0, s_step, m, row)[0]

        step_many = lambda X: _kernels.da_step_many(
            M, esc, cc, r0, s_step, m, wrap_torus(np.asarray(X, dtype=float))
        )
        back_many = lambda X: _kernels.da_back_many(
            Mb, esc, cc, r0, s_step, m, wrap_torus(np.asarray(X, dtype=float))
        )
    else:
        def step(x):
            y = wrap_torus(M @ wrap_torus(x))
            return _py_shear_rows(y[None, :], esc, cc, r0, s_step, m, bump)[0]

        def back(x):
            y = _py_unshear_rows(
                wrap_torus(x)[None, :], esc, cc, r0, s_step, m, bump
            )[0]
            return wrap_torus(Mb @ y)

        tangent = None

        step_many = lambda X: _py_shear_rows(
            wrap_torus(wrap_torus(np.asarray(X, dtype=float)) @ M.T),
            esc, cc, r0, s_step, m, bump,
        )
        back_many = lambda X: wrap_torus(
            _py_unshear_rows(
                wrap_torus(np.asarray(X, dtype=float)), esc, cc, r0, s_step, m, bump
            )
            @ Mb.T
        )

    # fixed points: the center becomes a source; for a positive stable
    # eigenvalue two saddles appear on the stable segment through it
    unstable = anosov.extras["unstable_moduli"]
    records = [
        FixedPointRecord(
            location=Point(man, center.copy()),
            kind="source",
            multipliers=tuple(sorted(unstable + (fiber_mult,), reverse=True)),
            label="surgery source",
        )
    ]

    def fiber(t):
        u = lam_s * t
        for _ in range(m):
            r = abs(u) / r0
            if r < 1.0:
                u *= 1.0 + s_step * bump(r)
        return u

    t_star = None
    if lam_s > 0.0:
        t_star = float(brentq(lambda t: fiber(t) - t, 1e-12, r0 / lam_s, xtol=1e-15))
        u = lam_s * t_star
        deriv = lam_s
        for _ in range(m):
            r = abs(u) / r0
            if r < 1.0:
                phi = bump(r)
                deriv *= 1.0 + s_step * (phi + r * bump.derivative(r))
                u *= 1.0 + s_step * phi
        if abs(deriv) >= 1.0 - 1e-6:
            raise ConstructionError(
                f"degenerate saddle on the stable segment (multiplier {deriv:.6g})"
            )
        saddle_moduli = tuple(sorted(unstable + (abs(deriv),), reverse=True))
        for sign in (1.0, -1.0):
            records.append(
                FixedPointRecord(
                    location=Point(man, wrap_torus(center + sign * t_star * es)),
                    kind="saddle",
                    multipliers=saddle_moduli,
                    label="surgery saddle",
                )
            )
    for rec in anosov.fixed_points:
        if np.linalg.norm(torus_delta(rec.location.state, center)) > r0:
            records.append(rec)

    # trapping region: complement of a ball well inside the support ball,
    # certified by a sampled forward margin
    rng = np.random.default_rng(7)
    region = None
    margin = None
    for factor in (0.4, 0.3, 0.5, 0.2):
        cand = BallComplementRegion(man, center, factor * r0)
        samples = cand.sample_states(4096, rng)
        got = float(np.min(cand.depth_many(step_many(samples))))
        if got > 1e-3:
            region, margin = cand, got
            break
    if region is None:
        raise ConstructionError(
            "no trapped ball-complement found; surgery parameters leave no "
            "certified attractor neighborhood"
        )

    seed_state = wrap_torus(center + 0.37)
    if region.depth(seed_state) <= 0:
        seed_state = wrap_torus(center + 0.29)

    recipe = derived_recipe(
        "da_surgery",
        [anosov.recipe],
        center=tuple(float(v) for v in center),
        radius=r0,
        strength=s,
        steps=int(m),
        bump=bump.name if is_standard else "custom",
    )
    extras = {
        "matrix": M,
        "matrix_inverse": Mb,
        "stable_unit": esc,
        "stable_eigenvalue": lam_s,
        "unstable_moduli": unstable,
        "surgery": {
            "center": cc,
            "radius": r0,
            "strength": s,
            "steps": m,
            "step_strength": s_step,
            "bump": bump,
            "fiber_multiplier": fiber_mult,
            "saddle_offset": t_star,
        },
        "trapping_region": region,
        "trapping_margin_estimate": margin,
        "attractor_seed": seed_state,
        "fast_step_many": step_many,
        "fast_back_many": back_many,
    }
    if is_standard:
        extras["fast_orbit"] = lambda x0, count, burn: _kernels.da_orbit(
            M, esc, cc, r0, s_step, m, wrap_torus(x0), int(count), int(burn)
        )
        extras["fast_lyap"] = lambda x0, nsteps, burn, renorm: _kernels.da_lyap(
            M, esc, cc, r0, s_step, m, wrap_torus(x0), int(nsteps), int(burn), int(renorm)
        )
        extras["fast_tangent_many"] = lambda X: _kernels.da_tangent_many(
            M, esc, cc, r0, s_step, m, wrap_torus(np.asarray(X, dtype=float))
        )

    spec = SystemSpec(
        name=f"da({anosov.name})",
        manifold=man,
        step_state=step,
        back_state=back,
        fixed_points=tuple(records),
        recipe=recipe,
        declared_attractor_dim=n - 1,
        declared_orientable=True,
        tangent_state=tangent,
        extras=extras,
    )
    validate_system(spec)
    return spec


# ---------------------------------------------------------------------------
# the quotient sphere model


_plykin_cache = None


def plykin_system() -> SystemSpec:
    """Expanding one dimensional attractor on the topological 2-sphere.

    The cat-map surgery upstairs commutes with x -> -x (the linear part is
    odd and the shears are odd in the offset), so it descends to the
    involution quotient, a sphere.  The quotient map carries a one
    dimensional expanding attractor with four fixed classes: the source at
    the lattice class and three saddles.  The instance is cached; the
    construction is deterministic and the result immutable.
    """
    global _plykin_cache
    if _plykin_cache is not None:
        return _plykin_cache

    upstairs = da_surgery(toral_automorphism([[2, 1], [1, 1]]))
    sur = upstairs.extras["surgery"]
    M = upstairs.extras["matrix"]
    Mb = upstairs.extras["matrix_inverse"]
    es, cc = upstairs.extras["stable_unit"], sur["center"]
    r0, s_step, m = sur["radius"], sur["step_strength"], sur["steps"]
    man = QuotientSphere()

    def step(x):
        row = wrap_torus(x)[None, :].copy()
        return quotient_canonical(_kernels.da_step_many(M, es, cc, r0, s_step, m, row)[0])

    def back(x):
        row = wrap_torus(x)[None, :].copy()
        return quotient_canonical(_kernels.da_back_many(Mb, es, cc, r0, s_step, m, row)[0])

    def tangent(x):
        rep = quotient_canonical(x)
        row = rep[None, :].copy()
        J = _kernels.da_tangent_many(M, es, cc, r0, s_step, m, row)[0]
        image = _kernels.da_step_many(M, es, cc, r0, s_step, m, rep[None, :].copy())[0]
        flipped = np.linalg.norm(torus_delta(quotient_canonical(image), image)) > 1e-9
        return -J if flipped else J

    step_many = lambda X: _kernels.quotient_canonical_rows(
        _kernels.da_step_many(M, es, cc, r0, s_step, m, wrap_torus(np.asarray(X, dtype=float)))
    )
    back_many = lambda X: _kernels.quotient_canonical_rows(
        _kernels.da_back_many(Mb, es, cc, r0, s_step, m, wrap_torus(np.asarray(X, dtype=float)))
    )

    # fixed classes: the upstairs source and saddle pair descend directly;
    # the remaining classes satisfy (A + I) x in Z^2 (image is the other
    # representative) and sit outside the support ball
    records = []
    for rec in upstairs.fixed_points:
        if rec.kind == "source":
            records.append(
                FixedPointRecord(
                    location=Point(man, rec.location.state.copy()),
                    kind="source",
                    multipliers=rec.multipliers,
                    label="quotient of surgery source",
                )
            )
            break
    saddle_up = [r for r in upstairs.fixed_points if r.kind == "saddle"]
    records.append(
        FixedPointRecord(
            location=Point(man, saddle_up[0].location.state.copy()),
            kind="saddle",
            multipliers=saddle_up[0].multipliers,
            label="quotient of surgery saddle pair",
        )
    )
    AI = M + np.eye(2)
    seen = [np.zeros(2)]
    for k1 in range(-2, 3):
        for k2 in range(-2, 3):
            x = quotient_canonical(np.linalg.solve(AI, np.array([k1, k2], dtype=float)))
            if any(man.distance(x, p) < 1e-9 for p in seen):
                continue
            seen.append(x)
            if np.linalg.norm(torus_delta(wrap_torus(M @ x), cc)) <= r0:
                raise ConstructionError(
                    "anti-fixed class falls into the support ball; quotient "
                    "census would need the deformed differential"
                )
            J = _kernels.da_tangent_many(M, es, cc, r0, s_step, m, x[None, :].copy())[0]
            moduli = tuple(sorted((float(abs(v)) for v in np.linalg.eigvals(J)), reverse=True))
            records.append(
                FixedPointRecord(
                    location=Point(man, x),
                    kind=classify_multipliers(moduli),
                    multipliers=moduli,
                    label="involution-swapped class",
                )
            )

    trapping = TransportedRegion(
        man,
        inner=upstairs.extras["trapping_region"],
        to_inner=lambda state: state,
        from_inner=quotient_canonical,
    )

    # global chart: the even doubly periodic function, scaled so the unit
    # disk of the chart contains the trapping region (maximum principle:
    # |p| exceeds its value on a circle around the pole only inside it)
    rng = np.random.default_rng(11)
    r_t = upstairs.extras["trapping_region"].radius
    disk = None
    chart = None
    for shrink in (1.0, 0.75, 0.5):
        theta = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        circle = shrink * r_t * np.exp(1j * theta)
        sigma = float(np.max(np.abs(weierstrass_p(circle))))
        cand_chart = EvenEllipticChart(scale=sigma)

        def gauge(state, _c=cand_chart):
            try:
                return float(np.linalg.norm(_c.to_plane(state)))
            except ChartError:
                return np.inf

        def boundary_vectors(count, rng_):
            ang = rng_.uniform(0.0, 2.0 * np.pi, count)
            return np.column_stack([np.cos(ang), np.sin(ang)])

        region = GaugeDiskRegion(
            man, gauge, boundary_vectors, cand_chart.from_plane_many,
            scale_note=f"scale={sigma:.6g}",
        )
        try:
            disk = certify_invariant_disk(
                region, step_many, rng,
                boundary_count=512, interior_count=512,
                exclude_states=[np.zeros(2)],
                note="chart disk around the attractor",
            )
            chart = cand_chart
            break
        except ValueError:
            continue
    if disk is None:
        raise ConstructionError("no invariant chart disk found for the quotient model")

    extras = {
        "upstairs": upstairs,
        "trapping_region": trapping,
        "trapping_margin_estimate": upstairs.extras["trapping_margin_estimate"],
        "invariant_disk": disk,
        "global_chart": chart,
        "plane_gauge": lambda v: float(np.linalg.norm(v)),
        "attractor_seed": quotient_canonical(upstairs.extras["attractor_seed"]),
        "fast_step_many": step_many,
        "fast_back_many": back_many,
        "fast_orbit": lambda x0, count, burn: _kernels.quotient_orbit(
            M, es, cc, r0, s_step, m, wrap_torus(x0), int(count), int(burn)
        ),
        "fast_lyap": lambda x0, nsteps, burn, renorm: _kernels.da_lyap(
            M, es, cc, r0, s_step, m, wrap_torus(x0), int(nsteps), int(burn), int(renorm)
        ),
    }
    spec = SystemSpec(
        name="plykin",
        manifold=man,
        step_state=step,
        back_state=back,
        fixed_points=tuple(records),
        recipe=atomic_recipe("plykin"),
        declared_attractor_dim=1,
        declared_orientable=False,
        tangent_state=tangent,
        extras=extras,
    )
    validate_system(spec)
    _plykin_cache = spec
    return spec


# ---------------------------------------------------------------------------
# gradient-like reference systems


def north_south_sphere(k: int, contraction: float = 0.5) -> SystemSpec:
    """Sphere map with one source (top pole) and one sink (bottom pole).

    In the stereographic chart from the top pole the map is plain scaling
    by the contraction factor, so the sink has all multipliers equal to it
    and the source all equal to its inverse.  Every other orbit runs from
    pole to pole with strictly decreasing height.
    """
    k = int(k)
    c = float(contraction)
    if k < 1:
        raise ConstructionError("sphere dimension must be at least 1")
    if not 0.0 < c < 1.0:
        raise ConstructionError(f"contraction {c} outside (0, 1)")
    man = Sphere(k)
    chart = StereographicChart(k)
    north = chart.missing_state
    south = -north

    def _scale_state(x, factor):
        x = man.canon(x)
        if x[-1] > 1.0 - 1e-12:
            return north.copy()
        return chart.from_plane(factor * chart.to_plane(x))

    def step(x):
        return _scale_state(x, c)

    def back(x):
        return _scale_state(x, 1.0 / c)

    def _scale_many(X, factor):
        X = np.asarray(X, dtype=float)
        pole = X[:, -1] > 1.0 - 1e-12
        denom = np.where(pole, 1.0, 1.0 - X[:, -1])
        out = chart.from_plane_many(factor * X[:, :-1] / denom[:, None])
        out[pole] = north
        return out

    def gauge(state):
        try:
            return float(np.linalg.norm(chart.to_plane(state)))
        except ChartError:
            return np.inf

    def boundary_vectors(count, rng_):
        g = rng_.standard_normal((count, k))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    region = GaugeDiskRegion(
        man, gauge, boundary_vectors, chart.from_plane_many, scale_note="unit chart disk"
    )
    rng = np.random.default_rng(5)
    disk = certify_invariant_disk(
        region,
        lambda X: _scale_many(X, c),
        rng,
        boundary_count=256,
        interior_count=256,
        exclude_states=[north],
        note="lower hemisphere",
    )

    records = (
        FixedPointRecord(Point(man, south.copy()), "sink", (c,) * k, label="bottom pole"),
        FixedPointRecord(Point(man, north.copy()), "source", (1.0 / c,) * k, label="top pole"),
    )
    seed = man.canon(np.concatenate([np.ones(k), [-0.5]]))
    extras = {
        "contraction": c,
        "trapping_region": CapRegion(man, 0.0),
        "invariant_disk": disk,
        "global_chart": chart,
        "plane_gauge": lambda v: float(np.linalg.norm(v)),
        "attractor_seed": seed,
        "sink_state": south.copy(),
        "fast_step_many": lambda X: _scale_many(X, c),
        "fast_back_many": lambda X: _scale_many(X, 1.0 / c),
    }
    spec = SystemSpec(
        name=f"north-south-S{k}",
        manifold=man,
        step_state=step,
        back_state=back,
        fixed_points=records,
        recipe=atomic_recipe("north_south", dim=k, contraction=c),
        declared_attractor_dim=0,
        declared_orientable=True,
        extras=extras,
    )
    validate_system(spec)
    return spec


_GRAD_RATE = 4.0 * np.pi * np.pi


def _grad_branch(v, gain):
    """Componentwise time map of the circle gradient flow, two branches.

    v lives in [-1/2, 1/2); the near branch handles |v| <= 1/4 directly and
    the far branch works in the complementary variable so the huge gain
    never meets a huge tangent value.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    sgn = np.where(v >= 0.0, 1.0, -1.0)
    near = a <= 0.25
    out = np.empty_like(v)
    an = np.where(near, a, 0.0)
    out_near = np.arctan(gain * np.tan(np.pi * an)) / np.pi
    w = np.where(near, 0.25, 0.5 - a)
    out_far = 0.5 - np.arctan(np.tan(np.pi * w) / gain) / np.pi
    out = np.where(near, out_near, out_far)
    return sgn * out


def _grad_branch_deriv(v, gain):
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    near = a <= 0.25
    tn = np.tan(np.pi * np.where(near, a, 0.0))
    d_near = gain * (1.0 + tn * tn) / (1.0 + (gain * tn) ** 2)
    tf = np.tan(np.pi * np.where(near, 0.25, 0.5 - a))
    d_far = (1.0 + tf * tf) / (gain + tf * tf / gain)
    return np.where(near, d_near, d_far)


def torus_gradient_ms(k: int) -> SystemSpec:
    """Time-1 map of the descending gradient flow of sum_i cos(2 pi x_i).

    Decouples into circles; the closed-form solution moves tan(pi x_i)
    exponentially, giving 2^k hyperbolic fixed points on the half-integer
    grid with the unique sink at the all-halves point.

    The map carries no backward evaluation: the unit-time contraction
    factor exp(-4 pi^2) is smaller than the relative resolution of double
    precision, so the forward map sends most of each circle to the sink's
    exact bit pattern and is not numerically injective.  The analytic
    time-reversed map is available in extras under analytic_backward for
    callers that accept its limits.
    """
    k = int(k)
    if k < 1:
        raise ConstructionError("torus dimension must be at least 1")
    if k > 12:
        raise ConstructionError(f"2^{k} fixed point records is past the supported range")
    man = Torus(k)
    gain = float(np.exp(_GRAD_RATE))

    def step(x):
        v = torus_delta(x, 0.0)
        return wrap_torus(_grad_branch(v, gain))

    def analytic_backward(x):
        # returned in signed displacement form around the source: wrapping
        # a negative preimage of size ~exp(-4 pi^2) into [0, 1) rounds to
        # the source bit pattern and loses the side, while the forward map
        # reads any representative through a round-based displacement
        v = torus_delta(x, 0.0)
        a = np.abs(np.atleast_1d(v))
        out = np.empty_like(a)
        near = a <= 0.25
        out[near] = np.arctan(np.tan(np.pi * a[near]) / gain) / np.pi
        far = ~near
        with np.errstate(divide="ignore"):
            # tan(pi a) = 1/tan(pi (1/2 - a)); the direct far form
            # 1/2 - arctan(gain * tan)/pi cancels to zero at this gain
            out[far] = (
                np.arctan(1.0 / (gain * np.tan(np.pi * (0.5 - a[far])))) / np.pi
            )
        return np.sign(v) * out.reshape(np.shape(v))

    def tangent(x):
        v = torus_delta(x, 0.0)
        return np.diag(_grad_branch_deriv(v, gain))

    records = []
    for bits in range(2**k):
        coords = np.array([(0.5 if (bits >> i) & 1 else 0.0) for i in range(k)])
        mults = tuple(
            sorted((1.0 / gain if c == 0.5 else gain for c in coords), reverse=True)
        )
        records.append(
            FixedPointRecord(
                Point(man, coords), classify_multipliers(mults), mults,
                label="potential critical point",
            )
        )
    sink = np.full(k, 0.5)
    extras = {
        "trapping_region": BallRegion(man, sink, 0.35),
        "attractor_seed": wrap_torus(sink + 0.11),
        "sink_state": sink,
        "analytic_backward": analytic_backward,
        "fast_step_many": lambda X: wrap_torus(
            _grad_branch(torus_delta(np.asarray(X, dtype=float), 0.0), gain)
        ),
    }
    spec = SystemSpec(
        name=f"gradient-T{k}",
        manifold=man,
        step_state=step,
        back_state=None,
        fixed_points=tuple(records),
        recipe=atomic_recipe("torus_gradient", dim=k),
        declared_attractor_dim=0,
        declared_orientable=True,
        tangent_state=tangent,
        extras=extras,
    )
    validate_system(spec)
    return spec


def torus_translation(offset) -> SystemSpec:
    """Rigid torus translation x -> x + offset, a non-hyperbolic control.

    Isometric, fixed-point free for a nonzero offset, and with identity
    tangent map everywhere; useful as a negative control for hyperbolicity
    diagnostics.
    """
    off = wrap_torus(np.asarray(offset, dtype=float))
    if off.ndim != 1 or off.size < 1:
        raise ConstructionError("offset must be a nonempty vector")
    n = off.size
    man = Torus(n)
    eye = np.eye(n)
    extras = {
        "trapping_region": WholeSpaceRegion(man),
        "attractor_seed": wrap_torus(0.1 + 0.17 * np.arange(n)),
        "fast_step_many": lambda X: wrap_torus(np.asarray(X, dtype=float) + off),
        "fast_back_many": lambda X: wrap_torus(np.asarray(X, dtype=float) - off),
        "fast_tangent_many": lambda X: np.broadcast_to(
            eye, (len(np.atleast_2d(X)), n, n)
        ).copy(),
    }
    spec = SystemSpec(
        name=f"translation-T{n}",
        manifold=man,
        step_state=lambda x: wrap_torus(np.asarray(x, dtype=float) + off),
        back_state=lambda x: wrap_torus(np.asarray(x, dtype=float) - off),
        fixed_points=(),
        recipe=atomic_recipe("torus_translation", offset=tuple(float(v) for v in off)),
        declared_attractor_dim=None,
        declared_orientable=True,
        tangent_state=lambda x: eye.copy(),
        extras=extras,
    )
    validate_system(spec)
    return spec


def radial_logistic_flow(rho, tau):
    """Time-tau map of the logistic radial flow on [0, 2].

    On [0, 1] the flow solves rho' = rho (1 - rho) in closed form; on
    [1, 2] it is the mirror image under rho -> 2 - rho.  The fixed points
    0 and 2 repel and 1 attracts, with unit-time multipliers e and 1/e.
    """
    rho = np.asarray(rho, dtype=float)
    gain = math.exp(float(tau))
    lower = rho <= 1.0
    rl = np.where(lower, rho, 2.0 - rho)
    out = rl * gain / (1.0 + rl * (gain - 1.0))
    res = np.where(lower, out, 2.0 - out)
    if rho.ndim == 0:
        return float(res)
    return res


def radial_logistic_map() -> SystemSpec:
    """SystemSpec wrapper for the unit-time radial logistic map."""
    man = Interval(0.0, 2.0)
    e = math.e

    def step(x):
        return np.atleast_1d(radial_logistic_flow(man.canon(x)[0], 1.0))

    def back(x):
        return np.atleast_1d(radial_logistic_flow(man.canon(x)[0], -1.0))

    def tangent(x):
        rho = man.canon(x)[0]
        rl = rho if rho <= 1.0 else 2.0 - rho
        return np.array([[e / (1.0 + rl * (e - 1.0)) ** 2]])

    records = (
        FixedPointRecord(Point(man, [0.0]), "source", (e,), label="outer end"),
        FixedPointRecord(Point(man, [1.0]), "sink", (1.0 / e,), label="midpoint"),
        FixedPointRecord(Point(man, [2.0]), "source", (e,), label="outer end"),
    )
    extras = {
        "trapping_region": BandRegion(man, 0.25, 1.75),
        "attractor_seed": np.array([0.3]),
        "sink_state": np.array([1.0]),
        "flow": radial_logistic_flow,
    }
    spec = SystemSpec(
        name="radial-logistic",
        manifold=man,
        step_state=step,
        back_state=back,
        fixed_points=records,
        recipe=atomic_recipe("radial_logistic"),
        declared_attractor_dim=0,
        declared_orientable=True,
        tangent_state=tangent,
        extras=extras,
    )
    validate_system(spec)
    return spec


# ---------------------------------------------------------------------------
# diffeotopies


@dataclass
class Diffeotopy:
    """A one parameter family connecting a system's map to the identity.

    forward_state(0, x) is the system map and forward_state(1, x) the
    identity, both handled as exact special cases.  approximate flags
    families that interpolate in charts rather than along a flow; such a
    family can fold at interior parameters, so its backward_state is best
    effort there and may raise ArithmeticError where no preimage is found.
    """

    system: SystemSpec
    strategy: str
    approximate: bool
    _fwd: object
    _inv: object

    def forward_state(self, alpha, x):
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"family parameter {alpha} outside [0, 1]")
        return self._fwd(alpha, np.asarray(x, dtype=float))

    def backward_state(self, alpha, x):
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"family parameter {alpha} outside [0, 1]")
        return self._inv(alpha, np.asarray(x, dtype=float))

    def forward(self, alpha, p: Point) -> Point:
        return Point(self.system.manifold, self.forward_state(alpha, p.state))

    def backward(self, alpha, p: Point) -> Point:
        return Point(self.system.manifold, self.backward_state(alpha, p.state))


_ISOTOPIES: dict = {}


def register_isotopy(op: str, factory) -> None:
    """factory(system) -> (forward, inverse, approximate flag)."""
    _ISOTOPIES[op] = factory


def _validate_diffeotopy(dt: Diffeotopy, samples: int = 200, pairs: int = 1000) -> None:
    rng = np.random.default_rng(31415)
    man = dt.system.manifold
    X = man.random_states(rng, samples)
    for x in X:
        if man.distance(dt.forward_state(0.0, x), dt.system.step_state(x.copy())) > 1e-12:
            raise ConstructionError("family does not match the system map at parameter 0")
        if man.distance(dt.forward_state(1.0, x), man.canon(x)) > 1e-12:
            raise ConstructionError("family does not reach the identity at parameter 1")
    for alpha in (0.25, 0.5, 0.75):
        A = man.random_states(rng, pairs)
        B = man.random_states(rng, pairs)
        for a, b in zip(A, B):
            if man.distance(a, b) <= 1e-6:
                continue
            fa = dt.forward_state(alpha, a)
            fb = dt.forward_state(alpha, b)
            if man.distance(fa, fb) <= 1e-9:
                raise ConstructionError(
                    f"injectivity spot check failed at parameter {alpha}"
                )
        if dt.approximate:
            # chartwise-interpolated families can fold at interior
            # parameters; their inverse is best effort by contract
            continue
        for x in X[:50]:
            y = dt.forward_state(alpha, x)
            if man.distance(dt.backward_state(alpha, y), man.canon(x)) > 1e-8:
                raise ConstructionError(
                    f"family inverse drifts at parameter {alpha}"
                )


def make_diffeotopy(system: SystemSpec) -> Diffeotopy:
    """Connect a sphere system to the identity through registered strategies."""
    op = system.recipe.op
    if op not in _ISOTOPIES:
        raise ConstructionError(
            f"no registered isotopy strategy for operation '{op}'"
        )
    fwd, inv, approximate = _ISOTOPIES[op](system)
    dt = Diffeotopy(system, op, approximate, fwd, inv)
    _validate_diffeotopy(dt)
    return dt


def _north_south_isotopy(system: SystemSpec):
    c = system.extras["contraction"]
    chart = system.extras["global_chart"]
    north = chart.missing_state
    man = system.manifold

    def family(alpha, x, sign):
        if alpha == 0.0:
            return system.step_state(x) if sign > 0 else system.back_state(x)
        if alpha == 1.0:
            return man.canon(x)
        x = man.canon(x)
        if x[-1] > 1.0 - 1e-12:
            return north.copy()
        return chart.from_plane(c ** (sign * (1.0 - alpha)) * chart.to_plane(x))

    return (
        lambda alpha, x: family(alpha, x, +1),
        lambda alpha, x: family(alpha, x, -1),
        False,
    )


register_isotopy("north_south", _north_south_isotopy)


def _plykin_isotopy(system: SystemSpec):
    """Chartwise straight-line family for the quotient model.

    Interpolates the covering map toward the identity along shortest torus
    displacements.  Equivariant, hence well defined on classes; exact at
    both endpoints; mid-parameter values can jump on the measure-zero set
    where the shortest displacement is ambiguous, which is why the family
    is flagged approximate.
    """
    up = system.extras["upstairs"]

    def g(alpha, y):
        fy = up.step_state(y.copy())
        return wrap_torus(y + (1.0 - alpha) * torus_delta(fy, y))

    def g_jac(alpha, y):
        J = up.tangent_state(y.copy())
        return np.eye(2) + (1.0 - alpha) * (J - np.eye(2))

    def fwd(alpha, x):
        if alpha == 0.0:
            return system.step_state(x)
        if alpha == 1.0:
            return quotient_canonical(x)
        return quotient_canonical(g(alpha, wrap_torus(x)))

    def inv(alpha, x):
        if alpha == 0.0:
            return system.back_state(x)
        if alpha == 1.0:
            return quotient_canonical(x)
        target0 = wrap_torus(x)
        for target in (target0, wrap_torus(-target0)):
            for seed in (target, up.back_state(target.copy())):
                y = seed.copy()
                r = torus_delta(g(alpha, y), target)
                ok = False
                for _ in range(60):
                    if np.linalg.norm(r) < 1e-12:
                        ok = True
                        break
                    delta = np.linalg.solve(g_jac(alpha, y), r)
                    t = 1.0
                    for _ in range(25):
                        y_new = wrap_torus(y - t * delta)
                        r_new = torus_delta(g(alpha, y_new), target)
                        if np.linalg.norm(r_new) < np.linalg.norm(r):
                            y, r = y_new, r_new
                            break
                        t *= 0.5
                    else:
                        break
                if ok:
                    return quotient_canonical(y)
        raise ArithmeticError("family inverse did not converge")

    return fwd, inv, True


register_isotopy("plykin", _plykin_isotopy)


# ---------------------------------------------------------------------------
# recipe builders


def _build_toral(node: Recipe):
    n = node.param("n")
    flat = node.param("matrix")
    return toral_automorphism(np.array(flat, dtype=float).reshape(n, n))


def _build_da(node: Recipe):
    if node.param("bump") != "standard":
        raise ConstructionError(
            "recipe names a custom bump profile, which cannot be serialized"
        )
    base = build_recipe(node.children[0])
    return da_surgery(
        base,
        SurgeryParams(
            center=np.array(node.param("center"), dtype=float),
            radius=float(node.param("radius")),
            strength=float(node.param("strength")),
            steps=int(node.param("steps")),
        ),
    )


register_builder("toral_automorphism", _build_toral)
register_builder("da_surgery", _build_da)
register_builder("plykin", lambda node: plykin_system())
register_builder(
    "north_south",
    lambda node: north_south_sphere(node.param("dim"), node.param("contraction")),
)
register_builder("torus_gradient", lambda node: torus_gradient_ms(node.param("dim")))
register_builder(
    "torus_translation",
    lambda node: torus_translation(np.array(node.param("offset"), dtype=float)),
)
register_builder("radial_logistic", lambda node: radial_logistic_map())
