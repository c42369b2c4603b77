"""Global chart for the involution quotient of the square torus.

The quotient of the flat 2-torus by x ~ -x is a topological sphere, and the
classical even doubly periodic function for the square lattice realizes the
quotient map directly: it is invariant under the involution, has a single
double pole at the lattice class, and separates every other orbit pair.  Its
value, rescaled, therefore serves as a single chart that covers the whole
quotient minus one designated point.  All series here use the square-lattice
nome exp(-pi), for which four terms already reach machine precision.
"""

from __future__ import annotations

import numpy as np

from .geometry import ChartError, quotient_canonical, quotient_canonical_many, torus_delta

__all__ = [
    "E1",
    "G2",
    "weierstrass_p",
    "weierstrass_p_prime",
    "weierstrass_p_inverse",
    "EvenEllipticChart",
]

_NTERMS = 8
_Q = np.exp(-np.pi)

# theta constants at argument zero (the self-dual nome makes th2(0) = th4(0))
_N = np.arange(_NTERMS)
_HALF_EXP = _Q ** ((_N + 0.5) ** 2)
_SQ_EXP = _Q ** ((_N[1:]) ** 2)
_SIGNS = (-1.0) ** _N

THETA2_0 = float(2.0 * np.sum(_HALF_EXP))
THETA3_0 = float(1.0 + 2.0 * np.sum(_SQ_EXP))
THETA4_0 = float(1.0 + 2.0 * np.sum(_SIGNS[1:] * _SQ_EXP))

# branch values of the chart: E1, 0, -E1; the quartic invariant is G2
E1 = float(np.pi**2 * THETA4_0**4)
G2 = 4.0 * E1 * E1

_C2 = (np.pi * THETA2_0 * THETA4_0) ** 2  # prefactor of the squared theta ratio


def _theta1(v):
    v = np.asarray(v)
    k = (2.0 * _N + 1.0).reshape((-1,) + (1,) * v.ndim)
    coef = (_SIGNS * _HALF_EXP).reshape(k.shape)
    return 2.0 * np.sum(coef * np.sin(k * v[None, ...]), axis=0)


def _theta1_prime(v):
    v = np.asarray(v)
    k = (2.0 * _N + 1.0).reshape((-1,) + (1,) * v.ndim)
    coef = (_SIGNS * _HALF_EXP).reshape(k.shape)
    return 2.0 * np.sum(coef * k * np.cos(k * v[None, ...]), axis=0)


def _theta3(v):
    v = np.asarray(v)
    k = (2.0 * _N[1:]).reshape((-1,) + (1,) * v.ndim)
    coef = _SQ_EXP.reshape(k.shape)
    return 1.0 + 2.0 * np.sum(coef * np.cos(k * v[None, ...]), axis=0)


def _theta3_prime(v):
    v = np.asarray(v)
    k = (2.0 * _N[1:]).reshape((-1,) + (1,) * v.ndim)
    coef = _SQ_EXP.reshape(k.shape)
    return -2.0 * np.sum(coef * k * np.sin(k * v[None, ...]), axis=0)


def _reduce(z):
    """Shift z by lattice vectors into the centred cell [-1/2, 1/2)^2."""
    z = np.asarray(z, dtype=complex)
    x = np.real(z) - np.floor(np.real(z) + 0.5)
    y = np.imag(z) - np.floor(np.imag(z) + 0.5)
    return x + 1j * y


def weierstrass_p(z):
    """Even doubly periodic function for the lattice Z + iZ.

    Scalar or array complex input.  The lattice class itself is the double
    pole; values there come out huge or infinite rather than raising.
    """
    v = np.pi * _reduce(z)
    t1 = _theta1(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = _theta3(v) / t1
    return _C2 * ratio * ratio


def weierstrass_p_prime(z):
    """Derivative of weierstrass_p, from termwise theta derivatives."""
    v = np.pi * _reduce(z)
    t1 = _theta1(v)
    t3 = _theta3(v)
    num = _theta3_prime(v) * t1 - t3 * _theta1_prime(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * np.pi * _C2 * (t3 / t1) * (num / (t1 * t1))


def _p_second(z):
    # from the differential equation: p'' = 6 p^2 - G2/2
    p = weierstrass_p(z)
    return 6.0 * p * p - G2 / 2.0


# half periods and their branch values, used for inverse seeding
_HALF_PERIODS = np.array([0.5 + 0.0j, 0.5 + 0.5j, 0.0 + 0.5j])
_BRANCH_VALUES = np.array([E1, 0.0, -E1])

# seed table over the fundamental cell, built lazily
_seed_z = None
_seed_w = None


def _seed_table():
    global _seed_z, _seed_w
    if _seed_z is None:
        n = 96
        xs = (np.arange(n) + 0.5) / n
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        z = (gx + 1j * gy).ravel()
        keep = np.abs(_reduce(z)) > 0.04  # drop the pole neighborhood
        _seed_z = z[keep]
        _seed_w = weierstrass_p(_seed_z)
    return _seed_z, _seed_w


def _newton(z, w, iters=40):
    f = weierstrass_p(z) - w
    scale = max(1.0, abs(w))
    for _ in range(iters):
        if abs(f) <= 1e-11 * scale:
            return z, True
        dp = weierstrass_p_prime(z)
        if abs(dp) < 1e-14:
            return z, False
        step = f / dp
        # damped update: accept the first halving that reduces the residual
        t = 1.0
        for _ in range(30):
            z_new = z - t * step
            f_new = weierstrass_p(z_new) - w
            if abs(f_new) < abs(f):
                z, f = z_new, f_new
                break
            t *= 0.5
        else:
            return z, False
    return z, abs(f) <= 1e-9 * scale


def weierstrass_p_inverse(w):
    """Quotient class z (canonical torus pair) with weierstrass_p(z) = w.

    Seeds come from branch-point expansions, the large-value asymptotic, and
    a precomputed grid; a damped Newton iteration finishes the job.
    """
    w = complex(w)

    seeds = []
    db = np.abs(_BRANCH_VALUES - w)
    j = int(np.argmin(db))
    if db[j] < 1e-13 * max(1.0, abs(w)):
        zb = _HALF_PERIODS[j]
        return quotient_canonical(np.array([zb.real, zb.imag]))
    if db[j] < 3.0:
        # quadratic branch expansion: w - e = p''(omega)/2 * delta^2
        dd = _p_second(_HALF_PERIODS[j])
        delta = np.sqrt(2.0 * (w - _BRANCH_VALUES[j]) / dd)
        seeds.append(_HALF_PERIODS[j] + delta)
    if abs(w) > 20.0:
        seeds.append(1.0 / np.sqrt(w))
    sz, sw = _seed_table()
    order = np.argsort(np.abs(sw - w))
    seeds.extend(sz[order[:3]])

    for z0 in seeds:
        z, ok = _newton(complex(z0), w)
        if ok:
            return quotient_canonical(np.array([z.real, z.imag]))
    raise ArithmeticError(f"inverse failed for w = {w}")


def weierstrass_p_inverse_many(ws):
    """Batched inverse: one undamped Newton sweep over the whole array.

    Entries whose residual fails the tolerance are redone by the robust
    scalar routine, so the fast path never has to be careful.
    """
    ws = np.asarray(ws, dtype=complex).ravel()
    out = np.empty((len(ws), 2))
    if len(ws) == 0:
        return out
    sz, sw = _seed_table()
    seeds = np.empty(len(ws), dtype=complex)
    big = np.abs(ws) > 20.0
    seeds[big] = 1.0 / np.sqrt(ws[big])
    rest = np.where(~big)[0]
    for lo in range(0, len(rest), 256):
        idx = rest[lo : lo + 256]
        nearest = np.argmin(np.abs(sw[None, :] - ws[idx, None]), axis=1)
        seeds[idx] = sz[nearest]
    z = seeds.copy()
    with np.errstate(all="ignore"):
        for _ in range(40):
            dp = weierstrass_p_prime(z)
            dp = np.where(np.abs(dp) > 1e-14, dp, 1.0)
            z = z - (weierstrass_p(z) - ws) / dp
        resid = np.abs(weierstrass_p(z) - ws)
    good = np.isfinite(resid) & (resid <= 1e-10 * np.maximum(1.0, np.abs(ws)))
    out[good] = quotient_canonical_many(np.column_stack([z[good].real, z[good].imag]))
    for i in np.where(~good)[0]:
        out[i] = weierstrass_p_inverse(ws[i])
    return out


class EvenEllipticChart:
    """Chart (quotient sphere minus the lattice class) -> R^2.

    to_plane divides the doubly periodic value by a fixed scale so that the
    region of interest (a trapping disk for the quotient dynamics) sits
    inside the unit ball.  Derivatives act on R^2 as the usual scaled
    rotation of a complex multiplication.
    """

    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError("chart scale must be positive")
        self.scale = float(scale)
        self.dim = 2

    def _z(self, state):
        state = np.asarray(state, dtype=float)
        d = torus_delta(state, 0.0)
        if float(np.linalg.norm(d)) < 1e-6:
            raise ChartError("chart does not cover the excluded lattice class")
        return complex(state[0], state[1])

    def to_plane(self, state):
        w = weierstrass_p(self._z(state)) / self.scale
        return np.array([w.real, w.imag])

    def to_plane_many(self, states):
        states = np.asarray(states, dtype=float)
        w = weierstrass_p(states[:, 0] + 1j * states[:, 1]) / self.scale
        return np.column_stack([w.real, w.imag])

    def from_plane(self, vec):
        w = complex(vec[0], vec[1]) * self.scale
        return weierstrass_p_inverse(w)

    def from_plane_many(self, vecs):
        vecs = np.asarray(vecs, dtype=float)
        return weierstrass_p_inverse_many((vecs[:, 0] + 1j * vecs[:, 1]) * self.scale)

    def complex_derivative(self, state):
        return weierstrass_p_prime(self._z(state)) / self.scale

    def jac_to_plane(self, state):
        """d(plane)/d(local torus chart) as a real 2x2 matrix."""
        d = self.complex_derivative(state)
        return np.array([[d.real, -d.imag], [d.imag, d.real]])
