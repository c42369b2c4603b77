"""Compiled inner loops for orbit generation and tangent iteration.

Every kernel works in raw torus coordinates (rows of shape (n,)) and mirrors
the arithmetic of the corresponding SystemSpec step exactly.  The DA kernels
take the surgery as (es, center, r0, s_step, m): m identical shears of
per-step strength s_step applied after the linear map.
"""

from __future__ import annotations

import numba
import numpy as np

__all__ = [
    "toral_orbit",
    "toral_lyap",
    "da_orbit",
    "da_step_many",
    "da_back_many",
    "da_lyap",
    "da_tangent_many",
    "quotient_canonical_rows",
    "quotient_orbit",
]


@numba.njit(cache=True)
def _wrap_inplace(x):
    for i in range(x.shape[0]):
        x[i] -= np.floor(x[i])


@numba.njit(cache=True)
def _matvec_wrap(M, x, out):
    n = x.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += M[i, j] * x[j]
        out[i] = acc - np.floor(acc)


@numba.njit(cache=True)
def _shears_inplace(y, es, center, r0, s_step, m):
    n = y.shape[0]
    d = np.empty(n)
    for _ in range(m):
        rn2 = 0.0
        for i in range(n):
            di = y[i] - center[i]
            di -= np.floor(di + 0.5)
            d[i] = di
            rn2 += di * di
        rn = np.sqrt(rn2)
        if rn >= r0 or rn == 0.0:
            continue
        u = 0.0
        for i in range(n):
            u += d[i] * es[i]
        tt = rn / r0
        q = 1.0 - tt * tt
        ps = np.exp(1.0 - 1.0 / q)
        du = u * s_step * ps
        for i in range(n):
            yi = y[i] + du * es[i]
            y[i] = yi - np.floor(yi)


@numba.njit(cache=True)
def _da_step_inplace(M, es, center, r0, s_step, m, x, scratch):
    _matvec_wrap(M, x, scratch)
    _shears_inplace(scratch, es, center, r0, s_step, m)
    for i in range(x.shape[0]):
        x[i] = scratch[i]


@numba.njit(cache=True)
def toral_orbit(M, x0, npts, t0):
    n = x0.shape[0]
    out = np.empty((npts, n))
    x = x0.copy()
    y = np.empty(n)
    for k in range(npts + t0):
        _matvec_wrap(M, x, y)
        for i in range(n):
            x[i] = y[i]
        if k >= t0:
            for i in range(n):
                out[k - t0, i] = x[i]
    return out


@numba.njit(cache=True)
def _mgs_qr_lognorms(q, sums):
    """In-place modified Gram-Schmidt; accumulates log column norms."""
    n = q.shape[0]
    for j in range(n):
        nrm = 0.0
        for i in range(n):
            nrm += q[i, j] * q[i, j]
        nrm = np.sqrt(nrm)
        sums[j] += np.log(nrm)
        for i in range(n):
            q[i, j] /= nrm
        for j2 in range(j + 1, n):
            dot = 0.0
            for i in range(n):
                dot += q[i, j2] * q[i, j]
            for i in range(n):
                q[i, j2] -= dot * q[i, j]


@numba.njit(cache=True)
def toral_lyap(M, x0, nsteps, t0, renorm):
    n = x0.shape[0]
    x = x0.copy()
    y = np.empty(n)
    for _ in range(t0):
        _matvec_wrap(M, x, y)
        for i in range(n):
            x[i] = y[i]
    q = np.eye(n)
    sums = np.zeros(n)
    k = 0
    for step in range(nsteps):
        _matvec_wrap(M, x, y)
        for i in range(n):
            x[i] = y[i]
        q = M @ q
        k += 1
        if k == renorm or step == nsteps - 1:
            _mgs_qr_lognorms(q, sums)
            k = 0
    return sums / nsteps


@numba.njit(cache=True)
def da_orbit(M, es, center, r0, s_step, m, x0, npts, t0):
    n = x0.shape[0]
    out = np.empty((npts, n))
    x = x0.copy()
    scratch = np.empty(n)
    for k in range(npts + t0):
        _da_step_inplace(M, es, center, r0, s_step, m, x, scratch)
        if k >= t0:
            for i in range(n):
                out[k - t0, i] = x[i]
    return out


@numba.njit(cache=True)
def da_step_many(M, es, center, r0, s_step, m, X):
    out = X.copy()
    n = X.shape[1]
    scratch = np.empty(n)
    for r in range(X.shape[0]):
        row = out[r]
        _da_step_inplace(M, es, center, r0, s_step, m, row, scratch)
    return out


@numba.njit(cache=True)
def _shear_tangent(d, rn, es, r0, s_step, J):
    """Left-multiply J by the shear differential at offset d, |d| = rn < r0."""
    n = d.shape[0]
    if rn == 0.0:
        # psi(0)=1, psi'(0)=0: differential is I + s es es^T
        c1 = s_step
        c2 = 0.0
    else:
        u = 0.0
        for i in range(n):
            u += d[i] * es[i]
        tt = rn / r0
        q = 1.0 - tt * tt
        ps = np.exp(1.0 - 1.0 / q)
        dps = ps * (-2.0 * tt / (q * q))
        c1 = s_step * ps
        c2 = s_step * u * dps / (r0 * rn)
    # S = I + es (c1 es + c2 d)^T  applied as J <- S J
    row = np.empty(n)
    for i in range(n):
        row[i] = c1 * es[i] + c2 * d[i]
    for col in range(n):
        acc = 0.0
        for i in range(n):
            acc += row[i] * J[i, col]
        for i in range(n):
            J[i, col] += es[i] * acc


@numba.njit(cache=True)
def _da_tangent_at(M, es, center, r0, s_step, m, x, J, scratch):
    """J = differential of the DA step at x; advances x in place."""
    n = x.shape[0]
    for i in range(n):
        for j in range(n):
            J[i, j] = M[i, j]
    _matvec_wrap(M, x, scratch)
    d = np.empty(n)
    for _ in range(m):
        rn2 = 0.0
        for i in range(n):
            di = scratch[i] - center[i]
            di -= np.floor(di + 0.5)
            d[i] = di
            rn2 += di * di
        rn = np.sqrt(rn2)
        if rn < r0:
            _shear_tangent(d, rn, es, r0, s_step, J)
        # apply the shear displacement to advance the point (zero at the center)
        if rn < r0 and rn > 0.0:
            u = 0.0
            for i in range(n):
                u += d[i] * es[i]
            tt = rn / r0
            q = 1.0 - tt * tt
            ps = np.exp(1.0 - 1.0 / q)
            du = u * s_step * ps
            for i in range(n):
                yi = scratch[i] + du * es[i]
                scratch[i] = yi - np.floor(yi)
    for i in range(n):
        x[i] = scratch[i]


@numba.njit(cache=True)
def da_lyap(M, es, center, r0, s_step, m, x0, nsteps, t0, renorm):
    n = x0.shape[0]
    x = x0.copy()
    scratch = np.empty(n)
    for _ in range(t0):
        _da_step_inplace(M, es, center, r0, s_step, m, x, scratch)
    q = np.eye(n)
    sums = np.zeros(n)
    J = np.empty((n, n))
    k = 0
    for step in range(nsteps):
        _da_tangent_at(M, es, center, r0, s_step, m, x, J, scratch)
        q = J @ q
        k += 1
        if k == renorm or step == nsteps - 1:
            _mgs_qr_lognorms(q, sums)
            k = 0
    return sums / nsteps


@numba.njit(cache=True)
def da_tangent_many(M, es, center, r0, s_step, m, X):
    """Differentials at each row of X (does not advance anything)."""
    npts, n = X.shape
    out = np.empty((npts, n, n))
    x = np.empty(n)
    scratch = np.empty(n)
    J = np.empty((n, n))
    for r in range(npts):
        for i in range(n):
            x[i] = X[r, i]
        _da_tangent_at(M, es, center, r0, s_step, m, x, J, scratch)
        for i in range(n):
            for j in range(n):
                out[r, i, j] = J[i, j]
    return out


@numba.njit(cache=True)
def da_back_many(Minv, es, center, r0, s_step, m, X):
    """Exact inverse: per-shear monotone 1D solve, then the linear inverse."""
    npts, n = X.shape
    out = np.empty((npts, n))
    d = np.empty(n)
    w = np.empty(n)
    y = np.empty(n)
    for r in range(npts):
        for i in range(n):
            y[i] = X[r, i]
        for _ in range(m):
            rn2 = 0.0
            for i in range(n):
                di = y[i] - center[i]
                di -= np.floor(di + 0.5)
                d[i] = di
                rn2 += di * di
            if rn2 >= r0 * r0 or rn2 == 0.0:
                continue
            uprime = 0.0
            for i in range(n):
                uprime += d[i] * es[i]
            wn2 = 0.0
            for i in range(n):
                w[i] = d[i] - uprime * es[i]
                wn2 += w[i] * w[i]
            b = np.sqrt(max(r0 * r0 - wn2, 0.0))
            # solve u (1 + s psi(sqrt(w^2+u^2)/r0)) = uprime on [0, b] signed
            sgn = 1.0 if uprime >= 0.0 else -1.0
            ua = 0.0
            ub = b
            target = sgn * uprime
            for _ in range(80):
                um = 0.5 * (ua + ub)
                rr = np.sqrt(wn2 + um * um) / r0
                if rr < 1.0:
                    ps = np.exp(1.0 - 1.0 / (1.0 - rr * rr))
                else:
                    ps = 0.0
                h = um * (1.0 + s_step * ps)
                if h < target:
                    ua = um
                else:
                    ub = um
            u = sgn * 0.5 * (ua + ub)
            for i in range(n):
                yi = center[i] + w[i] + u * es[i]
                y[i] = yi - np.floor(yi)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Minv[i, j] * y[j]
            out[r, i] = acc - np.floor(acc)
    return out


@numba.njit(cache=True)
def quotient_canonical_rows(X):
    """Lexicographically smaller of {x, -x mod 1}, row-wise, for 2 columns."""
    out = X.copy()
    for r in range(X.shape[0]):
        a0 = out[r, 0]
        a1 = out[r, 1]
        b0 = -a0 - np.floor(-a0)
        b1 = -a1 - np.floor(-a1)
        flip = False
        if b0 < a0 - 1e-15:
            flip = True
        elif abs(b0 - a0) <= 1e-15 and b1 < a1 - 1e-15:
            flip = True
        if flip:
            out[r, 0] = b0
            out[r, 1] = b1
    return out


@numba.njit(cache=True)
def quotient_orbit(M, es, center, r0, s_step, m, x0, npts, t0):
    """DA orbit pushed to involution classes (canonical representatives)."""
    raw = da_orbit(M, es, center, r0, s_step, m, x0, npts, t0)
    return quotient_canonical_rows(raw)
