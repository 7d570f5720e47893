"""Compiled inner loops: ball p-means over quadrature loops and operator sweeps.

Quadrature samples are grouped in closed loops of ``M`` equally spaced
points.  Along a loop the sampled function is taken piecewise linear, and the
p-mean equation is integrated exactly on every segment, which keeps the
discrete mean monotone, centrally symmetric and exact on affine data.  With
``M == 1`` (1-D rules) the samples are plain weighted points.
"""

import math
import os

import numpy as np
from numba import njit, prange, set_num_threads, config as numba_config

if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # prefer layers that need no version probe
    numba_config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

KIND_GENERAL, KIND_MEAN, KIND_MEDIAN, KIND_MIDRANGE = 0, 1, 2, 3

TAYLOR_SWITCH = 1e-3
MEDIAN_FTOL = 1e-13
ULP = 2.220446049250313e-16
MAX_ROOT_ITERS = 300

STATUS_OK, STATUS_NONCONVERGED = 0, 1


def apply_thread_cap():
    cap = os.environ.get("VPHARM_THREADS")
    if cap:
        set_num_threads(max(1, min(int(cap), numba_config.NUMBA_NUM_THREADS)))


def exponent_kind(p_value):
    if math.isinf(p_value):
        return KIND_MIDRANGE
    if p_value == 2.0:
        return KIND_MEAN
    if p_value == 1.0:
        return KIND_MEDIAN
    return KIND_GENERAL


@njit(cache=True, inline="always")
def _abspow(a, e):
    if e == 0.5:
        return math.sqrt(a)
    if e == 1.0:
        return a
    if e == 2.0:
        return a * a
    if e == 0.0:
        return 1.0
    return a ** e


@njit(cache=True, inline="always")
def _psi(t, e):
    if t > 0.0:
        return _abspow(t, e)
    if t < 0.0:
        return -_abspow(-t, e)
    return 0.0


@njit(cache=True)
def _dpsi(t, e):
    # derivative of sgn(t)|t|^e; infinite at 0 when e < 1
    a = abs(t)
    if e == 0.0:
        return math.inf if a == 0.0 else 0.0
    if e == 1.0:
        return 1.0
    if a == 0.0:
        return math.inf if e < 1.0 else 0.0
    return e * a ** (e - 1.0)


@njit(cache=True)
def _segment_slow(a, b, e):
    """Average of psi over [a, b] and its d/dnu when the difference quotient
    is degenerate or badly conditioned."""
    d = b - a
    if d == 0.0:
        return _psi(a, e), -_dpsi(a, e)
    m = 0.5 * (a + b)
    am = abs(m)
    s = 1.0 if m > 0.0 else -1.0
    q4 = am ** (e - 4.0) if e != 4.0 else 1.0
    q3 = q4 * am
    q2 = q3 * am
    q1 = q2 * am
    q0 = q1 * am
    c2 = e * (e - 1.0)
    c3 = c2 * (e - 2.0)
    c4 = c3 * (e - 3.0)
    d2 = d * d
    val = s * (q0 + c2 * q2 * d2 / 24.0 + c4 * q4 * d2 * d2 / 1920.0)
    der = -(e * q1 + c3 * q3 * d2 / 24.0)
    return val, der


@njit(cache=True)
def loop_F(vals, loop_w, M, nu, p):
    """F(nu) and F'(nu) for the loop-integrated p-mean equation.

    On a segment with endpoint offsets a, b the average of psi is
    (b psi(b) - a psi(a)) / (p (b - a)), since t psi(t) / p = |t|^p / p.
    """
    e = p - 1.0
    F = 0.0
    dF = 0.0
    L = loop_w.shape[0]
    if M == 1:
        for l in range(L):
            t = vals[l] - nu
            F += loop_w[l] * _psi(t, e)
            dF -= loop_w[l] * _dpsi(t, e)
        return F, dF
    inv_p = 1.0 / p
    for l in range(L):
        base = l * M
        s = 0.0
        ds = 0.0
        a = vals[base] - nu
        pa = _psi(a, e)
        for k in range(1, M + 1):
            b = vals[base + (k % M)] - nu
            pb = _psi(b, e)
            d = b - a
            if d != 0.0 and not (a * b > 0.0 and abs(d) < TAYLOR_SWITCH * 0.5 * abs(a + b)):
                s += (b * pb - a * pa) * inv_p / d
                ds -= (pb - pa) / d
            else:
                sv, sd = _segment_slow(a, b, e)
                s += sv
                ds += sd
            a = b
            pa = pb
        F += loop_w[l] * s
        dF += loop_w[l] * ds
    return F / M, dF / M


@njit(cache=True)
def _median_edge(vals, loop_w, M, a, b, lower, tol):
    # lower: smallest nu with F(nu) <= ftol; otherwise largest nu with F(nu) >= -ftol
    if lower:
        if loop_F(vals, loop_w, M, a, 1.0)[0] <= MEDIAN_FTOL:
            return a
    else:
        if loop_F(vals, loop_w, M, b, 1.0)[0] >= -MEDIAN_FTOL:
            return b
    for _ in range(MAX_ROOT_ITERS):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        f = loop_F(vals, loop_w, M, mid, 1.0)[0]
        if lower:
            if f <= MEDIAN_FTOL:
                b = mid
            else:
                a = mid
        else:
            if f >= -MEDIAN_FTOL:
                a = mid
            else:
                b = mid
    return b if lower else a


@njit(cache=True)
def loop_pmean(vals, loop_w, M, p, kind, rtol, warm):
    """p-mean of loop samples; returns (nu, status).

    ``rtol`` is relative to max(1, spread of the samples), floored at a few
    ulps of the sample magnitude; ``warm`` seeds
    the Newton iteration (NaN for none).
    """
    n = vals.shape[0]
    lo = vals[0]
    hi = vals[0]
    for i in range(1, n):
        v = vals[i]
        if v < lo:
            lo = v
        elif v > hi:
            hi = v
    if hi - lo <= 0.0:
        return lo, STATUS_OK
    if kind == KIND_MIDRANGE:
        return 0.5 * (lo + hi), STATUS_OK
    if kind == KIND_MEAN:
        acc = 0.0
        L = loop_w.shape[0]
        for l in range(L):
            s = 0.0
            for k in range(M):
                s += vals[l * M + k]
            acc += loop_w[l] * s
        nu = acc / M
        return min(max(nu, lo), hi), STATUS_OK
    # never ask for more than a few ulps of the sample magnitude
    tol = max(rtol * max(1.0, hi - lo), 8.0 * ULP * max(abs(lo), abs(hi)))
    if kind == KIND_MEDIAN:
        left = _median_edge(vals, loop_w, M, lo, hi, True, tol)
        right = _median_edge(vals, loop_w, M, lo, hi, False, tol)
        if right < left:
            right = left
        return 0.5 * (left + right), STATUS_OK

    a = lo
    b = hi
    nu = warm
    if not (nu > a and nu < b):
        nu = 0.5 * (a + b)
    dxold = b - a
    dx = dxold
    f, df = loop_F(vals, loop_w, M, nu, p)
    for _ in range(MAX_ROOT_ITERS):
        if f == 0.0:
            return nu, STATUS_OK
        if f > 0.0:
            a = nu
        else:
            b = nu
        if b - a <= tol:
            return 0.5 * (a + b), STATUS_OK
        # safeguarded Newton: bisect when the step leaves the bracket or stalls
        newton_ok = df < 0.0 and math.isfinite(df)
        if newton_ok:
            if abs(f / df) <= 0.5 * tol:
                return min(max(nu - f / df, a), b), STATUS_OK
            cand = nu - f / df
            newton_ok = cand > a and cand < b and abs(2.0 * f) <= abs(dxold * df)
        dxold = dx
        if newton_ok:
            dx = f / df
            nu = cand
        else:
            dx = 0.5 * (b - a)
            nu = a + dx
        if abs(dx) <= 0.5 * tol:
            return nu, STATUS_OK
        f, df = loop_F(vals, loop_w, M, nu, p)
    return nu, STATUS_NONCONVERGED


# ---------------------------------------------------------------------------
# grid gathering


@njit(cache=True, inline="always")
def _cell(xk, lok, h, nk):
    rel = (xk - lok) / h
    c = int(math.floor(rel))
    if c < 0:
        c = 0
    elif c > nk - 2:
        c = nk - 2
    fr = rel - c
    if fr < 0.0:
        fr = 0.0
    elif fr > 1.0:
        fr = 1.0
    return c, fr


@njit(cache=True)
def _interp(x, lo, h, shape, strides, lat, data):
    """Multilinear value at x, or NaN when the enclosing cell is not full."""
    N = x.shape[0]
    if N == 2:
        c0, f0 = _cell(x[0], lo[0], h, shape[0])
        c1, f1 = _cell(x[1], lo[1], h, shape[1])
        b = c0 * strides[0] + c1 * strides[1]
        i00 = lat[b]
        i10 = lat[b + strides[0]]
        i01 = lat[b + strides[1]]
        i11 = lat[b + strides[0] + strides[1]]
        if i00 < 0 or i10 < 0 or i01 < 0 or i11 < 0:
            return math.nan
        g0 = 1.0 - f0
        return (1.0 - f1) * (g0 * data[i00] + f0 * data[i10]) + f1 * (g0 * data[i01] + f0 * data[i11])
    if N == 3:
        c0, f0 = _cell(x[0], lo[0], h, shape[0])
        c1, f1 = _cell(x[1], lo[1], h, shape[1])
        c2, f2 = _cell(x[2], lo[2], h, shape[2])
        s0, s1, s2 = strides[0], strides[1], strides[2]
        b = c0 * s0 + c1 * s1 + c2 * s2
        val = 0.0
        for corner in range(8):
            w = 1.0
            off = b
            if corner & 1:
                w *= f0
                off += s0
            else:
                w *= 1.0 - f0
            if corner & 2:
                w *= f1
                off += s1
            else:
                w *= 1.0 - f1
            if corner & 4:
                w *= f2
                off += s2
            else:
                w *= 1.0 - f2
            j = lat[off]
            if j < 0:
                return math.nan
            val += w * data[j]
        return val
    c0, f0 = _cell(x[0], lo[0], h, shape[0])
    i0 = lat[c0]
    i1 = lat[c0 + 1]
    if i0 < 0 or i1 < 0:
        return math.nan
    return (1.0 - f0) * data[i0] + f0 * data[i1]


@njit(cache=True, inline="always")
def _query(node, r, z, out):
    for k in range(out.shape[0]):
        out[k] = node[k] + r * z[k]


@njit(cache=True)
def _gather(i, data, nodes, rad, off, lo, h, shape, strides, lat,
            cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, vals, x, frac):
    Q = off.shape[0]
    if deep[i]:
        # ball lies in full cells at radius eps: translated fixed stencil
        lat0 = node_lat[i]
        C = pat_off.shape[1]
        for q in range(Q):
            v = 0.0
            for c in range(C):
                v += pat_w[q, c] * data[lat[lat0 + pat_off[q, c]]]
            vals[q] = v
        return
    ptr = cut_ptr[i]
    for q in range(Q):
        _query(nodes[i], rad[i], off[q], x)
        v = _interp(x, lo, h, shape, strides, lat, data)
        if v == v:
            vals[q] = v
        else:
            v = 0.0
            for j in range(cut_idx.shape[1]):
                v += cut_w[ptr, j] * data[cut_idx[ptr, j]]
            vals[q] = v
            ptr += 1


@njit(cache=True)
def count_cut_queries(nodes, rad, off, lo, h, shape, strides, lat):
    n, N = nodes.shape
    counts = np.zeros(n, dtype=np.int64)
    probe = np.zeros(lat.shape[0] if lat.shape[0] > 0 else 1)
    x = np.empty(N)
    for i in range(n):
        for q in range(off.shape[0]):
            _query(nodes[i], rad[i], off[q], x)
            if math.isnan(_interp(x, lo, h, shape, strides, lat, probe)):
                counts[i] += 1
    return counts


@njit(cache=True)
def collect_cut_queries(nodes, rad, off, lo, h, shape, strides, lat, ptr):
    n, N = nodes.shape
    pts = np.empty((ptr[n], N))
    probe = np.zeros(lat.shape[0] if lat.shape[0] > 0 else 1)
    x = np.empty(N)
    for i in range(n):
        j = ptr[i]
        for q in range(off.shape[0]):
            _query(nodes[i], rad[i], off[q], x)
            if math.isnan(_interp(x, lo, h, shape, strides, lat, probe)):
                pts[j, :] = x
                j += 1
    return pts


CHUNK = 256


@njit(cache=True, parallel=True)
def gather_all(data, nodes, rad, off, lo, h, shape, strides, lat, cut_ptr, cut_idx, cut_w,
               node_lat, deep, pat_off, pat_w):
    n, N = nodes.shape
    Q = off.shape[0]
    out = np.empty((n, Q))
    nchunk = (n + CHUNK - 1) // CHUNK
    for c in prange(nchunk):
        x = np.empty(N)
        frac = np.empty(N)
        vals = np.empty(Q)
        for i in range(c * CHUNK, min(n, (c + 1) * CHUNK)):
            _gather(i, data, nodes, rad, off, lo, h, shape, strides, lat, cut_ptr, cut_idx, cut_w,
                    node_lat, deep, pat_off, pat_w, vals, x, frac)
            out[i, :] = vals
    return out


@njit(cache=True)
def _node_update(i, data, nodes, rad, off, loop_w, M, lo, h, shape, strides, lat,
                 cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, st_off, st_w,
                 p, kind, rtol, vals, x, frac):
    if kind == KIND_MEAN and deep[i]:
        # linear case on a translated stencil: one weighted sum
        lat0 = node_lat[i]
        acc = 0.0
        for s in range(st_off.shape[0]):
            acc += st_w[s] * data[lat[lat0 + st_off[s]]]
        return acc, STATUS_OK
    _gather(i, data, nodes, rad, off, lo, h, shape, strides, lat, cut_ptr, cut_idx, cut_w,
            node_lat, deep, pat_off, pat_w, vals, x, frac)
    return loop_pmean(vals, loop_w, M, p, kind, rtol, data[i])


@njit(cache=True, parallel=True)
def sweep_jacobi(data, out, status, nodes, rad, off, loop_w, M, lo, h, shape, strides, lat,
                 cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, st_off, st_w, p, kind, rtol):
    """out[i] = mu[data] at interior node i; data is read only."""
    n, N = nodes.shape
    Q = off.shape[0]
    nchunk = (n + CHUNK - 1) // CHUNK
    for c in prange(nchunk):
        x = np.empty(N)
        frac = np.empty(N)
        vals = np.empty(Q)
        for i in range(c * CHUNK, min(n, (c + 1) * CHUNK)):
            nu, st = _node_update(i, data, nodes, rad, off, loop_w, M, lo, h, shape, strides, lat,
                                  cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, st_off, st_w,
                                  p, kind, rtol, vals, x, frac)
            out[i] = nu
            status[i] = st


@njit(cache=True)
def sweep_gauss_seidel(data, status, nodes, rad, off, loop_w, M, lo, h, shape, strides, lat,
                       cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, st_off, st_w, p, kind, rtol):
    """In-place lexicographic update of the interior part of data."""
    n, N = nodes.shape
    Q = off.shape[0]
    x = np.empty(N)
    frac = np.empty(N)
    vals = np.empty(Q)
    for i in range(n):
        nu, st = _node_update(i, data, nodes, rad, off, loop_w, M, lo, h, shape, strides, lat,
                              cut_ptr, cut_idx, cut_w, node_lat, deep, pat_off, pat_w, st_off, st_w,
                              p, kind, rtol, vals, x, frac)
        data[i] = nu
        status[i] = st
