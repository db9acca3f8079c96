# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel backend.

Mirrors ``_purekernels.py`` statement for statement: identical operation
order, identical libm calls, and the build uses -ffp-contract=off, so
results are bit-identical to the pure backend. Keep the two in sync.
"""

from libc.math cimport cos, exp, log, log1p, pow, sin, sqrt, tanh

cdef double _INV53 = 1.1102230246251565e-16  # 2**-53
cdef double _TWO_PI = 6.283185307179586


def fill(double[::1] out, Py_ssize_t n, double v):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = v


def acc_add(double[::1] dst, double[::1] src, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] = dst[i] + src[i]


# ---------------------------------------------------------------------------
# affine / activation


def affine_fwd(double[::1] x, double[::1] w, double[::1] b, double[::1] out,
               Py_ssize_t n, Py_ssize_t din, Py_ssize_t dout):
    cdef Py_ssize_t r, o, k, xo, oo, wo
    cdef double acc
    for r in range(n):
        xo = r * din
        oo = r * dout
        for o in range(dout):
            acc = b[o]
            wo = o * din
            for k in range(din):
                acc = acc + x[xo + k] * w[wo + k]
            out[oo + o] = acc


def affine_bwd_x(double[::1] dy, double[::1] w, double[::1] dx,
                 Py_ssize_t n, Py_ssize_t din, Py_ssize_t dout):
    cdef Py_ssize_t r, o, k, yo, xo
    cdef double acc
    for r in range(n):
        yo = r * dout
        xo = r * din
        for k in range(din):
            acc = 0.0
            for o in range(dout):
                acc = acc + dy[yo + o] * w[o * din + k]
            dx[xo + k] = acc


def affine_bwd_wb(double[::1] x, double[::1] dy, double[::1] dw, double[::1] db,
                  Py_ssize_t n, Py_ssize_t din, Py_ssize_t dout):
    cdef Py_ssize_t r, o, k, xo, yo, wo, i
    cdef double g
    for i in range(dout * din):
        dw[i] = 0.0
    for o in range(dout):
        db[o] = 0.0
    for r in range(n):
        xo = r * din
        yo = r * dout
        for o in range(dout):
            g = dy[yo + o]
            wo = o * din
            for k in range(din):
                dw[wo + k] = dw[wo + k] + g * x[xo + k]
            db[o] = db[o] + g
    return None


def tanh_fwd(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = tanh(x[i])


def tanh_bwd(double[::1] y, double[::1] dy, double[::1] dx, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double t
    for i in range(n):
        t = y[i]
        dx[i] = dy[i] * (1.0 - t * t)


def softplus_fwd(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        if v > 0.0:
            out[i] = v + log1p(exp(-v))
        else:
            out[i] = log1p(exp(v))


def softplus_bwd(double[::1] x, double[::1] dy, double[::1] dx, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] = dy[i] * (1.0 / (1.0 + exp(-x[i])))


def exp_fwd(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = exp(x[i])


def log_fwd(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = log(x[i])


# ---------------------------------------------------------------------------
# elementwise


def ew_add(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] / b[i]


def ew_min(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double va, vb
    for i in range(n):
        va = a[i]
        vb = b[i]
        out[i] = va if va <= vb else vb


def min_bwd(double[::1] a, double[::1] b, double[::1] dy,
            double[::1] da, double[::1] db, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        if a[i] <= b[i]:
            da[i] = dy[i]
            db[i] = 0.0
        else:
            da[i] = 0.0
            db[i] = dy[i]


def axpb(double[::1] x, double a, double b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a * x[i] + b


def clip_const(double[::1] x, double lo, double hi, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        out[i] = v


def clip_bwd(double[::1] x, double lo, double hi, double[::1] dy,
             double[::1] dx, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        dx[i] = dy[i] if (lo < v and v < hi) else 0.0


# ---------------------------------------------------------------------------
# reductions / broadcasting


def sum_all(double[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc = acc + x[i]
    return acc


def row_sum(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r, c, o
    cdef double acc
    for r in range(n):
        o = r * k
        acc = 0.0
        for c in range(k):
            acc = acc + x[o + c]
        out[r] = acc


def col_sum(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r, c, o
    for c in range(k):
        out[c] = 0.0
    for r in range(n):
        o = r * k
        for c in range(k):
            out[c] = out[c] + x[o + c]


def row_bcast(double[::1] v, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r, c, o
    cdef double val
    for r in range(n):
        o = r * k
        val = v[r]
        for c in range(k):
            out[o + c] = val


def col_get(double[::1] x, Py_ssize_t j, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r
    for r in range(n):
        out[r] = x[r * k + j]


def col_add(double[::1] dst, Py_ssize_t j, double[::1] src, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r
    for r in range(n):
        dst[r * k + j] = dst[r * k + j] + src[r]


def colwise_mul(double[::1] x, double[::1] v, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r, c, o
    for r in range(n):
        o = r * k
        for c in range(k):
            out[o + c] = x[o + c] * v[c]


def colwise_div(double[::1] x, double[::1] v, double[::1] out, Py_ssize_t n, Py_ssize_t k):
    cdef Py_ssize_t r, c, o
    for r in range(n):
        o = r * k
        for c in range(k):
            out[o + c] = x[o + c] / v[c]


def take_rows(double[::1] x, long long[::1] idx, double[::1] out,
              Py_ssize_t m, Py_ssize_t k):
    cdef Py_ssize_t r, c, src, dst
    for r in range(m):
        src = idx[r] * k
        dst = r * k
        for c in range(k):
            out[dst + c] = x[src + c]


def isfinite_all(double[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        if v - v != 0.0:
            return 0
    return 1


# ---------------------------------------------------------------------------
# Adam


def adam_kernel(double[::1] p, double[::1] m, double[::1] v, double[::1] g,
                Py_ssize_t n, long long t, double lr, double b1, double b2,
                double eps):
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(b1, <double> t)
    cdef double bc2 = 1.0 - pow(b2, <double> t)
    cdef double gi, mi, vi, mh, vh
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        mh = mi / bc1
        vh = vi / bc2
        p[i] = p[i] - lr * mh / (sqrt(vh) + eps)


# ---------------------------------------------------------------------------
# counter-based RNG (threefry2x64, 20 rounds)

cdef unsigned long long _PARITY = 0x1BD11BDAA9FC1A22ULL

cdef int[8] _ROT = [16, 42, 12, 31, 16, 32, 24, 21]


cdef inline void _threefry(unsigned long long k0, unsigned long long k1,
                           unsigned long long x0, unsigned long long x1,
                           unsigned long long* y0, unsigned long long* y1) nogil:
    cdef unsigned long long ks0 = k0
    cdef unsigned long long ks1 = k1
    cdef unsigned long long ks2 = _PARITY ^ ks0 ^ ks1
    cdef unsigned long long ks[3]
    cdef int block, r, rot, base
    ks[0] = ks0
    ks[1] = ks1
    ks[2] = ks2
    x0 = x0 + ks0
    x1 = x1 + ks1
    for block in range(5):
        base = 4 * block
        for r in range(4):
            x0 = x0 + x1
            rot = _ROT[(base + r) & 7]
            x1 = (x1 << rot) | (x1 >> (64 - rot))
            x1 = x1 ^ x0
        x0 = x0 + ks[(block + 1) % 3]
        x1 = x1 + ks[(block + 2) % 3] + <unsigned long long> (block + 1)
    y0[0] = x0
    y1[0] = x1


def threefry2x64(k0, k1, x0, x1):
    cdef unsigned long long y0, y1
    _threefry(<unsigned long long> k0, <unsigned long long> k1,
              <unsigned long long> x0, <unsigned long long> x1, &y0, &y1)
    return (y0, y1)


def rng_uniform(k0, k1, ctr0, double[::1] out, Py_ssize_t n):
    cdef unsigned long long ck0 = <unsigned long long> k0
    cdef unsigned long long ck1 = <unsigned long long> k1
    cdef unsigned long long c = <unsigned long long> ctr0
    cdef unsigned long long x0, x1
    cdef Py_ssize_t j = 0
    while j < n:
        _threefry(ck0, ck1, c, 0, &x0, &x1)
        out[j] = <double> (x0 >> 11) * _INV53
        j += 1
        if j < n:
            out[j] = <double> (x1 >> 11) * _INV53
            j += 1
        c = c + 1


def rng_normal(k0, k1, ctr0, double[::1] out, Py_ssize_t n):
    cdef unsigned long long ck0 = <unsigned long long> k0
    cdef unsigned long long ck1 = <unsigned long long> k1
    cdef unsigned long long c = <unsigned long long> ctr0
    cdef unsigned long long x0, x1
    cdef double u1, u2, r, t
    cdef Py_ssize_t j = 0
    while j < n:
        _threefry(ck0, ck1, c, 0, &x0, &x1)
        u1 = <double> ((x0 >> 11) + 1) * _INV53
        u2 = <double> (x1 >> 11) * _INV53
        r = sqrt(-2.0 * log(u1))
        t = _TWO_PI * u2
        out[j] = r * cos(t)
        j += 1
        if j < n:
            out[j] = r * sin(t)
            j += 1
        c = c + 1
