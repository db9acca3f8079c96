"""Pure-Python kernel backend.

Reference implementation of the numeric kernels. The compiled backend in
``_speedups.pyx`` mirrors these loops statement for statement (same
operation order, same libm calls, no FMA contraction), so both backends
produce bit-identical float64 results. Keep the two files in sync.

Buffers are ``array('d')`` (or float64 memoryviews); index buffers are
``array('q')``.
"""

from math import cos, exp, log, log1p, sin, sqrt, tanh

_M64 = (1 << 64) - 1
_INV53 = 1.1102230246251565e-16  # 2**-53
_TWO_PI = 6.283185307179586


def fill(out, n, v):
    for i in range(n):
        out[i] = v


def acc_add(dst, src, n):
    for i in range(n):
        dst[i] = dst[i] + src[i]


# ---------------------------------------------------------------------------
# affine / activation


def affine_fwd(x, w, b, out, n, din, dout):
    """out[r,o] = b[o] + sum_k x[r,k] * w[o,k], sequential over k."""
    for r in range(n):
        xo = r * din
        oo = r * dout
        for o in range(dout):
            acc = b[o]
            wo = o * din
            for k in range(din):
                acc = acc + x[xo + k] * w[wo + k]
            out[oo + o] = acc


def affine_bwd_x(dy, w, dx, n, din, dout):
    for r in range(n):
        yo = r * dout
        xo = r * din
        for k in range(din):
            acc = 0.0
            for o in range(dout):
                acc = acc + dy[yo + o] * w[o * din + k]
            dx[xo + k] = acc


def affine_bwd_wb(x, dy, dw, db, n, din, dout):
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


def tanh_fwd(x, out, n):
    for i in range(n):
        out[i] = tanh(x[i])


def tanh_bwd(y, dy, dx, n):
    for i in range(n):
        t = y[i]
        dx[i] = dy[i] * (1.0 - t * t)


def softplus_fwd(x, out, n):
    for i in range(n):
        v = x[i]
        if v > 0.0:
            out[i] = v + log1p(exp(-v))
        else:
            out[i] = log1p(exp(v))


def softplus_bwd(x, dy, dx, n):
    for i in range(n):
        dx[i] = dy[i] * (1.0 / (1.0 + exp(-x[i])))


def exp_fwd(x, out, n):
    for i in range(n):
        out[i] = exp(x[i])


def log_fwd(x, out, n):
    for i in range(n):
        out[i] = log(x[i])


# ---------------------------------------------------------------------------
# elementwise


def ew_add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(a, b, out, n):
    for i in range(n):
        out[i] = a[i] / b[i]


def ew_min(a, b, out, n):
    for i in range(n):
        va = a[i]
        vb = b[i]
        out[i] = va if va <= vb else vb


def min_bwd(a, b, dy, da, db, n):
    for i in range(n):
        if a[i] <= b[i]:
            da[i] = dy[i]
            db[i] = 0.0
        else:
            da[i] = 0.0
            db[i] = dy[i]


def axpb(x, a, b, out, n):
    for i in range(n):
        out[i] = a * x[i] + b


def clip_const(x, lo, hi, out, n):
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        out[i] = v


def clip_bwd(x, lo, hi, dy, dx, n):
    for i in range(n):
        v = x[i]
        dx[i] = dy[i] if (lo < v < hi) else 0.0


# ---------------------------------------------------------------------------
# reductions / broadcasting


def sum_all(x, n):
    acc = 0.0
    for i in range(n):
        acc = acc + x[i]
    return acc


def row_sum(x, out, n, k):
    for r in range(n):
        o = r * k
        acc = 0.0
        for c in range(k):
            acc = acc + x[o + c]
        out[r] = acc


def col_sum(x, out, n, k):
    for c in range(k):
        out[c] = 0.0
    for r in range(n):
        o = r * k
        for c in range(k):
            out[c] = out[c] + x[o + c]


def row_bcast(v, out, n, k):
    for r in range(n):
        o = r * k
        val = v[r]
        for c in range(k):
            out[o + c] = val


def col_get(x, j, out, n, k):
    for r in range(n):
        out[r] = x[r * k + j]


def col_add(dst, j, src, n, k):
    for r in range(n):
        dst[r * k + j] = dst[r * k + j] + src[r]


def colwise_mul(x, v, out, n, k):
    for r in range(n):
        o = r * k
        for c in range(k):
            out[o + c] = x[o + c] * v[c]


def colwise_div(x, v, out, n, k):
    for r in range(n):
        o = r * k
        for c in range(k):
            out[o + c] = x[o + c] / v[c]


def take_rows(x, idx, out, m, k):
    for r in range(m):
        src = idx[r] * k
        dst = r * k
        for c in range(k):
            out[dst + c] = x[src + c]


def isfinite_all(x, n):
    for i in range(n):
        v = x[i]
        if v - v != 0.0:  # NaN or +-inf
            return 0
    return 1


# ---------------------------------------------------------------------------
# Adam


def adam_kernel(p, m, v, g, n, t, lr, b1, b2, eps):
    """In-place bias-corrected Adam update; t is the post-increment step."""
    bc1 = 1.0 - pow(b1, float(t))
    bc2 = 1.0 - pow(b2, float(t))
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

_ROT = (16, 42, 12, 31, 16, 32, 24, 21)


def threefry2x64(k0, k1, x0, x1):
    ks0 = k0 & _M64
    ks1 = k1 & _M64
    ks2 = 0x1BD11BDAA9FC1A22 ^ ks0 ^ ks1
    ks = (ks0, ks1, ks2)
    x0 = (x0 + ks0) & _M64
    x1 = (x1 + ks1) & _M64
    for block in range(5):
        base = 4 * block
        for r in range(4):
            x0 = (x0 + x1) & _M64
            rot = _ROT[(base + r) & 7]
            x1 = ((x1 << rot) | (x1 >> (64 - rot))) & _M64
            x1 ^= x0
        x0 = (x0 + ks[(block + 1) % 3]) & _M64
        x1 = (x1 + ks[(block + 2) % 3] + block + 1) & _M64
    return x0, x1


def rng_uniform(k0, k1, ctr0, out, n):
    """Fill out[0:n] with uniforms in [0,1); one counter per pair of draws."""
    j = 0
    c = ctr0 & _M64
    while j < n:
        x0, x1 = threefry2x64(k0, k1, c, 0)
        out[j] = (x0 >> 11) * _INV53
        j += 1
        if j < n:
            out[j] = (x1 >> 11) * _INV53
            j += 1
        c = (c + 1) & _M64


def rng_normal(k0, k1, ctr0, out, n):
    """Fill out[0:n] with standard normals via Box-Muller."""
    j = 0
    c = ctr0 & _M64
    while j < n:
        x0, x1 = threefry2x64(k0, k1, c, 0)
        u1 = ((x0 >> 11) + 1) * _INV53  # (0, 1]
        u2 = (x1 >> 11) * _INV53  # [0, 1)
        r = sqrt(-2.0 * log(u1))
        t = _TWO_PI * u2
        out[j] = r * cos(t)
        j += 1
        if j < n:
            out[j] = r * sin(t)
            j += 1
        c = (c + 1) & _M64
