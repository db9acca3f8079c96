"""Reverse-accumulation differentiation over a fixed operation set.

A Tape records batched tensor operations (affine, tanh, softplus, exp,
log, square, elementwise arithmetic, min/clip, reductions, column and
segment views); ``backward`` walks the recorded nodes in reverse. The
operation set is closed: every loss in the package is composed from these
primitives, which keeps gradients exact and both kernel backends
bit-identical.
"""

from __future__ import annotations

from array import array
from typing import Callable, Sequence

from .backend import K
from .errors import ConfigError, NumericalError
from .tensor import Tensor, new_buf

__all__ = ["Tape", "Var", "grad", "value_and_grad_flat"]


class Var:
    """One tape node: a tensor value plus an optional gradient buffer."""

    __slots__ = ("t", "grad", "requires", "_bwd", "_name")

    def __init__(self, t: Tensor, requires: bool, name: str):
        self.t = t
        self.grad: array | None = None
        self.requires = requires
        self._bwd: Callable[[array], None] | None = None
        self._name = name

    def value(self) -> float:
        return self.t.item()


class Tape:
    def __init__(self, check: bool = False):
        self._nodes: list[Var] = []
        self._check = check

    # -- node constructors -------------------------------------------------

    def leaf(self, t: Tensor) -> Var:
        v = Var(t, True, "leaf")
        self._nodes.append(v)
        return v

    def const(self, t: Tensor) -> Var:
        v = Var(t, False, "const")
        self._nodes.append(v)
        return v

    def _emit(self, out: Tensor, name: str, parents: Sequence[Var],
              bwd: Callable[[array], None] | None) -> Var:
        requires = any(p.requires for p in parents)
        v = Var(out, requires, name)
        if requires:
            v._bwd = bwd
        if self._check and not out.all_finite():
            raise NumericalError(f"non-finite output of operation '{name}'")
        self._nodes.append(v)
        return v

    @staticmethod
    def _acc(p: Var, buf: array) -> None:
        if not p.requires:
            return
        if p.grad is None:
            p.grad = new_buf(p.t.size)
        K.acc_add(p.grad, buf, p.t.size)

    # -- arithmetic ---------------------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        n = a.t.size
        out = new_buf(n)
        K.ew_add(a.t.data, b.t.data, out, n)

        def bwd(dy):
            self._acc(a, dy)
            self._acc(b, dy)

        return self._emit(Tensor(a.t.shape, out), "add", (a, b), bwd)

    def sub(self, a: Var, b: Var) -> Var:
        n = a.t.size
        out = new_buf(n)
        K.ew_sub(a.t.data, b.t.data, out, n)

        def bwd(dy):
            self._acc(a, dy)
            if b.requires:
                neg = new_buf(n)
                K.axpb(dy, -1.0, 0.0, neg, n)
                self._acc(b, neg)

        return self._emit(Tensor(a.t.shape, out), "sub", (a, b), bwd)

    def mul(self, a: Var, b: Var) -> Var:
        n = a.t.size
        out = new_buf(n)
        K.ew_mul(a.t.data, b.t.data, out, n)

        def bwd(dy):
            if a.requires:
                da = new_buf(n)
                K.ew_mul(dy, b.t.data, da, n)
                self._acc(a, da)
            if b.requires:
                db = new_buf(n)
                K.ew_mul(dy, a.t.data, db, n)
                self._acc(b, db)

        return self._emit(Tensor(a.t.shape, out), "mul", (a, b), bwd)

    def div(self, a: Var, b: Var) -> Var:
        n = a.t.size
        out = new_buf(n)
        K.ew_div(a.t.data, b.t.data, out, n)
        out_t = Tensor(a.t.shape, out)

        def bwd(dy):
            if a.requires:
                da = new_buf(n)
                K.ew_div(dy, b.t.data, da, n)
                self._acc(a, da)
            if b.requires:
                t1 = new_buf(n)
                K.ew_mul(dy, out, t1, n)
                t2 = new_buf(n)
                K.ew_div(t1, b.t.data, t2, n)
                db = new_buf(n)
                K.axpb(t2, -1.0, 0.0, db, n)
                self._acc(b, db)

        return self._emit(out_t, "div", (a, b), bwd)

    def axpb(self, x: Var, a: float, b: float) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.axpb(x.t.data, a, b, out, n)

        def bwd(dy):
            if x.requires:
                dx = new_buf(n)
                K.axpb(dy, a, 0.0, dx, n)
                self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "axpb", (x,), bwd)

    def neg(self, x: Var) -> Var:
        return self.axpb(x, -1.0, 0.0)

    def square(self, x: Var) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.ew_mul(x.t.data, x.t.data, out, n)

        def bwd(dy):
            t1 = new_buf(n)
            K.ew_mul(dy, x.t.data, t1, n)
            dx = new_buf(n)
            K.axpb(t1, 2.0, 0.0, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "square", (x,), bwd)

    def minimum(self, a: Var, b: Var) -> Var:
        n = a.t.size
        out = new_buf(n)
        K.ew_min(a.t.data, b.t.data, out, n)

        def bwd(dy):
            da = new_buf(n)
            db = new_buf(n)
            K.min_bwd(a.t.data, b.t.data, dy, da, db, n)
            self._acc(a, da)
            self._acc(b, db)

        return self._emit(Tensor(a.t.shape, out), "minimum", (a, b), bwd)

    def clip(self, x: Var, lo: float, hi: float) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.clip_const(x.t.data, lo, hi, out, n)

        def bwd(dy):
            dx = new_buf(n)
            K.clip_bwd(x.t.data, lo, hi, dy, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "clip", (x,), bwd)

    # -- transcendental -----------------------------------------------------

    def tanh(self, x: Var) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.tanh_fwd(x.t.data, out, n)

        def bwd(dy):
            dx = new_buf(n)
            K.tanh_bwd(out, dy, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "tanh", (x,), bwd)

    def softplus(self, x: Var) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.softplus_fwd(x.t.data, out, n)

        def bwd(dy):
            dx = new_buf(n)
            K.softplus_bwd(x.t.data, dy, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "softplus", (x,), bwd)

    def exp(self, x: Var) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.exp_fwd(x.t.data, out, n)

        def bwd(dy):
            dx = new_buf(n)
            K.ew_mul(dy, out, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "exp", (x,), bwd)

    def log(self, x: Var) -> Var:
        n = x.t.size
        out = new_buf(n)
        K.log_fwd(x.t.data, out, n)

        def bwd(dy):
            dx = new_buf(n)
            K.ew_div(dy, x.t.data, dx, n)
            self._acc(x, dx)

        return self._emit(Tensor(x.t.shape, out), "log", (x,), bwd)

    # -- linear layers -------------------------------------------------------

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x: [n, din], w: [dout, din], b: [dout] -> [n, dout]."""
        n, din = x.t.shape
        dout, din_w = w.t.shape
        if din != din_w or b.t.shape != (dout,):
            raise ConfigError(
                f"affine: x {x.t.shape} w {w.t.shape} b {b.t.shape} do not chain")
        out = new_buf(n * dout)
        K.affine_fwd(x.t.data, w.t.data, b.t.data, out, n, din, dout)

        def bwd(dy):
            if x.requires:
                dx = new_buf(n * din)
                K.affine_bwd_x(dy, w.t.data, dx, n, din, dout)
                self._acc(x, dx)
            if w.requires or b.requires:
                dw = new_buf(dout * din)
                db = new_buf(dout)
                K.affine_bwd_wb(x.t.data, dy, dw, db, n, din, dout)
                self._acc(w, dw)
                self._acc(b, db)

        return self._emit(Tensor((n, dout), out), "affine", (x, w, b), bwd)

    # -- shape / broadcast ----------------------------------------------------

    def column(self, x: Var, j: int) -> Var:
        n, k = x.t.shape
        out = new_buf(n)
        K.col_get(x.t.data, j, out, n, k)

        def bwd(dy):
            dx = new_buf(n * k)
            K.col_add(dx, j, dy, n, k)
            self._acc(x, dx)

        return self._emit(Tensor((n,), out), "column", (x,), bwd)

    def colwise_mul(self, x: Var, v: Var) -> Var:
        n, k = x.t.shape
        out = new_buf(n * k)
        K.colwise_mul(x.t.data, v.t.data, out, n, k)

        def bwd(dy):
            if x.requires:
                dx = new_buf(n * k)
                K.colwise_mul(dy, v.t.data, dx, n, k)
                self._acc(x, dx)
            if v.requires:
                t1 = new_buf(n * k)
                K.ew_mul(dy, x.t.data, t1, n * k)
                dv = new_buf(k)
                K.col_sum(t1, dv, n, k)
                self._acc(v, dv)

        return self._emit(Tensor((n, k), out), "colwise_mul", (x, v), bwd)

    def colwise_div(self, x: Var, v: Var) -> Var:
        n, k = x.t.shape
        out = new_buf(n * k)
        K.colwise_div(x.t.data, v.t.data, out, n, k)

        def bwd(dy):
            if x.requires:
                dx = new_buf(n * k)
                K.colwise_div(dy, v.t.data, dx, n, k)
                self._acc(x, dx)
            if v.requires:
                t1 = new_buf(n * k)
                K.ew_mul(dy, out, t1, n * k)
                s = new_buf(k)
                K.col_sum(t1, s, n, k)
                t2 = new_buf(k)
                K.ew_div(s, v.t.data, t2, k)
                dv = new_buf(k)
                K.axpb(t2, -1.0, 0.0, dv, k)
                self._acc(v, dv)

        return self._emit(Tensor((n, k), out), "colwise_div", (x, v), bwd)

    def row_sum(self, x: Var) -> Var:
        n, k = x.t.shape
        out = new_buf(n)
        K.row_sum(x.t.data, out, n, k)

        def bwd(dy):
            dx = new_buf(n * k)
            K.row_bcast(dy, dx, n, k)
            self._acc(x, dx)

        return self._emit(Tensor((n,), out), "row_sum", (x,), bwd)

    def vs_add(self, x: Var, s: Var) -> Var:
        """Add a size-1 Var to every element of x."""
        n = x.t.size
        out = new_buf(n)
        K.axpb(x.t.data, 1.0, s.t.data[0], out, n)

        def bwd(dy):
            self._acc(x, dy)
            if s.requires:
                ds = array("d", [K.sum_all(dy, n)])
                self._acc(s, ds)

        return self._emit(Tensor(x.t.shape, out), "vs_add", (x, s), bwd)

    def segment(self, flat: Var, offset: int, shape: Sequence[int]) -> Var:
        t = Tensor(shape)
        n = t.size
        if offset < 0 or offset + n > flat.t.size:
            raise ConfigError("segment out of range")
        t.data[:] = flat.t.data[offset : offset + n]

        def bwd(dy):
            if flat.requires:
                if flat.grad is None:
                    flat.grad = new_buf(flat.t.size)
                K.acc_add(memoryview(flat.grad)[offset : offset + n], dy, n)

        return self._emit(t, "segment", (flat,), bwd)

    # -- reductions ------------------------------------------------------------

    def sum(self, x: Var) -> Var:
        n = x.t.size
        s = K.sum_all(x.t.data, n)

        def bwd(dy):
            dx = new_buf(n)
            K.fill(dx, n, dy[0])
            self._acc(x, dx)

        return self._emit(Tensor((), array("d", [s])), "sum", (x,), bwd)

    def mean(self, x: Var) -> Var:
        n = x.t.size
        s = K.sum_all(x.t.data, n) / n

        def bwd(dy):
            g = dy[0] / n
            dx = new_buf(n)
            K.fill(dx, n, g)
            self._acc(x, dx)

        return self._emit(Tensor((), array("d", [s])), "mean", (x,), bwd)

    # -- driver ------------------------------------------------------------------

    def backward(self, loss: Var) -> None:
        if loss.t.size != 1:
            raise ConfigError("backward() expects a scalar loss")
        if not loss.requires:
            raise ConfigError("loss does not depend on any leaf")
        loss.grad = array("d", [1.0])
        for node in reversed(self._nodes):
            if node.grad is not None and node._bwd is not None:
                node._bwd(node.grad)

    def grad_of(self, leaf: Var) -> Tensor:
        if leaf.grad is None:
            return Tensor(leaf.t.shape)
        return Tensor(leaf.t.shape, array("d", leaf.grad))


def grad(loss_fn, params, *args, check_on_error: bool = True):
    """Gradient of a scalar loss with respect to MLP parameters.

    ``loss_fn(tape, layer_vars, *args)`` must return a scalar Var built
    from tape operations. Returns per-layer (dW, db) tensors. On a
    non-finite result the loss is re-run with per-operation checking so
    the error names the offending operation.
    """
    tape = Tape()
    layer_vars = [(tape.leaf(w), tape.leaf(b)) for w, b in params.layers]
    loss = loss_fn(tape, layer_vars, *args)
    tape.backward(loss)
    grads = [(tape.grad_of(wv), tape.grad_of(bv)) for wv, bv in layer_vars]
    finite = all(g.all_finite() for pair in grads for g in pair) and loss.t.all_finite()
    if not finite and check_on_error:
        chk = Tape(check=True)
        lv = [(chk.leaf(w), chk.leaf(b)) for w, b in params.layers]
        chk.backward(loss_fn(chk, lv, *args))
        raise NumericalError("non-finite gradient (origin not isolated)")
    if not finite:
        raise NumericalError("non-finite gradient")
    return grads


def value_and_grad_flat(build_fn, flat: Tensor):
    """Loss value and gradient for a loss built from one flat parameter Var.

    ``build_fn(tape, flat_var)`` returns a scalar Var (or (Var, aux)).
    Returns (value, grad Tensor, aux).
    """
    tape = Tape()
    fv = tape.leaf(flat)
    built = build_fn(tape, fv)
    loss, aux = built if isinstance(built, tuple) else (built, None)
    tape.backward(loss)
    return loss.t.item(), tape.grad_of(fv), aux
