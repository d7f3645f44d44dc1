"""Reverse-mode automatic differentiation over mixed real/complex arrays.

Gradients follow the Wirtinger convention: for a node with complex value z
the tape propagates the conjugate cotangent dL/dz*.  For a real scalar loss
L and z = x + jy this means dL/dx = 2 Re(dL/dz*) and dL/dy = 2 Im(dL/dz*).
Real-valued nodes carry dL/dz* as well, which for them equals half the
ordinary real gradient; ``Tape.backward`` returns the ordinary real gradient
for every registered parameter.

All values are float64 or complex128.  Tensors are immutable after creation
and may be shared across threads; a tape itself is single-writer.
"""

from __future__ import annotations

import numbers

import numpy as np

REAL = np.float64
COMPLEX = np.complex128

HERMITIAN_RTOL = 1e-10


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix fails the Cholesky factorization.

    ``indices`` holds the batch indices (e.g. (class, frequency)) of the
    offending matrices.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


def _as_value(x):
    value = np.asarray(x)
    dtype = COMPLEX if np.iscomplexobj(value) else REAL
    return value.astype(dtype, copy=False)


class Tensor:
    """Immutable value node, optionally recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape=None, index=None):
        self.value = _as_value(value)
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_complex(self):
        return self.value.dtype == COMPLEX

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.index}"
        return f"Tensor({tag}, shape={self.shape}, dtype={self.value.dtype})"

    # arithmetic sugar; all routed through the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (np.ndarray, numbers.Number, list, tuple)):
        return Tensor(x)
    raise TypeError(f"cannot use {type(x).__name__} as a tensor")


class Tape:
    """Recording of a computation for one backward pass.

    Single-writer: recording and ``backward`` must be serialized externally.
    Multiple tapes may run concurrently.
    """

    def __init__(self):
        self.nodes = []  # (parent indices, vjp, is_complex)
        self.parameters = {}  # name -> node index
        self._leaf_shapes = {}  # node index -> shape, for zero gradients
        self._cotangents = None

    def _append(self, parents, vjp, is_complex):
        self.nodes.append((parents, vjp, is_complex))
        return len(self.nodes) - 1

    def leaf(self, value, name=None):
        """Create a leaf tensor on this tape; register as parameter if named.

        Parameters must be real valued (complex leaves may be created
        unnamed; their Wirtinger cotangent is available via ``cotangent``).
        """
        t = Tensor(value)
        if name is not None and t.is_complex:
            raise ValueError(f"parameter {name!r} must be real, got complex")
        idx = self._append((), None, t.is_complex)
        out = Tensor(t.value, self, idx)
        if name is not None:
            if name in self.parameters:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.parameters[name] = idx
            self._leaf_shapes[idx] = out.shape
        return out

    def record(self, op, *inputs, **kwargs):
        """Apply a primitive by name (see ``PRIMITIVES``)."""
        try:
            fn = PRIMITIVES[op]
        except KeyError:
            raise ValueError(f"unknown primitive {op!r}") from None
        return fn(*inputs, **kwargs)

    def backward(self, loss):
        """Backpropagate from a real scalar loss node.

        Returns a dict mapping parameter name to its real gradient array.
        Parameters not reached by the loss get zero gradients.  Pure: calling
        twice on the same tape yields identical results.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss is not a node of this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if loss.is_complex:
            raise ValueError("loss must be real valued")

        cot = {loss.index: np.full(loss.shape, 0.5)}
        for idx in range(loss.index, -1, -1):
            g = cot.get(idx)
            if g is None:
                continue
            parents, vjp, _ = self.nodes[idx]
            if vjp is None:
                continue
            contribs = vjp(g)
            for parent, contrib in zip(parents, contribs):
                if parent is None or contrib is None:
                    continue
                pidx, p_complex = parent
                if not p_complex:
                    contrib = np.real(contrib)
                prev = cot.get(pidx)
                cot[pidx] = contrib if prev is None else prev + contrib
        self._cotangents = cot

        grads = {}
        for name, idx in self.parameters.items():
            g = cot.get(idx)
            if g is None:
                # unreached parameter: zero gradient of the right shape
                grads[name] = np.zeros(self._leaf_shapes[idx])
            else:
                grads[name] = 2.0 * np.asarray(g)
        return grads

    def cotangent(self, tensor):
        """Wirtinger cotangent dL/dz* of a node from the last backward pass."""
        if self._cotangents is None:
            raise RuntimeError("backward has not been run on this tape")
        g = self._cotangents.get(tensor.index)
        if g is None:
            dtype = COMPLEX if tensor.is_complex else REAL
            return np.zeros(tensor.shape, dtype)
        return np.asarray(g)


def _result(value, parents, vjp):
    """Create the output tensor of a primitive.

    ``parents`` is a sequence of input Tensors; constants (tape-less inputs)
    still take part in the vjp call but their contributions are dropped.
    """
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is None:
                tape = p.tape
            elif tape is not p.tape:
                raise ValueError("inputs belong to different tapes")
    if tape is None:
        return Tensor(value)
    refs = tuple(
        (p.index, p.is_complex) if p.tape is not None else None for p in parents
    )
    idx = tape._append(refs, vjp, np.iscomplexobj(value))
    return Tensor(value, tape, idx)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same_shape_op(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def hconj(x):
    """Plain-numpy conjugate transpose of the last two axes."""
    return np.conj(np.swapaxes(x, -1, -2))


def check_hermitian(value, op, rtol=HERMITIAN_RTOL):
    if value.shape[-1] != value.shape[-2]:
        raise ValueError(f"{op}: matrix is not square, shape {value.shape}")
    scale = np.abs(value).max() if value.size else 0.0
    dev = np.abs(value - hconj(value)).max()
    if dev > rtol * max(scale, 1e-300):
        raise ValueError(
            f"{op}: input is not Hermitian (max deviation {dev:.3e}, "
            f"relative tolerance {rtol:g})"
        )


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same_shape_op("add", a, b)
    out = a.value + b.value
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _result(out, (a, b), vjp)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same_shape_op("sub", a, b)
    out = a.value - b.value
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _result(out, (a, b), vjp)


def neg(a):
    a = _wrap(a)

    def vjp(g):
        return (-g,)

    return _result(-a.value, (a,), vjp)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same_shape_op("mul", a, b)
    out = a.value * b.value
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g * np.conj(bv), av.shape),
            _unbroadcast(g * np.conj(av), bv.shape),
        )

    return _result(out, (a, b), vjp)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_same_shape_op("div", a, b)
    out = a.value / b.value
    bv = b.value
    outv = out

    def vjp(g):
        ga = g * np.conj(1.0 / bv)
        gb = -g * np.conj(outv / bv)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), vjp)


def conj(a):
    a = _wrap(a)

    def vjp(g):
        return (np.conj(g),)

    return _result(np.conj(a.value), (a,), vjp)


def abs2(a):
    """|z|^2 elementwise, real output."""
    a = _wrap(a)
    av = a.value
    out = (av * np.conj(av)).real

    def vjp(g):
        return (2.0 * g * av,)

    return _result(out, (a,), vjp)


def real_part(a):
    a = _wrap(a)

    def vjp(g):
        return (g,)

    return _result(a.value.real, (a,), vjp)


def imag_part(a):
    a = _wrap(a)

    def vjp(g):
        return (1j * g,)

    return _result(a.value.imag, (a,), vjp)


def make_complex(re, im):
    re, im = _wrap(re), _wrap(im)
    if re.is_complex or im.is_complex:
        raise ValueError("make_complex expects real inputs")
    out = re.value + 1j * im.value

    def vjp(g):
        return _unbroadcast(g, re.shape), _unbroadcast(-1j * g, im.shape)

    return _result(out, (re, im), vjp)


# ---------------------------------------------------------------------------
# real nonlinearities


def _require_real(a, op):
    if a.is_complex:
        raise ValueError(f"{op} expects a real input")


def log(a):
    a = _wrap(a)
    _require_real(a, "log")
    if np.any(a.value <= 0.0):
        raise ValueError("log: input must be strictly positive")
    av = a.value

    def vjp(g):
        return (g / av,)

    return _result(np.log(av), (a,), vjp)


def exp(a):
    a = _wrap(a)
    _require_real(a, "exp")
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return _result(out, (a,), vjp)


def sqrt(a):
    a = _wrap(a)
    _require_real(a, "sqrt")
    if np.any(a.value < 0.0):
        raise ValueError("sqrt: input must be nonnegative")
    out = np.sqrt(a.value)

    def vjp(g):
        return (g / (2.0 * out),)

    return _result(out, (a,), vjp)


def tanh(a):
    a = _wrap(a)
    _require_real(a, "tanh")
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp)


def sigmoid(a):
    a = _wrap(a)
    _require_real(a, "sigmoid")
    av = a.value
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), vjp)


def relu(a):
    a = _wrap(a)
    _require_real(a, "relu")
    mask = a.value > 0.0

    def vjp(g):
        return (g * mask,)

    return _result(np.where(mask, a.value, 0.0), (a,), vjp)


def maximum(a, floor):
    """Elementwise max with a constant floor (real)."""
    a = _wrap(a)
    _require_real(a, "maximum")
    floor = float(floor)
    mask = a.value >= floor

    def vjp(g):
        return (g * mask,)

    return _result(np.maximum(a.value, floor), (a,), vjp)


def softmax(a, axis):
    a = _wrap(a)
    _require_real(a, "softmax")
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (a,), vjp)


def logsumexp(a, axis, keepdims=False):
    a = _wrap(a)
    _require_real(a, "logsumexp")
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    w = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * w,)

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)
    ash = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ash),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, ash),)

    return _result(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    ash = a.shape
    n = a.value.size if axis is None else np.prod(
        [ash[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, ash),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk / n, ash),)

    return _result(out, (a,), vjp)


def reshape(a, shape):
    a = _wrap(a)
    ash = a.shape

    def vjp(g):
        return (g.reshape(ash),)

    return _result(a.value.reshape(shape), (a,), vjp)


def transpose(a, axes):
    a = _wrap(a)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _result(np.transpose(a.value, axes), (a,), vjp)


def getitem(a, key):
    a = _wrap(a)
    out = a.value[key]
    ash, adtype = a.shape, a.value.dtype

    def vjp(g):
        buf = np.zeros(ash, COMPLEX if adtype == COMPLEX else REAL)
        buf[key] += g
        return (buf,)

    return _result(out, (a,), vjp)


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tuple(tensors), vjp)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# matrix primitives


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul expects ndim >= 2 operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out = a.value @ b.value
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g @ hconj(bv), av.shape)
        gb = _unbroadcast(hconj(av) @ g, bv.shape)
        return ga, gb

    return _result(out, (a, b), vjp)


def htranspose(a):
    a = _wrap(a)
    if a.ndim < 2:
        raise ValueError("hermitian-transpose expects ndim >= 2")

    def vjp(g):
        return (hconj(g),)

    return _result(hconj(a.value), (a,), vjp)


def trace(a):
    a = _wrap(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"trace expects square matrices, got {a.shape}")
    d = a.shape[-1]
    eye = np.eye(d)

    def vjp(g):
        return (g[..., None, None] * eye,)

    return _result(np.trace(a.value, axis1=-2, axis2=-1), (a,), vjp)


def cholesky_batch(value, op):
    """Batched Cholesky; reports the failing batch indices on error."""
    try:
        return np.linalg.cholesky(value)
    except np.linalg.LinAlgError:
        herm = 0.5 * (value + hconj(value))
        mineig = np.linalg.eigvalsh(herm).min(axis=-1)
        bad = np.argwhere(mineig <= 0.0)
        idx = [tuple(int(i) for i in row) for row in bad[:8]]
        raise NotPositiveDefiniteError(
            f"{op}: matrix not positive definite at batch indices {idx}",
            indices=idx,
        ) from None


def cholesky_solve_np(L, b):
    """Solve (L L^H) x = b with forward/backward substitution.

    L: (..., D, D) lower triangular; b: (..., D, R).  Batch dims broadcast.
    When the factor batch is much smaller than the right-hand-side batch
    (one factor reused for many snapshots), L is inverted once and applied
    with batched matmuls instead.
    """
    d = L.shape[-1]
    n_l = int(np.prod(L.shape[:-2], dtype=np.int64)) if L.ndim > 2 else 1
    n_b = int(np.prod(np.broadcast_shapes(L.shape[:-2], b.shape[:-2]),
                      dtype=np.int64))
    if n_l * (d + 1) <= n_b:
        eye = np.broadcast_to(np.eye(d, dtype=L.dtype), L.shape)
        binv = _substitution_solve(L, eye)  # (L L^H)^-1
        binv = 0.5 * (binv + hconj(binv))
        return binv @ np.ascontiguousarray(b)
    return _substitution_solve(L, b)


def _substitution_solve(L, b):
    d = L.shape[-1]
    shape = np.broadcast_shapes(L.shape[:-2], b.shape[:-2])
    Lb = np.broadcast_to(L, shape + L.shape[-2:])
    bb = np.broadcast_to(b, shape + b.shape[-2:])
    y = np.empty(shape + b.shape[-2:], COMPLEX if np.iscomplexobj(L) or np.iscomplexobj(b) else REAL)
    for i in range(d):
        acc = bb[..., i, :]
        if i:
            acc = acc - np.einsum("...k,...kr->...r", Lb[..., i, :i], y[..., :i, :])
        y[..., i, :] = acc / Lb[..., i, i, None]
    x = np.empty_like(y)
    for i in range(d - 1, -1, -1):
        acc = y[..., i, :]
        if i < d - 1:
            acc = acc - np.einsum(
                "...k,...kr->...r", np.conj(Lb[..., i + 1 :, i]), x[..., i + 1 :, :]
            )
        x[..., i, :] = acc / np.conj(Lb[..., i, i, None])
    return x


def cholesky_inverse_np(L):
    d = L.shape[-1]
    eye = np.broadcast_to(np.eye(d, dtype=L.dtype), L.shape)
    return cholesky_solve_np(L, eye)


def hermitian_solve(B, v):
    """u = B^-1 v for Hermitian positive definite B via Cholesky.

    B: (..., D, D); v: (..., D).  Batch dims broadcast.  Differentiable in
    both arguments.  B must be Hermitian within a relative 1e-10 and positive
    definite (no regularization happens here; apply it in the graph).
    """
    B, v = _wrap(B), _wrap(v)
    check_hermitian(B.value, "hermitian_solve")
    d = B.shape[-1]
    if v.shape[-1] != d:
        raise ValueError(
            f"hermitian_solve: vector length {v.shape[-1]} != matrix dim {d}"
        )
    L = cholesky_batch(B.value, "hermitian_solve")
    u = cholesky_solve_np(L, v.value[..., None])[..., 0]
    Bsh, vsh = B.shape, v.shape

    def vjp(g):
        s = cholesky_solve_np(L, g[..., None])[..., 0]
        gB = -_outer_to_shape(s, np.conj(u), Bsh)
        return gB, _unbroadcast(s, vsh)

    return _result(u, (B, v), vjp)


def _outer_to_shape(a, b, target):
    """sum-reduced outer product: out[..., d, e] = Σ a[..., d] b[..., e]
    summed over batch axes that are broadcast (1 or absent) in ``target``.
    Avoids materializing the full broadcast outer product."""
    batch = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    a = np.broadcast_to(a, batch + a.shape[-1:])
    b = np.broadcast_to(b, batch + b.shape[-1:])
    tbatch = (1,) * (len(batch) - (len(target) - 2)) + tuple(target[:-2])
    letters = [chr(ord("a") + i) for i in range(len(batch))]
    keep = [lt for lt, n in zip(letters, tbatch) if n != 1]
    spec = (
        f"{''.join(letters)}y,{''.join(letters)}z->{''.join(keep)}yz"
    )
    out = np.einsum(spec, a, b, optimize=True)
    return out.reshape(target)


def log_det_hermitian(B):
    """ln det B for Hermitian positive definite B, via Cholesky (log domain)."""
    B = _wrap(B)
    check_hermitian(B.value, "log_det_hermitian")
    L = cholesky_batch(B.value, "log_det_hermitian")
    diag = np.diagonal(L, axis1=-2, axis2=-1).real
    out = 2.0 * np.log(diag).sum(axis=-1)

    def vjp(g):
        # d ln det B = tr(B^-1 dB); for the real-valued forward the Wirtinger
        # cotangent is g * B^-1 (no factor 2 -- finite differences agree).
        Binv = cholesky_inverse_np(L)
        return (g[..., None, None] * Binv,)

    return _result(out, (B,), vjp)


def quadratic_form(v, B):
    """Re(v^H B v) for Hermitian B; real positive output for PD B."""
    v, B = _wrap(v), _wrap(B)
    check_hermitian(B.value, "quadratic_form")
    Bv = np.einsum("...de,...e->...d", B.value, v.value)
    s = np.einsum("...d,...d->...", np.conj(v.value), Bv)
    imax = np.abs(s.imag).max() if s.size else 0.0
    rmax = np.abs(s.real).max() if s.size else 0.0
    if imax > 1e-12 * max(rmax, 1e-300) + 1e-300:
        raise ValueError(
            f"quadratic_form: non-negligible imaginary part {imax:.3e}"
        )
    out = s.real
    vv, Bval = v.value, B.value

    def vjp(g):
        BHv = np.einsum("...ed,...e->...d", np.conj(Bval), vv)
        gv = g[..., None] * (Bv + BHv)
        gB = g[..., None, None] * (vv[..., :, None] * np.conj(vv[..., None, :]))
        return _unbroadcast(gv, vv.shape), _unbroadcast(gB, Bval.shape)

    return _result(out, (v, B), vjp)


def l2_normalize(a, axis=-1):
    """z / ||z||_2 along ``axis``."""
    a = _wrap(a)
    av = a.value
    n = np.sqrt((av * np.conj(av)).real.sum(axis=axis, keepdims=True))
    if np.any(n == 0.0):
        raise ValueError("l2_normalize: zero vector")
    out = av / n

    def vjp(g):
        inner = (np.conj(g) * av).real.sum(axis=axis, keepdims=True)
        return (g / n - av * (inner / n**3),)

    return _result(out, (a,), vjp)


def weighted_outer_sum(w, y_outer):
    """sum_t w[k,t,f] * Y[t,f,:,:] -> (k,f,D,D).

    ``w`` is real (class, time, freq); ``Y`` is a complex stack of outer
    products (time, freq, D, D).  The workhorse of the covariance update;
    avoids materializing the (K,T,F,D,D) intermediate.
    """
    w, y_outer = _wrap(w), _wrap(y_outer)
    if w.is_complex:
        raise ValueError("weighted_outer_sum expects real weights")
    out = np.einsum("ktf,tfde->kfde", w.value, y_outer.value, optimize=True)
    wv, yv = w.value, y_outer.value

    def vjp(g):
        gw = np.einsum("kfde,tfde->ktf", g, np.conj(yv), optimize=True)
        gy = np.einsum("kfde,ktf->tfde", g, wv, optimize=True)
        return gw, gy

    return _result(out, (w, y_outer), vjp)


# Registry used by Tape.record; keys include alternate op spellings.
PRIMITIVES = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "div": div,
    "conj": conj,
    "abs2": abs2,
    "real": real_part,
    "imag": imag_part,
    "complex": make_complex,
    "matmul": matmul,
    "hermitian-transpose": htranspose,
    "htranspose": htranspose,
    "trace": trace,
    "sum": sum_,
    "mean": mean,
    "ln": log,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "maximum": maximum,
    "softmax": softmax,
    "logsumexp": logsumexp,
    "hermitian_solve": hermitian_solve,
    "log_det_hermitian": log_det_hermitian,
    "quadratic_form": quadratic_form,
    "l2-normalize": l2_normalize,
    "l2_normalize": l2_normalize,
    "stack": stack,
    "concat": concat,
    "slice": getitem,
    "getitem": getitem,
    "reshape": reshape,
    "transpose": transpose,
    "weighted_outer_sum": weighted_outer_sum,
}
