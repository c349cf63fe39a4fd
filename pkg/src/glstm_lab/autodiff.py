"""Tape-based reverse-mode automatic differentiation on float64 arrays.

Everything is define-by-run: calling an op computes the forward value
with numpy and, when a Tape is active and some input requires grad,
appends a node recording the op kind, input handles, saved context and
the produced output.  Append order is execution order, which is a valid
topological order, so backpropagation is a single reverse sweep over
the node list.  That sweep order is fixed, which is what makes repeated
runs bitwise identical.

Subgradient conventions are part of the contract here, not an
implementation detail, because the probe suite differentiates through
max-type nonlinearities:

* max(x, c): derivative 1 where x > c, else 0 (ties go to the constant).
* maximum(a, b): ties send the gradient to the first argument.
* reduce_max / neighbor_max: gradient flows only to the lowest-index
  element among tied maxima.
* relu and abs: derivative 0 at exactly 0.

Composite functions (softmax, layer_norm, group_norm, cross-entropy,
the norms) record chains of primitive nodes; their gradients come out
of the same reverse sweep.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class Tensor:
    """A float64 numpy array plus autodiff bookkeeping.

    ``node`` is the tape entry that produced this tensor, or None for
    leaves and constants.  Gradients live in the map returned by
    backpropagate, not on the tensor.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node: OpNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; the functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


class OpNode:
    __slots__ = ("kind", "inputs", "output", "saved", "tape")

    def __init__(self, kind, inputs, output, saved, tape):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.tape = tape


class Tape:
    """Ordered record of OpNodes; used as a context manager.

    A tape can drive exactly one backward pass; a second call raises.
    replay() recomputes every node from its inputs' current data and
    demands bitwise equality with the stored outputs.
    """

    def __init__(self):
        self.nodes: list[OpNode] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def replay(self) -> None:
        for pos, node in enumerate(self.nodes):
            fwd, _ = _OPS[node.kind]
            got = fwd([t.data for t in node.inputs], node.saved)
            if not np.array_equal(got, node.output.data):
                raise ReplayError(
                    f"node {pos} ({node.kind}) does not reproduce its stored output"
                )


class ReplayError(AssertionError):
    pass


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the given input shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# Per-op forward/backward pairs.  Forwards take (input_arrays, saved)
# and must be pure functions of those so replay works; backwards take
# (grad_out, input_arrays, output_array, saved) and return one gradient
# per input (None for non-differentiable inputs).

_OPS: dict[str, tuple[Callable, Callable]] = {}


def _defop(kind: str, fwd: Callable, bwd: Callable) -> None:
    _OPS[kind] = (fwd, bwd)


def _apply(kind: str, inputs: Sequence[Tensor], saved: dict | None = None) -> Tensor:
    saved = saved if saved is not None else {}
    fwd, _ = _OPS[kind]
    out = Tensor(fwd([t.data for t in inputs], saved))
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        node = OpNode(kind, tuple(inputs), out, saved, tape)
        out.node = node
        tape.nodes.append(node)
    return out


_defop(
    "add",
    lambda a, s: a[0] + a[1],
    lambda g, a, o, s: (_unbroadcast(g, a[0].shape), _unbroadcast(g, a[1].shape)),
)
_defop(
    "sub",
    lambda a, s: a[0] - a[1],
    lambda g, a, o, s: (_unbroadcast(g, a[0].shape), _unbroadcast(-g, a[1].shape)),
)
_defop(
    "mul",
    lambda a, s: a[0] * a[1],
    lambda g, a, o, s: (
        _unbroadcast(g * a[1], a[0].shape),
        _unbroadcast(g * a[0], a[1].shape),
    ),
)
_defop(
    "div",
    lambda a, s: a[0] / a[1],
    lambda g, a, o, s: (
        _unbroadcast(g / a[1], a[0].shape),
        _unbroadcast(-g * o / a[1], a[1].shape),
    ),
)
_defop("neg", lambda a, s: -a[0], lambda g, a, o, s: (-g,))
_defop("exp", lambda a, s: np.exp(a[0]), lambda g, a, o, s: (g * o,))
_defop("log", lambda a, s: np.log(a[0]), lambda g, a, o, s: (g / a[0],))
_defop(
    "sigmoid",
    lambda a, s: 1.0 / (1.0 + np.exp(-a[0])),
    lambda g, a, o, s: (g * o * (1.0 - o),),
)
_defop("tanh", lambda a, s: np.tanh(a[0]), lambda g, a, o, s: (g * (1.0 - o * o),))
_defop(
    "relu",
    lambda a, s: np.maximum(a[0], 0.0),
    lambda g, a, o, s: (g * (a[0] > 0.0),),
)


def _gelu_fwd(a, s):
    x = a[0]
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_bwd(g, a, o, s):
    x = a[0]
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x**2)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


# tanh-form gelu; the derivative matches the forward exactly, which is
# what the finite-difference checks verify.
_defop("gelu", _gelu_fwd, _gelu_bwd)
_defop("abs", lambda a, s: np.abs(a[0]), lambda g, a, o, s: (g * np.sign(a[0]),))
_defop("sqrt", lambda a, s: np.sqrt(a[0]), lambda g, a, o, s: (g * 0.5 / o,))
_defop(
    "pow_const",
    lambda a, s: a[0] ** s["p"],
    lambda g, a, o, s: (g * s["p"] * a[0] ** (s["p"] - 1.0),),
)
_defop(
    "max_const",
    lambda a, s: np.maximum(a[0], s["c"]),
    lambda g, a, o, s: (g * (a[0] > s["c"]),),
)
_defop(
    "maximum",
    lambda a, s: np.maximum(a[0], a[1]),
    lambda g, a, o, s: (
        _unbroadcast(g * (a[0] >= a[1]), a[0].shape),
        _unbroadcast(g * (a[1] > a[0]), a[1].shape),
    ),
)


def _sum_fwd(a, s):
    return np.sum(a[0], axis=s["axis"], keepdims=s["keepdims"])


def _sum_bwd(g, a, o, s):
    axis, keepdims = s["axis"], s["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a[0].shape).copy(),)


_defop("sum", _sum_fwd, _sum_bwd)


def _mean_fwd(a, s):
    return np.mean(a[0], axis=s["axis"], keepdims=s["keepdims"])


def _mean_bwd(g, a, o, s):
    axis, keepdims = s["axis"], s["keepdims"]
    count = a[0].size if axis is None else a[0].shape[axis]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a[0].shape).copy() / count,)


_defop("mean", _mean_fwd, _mean_bwd)


def _reduce_max_fwd(a, s):
    return np.max(a[0], axis=s["axis"], keepdims=s["keepdims"])


def _reduce_max_bwd(g, a, o, s):
    # np.argmax returns the first maximal position, which implements
    # the ties-to-lowest-index convention.
    x = a[0]
    axis, keepdims = s["axis"], s["keepdims"]
    grad = np.zeros_like(x)
    if axis is None:
        grad.flat[np.argmax(x)] = np.sum(g)
    else:
        arg = np.expand_dims(np.argmax(x, axis=axis), axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, arg, gg, axis)
    return (grad,)


_defop("reduce_max", _reduce_max_fwd, _reduce_max_bwd)
_defop(
    "reshape",
    lambda a, s: a[0].reshape(s["shape"]),
    lambda g, a, o, s: (np.ascontiguousarray(g).reshape(a[0].shape),),
)


def _transpose_fwd(a, s):
    return np.transpose(a[0], s["axes"])


def _transpose_bwd(g, a, o, s):
    axes = s["axes"]
    inv = np.argsort(axes) if axes is not None else None
    return (np.transpose(g, inv),)


_defop("transpose", _transpose_fwd, _transpose_bwd)


def _concat_fwd(a, s):
    return np.concatenate(a, axis=s["axis"])


def _concat_bwd(g, a, o, s):
    axis = s["axis"]
    sizes = [x.shape[axis] for x in a]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


_defop("concat", _concat_fwd, _concat_bwd)


def _narrow_fwd(a, s):
    sl = [slice(None)] * a[0].ndim
    sl[s["axis"]] = slice(s["start"], s["start"] + s["length"])
    return a[0][tuple(sl)].copy()


def _narrow_bwd(g, a, o, s):
    grad = np.zeros_like(a[0])
    sl = [slice(None)] * a[0].ndim
    sl[s["axis"]] = slice(s["start"], s["start"] + s["length"])
    grad[tuple(sl)] = g
    return (grad,)


_defop("narrow", _narrow_fwd, _narrow_bwd)
_defop(
    "rows",
    lambda a, s: a[0][s["idx"]],
    lambda g, a, o, s: (
        kernels.scatter_rows(np.ascontiguousarray(g), s["idx"], a[0].shape[0]),
    ),
)


def _matmul_fwd(a, s):
    return a[0] @ a[1]


def _matmul_bwd(g, a, o, s):
    x, y = a
    if x.ndim == 2 and y.ndim == 2:
        return (g @ y.T, x.T @ g)
    if x.ndim == 2 and y.ndim == 1:
        return (np.outer(g, y), x.T @ g)
    if x.ndim == 1 and y.ndim == 2:
        return (g @ y.T, np.outer(x, g))
    raise ValueError("matmul supports 2d@2d, 2d@1d and 1d@2d only")


_defop("matmul", _matmul_fwd, _matmul_bwd)
_defop(
    "outer",
    lambda a, s: np.outer(a[0], a[1]),
    lambda g, a, o, s: (g @ a[1], g.T @ a[0]),
)
_defop(
    "dropout",
    lambda a, s: a[0] * s["mask"],
    lambda g, a, o, s: (g * s["mask"],),
)


def _neighbor_weights(saved, scale_data=None):
    w = saved["structure"].weights
    if scale_data is None:
        return w
    return scale_data if w is None else w * scale_data


def _neighbor_sum_fwd(a, s):
    scale = a[1] if len(a) == 2 else None
    return kernels.seg_sum(
        a[0], s["structure"].idx, s["structure"].indptr, _neighbor_weights(s, scale)
    )


def _neighbor_sum_bwd(g, a, o, s):
    st = s["structure"]
    scale = a[1] if len(a) == 2 else None
    w = _neighbor_weights(s, scale)
    g = np.ascontiguousarray(g)
    # Gradient to the payload is the same aggregation over the
    # transposed structure with edge weights permuted to match.
    gx = kernels.seg_sum(g, st.t_idx, st.t_indptr, None if w is None else w[st.t_perm])
    if scale is None:
        return (gx,)
    gscale = kernels.seg_dot(a[0], g, st.idx, st.indptr, st.weights)
    return (gx, gscale)


_defop("neighbor_sum", _neighbor_sum_fwd, _neighbor_sum_bwd)


def _neighbor_max_fwd(a, s):
    out, arg = kernels.seg_max(a[0], s["structure"].idx, s["structure"].indptr)
    s["arg"] = arg
    return out


def _neighbor_max_bwd(g, a, o, s):
    return (
        kernels.seg_max_backward(np.ascontiguousarray(g), s["arg"], a[0].shape[0]),
    )


_defop("neighbor_max", _neighbor_max_fwd, _neighbor_max_bwd)


# Public op functions.

def add(a, b) -> Tensor:
    return _apply("add", [_as_tensor(a), _as_tensor(b)])


def sub(a, b) -> Tensor:
    return _apply("sub", [_as_tensor(a), _as_tensor(b)])


def mul(a, b) -> Tensor:
    return _apply("mul", [_as_tensor(a), _as_tensor(b)])


def div(a, b) -> Tensor:
    return _apply("div", [_as_tensor(a), _as_tensor(b)])


def neg(x) -> Tensor:
    return _apply("neg", [_as_tensor(x)])


def exp(x) -> Tensor:
    return _apply("exp", [_as_tensor(x)])


def log(x) -> Tensor:
    return _apply("log", [_as_tensor(x)])


def sigmoid(x) -> Tensor:
    return _apply("sigmoid", [_as_tensor(x)])


def tanh(x) -> Tensor:
    return _apply("tanh", [_as_tensor(x)])


def relu(x) -> Tensor:
    return _apply("relu", [_as_tensor(x)])


def gelu(x) -> Tensor:
    return _apply("gelu", [_as_tensor(x)])


def abs_(x) -> Tensor:
    return _apply("abs", [_as_tensor(x)])


def sqrt(x) -> Tensor:
    return _apply("sqrt", [_as_tensor(x)])


def pow_const(x, p: float) -> Tensor:
    return _apply("pow_const", [_as_tensor(x)], {"p": float(p)})


def max_const(x, c: float) -> Tensor:
    return _apply("max_const", [_as_tensor(x)], {"c": float(c)})


def maximum(a, b) -> Tensor:
    return _apply("maximum", [_as_tensor(a), _as_tensor(b)])


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    return _apply("sum", [_as_tensor(x)], {"axis": axis, "keepdims": keepdims})


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return _apply("mean", [_as_tensor(x)], {"axis": axis, "keepdims": keepdims})


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None and not isinstance(axis, int):
        raise ValueError("reduce_max axis must be None or an int")
    return _apply("reduce_max", [_as_tensor(x)], {"axis": axis, "keepdims": keepdims})


def reshape(x, shape) -> Tensor:
    return _apply("reshape", [_as_tensor(x)], {"shape": tuple(shape)})


def transpose(x, axes=None) -> Tensor:
    return _apply("transpose", [_as_tensor(x)], {"axes": axes})


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    return _apply("concat", [_as_tensor(t) for t in tensors], {"axis": axis})


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    return _apply(
        "narrow", [_as_tensor(x)], {"axis": axis, "start": start, "length": length}
    )


def rows(x, idx) -> Tensor:
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return _apply("rows", [_as_tensor(x)], {"idx": idx})


def matmul(a, b) -> Tensor:
    return _apply("matmul", [_as_tensor(a), _as_tensor(b)])


def outer(a, b) -> Tensor:
    return _apply("outer", [_as_tensor(a), _as_tensor(b)])


def dropout(x, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _apply("dropout", [_as_tensor(x)], {"mask": mask})


def neighbor_sum(x, structure, scale=None) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("neighbor_sum expects a 2-d payload")
    inputs = [_as_tensor(x)]
    if scale is not None:
        inputs.append(_as_tensor(scale))
    return _apply("neighbor_sum", inputs, {"structure": structure})


def neighbor_max(x, structure) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("neighbor_max expects a 2-d payload")
    return _apply("neighbor_max", [_as_tensor(x)], {"structure": structure})


# Composites.

def softmax(x, axis: int = -1) -> Tensor:
    shift = detach(reduce_max(x, axis=axis, keepdims=True))
    e = exp(sub(x, shift))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def log_softmax(x, axis: int = -1) -> Tensor:
    shift = detach(reduce_max(x, axis=axis, keepdims=True))
    z = sub(x, shift)
    return sub(z, log(reduce_sum(exp(z), axis=axis, keepdims=True)))


def l1_norm(x) -> Tensor:
    return reduce_sum(abs_(x))


def l2_norm(x) -> Tensor:
    return sqrt(reduce_sum(mul(x, x)))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_const(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gamma), beta)


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    n, d = x.shape
    if d % groups:
        raise ValueError(f"width {d} not divisible into {groups} groups")
    xg = reshape(x, (n, groups, d // groups))
    mu = mean(xg, axis=-1, keepdims=True)
    xc = sub(xg, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_const(add(var, eps), -0.5)
    return add(mul(reshape(mul(xc, inv), (n, d)), gamma), beta)


def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    picked = reduce_sum(mul(log_softmax(logits, axis=-1), constant(onehot)))
    return div(neg(picked), float(n))


def mse(pred, target) -> Tensor:
    d = sub(pred, _as_tensor(target))
    return mean(mul(d, d))


_RECORD_DISPATCH: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "gelu": gelu,
    "abs": abs_,
    "sqrt": sqrt,
    "pow_const": pow_const,
    "max_const": max_const,
    "maximum": maximum,
    "sum": reduce_sum,
    "mean": mean,
    "reduce_max": reduce_max,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "narrow": narrow,
    "rows": rows,
    "matmul": matmul,
    "matvec": matmul,
    "outer": outer,
    "dropout": dropout,
    "neighbor_sum": neighbor_sum,
    "neighbor_max": neighbor_max,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "l1_norm": l1_norm,
    "l2_norm": l2_norm,
    "layer_norm": layer_norm,
    "group_norm": group_norm,
}


def record(op_kind: str, *inputs, **params) -> Tensor:
    """Name-based dispatch over every supported op kind.

    Model code calls the functions directly; this entry point exists so
    callers can drive the engine generically (and tests can enumerate
    the supported kinds).
    """
    try:
        fn = _RECORD_DISPATCH[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **params)


def supported_op_kinds() -> tuple[str, ...]:
    return tuple(sorted(_RECORD_DISPATCH))


def backpropagate(root: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar root; returns tensor -> gradient.

    The map covers every requires-grad tensor the sweep reached,
    including the root (gradient 1) and intermediates.  The tape is
    consumed and emptied: a second backward over it raises, and the
    recorded graph is torn down so its memory returns immediately.
    """
    if root.size != 1:
        raise ValueError(f"backpropagate needs a scalar root, got shape {root.shape}")
    # Teardown below detaches the root, so on a repeat call over an explicit
    # tape the consumed flag is the reliable signal; check it first.
    if tape is not None and tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    if root.node is None:
        raise ValueError("root is detached (no tape recorded its computation)")
    if tape is None:
        tape = root.node.tape
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    by_id: dict[int, Tensor] = {id(root): root}
    for node in reversed(tape.nodes):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        _, bwd = _OPS[node.kind]
        in_grads = bwd(g_out, [t.data for t in node.inputs], node.output.data, node.saved)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                by_id[key] = t
    result = {by_id[k]: v for k, v in grads.items()}
    # A consumed tape is dead weight, but the Tensor <-> OpNode <-> Tape
    # cycles keep every intermediate array alive until a full gc pass;
    # training-sized graphs allocate cycles faster than the collector
    # retires them.  Severing the links lets refcounting reclaim the
    # whole step immediately.  Values on user-held tensors survive.
    for node in tape.nodes:
        node.output.node = None
        node.inputs = ()
        node.saved = None
        node.tape = None
    tape.nodes.clear()
    return result


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients of f() against central differences.

    f must be a pure function of the current .data of the given params
    and return a scalar Tensor.  Per-coordinate relative error is
    |analytic - fd| / (|fd| + 1e-12); the report carries the max over
    all checked coordinates and a per-parameter breakdown.  max_coords
    caps the number of coordinates checked per parameter (sampled with
    rng, which is then required), keeping the check affordable on large
    tensors.
    """
    with Tape() as tape:
        out = f()
    grad_map = backpropagate(out, tape)

    worst = 0.0
    per_param = []
    for p in params:
        analytic = grad_map.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                raise ValueError("max_coords sampling needs an rng")
            coords = rng.choice(flat.size, size=max_coords, replace=False)
            coords.sort()
        p_worst = 0.0
        for c in coords:
            orig = flat[c]
            h = step * (1.0 + abs(orig))
            flat[c] = orig + h
            f_plus = float(f().data)
            flat[c] = orig - h
            f_minus = float(f().data)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic.reshape(-1)[c] - fd) / (abs(fd) + 1e-12)
            p_worst = max(p_worst, err)
        per_param.append({"shape": p.shape, "checked": len(coords), "max_rel_err": p_worst})
        worst = max(worst, p_worst)
    return {"max_rel_err": worst, "params": per_param}
