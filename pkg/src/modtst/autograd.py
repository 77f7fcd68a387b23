"""Dense float64 tensors with tape-free reverse-mode differentiation, Adam, and checkpoints.

Every operation that touches a tensor with ``requires_grad`` records its
parents and a closure computing the vector-Jacobian product.  Nodes get a
monotonically increasing id at creation, so sorting a traced graph by id is
a topological order by construction.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import threading
import zipfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, FormatError

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1
_HEADER_KEY = "__header__"
_EPOCH = (1980, 1, 1, 0, 0, 0)

_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (inference, evaluation)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: mul(self, -1.0)
    __sub__ = lambda self, o: add(self, mul(o, -1.0))
    __rsub__ = lambda self, o: add(o, mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only supported by a constant")
        return mul(self, 1.0 / other)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, op: str, backward_fn: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op}: non-finite values in output")
    out = Tensor(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(kind: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), "add", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), "mul", bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), "relu", bw)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis with population variance."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(
            f"layer_norm: input {x.shape} needs gain/bias of shape ({h},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd

    def bw(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, h).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, h).sum(axis=0)
        return gx, ggain, gbias

    return _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", bw)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), "softmax", bw)


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: ids out of range [0, {table.shape[0]}) for table {table.shape}")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[ids], (table,), "embedding_lookup", bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat: no inputs")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) if t.requires_grad else None
                     for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]))

    return _make(data, tensors, "concat", bw)


def slice_(x, key) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data[key]
    except IndexError as exc:
        raise DimensionError(f"slice: {key!r} invalid for shape {x.shape}: {exc}") from None

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(np.array(data, copy=True), (x,), "slice", bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), "reshape", bw)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), "transpose", bw)


def sum_(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum()), (x,), "sum", bw)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return _make(np.asarray(x.data.mean()), (x,), "mean", bw)


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


def cross_entropy(logits, targets, pad_id: int) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is ``[..., positions, vocab]`` and ``targets`` ``[..., positions]``.
    Each sequence is averaged over its non-pad positions, then sequences are
    averaged, so micro-batch means combine exactly into the full-batch mean.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}")
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ContractError(f"cross_entropy: target ids must lie in [0, {vocab})")
    mask = targets != pad_id
    counts = mask.sum(axis=-1, keepdims=True).astype(np.float64)
    if (counts == 0).any():
        raise ContractError("cross_entropy: a sequence has only pad targets; the mean is undefined")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsumexp
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    n_seq = counts.size
    per_seq = -(picked * mask).sum(axis=-1, keepdims=True) / counts
    loss = np.asarray(max(per_seq.mean(), 0.0))

    def bw(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        weight = (mask / counts / n_seq)[..., None]
        return (float(g) * (probs - onehot) * weight,)

    return _make(loss, (logits,), "cross_entropy", bw)


PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "embedding_lookup": embedding_lookup,
    "concat": concat,
    "slice": slice_,
    "cross_entropy": cross_entropy,
    "reshape": reshape,
    "transpose": transpose,
    "sum": sum_,
    "mean": mean,
}


def forward_primitive(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Dispatch a primitive by name; extra arguments are passed as keywords."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    if kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# graph + backward


@dataclass
class ComputeGraph:
    """Nodes reachable from a root, in creation (= topological) order."""

    nodes: list

    @classmethod
    def trace(cls, root: Tensor) -> "ComputeGraph":
        seen = {root._id: root}
        stack = [root]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p.requires_grad and p._id not in seen:
                    seen[p._id] = p
                    stack.append(p)
        return cls(sorted(seen.values(), key=lambda t: t._id))


def backward(loss: Tensor, graph: ComputeGraph | None = None):
    """Populate ``grad`` on every grad-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate ones are overwritten.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or ComputeGraph.trace(loss)
    pending = {loss._id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(node._id, None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                node.grad += g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = pending.get(parent._id)
            pending[parent._id] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    named = _named(params)
    for name, p in named:
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in named:
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], config_hash: str, **extra):
    """Write parameter arrays as little-endian float64 plus a JSON header."""
    header = {"format_version": CHECKPOINT_VERSION, "config_hash": config_hash, **extra}
    payload = {name: np.ascontiguousarray(a, dtype="<f8") for name, a in arrays.items()}
    if _HEADER_KEY in payload:
        raise ContractError(f"parameter path {_HEADER_KEY!r} is reserved")
    payload[_HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    # a hand-rolled .npz: same layout as np.savez, but fixed entry timestamps
    # so identical weights always give byte-identical archives
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(payload):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, payload[name], allow_pickle=False)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as archive:
        if _HEADER_KEY not in archive.files:
            raise FormatError(f"{path}: missing checkpoint header")
        header = json.loads(archive[_HEADER_KEY].tobytes().decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')!r}")
        arrays = {k: archive[k].astype(np.float64) for k in archive.files if k != _HEADER_KEY}
    return arrays, header


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
