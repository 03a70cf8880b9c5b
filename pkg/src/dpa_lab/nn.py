"""Small reverse-mode autodiff over float64 numpy arrays.

Only what the autoencoders in this package need: elementwise arithmetic with
broadcasting, matmul, ELU, reductions, slicing/concatenation, logsumexp and a
fused ``‖x‖^β`` op.  A graph is recorded per forward call while gradient mode
is on and is consumed by a single ``backward``.
"""
from __future__ import annotations

import contextlib
import json
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

CHECKPOINT_FORMAT = "dpa-lab-checkpoint"
CHECKPOINT_VERSION = 1

_grad_enabled = True


class DimensionError(ValueError):
    pass


class GraphError(RuntimeError):
    """Misuse of a recorded graph (e.g. a second backward pass)."""


class TrainingError(RuntimeError):
    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def no_grad():
    return _grad_mode(False)


def is_grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = False):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self._consumed:
            raise GraphError("backward already called on this graph; re-run the forward pass")
        if not self.requires_grad:
            raise GraphError("tensor does not require grad (was it built under no_grad?)")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

        if not retain_graph:
            for node in order:
                if node._backward is not None:
                    node._backward = None
                    node._parents = ()
                    node._consumed = True

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Tensor._make(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError("matmul supports 2-D operands only")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        need_a, need_b = self.requires_grad, other.requires_grad
        return Tensor._make(
            a @ b,
            (self, other),
            lambda g: (g @ b.T if need_a else None, a.T @ g if need_b else None),
        )

    # -- shape ops ---------------------------------------------------------
    def __getitem__(self, idx):
        shape = self.shape
        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

        def backward(g):
            full = np.zeros(shape)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), backward)

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self):
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    # -- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._make(np.log(a), (x,), lambda g: (g / a,))


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1."""
    a = x.data
    neg = np.expm1(np.minimum(a, 0.0))  # zero wherever a > 0
    out = np.maximum(a, 0.0) + neg
    return Tensor._make(out, (x,), lambda g: (g * (neg + 1.0),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def logsumexp(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    a = x.data
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    out = s if keepdims else np.squeeze(s, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(a - s),)

    return Tensor._make(out, (x,), backward)


def norm_pow(x: Tensor, beta: float, axis: int = -1) -> Tensor:
    """``‖x‖₂^β`` along ``axis``; subgradient 0 where the norm vanishes."""
    a = x.data
    sq = np.sum(a * a, axis=axis)
    out = sq ** (beta / 2.0)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(sq > 0, beta * sq ** (beta / 2.0 - 1.0), 0.0)
        return (np.expand_dims(g * coef, axis) * a,)

    return Tensor._make(out, (x,), backward)


# ---------------------------------------------------------------------------
# Layers


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(n_out,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Mlp:
    """Fully connected ELU network.

    ``widths`` lists every layer width including input and output, so
    ``Mlp([2, 64, 64, 3])`` has three affine maps.  With ``residual=True`` each
    hidden-to-hidden map becomes ``h + elu(W h + b)``.
    """

    def __init__(self, widths: Sequence[int], residual: bool = False, seed=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.widths = widths
        self.residual = bool(residual)
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def _skip(self, i: int) -> bool:
        last = len(self.layers) - 1
        return self.residual and 0 < i < last and self.widths[i] == self.widths[i + 1]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"expected input of shape (batch, {self.n_in}), got {x.shape}")
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = layer(h)
            if i == last:
                h = z
            elif self._skip(i):
                h = h + elu(z)
            else:
                h = elu(z)
        return h

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}.weight", layer.weight
            yield f"layers.{i}.bias", layer.bias

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return self(np.asarray(x, dtype=np.float64)).data

    def jacobian(self, x) -> np.ndarray:
        """Jacobian of outputs w.r.t. inputs per row, shape (batch, n_out, n_in).

        One backward pass per output column on a retained graph.
        """
        x = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        with _grad_mode(True):
            out = self(x)
        jac = np.empty((x.shape[0], self.n_out, self.n_in))
        for j in range(self.n_out):
            x.grad = None
            seed = np.zeros(out.shape)
            seed[:, j] = 1.0
            out.backward(seed, retain_graph=j < self.n_out - 1)
            jac[:, j, :] = x.grad
        for p in self.parameters():
            p.grad = None
        return jac


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def gradients(loss: Tensor, named_params: Iterable[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    """Run backward on ``loss`` and return ``{name: grad}`` (zeros if unused)."""
    named_params = list(named_params)
    zero_grad(p for _, p in named_params)
    loss.backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in named_params
    }


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.named_params = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        zero_grad(p for _, p in self.named_params)

    def step(self, grads: dict[str, np.ndarray] | None = None):
        """Bias-corrected Adam update; reads ``p.grad`` unless ``grads`` is given."""
        if grads is None:
            grads = {
                name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in self.named_params
            }
        missing = [name for name, _ in self.named_params if name not in grads]
        if missing:
            raise KeyError(f"no gradient supplied for {missing}")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}", parameter=name)

        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.named_params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in tensors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    tensors = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["tensors"].items()
    }
    return tensors, payload["meta"]
