"""
Small dense-tensor kernel with reverse-mode autodiff, the layers and losses the
reducers need, and the Adam optimizer.

Every value is float64. Any op that produces NaN or Inf raises NonFiniteValue.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import NonFiniteValue, ShapeMismatch

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad down to shape, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An immutable float64 array that remembers how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _parents: Tuple["Tensor", ...] = (), op: str = "leaf"):
        self.data = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"non-finite value produced by '{op}'")
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = _parents
        self._backward: Callable[[], None] = lambda: None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def _child(self, data: np.ndarray, parents: Tuple["Tensor", ...], op: str) -> "Tensor":
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return Tensor(data, _parents=parents, op=op)

    # arithmetic
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast(self, other, "add")
        out = self._child(self.data + other.data, (self, other), "add")

        def backward():
            self.grad += _unbroadcast(out.grad, self.shape)
            other.grad += _unbroadcast(out.grad, other.shape)
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        _check_broadcast(self, other, "mul")
        out = self._child(self.data * other.data, (self, other), "mul")

        def backward():
            self.grad += _unbroadcast(out.grad * other.data, self.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.shape)
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeMismatch(f"matmul of {self.shape} and {other.shape}")
        out = self._child(self.data @ other.data, (self, other), "matmul")

        def backward():
            self.grad += out.grad @ other.data.T
            other.grad += self.data.T @ out.grad
        out._backward = backward
        return out

    @property
    def T(self) -> "Tensor":
        out = self._child(self.data.T, (self,), "transpose")

        def backward():
            self.grad += out.grad.T
        out._backward = backward
        return out

    # elementwise functions
    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = self._child(value, (self,), "exp")

        def backward():
            self.grad += out.grad * out.data
        out._backward = backward
        return out

    def tanh(self) -> "Tensor":
        out = self._child(np.tanh(self.data), (self,), "tanh")

        def backward():
            self.grad += out.grad * (1.0 - out.data * out.data)
        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        out = self._child(0.5 * (1.0 + np.tanh(0.5 * self.data)), (self,), "sigmoid")

        def backward():
            self.grad += out.grad * out.data * (1.0 - out.data)
        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        mask = (self.data > 0).astype(np.float64)
        out = self._child(self.data * mask, (self,), "relu")

        def backward():
            self.grad += out.grad * mask
        out._backward = backward
        return out

    def square(self) -> "Tensor":
        return self * self

    # reductions and reshaping
    def sum(self) -> "Tensor":
        out = self._child(self.data.sum(), (self,), "sum")

        def backward():
            self.grad += np.broadcast_to(out.grad, self.shape)
        out._backward = backward
        return out

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / max(self.data.size, 1))

    def columns(self, start: int, stop: int) -> "Tensor":
        """Column slice [:, start:stop] of a 2-D tensor."""
        if self.data.ndim != 2 or not 0 <= start <= stop <= self.shape[1]:
            raise ShapeMismatch(f"columns {start}:{stop} of {self.shape}")
        out = self._child(self.data[:, start:stop], (self,), "columns")

        def backward():
            self.grad[:, start:stop] += out.grad
        out._backward = backward
        return out

    def reshape(self, *shape: int) -> "Tensor":
        out = self._child(self.data.reshape(*shape), (self,), "reshape")

        def backward():
            self.grad += out.grad.reshape(self.shape)
        out._backward = backward
        return out

    def backward(self) -> "Graph":
        graph = Graph(self)
        graph.backward()
        return graph


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value: ArrayLike) -> Tensor:
    """A leaf that collects gradients."""
    return Tensor(value, requires_grad=True)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of no tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {e}")
    out = Tensor(data, _parents=tuple(tensors), op="concat")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward():
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * out.grad.ndim
            index[axis] = slice(lo, hi)
            t.grad += out.grad[tuple(index)]
    out._backward = backward
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op} of {a.shape} and {b.shape}")


class Graph:
    """The nodes reachable from an output, in topological order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self):
        """Fill .grad on every node; gradients start from zero on each call."""
        if self.output.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar output, got shape {self.output.shape}")
        for node in self.nodes:
            node.grad = np.zeros_like(node.data)
        self.output.grad = np.ones_like(self.output.data)
        for node in reversed(self.nodes):
            if node.requires_grad:
                node._backward()


# layers

def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x W^T + b for x (B x I), W (O x I), b (O)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeMismatch(f"dense expects 2-D x, 2-D W, 1-D b; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[1] or W.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"dense shapes x{x.shape} W{W.shape} b{b.shape} disagree")
    return x @ W.T + b


def relu(x: Tensor) -> Tensor:
    return x.relu()


@dataclass
class LstmCellParams:
    """Gate weights stacked in the order input, forget, candidate, output."""
    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def validate(self) -> "LstmCellParams":
        H, I = self.hidden_size, self.input_size
        if self.W.shape != (4 * H, I) or self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ShapeMismatch(f"LSTM params W{self.W.shape} U{self.U.shape} b{self.b.shape} inconsistent")
        return self


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LstmCellParams) -> Tuple[Tensor, Tensor]:
    """One LSTM step: returns (h', c')."""
    p.validate()
    H = p.hidden_size
    if x.data.ndim != 2 or x.shape[1] != p.input_size:
        raise ShapeMismatch(f"LSTM input {x.shape} does not match input size {p.input_size}")
    if h.shape != (x.shape[0], H) or c.shape != (x.shape[0], H):
        raise ShapeMismatch(f"LSTM state shapes h{h.shape} c{c.shape}, expected ({x.shape[0]}, {H})")

    gates = x @ p.W.T + h @ p.U.T + p.b
    i = gates.columns(0, H).sigmoid()
    f = gates.columns(H, 2 * H).sigmoid()
    g = gates.columns(2 * H, 3 * H).tanh()
    o = gates.columns(3 * H, 4 * H).sigmoid()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next


# losses

def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse of {pred.shape} and {target.shape}")
    return (pred - target).square().mean()


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over latent dims, averaged over the batch."""
    if mu.shape != logvar.shape or mu.data.ndim != 2:
        raise ShapeMismatch(f"kl of mu{mu.shape} and logvar{logvar.shape}")
    per_element = 1.0 + logvar - mu.square() - logvar.exp()
    return per_element.sum() * (-0.5 / mu.shape[0])


def reparameterize(mu: Tensor, logvar: Tensor, noise: ArrayLike) -> Tensor:
    """z = mu + exp(logvar / 2) * noise, with noise supplied by the caller."""
    noise = as_tensor(noise)
    if not (mu.shape == logvar.shape == noise.shape):
        raise ShapeMismatch(f"reparameterize shapes mu{mu.shape} logvar{logvar.shape} noise{noise.shape}")
    return mu + (logvar * 0.5).exp() * noise


# optimizer

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and state."""
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape:
            raise ShapeMismatch(f"gradient for '{name}' has shape {grad.shape}, parameter {value.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        updated = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(updated)):
            raise NonFiniteValue(f"Adam update of '{name}' is not finite")
        new_params[name], new_m[name], new_v[name] = updated, m, v
    return new_params, AdamState(step=step, m=new_m, v=new_v)


# gradient checking

def gradients(f: Callable[[Dict[str, Tensor]], Tensor],
              point: Dict[str, np.ndarray]) -> Tuple[float, Dict[str, np.ndarray]]:
    """Value of f at point and its reverse-mode gradient w.r.t. every entry."""
    leaves = {name: parameter(value) for name, value in point.items()}
    out = f(leaves)
    out.backward()
    return out.item(), {name: leaf.grad.copy() for name, leaf in leaves.items()}


def grad_check(f: Callable, point: Union[np.ndarray, Dict[str, np.ndarray]], step: float = 1e-5,
               max_checks: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               atol: float = 0.0) -> float:
    """
    Largest relative error between reverse-mode and central-difference gradients.

    Args:
        f: Maps a dict of Tensors (or one Tensor, when point is an array) to a scalar Tensor
        point: Where to evaluate
        step: Central-difference step
        max_checks: If set, compare only this many randomly chosen components per entry
        rng: Generator for choosing components (required with max_checks)
        atol: Components whose two gradients differ by at most this are skipped; the default 0
              compares every component, pass ~1e-9 for composed losses where both gradients can
              sit at the finite-difference noise floor

    Returns:
        max |a - n| / max(|a|, |n|, 1e-8) over the compared components
    """
    single = isinstance(point, np.ndarray)
    values = {"x": point} if single else point
    fn = (lambda leaves: f(leaves["x"])) if single else f
    values = {name: np.array(v, dtype=np.float64) for name, v in values.items()}

    _, analytic = gradients(fn, values)

    worst = 0.0
    for name, value in values.items():
        flat_count = value.size
        components = range(flat_count)
        if max_checks is not None and flat_count > max_checks:
            if rng is None:
                raise ValueError("grad_check with max_checks needs an rng")
            components = sorted(rng.choice(flat_count, size=max_checks, replace=False))
        for k in components:
            index = np.unravel_index(k, value.shape)
            plus = {n: v.copy() for n, v in values.items()}
            minus = {n: v.copy() for n, v in values.items()}
            plus[name][index] += step
            minus[name][index] -= step
            f_plus = fn({n: Tensor(v) for n, v in plus.items()}).item()
            f_minus = fn({n: Tensor(v) for n, v in minus.items()}).item()
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name][index])
            if abs(a - numeric) <= atol:
                continue
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)
    return worst
