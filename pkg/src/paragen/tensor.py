"""Float64 tensors with taped reverse-mode gradients.

All model math runs on these tensors. Each op records its inputs, so a
fresh tape is built every forward pass and `Tensor.backward` replays it
in reverse topological order. Shapes are checked eagerly on every op and
any NaN/Inf raises at the op that produced it; training must never
continue on poisoned values.

Data is always contiguous row-major float64. Vectors that feed matrix
ops are kept as (1, n) row matrices by the model code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TensorError(ValueError):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """Dense float64 array plus an optional same-shape gradient accumulator."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, _parents=(), _where="tensor"):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _check_finite(arr, _where)
        self.data = arr
        self.grad = None
        self._parents = _parents
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        if self.data.size != 1:
            raise TensorError("backward() requires a scalar loss")
        order = _topo_order(self)
        self.ensure_grad()[...] = 1.0
        for t in reversed(order):
            if t._bwd is not None and t.grad is not None:
                t._bwd(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _topo_order(root: Tensor) -> list:
    # Iterative DFS; taped chains get far deeper than the recursion limit.
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Parameter:
    """Named trainable tensor; trainable parameters always carry a grad buffer."""

    def __init__(self, name: str, data, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(data, _where=f"parameter {name}")
        self.trainable = trainable
        if trainable:
            self.tensor.ensure_grad()

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class RngStream:
    """Seeded random stream; identical seed + algorithm gives identical draws."""

    def __init__(self, seed: int, algorithm: str = "pcg64"):
        if algorithm != "pcg64":
            raise ValueError(f"unknown rng algorithm {algorithm!r}")
        self.seed = int(seed)
        self.algorithm = algorithm
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc, scale, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)

    def bernoulli(self, p: float) -> bool:
        return bool(self._gen.random() < p)

    def categorical(self, probs: np.ndarray) -> int:
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return int(np.searchsorted(cdf, self._gen.random(), side="right"))

    def get_state(self) -> dict:
        return {
            "seed": self.seed,
            "algorithm": self.algorithm,
            "state": self._gen.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        if state["algorithm"] != self.algorithm:
            raise ValueError("rng algorithm mismatch")
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = state["state"]


def init_uniform(rng: RngStream, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, shape)


# ---------------------------------------------------------------------------
# ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def constant(data) -> Tensor:
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data, (a, b), "add")

    def bwd(g):
        a.ensure_grad()[...] += g
        b.ensure_grad()[...] += g

    out._bwd = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, (a, b), "sub")

    def bwd(g):
        a.ensure_grad()[...] += g
        b.ensure_grad()[...] -= g

    out._bwd = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, (a, b), "mul")

    def bwd(g):
        a.ensure_grad()[...] += g * b.data
        b.ensure_grad()[...] += g * a.data

    out._bwd = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s, (a,), "scale")

    def bwd(g):
        a.ensure_grad()[...] += g * s

    out._bwd = bwd
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), (a,), "tanh")
    y = out.data

    def bwd(g):
        a.ensure_grad()[...] += g * (1.0 - y * y)

    out._bwd = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, (a,), "sigmoid")
    y = out.data

    def bwd(g):
        a.ensure_grad()[...] += g * y * (1.0 - y)

    out._bwd = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,), "relu")
    mask = (a.data > 0).astype(np.float64)

    def bwd(g):
        a.ensure_grad()[...] += g * mask

    out._bwd = bwd
    return out


_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *inputs):
    """Dispatch by name; `scale` takes (tensor, scalar)."""
    if op in _ELEMENTWISE_UNARY:
        (a,) = inputs
        return _ELEMENTWISE_UNARY[op](a)
    if op in _ELEMENTWISE_BINARY:
        a, b = inputs
        return _ELEMENTWISE_BINARY[op](a, b)
    if op == "scale":
        a, s = inputs
        return scale(a, s)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        out = Tensor(a.data @ b.data, (a, b), "matmul")

    def bwd(g):
        a.ensure_grad()[...] += g @ b.data.T
        b.ensure_grad()[...] += a.data.T @ g

    out._bwd = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose needs a 2-D tensor")
    out = Tensor(a.data.T, (a,), "transpose")

    def bwd(g):
        a.ensure_grad()[...] += g.T

    out._bwd = bwd
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,), "reshape")

    def bwd(g):
        a.ensure_grad()[...] += g.reshape(a.shape)

    out._bwd = bwd
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=axis, keepdims=True), (a,), "softmax")
    s = out.data

    def bwd(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a.ensure_grad()[...] += s * (g - inner)

    out._bwd = bwd
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse, (a,), "log_softmax")
    p = np.exp(out.data)

    def bwd(g):
        a.ensure_grad()[...] += g - p * g.sum(axis=axis, keepdims=True)

    out._bwd = bwd
    return out


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(a.data), (a,), "log")

    def bwd(g):
        a.ensure_grad()[...] += g / a.data

    out._bwd = bwd
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero parts")
    parts = [p for p in parts if p.size > 0] or parts[:1]
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim:
            raise ShapeError("concat: rank mismatch")
        for ax in range(ndim):
            if ax != axis % ndim and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(
                    f"concat: non-concat dims disagree {p.shape} vs {parts[0].shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), "concat")
    sizes = [p.shape[axis % ndim] for p in parts]

    def bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            idx = [slice(None)] * ndim
            idx[axis % ndim] = slice(offset, offset + n)
            p.ensure_grad()[...] += g[tuple(idx)]
            offset += n

    out._bwd = bwd
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    if a.shape[axis] < start + length:
        raise ShapeError(f"narrow out of range on shape {a.shape}")
    out = Tensor(a.data[idx].copy(), (a,), "narrow")

    def bwd(g):
        a.ensure_grad()[idx] += g

    out._bwd = bwd
    return out


def pick(a: Tensor, *index) -> Tensor:
    """Scalar gather at a fixed multi-index."""
    out = Tensor(a.data[index], (a,), "pick")

    def bwd(g):
        a.ensure_grad()[index] += g.reshape(())

    out._bwd = bwd
    return out


def pick_rows(a: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError("pick_rows needs a 2-D tensor")
    out = Tensor(a.data[indices], (a,), "pick_rows")

    def bwd(g):
        np.add.at(a.ensure_grad(), indices, g)

    out._bwd = bwd
    return out


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.shape != (1, m.shape[1]):
        raise ShapeError(f"add_rowvec: {m.shape} + {v.shape}")
    out = Tensor(m.data + v.data, (m, v), "add_rowvec")

    def bwd(g):
        m.ensure_grad()[...] += g
        v.ensure_grad()[...] += g.sum(axis=0, keepdims=True)

    out._bwd = bwd
    return out


def mul_rowvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.shape != (1, m.shape[1]):
        raise ShapeError(f"mul_rowvec: {m.shape} * {v.shape}")
    out = Tensor(m.data * v.data, (m, v), "mul_rowvec")

    def bwd(g):
        m.ensure_grad()[...] += g * v.data
        v.ensure_grad()[...] += (g * m.data).sum(axis=0, keepdims=True)

    out._bwd = bwd
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum().reshape(()), (a,), "sum")

    def bwd(g):
        a.ensure_grad()[...] += g.reshape(())

    out._bwd = bwd
    return out


def mean_pool_columns(v: Tensor) -> Tensor:
    """Column-wise mean of an (M, D) matrix, returned as a (1, D) row."""
    if v.data.ndim != 2:
        raise ShapeError("mean_pool_columns needs a 2-D tensor")
    m = v.shape[0]
    if m == 0:
        raise ShapeError("mean_pool_columns of zero rows")
    out = Tensor(v.data.mean(axis=0, keepdims=True), (v,), "mean_pool_columns")

    def bwd(g):
        v.ensure_grad()[...] += g / m

    out._bwd = bwd
    return out


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute element differences; subgradient 0 at exact ties."""
    _same_shape(a, b, "l1_loss")
    diff = a.data - b.data
    out = Tensor(np.abs(diff).sum().reshape(()), (a, b), "l1_loss")
    s = np.sign(diff)

    def bwd(g):
        gs = g.reshape(()) * s
        a.ensure_grad()[...] += gs
        b.ensure_grad()[...] -= gs

    out._bwd = bwd
    return out


def dropout(a: Tensor, rate: float, rng: RngStream) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} out of range")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = Tensor(a.data * mask, (a,), "dropout")

    def bwd(g):
        a.ensure_grad()[...] += g * mask

    out._bwd = bwd
    return out


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch-statistics normalization over axis 0 of an (m, n) matrix.

    Returns (out, batch_mean, batch_var); the caller owns running-stat
    bookkeeping.
    """
    if x.data.ndim != 2:
        raise ShapeError("batchnorm needs a 2-D tensor")
    if gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1]):
        raise ShapeError("batchnorm: gamma/beta must be (1, n) rows")
    m = x.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, (x, gamma, beta), "batchnorm")

    def bwd(g):
        gamma.ensure_grad()[...] += (g * xhat).sum(axis=0, keepdims=True)
        beta.ensure_grad()[...] += g.sum(axis=0, keepdims=True)
        gx = g * gamma.data
        x.ensure_grad()[...] += inv * (
            gx - gx.mean(axis=0, keepdims=True)
            - xhat * (gx * xhat).mean(axis=0, keepdims=True))

    out._bwd = bwd
    return out, mu.ravel().copy(), var.ravel().copy()


def conv1d_regions(v: Tensor, filters: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid strided convolution of the (M, D1) map with K full-height filters.

    filters: (K, M, C1); bias: (K,). Output (K, D2) with
    D2 = (D1 - C1) / stride + 1.
    """
    if v.data.ndim != 2 or filters.data.ndim != 3:
        raise ShapeError("conv1d_regions: bad ranks")
    m, d1 = v.shape
    k, fm, c1 = filters.shape
    if fm != m:
        raise ShapeError(f"conv filter height {fm} != region count {m}")
    if bias.shape != (k,):
        raise ShapeError("conv bias must be (K,)")
    if (d1 - c1) % stride != 0 or d1 < c1:
        raise ShapeError(f"(D1 - C1) = {d1 - c1} not divisible by stride {stride}")
    d2 = (d1 - c1) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(v.data, c1, axis=1)[:, ::stride, :]
    # windows: (M, D2, C1)
    out = Tensor(np.einsum("kmc,mjc->kj", filters.data, windows) + bias.data[:, None],
                 (v, filters, bias), "conv1d_regions")

    def bwd(g):
        filters.ensure_grad()[...] += np.einsum("kj,mjc->kmc", g, windows)
        bias.ensure_grad()[...] += g.sum(axis=1)
        tmp = np.einsum("kj,kmc->mjc", g, filters.data)
        gv = v.ensure_grad()
        for j in range(d2):
            gv[:, j * stride:j * stride + c1] += tmp[:, j, :]

    out._bwd = bwd
    return out


def deconv1d_regions(t: Tensor, filters: Tensor, bias: Tensor, stride: int,
                     out_width: int) -> Tensor:
    """Transposed convolution, the exact linear adjoint of conv1d_regions.

    t: (K, D2); filters: (K, M, C1); bias: (out_width,). Output (M, out_width)
    with out_width = (D2 - 1) * stride + C1.
    """
    if t.data.ndim != 2 or filters.data.ndim != 3:
        raise ShapeError("deconv1d_regions: bad ranks")
    k, d2 = t.shape
    fk, m, c1 = filters.shape
    if fk != k:
        raise ShapeError(f"deconv filter count {fk} != topic count {k}")
    if (d2 - 1) * stride + c1 != out_width:
        raise ShapeError(
            f"deconv geometry: (D2-1)*stride + C1 = {(d2 - 1) * stride + c1}"
            f" != requested width {out_width}")
    if bias.shape != (out_width,):
        raise ShapeError("deconv bias must be (out_width,)")
    tmp = np.einsum("kj,kmc->mjc", t.data, filters.data)
    acc = np.zeros((m, out_width))
    for j in range(d2):
        acc[:, j * stride:j * stride + c1] += tmp[:, j, :]
    out = Tensor(acc + bias.data[None, :], (t, filters, bias), "deconv1d_regions")

    def bwd(g):
        gwin = np.lib.stride_tricks.sliding_window_view(g, c1, axis=1)[:, ::stride, :]
        t.ensure_grad()[...] += np.einsum("kmc,mjc->kj", filters.data, gwin)
        filters.ensure_grad()[...] += np.einsum("kj,mjc->kmc", t.data, gwin)
        bias.ensure_grad()[...] += g.sum(axis=0)

    out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckFailure:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_error: float
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_gradients(f, params, eps: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Central finite differences vs taped gradients for every parameter entry.

    `f` must be a deterministic closure over `params` returning a scalar
    Tensor. Relative error is |a - n| / max(1, |a|, |n|).
    """
    params = list(params)
    for p in params:
        p.tensor.ensure_grad()
        p.tensor.zero_grad()
    loss = f()
    if loss.size != 1:
        raise TensorError("check_gradients needs a scalar-valued f")
    loss.backward()
    analytic = {p.name: p.tensor.grad.copy() for p in params}

    report = GradCheckReport(n_checked=0, max_rel_error=0.0)
    for p in params:
        flat = p.tensor.data.ravel()
        ana = analytic[p.name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = f().item()
            flat[i] = orig - eps
            lm = f().item()
            flat[i] = orig
            num = (lp - lm) / (2.0 * eps)
            rel = abs(ana[i] - num) / max(1.0, abs(ana[i]), abs(num))
            report.n_checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > tol:
                report.failures.append(
                    GradCheckFailure(p.name, i, float(ana[i]), num, rel))
    return report
