"""A minimal dense-tensor library with reverse-mode automatic differentiation.

Every operation records a backward closure on its output when any input requires
grad. `Tensor.backward` walks the recorded graph in reverse topological order,
accumulates gradients into every reachable tensor, and then releases the graph.

Broadcasting is limited to what the model needs: leading batch axes,
row-wise bias adds and scalar scales.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


def set_default_dtype(dtype) -> None:
    """
    Set the floating precision used for newly created tensors.

    Args:
        dtype: np.float32 (training default) or np.float64 (oracle tests).
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported precision {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def default_dtype(dtype):
    """Temporarily switch the default precision."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, generation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape of the operand it flows into."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A dense n-dimensional array with optional gradient tracking.

    Attributes:
        data (np.ndarray): Contiguous values.
        requires_grad (bool): Whether gradients are accumulated into `grad`.
        grad (Optional[np.ndarray]): Same-shape gradient buffer, None until backward.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype=None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = (
                data.dtype
                if isinstance(data, np.ndarray)
                and data.dtype in (np.float32, np.float64)
                else _DEFAULT_DTYPE
            )
        self.data = np.require(data, dtype=dtype, requirements="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._prev: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{label})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # graph plumbing

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """
        Populate `grad` on every tensor reachable from this scalar loss.

        Raises:
            ContractError: If the tensor is not a scalar.
        """
        if self.ndim != 0:
            raise ContractError(
                f"backward needs a scalar loss, got shape {self.shape}"
            )
        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # the tape is per forward pass
        for node in topo:
            node._prev = ()
            node._backward = None

    # arithmetic

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = _result(self.data + other.data, (self, other), "add")
        if out.requires_grad:

            def _backward(grad):
                self._accumulate(grad)
                other._accumulate(grad)

            out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = _result(self.data * other.data, (self, other), "mul")
        if out.requires_grad:

            def _backward(grad):
                self._accumulate(grad * other.data)
                other._accumulate(grad * self.data)

            out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __pow__(self, exponent: float) -> "Tensor":
        out = _result(self.data ** exponent, (self,), "pow")
        if out.requires_grad:

            def _backward(grad):
                self._accumulate(grad * exponent * self.data ** (exponent - 1.0))

            out._backward = _backward
        return out

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, self._coerce(other))

    def __getitem__(self, index) -> "Tensor":
        out = _result(self.data[index], (self,), "getitem")
        if out.requires_grad:

            def _backward(grad):
                full = np.zeros_like(self.data)
                np.add.at(full, index, grad)
                self._accumulate(full)

            out._backward = _backward
        return out

    # elementwise

    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = _result(value, (self,), "exp")
        if out.requires_grad:
            out._backward = lambda grad: self._accumulate(grad * value)
        return out

    def log(self) -> "Tensor":
        out = _result(np.log(self.data), (self,), "log")
        if out.requires_grad:
            out._backward = lambda grad: self._accumulate(grad / self.data)
        return out

    def relu(self) -> "Tensor":
        active = self.data > 0
        out = _result(np.where(active, self.data, 0.0), (self,), "relu")
        if out.requires_grad:
            out._backward = lambda grad: self._accumulate(grad * active)
        return out

    def gelu(self) -> "Tensor":
        # tanh approximation
        x = self.data
        c = np.sqrt(2.0 / np.pi)
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = _result(0.5 * x * (1.0 + t), (self,), "gelu")
        if out.requires_grad:

            def _backward(grad):
                d_inner = c * (1.0 + 3 * 0.044715 * x ** 2)
                local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
                self._accumulate(grad * local)

            out._backward = _backward
        return out

    # reductions and views

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:

            def _backward(grad):
                if axis is not None and not keepdims:
                    axes = (axis,) if isinstance(axis, int) else axis
                    axes = sorted(a % self.ndim for a in axes)
                    for a in axes:
                        grad = np.expand_dims(grad, a)
                self._accumulate(np.broadcast_to(grad, self.shape))

            out._backward = _backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _result(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            out._backward = lambda grad: self._accumulate(grad.reshape(self.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        out = _result(self.data.transpose(axes), (self,), "transpose")
        if out.requires_grad:
            out._backward = lambda grad: self._accumulate(grad.transpose(inverse))
        return out

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    @property
    def T(self) -> "Tensor":
        return self.transpose()


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype.kind == "f" else None)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._op = op
    return out


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes with leading batch axes.

    Supports ``[..., m, k] @ [k, n]`` and ``[..., m, k] @ [..., k, n]``.

    Raises:
        DimensionError: If inner dimensions differ or either operand is not at least 2-D.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
    out = _result(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:

        def _backward(grad):
            a._accumulate(np.matmul(grad, np.swapaxes(b.data, -1, -2)))
            if b.requires_grad:
                if b.ndim == 2 and a.ndim > 2:
                    flat_a = a.data.reshape(-1, a.shape[-1])
                    flat_g = grad.reshape(-1, grad.shape[-1])
                    b._accumulate(flat_a.T @ flat_g)
                else:
                    b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), grad))

        out._backward = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Concatenate tensors along an existing axis.

    Raises:
        DimensionError: If the non-concatenated axes differ.
    """
    tensors = list(tensors)
    reference = list(tensors[0].shape)
    axis = axis % len(reference)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(reference) or any(
            r != o for i, (r, o) in enumerate(zip(reference, other)) if i != axis
        ):
            raise DimensionError(
                f"concat shape mismatch on axis {axis}: "
                f"{[tuple(x.shape) for x in tensors]}"
            )
    out = _result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat"
    )
    if out.requires_grad:
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def _backward(grad):
            for t, piece in zip(tensors, np.split(grad, bounds, axis=axis)):
                t._accumulate(piece)

        out._backward = _backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; rows along `axis` sum to one."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (x,), "softmax")
    if out.requires_grad:

        def _backward(grad):
            x._accumulate(y * (grad - (grad * y).sum(axis=axis, keepdims=True)))

        out._backward = _backward
    return out


def _normalize(data: np.ndarray, axes: Tuple[int, ...], eps: float):
    mu = data.mean(axis=axes, keepdims=True)
    centered = data - mu
    var = (centered ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def _normalize_backward(
    d_xhat: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, axes
) -> np.ndarray:
    return inv_std * (
        d_xhat
        - d_xhat.mean(axis=axes, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=axes, keepdims=True)
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply gamma, beta."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} for input {x.shape}"
        )
    xhat, inv_std = _normalize(x.data, (-1,), eps)
    out = _result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:

        def _backward(grad):
            x._accumulate(_normalize_backward(grad * gamma.data, xhat, inv_std, (-1,)))
            flat_g = grad.reshape(-1, grad.shape[-1])
            gamma._accumulate((flat_g * xhat.reshape(flat_g.shape)).sum(axis=0))
            beta._accumulate(flat_g.sum(axis=0))

        out._backward = _backward
    return out


def group_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5
) -> Tensor:
    """
    Group normalization of a channel-last feature map.

    Args:
        x (Tensor): Input of shape (B, H, W, C).
        gamma (Tensor): Per-channel scale of shape (C,).
        beta (Tensor): Per-channel shift of shape (C,).
        groups (int): Number of channel groups; must divide C.
        eps (float): Variance guard.

    Returns:
        Tensor: Normalized tensor of shape (B, H, W, C).
    """
    b, h, w, c = x.shape
    if c % groups:
        raise DimensionError(f"{groups} groups do not divide {c} channels")
    grouped = x.data.reshape(b, h * w, groups, c // groups)
    axes = (1, 3)
    xhat, inv_std = _normalize(grouped, axes, eps)
    xhat = xhat.reshape(x.shape)
    out = _result(xhat * gamma.data + beta.data, (x, gamma, beta), "group_norm")
    if out.requires_grad:

        def _backward(grad):
            d_xhat = (grad * gamma.data).reshape(grouped.shape)
            dx = _normalize_backward(
                d_xhat, xhat.reshape(grouped.shape), inv_std, axes
            )
            x._accumulate(dx.reshape(x.shape))
            gamma._accumulate((grad * xhat).sum(axis=(0, 1, 2)))
            beta._accumulate(grad.sum(axis=(0, 1, 2)))

        out._backward = _backward
    return out


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """
    Look up rows of `weight`.

    Raises:
        IndexError: If any id falls outside [0, V).
    """
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab}): {ids.max()}")
    out = _result(weight.data[ids], (weight,), "embedding")
    if out.requires_grad:

        def _backward(grad):
            full = np.zeros_like(weight.data)
            np.add.at(full, ids.reshape(-1), grad.reshape(-1, weight.shape[1]))
            weight._accumulate(full)

        out._backward = _backward
    return out


def cross_entropy(
    logits: Tensor, targets: np.ndarray, pad_id: int = 0, reduction: str = "mean"
) -> Tensor:
    """
    Negative log-likelihood of `targets` under softmax(`logits`), pads excluded.

    Args:
        logits (Tensor): Scores of shape (..., V).
        targets (np.ndarray): Integer ids of shape (...).
        pad_id (int): Positions holding this id contribute nothing.
        reduction (str): "mean" over non-pad positions, or "none" for per-position terms.

    Returns:
        Tensor: Scalar mean loss (0 with zero gradient when every target is pad),
        or per-position losses shaped like `targets`.

    Raises:
        IndexError: If a non-pad target id falls outside [0, V).
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(
            f"targets {targets.shape} do not match logits {logits.shape}"
        )
    flat_logits = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    mask = flat_targets != pad_id
    live = flat_targets[mask]
    if live.size and (live.min() < 0 or live.max() >= vocab):
        raise IndexError(f"target id out of vocabulary range [0, {vocab})")
    safe = np.where(mask, flat_targets, 0)

    shifted = flat_logits - flat_logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(flat_targets.size)
    per_position = -log_probs[rows, safe] * mask

    count = int(mask.sum())
    if reduction == "mean":
        value = per_position.sum() / count if count else 0.0
        out = _result(np.asarray(value, dtype=logits.dtype), (logits,), "cross_entropy")
    elif reduction == "none":
        out = _result(
            per_position.reshape(targets.shape).astype(logits.dtype),
            (logits,),
            "cross_entropy",
        )
    else:
        raise ContractError(f"unknown reduction {reduction!r}")

    if out.requires_grad:

        def _backward(grad):
            probs = np.exp(log_probs)
            probs[rows, safe] -= 1.0
            probs *= mask[:, None]
            if reduction == "mean":
                scale = grad / count if count else 0.0
                d = probs * scale
            else:
                d = probs * grad.reshape(-1)[:, None]
            logits._accumulate(d.reshape(logits.shape))

        out._backward = _backward
    return out


def dropout(
    x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool
) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


def drop_path(
    x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool
) -> Tensor:
    """Stochastic depth: drop a whole residual branch per sample (axis 0)."""
    if not training or p <= 0.0:
        return x
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    keep = (rng.random(shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D convolution of a channel-last batch via im2col + matmul.

    Args:
        x (Tensor): Input of shape (B, H, W, C_in).
        weight (Tensor): Kernel of shape (k, k, C_in, C_out).
        bias (Optional[Tensor]): Shape (C_out,).
        stride (int): Spatial stride.
        padding (int): Zero padding on each spatial side.

    Returns:
        Tensor: Output of shape (B, H_out, W_out, C_out).
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects (B, H, W, C) input, got {x.shape}")
    k, _, c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}"
        )
    b, h, w, _ = x.shape
    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    # windows: (B, H', W', C, k, k) -> (B, H_out, W_out, k, k, C)
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    windows = windows[:, : h_out * stride : stride, : w_out * stride : stride]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * h_out * w_out, k * k * c_in)
    kernel = weight.data.reshape(k * k * c_in, c_out)
    value = (cols @ kernel).reshape(b, h_out, w_out, c_out)
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        value = value + bias.data
    out = _result(value, parents, "conv2d")
    if out.requires_grad:

        def _backward(grad):
            flat_g = grad.reshape(-1, c_out)
            weight._accumulate((cols.T @ flat_g).reshape(weight.shape))
            if bias is not None:
                bias._accumulate(flat_g.sum(axis=0))
            if x.requires_grad:
                d_cols = (flat_g @ kernel.T).reshape(b, h_out, w_out, k, k, c_in)
                d_padded = np.zeros_like(padded)
                for i in range(k):
                    for j in range(k):
                        d_padded[
                            :,
                            i : i + stride * h_out : stride,
                            j : j + stride * w_out : stride,
                            :,
                        ] += d_cols[:, :, :, i, j, :]
                x._accumulate(d_padded[:, padding : padding + h, padding : padding + w])

        out._backward = _backward
    return out


def numerical_grad(
    fn: Callable[[], Tensor], param: Tensor, index: Tuple[int, ...], h: float = 1e-5
) -> float:
    """Central finite difference of a scalar function w.r.t. one parameter entry."""
    original = param.data[index].copy()
    with no_grad():
        param.data[index] = original + h
        plus = fn().item()
        param.data[index] = original - h
        minus = fn().item()
    param.data[index] = original
    return (plus - minus) / (2.0 * h)


def gradcheck(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    n_checks: int = 10,
    h: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        fn (Callable[[], Tensor]): Recomputes the scalar loss from current parameter values.
        params (Iterable[Tensor]): Parameters to check.
        n_checks (int): Number of randomly chosen (parameter, entry) pairs.
        h (float): Finite-difference step.
        rng (Optional[np.random.Generator]): Entry selection RNG.

    Returns:
        float: Maximum relative error over the checked entries.
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.zero_grad()
    fn().backward()
    worst = 0.0
    for _ in range(n_checks):
        p = params[rng.integers(len(params))]
        index = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[index])
        numeric = numerical_grad(fn, p, index, h)
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    logger.debug("gradcheck checks=%d max_rel_err=%.3e", n_checks, worst)
    return worst
