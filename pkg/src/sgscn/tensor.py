"""Minimal dense-array math with reverse-mode automatic differentiation.

A small dynamic-tape engine backed by numpy: each op records a backward
closure on its output node, and ``Tensor.backward`` walks the tape in
reverse topological order. Just enough ops for a small convolutional
network and its losses, plus a finite-difference gradient checker.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent for an operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # leading axes added by broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus an optional gradient and tape linkage.

    Data is stored as a contiguous float32 or float64 numpy array.
    Tensors are immutable after creation except for gradient accumulation
    and explicit in-place parameter updates between tapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    # ------------------------------------------------------------------
    # construction helpers

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _wrap(other, dtype) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=dtype))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # autodiff driver

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode pass from this (typically scalar) tensor."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar loss")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # elementwise ops

    def __add__(self, other) -> "Tensor":
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._wrap(other, self.dtype))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._wrap(other, self.dtype) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data ** 2), other.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __pow__(self, exponent: float) -> "Tensor":
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def sqrt(self) -> "Tensor":
        return self ** 0.5

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._result(out_data, (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._result(out_data, (self,), backward)

    def abs(self) -> "Tensor":
        out_data = np.abs(self.data)

        def backward(g):
            # subgradient at 0 is 0
            self._accumulate(g * np.sign(self.data))

        return Tensor._result(out_data, (self,), backward)

    def clamp_min(self, floor: float) -> "Tensor":
        out_data = np.maximum(self.data, floor)

        def backward(g):
            self._accumulate(g * (self.data > floor))

        return Tensor._result(out_data, (self,), backward)

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, *shape: int) -> "Tensor":
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor._result(out_data, (self,), backward)

    def __getitem__(self, index) -> "Tensor":
        out_data = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            full[index] = g
            self._accumulate(full)

        return Tensor._result(out_data, (self,), backward)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else axis
                g = np.expand_dims(g, tuple(a % self.data.ndim for a in axes))
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# ----------------------------------------------------------------------
# nonlinearity / normalization


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); gradient at exactly 0 is 0."""
    mask = x.data > 0
    out_data = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return Tensor._result(out_data, (x,), backward)


def channel_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel of a (C, H, W) map to zero mean, unit variance.

    Statistics run over the H*W plane; with a single image this is what
    batch normalization (without a learnable affine) degenerates to.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"channel_norm expects (C, H, W), got {x.shape}")
    if x.data.shape[1] * x.data.shape[2] < 2:
        raise ShapeError("channel_norm needs at least 2 pixels per channel")
    mean = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    return centered / (var + eps).sqrt()


def softmax_channels(x: Tensor) -> Tensor:
    """Channel-wise softmax of a (C, H, W) map, max-shifted for stability.

    The per-pixel max is a constant shift: softmax is invariant under it,
    so it carries no gradient.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"softmax_channels expects (C, H, W), got {x.shape}")
    shift = x.data.max(axis=0, keepdims=True)
    e = (x - shift).exp()
    return e / e.sum(axis=0, keepdims=True)


# ----------------------------------------------------------------------
# convolution


def _check_conv_shapes(input: Tensor, weight: Tensor, bias: Tensor,
                       stride: int, pad: int) -> None:
    if stride != 1 or pad != 1:
        raise ShapeError(f"conv2d supports stride=1, pad=1 only; got "
                         f"stride={stride}, pad={pad}")
    if input.data.ndim != 3:
        raise ShapeError(f"conv2d input must be (C_in, H, W), got {input.shape}")
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d weight must be (C_out, C_in, 3, 3), "
                         f"got {weight.shape}")
    if weight.shape[1] != input.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input has {input.shape[0]} "
                         f"channels, weight expects {weight.shape[1]}")
    if bias.data.ndim != 1 or bias.shape[0] != weight.shape[0]:
        raise ShapeError(f"conv2d bias must be ({weight.shape[0]},), "
                         f"got {bias.shape}")
    if input.shape[1] < 3 or input.shape[2] < 3:
        raise ShapeError(f"conv2d input spatial dims must be >= 3x3, "
                         f"got {input.shape[1]}x{input.shape[2]}")


def conv2d(input: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, pad: int = 1) -> Tensor:
    """Same-size 3x3 convolution with zero padding.

    Forward gathers the nine shifted views of the zero-padded input into a
    column tensor and contracts it with the weight (one GEMM); backward
    scatters the column gradient back through the same nine views.
    """
    _check_conv_shapes(input, weight, bias, stride, pad)
    c_in, h, w = input.shape
    c_out = weight.shape[0]

    padded = np.zeros((c_in, h + 2, w + 2), dtype=input.dtype)
    padded[:, 1:h + 1, 1:w + 1] = input.data
    cols = np.empty((c_in, 3, 3, h, w), dtype=input.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = padded[:, ki:ki + h, kj:kj + w]

    wt = weight.data.astype(input.dtype, copy=False)
    out_data = np.tensordot(wt, cols, axes=([1, 2, 3], [0, 1, 2]))
    out_data += bias.data.astype(input.dtype, copy=False)[:, None, None]

    def backward(g):
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([1, 2], [3, 4]))
            weight._accumulate(gw.astype(weight.dtype, copy=False))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2)).astype(bias.dtype, copy=False))
        if input.requires_grad:
            gcols = np.tensordot(wt, g, axes=([0], [0]))  # (C_in,3,3,H,W)
            gpad = np.zeros((c_in, h + 2, w + 2), dtype=input.dtype)
            for ki in range(3):
                for kj in range(3):
                    gpad[:, ki:ki + h, kj:kj + w] += gcols[:, ki, kj]
            input._accumulate(gpad[:, 1:h + 1, 1:w + 1])

    return Tensor._result(out_data, (input, weight, bias), backward)


# ----------------------------------------------------------------------
# optimizer


class MissingGradientError(RuntimeError):
    """A learnable parameter reached sgd_step without a gradient."""


def sgd_step(params: Iterable[Tensor], velocities: Sequence[np.ndarray],
             lr: float, momentum: float) -> None:
    """In-place SGD with momentum: v <- m*v + g; p <- p - lr*v; grads cleared."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradientError(
                f"parameter {i} has no gradient; run backward() first")
        v = velocities[i]
        v *= momentum
        v += p.grad
        p.data -= lr * v
        p.zero_grad()


# ----------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray,
               h: float = 1e-4) -> float:
    """Max relative error between the autodiff gradient of scalar f and
    central finite differences, over all coordinates of x.

    Runs in float64 regardless of the input dtype; gradient checks need
    the headroom.
    """
    x = np.asarray(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = xt.grad.copy()

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x.copy())).item()
        flat[i] = orig - h
        fm = f(Tensor(x.copy())).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if not np.any(np.abs(analytic) + np.abs(numeric) > 0):
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {context}")
