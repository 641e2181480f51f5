"""Dense-array building blocks with explicit forward/backward pairs.

Arrays are the tensor carrier: row-major, float32 in production paths
(test oracles may pass float64; every op preserves the input dtype).
Image batches are NHWC, conv kernels are [Kh, Kw, Cin, Cout].

There is no tape. The model graph is small and fixed, so each op exposes
its exact vector-Jacobian product as a sibling function.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError, ValidationError

_PADDINGS = ("valid", "same")


def ensure_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")


def _pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Total (before, after) zero padding along one spatial axis."""
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d_output_shape(
    input_shape: tuple[int, ...], kernel_shape: tuple[int, ...], stride: int, padding: str
) -> tuple[int, int, int, int]:
    n, h, w, cin = input_shape
    kh, kw, kcin, cout = kernel_shape
    if kcin != cin:
        raise ShapeError(
            f"channel axis mismatch: input Cin={cin}, kernels Cin={kcin}"
        )
    pt, pb = _pad_amounts(h, kh, stride, padding)
    pl, pr = _pad_amounts(w, kw, stride, padding)
    ho = (h + pt + pb - kh) // stride + 1
    wo = (w + pl + pr - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    return n, ho, wo, cout


def _check_conv_args(input: np.ndarray, kernels: np.ndarray, stride: int, padding: str):
    if input.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4 (NHWC), got rank {input.ndim}")
    if kernels.ndim != 4:
        raise ShapeError(
            f"conv2d kernels must be rank 4 (KhKwCinCout), got rank {kernels.ndim}"
        )
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if padding not in _PADDINGS:
        raise ValidationError(f"padding must be one of {_PADDINGS}, got {padding!r}")
    ensure_finite(input, "conv2d input")
    ensure_finite(kernels, "conv2d kernels")


def _conv_windows(input: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    """Strided view of all receptive fields, shaped [N, Ho, Wo, Kh, Kw, Cin]."""
    n, h, w, cin = input.shape
    pt, pb = _pad_amounts(h, kh, stride, padding)
    pl, pr = _pad_amounts(w, kw, stride, padding)
    if pt or pb or pl or pr:
        xp = np.pad(input, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        xp = input
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # [N, Ho, Wo, Cin, Kh, Kw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)), xp.shape, (pt, pl)


def conv2d(input: np.ndarray, kernels: np.ndarray, stride: int = 1, padding: str = "same") -> np.ndarray:
    """Cross-correlation of an NHWC batch with [Kh, Kw, Cin, Cout] kernels."""
    _check_conv_args(input, kernels, stride, padding)
    n, ho, wo, cout = conv2d_output_shape(input.shape, kernels.shape, stride, padding)
    kh, kw, cin, _ = kernels.shape
    win, _, _ = _conv_windows(input, kh, kw, stride, padding)
    cols = win.reshape(n * ho * wo, kh * kw * cin)
    out = cols @ kernels.reshape(kh * kw * cin, cout)
    return out.reshape(n, ho, wo, cout)


def conv2d_backward(
    input: np.ndarray,
    kernels: np.ndarray,
    upstream_grad: np.ndarray,
    stride: int = 1,
    padding: str = "same",
) -> tuple[np.ndarray, np.ndarray]:
    """Exact VJPs of conv2d: (grad wrt input, grad wrt kernels)."""
    _check_conv_args(input, kernels, stride, padding)
    out_shape = conv2d_output_shape(input.shape, kernels.shape, stride, padding)
    if upstream_grad.shape != out_shape:
        raise ShapeError(
            f"upstream_grad shape {upstream_grad.shape} does not match conv2d "
            f"output shape {out_shape}"
        )
    ensure_finite(upstream_grad, "conv2d upstream_grad")
    n, ho, wo, cout = out_shape
    kh, kw, cin, _ = kernels.shape

    win, padded_shape, (pt, pl) = _conv_windows(input, kh, kw, stride, padding)
    cols = win.reshape(n * ho * wo, kh * kw * cin)
    up2 = upstream_grad.reshape(n * ho * wo, cout)

    grad_kernels = (cols.T @ up2).reshape(kh, kw, cin, cout)

    gcols = (up2 @ kernels.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    gx_pad = np.zeros(padded_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
    h, w = input.shape[1], input.shape[2]
    grad_input = gx_pad[:, pt : pt + h, pl : pl + w, :]
    return np.ascontiguousarray(grad_input), grad_kernels


def relu(input: np.ndarray) -> np.ndarray:
    ensure_finite(input, "relu input")
    return np.maximum(input, 0)


def relu_backward(input: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    if input.shape != upstream_grad.shape:
        raise ShapeError(
            f"relu upstream_grad shape {upstream_grad.shape} != input shape {input.shape}"
        )
    return upstream_grad * (input > 0)


def _pool_windows(input: np.ndarray):
    """[N, H/2, W/2, 4, C] view; window axis is row-major within each 2x2 block."""
    if input.ndim != 4:
        raise ShapeError(f"maxpool2 input must be rank 4 (NHWC), got rank {input.ndim}")
    n, h, w, c = input.shape
    if h % 2 or w % 2:
        axis = "H" if h % 2 else "W"
        raise ShapeError(f"maxpool2 requires even spatial dims, axis {axis} is odd ({h}x{w})")
    blocks = input.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(n, h // 2, w // 2, 4, c)


def maxpool2(input: np.ndarray) -> np.ndarray:
    """2x2 non-overlapping max pooling."""
    ensure_finite(input, "maxpool2 input")
    return _pool_windows(input).max(axis=3)


def maxpool2_backward(input: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    """Gradient routed to each window's argmax; ties go to the first element
    in row-major scan order so results are reproducible."""
    ensure_finite(input, "maxpool2 input")
    win = _pool_windows(input)
    n, ho, wo, _, c = win.shape
    if upstream_grad.shape != (n, ho, wo, c):
        raise ShapeError(
            f"maxpool2 upstream_grad shape {upstream_grad.shape} != pooled shape {(n, ho, wo, c)}"
        )
    amax = win.argmax(axis=3)  # first max in window scan order
    grad_win = np.zeros_like(win)
    np.put_along_axis(grad_win, amax[:, :, :, None, :], upstream_grad[:, :, :, None, :], axis=3)
    grad = grad_win.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(grad.reshape(input.shape))


def dense(input: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map [N, D] @ [D, K] + [K]."""
    if input.ndim != 2 or weights.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"dense expects ranks (2, 2, 1), got ({input.ndim}, {weights.ndim}, {bias.ndim})"
        )
    if input.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"feature axis mismatch: input D={input.shape[1]}, weights D={weights.shape[0]}"
        )
    if weights.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"output axis mismatch: weights K={weights.shape[1]}, bias K={bias.shape[0]}"
        )
    ensure_finite(input, "dense input")
    ensure_finite(weights, "dense weights")
    ensure_finite(bias, "dense bias")
    return input @ weights + bias


def dense_backward(
    input: np.ndarray, weights: np.ndarray, upstream_grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_input, grad_weights, grad_bias)."""
    if upstream_grad.shape != (input.shape[0], weights.shape[1]):
        raise ShapeError(
            f"dense upstream_grad shape {upstream_grad.shape} != "
            f"{(input.shape[0], weights.shape[1])}"
        )
    grad_input = upstream_grad @ weights.T
    grad_weights = input.T @ upstream_grad
    grad_bias = upstream_grad.sum(axis=0)
    return grad_input, grad_weights, grad_bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max-subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, target_class: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the target classes.

    Returns (loss, grad wrt logits); grad is (softmax - onehot) / N.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be rank 2 [N, K], got rank {logits.ndim}")
    ensure_finite(logits, "logits")
    targets = np.asarray(target_class)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"target_class shape {targets.shape} != batch shape ({logits.shape[0]},)"
        )
    k = logits.shape[1]
    if targets.min() < 0 or targets.max() >= k:
        bad = int(targets[(targets < 0) | (targets >= k)][0])
        raise ValidationError(f"target class {bad} out of range [0, {k})")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), targets]))
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)
