"""
Dense layer primitives with explicit forward and backward passes.

Images travel in NHWC layout ([batch, height, width, channels]) and vectors as
[batch, features]; every op also accepts a single unbatched sample. Ops keep the
dtype of their inputs, which is float32 throughout the pipeline.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .exceptions import NumericError, StructuralError

FLOAT = np.float32
EPSILON = 1e-8
SQRT_CLAMP = 1e-6
ACTIVATIONS = ('relu', 'sigmoid', 'tanh')


@dataclass(frozen=True)
class LayerParams:
    """Weights and bias of one layer, addressed by a model-unique id."""
    weights: np.ndarray
    bias: np.ndarray
    param_id: str

    @property
    def weights_id(self) -> str:
        return f'{self.param_id}.weights'

    @property
    def bias_id(self) -> str:
        return f'{self.param_id}.bias'

    @classmethod
    def from_store(cls, params: dict, param_id: str) -> 'LayerParams':
        return cls(params[f'{param_id}.weights'], params[f'{param_id}.bias'], param_id)


@dataclass
class GradBundle:
    """Gradients keyed by parameter id, plus the gradient w.r.t. the input."""
    params: dict = field(default_factory=dict)
    input: Optional[np.ndarray] = None


def _batched(x, ndim: int, name: str = 'input'):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[np.newaxis], True
    if x.ndim != ndim:
        raise StructuralError(f'{name} must have {ndim - 1} or {ndim} dimensions, got shape {x.shape}')
    return x, False


def _pair(value) -> tuple:
    if isinstance(value, int):
        return value, value
    return int(value[0]), int(value[1])


def _same_padding(size: int, kernel: int, stride: int) -> tuple:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _pad_input(x: np.ndarray, kernel: tuple, stride: tuple, padding: str):
    if padding == 'valid':
        pads = ((0, 0), (0, 0))
    elif padding == 'same':
        pads = (_same_padding(x.shape[1], kernel[0], stride[0]),
                _same_padding(x.shape[2], kernel[1], stride[1]))
    else:
        raise StructuralError(f'Unknown padding mode: {padding!r}')
    if pads == ((0, 0), (0, 0)):
        return x, pads
    return np.pad(x, ((0, 0), pads[0], pads[1], (0, 0))), pads


def _windows(x: np.ndarray, kernel: tuple, stride: tuple) -> np.ndarray:
    """Strided view of shape [N, H', W', C, kh, kw]."""
    view = sliding_window_view(x, kernel, axis=(1, 2))
    return view[:, ::stride[0], ::stride[1]]


def conv2d(x, params: LayerParams, stride=(1, 1), padding: str = 'same') -> np.ndarray:
    """
    2-D cross-correlation (no kernel flip) with per-channel bias.

    Kernels are laid out [kh, kw, Cin, Cout].
    """
    x, single = _batched(x, 4)
    stride = _pair(stride)
    kh, kw, cin, cout = params.weights.shape
    if x.shape[3] != cin:
        raise StructuralError(
            f'{params.param_id}: input has {x.shape[3]} channels, kernel expects {cin}'
        )
    if params.bias.shape != (cout,):
        raise StructuralError(f'{params.param_id}: bias shape {params.bias.shape} != ({cout},)')
    padded, _ = _pad_input(x, (kh, kw), stride, padding)
    if kh > padded.shape[1] or kw > padded.shape[2]:
        raise StructuralError(
            f'{params.param_id}: kernel {kh}x{kw} larger than padded input {padded.shape[1:3]}'
        )
    cols = _windows(padded, (kh, kw), stride)
    out = np.tensordot(cols, params.weights, axes=([3, 4, 5], [2, 0, 1])) + params.bias
    return out[0] if single else out


def conv2d_backward(x, params: LayerParams, upstream, stride=(1, 1), padding: str = 'same') -> GradBundle:
    x, single = _batched(x, 4)
    upstream = np.asarray(upstream)
    if single:
        upstream = upstream[np.newaxis]
    stride = _pair(stride)
    kh, kw, cin, cout = params.weights.shape
    padded, pads = _pad_input(x, (kh, kw), stride, padding)
    cols = _windows(padded, (kh, kw), stride)
    expected = cols.shape[:3] + (cout,)
    if upstream.shape != expected:
        raise StructuralError(
            f'{params.param_id}: upstream shape {upstream.shape} != conv output {expected}'
        )

    d_weights = np.tensordot(cols, upstream, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
    d_bias = upstream.sum(axis=(0, 1, 2))

    out_h, out_w = upstream.shape[1:3]
    sh, sw = stride
    d_padded = np.zeros(padded.shape, dtype=np.result_type(x, params.weights, upstream))
    for i in range(kh):
        for j in range(kw):
            d_padded[:, i:i + sh * (out_h - 1) + 1:sh, j:j + sw * (out_w - 1) + 1:sw, :] += (
                upstream @ params.weights[i, j].T
            )
    top, left = pads[0][0], pads[1][0]
    d_input = d_padded[:, top:top + x.shape[1], left:left + x.shape[2], :]

    return GradBundle(
        params={params.weights_id: d_weights, params.bias_id: d_bias},
        input=d_input[0] if single else d_input,
    )


def max_pool2d(x, window, stride=None):
    """
    Max pooling; returns the pooled tensor and the in-window argmax indices.

    Ties resolve to the lowest linear index inside the window, which is also the
    lowest input index.
    """
    x, single = _batched(x, 4)
    window = _pair(window)
    stride = _pair(stride if stride is not None else window)
    if window[0] > x.shape[1] or window[1] > x.shape[2]:
        raise StructuralError(f'Pool window {window} larger than input {x.shape[1:3]}')
    cols = _windows(x, window, stride)
    flat = cols.reshape(cols.shape[:4] + (window[0] * window[1],))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., np.newaxis], axis=-1)[..., 0]
    if single:
        return out[0], argmax[0]
    return out, argmax


def max_pool2d_backward(upstream, argmax, input_shape, window, stride=None) -> np.ndarray:
    """Route each upstream value to the input position that won its window."""
    upstream = np.asarray(upstream)
    argmax = np.asarray(argmax)
    single = len(input_shape) == 3
    if single:
        upstream, argmax = upstream[np.newaxis], argmax[np.newaxis]
        input_shape = (1,) + tuple(input_shape)
    if upstream.shape != argmax.shape:
        raise StructuralError(f'upstream shape {upstream.shape} != pooled shape {argmax.shape}')
    window = _pair(window)
    stride = _pair(stride if stride is not None else window)
    n, out_h, out_w, channels = upstream.shape
    rows = np.arange(out_h)[None, :, None, None] * stride[0] + argmax // window[1]
    cols = np.arange(out_w)[None, None, :, None] * stride[1] + argmax % window[1]
    batch = np.arange(n)[:, None, None, None]
    chan = np.arange(channels)[None, None, None, :]
    d_input = np.zeros(input_shape, dtype=upstream.dtype)
    np.add.at(d_input, (batch, rows, cols, chan), upstream)
    return d_input[0] if single else d_input


def dense(x, params: LayerParams) -> np.ndarray:
    """Affine map ``x @ W + b`` with W laid out [n_in, n_out]."""
    x, single = _batched(x, 2)
    if x.shape[1] != params.weights.shape[0]:
        raise StructuralError(
            f'{params.param_id}: input length {x.shape[1]} != weight rows {params.weights.shape[0]}'
        )
    out = x @ params.weights + params.bias
    return out[0] if single else out


def dense_backward(x, params: LayerParams, upstream) -> GradBundle:
    x, single = _batched(x, 2)
    upstream, _ = _batched(upstream, 2, 'upstream')
    if upstream.shape != (x.shape[0], params.weights.shape[1]):
        raise StructuralError(f'{params.param_id}: upstream shape {upstream.shape} does not match output')
    d_input = upstream @ params.weights.T
    return GradBundle(
        params={params.weights_id: x.T @ upstream, params.bias_id: upstream.sum(axis=0)},
        input=d_input[0] if single else d_input,
    )


def activation(x, kind: str) -> np.ndarray:
    x = np.asarray(x)
    if kind == 'relu':
        return np.maximum(x, 0)
    if kind == 'sigmoid':
        return special.expit(x)
    if kind == 'tanh':
        return np.tanh(x)
    raise StructuralError(f'Unknown activation {kind!r}; expected one of {ACTIVATIONS}')


def activation_backward(x, upstream, kind: str) -> np.ndarray:
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if kind == 'relu':
        return upstream * (x > 0)
    if kind == 'sigmoid':
        s = special.expit(x)
        return upstream * s * (1 - s)
    if kind == 'tanh':
        t = np.tanh(x)
        return upstream * (1 - t * t)
    raise StructuralError(f'Unknown activation {kind!r}; expected one of {ACTIVATIONS}')


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError('Non-finite logits')
    return special.softmax(logits, axis=-1)


def softmax_cross_entropy(logits, target: int, class_weight: float = 1.0):
    """Weighted cross-entropy of one sample; returns (loss, dlogits)."""
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise StructuralError(f'logits must be a vector of length >= 2, got shape {logits.shape}')
    if not 0 <= target < logits.shape[0]:
        raise StructuralError(f'target {target} out of range for {logits.shape[0]} classes')
    if class_weight <= 0:
        raise StructuralError(f'class_weight must be positive, got {class_weight}')
    loss, grad = batch_softmax_cross_entropy(
        logits[np.newaxis], np.array([target]), np.array([class_weight], dtype=logits.dtype)
    )
    return loss, grad[0]


def batch_softmax_cross_entropy(logits, targets, sample_weights):
    """
    Mean over the batch of per-sample weighted cross-entropy.

    Returns (loss, dlogits) where dlogits already carries the 1/batch factor.
    """
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError('Non-finite logits')
    targets = np.asarray(targets, dtype=np.int64)
    sample_weights = np.asarray(sample_weights, dtype=logits.dtype)
    batch = logits.shape[0]
    rows = np.arange(batch)
    log_probs = special.log_softmax(logits, axis=-1)
    loss = float(-(sample_weights * log_probs[rows, targets]).sum() / batch)
    grad = np.exp(log_probs)
    grad[rows, targets] -= 1
    grad *= (sample_weights / batch)[:, np.newaxis]
    return loss, grad.astype(logits.dtype, copy=False)


def signed_sqrt(x) -> np.ndarray:
    x = np.asarray(x)
    return np.sign(x) * np.sqrt(np.abs(x))


def signed_sqrt_backward(x, upstream) -> np.ndarray:
    # derivative 1/(2 sqrt|x|), held at its |x| = SQRT_CLAMP value near zero
    x = np.asarray(x)
    magnitude = np.maximum(np.abs(x), SQRT_CLAMP)
    return np.asarray(upstream) * (0.5 / np.sqrt(magnitude)).astype(x.dtype, copy=False)


def l2_normalize(v) -> np.ndarray:
    """Normalize along the last axis: v / (||v|| + eps)."""
    v = np.asarray(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / (norm + EPSILON)


def l2_normalize_backward(v, upstream) -> np.ndarray:
    v = np.asarray(v)
    upstream = np.asarray(upstream)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    denom = norm + EPSILON
    projection = (v * upstream).sum(axis=-1, keepdims=True)
    correction = np.divide(
        projection, norm * denom * denom, out=np.zeros_like(norm), where=norm > 0
    )
    return upstream / denom - v * correction
