"""
Feature extractors and the five classifier variants built on them.

CNN and ConvLSTM extractors both map a (32, 9, 19) spectrogram sample to a
feature map of 12 locations (a 4x3 grid) by D features. Base models classify
the flattened map; bilinear models pool the per-location outer products of two
maps, normalize (signed square root, then L2) and classify the MxN vector.

Parameters live in a flat ``{param_id: ndarray}`` store owned by ``SeizureNet``;
extractors read from whatever store they are handed so the optimizer can swap
arrays without touching the layers.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.db import models

from . import numcore
from .exceptions import CheckpointError, ConfigError, StructuralError
from .numcore import FLOAT, LayerParams

logger = logging.getLogger(__name__)

SAMPLE_SHAPE = (32, 9, 19)
GRID = (4, 3)
LOCATIONS = GRID[0] * GRID[1]
CNN_POOLS = ((2, 1), (2, 3), (2, 1))


class ModelKind(models.TextChoices):
    CNN = 'cnn', 'CNN'
    RNN = 'rnn', 'RNN'
    BCNN = 'bcnn', 'B-CNN'
    BRNN = 'brnn', 'B-RNN'
    HYBRID = 'hybrid', 'Hybrid'

    @property
    def is_bilinear(self) -> bool:
        return self in (ModelKind.BCNN, ModelKind.BRNN, ModelKind.HYBRID)

    @property
    def streams(self) -> tuple:
        """(stream name, extractor family) pairs in bilinear order A, B."""
        return {
            ModelKind.CNN: (('cnn', 'cnn'),),
            ModelKind.RNN: (('rnn', 'rnn'),),
            ModelKind.BCNN: (('cnn_a', 'cnn'), ('cnn_b', 'cnn')),
            ModelKind.BRNN: (('rnn_a', 'rnn'), ('rnn_b', 'rnn')),
            ModelKind.HYBRID: (('cnn', 'cnn'), ('rnn', 'rnn')),
        }[self]

    @property
    def base_kinds(self) -> tuple:
        """Base kinds whose pre-trained extractors feed this kind."""
        families = []
        for _, family in self.streams:
            if family not in families:
                families.append(family)
        return tuple(ModelKind(family) for family in families)


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths; the last width of each family is its feature dim D."""
    cnn_filters: tuple = (16, 32, 64)
    lstm_hidden: tuple = (32, 64)
    kernel_size: int = 3

    def __post_init__(self):
        if len(self.cnn_filters) != len(CNN_POOLS):
            raise ConfigError(
                f'cnn_filters needs {len(CNN_POOLS)} widths, got {len(self.cnn_filters)}',
                ['model.cnn_filters'],
            )
        if len(self.lstm_hidden) != 2:
            raise ConfigError(f'lstm_hidden needs 2 widths, got {len(self.lstm_hidden)}', ['model.lstm_hidden'])
        if any(int(w) < 1 for w in (*self.cnn_filters, *self.lstm_hidden)):
            raise ConfigError('layer widths must be positive', ['model.cnn_filters', 'model.lstm_hidden'])
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError('kernel_size must be a positive odd integer', ['model.kernel_size'])

    def feature_dim(self, family: str) -> int:
        return int(self.cnn_filters[-1] if family == 'cnn' else self.lstm_hidden[-1])

    def as_dict(self) -> dict:
        return {
            'cnn_filters': [int(w) for w in self.cnn_filters],
            'lstm_hidden': [int(w) for w in self.lstm_hidden],
            'kernel_size': int(self.kernel_size),
        }


def check_sample_shape(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim not in (3, 4) or x.shape[-3:] != SAMPLE_SHAPE:
        raise StructuralError(f'Expected samples shaped {SAMPLE_SHAPE}, got {x.shape}')
    return x


class CnnExtractor:
    """Three [conv 3x3 same, relu, max-pool] blocks: 32x9 -> 16x9 -> 8x3 -> 4x3."""
    family = 'cnn'

    def __init__(self, prefix: str, filters=(16, 32, 64), kernel_size: int = 3):
        self.prefix = prefix
        self.filters = tuple(int(f) for f in filters)
        self.kernel_size = kernel_size
        height, width = SAMPLE_SHAPE[:2]
        for ph, pw in CNN_POOLS:
            height, width = height // ph, width // pw
        if (height, width) != GRID:
            raise ConfigError(f'CNN pool schedule yields {height}x{width}, expected {GRID[0]}x{GRID[1]}')

    @property
    def feature_dim(self) -> int:
        return self.filters[-1]

    def layer_ids(self) -> list:
        return [f'{self.prefix}.block{i + 1}.conv' for i in range(len(self.filters))]

    def param_shapes(self) -> dict:
        shapes = {}
        in_channels = SAMPLE_SHAPE[2]
        k = self.kernel_size
        for layer_id, out_channels in zip(self.layer_ids(), self.filters):
            shapes[f'{layer_id}.weights'] = (k, k, in_channels, out_channels)
            shapes[f'{layer_id}.bias'] = (out_channels,)
            in_channels = out_channels
        return shapes

    def forward(self, params: dict, x):
        x = check_sample_shape(x)
        single = x.ndim == 3
        h = x[np.newaxis] if single else x
        cache = []
        for layer_id, pool in zip(self.layer_ids(), CNN_POOLS):
            layer = LayerParams.from_store(params, layer_id)
            z = numcore.conv2d(h, layer, padding='same')
            a = numcore.activation(z, 'relu')
            pooled, argmax = numcore.max_pool2d(a, pool, pool)
            cache.append((h, z, argmax))
            h = pooled
        features = h.reshape(h.shape[0], LOCATIONS, self.feature_dim)
        return (features[0] if single else features), (single, cache)

    def backward(self, params: dict, cache, d_features):
        single, layers = cache
        g = np.asarray(d_features)
        if single:
            g = g[np.newaxis]
        g = g.reshape(g.shape[0], GRID[0], GRID[1], self.feature_dim)
        grads = {}
        for layer_id, pool, (h, z, argmax) in reversed(list(zip(self.layer_ids(), CNN_POOLS, layers))):
            layer = LayerParams.from_store(params, layer_id)
            g = numcore.max_pool2d_backward(g, argmax, z.shape, pool, pool)
            g = numcore.activation_backward(z, g, 'relu')
            bundle = numcore.conv2d_backward(h, layer, g, padding='same')
            grads.update(bundle.params)
            g = bundle.input
        return grads, (g[0] if single else g)

    def extract(self, params: dict, sample) -> np.ndarray:
        return self.forward(params, sample)[0]


@dataclass
class CellCache:
    xh: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray
    layer: LayerParams


@dataclass
class CellGrads:
    params: dict
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray


def convlstm_cell_forward(x, h, c, params: LayerParams):
    """
    One ConvLSTM step. Gate kernels act on the channel concatenation [x, h] and
    emit 4*Ch channels in the order input, forget, cell, output.

    Args:
        x: Input frame [..., H, W, Cin]
        h: Hidden state [..., H, W, Ch]
        c: Cell state, same shape as ``h``
        params: Gate kernel [k, k, Cin + Ch, 4*Ch] and bias [4*Ch]

    Returns:
        (h', c', CellCache for ``convlstm_cell_backward``)
    """
    x, h, c = np.asarray(x), np.asarray(h), np.asarray(c)
    if x.shape[:-1] != h.shape[:-1] or h.shape != c.shape:
        raise StructuralError(f'ConvLSTM shapes disagree: x {x.shape}, h {h.shape}, c {c.shape}')
    hidden = h.shape[-1]
    if params.weights.shape[-1] != 4 * hidden:
        raise StructuralError(
            f'{params.param_id}: gate kernel emits {params.weights.shape[-1]} channels, expected {4 * hidden}'
        )
    xh = np.concatenate([x, h], axis=-1)
    z = numcore.conv2d(xh, params, padding='same')
    zi, zf, zg, zo = np.split(z, 4, axis=-1)
    i = numcore.activation(zi, 'sigmoid')
    f = numcore.activation(zf, 'sigmoid')
    g = numcore.activation(zg, 'tanh')
    o = numcore.activation(zo, 'sigmoid')
    c_next = f * c + i * g
    tanh_c = np.tanh(c_next)
    h_next = o * tanh_c
    return h_next, c_next, CellCache(xh, c, i, f, g, o, tanh_c, params)


def convlstm_cell(x, h, c, params: LayerParams):
    h_next, c_next, _ = convlstm_cell_forward(x, h, c, params)
    return h_next, c_next


def convlstm_cell_backward(cache: CellCache, d_h, d_c) -> CellGrads:
    """Backward of one step given gradients w.r.t. (h', c')."""
    d_o = d_h * cache.tanh_c
    d_c_total = d_c + d_h * cache.o * (1 - cache.tanh_c * cache.tanh_c)
    d_i = d_c_total * cache.g
    d_g = d_c_total * cache.i
    d_f = d_c_total * cache.c
    d_z = np.concatenate([
        d_i * cache.i * (1 - cache.i),
        d_f * cache.f * (1 - cache.f),
        d_g * (1 - cache.g * cache.g),
        d_o * cache.o * (1 - cache.o),
    ], axis=-1)
    bundle = numcore.conv2d_backward(cache.xh, cache.layer, d_z, padding='same')
    in_channels = cache.xh.shape[-1] - cache.c.shape[-1]
    return CellGrads(
        params=bundle.params,
        x=bundle.input[..., :in_channels],
        h=bundle.input[..., in_channels:],
        c=d_c_total * cache.f,
    )


class ConvLstmExtractor:
    """
    Two stacked ConvLSTM layers over the 9 STFT frames, each frame a 32x19
    one-channel image. The last hidden state of the top layer is max-pooled to
    the 4x3 grid.
    """
    family = 'rnn'

    def __init__(self, prefix: str, hidden=(32, 64), kernel_size: int = 3):
        self.prefix = prefix
        self.hidden = tuple(int(h) for h in hidden)
        self.kernel_size = kernel_size
        height, width = SAMPLE_SHAPE[0], SAMPLE_SHAPE[2]
        self.pool_stride = (height // GRID[0], width // GRID[1])
        self.pool_window = (height - (GRID[0] - 1) * self.pool_stride[0],
                            width - (GRID[1] - 1) * self.pool_stride[1])

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]

    def layer_ids(self) -> list:
        return [f'{self.prefix}.layer{i + 1}.gates' for i in range(len(self.hidden))]

    def param_shapes(self) -> dict:
        shapes = {}
        in_channels = 1
        k = self.kernel_size
        for layer_id, hidden in zip(self.layer_ids(), self.hidden):
            shapes[f'{layer_id}.weights'] = (k, k, in_channels + hidden, 4 * hidden)
            shapes[f'{layer_id}.bias'] = (4 * hidden,)
            in_channels = hidden
        return shapes

    def forward(self, params: dict, x):
        x = check_sample_shape(x)
        single = x.ndim == 3
        batch = x[np.newaxis] if single else x
        # [B, 32, 9, 19] -> 9 frames of [B, 32, 19, 1]
        sequence = [batch[:, :, t, :, np.newaxis] for t in range(batch.shape[2])]
        caches = []
        for layer_id, hidden in zip(self.layer_ids(), self.hidden):
            layer = LayerParams.from_store(params, layer_id)
            state_shape = sequence[0].shape[:-1] + (hidden,)
            h = np.zeros(state_shape, dtype=np.result_type(batch, layer.weights))
            c = np.zeros_like(h)
            outputs, steps = [], []
            for frame in sequence:
                h, c, step = convlstm_cell_forward(frame, h, c, layer)
                outputs.append(h)
                steps.append(step)
            caches.append(steps)
            sequence = outputs
        final = sequence[-1]
        pooled, argmax = numcore.max_pool2d(final, self.pool_window, self.pool_stride)
        features = pooled.reshape(pooled.shape[0], LOCATIONS, self.feature_dim)
        return (features[0] if single else features), (single, caches, argmax, final.shape)

    def backward(self, params: dict, cache, d_features):
        single, caches, argmax, final_shape = cache
        g = np.asarray(d_features)
        if single:
            g = g[np.newaxis]
        g = g.reshape(g.shape[0], GRID[0], GRID[1], self.feature_dim)
        d_final = numcore.max_pool2d_backward(g, argmax, final_shape, self.pool_window, self.pool_stride)

        steps_total = len(caches[0])
        d_outputs = [None] * steps_total
        d_outputs[-1] = d_final
        grads = {}
        for steps in reversed(caches):
            d_h_next = np.zeros_like(steps[0].c)
            d_c_next = np.zeros_like(steps[0].c)
            d_inputs = [None] * steps_total
            for t in reversed(range(steps_total)):
                d_h = d_h_next if d_outputs[t] is None else d_h_next + d_outputs[t]
                cell = convlstm_cell_backward(steps[t], d_h, d_c_next)
                for key, value in cell.params.items():
                    grads[key] = value if key not in grads else grads[key] + value
                d_inputs[t] = cell.x
                d_h_next, d_c_next = cell.h, cell.c
            d_outputs = d_inputs
        # frames back to [B, 32, 9, 19]
        d_x = np.stack([frame[..., 0] for frame in d_outputs], axis=2)
        return grads, (d_x[0] if single else d_x)

    def extract(self, params: dict, sample) -> np.ndarray:
        return self.forward(params, sample)[0]


def build_extractor(family: str, prefix: str, config: ModelConfig):
    if family == 'cnn':
        return CnnExtractor(prefix, config.cnn_filters, config.kernel_size)
    if family == 'rnn':
        return ConvLstmExtractor(prefix, config.lstm_hidden, config.kernel_size)
    raise ConfigError(f'Unknown extractor family {family!r}')


def bilinear_pool(a, b) -> np.ndarray:
    """
    Sum over locations of the outer products a_o b_o^T, flattened row-major.

    Args:
        a: Feature map [..., O, M]
        b: Feature map [..., O, N] with the same locations

    Returns:
        Bilinear vector [..., M*N]
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise StructuralError(f'Location counts differ: {a.shape} vs {b.shape}')
    phi = np.einsum('...om,...on->...mn', a, b)
    return phi.reshape(phi.shape[:-2] + (-1,))


def bilinear_pool_backward(a, b, upstream):
    a, b = np.asarray(a), np.asarray(b)
    m, n = a.shape[-1], b.shape[-1]
    upstream = np.asarray(upstream)
    if a.shape[:-1] != b.shape[:-1] or upstream.shape != a.shape[:-2] + (m * n,):
        raise StructuralError(
            f'bilinear backward shapes disagree: a {a.shape}, b {b.shape}, upstream {upstream.shape}'
        )
    u = upstream.reshape(upstream.shape[:-1] + (m, n))
    d_a = np.einsum('...mn,...on->...om', u, b)
    d_b = np.einsum('...mn,...om->...on', u, a)
    return d_a, d_b


def he_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(FLOAT)


class SeizureNet:
    """
    One of the five classifier variants with its parameter store.

    Args:
        kind: ModelKind or its value ('cnn', 'rnn', 'bcnn', 'brnn', 'hybrid')
        n_classes: Number of output classes, at least 2
        config: Layer widths and kernel size, defaults to the full-size model
        seed: Seed of the He-uniform initialization
    """

    def __init__(self, kind, n_classes: int, config: ModelConfig = None, seed: int = 0):
        self.kind = ModelKind(kind)
        if n_classes < 2:
            raise ConfigError(f'n_classes must be at least 2, got {n_classes}', ['schema'])
        self.n_classes = int(n_classes)
        self.config = config or ModelConfig()
        self.streams = {
            name: build_extractor(family, name, self.config) for name, family in self.kind.streams
        }
        dims = [extractor.feature_dim for extractor in self.streams.values()]
        self.head_inputs = dims[0] * dims[1] if self.kind.is_bilinear else LOCATIONS * dims[0]
        self.params = self.init_params(seed)

    def param_shapes(self) -> dict:
        shapes = {}
        for extractor in self.streams.values():
            shapes.update(extractor.param_shapes())
        shapes['head.weights'] = (self.head_inputs, self.n_classes)
        shapes['head.bias'] = (self.n_classes,)
        return shapes

    def init_params(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        for param_id, shape in self.param_shapes().items():
            if param_id.endswith('.bias'):
                params[param_id] = np.zeros(shape, dtype=FLOAT)
            else:
                params[param_id] = he_uniform(rng, shape)
        return params

    @property
    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    def stream_ids(self, stream: str) -> list:
        return list(self.streams[stream].param_shapes())

    def extractor_ids(self) -> list:
        return [param_id for stream in self.streams for param_id in self.stream_ids(stream)]

    def head_ids(self) -> list:
        return ['head.weights', 'head.bias']

    def features(self, x, params: dict = None) -> dict:
        """Feature maps of every stream (no cache), for frozen-extractor training."""
        params = self.params if params is None else params
        return {name: extractor.extract(params, x) for name, extractor in self.streams.items()}

    def head_forward(self, features: dict, params: dict = None):
        params = self.params if params is None else params
        head = LayerParams.from_store(params, 'head')
        names = list(self.streams)
        if not self.kind.is_bilinear:
            a = features[names[0]]
            flat = a.reshape(a.shape[0], -1)
            return numcore.dense(flat, head), {'flat': flat, 'shape': a.shape}
        a, b = features[names[0]], features[names[1]]
        phi = bilinear_pool(a, b)
        rooted = numcore.signed_sqrt(phi)
        normed = numcore.l2_normalize(rooted)
        logits = numcore.dense(normed, head)
        return logits, {'a': a, 'b': b, 'phi': phi, 'rooted': rooted, 'normed': normed}

    def head_backward(self, cache: dict, d_logits, params: dict = None):
        """Returns (head grads, {stream: d_features})."""
        params = self.params if params is None else params
        head = LayerParams.from_store(params, 'head')
        names = list(self.streams)
        if not self.kind.is_bilinear:
            bundle = numcore.dense_backward(cache['flat'], head, d_logits)
            return bundle.params, {names[0]: bundle.input.reshape(cache['shape'])}
        bundle = numcore.dense_backward(cache['normed'], head, d_logits)
        d_rooted = numcore.l2_normalize_backward(cache['rooted'], bundle.input)
        d_phi = numcore.signed_sqrt_backward(cache['phi'], d_rooted)
        d_a, d_b = bilinear_pool_backward(cache['a'], cache['b'], d_phi)
        return bundle.params, {names[0]: d_a, names[1]: d_b}

    def forward(self, x, params: dict = None):
        """
        Run every stream and the head.

        Args:
            x: One sample (32, 9, 19) or a batch [B, 32, 9, 19]
            params: Parameter store to use instead of ``self.params``

        Returns:
            (logits [B, K], cache for ``backward``)
        """
        params = self.params if params is None else params
        x = check_sample_shape(x)
        if x.ndim == 3:
            x = x[np.newaxis]
        if x.shape[0] == 0:
            raise StructuralError('Empty batch')
        features, stream_caches = {}, {}
        for name, extractor in self.streams.items():
            features[name], stream_caches[name] = extractor.forward(params, x)
        logits, head_cache = self.head_forward(features, params)
        return logits, {'streams': stream_caches, 'head': head_cache}

    def backward(self, cache: dict, d_logits, params: dict = None, extractors: bool = True) -> dict:
        """
        Gradients of the loss w.r.t. the parameters.

        Args:
            cache: Cache returned by ``forward``
            d_logits: Loss gradient w.r.t. the logits [B, K]
            params: Parameter store used in ``forward``
            extractors: False restricts the result to the head parameters

        Returns:
            Gradient per parameter id
        """
        params = self.params if params is None else params
        grads, d_features = self.head_backward(cache['head'], d_logits, params)
        if extractors:
            for name, extractor in self.streams.items():
                stream_grads, _ = extractor.backward(params, cache['streams'][name], d_features[name])
                grads.update(stream_grads)
        return grads

    def logits(self, x, params: dict = None, batch_size: int = 256) -> np.ndarray:
        x = check_sample_shape(x)
        if x.ndim == 3:
            x = x[np.newaxis]
        chunks = [self.forward(x[start:start + batch_size], params)[0]
                  for start in range(0, x.shape[0], batch_size)]
        return np.concatenate(chunks, axis=0)

    def predict(self, x, params: dict = None, batch_size: int = 256) -> np.ndarray:
        return self.logits(x, params, batch_size).argmax(axis=1)

    def check_contract(self, sample) -> None:
        """Every stream must emit 12 locations by its configured feature dim."""
        sample = check_sample_shape(sample)
        for name, extractor in self.streams.items():
            shape = extractor.extract(self.params, sample).shape[-2:]
            if shape != (LOCATIONS, extractor.feature_dim):
                raise ConfigError(
                    f'{name} extractor emits {shape}, expected ({LOCATIONS}, {extractor.feature_dim})',
                    ['model'],
                )

    def stream_state(self, stream: str) -> dict:
        return {param_id: self.params[param_id] for param_id in self.stream_ids(stream)}

    def load_stream(self, state: dict, stream: str, source_stream: str = None) -> None:
        """
        Copy pre-trained extractor weights into ``stream``. ``state`` is keyed by
        the source model's ids; ``source_stream`` is its stream prefix.
        """
        if stream not in self.streams:
            raise CheckpointError(f'{self.kind.label} has no stream {stream!r}', param_id=stream)
        source_stream = source_stream or stream
        shapes = self.streams[stream].param_shapes()
        loaded = {}
        for param_id, shape in shapes.items():
            source_id = source_stream + param_id[len(stream):]
            if source_id not in state:
                raise CheckpointError(f'Checkpoint lacks parameter {source_id}', param_id=source_id)
            value = np.asarray(state[source_id], dtype=FLOAT)
            if value.shape != tuple(shape):
                raise CheckpointError(
                    f'Parameter {source_id} has shape {value.shape}, expected {tuple(shape)}',
                    param_id=source_id,
                )
            loaded[param_id] = value.copy()
        self.params.update(loaded)
        logger.info(f'Loaded {len(loaded)} parameters into stream {stream} of {self.kind.label}')
