"""Sequential embedding networks: description, forward pass, flat parameter view, PFQM files.

A :class:`Model` is an immutable chain of layers ending in an L2 normalization,
so every embedding it produces lies on the unit hypersphere. Only Dense and
Conv2d parameters (weights *and* biases) are prunable; they make up the flat
parameter vector over which masks and perturbations are defined.
"""

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    BadMagic,
    LengthMismatch,
    ManifestInvalid,
    ShapeMismatch,
    Truncated,
    VersionUnsupported,
    ZeroNorm,
)
from .tensor_core import BN_EPS, NORM_FLOOR, batchnorm_apply, conv_output_size, global_avg_pool

DENSE = "dense"
CONV2D = "conv2d"
RELU = "relu"
BATCHNORM = "batchnorm"
GLOBAL_AVG_POOL = "global_avg_pool"
FLATTEN = "flatten"
L2_NORMALIZE = "l2_normalize"
KINDS = (DENSE, CONV2D, RELU, BATCHNORM, GLOBAL_AVG_POOL, FLATTEN, L2_NORMALIZE)

MAGIC = b"PFQM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    pad: int = 0
    channels: int = 0
    eps: float = BN_EPS
    embedding_head: bool = False

    @property
    def prunable(self):
        return self.kind in (DENSE, CONV2D)

    def param_shapes(self):
        if self.kind == DENSE:
            return [(self.out_features, self.in_features), (self.out_features,)]
        if self.kind == CONV2D:
            k = self.kernel_size
            return [(self.out_channels, self.in_channels, k, k), (self.out_channels,)]
        if self.kind == BATCHNORM:
            return [(self.channels,)] * 4
        return []

    def to_json(self):
        out = {"kind": self.kind}
        if self.kind == DENSE:
            out.update(in_features=self.in_features, out_features=self.out_features,
                       embedding_head=self.embedding_head)
        elif self.kind == CONV2D:
            out.update(in_channels=self.in_channels, out_channels=self.out_channels,
                       kernel_size=self.kernel_size, stride=self.stride, pad=self.pad)
        elif self.kind == BATCHNORM:
            out.update(channels=self.channels, eps=self.eps)
        out["param_shapes"] = [list(s) for s in self.param_shapes()]
        return out


def dense_layer(in_features, out_features, embedding_head=False):
    return LayerSpec(DENSE, in_features=in_features, out_features=out_features,
                     embedding_head=embedding_head)


def conv2d_layer(in_channels, out_channels, kernel_size, stride=1, pad=0):
    return LayerSpec(CONV2D, in_channels=in_channels, out_channels=out_channels,
                     kernel_size=kernel_size, stride=stride, pad=pad)


def batchnorm_layer(channels, eps=BN_EPS):
    return LayerSpec(BATCHNORM, channels=channels, eps=eps)


def relu_layer():
    return LayerSpec(RELU)


def global_avg_pool_layer():
    return LayerSpec(GLOBAL_AVG_POOL)


def flatten_layer():
    return LayerSpec(FLATTEN)


def l2_normalize_layer():
    return LayerSpec(L2_NORMALIZE)


def infer_shapes(layers, input_shape):
    """Return the activation shape after every layer; raises ShapeMismatch on non-conforming chains."""
    shape = tuple(input_shape)
    shapes = []
    for i, spec in enumerate(layers):
        if spec.kind not in KINDS:
            raise ShapeMismatch(f"layer {i}: unknown kind {spec.kind!r}")
        if spec.kind == DENSE:
            if shape != (spec.in_features,):
                raise ShapeMismatch(f"layer {i}: dense expects ({spec.in_features},), got {shape}")
            shape = (spec.out_features,)
        elif spec.kind == CONV2D:
            if len(shape) != 3 or shape[0] != spec.in_channels:
                raise ShapeMismatch(f"layer {i}: conv2d expects ({spec.in_channels}, H, W), got {shape}")
            k, s, p = spec.kernel_size, spec.stride, spec.pad
            shape = (spec.out_channels, conv_output_size(shape[1], k, s, p),
                     conv_output_size(shape[2], k, s, p))
        elif spec.kind == BATCHNORM:
            if len(shape) not in (1, 3) or shape[0] != spec.channels:
                raise ShapeMismatch(f"layer {i}: batchnorm over {spec.channels} channels, got {shape}")
        elif spec.kind == GLOBAL_AVG_POOL:
            if len(shape) != 3:
                raise ShapeMismatch(f"layer {i}: global_avg_pool expects C x H x W, got {shape}")
            shape = (shape[0],)
        elif spec.kind == FLATTEN:
            shape = (int(np.prod(shape)),)
        elif spec.kind == L2_NORMALIZE:
            if len(shape) != 1:
                raise ShapeMismatch(f"layer {i}: l2_normalize expects a vector, got {shape}")
        shapes.append(shape)
    return shapes


def _workers():
    env = os.environ.get("PREFIQS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable sequential network. ``params[i]`` holds the tensors of ``layers[i]``."""

    layers: tuple
    params: tuple
    input_shape: tuple
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        params = tuple(tuple(np.asarray(t) for t in p) for p in self.params)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if not layers or layers[-1].kind != L2_NORMALIZE:
            raise ShapeMismatch("the last layer must be l2_normalize")
        if sum(s.kind == L2_NORMALIZE for s in layers) != 1:
            raise ShapeMismatch("exactly one l2_normalize layer is allowed")
        heads = [i for i, s in enumerate(layers) if s.embedding_head]
        if len(heads) != 1 or layers[heads[0]].kind != DENSE or heads[0] != len(layers) - 2:
            raise ShapeMismatch("exactly one dense embedding head must immediately precede l2_normalize")
        if len(params) != len(layers):
            raise ShapeMismatch("params must align with layers")
        for i, (spec, p) in enumerate(zip(layers, params)):
            expected = spec.param_shapes()
            if [t.shape for t in p] != expected:
                raise ShapeMismatch(f"layer {i}: param shapes {[t.shape for t in p]} != {expected}")
        object.__setattr__(self, "shapes", tuple(infer_shapes(layers, self.input_shape)))

    @property
    def d(self):
        return self.shapes[-1][0]

    @property
    def dtype(self):
        for p in self.params:
            if p:
                return p[0].dtype
        return np.dtype(np.float32)

    @property
    def n_prunable(self):
        return sum(t.size for s, p in zip(self.layers, self.params) if s.prunable for t in p)

    def with_params(self, params):
        return Model(self.layers, params, self.input_shape)

    def astype(self, dtype):
        return self.with_params([[t.astype(dtype) for t in p] for p in self.params])

    def bit_equal(self, other):
        """True when architecture and every parameter bit pattern match."""
        if self.layers != other.layers or self.input_shape != other.input_shape:
            return False
        for p, q in zip(self.params, other.params):
            for a, b in zip(p, q):
                if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True


def mlp_model(weights, input_dim=None, relu=True):
    """Build a Dense(/ReLU) chain from ``[(W, b), ...]``; the last pair is the embedding head."""
    layers, params = [], []
    for i, (W, b) in enumerate(weights):
        W = np.asarray(W, dtype=np.float32)
        b = np.asarray(b, dtype=np.float32)
        head = i == len(weights) - 1
        layers.append(dense_layer(W.shape[1], W.shape[0], embedding_head=head))
        params.append((W, b))
        if relu and not head:
            layers.append(relu_layer())
            params.append(())
    layers.append(l2_normalize_layer())
    params.append(())
    if input_dim is None:
        input_dim = np.shape(weights[0][0])[1]
    return Model(layers, params, (input_dim,))


# ---------------------------------------------------------------- forward


def _run_layers(m, h):
    for spec, p in zip(m.layers, m.params):
        if spec.kind == DENSE:
            h = kernels.dense_batch(h, p[0], p[1])
        elif spec.kind == CONV2D:
            h = kernels.conv2d_batch(h, p[0], p[1], spec.stride, spec.pad)
        elif spec.kind == RELU:
            h = np.maximum(h, h.dtype.type(0))
        elif spec.kind == BATCHNORM:
            h = batchnorm_apply(h, *p, eps=spec.eps, channel_axis=1)
        elif spec.kind == GLOBAL_AVG_POOL:
            h = global_avg_pool(h)
        elif spec.kind == FLATTEN:
            h = np.ascontiguousarray(h.reshape(h.shape[0], -1))
        elif spec.kind == L2_NORMALIZE:
            h, norms = kernels.l2_normalize_rows(h, NORM_FLOOR)
            return h, norms > NORM_FLOOR
    raise AssertionError("unreachable: model always ends with l2_normalize")


def embed_batch(m, X, workers=None):
    """Embed a batch of inputs. Returns ``(embeddings, ok)``; rows with ``ok == False``
    hit a degenerate (zero-norm) pre-normalization output and are not unit vectors."""
    X = np.asarray(X)
    if X.shape[1:] != m.input_shape:
        raise ShapeMismatch(f"inputs must have shape (B, {m.input_shape}), got {X.shape}")
    X = np.ascontiguousarray(X, dtype=m.dtype)
    n = X.shape[0]
    workers = _workers() if workers is None else workers
    workers = max(1, min(workers, n // 64 or 1))
    if workers == 1:
        return _run_layers(m, X)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [X[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(lambda c: _run_layers(m, c), chunks))
    return np.concatenate([e for e, _ in parts]), np.concatenate([ok for _, ok in parts])


def forward_batch(m, X, workers=None):
    E, ok = embed_batch(m, X, workers)
    if not ok.all():
        raise ZeroNorm(f"{int((~ok).sum())} input(s) produced a zero-norm embedding")
    return E


def forward(m, x):
    """Embed one input; the result is a unit vector of length ``m.d``."""
    x = np.asarray(x)
    if x.shape != m.input_shape:
        raise ShapeMismatch(f"input shape {x.shape} != {m.input_shape}")
    return forward_batch(m, x[None], workers=1)[0]


# ---------------------------------------------------------------- flat parameter view


@dataclass(frozen=True, eq=False)
class ParamView:
    """Flat prunable-parameter vector plus the segment map back into the model.

    ``segments`` lists ``(layer_index, tensor_index, offset, size)`` in flat order.
    """

    vector: np.ndarray
    segments: tuple

    def __len__(self):
        return len(self.vector)

    def locate(self, flat_index):
        for layer, tensor, offset, size in self.segments:
            if offset <= flat_index < offset + size:
                return layer, tensor, flat_index - offset
        raise IndexError(flat_index)


def param_segments(m):
    segs, off = [], 0
    for li, (spec, p) in enumerate(zip(m.layers, m.params)):
        if spec.prunable:
            for ti, t in enumerate(p):
                segs.append((li, ti, off, t.size))
                off += t.size
    return tuple(segs)


def param_vector_view(m):
    segs = param_segments(m)
    parts = [m.params[li][ti].reshape(-1) for li, ti, _, _ in segs]
    vec = np.concatenate(parts) if parts else np.zeros(0, dtype=m.dtype)
    return ParamView(vec, segs)


def with_param_vector(m, vector):
    """Scatter a flat vector back into a copy of ``m``.

    The vector's dtype wins; if it is float64 the non-prunable tensors are
    upcast as well so the whole model runs in double precision.
    """
    vector = np.asarray(vector)
    segs = param_segments(m)
    n = sum(s[3] for s in segs)
    if vector.shape != (n,):
        raise LengthMismatch(f"parameter vector has length {vector.size}, model has {n}")
    dtype = vector.dtype
    params = [[t.astype(dtype, copy=True) for t in p] for p in m.params]
    for li, ti, off, size in segs:
        params[li][ti] = vector[off:off + size].reshape(params[li][ti].shape).copy()
    return m.with_params(params)


def apply_mask(m, mask):
    """Return a new model with every prunable parameter multiplied by its mask bit."""
    bits = np.asarray(getattr(mask, "bits", mask))
    view = param_vector_view(m)
    if bits.shape != (len(view),):
        raise LengthMismatch(f"mask has length {bits.size}, model has {len(view)} prunable parameters")
    pruned = np.where(bits.astype(bool), view.vector, view.vector.dtype.type(0))
    return with_param_vector(m, pruned)


# ---------------------------------------------------------------- PFQM serialization


def _layer_from_json(obj):
    kind = obj.get("kind")
    if kind == DENSE:
        return dense_layer(int(obj["in_features"]), int(obj["out_features"]),
                           bool(obj.get("embedding_head", False)))
    if kind == CONV2D:
        return conv2d_layer(int(obj["in_channels"]), int(obj["out_channels"]),
                            int(obj["kernel_size"]), int(obj.get("stride", 1)), int(obj.get("pad", 0)))
    if kind == BATCHNORM:
        return batchnorm_layer(int(obj["channels"]), float(obj.get("eps", BN_EPS)))
    if kind in (RELU, GLOBAL_AVG_POOL, FLATTEN, L2_NORMALIZE):
        return LayerSpec(kind)
    raise ManifestInvalid(f"unknown layer kind {kind!r}")


def model_manifest(m):
    return {
        "format": "PFQM",
        "version": FORMAT_VERSION,
        "input_shape": list(m.input_shape),
        "d": m.d,
        "n_prunable": m.n_prunable,
        "n_floats": sum(t.size for p in m.params for t in p),
        "layers": [s.to_json() for s in m.layers],
    }


def save_model(m):
    """Serialize to PFQM bytes (see docs/formats.md)."""
    manifest = json.dumps(model_manifest(m), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for p in m.params for t in p)
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(manifest)) + manifest + body


def load_model(data):
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a PFQM stream")
    if len(data) < 16:
        raise Truncated("header is incomplete")
    version, mlen = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"PFQM version {version} (supported: {FORMAT_VERSION})")
    if len(data) < 16 + mlen:
        raise Truncated("manifest is incomplete")
    try:
        manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
        layers = [_layer_from_json(obj) for obj in manifest["layers"]]
        input_shape = tuple(int(s) for s in manifest["input_shape"])
        for spec, obj in zip(layers, manifest["layers"]):
            if [tuple(s) for s in obj.get("param_shapes", [])] != spec.param_shapes():
                raise ManifestInvalid(f"param_shapes disagree with {spec.kind} metadata")
    except ManifestInvalid:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestInvalid(f"bad manifest: {exc}") from exc
    n_floats = sum(int(np.prod(s)) for spec in layers for s in spec.param_shapes())
    body = data[16 + mlen:]
    if len(body) < 4 * n_floats:
        raise Truncated(f"expected {4 * n_floats} parameter bytes, found {len(body)}")
    if len(body) > 4 * n_floats:
        raise ManifestInvalid(f"{len(body) - 4 * n_floats} trailing bytes after parameters")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32)
    params, off = [], 0
    for spec in layers:
        p = []
        for shape in spec.param_shapes():
            size = int(np.prod(shape))
            p.append(flat[off:off + size].reshape(shape).copy())
            off += size
        params.append(p)
    try:
        m = Model(layers, params, input_shape)
    except ShapeMismatch as exc:
        raise ManifestInvalid(str(exc)) from exc
    if manifest.get("d", m.d) != m.d:
        raise ManifestInvalid("manifest d disagrees with the layer chain")
    return m


def write_model(m, path):
    with open(path, "wb") as fh:
        fh.write(save_model(m))


def read_model(path):
    with open(path, "rb") as fh:
        return load_model(fh.read())
