"""Pruning masks and pruned models.

Three strategies are supported:

* global unstructured L1 magnitude: the ``k`` smallest ``|theta_i|`` across all
  prunable tensors are zeroed,
* unstructured random: ``k`` distinct positions drawn by a seeded partial
  Fisher-Yates shuffle,
* structured: whole output channels are removed layer by layer and the model
  is rebuilt with smaller tensors.

Unstructured masks are count-driven: exactly ``k = round_half_up(rho * N)``
parameters are removed, ties in magnitude broken by ascending flat index.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, ManifestInvalid, RhoOutOfRange, Truncated, UnsupportedTopology, VersionUnsupported
from .model import (
    BATCHNORM,
    CONV2D,
    DENSE,
    FLATTEN,
    GLOBAL_AVG_POOL,
    L2_NORMALIZE,
    LayerSpec,
    Model,
    apply_mask,
    param_segments,
    param_vector_view,
)
from .tensor_core import make_rng

L1 = "l1"
RANDOM = "random"
UNSTRUCTURED = "unstructured"
STRUCTURED = "structured"

MASK_MAGIC = b"PFQK"
MASK_VERSION = 1


def check_rho(rho):
    if not (isinstance(rho, (int, float)) and 0.0 < rho < 1.0):
        raise RhoOutOfRange(f"rho must lie in (0, 1), got {rho!r}")
    return float(rho)


def prune_count(rho, n):
    """Number of parameters removed: ``rho * n`` rounded half up."""
    return int(math.floor(rho * n + 0.5))


@dataclass(frozen=True, eq=False)
class PruneMask:
    bits: np.ndarray
    rho: float
    criterion: str
    granularity: str = UNSTRUCTURED
    seed: int | None = None
    tau: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))

    @property
    def n(self):
        return int(self.bits.size)

    def count_zeros(self):
        return int(self.n - np.count_nonzero(self.bits))

    def header(self):
        return {"rho": self.rho, "criterion": self.criterion, "granularity": self.granularity,
                "seed": self.seed, "tau": self.tau, "n": self.n}


def sparsity(mask):
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.size == 0:
        return 0.0
    return (bits.size - np.count_nonzero(bits)) / bits.size


def build_mask_l1_global(m, rho):
    rho = check_rho(rho)
    theta = param_vector_view(m).vector
    n = theta.size
    k = prune_count(rho, n)
    mags = np.abs(theta.astype(np.float64))
    order = np.argsort(mags, kind="stable")  # stable sort => ties by ascending index
    bits = np.ones(n, dtype=np.uint8)
    bits[order[:k]] = 0
    tau = float(mags[order[k - 1]]) if k > 0 else None
    return PruneMask(bits, rho, L1, UNSTRUCTURED, None, tau)


def random_prune_indices(n, k, seed):
    """First ``k`` slots of a seeded Fisher-Yates shuffle of ``range(n)``."""
    rng = make_rng(seed)
    idx = np.arange(n)
    if k == 0:
        return idx[:0]
    swaps = rng.integers(np.arange(k), n)
    for i, j in enumerate(swaps.tolist()):
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def build_mask_random(m, rho, seed):
    rho = check_rho(rho)
    n = len(param_vector_view(m))
    bits = np.ones(n, dtype=np.uint8)
    bits[random_prune_indices(n, prune_count(rho, n), seed)] = 0
    return PruneMask(bits, rho, RANDOM, UNSTRUCTURED, int(seed), None)


# ---------------------------------------------------------------- mask sidecar


def save_mask(mask):
    """Serialize to ``.pfqmask`` bytes: magic, u32 version, u64 header length, JSON header,
    then the mask bits packed LSB-first (bit i lives in byte i // 8 at position i % 8)."""
    header = json.dumps(mask.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.packbits(mask.bits, bitorder="little").tobytes()
    return MASK_MAGIC + struct.pack("<IQ", MASK_VERSION, len(header)) + header + payload


def load_mask(data):
    data = bytes(data)
    if data[:4] != MASK_MAGIC:
        raise BadMagic("not a .pfqmask stream")
    if len(data) < 16:
        raise Truncated("header is incomplete")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != MASK_VERSION:
        raise VersionUnsupported(f"mask version {version}")
    if len(data) < 16 + hlen:
        raise Truncated("header is incomplete")
    try:
        h = json.loads(data[16:16 + hlen].decode("utf-8"))
        n = int(h["n"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestInvalid(f"bad mask header: {exc}") from exc
    payload = data[16 + hlen:]
    if len(payload) < (n + 7) // 8:
        raise Truncated("mask payload is incomplete")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n, bitorder="little")
    return PruneMask(bits, h["rho"], h["criterion"], h["granularity"], h.get("seed"), h.get("tau"))


# ---------------------------------------------------------------- structured pruning


@dataclass(frozen=True)
class StructuredPlan:
    """Output channels removed per prunable layer (``layer index -> sorted channel indices``)."""

    rho: float
    removed: dict = field(default_factory=dict)
    out_channels: dict = field(default_factory=dict)

    @property
    def empty(self):
        return not any(self.removed.values())

    def to_json(self):
        return {
            "rho": self.rho,
            "criterion": L1,
            "granularity": STRUCTURED,
            "layers": [
                {"layer": li, "removed": list(ch), "out_channels_before": self.out_channels[li],
                 "out_channels_after": self.out_channels[li] - len(ch)}
                for li, ch in sorted(self.removed.items())
            ],
        }


def _out_channels(spec):
    return spec.out_features if spec.kind == DENSE else spec.out_channels


def channel_importance(spec, params):
    """L1 norm of each output channel's weight slice plus its |bias|."""
    W, b = (np.asarray(t, dtype=np.float64) for t in params)
    return np.abs(W).reshape(W.shape[0], -1).sum(axis=1) + np.abs(b)


def build_structured_plan(m, rho):
    """Each prunable, non-head layer loses ``floor(rho * C_out)`` channels of lowest importance.

    Importance is computed on the original (unpruned) weights of each layer.
    """
    rho = check_rho(rho)
    removed, out_channels = {}, {}
    for li, (spec, p) in enumerate(zip(m.layers, m.params)):
        if not spec.prunable or spec.embedding_head:
            continue
        c = _out_channels(spec)
        r = int(math.floor(rho * c + 1e-9))
        order = np.argsort(channel_importance(spec, p), kind="stable")
        removed[li] = tuple(sorted(int(i) for i in order[:r]))
        out_channels[li] = c
    return StructuredPlan(rho, removed, out_channels)


def _check_plan(m, plan):
    for li, ch in plan.removed.items():
        if not 0 <= li < len(m.layers):
            raise UnsupportedTopology(f"plan references layer {li} outside the model")
        spec = m.layers[li]
        if not spec.prunable or spec.embedding_head:
            raise UnsupportedTopology(f"layer {li} ({spec.kind}) cannot be structurally pruned")
        c = _out_channels(spec)
        if any(b <= a for a, b in zip(ch, ch[1:])) or any(not 0 <= i < c for i in ch):
            raise UnsupportedTopology(f"layer {li}: channel indices must be valid and strictly increasing")
        if len(ch) >= c:
            raise UnsupportedTopology(f"layer {li}: cannot remove every channel")


def _walk_structured(m, plan):
    """Yield, per layer, ``(drop_in, drop_out)``: the input slices (flat column / input channel
    indices) and output channels that disappear. Raises if removed channels have no consumer."""
    _check_plan(m, plan)
    pending = None  # channels of the current activation that were removed upstream
    shapes = (m.input_shape,) + m.shapes
    for li, spec in enumerate(m.layers):
        in_shape = shapes[li]
        drop_in, drop_out = (), ()
        if spec.kind in (DENSE, CONV2D):
            if pending:
                drop_in = pending
            drop_out = plan.removed.get(li, ())
            pending = drop_out or None
        elif spec.kind == BATCHNORM:
            if pending:
                drop_in = pending
        elif spec.kind == FLATTEN:
            if pending and len(in_shape) == 3:
                hw = in_shape[1] * in_shape[2]
                pending = tuple(c * hw + j for c in pending for j in range(hw))
        elif spec.kind == L2_NORMALIZE and pending:
            raise UnsupportedTopology("removed channels reach the embedding without a consumer")
        elif spec.kind == GLOBAL_AVG_POOL:
            pass
        yield li, spec, drop_in, drop_out


def apply_structured(m, plan):
    """Rebuild ``m`` with the planned channels physically removed."""
    layers, params = [], []
    for li, spec, drop_in, drop_out in _walk_structured(m, plan):
        p = [np.array(t) for t in m.params[li]]
        if spec.kind == DENSE:
            W, b = p
            W = np.delete(np.delete(W, list(drop_in), axis=1), list(drop_out), axis=0)
            b = np.delete(b, list(drop_out))
            spec = LayerSpec(DENSE, in_features=W.shape[1], out_features=W.shape[0],
                             embedding_head=spec.embedding_head)
            p = [W, b]
        elif spec.kind == CONV2D:
            K, b = p
            K = np.delete(np.delete(K, list(drop_in), axis=1), list(drop_out), axis=0)
            b = np.delete(b, list(drop_out))
            spec = LayerSpec(CONV2D, in_channels=K.shape[1], out_channels=K.shape[0],
                             kernel_size=spec.kernel_size, stride=spec.stride, pad=spec.pad)
            p = [K, b]
        elif spec.kind == BATCHNORM and drop_in:
            p = [np.delete(t, list(drop_in)) for t in p]
            spec = LayerSpec(BATCHNORM, channels=p[0].size, eps=spec.eps)
        layers.append(spec)
        params.append(p)
    return Model(layers, params, m.input_shape)


def structured_equivalent_mask(m, plan):
    """Flat mask that zeroes the planned channels (weights and bias) and every downstream
    weight slice that consumes them, leaving the architecture unchanged."""
    view = param_vector_view(m)
    bits = np.ones(len(view), dtype=np.uint8)
    offsets = {(li, ti): (off, size) for li, ti, off, size in param_segments(m)}
    for li, spec, drop_in, drop_out in _walk_structured(m, plan):
        if spec.kind not in (DENSE, CONV2D):
            continue
        W = m.params[li][0]
        wmask = np.ones(W.shape, dtype=np.uint8)
        bmask = np.ones(W.shape[0], dtype=np.uint8)
        wmask[list(drop_out)] = 0
        bmask[list(drop_out)] = 0
        if drop_in:
            wmask[:, list(drop_in)] = 0
        off, size = offsets[(li, 0)]
        bits[off:off + size] = wmask.reshape(-1)
        off, size = offsets[(li, 1)]
        bits[off:off + size] = bmask
    return bits


def prune_model(m, rho, criterion=L1, granularity=UNSTRUCTURED, seed=None):
    """Convenience: return ``(pruned_model, mask_or_plan)``."""
    if granularity == STRUCTURED:
        if criterion != L1:
            raise ValueError("structured pruning supports the l1 criterion only")
        plan = build_structured_plan(m, rho)
        return apply_structured(m, plan), plan
    if criterion == L1:
        mask = build_mask_l1_global(m, rho)
    elif criterion == RANDOM:
        if seed is None:
            raise ValueError("random pruning needs a seed")
        mask = build_mask_random(m, rho, seed)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return apply_mask(m, mask), mask
