"""Synthetic identities and a tiny trainable embedding MLP.

Each identity is a random unit centroid in input space; its samples are the
centroid plus isotropic gaussian noise whose standard deviation cycles through
``noise_levels``. The per-sample sigma is the ground-truth degradation.

The trainer fits a Dense/ReLU chain with a cosine-logit softmax loss
(``logits = s * cos(embedding, class_weight)``) by plain minibatch SGD.
Gradients are derived by hand; everything runs in float64 and the result is
stored as a float32 :class:`~prefiqs.model.Model`.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import ConfigInvalid, NonFiniteLoss, UnsupportedArch
from .model import DENSE, RELU, mlp_model
from .tensor_core import make_rng

COSINE_SCALE = 16.0


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 20
    samples_per_identity: int = 40
    input_dim: int = 32
    embedding_dim: int = 16
    noise_levels: tuple = (0.0, 0.25, 0.5, 1.0)
    seed: int = 0

    def validate(self):
        if self.n_identities < 2:
            raise ConfigInvalid("n_identities must be at least 2")
        if self.samples_per_identity < 1 or self.input_dim < 1 or self.embedding_dim < 1:
            raise ConfigInvalid("sizes must be positive")
        if not self.noise_levels or any(s < 0 for s in self.noise_levels):
            raise ConfigInvalid("noise_levels must be a non-empty list of sigma >= 0")


@dataclass(frozen=True)
class TrainConfig:
    arch: tuple = (32, 64, 64, 16)
    epochs: int = 60
    lr: float = 0.3
    batch_size: int = 32
    scale: float = COSINE_SCALE
    seed: int = 1
    # Training draws its own noisy samples of the same identities so the
    # evaluation images are never seen during fitting.
    noise_seed: int | None = 1000
    samples_per_identity: int | None = 160


@dataclass(frozen=True)
class FixtureConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_impostors: int | None = None
    pair_seed: int = 2
    prune_seed: int = 3

    def to_json(self):
        return asdict(self)


class Sample(NamedTuple):
    id: str
    x: np.ndarray
    label: int
    sigma: float


@dataclass(frozen=True, eq=False)
class SynthDataset:
    samples: list

    @property
    def ids(self):
        return [s.id for s in self.samples]

    @property
    def X(self):
        return np.stack([s.x for s in self.samples])

    @property
    def labels(self):
        return np.array([s.label for s in self.samples])

    @property
    def sigmas(self):
        return np.array([s.sigma for s in self.samples])

    def pairs_for_model(self):
        return [(s.id, s.x) for s in self.samples]


def fixture_config(path=None):
    """Load a fixture config JSON; the bundled standard fixture when ``path`` is None."""
    if path is None:
        text = resources.files("prefiqs").joinpath("data/fixture.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
        synth = raw.get("synth", {})
        if "noise_levels" in synth:
            synth = {**synth, "noise_levels": tuple(float(s) for s in synth["noise_levels"])}
        train = raw.get("train", {})
        if "arch" in train:
            train = {**train, "arch": tuple(train["arch"])}
        cfg = FixtureConfig(SynthConfig(**synth), TrainConfig(**train),
                            raw.get("n_impostors"), raw.get("pair_seed", 2), raw.get("prune_seed", 3))
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigInvalid(f"bad fixture config: {exc}") from exc
    cfg.synth.validate()
    return cfg


def generate_dataset(cfg, noise_seed=None):
    """Build the dataset for ``cfg``. Centroids always come from ``cfg.seed``; passing
    ``noise_seed`` draws a fresh, independent set of noisy samples of the same identities."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    c = rng.standard_normal((cfg.n_identities, cfg.input_dim))
    centroids = (c / np.linalg.norm(c, axis=1, keepdims=True)).astype(np.float32)
    if noise_seed is not None:
        rng = make_rng(noise_seed)
    noise = rng.standard_normal((cfg.n_identities, cfg.samples_per_identity, cfg.input_dim))
    levels = cfg.noise_levels
    samples = []
    for label in range(cfg.n_identities):
        for j in range(cfg.samples_per_identity):
            sigma = float(levels[j % len(levels)])
            x = (centroids[label].astype(np.float64) + sigma * noise[label, j]).astype(np.float32)
            samples.append(Sample(f"s{label:03d}_{j:03d}", x, label, sigma))
    return SynthDataset(samples)


def make_pairs(data, n_impostors=None, seed=0):
    """All genuine pairs plus ``n_impostors`` distinct impostor pairs drawn without replacement
    (default: as many impostors as genuine pairs). Returned in ascending index order."""
    labels = data.labels
    ia, ib = np.triu_indices(len(labels), k=1)
    same = labels[ia] == labels[ib]
    gen_idx = np.flatnonzero(same)
    imp_idx = np.flatnonzero(~same)
    n_imp = gen_idx.size if n_impostors is None else int(n_impostors)
    n_imp = min(n_imp, imp_idx.size)
    picked = np.sort(make_rng(seed).choice(imp_idx, size=n_imp, replace=False))
    chosen = np.sort(np.concatenate([gen_idx, picked]))
    ids = data.ids
    return [(ids[ia[t]], ids[ib[t]], bool(same[t])) for t in chosen]


# ---------------------------------------------------------------- training


def _check_arch(arch, input_dim=None):
    if len(arch) < 2 or not all(isinstance(w, (int, np.integer)) and w > 0 for w in arch):
        raise UnsupportedArch(f"arch must be a list of positive Dense widths, got {arch!r}")
    if input_dim is not None and arch[0] != input_dim:
        raise UnsupportedArch(f"arch input width {arch[0]} != data dim {input_dim}")


def init_weights(arch, seed):
    """Glorot-uniform weights and zero biases, float32."""
    rng = make_rng(seed)
    weights = []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_out, fan_in)).astype(np.float32)
        weights.append((W, np.zeros(fan_out, dtype=np.float32)))
    return weights


def loss_and_grads(weights, class_w, X, y, scale=COSINE_SCALE):
    """Mean cosine-softmax cross-entropy and its gradients.

    Returns ``(loss, [(dW, db), ...], d_class_w, logits)``.
    """
    acts, pre = [X], []
    h = X
    for i, (W, b) in enumerate(weights):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(weights) - 1 else z
        acts.append(h)
    z = acts[-1]
    zn = np.linalg.norm(z, axis=1, keepdims=True)
    e = z / zn
    wn = np.linalg.norm(class_w, axis=1, keepdims=True)
    what = class_w / wn
    logits = scale * e @ what.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = X.shape[0]
    rows = np.arange(n)
    # -log p_y = log1p(sum_{j != y} exp(l_j - l_y)) keeps full relative precision
    # when the target dominates; otherwise the shifted form is already accurate
    rel = logits - logits[rows, y][:, None]
    rel[rows, y] = -np.inf
    confident = rel.max(axis=1) <= 0.0
    per_sample = np.where(confident, np.log1p(np.exp(np.minimum(rel, 0.0)).sum(axis=1)), -logp[rows, y])
    loss = per_sample.mean()

    g = np.exp(logp)
    g[rows, y] -= 1.0
    g /= n
    de = scale * g @ what
    dwhat = scale * g.T @ e
    dclass = (dwhat - what * (what * dwhat).sum(axis=1, keepdims=True)) / wn
    dz = (de - e * (e * de).sum(axis=1, keepdims=True)) / zn

    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        W, _ = weights[i]
        grads[i] = (dz.T @ acts[i], dz.sum(axis=0))
        if i > 0:
            dz = (dz @ W) * (pre[i - 1] > 0)
    return loss, grads, dclass, logits


class TrainResult(NamedTuple):
    model: object
    class_weights: np.ndarray
    losses: list
    accuracy: float


def fit_toy_model(data, arch, epochs, lr, seed, batch_size=32, scale=COSINE_SCALE, n_classes=None):
    """Train and return the model, class weights, per-epoch loss history and train accuracy.

    ``losses[0]`` is the full-data loss at initialization and ``losses[e]`` after epoch ``e``.
    """
    X = data.X.astype(np.float64)
    y = data.labels
    _check_arch(tuple(arch), X.shape[1])
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    init = init_weights(arch, seed)
    rng = make_rng(seed + 0x9E3779B9)
    lim = np.sqrt(6.0 / (arch[-1] + n_classes))
    class_w = rng.uniform(-lim, lim, size=(n_classes, arch[-1]))
    weights = [(W.astype(np.float64), b.astype(np.float64)) for W, b in init]

    def full_loss():
        loss, _, _, logits = loss_and_grads(weights, class_w, X, y, scale)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss}")
        return float(loss), float(np.mean(logits.argmax(axis=1) == y))

    loss, acc = full_loss()
    losses = [loss]
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            idx = order[start:start + batch_size]
            _, grads, dclass, _ = loss_and_grads(weights, class_w, X[idx], y[idx], scale)
            weights = [(W - lr * dW, b - lr * db) for (W, b), (dW, db) in zip(weights, grads)]
            class_w = class_w - lr * dclass
        loss, acc = full_loss()
        losses.append(loss)
    if epochs == 0:
        final = init
    else:
        final = [(W.astype(np.float32), b.astype(np.float32)) for W, b in weights]
    return TrainResult(mlp_model(final, input_dim=arch[0]), class_w, losses, acc)


def train_toy_model(data, arch, epochs, lr, seed, batch_size=32, scale=COSINE_SCALE):
    return fit_toy_model(data, arch, epochs, lr, seed, batch_size, scale).model


def check_trainable(model):
    """Raise UnsupportedArch unless ``model`` is a Dense/ReLU chain the trainer understands."""
    for spec in model.layers[:-1]:
        if spec.kind not in (DENSE, RELU):
            raise UnsupportedArch(f"{spec.kind} layers are not trainable here")


def training_set(cfg, data=None):
    """Samples the fixture model is fitted on: a separate noise draw when ``train.noise_seed`` is set."""
    t = cfg.train
    if t.noise_seed is None:
        return generate_dataset(cfg.synth) if data is None else data
    spi = t.samples_per_identity or cfg.synth.samples_per_identity
    return generate_dataset(replace(cfg.synth, samples_per_identity=spi), noise_seed=t.noise_seed)


def build_fixture(cfg=None):
    """Generate data, train the model and build pairs for a fixture config."""
    cfg = fixture_config() if cfg is None else cfg
    data = generate_dataset(cfg.synth)
    t = cfg.train
    if t.arch[-1] != cfg.synth.embedding_dim:
        raise ConfigInvalid("arch output width must equal embedding_dim")
    train = training_set(cfg, data)
    result = fit_toy_model(train, t.arch, t.epochs, t.lr, t.seed, t.batch_size, t.scale,
                           n_classes=cfg.synth.n_identities)
    pairs = make_pairs(data, cfg.n_impostors, cfg.pair_seed)
    return data, result, pairs


def write_dataset_csv(data, path):
    from .scoring import fmt

    n = data.samples[0].x.size if data.samples else 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["id", "label", "sigma"] + [f"x{j}" for j in range(n)]) + "\n")
        for s in data.samples:
            fh.write(",".join([s.id, str(s.label), fmt(s.sigma)] + [fmt(v) for v in s.x]) + "\n")


def read_dataset_csv(path):
    samples = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:3] != ["id", "label", "sigma"]:
            raise ValueError(f"{path}: expected header id,label,sigma,x0,...")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: row has {len(parts)} fields, header has {len(header)}")
            x = np.array([float(v) for v in parts[3:]], dtype=np.float32)
            samples.append(Sample(parts[0], x, int(parts[1]), float(parts[2])))
    return SynthDataset(samples)
