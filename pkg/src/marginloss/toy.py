"""Synthetic 8-identity toy problem: point clouds, a small MLP, and an SGD loop.

The MLP stands in for a CNN backbone: it maps raw input points to a 2-D
embedding that is then classified by a bias-free, normalized head under one
of the margin losses.
"""

import copy
import dataclasses
import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, NonFiniteError, RejectionFailureError
from .losses import EmbeddingBatch, l2_normalize_rows, margin_softmax_loss
from .margins import standard_normal


@dataclass
class ToyDataset:
    points: np.ndarray
    labels: np.ndarray
    class_variances: np.ndarray
    centers: np.ndarray = field(default=None, repr=False)

    @property
    def num_classes(self):
        return len(self.class_variances)

    def __len__(self):
        return len(self.labels)


def _unit_vectors(rng, k, dim):
    return l2_normalize_rows(standard_normal(rng, (k, dim)))


def place_centers(rng, c, dim, min_angle_deg=60.0, attempts=10_000):
    """Sequentially place ``c`` unit vectors with pairwise angles >= min_angle_deg."""
    cos_max = np.cos(np.radians(min_angle_deg))
    centers = []
    for _ in range(attempts):
        cand = _unit_vectors(rng, 1, dim)[0]
        if all(float(cand @ other) <= cos_max for other in centers):
            centers.append(cand)
            if len(centers) == c:
                return np.array(centers)
    raise RejectionFailureError(
        f"could not place {c} centers {min_angle_deg} degrees apart in {dim}-D within {attempts} attempts"
    )


def generate_toy_dataset(c, per_class, low_std, high_std, input_dim, rng, min_angle_deg=60.0):
    """First half of the classes get ``low_std`` noise, the second half ``high_std``.

    Points are the class center plus isotropic Gaussian noise. Samples are
    laid out class by class.
    """
    if c < 2:
        raise ValueError("need at least two classes")
    if c % 2:
        raise ValueError("the half-low/half-high profile needs an even class count")
    if per_class < 1 or low_std <= 0 or high_std <= 0:
        raise ValueError("per_class must be >= 1 and stds positive")
    centers = place_centers(rng, c, input_dim, min_angle_deg)
    stds = np.array([low_std] * (c // 2) + [high_std] * (c // 2))
    noise = standard_normal(rng, (c, per_class, input_dim))
    points = centers[:, None, :] + stds[:, None, None] * noise
    labels = np.repeat(np.arange(c), per_class)
    return ToyDataset(points.reshape(-1, input_dim), labels, stds, centers)


ACTIVATIONS = {
    "tanh": (np.tanh, lambda pre, post: 1.0 - post * post),
    "relu": (lambda z: np.maximum(z, 0.0), lambda pre, post: (pre > 0).astype(np.float64)),
}


@dataclass
class MLP:
    """Fully connected net; hidden layers use ``activation``, the last layer is linear.

    With ``batch_norm`` every layer's pre-activation (the output layer
    included) is standardized without a learned affine: by batch statistics
    in training mode and by running statistics otherwise.
    """

    weights: list
    biases: list
    activation: str = "tanh"
    batch_norm: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    running_mean: list = field(default=None, repr=False)
    running_var: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if self.batch_norm and self.running_mean is None:
            self.running_mean = [np.zeros(w.shape[1]) for w in self.weights]
            self.running_var = [np.ones(w.shape[1]) for w in self.weights]

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self):
        return [*self.weights, *self.biases]

    def forward(self, x, train=False):
        """Embeddings for ``x``; in training mode also returns the backward cache.

        Training mode updates the batch-norm running statistics.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights[0].shape[0]:
            raise DimensionMismatchError(f"expected inputs of width {self.weights[0].shape[0]}, got {x.shape}")
        act, _ = ACTIVATIONS[self.activation]
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            inv = None
            if self.batch_norm:
                if train:
                    mu, var = z.mean(axis=0), z.var(axis=0)
                    n = len(z)
                    self.running_mean[i] = (1 - self.bn_momentum) * self.running_mean[i] + self.bn_momentum * mu
                    if n > 1:
                        self.running_var[i] = (1 - self.bn_momentum) * self.running_var[i] + self.bn_momentum * var * n / (n - 1)
                else:
                    mu, var = self.running_mean[i], self.running_var[i]
                inv = 1.0 / np.sqrt(var + self.bn_eps)
                z = (z - mu) * inv
            out = z if i == last else act(z)
            cache.append((h, z, out, inv))
            h = out
        return (h, cache) if train else h

    def backward(self, cache, grad_out):
        """Gradients (weights, biases) of a scalar whose gradient w.r.t. the output is ``grad_out``.

        ``cache`` comes from a training-mode forward pass.
        """
        _, dact = ACTIVATIONS[self.activation]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            inp, z, out, inv = cache[i]
            if i != len(self.weights) - 1:
                g = g * dact(z, out)
            if inv is not None:
                # batch statistics depend on every row of the batch
                g = inv * (g - g.mean(axis=0) - z * (g * z).mean(axis=0))
            gw[i] = inp.T @ g
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return gw, gb


def init_mlp(widths, rng, activation="tanh", batch_norm=False):
    """Glorot-uniform weights (gain 1) and zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, activation, batch_norm=batch_norm)


def init_head(c, d, rng):
    """Class weight rows drawn uniformly on the unit sphere."""
    return _unit_vectors(rng, c, d)


def forward(model, inputs):
    return model.forward(inputs)


def embed(model, dataset):
    return EmbeddingBatch(model.forward(dataset.points), dataset.labels)


@dataclass
class TrainConfig:
    batch_size: int = 128
    total_iterations: int = 11200
    initial_lr: float = 0.1
    lr_drop_iterations: tuple = (1680, 2800, 3360, 8400)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    scale: float = 64.0

    def __post_init__(self):
        self.lr_drop_iterations = tuple(int(t) for t in self.lr_drop_iterations)
        drops = self.lr_drop_iterations
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"lr drops must be strictly increasing: {drops}")
        if self.total_iterations < 0 or self.batch_size < 1:
            raise ValueError("total_iterations must be >= 0 and batch_size >= 1")
        if drops and self.total_iterations and drops[-1] >= self.total_iterations:
            raise ValueError(f"lr drop {drops[-1]} is not before total_iterations={self.total_iterations}")

    @classmethod
    def toy(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides):
        """Full-scale schedule (batch 512, 295k iterations); kept for parity, not meant to be run here."""
        base = dict(batch_size=512, total_iterations=295_000, lr_drop_iterations=(80_000, 140_000, 210_000, 280_000))
        base.update(overrides)
        return cls(**base)

    def lr_at(self, t):
        k = sum(1 for d in self.lr_drop_iterations if d <= t)
        return self.initial_lr * 10.0 ** (-k)

    def to_dict(self):
        d = asdict(self)
        d["lr_drop_iterations"] = list(self.lr_drop_iterations)
        return d


class SGD:
    """SGD with classical momentum; weight decay is folded into the gradient.

    v <- mu * v + (g + wd * p);  p <- p - lr * v. Parameters update in place.
    """

    def __init__(self, params, momentum=0.9, weight_decay=5e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads, lr):
        for p, g, v in zip(self.params, grads, self.velocity):
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= lr * v


@dataclass
class TrainingLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    margin_mean: list = field(default_factory=list)
    margin_std: list = field(default_factory=list)
    final_accuracy: float = float("nan")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr", "margin_mean", "margin_std"])
        for row in zip(self.iteration, self.loss, self.lr, self.margin_mean, self.margin_std):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def classification_accuracy(model, head, dataset):
    """Train-set accuracy of argmax cosine (no margin)."""
    emb = l2_normalize_rows(model.forward(dataset.points))
    pred = np.argmax(emb @ l2_normalize_rows(head).T, axis=1)
    return float(np.mean(pred == dataset.labels))


def train(model, head, dataset, spec, cfg, data_rng, margin_rng):
    """Train copies of ``model`` and ``head``; returns (model, head, log).

    ``cfg.scale`` overrides ``spec.scale``. Mini-batches are drawn from
    per-epoch permutations of ``data_rng``; elastic margins come from
    ``margin_rng`` so data order never depends on the loss family.
    """
    model = copy.deepcopy(model)
    head = np.array(head, dtype=np.float64, copy=True)
    if model.widths[-1] != head.shape[1]:
        raise DimensionMismatchError(f"model emits {model.widths[-1]}-D but head is {head.shape[1]}-D")
    spec = dataclasses.replace(spec, scale=cfg.scale)
    params = model.params() + [head]
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    log = TrainingLog()
    n = len(dataset)
    bs = min(cfg.batch_size, n)
    perm, pos = data_rng.permutation(n), 0
    for t in range(cfg.total_iterations):
        if pos + bs > n:
            perm, pos = data_rng.permutation(n), 0
        idx = perm[pos : pos + bs]
        pos += bs
        emb, cache = model.forward(dataset.points[idx], train=True)
        try:
            out = margin_softmax_loss(EmbeddingBatch(emb, dataset.labels[idx]), head, spec, rng=margin_rng)
        except NonFiniteError as e:
            raise DivergenceError(f"training diverged at iteration {t}: {e}") from e
        if not np.isfinite(out.mean_loss) or not np.all(np.isfinite(out.grad_features)):
            raise DivergenceError(f"loss became non-finite at iteration {t}")
        gw, gb = model.backward(cache, out.grad_features)
        lr = cfg.lr_at(t)
        opt.step(gw + gb + [out.grad_weights], lr)
        log.iteration.append(t)
        log.loss.append(out.mean_loss)
        log.lr.append(lr)
        log.margin_mean.append(float(np.mean(out.margins_used)))
        log.margin_std.append(float(np.std(out.margins_used)))
    log.final_accuracy = classification_accuracy(model, head, dataset)
    return model, head, log
