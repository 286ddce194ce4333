"""Toy-run orchestration shared by the CLI and the acceptance checks.

Seed splitting: a run with user seed ``seed`` draws every random quantity
from ``make_rng(seed, stream)`` with a fixed stream id per purpose (see
STREAMS). All losses trained under one seed therefore see the same data,
the same initial network, the same head and the same batch order; only the
loss differs. Nothing depends on run order or worker count.
"""

from dataclasses import dataclass

import numpy as np

from .losses import EmbeddingBatch
from .margins import make_rng
from .metrics import PairProtocol, cosine_scores, geometry_report, verification_accuracy_kfold
from .toy import ToyDataset, embed, generate_toy_dataset, init_head, init_mlp, train

STREAMS = {"dataset": 0, "model": 1, "head": 2, "batches": 3, "margins": 4, "pairs": 5}


def stream(seed, name):
    return make_rng(seed, STREAMS[name])


@dataclass
class ToyRun:
    name: str
    model: object
    head: np.ndarray
    log: object
    embeddings: EmbeddingBatch
    report: object


def build_dataset(run_cfg, seed, extra_per_class=0):
    d = run_cfg.dataset
    return generate_toy_dataset(
        d.classes, d.per_class + extra_per_class, d.low_std, d.high_std, d.input_dim,
        stream(seed, "dataset"), d.min_angle_deg,
    )


def split_per_class(dataset, n_first):
    """Split a class-by-class dataset into the first ``n_first`` samples of each class and the rest."""
    first = np.zeros(len(dataset), dtype=bool)
    for c in range(dataset.num_classes):
        first[np.flatnonzero(dataset.labels == c)[:n_first]] = True
    part = lambda m: ToyDataset(dataset.points[m], dataset.labels[m], dataset.class_variances, dataset.centers)
    return part(first), part(~first)


def build_model(run_cfg, seed):
    m = run_cfg.model
    widths = [run_cfg.dataset.input_dim, *m.hidden, m.embedding_dim]
    model = init_mlp(widths, stream(seed, "model"), m.activation, batch_norm=m.batch_norm)
    head = init_head(run_cfg.dataset.classes, m.embedding_dim, stream(seed, "head"))
    return model, head


def run_toy_loss(run_cfg, loss_cfg, seed, dataset=None):
    """Train one loss from the seed's shared starting point and measure its geometry."""
    dataset = build_dataset(run_cfg, seed) if dataset is None else dataset
    model, head = build_model(run_cfg, seed)
    spec = loss_cfg.to_spec(scale=run_cfg.train.scale)
    model, head, log = train(model, head, dataset, spec, run_cfg.train, stream(seed, "batches"), stream(seed, "margins"))
    emb = embed(model, dataset)
    report = geometry_report(emb.features, emb.labels) if emb.features.shape[1] == 2 else None
    return ToyRun(loss_cfg.name, model, head, log, emb, report)


def balanced_pairs(labels, n_pairs, rng, k=10):
    """Random genuine and impostor pairs in equal numbers, shuffled, with contiguous folds."""
    labels = np.asarray(labels)
    half = n_pairs // 2
    pairs, genuine = [], []
    while len(pairs) < half:
        a = int(rng.integers(len(labels)))
        same = np.flatnonzero(labels == labels[a])
        b = int(same[rng.integers(len(same))])
        if a != b:
            pairs.append((a, b))
            genuine.append(True)
    while len(pairs) < 2 * half:
        a, b = (int(v) for v in rng.integers(len(labels), size=2))
        if labels[a] != labels[b]:
            pairs.append((a, b))
            genuine.append(False)
    order = rng.permutation(len(pairs))
    return PairProtocol.contiguous(np.array(pairs)[order], np.array(genuine)[order], k)


def holdout_verification(run_cfg, loss_cfg, seed, holdout_per_class=100, n_pairs=2000):
    """Train on the seed's toy data, then 10-fold verification accuracy on held-out samples."""
    full = build_dataset(run_cfg, seed, extra_per_class=holdout_per_class)
    train_set, held = split_per_class(full, run_cfg.dataset.per_class)
    run = run_toy_loss(run_cfg, loss_cfg, seed, dataset=train_set)
    emb = run.model.forward(held.points)
    protocol = balanced_pairs(held.labels, n_pairs, stream(seed, "pairs"))
    _, _, scores = cosine_scores(emb, protocol)
    return verification_accuracy_kfold(scores, protocol.genuine, protocol.k, protocol.folds).accuracy
