"""Verification, identification, class-geometry and Borda-count metrics."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateFoldError,
    EmptyGalleryError,
    InsufficientImpostorsWarning,
    RequiresTwoDError,
)
from .losses import l2_normalize_rows


@dataclass
class PairProtocol:
    """Comparison pairs with genuine flags and a fold index per pair."""

    pairs: np.ndarray
    genuine: np.ndarray
    folds: np.ndarray
    k: int

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.genuine = np.asarray(self.genuine, dtype=bool)
        self.folds = np.asarray(self.folds, dtype=np.int64)
        if not (len(self.pairs) == len(self.genuine) == len(self.folds)):
            raise ValueError("pairs, genuine and folds must have equal length")
        if len(self.folds) and (self.folds.min() < 0 or self.folds.max() >= self.k):
            raise ValueError(f"fold indices must lie in [0, {self.k})")

    @classmethod
    def contiguous(cls, pairs, genuine, k):
        """Split pairs into ``k`` consecutive blocks, as LFW-style pair lists are laid out."""
        n = len(genuine)
        return cls(pairs, genuine, contiguous_folds(n, k), k)

    def check_folds(self):
        """Raise if some fold lacks a genuine or an impostor pair."""
        for f in range(self.k):
            g = self.genuine[self.folds == f]
            if not g.any() or g.all():
                raise DegenerateFoldError(f"fold {f} needs at least one genuine and one impostor pair")

    def __len__(self):
        return len(self.genuine)


def contiguous_folds(n, k):
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    return (np.arange(n) * k) // n


def cosine_scores(embeddings, protocol):
    """Cosine similarity per pair, returned as (genuine_scores, impostor_scores, all_scores)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if len(protocol) and (protocol.pairs.min() < 0 or protocol.pairs.max() >= len(emb)):
        raise IndexError(f"pair index out of range for {len(emb)} embeddings")
    unit = l2_normalize_rows(emb)
    scores = np.sum(unit[protocol.pairs[:, 0]] * unit[protocol.pairs[:, 1]], axis=1)
    return scores[protocol.genuine], scores[~protocol.genuine], scores


def midpoint(a, b):
    mid = a + (b - a) / 2.0
    # adjacent floats: keep a < mid is impossible, so fall back to a (a is rejected, b accepted)
    return mid if a <= mid < b else a


def best_threshold(scores, genuine):
    """Accuracy-maximizing threshold on one split; accept iff score > threshold.

    Candidates are -inf, the midpoints between consecutive distinct scores,
    and +inf. Ties go to the smallest threshold. Returns (threshold, accuracy).
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    g = genuine[order].astype(np.int64)
    n = len(s)
    # first index of each distinct value; position p rejects s[:p]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    cuts = np.r_[starts, n]
    gen_before = np.r_[0, np.cumsum(g)]
    imp_before = np.r_[0, np.cumsum(1 - g)]
    correct = (gen_before[-1] - gen_before[cuts]) + imp_before[cuts]
    best = int(np.argmax(correct))
    if best == 0:
        thr = -np.inf
    elif best == len(cuts) - 1:
        thr = np.inf
    else:
        thr = midpoint(s[cuts[best] - 1], s[cuts[best]])
    return float(thr), correct[best] / n


@dataclass
class KFoldResult:
    accuracy: float
    fold_accuracies: list
    thresholds: list
    method: str = "accuracy-maximizing threshold per training split"


def verification_accuracy_kfold(scores, genuine, k=10, folds=None):
    """Mean k-fold verification accuracy.

    For each fold the threshold is fit on the other folds and the accuracy
    is measured on the held-out fold. ``folds`` defaults to contiguous blocks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    folds = contiguous_folds(len(scores), k) if folds is None else np.asarray(folds)
    accs, thrs = [], []
    for f in range(k):
        test = folds == f
        train = ~test
        if not test.any():
            raise DegenerateFoldError(f"fold {f} is empty")
        g_train = genuine[train]
        if not g_train.any() or g_train.all():
            raise DegenerateFoldError(f"training split for fold {f} contains only one class of pairs")
        thr, _ = best_threshold(scores[train], g_train)
        pred = scores[test] > thr
        accs.append(float(np.mean(pred == genuine[test])))
        thrs.append(thr)
    return KFoldResult(float(np.mean(accs)), accs, thrs)


def _allowed_false_accepts(n_impostor, far_target):
    k = int(np.floor(far_target * n_impostor))
    while (k + 1) / n_impostor <= far_target:
        k += 1
    while k > 0 and k / n_impostor > far_target:
        k -= 1
    return k


def tar_at_far(genuine, impostor, far_target):
    """True acceptance rate at the smallest threshold whose FAR <= far_target.

    Scores >= threshold are accepted. Returns (tar, threshold, achieved_far).
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("genuine and impostor score lists must be non-empty")
    if not 0.0 < far_target < 1.0:
        raise ValueError(f"far_target must be in (0, 1), got {far_target}")
    n_imp = impostor.size
    if n_imp < 1.0 / far_target:
        warnings.warn(
            f"{n_imp} impostor scores cannot resolve FAR={far_target:g}",
            InsufficientImpostorsWarning,
            stacklevel=2,
        )
    k = _allowed_false_accepts(n_imp, far_target)
    desc = np.sort(impostor)[::-1]
    # just above the (k+1)-th largest impostor score; at most k impostors reach it
    threshold = float(np.nextafter(desc[k], np.inf))
    tar = float(np.mean(genuine >= threshold))
    far = float(np.mean(impostor >= threshold))
    return tar, threshold, far


def rank1(probe, probe_labels, gallery, gallery_labels):
    """Fraction of probes whose most cosine-similar gallery item has the same label.

    Ties go to the lowest gallery index.
    """
    gallery = np.asarray(gallery, dtype=np.float64)
    probe = np.asarray(probe, dtype=np.float64)
    if gallery.ndim != 2 or len(gallery) == 0:
        raise EmptyGalleryError("gallery is empty")
    if len(probe) == 0:
        raise ValueError("no probes")
    sims = l2_normalize_rows(probe) @ l2_normalize_rows(gallery).T
    best = np.argmax(sims, axis=1)
    hits = np.asarray(gallery_labels)[best] == np.asarray(probe_labels)
    return float(np.mean(hits))


@dataclass
class GeometryReport:
    """Per-class geometry of 2-D embeddings, indexed by class label.

    ``consecutive_angles_deg[k]`` is the counter-clockwise gap from class k's
    center to the next center; ``order`` lists labels by polar angle.
    """

    labels: list
    class_centers: np.ndarray
    polar_angles_deg: np.ndarray
    consecutive_angles_deg: np.ndarray
    per_class_std: np.ndarray
    mean_std: float
    order: list = field(default_factory=list)

    @property
    def min_angle_deg(self):
        return float(np.min(self.consecutive_angles_deg))

    def to_dict(self):
        return {
            "labels": [int(c) for c in self.labels],
            "class_centers": self.class_centers.tolist(),
            "polar_angles_deg": self.polar_angles_deg.tolist(),
            "consecutive_angles_deg": self.consecutive_angles_deg.tolist(),
            "per_class_std": self.per_class_std.tolist(),
            "mean_std": self.mean_std,
            "min_angle_deg": self.min_angle_deg,
            "order": [int(c) for c in self.order],
        }


def geometry_report(embeddings, labels):
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[1] != 2:
        raise RequiresTwoDError(f"geometry report needs N x 2 embeddings, got {emb.shape}")
    unit = l2_normalize_rows(emb)
    classes = np.unique(labels)
    centers = np.empty((len(classes), 2))
    stds = np.empty(len(classes))
    for i, c in enumerate(classes):
        pts = unit[labels == c]
        centers[i] = pts.mean(axis=0)
        stds[i] = float(np.mean(pts.std(axis=0)))
    centers = l2_normalize_rows(centers)
    polar = np.degrees(np.arctan2(centers[:, 1], centers[:, 0])) % 360.0
    order = np.argsort(polar, kind="stable")
    gaps = np.empty(len(classes))
    if len(classes) == 1:
        gaps[0] = 360.0
    else:
        sorted_polar = polar[order]
        nxt = np.r_[sorted_polar[1:], sorted_polar[0] + 360.0]
        gaps[order] = nxt - sorted_polar
    return GeometryReport(
        labels=classes.tolist(),
        class_centers=centers,
        polar_angles_deg=polar,
        consecutive_angles_deg=gaps,
        per_class_std=stds,
        mean_std=float(np.mean(stds)),
        order=classes[order].tolist(),
    )


@dataclass
class BordaTable:
    configs: list
    benchmarks: list
    accuracy: np.ndarray
    bc: np.ndarray
    bc_sum: np.ndarray
    groups: list
    selected: list

    def to_dict(self):
        return {
            "configs": list(self.configs),
            "benchmarks": list(self.benchmarks),
            "accuracy": self.accuracy.tolist(),
            "bc": self.bc.tolist(),
            "bc_sum": self.bc_sum.tolist(),
            "groups": [list(g) for g in self.groups],
            "selected": list(self.selected),
        }

    def to_csv(self):
        header = ["config"]
        for b in self.benchmarks:
            header += [f"{b}_acc", f"{b}_bc"]
        lines = [",".join(header + ["bc_sum"])]
        for i, name in enumerate(self.configs):
            row = [name]
            for j in range(len(self.benchmarks)):
                row += [repr(float(self.accuracy[i, j])), str(int(self.bc[i, j]))]
            lines.append(",".join(row + [str(int(self.bc_sum[i]))]))
        return "\n".join(lines) + "\n"


def borda_count(accuracy, boundaries=None, configs=None, benchmarks=None):
    """Borda count within groups of configs, per benchmark.

    ``boundaries`` are the start indices of each group (``[0, 3, 7]`` means
    groups ``[0, 3)``, ``[3, 7)``, ``[7, n)``). A config earns ``n`` minus
    the number of group members with strictly higher accuracy, which gives a
    tied block the best Borda count of its positions.
    """
    acc = np.asarray(accuracy, dtype=np.float64)
    if acc.ndim != 2:
        raise ValueError("accuracy table must be configs x benchmarks")
    n_cfg, n_bench = acc.shape
    starts = [0] if boundaries is None else sorted(set(int(b) for b in boundaries) | {0})
    if starts[-1] >= n_cfg:
        raise ValueError("group boundary past the last config")
    edges = starts + [n_cfg]
    configs = [f"config{i}" for i in range(n_cfg)] if configs is None else list(configs)
    benchmarks = [f"bench{j}" for j in range(n_bench)] if benchmarks is None else list(benchmarks)
    bc = np.zeros((n_cfg, n_bench), dtype=np.int64)
    groups, selected = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        block = acc[lo:hi]
        n = hi - lo
        better = (block[None, :, :] > block[:, None, :]).sum(axis=1)
        bc[lo:hi] = n - better
        groups.append((lo, hi))
    bc_sum = bc.sum(axis=1)
    for lo, hi in groups:
        selected.append(configs[lo + int(np.argmax(bc_sum[lo:hi]))])
    return BordaTable(configs, benchmarks, acc, bc, bc_sum, groups, selected)
