"""Model verification, open-set identification and lineage on fingerprints."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .fingerprint import DEFAULT_CUTOFF, Fingerprint, cosine, extract_fingerprint

__all__ = [
    "UNKNOWN",
    "VerificationPair",
    "RocCurve",
    "Gallery",
    "OpenSetIdentifier",
    "make_pairs",
    "verify_pair",
    "score_pairs",
    "roc",
    "best_accuracy",
    "balanced_threshold",
    "identify_open_set",
    "open_set_metrics",
    "lineage_matrix",
    "family_gap",
]

UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class VerificationPair:
    """Two image sets, given as (model id, image indices), and the same-model flag."""

    model_a: str
    idx_a: tuple
    model_b: str
    idx_b: tuple
    label: bool

    def sides(self, models):
        a = np.asarray(models[self.model_a])[list(self.idx_a)]
        b = np.asarray(models[self.model_b])[list(self.idx_b)]
        return a, b


def make_pairs(models, n_s, n_pos, n_neg, rng):
    """Sample balanced verification pairs from ``{model id: images}``.

    Positive pairs take two disjoint subsets of one model's images, negative
    pairs take one subset from each of two distinct models.
    """
    ids = sorted(models)
    if len(ids) < 2 and n_neg:
        raise ValueError("negative pairs need at least two models")
    counts = {m: len(models[m]) for m in ids}
    if n_pos and min(counts.values()) < 2 * n_s:
        raise ValueError(f"positive pairs need >= {2 * n_s} images per model")
    if min(counts.values()) < n_s:
        raise ValueError(f"every model needs >= {n_s} images")
    pairs = []
    for _ in range(n_pos):
        m = ids[rng.integers(len(ids))]
        pick = rng.choice(counts[m], size=2 * n_s, replace=False)
        pairs.append(VerificationPair(m, tuple(pick[:n_s].tolist()), m,
                                      tuple(pick[n_s:].tolist()), True))
    for _ in range(n_neg):
        i, j = rng.choice(len(ids), size=2, replace=False)
        ma, mb = ids[i], ids[j]
        pairs.append(VerificationPair(
            ma, tuple(rng.choice(counts[ma], size=n_s, replace=False).tolist()),
            mb, tuple(rng.choice(counts[mb], size=n_s, replace=False).tolist()), False))
    return pairs


def verify_pair(pair, models, cutoff=DEFAULT_CUTOFF, channel="mean"):
    a, b = pair.sides(models)
    return cosine(extract_fingerprint(a, cutoff, channel), extract_fingerprint(b, cutoff, channel))


def score_pairs(pairs, models, cutoff=DEFAULT_CUTOFF, channel="mean"):
    scores = np.array([verify_pair(p, models, cutoff, channel) for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=bool)
    return scores, labels


@dataclass
class RocCurve:
    """Rates for the rule ``score >= threshold``, thresholds ascending."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float = field(default=0.0)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if labels.all() or not labels.any():
        raise ValueError("need at least one positive and one negative label")
    return scores, labels


def roc(scores, labels):
    """ROC over every distinct score; AUC by the trapezoid rule.

    Tied scores share one threshold, so they earn half credit.
    """
    scores, labels = _check_binary(scores, labels)
    thr = np.append(np.unique(scores), np.inf)
    order = np.argsort(scores)
    s, lab = scores[order], labels[order]
    # count of each class with score >= t, for every threshold t
    start = np.searchsorted(s, thr, side="left")
    pos_above = np.cumsum(lab[::-1])[::-1]
    neg_above = np.cumsum(~lab[::-1])[::-1]
    pos_above = np.append(pos_above, 0)[start]
    neg_above = np.append(neg_above, 0)[start]
    tpr = pos_above / lab.sum()
    fpr = neg_above / (~lab).sum()
    # integrate with fpr increasing, i.e. thresholds descending
    auc = float(np.trapezoid(tpr[::-1], fpr[::-1]))
    return RocCurve(thr, tpr, fpr, auc)


def best_accuracy(scores, labels):
    """Max of ``(TP + TN) / total`` over thresholds; lowest winning threshold."""
    curve = roc(scores, labels)
    P = np.sum(labels)
    n = len(np.ravel(labels))
    correct = curve.tpr * P + (1.0 - curve.fpr) * (n - P)
    i = int(np.argmax(correct))
    return float(correct[i] / n), float(curve.thresholds[i])


def balanced_threshold(scores, labels):
    """Threshold maximizing ``(TPR + TNR) / 2``; lowest winning threshold."""
    curve = roc(scores, labels)
    bal = 0.5 * (curve.tpr + 1.0 - curve.fpr)
    i = int(np.argmax(bal))
    return float(curve.thresholds[i]), float(bal[i])


@dataclass
class Gallery:
    """Known model ids (sorted) with one unit-norm fingerprint each."""

    ids: list
    vectors: np.ndarray
    tau: float = 0.5

    def __post_init__(self):
        order = np.argsort(np.asarray(self.ids, dtype=str), kind="stable")
        self.ids = [self.ids[i] for i in order]
        V = np.asarray([_unit(v) for v in self.vectors])[order]
        if V.ndim != 2 or len(self.ids) == 0:
            raise ValueError("gallery must hold at least one fingerprint")
        self.vectors = V

    @classmethod
    def from_fingerprints(cls, fingerprints, tau=0.5):
        ids = list(fingerprints)
        return cls(ids, [fingerprints[i] for i in ids], tau)

    def scores(self, feature):
        v = _unit(feature)
        if v.shape[0] != self.vectors.shape[1]:
            raise ValueError(f"dimension mismatch: {v.shape[0]} vs {self.vectors.shape[1]}")
        return self.vectors @ v


def _unit(v):
    v = v.vector if isinstance(v, Fingerprint) else np.asarray(v, dtype=np.float64).ravel()
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def identify_open_set(feature, gallery):
    """Best-matching model id, or UNKNOWN below the gallery threshold.

    Ties go to the lowest model id.
    """
    s = gallery.scores(feature)
    i = int(np.argmax(s))
    best = float(s[i])
    return (gallery.ids[i] if best >= gallery.tau else UNKNOWN), best


def open_set_metrics(probes, truth, gallery):
    """Closed-set accuracy over known probes and known-vs-unknown AUC.

    ``truth`` holds a model id for known probes and ``UNKNOWN`` (or None)
    otherwise; the AUC uses the best gallery score as discriminant.
    """
    truth = [UNKNOWN if t is None else t for t in truth]
    known = np.array([t != UNKNOWN for t in truth])
    if not known.any():
        raise ValueError("no known probes")
    best_ids, best_scores = [], []
    for p in probes:
        s = gallery.scores(p)
        i = int(np.argmax(s))
        best_ids.append(gallery.ids[i])
        best_scores.append(float(s[i]))
    acc = float(np.mean([best_ids[i] == truth[i] for i in np.flatnonzero(known)]))
    auc = roc(best_scores, known).auc if not known.all() else float("nan")
    return acc, auc


def lineage_matrix(fingerprints):
    """Pairwise cosine matrix for ``{model id: fingerprint}``, ids sorted."""
    ids = sorted(fingerprints)
    if len(ids) < 2:
        raise ValueError("lineage needs at least two models")
    V = np.asarray([_unit(fingerprints[i]) for i in ids])
    if V.ndim != 2:
        raise ValueError("fingerprints differ in dimension")
    M = np.clip(V @ V.T, -1.0, 1.0)
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 1.0)
    return ids, M


def family_gap(matrix, families):
    """Mean within-family minus mean between-family off-diagonal similarity."""
    fam = np.asarray(families)
    same = fam[:, None] == fam[None, :]
    off = ~np.eye(len(fam), dtype=bool)
    return float(matrix[same & off].mean() - matrix[~same].mean())


class OpenSetIdentifier(BaseEstimator, ClassifierMixin):
    """Gallery built from labelled features; predicts ids or ``UNKNOWN``.

    ``fit`` averages and normalizes features per id. When calibration data
    is supplied, ``tau`` is replaced by the balanced-accuracy optimum.
    """

    def __init__(self, tau=0.5):
        self.tau = tau

    def fit(self, X, y, X_cal=None, y_cal=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        ids = sorted(set(y.tolist()))
        vecs = [_unit(X[y == i].mean(axis=0)) for i in ids]
        self.gallery_ = Gallery(ids, vecs, self.tau)
        self.classes_ = np.array(ids)
        self.tau_ = self.tau
        if X_cal is not None:
            best = self.best_scores(X_cal)
            known = np.array([t != UNKNOWN for t in y_cal])
            self.tau_, _ = balanced_threshold(best, known)
            self.gallery_.tau = self.tau_
        return self

    def best_scores(self, X):
        check_is_fitted(self, "gallery_")
        S = np.asarray(X, dtype=np.float64)
        S = S / np.maximum(np.linalg.norm(S, axis=1, keepdims=True), 1e-300)
        return (S @ self.gallery_.vectors.T).max(axis=1)

    def predict(self, X):
        check_is_fitted(self, "gallery_")
        return np.array([identify_open_set(x, self.gallery_)[0]
                         for x in np.asarray(X, dtype=np.float64)], dtype=object)

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y, dtype=object)))
