import numpy as np
from scipy.stats import rankdata

from core.errors import EvaluationError
from .schemas import RocCurve


def roc_auc(scores, labels) -> RocCurve:
    """
    ROC curve and AUC for binary labels.

    AUC is the Mann-Whitney statistic from average ranks, so tied scores count
    ½ for every positive/negative pair they join.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise EvaluationError(f"{scores.size} scores for {labels.size} labels")
    if scores.size < 2:
        raise EvaluationError("need at least 2 scored samples")
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise EvaluationError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("both classes are needed for an AUC")

    ranks = rankdata(scores)
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-scores, kind="mergesort")
    ranked_scores = scores[order]
    tps = np.cumsum(labels[order])
    fps = np.cumsum(1 - labels[order])
    # last index of every run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(ranked_scores)), labels.size - 1]
    return RocCurve(
        fpr=np.r_[0.0, fps[cut] / n_neg],
        tpr=np.r_[0.0, tps[cut] / n_pos],
        thresholds=np.r_[np.inf, ranked_scores[cut]],
        auc=float(auc),
    )


def pairwise_auc(scores, labels) -> float:
    """Brute-force AUC over all positive/negative pairs, ties ½."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise EvaluationError("both classes are needed for an AUC")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size))
