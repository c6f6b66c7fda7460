"""Evaluation metrics: ARI, Jaccard, gene-selection AUC, silhouette and the cluster log-rank test."""

import logging
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from lifelines.statistics import multivariate_logrank_test
from scipy.spatial.distance import pdist, squareform
from sklearn.metrics import adjusted_rand_score, roc_auc_score, silhouette_samples

from src.errors import BothEmpty, InvalidParameter, LengthMismatch, NoEvents, SingleClassTruth, SingleCluster

logger = logging.getLogger(__name__)

METRICS = ("ari", "jaccard", "auc", "silhouette_mean", "logrank_p")


@dataclass(frozen=True)
class EvaluationReport:
    ari: Optional[float] = None
    jaccard: Optional[float] = None
    auc: Optional[float] = None
    silhouette_mean: Optional[float] = None
    logrank_p: Optional[float] = None
    n_selected: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def adjusted_rand_index(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"label vectors differ in length: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise InvalidParameter("n", "ARI needs at least 2 samples")
    return float(adjusted_rand_score(a, b))


def jaccard_index(s1: Iterable, s2: Iterable) -> float:
    s1, s2 = set(s1), set(s2)
    union = s1 | s2
    if not union:
        raise BothEmpty("Jaccard index of two empty sets is undefined")
    return len(s1 & s2) / len(union)


def gene_selection_auc(P, truth) -> float:
    """ROC-AUC of 1 - P_g against intrinsic flags; ties count one half."""
    P = np.asarray(P, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if P.shape != truth.shape:
        raise LengthMismatch("local FDR and truth vectors differ in length")
    if truth.all() or not truth.any():
        raise SingleClassTruth("truth needs both intrinsic and non-intrinsic genes")
    return float(roc_auc_score(truth, 1.0 - P))


def silhouette_mean(expr_selected, labels) -> float:
    """
    Mean silhouette over samples with Euclidean distance between columns of the
    m x n selected-gene matrix. Singleton clusters contribute 0.
    """
    values = np.asarray(expr_selected, dtype=float)
    labels = np.asarray(labels)
    if values.ndim != 2 or values.shape[1] != len(labels):
        raise LengthMismatch("expression columns and labels differ in length")
    n_clusters = len(np.unique(labels))
    if n_clusters < 2:
        raise SingleCluster("silhouette needs at least 2 clusters")
    if n_clusters == len(labels):
        return 0.0
    distances = squareform(pdist(values.T, metric="euclidean"))
    return float(np.mean(silhouette_samples(distances, labels, metric="precomputed")))


def logrank_p_value(times, events, labels) -> float:
    """P-value of the K-group log-rank test that survival does not differ between clusters."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    labels = np.asarray(labels)
    if not len(times) == len(events) == len(labels):
        raise LengthMismatch("survival times, events and labels differ in length")
    if len(np.unique(labels)) < 2:
        raise SingleCluster("the log-rank test needs at least 2 clusters")
    if not events.any():
        raise NoEvents("no events observed; the log-rank test is undefined")
    return float(multivariate_logrank_test(times, labels, events).p_value)


def evaluate(P=None, selected=None, labels=None, truth_labels=None, truth_intrinsic=None,
             expr_selected=None, survival=None) -> EvaluationReport:
    """Assemble whichever metrics the available inputs allow."""
    report = {}
    if labels is not None and truth_labels is not None:
        report["ari"] = adjusted_rand_index(truth_labels, labels)
    if truth_intrinsic is not None:
        truth_set = set(np.flatnonzero(truth_intrinsic).tolist())
        if selected is not None:
            report["jaccard"] = jaccard_index(set(np.asarray(selected).tolist()), truth_set)
        if P is not None:
            report["auc"] = gene_selection_auc(P, truth_intrinsic)
    if expr_selected is not None and labels is not None and len(expr_selected) > 0:
        try:
            report["silhouette_mean"] = silhouette_mean(expr_selected, labels)
        except SingleCluster as exc:
            logger.warning("Silhouette skipped: %s", exc)
    if survival is not None and labels is not None:
        try:
            report["logrank_p"] = logrank_p_value(survival.y, survival.event, labels)
        except (SingleCluster, NoEvents) as exc:
            logger.warning("Log-rank test skipped: %s", exc)
    if selected is not None:
        report["n_selected"] = int(len(selected))
    return EvaluationReport(**report)


def aggregate_reports(reports) -> pd.DataFrame:
    """Mean, standard error and replicate count of each metric across reports."""
    frame = pd.DataFrame([r.to_dict() if isinstance(r, EvaluationReport) else r for r in reports])
    rows = []
    for metric in METRICS:
        if metric not in frame:
            continue
        values = frame[metric].dropna().astype(float)
        if values.empty:
            continue
        se = values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else float("nan")
        rows.append({"metric": metric, "mean": values.mean(), "se": se, "n": len(values)})
    return pd.DataFrame(rows, columns=["metric", "mean", "se", "n"])
