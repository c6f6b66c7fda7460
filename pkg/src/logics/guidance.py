"""
Per-gene guidance term: association of each gene with a clinical outcome,
expressed as a (pseudo) R-squared and min-max adjusted to [0, 1].
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core import ClinicalOutcome, ExpressionMatrix
from src.errors import (
    ClusteringError,
    ConstantPredictor,
    DegenerateRange,
    DimensionMismatch,
    InvalidOutcome,
    InvalidParameter,
    SeparationDetected,
)
from src.logics.regression import fit_cox, fit_logistic, fit_ordinal

logger = logging.getLogger(__name__)

STATISTICS = ("r2", "abs_rho")


@dataclass(frozen=True)
class GuidanceVector:
    u: np.ndarray
    raw_r2: np.ndarray
    outcome_kind: str
    gene_ids: tuple = ()

    def __len__(self):
        return len(self.u)


def guidance_continuous(x_g, y, statistic: str = "r2") -> float:
    """OLS R-squared of y on (1, x_g), i.e. the squared Pearson correlation; |rho| when statistic='abs_rho'."""
    x_g = np.asarray(x_g, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x_g) != len(y):
        raise DimensionMismatch("predictor and outcome differ in length")
    if len(y) < 3:
        raise InvalidParameter("n", "continuous guidance needs at least 3 samples")
    dx = x_g - x_g.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    if sxx == 0:
        raise ConstantPredictor("predictor is constant")
    syy = dy @ dy
    if syy == 0:
        return 0.0
    rho = (dx @ dy) / np.sqrt(sxx * syy)
    rho = float(np.clip(rho, -1.0, 1.0))
    return abs(rho) if statistic == "abs_rho" else rho * rho


def _continuous_all(values: np.ndarray, y: np.ndarray, statistic: str) -> np.ndarray:
    """Vectorised guidance_continuous over every row; constant rows are flagged with NaN."""
    dx = values - values.mean(axis=1, keepdims=True)
    dy = y - y.mean()
    sxx = np.einsum("ij,ij->i", dx, dx)
    syy = dy @ dy
    if syy == 0:
        return np.where(sxx == 0, np.nan, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0)
    rho[sxx == 0] = np.nan
    return np.abs(rho) if statistic == "abs_rho" else rho * rho


def guidance_glm(x_g, outcome: ClinicalOutcome, on_separation: str = "warn") -> float:
    """Cox-Snell pseudo-R2 from a logistic (binary) or proportional-odds (ordinal) fit."""
    if outcome.kind == "binary":
        fitter = fit_logistic
    elif outcome.kind == "ordinal":
        fitter = fit_ordinal
    else:
        raise InvalidOutcome(f"guidance_glm handles binary or ordinal outcomes, got '{outcome.kind}'")
    try:
        return fitter(x_g, outcome.y).pseudo_r2
    except SeparationDetected as exc:
        if on_separation == "raise":
            raise
        logger.warning("%s; using the last stable value %.4f", exc, exc.value)
        return exc.value


def guidance_survival(x_g, times, events) -> float:
    """Cox-Snell pseudo-R2 from a univariate Cox model with Breslow ties."""
    return fit_cox(x_g, times, events).pseudo_r2


def adjust_pseudo_r2(raw) -> np.ndarray:
    """Min-max rescale raw R-squared values to [0, 1]."""
    raw = np.asarray(raw, dtype=float)
    if raw.size < 2:
        raise DegenerateRange("min-max adjustment needs at least 2 genes")
    low, high = raw.min(), raw.max()
    if high - low < 1e-12:
        raise DegenerateRange(f"raw R-squared values span less than 1e-12 (min={low}, max={high})")
    return (raw - low) / (high - low)


def _gene_statistic(x_g, outcome: ClinicalOutcome, statistic: str) -> float:
    if outcome.kind == "continuous":
        return guidance_continuous(x_g, outcome.y, statistic)
    if outcome.kind == "survival":
        return guidance_survival(x_g, outcome.y, outcome.event)
    return guidance_glm(x_g, outcome)


def compute_guidance(expr: ExpressionMatrix, outcome: ClinicalOutcome, statistic: str = "r2") -> GuidanceVector:
    """Fit every gene against the outcome and min-max adjust the resulting R-squared values."""
    if statistic not in STATISTICS:
        raise InvalidParameter("statistic", f"statistic must be one of {STATISTICS}")
    if len(outcome) != expr.n_samples:
        raise DimensionMismatch(
            f"outcome has {len(outcome)} samples but expression has {expr.n_samples}"
        )

    if outcome.kind == "continuous":
        raw = _continuous_all(expr.values, outcome.y, statistic)
        for g in np.flatnonzero(np.isnan(raw)):
            logger.warning("Guidance fit failed for gene %s: predictor is constant", expr.gene_ids[g])
        raw = np.nan_to_num(raw, nan=0.0)
    else:
        raw = np.zeros(expr.n_genes)
        for g in range(expr.n_genes):
            try:
                raw[g] = _gene_statistic(expr.values[g], outcome, statistic)
            except ClusteringError as exc:
                logger.warning("Guidance fit failed for gene %s: %s", expr.gene_ids[g], exc)
                raw[g] = 0.0

    logger.info("Computed %s guidance for %d genes", outcome.kind, expr.n_genes)
    return GuidanceVector(adjust_pseudo_r2(raw), raw, outcome.kind, expr.gene_ids)
