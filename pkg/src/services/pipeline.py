"""
Subcommand implementations: simulate, guidance, fit, select-k, evaluate, sweep
and replicates. Each writes `resolved_config.env` to its output directory
before doing any heavy work, and every output is a pure function of the
inputs, the resolved config and the seed.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.core import ClinicalOutcome, ExpressionMatrix, PosteriorTrace, filter_low_expression, standardize_genes
from src.errors import DataError, MissingTruth
from src.logics.guidance import GuidanceVector, compute_guidance
from src.logics.inference import (
    ClusterDecision,
    GeneDecision,
    bic,
    canonical_relabel,
    cluster_decision,
    local_fdr,
    select_genes,
    select_k,
)
from src.logics.sampler import run_gibbs
from src.metrics import EvaluationReport, aggregate_reports, evaluate
from src.services import io
from src.services.config import RunConfig
from src.simulation import SimulatedDataset, simulate_dataset

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.env"


@dataclass
class FitOutcome:
    expr: ExpressionMatrix
    trace: PosteriorTrace
    genes: GeneDecision
    clusters: ClusterDecision
    bic: float
    report: Optional[EvaluationReport] = None


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out / RESOLVED_CONFIG)
    logger.info("Resolved config written to %s", out / RESOLVED_CONFIG)
    return out


def _load_standardized(cfg: RunConfig) -> ExpressionMatrix:
    if not cfg.expression:
        raise DataError("an expression file is required (--expression)")
    raw = io.load_expression(cfg.expression)
    if cfg.filter_fraction > 0:
        raw = filter_low_expression(raw, cfg.filter_fraction)
        logger.info("Kept %d genes after filtering %.0f%% low-expression genes", len(raw), 100 * cfg.filter_fraction)
    return standardize_genes(raw)


def _guidance_for(expr: ExpressionMatrix, cfg: RunConfig, out: Optional[Path] = None):
    if cfg.no_guidance:
        return None
    if cfg.guidance:
        logger.info("Loading guidance from %s", cfg.guidance)
        return io.load_guidance(cfg.guidance, expr.gene_ids)
    if not cfg.clinical:
        raise DataError("guided fitting needs --clinical or --guidance (or pass --no-guidance)")
    outcome = io.load_outcome(cfg.clinical, cfg.outcome_kind, expr.sample_ids, cfg.outcome_column,
                              cfg.time_column, cfg.event_column)
    guidance = compute_guidance(expr, outcome, cfg.guidance_statistic)
    if out is not None:
        io.write_guidance(guidance, out / "guidance.tsv")
    return guidance.u


def decide(expr: ExpressionMatrix, trace: PosteriorTrace, cfg: RunConfig) -> FitOutcome:
    P = local_fdr(trace)
    genes = select_genes(P, **cfg.selection_mode())
    clusters = canonical_relabel(cluster_decision(trace))
    value = bic(expr, trace, penalty=cfg.bic_penalty)
    logger.info("Selected %d genes (eta %.4g, achieved FDR %s), BIC %.2f",
                len(genes.selected), genes.eta, genes.achieved_fdr, value)
    return FitOutcome(expr, trace, genes, clusters, value)


def write_decisions(outcome: FitOutcome, path) -> Path:
    expr, genes, clusters = outcome.expr, outcome.genes, outcome.clusters
    mask = genes.selected_mask
    return io.write_json(
        {
            "genes": [
                {"id": gene_id, "P": float(genes.P[g]), "selected": bool(mask[g])}
                for g, gene_id in enumerate(expr.gene_ids)
            ],
            "samples": [
                {"id": sample_id, "label": int(clusters.labels[i]) + 1, "soft": clusters.soft[i].tolist()}
                for i, sample_id in enumerate(expr.sample_ids)
            ],
            "eta": genes.eta,
            "achieved_fdr": genes.achieved_fdr,
            "selection_mode": genes.mode,
            "n_selected": int(len(genes.selected)),
            "K": outcome.trace.K,
            "bic": outcome.bic,
        },
        path,
    )


def write_fit_outputs(outcome: FitOutcome, out: Path):
    expr = outcome.expr
    io.save_trace(outcome.trace, out / "trace", expr.gene_ids, expr.sample_ids)
    outcome.trace.diagnostics.to_csv(out / "diagnostics.tsv", sep="\t", index=False, lineterminator="\n")
    write_decisions(outcome, out / "decisions.json")
    selected = outcome.genes.selected
    pd.DataFrame({"P": outcome.genes.P[selected]}, index=[expr.gene_ids[g] for g in selected]).to_csv(
        out / "selected_genes.tsv", sep="\t", index_label="gene_id", lineterminator="\n"
    )
    pd.DataFrame({"label": outcome.clusters.labels + 1}, index=list(expr.sample_ids)).to_csv(
        out / "labels.tsv", sep="\t", index_label="sample_id", lineterminator="\n"
    )


def _survival_outcome(cfg: RunConfig, sample_ids) -> Optional[ClinicalOutcome]:
    if cfg.outcome_kind != "survival" or not cfg.clinical:
        return None
    return io.load_outcome(cfg.clinical, "survival", sample_ids, cfg.outcome_column,
                           cfg.time_column, cfg.event_column)


def _fit_report(outcome: FitOutcome, cfg: RunConfig) -> Optional[EvaluationReport]:
    """Reference-label agreement and survival separation of the MAP clusters, when either input is given."""
    expr = outcome.expr
    survival = _survival_outcome(cfg, expr.sample_ids)
    if not cfg.reference_labels and survival is None:
        return None
    reference = io.load_labels(cfg.reference_labels, expr.sample_ids) if cfg.reference_labels else None
    report = evaluate(
        selected=outcome.genes.selected,
        labels=outcome.clusters.labels,
        truth_labels=reference,
        expr_selected=expr.values[outcome.genes.selected],
        survival=survival,
    )
    if report.logrank_p is not None:
        logger.info("Log-rank p-value of survival across clusters: %.3g", report.logrank_p)
    return report


# Subcommands

def cmd_simulate(cfg: RunConfig) -> SimulatedDataset:
    out = _prepare_output(cfg)
    dataset = simulate_dataset(cfg.simulation_config())
    io.write_expression(dataset.expr, dataset.gene_ids, dataset.sample_ids, out / "expression.tsv")
    io.write_outcome(dataset.sample_ids, dataset.outcome, out / "outcome.tsv", cfg.outcome_column)
    io.write_truth(dataset, out / "truth.json")
    pd.DataFrame({"label": dataset.labels + 1}, index=list(dataset.sample_ids)).to_csv(
        out / "true_labels.tsv", sep="\t", index_label="sample_id", lineterminator="\n"
    )
    logger.info("Simulated dataset written to %s", out)
    return dataset


def cmd_guidance(cfg: RunConfig) -> GuidanceVector:
    out = _prepare_output(cfg)
    expr = _load_standardized(cfg)
    if not cfg.clinical:
        raise DataError("the guidance subcommand needs --clinical")
    outcome = io.load_outcome(cfg.clinical, cfg.outcome_kind, expr.sample_ids, cfg.outcome_column,
                              cfg.time_column, cfg.event_column)
    guidance = compute_guidance(expr, outcome, cfg.guidance_statistic)
    io.write_guidance(guidance, out / "guidance.tsv")
    return guidance


def cmd_fit(cfg: RunConfig, progress: bool = False) -> FitOutcome:
    out = _prepare_output(cfg)
    gibbs = cfg.gibbs_config(progress)
    expr = _load_standardized(cfg)
    u = _guidance_for(expr, cfg, out)
    trace = run_gibbs(expr, u, gibbs)
    outcome = decide(expr, trace, cfg)
    write_fit_outputs(outcome, out)
    outcome.report = _fit_report(outcome, cfg)
    if outcome.report is not None:
        io.write_json(outcome.report.to_dict(), out / "evaluation.json")
    logger.info("Fit outputs written to %s", out)
    return outcome


def cmd_select_k(cfg: RunConfig) -> FitOutcome:
    out = _prepare_output(cfg)
    gibbs = cfg.gibbs_config()
    expr = _load_standardized(cfg)
    u = _guidance_for(expr, cfg, out)
    selection = select_k(expr, u, gibbs, range(cfg.k_min, cfg.k_max + 1),
                         penalty=cfg.bic_penalty, workers=cfg.workers)
    selection.table.to_csv(out / "bic.tsv", sep="\t", index=False, lineterminator="\n")
    outcome = decide(expr, selection.traces[selection.best_k], cfg)
    write_fit_outputs(outcome, out)
    return outcome


def _run_dirs(cfg: RunConfig):
    if cfg.runs:
        return [Path(p.strip()) for p in cfg.runs.split(",") if p.strip()]
    return [Path(cfg.output_dir)]


def _positions(wanted, available, what: str, source) -> np.ndarray:
    """Index of every id in `wanted` within `available`; DataError when any is absent."""
    index = pd.Index(available).get_indexer(list(wanted))
    if np.any(index < 0):
        missing = [w for w, i in zip(wanted, index) if i < 0]
        raise DataError(f"{source} lacks {len(missing)} of the fitted {what}, e.g. '{missing[0]}'")
    return index


def _align_truth(truth: dict, gene_ids, sample_ids, source):
    """
    Truth labels and intrinsic flags reordered to the fitted gene and sample ids.
    Intrinsic genes dropped before fitting (e.g. by --filter-fraction) are not scored.
    """
    if "gene_ids" not in truth or "sample_ids" not in truth:
        raise DataError(f"{source} has no gene_ids/sample_ids to match the fit against")
    truth_genes, truth_samples = truth["gene_ids"], truth["sample_ids"]
    intrinsic = np.zeros(len(truth_genes), dtype=bool)
    intrinsic[truth["intrinsic"]] = True
    genes = _positions(gene_ids, truth_genes, "genes", source)
    samples = _positions(sample_ids, truth_samples, "samples", source)
    return np.asarray(truth["labels"])[samples], intrinsic[genes]


def evaluate_run(run_dir: Path, cfg: RunConfig) -> EvaluationReport:
    """Score one fit directory against the truth file (and the expression file for silhouette)."""
    decisions = io.read_json(run_dir / "decisions.json")
    gene_ids = [gene["id"] for gene in decisions["genes"]]
    sample_ids = [sample["id"] for sample in decisions["samples"]]
    P = np.array([gene["P"] for gene in decisions["genes"]])
    selected = np.array([g for g, gene in enumerate(decisions["genes"]) if gene["selected"]], dtype=int)
    labels = np.array([sample["label"] for sample in decisions["samples"]]) - 1

    expr_selected = None
    if cfg.expression:
        expr = _load_standardized(cfg)
        rows = _positions([gene_ids[g] for g in selected], expr.gene_ids, "genes", cfg.expression)
        columns = _positions(sample_ids, expr.sample_ids, "samples", cfg.expression)
        expr_selected = expr.values[np.ix_(rows, columns)]
    survival = _survival_outcome(cfg, sample_ids)

    truth_path = Path(cfg.truth) if cfg.truth else run_dir / "truth.json"
    try:
        truth = io.load_truth(truth_path)
    except MissingTruth as exc:
        logger.warning("%s; reporting silhouette, survival and labels only", exc)
        return evaluate(selected=selected, labels=labels, expr_selected=expr_selected, survival=survival)
    truth_labels, intrinsic = _align_truth(truth, gene_ids, sample_ids, truth_path)
    return evaluate(P=P, selected=selected, labels=labels, truth_labels=truth_labels,
                    truth_intrinsic=intrinsic, expr_selected=expr_selected, survival=survival)


def cmd_evaluate(cfg: RunConfig) -> pd.DataFrame:
    out = _prepare_output(cfg)
    rows = []
    for run_dir in _run_dirs(cfg):
        report = evaluate_run(run_dir, cfg)
        io.write_json(report.to_dict(), run_dir / "evaluation.json")
        rows.append({"run": str(run_dir), **report.to_dict()})
    table = pd.DataFrame(rows)
    table.to_csv(out / "evaluation.tsv", sep="\t", index=False, lineterminator="\n")
    summary = aggregate_reports(rows)
    summary.to_csv(out / "evaluation_summary.tsv", sep="\t", index=False, lineterminator="\n")
    return summary


# Sweep and replicates work on in-memory simulated data

def _fit_simulated(dataset: SimulatedDataset, cfg: RunConfig) -> EvaluationReport:
    expr = standardize_genes(dataset.expr, dataset.gene_ids, dataset.sample_ids)
    u = None
    if not cfg.no_guidance:
        u = compute_guidance(expr, ClinicalOutcome("continuous", dataset.outcome), cfg.guidance_statistic).u
    trace = run_gibbs(expr, u, cfg.gibbs_config())
    outcome = decide(expr, trace, cfg)
    return evaluate(
        P=outcome.genes.P,
        selected=outcome.genes.selected,
        labels=outcome.clusters.labels,
        truth_labels=dataset.labels,
        truth_intrinsic=dataset.intrinsic_mask,
        expr_selected=expr.values[outcome.genes.selected],
    )


def _sweep_point(args):
    cfg, dataset, value = args
    report = _fit_simulated(dataset, replace(cfg, **{cfg.sweep_axis: float(value)}))
    return {"axis": cfg.sweep_axis, "value": float(value), "ari": report.ari, "jaccard": report.jaccard}


def sweep_grid(cfg: RunConfig) -> np.ndarray:
    low, high = cfg.sweep_range()
    return np.linspace(low, high, cfg.sweep_points)


def cmd_sweep(cfg: RunConfig) -> pd.DataFrame:
    out = _prepare_output(cfg)
    grid = sweep_grid(cfg)
    dataset = simulate_dataset(cfg.simulation_config())
    jobs = [(cfg, dataset, value) for value in grid]
    logger.info("Sweeping %s over %d values in [%g, %g]", cfg.sweep_axis, len(grid), grid[0], grid[-1])
    rows = _map(_sweep_point, jobs, cfg.workers)
    table = pd.DataFrame(rows, columns=["axis", "value", "ari", "jaccard"])
    table.to_csv(out / "sweep.tsv", sep="\t", index=False, lineterminator="\n")
    return table


def _replicate(args):
    cfg, b = args
    cfg = replace(cfg, seed=cfg.seed + b)
    dataset = simulate_dataset(cfg.simulation_config())
    rows = []
    for method, unguided in (("guided", False), ("unguided", True)):
        report = _fit_simulated(dataset, replace(cfg, no_guidance=unguided))
        rows.append({"replicate": b, "seed": cfg.seed, "method": method, **report.to_dict()})
    return rows


def cmd_replicates(cfg: RunConfig) -> pd.DataFrame:
    out = _prepare_output(cfg)
    results = _map(_replicate, [(cfg, b) for b in range(cfg.replicates)], cfg.workers)
    table = pd.DataFrame([row for rows in results for row in rows])
    table.to_csv(out / "replicates.tsv", sep="\t", index=False, lineterminator="\n")
    summaries = []
    for method, group in table.groupby("method", sort=True):
        summary = aggregate_reports(group.to_dict("records"))
        summary.insert(0, "method", method)
        summaries.append(summary)
    summary = pd.concat(summaries, ignore_index=True)
    summary.to_csv(out / "replicates_summary.tsv", sep="\t", index=False, lineterminator="\n")
    return summary


def _map(func, jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, jobs))
    return [func(job) for job in jobs]
