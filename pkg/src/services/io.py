"""
Readers and writers for every file the pipeline consumes or produces.

Tables are TSV (CSV when the path ends in .csv), UTF-8, first column the row id.
Cluster labels are written 1-based.
"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.core import ClinicalOutcome, PosteriorTrace
from src.errors import DataError, MissingTruth

logger = logging.getLogger(__name__)


def _sep(path) -> str:
    return "," if str(path).lower().endswith(".csv") else "\t"


def read_table(path) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path, sep=_sep(path), index_col=0, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read table {path}: {exc}") from exc
    df.index = df.index.astype(str)
    df.columns = df.columns.astype(str)
    return df


def write_table(df: pd.DataFrame, path, index_label: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep=_sep(path), index_label=index_label, encoding="utf-8", lineterminator="\n")
    return path


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_json(payload, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_to_builtin) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read JSON {path}: {exc}") from exc


# Expression and clinical data

def load_expression(path) -> pd.DataFrame:
    """Gene x sample matrix; missing or non-numeric values are rejected."""
    df = read_table(path)
    if df.isna().to_numpy().any():
        raise DataError(f"expression file {path} contains missing values")
    try:
        df = df.astype(float)
    except ValueError as exc:
        raise DataError(f"expression file {path} contains non-numeric values: {exc}") from exc
    if df.index.has_duplicates:
        raise DataError(f"expression file {path} has duplicate gene ids")
    logger.info("Loaded expression %s: %d genes x %d samples", path, *df.shape)
    return df


def write_expression(values, gene_ids, sample_ids, path) -> Path:
    return write_table(pd.DataFrame(values, index=list(gene_ids), columns=list(sample_ids)), path, "gene_id")


def load_outcome(path, kind: str, sample_ids, column: str = "outcome", time_column: str = "time",
                 event_column: str = "event") -> ClinicalOutcome:
    """Read one clinical variable (or the survival time/event pair) aligned to `sample_ids`."""
    df = read_table(path)
    missing = [s for s in sample_ids if s not in df.index]
    if missing:
        raise DataError(f"clinical file {path} lacks {len(missing)} samples, e.g. '{missing[0]}'")
    df = df.loc[list(sample_ids)]
    columns = [time_column, event_column] if kind == "survival" else [column]
    for name in columns:
        if name not in df.columns:
            raise DataError(f"clinical file {path} has no column '{name}'")
        if df[name].isna().any():
            raise DataError(f"clinical column '{name}' in {path} has missing values")
    if kind == "survival":
        return ClinicalOutcome(kind, df[time_column].to_numpy(float), df[event_column].to_numpy(float),
                               tuple(sample_ids))
    return ClinicalOutcome(kind, df[column].to_numpy(float), sample_ids=tuple(sample_ids))


def write_outcome(sample_ids, values, path, column: str = "outcome") -> Path:
    return write_table(pd.DataFrame({column: values}, index=list(sample_ids)), path, "sample_id")


# Guidance

def write_guidance(guidance, path) -> Path:
    return write_table(pd.DataFrame({"u": guidance.u}, index=list(guidance.gene_ids)), path, "gene_id")


def load_guidance(path, gene_ids) -> np.ndarray:
    df = read_table(path)
    if "u" not in df.columns:
        raise DataError(f"guidance file {path} has no 'u' column")
    missing = [g for g in gene_ids if g not in df.index]
    if missing:
        raise DataError(f"guidance file {path} lacks {len(missing)} genes, e.g. '{missing[0]}'")
    values = df.loc[list(gene_ids), "u"].to_numpy(float)
    if not np.all(np.isfinite(values)):
        raise DataError(f"guidance file {path} has non-finite values")
    return values


# Truth

def write_truth(dataset, path) -> Path:
    return write_json(
        {
            "gene_ids": list(dataset.gene_ids),
            "sample_ids": list(dataset.sample_ids),
            "intrinsic": dataset.intrinsic.tolist(),
            "gene_group": dataset.gene_group.tolist(),
            "labels": (dataset.labels + 1).tolist(),
            "confounder_labels": (dataset.confounder_labels + 1).tolist(),
        },
        path,
    )


def load_truth(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingTruth(f"truth file not found: {path}")
    truth = read_json(path)
    truth["labels"] = np.asarray(truth["labels"]) - 1
    truth["intrinsic"] = np.asarray(truth["intrinsic"], dtype=int)
    return truth


def load_labels(path, sample_ids) -> np.ndarray:
    """Reference labels table (sample_id, label), aligned to `sample_ids`."""
    df = read_table(path)
    missing = [s for s in sample_ids if s not in df.index]
    if missing:
        raise DataError(f"label file {path} lacks {len(missing)} samples, e.g. '{missing[0]}'")
    return df.loc[list(sample_ids)].iloc[:, 0].to_numpy()


# Posterior trace

def save_trace(trace: PosteriorTrace, directory, gene_ids, sample_ids) -> Path:
    """
    summary.json with inclusion frequencies, soft assignments and posterior
    means; diagnostics.tsv with per-iteration scalars; when draws were kept,
    draws/<name>.bin (little-endian float64, row-major) described by draws.json.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(
        {
            "n_retained": trace.n_retained,
            "K": trace.K,
            "guided": trace.guided,
            "gene_ids": list(gene_ids),
            "sample_ids": list(sample_ids),
            "inclusion_frequency": trace.inclusion_frequency,
            "cluster_frequency": trace.cluster_frequency,
            "pi_mean": trace.pi_mean,
            "mu_mean": trace.mu_mean,
            "sigma2_mean": trace.sigma2_mean,
        },
        directory / "summary.json",
    )
    trace.diagnostics.to_csv(directory / "diagnostics.tsv", sep="\t", index=False, lineterminator="\n")

    if trace.draws:
        draw_dir = directory / "draws"
        draw_dir.mkdir(exist_ok=True)
        sidecar = {}
        for name in sorted(trace.draws):
            array = np.ascontiguousarray(trace.draws[name], dtype="<f8")
            array.tofile(draw_dir / f"{name}.bin")
            sidecar[name] = {"file": f"draws/{name}.bin", "shape": list(array.shape), "dtype": "<f8", "order": "C"}
        write_json(sidecar, directory / "draws.json")
    return directory


def load_draws(directory) -> dict:
    directory = Path(directory)
    sidecar = read_json(directory / "draws.json")
    return {
        name: np.fromfile(directory / meta["file"], dtype=meta["dtype"]).reshape(meta["shape"])
        for name, meta in sidecar.items()
    }
