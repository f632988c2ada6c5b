"""Histograms, summary statistics, least squares and report export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ExperimentReport, Histogram, RegressionFit, canonical_json, to_jsonable
from .errors import EmptyInput, RankDeficient


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    stdev: float
    min: float
    p50: float
    p95: float
    max: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("SummaryStats needs n >= 1")
        if not self.min <= self.p50 <= self.p95 <= self.max:
            raise ValueError("percentiles out of order")

    def to_dict(self):
        return {"n": self.n, "mean": self.mean, "stdev": self.stdev, "min": self.min,
                "p50": self.p50, "p95": self.p95, "max": self.max}


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[rank - 1]


def summarize(samples) -> SummaryStats:
    """
    Nearest-rank percentiles and sample standard deviation.

    A single sample has stdev 0 by convention.
    """
    xs = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if xs.size == 0:
        raise EmptyInput("summarize needs at least one sample")
    n = int(xs.size)
    stdev = float(np.std(xs, ddof=1)) if n > 1 else 0.0
    return SummaryStats(
        n=n,
        mean=float(xs.mean()),
        stdev=stdev,
        min=float(xs[0]),
        p50=float(nearest_rank(xs, 50)),
        p95=float(nearest_rank(xs, 95)),
        max=float(xs[-1]),
    )


def build_histogram(samples, bin_width: float, origin: float = 0.0,
                    num_bins: int | None = None) -> Histogram:
    """
    Bin ``samples`` on the grid ``origin + i * bin_width``.

    Without ``num_bins`` the histogram spans the occupied bins only and its
    origin moves to the first of them. With ``num_bins`` the bins start at
    ``origin``. Samples that fall outside (below ``origin`` or past the last
    bin) are clamped into the edge bin and counted in ``overflow``.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    xs = np.asarray(samples, dtype=float).reshape(-1)
    if xs.size == 0:
        raise EmptyInput("build_histogram needs at least one sample")
    idx = np.floor((xs - origin) / bin_width).astype(np.int64)
    if num_bins is None:
        lo = max(int(idx.min()), 0)
        hi = max(int(idx.max()), lo)
    else:
        if num_bins < 1:
            raise ValueError("num_bins must be >= 1")
        lo, hi = 0, num_bins - 1
    outside = (idx < lo) | (idx > hi)
    idx = np.clip(idx, lo, hi) - lo
    counts = np.bincount(idx, minlength=hi - lo + 1)
    return Histogram(origin=origin + lo * bin_width, bin_width=float(bin_width),
                     counts=tuple(int(c) for c in counts), n=int(xs.size),
                     overflow=int(outside.sum()))


def least_squares(X, y, names: Sequence[str] | None = None) -> RegressionFit:
    """
    Ordinary least squares with an implicit intercept column.

    ``X`` holds one column per predictor (no intercept). Solved through a QR
    factorisation of the augmented design matrix.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    if y.size == 0:
        raise EmptyInput("least_squares needs data")
    p = X.shape[1]
    if names is None:
        names = [f"x{i}" for i in range(p)]
    if len(names) != p:
        raise ValueError("one name per predictor column required")
    A = np.column_stack([np.ones(y.size), X])
    if A.shape[0] < A.shape[1]:
        raise RankDeficient(f"{A.shape[0]} observations for {A.shape[1]} parameters")
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(A, axis=0)
    tol = max(A.shape) * np.finfo(float).eps * 1e3
    if np.any(diag <= tol * np.maximum(scale, 1.0)):
        raise RankDeficient("design matrix does not have full column rank")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - A @ beta
    rss = float(resid @ resid)
    return RegressionFit(intercept_w=float(beta[0]),
                         coef={name: float(b) for name, b in zip(names, beta[1:])},
                         rss=rss, n=int(y.size))


def _report_rows(report: ExperimentReport):
    res = report.results
    rows = res.get("samples", [])
    columns = list(res.get("columns") or (rows[0].keys() if rows else []))
    return columns, rows


def _fmt(value) -> str:
    value = to_jsonable(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export(obj, format: str) -> bytes:
    """
    Serialize a report or histogram.

    ``json`` is the canonical report form (round-trips through
    `ExperimentReport.from_json`). ``csv`` and ``gnuplot`` emit the per-sample
    table named by ``results["columns"]``; for a `Histogram` both emit one
    ``bin_center count`` row per bin.
    """
    if format == "json":
        if isinstance(obj, ExperimentReport):
            return obj.to_json().encode()
        return canonical_json(obj).encode()

    if isinstance(obj, Histogram):
        columns = ["bin_center", "count"]
        rows = [dict(zip(columns, r)) for r in zip(obj.centers, obj.counts)]
    elif isinstance(obj, ExperimentReport):
        columns, rows = _report_rows(obj)
    else:
        raise TypeError(f"cannot export {type(obj).__name__}")

    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
        return buf.getvalue().encode()
    if format == "gnuplot":
        lines = ["# " + " ".join(columns)]
        for row in rows:
            lines.append(" ".join(_fmt(row.get(c, "nan")).replace(" ", "_") for c in columns))
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown export format {format!r}")


def load_report(data: bytes | str) -> ExperimentReport:
    if isinstance(data, bytes):
        data = data.decode()
    return ExperimentReport.from_dict(json.loads(data))
