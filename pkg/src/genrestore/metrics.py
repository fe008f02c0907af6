"""Reconstruction metrics and CSV reports."""

import csv
import io
import math

import numpy as np


def mse(x, x_hat):
    d = np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(x, x_hat, peak=1.0):
    """PSNR in dB, ``10 log10(peak^2 / MSE)``; ``inf`` when the inputs agree."""
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    e = mse(x, x_hat)
    if e == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / e)


def format_value(v):
    """Round-trip exact text for floats; ``inf``/``nan`` spelled out."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


class MetricsReport:
    """Rows keyed by (image, method) plus one aggregate-mean row per method."""

    def __init__(self, metric_columns, extra_columns=()):
        self.metric_columns = list(metric_columns)
        self.extra_columns = list(extra_columns)
        self.rows = []

    @property
    def columns(self):
        return ["image", "method", *self.metric_columns, *self.extra_columns]

    def add(self, image, method, **values):
        unknown = set(values) - set(self.metric_columns) - set(self.extra_columns)
        if unknown:
            raise KeyError(f"unknown report columns {sorted(unknown)}")
        self.rows.append({"image": image, "method": method, **values})

    @property
    def methods(self):
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def aggregates(self):
        out = []
        for method in self.methods:
            rows = [r for r in self.rows if r["method"] == method]
            agg = {"image": "mean", "method": method}
            for col in self.metric_columns:
                vals = [r.get(col) for r in rows]
                if any(v is None for v in vals):
                    agg[col] = None
                else:
                    agg[col] = float(np.mean(vals))
            out.append(agg)
        return out

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in [*self.rows, *self.aggregates()]:
            writer.writerow([format_value(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def aggregate(self, method, column):
        for agg in self.aggregates():
            if agg["method"] == method:
                return agg[column]
        raise KeyError(method)


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
