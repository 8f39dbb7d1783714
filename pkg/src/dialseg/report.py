"""Render :class:`MetricsReport` objects as Markdown, CSV and JSON."""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from .metrics import Aggregate, MetricsReport

NA = "n/a"
# (metric key, column label) in table order
COLUMNS = (
    ("entropy", "Entropy ↓"),
    ("purity", "Purity ↑"),
    ("adjacent_js", "Adjacent JS ↑"),
    ("bcr", "BCR ↑"),
    ("human_ai_js", "Human–AI JS ↓"),
)


def fmt_mean(x: float | None) -> str:
    return NA if x is None else f"{x:.3f}"


def fmt_bound(x: float) -> str:
    return f"{x:.2f}"


def fmt_cell(agg: Aggregate) -> str:
    if agg.mean is None:
        return NA
    if agg.ci is None:
        return f"{fmt_mean(agg.mean)} [{NA}]"
    lo, hi = agg.ci
    return f"{fmt_mean(agg.mean)} [{fmt_bound(lo)}, {fmt_bound(hi)}]"


def fmt_granularity(report: MetricsReport) -> str:
    sd = NA if report.k_sd is None else f"{report.k_sd:.2f}"
    return f"{report.k_mean:.2f} ({sd})"


def to_markdown(reports: Sequence[MetricsReport], title: str | None = None) -> str:
    """Table with Granularity / Consistency / Distinctiveness / Rater Agreement groups.

    Means carry 3 decimals, CI bounds 2, K is ``mean (SD)``.
    """
    lines = []
    if title:
        lines += [f"## {title}", ""]
    lines.append("| | Granularity | Consistency | | Distinctiveness | | Rater Agreement |")
    lines.append("|---|---|---|---|---|---|---|")
    lines.append("| **Method** | K Mean (SD) | " + " | ".join(label for _, label in COLUMNS) + " |")
    for rep in reports:
        cells = [rep.method, fmt_granularity(rep)] + [fmt_cell(rep.aggregate(key)) for key, _ in COLUMNS]
        lines.append("| " + " | ".join(cells) + " |")
    if reports:
        cfg = reports[0].config
        lines.append("")
        lines.append(
            f"Values are mean [{int(round(cfg.ci_level * 100))}% CI] over sessions "
            f"(percentile bootstrap, {cfg.bootstrap_iterations} resamples, seed {cfg.seed}); "
            f"per-rater metrics use rater '{cfg.table_rater}'; unlabeled utterances: "
            f"{'counted as a none category' if cfg.unlabeled == 'none' else 'excluded'}."
        )
    return "\n".join(lines) + "\n"


def to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "metric", "rater", "mean", "ci_lo", "ci_hi", "n", "n_undefined"])
    for rep in reports:
        w.writerow([rep.method, "K", "", _num(rep.k_mean), "", "", len(rep.sessions), 0])
        w.writerow([rep.method, "K_sd", "", _num(rep.k_sd), "", "", len(rep.sessions), 0])
        for key, agg in rep.aggregates.items():
            metric, _, rater = key.partition("[")
            ci = agg.ci or (None, None)
            w.writerow([rep.method, metric, rater.rstrip("]"), _num(agg.mean), _num(ci[0]), _num(ci[1]), agg.n, agg.n_undefined])
    return buf.getvalue()


def sessions_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    raters = list(reports[0].raters) if reports else []
    header = ["method", "session_id", "T", "K"]
    for metric in ("entropy", "purity", "adjacent_js", "bcr"):
        header += [f"{metric}[{r}]" for r in raters]
    header.append("human_ai_js")
    w.writerow(header)
    for rep in reports:
        for row in rep.sessions:
            vals = [rep.method, row.session_id, row.T, row.K]
            for metric in ("entropy", "purity", "adjacent_js", "bcr"):
                vals += [_num(getattr(row, metric).get(r)) for r in raters]
            vals.append(_num(row.human_ai_js))
            w.writerow(vals)
    return buf.getvalue()


def to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps({"format_version": 1, "methods": [r.to_dict() for r in reports]}, indent=2, ensure_ascii=False) + "\n"


def _num(x) -> str:
    return "" if x is None else repr(float(x))
