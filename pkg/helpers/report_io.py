# helpers/report_io.py
import csv
import json
import os
from typing import Dict, Iterable, List, Tuple

from utils import ensure_dir


def _default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(payload) -> str:
    return json.dumps(payload, indent=2, default=_default)


def write_json(path: str, payload):
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(payload) + "\n")


def read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_rates_csv(path: str, reports: Iterable):
    """One row per (n, p, eta, statistic, level) over one or more SimReports."""
    ensure_dir(os.path.dirname(path))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "p", "eta", "statistic", "level", "rate", "se", "replications",
                         "failures"])
        for rep in reports:
            for row in rep.rows():
                writer.writerow([row.n, row.p, row.eta, row.statistic, row.level, row.rate, row.se,
                                 rep.replications, rep.failures])


def write_curve_csv(path: str, curve: List[Tuple[float, float]]):
    ensure_dir(os.path.dirname(path))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["asymptotic_quantile", "relative_discrepancy"])
        for q, d in curve:
            writer.writerow([repr(q), repr(d)])


def sim_report_payload(reports) -> dict:
    if not isinstance(reports, (list, tuple)):
        return reports.to_dict()
    return {"reports": [r.to_dict() for r in reports]}


def statistic_values(payload: dict, index: int = 0) -> Tuple[int, Dict[str, List[float]]]:
    """(q, values per statistic) from a SimReport JSON payload; multi-report payloads use report `index`."""
    if "reports" in payload:
        reports = payload["reports"]
        if not reports:
            raise ValueError("report file holds no reports")
        if not 0 <= index < len(reports):
            raise ValueError(f"report index {index} out of range for {len(reports)} reports")
        payload = reports[index]
    if "values" not in payload or "q" not in payload:
        raise ValueError("not a simulation report: missing 'values' or 'q'")
    return int(payload["q"]), {k: list(v) for k, v in payload["values"].items()}


def render_test_table(report) -> str:
    """Plain-text layout of LR, LR*_a and LR**_a with p-values."""
    lines = [f"{'statistic':<10}{'value':>12}{'p-value':>12}",
             f"{'LR':<10}{report.lr:>12.4f}{report.pvalues[0]:>12.4f}",
             f"{'LR*a':<10}{report.lr_star:>12.4f}{report.pvalues[1]:>12.4f}",
             f"{'LR**a':<10}{report.lr_dstar:>12.4f}{report.pvalues[2]:>12.4f}",
             f"log rho = {report.log_rho:.6g}, q = {report.q}"]
    if report.flags:
        lines.append("flags: " + ", ".join(sorted(report.flags)))
    return "\n".join(lines)


def render_fit_table(names: List[str], theta, se) -> str:
    lines = [f"{'parameter':<16}{'estimate':>14}{'std.err':>14}"]
    for name, t, s in zip(names, theta, se):
        lines.append(f"{name:<16}{t:>14.6f}{s:>14.6f}")
    return "\n".join(lines)


def render_rates_table(reports) -> str:
    lines = [f"{'p':>3}{'n':>6}{'eta':>6} {'statistic':<10}{'level':>8}{'rate':>8}{'se':>8}"]
    for rep in reports:
        for row in rep.rows():
            lines.append(f"{row.p:>3}{row.n:>6}{row.eta:>6g} {row.statistic:<10}{row.level:>8g}"
                         f"{row.rate:>8.3f}{row.se:>8.3f}")
        if rep.unreliable:
            lines.append(f"  p={rep.config.p} n={rep.config.n} eta={rep.eta:g}: {rep.failures} of "
                         f"{rep.replications} replications failed (unreliable)")
    return "\n".join(lines)
