"""Report emitters: per-class accuracy table (text + CSV) and JSON.

Accuracies are printed as percentages with two decimals and kappa with four;
the JSON keeps full precision.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .metrics import EvalReport


def format_table(report: EvalReport, title: str = "") -> str:
    names = report.class_names
    width = max([len("Class Name")] + [len(n) for n in names])
    support = report.confusion.sum(axis=1)
    lines = []
    if title:
        lines.append(title)
    header = f"{'Class No.':>9}  {'Class Name':<{width}}  {'Test':>7}  {'Accuracy (%)':>12}"
    lines += [header, "-" * len(header)]
    for i, name in enumerate(names):
        acc = report.per_class_acc[i]
        acc_s = "-" if np.isnan(acc) else f"{100 * acc:.2f}"
        lines.append(f"{i + 1:>9}  {name:<{width}}  {int(support[i]):>7}  {acc_s:>12}")
    lines.append("-" * len(header))
    lines.append(f"{'OA (%)':<{width + 11}}  {'':>7}  {100 * report.oa:>12.2f}")
    lines.append(f"{'AA (%)':<{width + 11}}  {'':>7}  {100 * report.aa:>12.2f}")
    lines.append(f"{'Kappa':<{width + 11}}  {'':>7}  {report.kappa:>12.4f}")
    return "\n".join(lines) + "\n"


def format_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "class_name", "n_test", "accuracy"])
    support = report.confusion.sum(axis=1)
    for i, name in enumerate(report.class_names):
        acc = report.per_class_acc[i]
        w.writerow([i + 1, name, int(support[i]), "" if np.isnan(acc) else repr(float(acc))])
    for key in ("oa", "aa", "kappa"):
        w.writerow([key, "", report.n_test, repr(float(getattr(report, key)))])
    return buf.getvalue()


def write_report(report: EvalReport, out_dir, stem: str = "report", title: str = "") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "txt": out / f"{stem}.txt",
        "csv": out / f"{stem}.csv",
        "json": out / f"{stem}.json",
    }
    paths["txt"].write_text(format_table(report, title))
    paths["csv"].write_text(format_csv(report))
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
