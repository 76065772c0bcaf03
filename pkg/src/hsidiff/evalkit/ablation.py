"""Grid runner for (feature index, timestep, training fraction) sensitivity studies."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

CSV_FIELDS = ("feature_index", "timestep", "fraction", "oa", "aa", "kappa", "status")


@dataclass(frozen=True)
class AblationGrid:
    timesteps: tuple
    feature_indices: tuple
    fractions: tuple = (None,)  # None = use the configured split

    def cells(self):
        """Cells in table order: feature index outermost, then timestep, then fraction."""
        for f in self.feature_indices:
            for t in self.timesteps:
                for frac in self.fractions:
                    yield int(t), int(f), frac


@dataclass
class AblationRow:
    timestep: int
    feature_index: int
    fraction: float | None
    oa: float = math.nan
    aa: float = math.nan
    kappa: float = math.nan
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def ablate(grid: AblationGrid, run_cell, out_path=None) -> list[AblationRow]:
    """Evaluate every grid cell with ``run_cell(t, f, fraction) -> EvalReport``.

    A failing cell is recorded with its error and the run moves on.
    """
    rows = []
    for t, f, frac in grid.cells():
        row = AblationRow(t, f, frac)
        try:
            rep = run_cell(t, f, frac)
            row.oa, row.aa, row.kappa = rep.oa, rep.aa, rep.kappa
        except Exception as exc:  # recorded in-table, grid continues
            log.exception("ablation cell t=%s f=%s fraction=%s failed", t, f, frac)
            row.status = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
        rows.append(row)
    if out_path is not None:
        write_table(rows, out_path)
    return rows


def _frac_str(frac) -> str:
    return "config" if frac is None else f"{frac:g}"


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.feature_index, r.timestep, _frac_str(r.fraction), repr(r.oa), repr(r.aa), repr(r.kappa), r.status])
    return buf.getvalue()


def format_table(rows, dataset: str = "") -> str:
    """FeatureIndex | Timestamp | Fraction | OA(%) | AA(%) | kappa, grouped by feature index."""
    head = f"{'FeatureIndex':>12}  {'Timestamp':>9}  {'Fraction':>8}  {'OA(%)':>7}  {'AA(%)':>7}  {'kappa':>7}"
    lines = [dataset] if dataset else []
    lines += [head, "-" * len(head)]
    last_f = None
    for r in rows:
        if last_f is not None and r.feature_index != last_f:
            lines.append("-" * len(head))
        f_s = str(r.feature_index) if r.feature_index != last_f else ""
        last_f = r.feature_index
        if r.ok:
            vals = f"{100 * r.oa:>7.2f}  {100 * r.aa:>7.2f}  {r.kappa:>7.4f}"
        else:
            vals = f"{'failed':>7}  {'':>7}  {'':>7}"
        lines.append(f"{f_s:>12}  {r.timestep:>9}  {_frac_str(r.fraction):>8}  {vals}")
    return "\n".join(lines) + "\n"


def write_table(rows, out_path, dataset: str = "") -> dict:
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    txt_path = out.with_suffix(".txt")
    csv_path.write_text(format_csv(rows))
    txt_path.write_text(format_table(rows, dataset))
    return {"csv": csv_path, "txt": txt_path}


def read_csv(path) -> list[AblationRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            frac = None if rec["fraction"] == "config" else float(rec["fraction"])
            rows.append(
                AblationRow(int(rec["timestep"]), int(rec["feature_index"]), frac,
                            float(rec["oa"]), float(rec["aa"]), float(rec["kappa"]), rec["status"])
            )
    return rows
