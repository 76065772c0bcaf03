from .ablation import AblationGrid, AblationRow, ablate
from .maps import PALETTE, PALETTE_VERSION, render_map
from .metrics import EvalReport, MetricsError, confusion_matrix, evaluate, metrics
from .report import format_table, write_report

__all__ = [
    "AblationGrid",
    "AblationRow",
    "EvalReport",
    "MetricsError",
    "PALETTE",
    "PALETTE_VERSION",
    "ablate",
    "confusion_matrix",
    "evaluate",
    "format_table",
    "metrics",
    "render_map",
    "write_report",
]
