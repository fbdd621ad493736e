"""
RUN REPORTS
Per-run timing, scale and quality records, written as schema-versioned JSON lines.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import psutil

from .errors import InputError
from .metrics import AC_DEFINITION, QualityBlock

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STATUSES = ("ok", "OOT", "failed")


def resident_memory_mb() -> float:
    """Peak working set where the platform reports one, else current resident memory, in MiB."""
    info = psutil.Process().memory_info()
    return float(getattr(info, "peak_wset", info.rss)) / (1024 * 1024)


@dataclass
class RunReport:
    n: int
    m: int
    n_super: int
    k_init: int
    k_final: int
    feat_s: float = 0.0
    ffp_s: float = 0.0
    init_s: float = 0.0
    refine_s: float = 0.0
    total_s: float = 0.0
    metrics: Optional[QualityBlock] = None
    phase: str = "static"
    arm: str = "pipeline"
    status: str = "ok"
    error: str = ""
    graph_id: str = ""
    run_seed: int = 0
    threshold: float = 0.5
    precision: str = "float64"
    modularity_init: Optional[float] = None
    modularity_final: Optional[float] = None
    n_zero_rows: int = 0
    peak_rss_mb: float = 0.0
    ac_definition: str = AC_DEFINITION
    modularity_loss: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.n_super > self.n:
            raise InputError(f"n_super={self.n_super} exceeds n={self.n}")
        if self.status not in STATUSES:
            raise InputError(f"status must be one of {STATUSES}, got {self.status!r}")

    @property
    def phase_sum(self) -> float:
        return self.feat_s + self.ffp_s + self.init_s + self.refine_s

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InputError(f"unsupported report schema version {version}")
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise InputError(f"unknown report fields: {unknown}")
        values = dict(data)
        if values.get("metrics") is not None:
            values["metrics"] = QualityBlock(**values["metrics"])
        return cls(**values)


class ReportWriter:
    """Appends one JSON object per report to a ``.jsonl`` file."""

    def __init__(self, path: Union[str, Path], truncate: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if truncate:
            self.path.write_text("")

    def write(self, report: RunReport) -> None:
        with open(self.path, "a") as f:
            f.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")

    def write_all(self, reports: Iterable[RunReport]) -> None:
        for report in reports:
            self.write(report)


def read_reports(path: Union[str, Path]) -> List[RunReport]:
    path = Path(path)
    reports = []
    with open(path, "r") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                reports.append(RunReport.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise InputError(f"{path}:{line_no}: malformed report line: {e}") from e
    return reports
