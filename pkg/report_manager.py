"""
Report Manager
==============

Check records and reports, and the JSON store that suite runs write into:
one file per suite plus ``summary.json``.
"""

import json
import logging
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

SCHEMA_VERSION = 1

PASS = "pass"
FAIL = "fail"
ERROR = "error"


@dataclass
class CheckRecord:
    name: str
    anchor: str
    status: str
    residual: float
    tolerance: float
    witness_ref: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        residual = self.residual
        # json has no NaN/inf
        if not math.isfinite(residual):
            residual = str(residual)
        return {
            "name": self.name,
            "anchor": self.anchor,
            "status": self.status,
            "residual": residual,
            "tolerance": self.tolerance,
            "witness_ref": self.witness_ref,
        }


@dataclass
class CheckReport:
    """Outcome of one verification: a list of named records with residuals."""

    suite: str
    scenario: Dict[str, Any] = field(default_factory=dict)
    records: List[CheckRecord] = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, name: str, anchor: str, residual: float, tolerance: float,
            witness_ref: Optional[str] = None) -> CheckRecord:
        """
        Record a residual-type check; it passes iff ``residual <= tolerance``.

        Args:
            name: dotted record name, unique within the report
            anchor: the statement the check certifies
            residual: measured defect (NaN counts as failure)
            tolerance: admissible defect
            witness_ref: optional reference to a witness or extra data

        Returns:
            The appended record
        """
        residual = float(residual)
        status = PASS if residual <= tolerance else FAIL
        record = CheckRecord(name, anchor, status, residual, float(tolerance), witness_ref)
        if status == FAIL:
            logging.getLogger(__name__).warning(
                f"[{self.suite}] {name} failed: residual {residual:.3e} > {tolerance:.1e}")
        self.records.append(record)
        return record

    def add_flag(self, name: str, anchor: str, ok: bool, witness_ref: Optional[str] = None) -> CheckRecord:
        return self.add(name, anchor, 0.0 if ok else 1.0, 0.0, witness_ref)

    def add_error(self, name: str, message: str) -> CheckRecord:
        record = CheckRecord(name, "suite execution", ERROR, float("nan"), 0.0, message)
        self.records.append(record)
        return record

    def merge(self, other: "CheckReport", prefix: str = "") -> "CheckReport":
        for rec in other.records:
            self.records.append(CheckRecord(prefix + rec.name, rec.anchor, rec.status,
                                            rec.residual, rec.tolerance, rec.witness_ref))
        return self

    @property
    def passed(self) -> bool:
        return all(r.status == PASS for r in self.records)

    def failures(self) -> List[CheckRecord]:
        return [r for r in self.records if r.status != PASS]

    def record(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def summary(self) -> str:
        n_fail = len(self.failures())
        state = "PASS" if n_fail == 0 else f"FAIL ({n_fail} of {len(self.records)})"
        return f"{self.suite}: {state}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "suite": self.suite,
            "scenario": self.scenario,
            "overall_result": PASS if self.passed else FAIL,
            "records": [r.to_dict() for r in sorted(self.records, key=lambda r: r.name)],
            "wall_time": self.wall_time,
            "versions": library_versions(),
            "timestamp": datetime.now().isoformat(),
        }


def library_versions() -> Dict[str, str]:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


class ReportManager:
    """Stores suite reports and the run summary in an output directory."""

    def __init__(self, out_dir: str = "reports"):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(__name__)

    def save_report(self, report: CheckReport) -> Path:
        """
        Write one suite report as ``<suite>.json``.

        Args:
            report: the finished report

        Returns:
            Path of the written file
        """
        try:
            path = self.out_dir / f"{report.suite}.json"
            with open(path, "w") as f:
                json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            self.logger.info(f"Wrote report {path}")
            return path
        except Exception as e:
            self.logger.error(f"Failed to write report for {report.suite}: {e}")
            raise

    def save_summary(self, reports: List[CheckReport], config: Dict[str, Any]) -> Path:
        summary = {
            "schema": SCHEMA_VERSION,
            "config": config,
            "suites": {
                r.suite: {
                    "overall_result": PASS if r.passed else FAIL,
                    "n_records": len(r.records),
                    "failures": sorted(rec.name for rec in r.failures()),
                }
                for r in reports
            },
            "overall_result": PASS if all(r.passed for r in reports) else FAIL,
            "timestamp": datetime.now().isoformat(),
        }
        path = self.out_dir / "summary.json"
        try:
            with open(path, "w") as f:
                json.dump(summary, f, indent=2, sort_keys=True)
            self.logger.info(f"Wrote summary {path}")
        except Exception as e:
            self.logger.error(f"Failed to write summary: {e}")
            raise
        return path

    def load_report(self, suite: str) -> Optional[Dict[str, Any]]:
        path = self.out_dir / f"{suite}.json"
        try:
            if not path.exists():
                self.logger.warning(f"No report for suite {suite}")
                return None
            with open(path, "r") as f:
                return json.load(f)
        except Exception as e:
            self.logger.error(f"Failed to load report {suite}: {e}")
            return None

    def list_reports(self) -> List[Dict[str, Any]]:
        """Short descriptors of every stored suite report, sorted by suite name."""
        out = []
        for path in sorted(self.out_dir.glob("*.json")):
            if path.name == "summary.json":
                continue
            data = self.load_report(path.stem)
            if data is None:
                continue
            out.append({
                "suite": data.get("suite", path.stem),
                "overall_result": data.get("overall_result"),
                "n_records": len(data.get("records", [])),
                "timestamp": data.get("timestamp"),
            })
        return out

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.out_dir / name
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        self.logger.info(f"Wrote {path}")
        return path
