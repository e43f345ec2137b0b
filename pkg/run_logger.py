#!/usr/bin/env python3
"""
Run Logger for kstab
Appends one JSON line per `kstab verify` run: suite, cases, row counts and the stage notes
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

STATUS_ICONS = {"PASSED": "✅", "FAILED": "❌", "ERROR": "❌"}


@dataclass
class RunLogEntry:
    """One stage note inside a run"""
    timestamp: str
    level: str  # INFO, WARNING, ERROR
    stage: str  # INIT, ROWS, COMPLETE
    message: str
    details: Dict[str, Any] = field(default_factory=dict)
    duration_ms: Optional[int] = None


@dataclass
class VerificationRun:
    run_id: str
    start_time: str
    end_time: Optional[str] = None
    status: str = "RUNNING"  # RUNNING, PASSED, FAILED, ERROR
    command: str = ""
    suite: str = ""
    config_path: str = ""
    cases: List[str] = field(default_factory=list)
    rows_total: int = 0
    rows_failed: int = 0
    total_duration_ms: Optional[int] = None
    log_entries: List[RunLogEntry] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VerificationRun":
        entries = [RunLogEntry(**entry) for entry in data.pop('log_entries', [])]
        return cls(log_entries=entries, **data)


class RunLogger:
    """Collects the notes of one command invocation; nothing is written without a log file"""

    def __init__(self, log_file: Optional[str] = None):
        self.log_file = Path(log_file) if log_file else None
        self.current_run: Optional[VerificationRun] = None
        self._started: Optional[float] = None

    def _elapsed_ms(self) -> Optional[int]:
        return None if self._started is None else int((time.perf_counter() - self._started) * 1000)

    def start_run(self, command: str, suite: str = "", config_path: str = "", cases: Sequence[str] = ()) -> str:
        self._started = time.perf_counter()
        run_id = f"run_{datetime.now().strftime('%Y%m%dT%H%M%S%f')}"
        self.current_run = VerificationRun(run_id=run_id, start_time=datetime.now().isoformat(), command=command,
                                           suite=suite, config_path=config_path, cases=list(cases))
        self.note("INIT", f"🚀 Starting {command} {suite}".rstrip(), run_id=run_id)
        return run_id

    def note(self, stage: str, message: str, level: str = "INFO", **details: Any):
        """Log a stage message and keep it on the current run"""
        logger.log(getattr(logging, level), f"[{stage}] {message}")
        if self.current_run:
            self.current_run.log_entries.append(RunLogEntry(
                timestamp=datetime.now().isoformat(), level=level, stage=stage, message=message,
                details=details, duration_ms=self._elapsed_ms()))

    def record_rows(self, rows: List[Dict[str, Any]]):
        """Count verification rows; every failing row becomes a WARNING note"""
        if not self.current_run:
            return
        failed = [row for row in rows if not row.get('pass', True)]
        self.current_run.rows_total += len(rows)
        self.current_run.rows_failed += len(failed)
        for row in failed:
            self.note("ROWS", f"⚠️ {row.get('suite')}/{row.get('case')}: {row.get('note') or 'outside tolerance'}",
                      level="WARNING", lhs=row.get('lhs'), rhs=row.get('rhs'), tol=row.get('tol'))

    def end_run(self, status: str = "PASSED"):
        run = self.current_run
        if not run:
            return
        run.end_time = datetime.now().isoformat()
        run.status = status
        run.total_duration_ms = self._elapsed_ms()
        self.note("COMPLETE", f"{STATUS_ICONS.get(status, '✅')} Run {status.lower()}",
                  rows_total=run.rows_total, rows_failed=run.rows_failed)
        self._append(run)
        self.current_run = None
        self._started = None

    def _append(self, run: VerificationRun):
        if self.log_file is None:
            return
        try:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_file, 'a', encoding='utf-8') as f:
                f.write(json.dumps(asdict(run), ensure_ascii=False, default=str) + '\n')
        except OSError as e:
            logger.error(f"❌ Failed to save run log: {e}")

    def get_recent_runs(self, limit: int = 50) -> List[VerificationRun]:
        """Most recent runs first; an unreadable ledger yields no runs"""
        if self.log_file is None or not self.log_file.exists():
            return []
        try:
            with open(self.log_file, 'r', encoding='utf-8') as f:
                lines = [line for line in f if line.strip()]
            runs = [VerificationRun.from_dict(json.loads(line)) for line in lines[-limit:]]
        except (OSError, ValueError, TypeError) as e:
            logger.error(f"❌ Failed to load run log: {e}")
            return []
        return runs[::-1]
