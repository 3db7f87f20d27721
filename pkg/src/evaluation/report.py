"""
Attack reports: per-target rows, min/max/avg aggregates, CSV and plain-text rendering.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from utils.retry import retry_with_backoff, reraise_transient

logger = logging.getLogger(__name__)

Condition = Literal["no-RIR", "train-RIR", "test-RIR"]

CSV_HEADER = ["condition", "target", "epsilon", "noise_db", "n_attempts", "n_success", "success_rate"]


@dataclass
class TargetRow:
    target: int
    epsilon: float
    noise_db: float
    n_attempts: int
    n_success: int

    def __post_init__(self):
        if not 0 <= self.n_success <= self.n_attempts:
            raise ValueError(f"n_success {self.n_success} outside [0, {self.n_attempts}]")

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_attempts if self.n_attempts else 0.0


@dataclass
class TimingSummary:
    """Median wall-clock seconds per utterance."""

    apply_median_s: float
    individual_median_s: float
    n_utterances: int
    individual_success_rate: float
    apply_by_length: list[tuple[int, float]] = field(default_factory=list)

    @property
    def speedup(self) -> float:
        return self.individual_median_s / self.apply_median_s if self.apply_median_s > 0 else float("inf")

    def render_text(self) -> str:
        lines = [
            f"apply_perturbation  median {self.apply_median_s * 1e3:10.4f} ms",
            f"train_individual    median {self.individual_median_s * 1e3:10.1f} ms "
            f"(success {self.individual_success_rate:.2%})",
            f"speedup             {self.speedup:10.1f}x over {self.n_utterances} utterances",
        ]
        lines += [f"  apply @ {n:>8d} samples: {t * 1e3:.4f} ms" for n, t in self.apply_by_length]
        return "\n".join(lines)


@dataclass
class AttackReport:
    condition: Condition
    rows: list[TargetRow] = field(default_factory=list)
    timing: Optional[TimingSummary] = None

    def _rates(self) -> np.ndarray:
        return np.array([row.success_rate for row in self.rows])

    @property
    def min_success(self) -> float:
        return float(self._rates().min()) if self.rows else 0.0

    @property
    def max_success(self) -> float:
        return float(self._rates().max()) if self.rows else 0.0

    @property
    def avg_success(self) -> float:
        if not self.rows:
            return 0.0
        # Rounding in the mean may not cross the extremes
        return float(np.clip(self._rates().mean(), self.min_success, self.max_success))

    @property
    def mean_noise_db(self) -> float:
        finite = [row.noise_db for row in self.rows if np.isfinite(row.noise_db)]
        return float(np.mean(finite)) if finite else float("-inf")

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([
                self.condition,
                row.target,
                repr(row.epsilon),
                f"{row.noise_db:.4f}",
                row.n_attempts,
                row.n_success,
                f"{row.success_rate:.6f}",
            ])
        return buffer.getvalue()

    @retry_with_backoff
    def to_csv(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.to_csv_text(), encoding="utf-8")
        except OSError as e:
            reraise_transient(e)

    def render_text(self, labels: Optional[Sequence[str]] = None) -> str:
        """Aligned per-target table followed by the aggregate line."""
        lines = [
            f"Condition: {self.condition}",
            f"{'target':<10}{'epsilon':>10}{'noise dB':>10}{'attempts':>10}{'success':>10}{'rate':>9}",
        ]
        for row in self.rows:
            name = labels[row.target] if labels else str(row.target)
            lines.append(
                f"{name:<10}{row.epsilon:>10.4g}{row.noise_db:>10.2f}{row.n_attempts:>10d}"
                f"{row.n_success:>10d}{row.success_rate:>9.2%}"
            )
        lines.append(
            f"min {self.min_success:.2%}  max {self.max_success:.2%}  avg {self.avg_success:.2%}  "
            f"noise {self.mean_noise_db:.2f} dB"
        )
        if self.timing is not None:
            lines.append(self.timing.render_text())
        return "\n".join(lines)


def render_sweep_table(reports: Sequence[AttackReport]) -> str:
    """One line per epsilon: noise level against min/max/avg success."""
    lines = [f"{'noise level (dB)':>18}{'min':>10}{'max':>10}{'avg':>10}"]
    for report in reports:
        lines.append(
            f"{report.mean_noise_db:>18.2f}{report.min_success:>10.2%}"
            f"{report.max_success:>10.2%}{report.avg_success:>10.2%}"
        )
    return "\n".join(lines)


@retry_with_backoff
def write_reports_csv(reports: Sequence[AttackReport], path: str | Path) -> None:
    """Several reports in one CSV with a single header line."""
    body = [reports[0].to_csv_text()] if reports else [",".join(CSV_HEADER) + "\n"]
    body += [report.to_csv_text().split("\n", 1)[1] for report in reports[1:]]
    try:
        Path(path).write_text("".join(body), encoding="utf-8")
    except OSError as e:
        reraise_transient(e)
