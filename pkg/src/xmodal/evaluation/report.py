from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from ..victim import TASKS

COLUMNS = ("Classification", "Captioning", "VQA_general", "VQA_specific", "Overall")


@dataclass
class AttackReport:
    """Per-task similarity-to-target, clean and attacked.

    ``overall`` is the unweighted mean of the per-task means present.
    """

    clean: dict[str, float]
    attacked: dict[str, float]
    clean_asr: float
    asr: float
    theta: float
    queries: int
    pairs: int
    label: str = ""
    counts: dict[str, int] = field(default_factory=dict)

    @staticmethod
    def _overall(values: dict[str, float]) -> float:
        present = [values[t] for t in TASKS if t in values]
        return sum(present) / len(present) if present else float("nan")

    @property
    def clean_overall(self) -> float:
        return self._overall(self.clean)

    @property
    def overall(self) -> float:
        return self._overall(self.attacked)

    def rows(self):
        """(row label, five values) in the Classification..Overall layout."""
        nan = float("nan")
        for name, values, overall in (
            ("clean", self.clean, self.clean_overall),
            ("attacked", self.attacked, self.overall),
        ):
            yield name, [values.get(t, nan) for t in TASKS] + [overall]

    def to_text(self) -> str:
        head = f"{'':<10}" + "".join(f"{c:>16}" for c in COLUMNS)
        lines = []
        if self.label:
            lines.append(f"# {self.label}")
        lines.append(head)
        for name, vals in self.rows():
            lines.append(f"{name:<10}" + "".join(f"{v:>16.4f}" for v in vals))
        lines.append(
            f"ASR(theta={self.theta:g}): clean={self.clean_asr:.4f} attacked={self.asr:.4f}"
            f"  pairs={self.pairs} queries={self.queries}"
        )
        return "\n".join(lines) + "\n"

    def csv_rows(self, prefix=()):
        for name, vals in self.rows():
            asr = self.clean_asr if name == "clean" else self.asr
            yield [*prefix, name, *[repr(float(v)) for v in vals], repr(float(asr)), self.theta, self.pairs, self.queries]

    @staticmethod
    def csv_header(prefix=()):
        return [*prefix, "row", *COLUMNS, "ASR", "theta", "pairs", "queries"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerows(self.csv_rows())
        return buf.getvalue()


def reports_to_csv(reports: dict, key_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AttackReport.csv_header((key_name,)))
    for key, rep in reports.items():
        w.writerows(rep.csv_rows((key,)))
    return buf.getvalue()


def matrix_to_csv(matrix, row_labels, col_labels, value=lambda r: r.overall) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["victim\\corpus", *col_labels])
    for label, row in zip(row_labels, matrix):
        w.writerow([label, *[repr(float(value(r))) for r in row]])
    return buf.getvalue()
