"""Run reports: fixed-width text tables, CSV, JSON and matplotlib figures.

A :class:`RunReport` holds two kinds of records.  ``rows`` are PCG solves,
one per (series, mesh level); ``constants`` are measured quantities from the
verification oracles.  The text table prints every row field with
:func:`format_cell`, so the text and JSON forms can be compared cell by cell.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

ROW_FIELDS = (
    "study",
    "series",
    "level",
    "p",
    "r",
    "kappa0",
    "elements",
    "dofs",
    "iterations",
    "avg_reduction",
    "status",
    "assembly_seconds",
    "setup_seconds",
    "solve_seconds",
)
CONSTANT_FIELDS = ("study", "check", "level", "p", "value", "limit", "passed")
TIMING_FIELDS = ("assembly_seconds", "setup_seconds", "solve_seconds")


def format_cell(value) -> str:
    """Text form of one table entry."""
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


@dataclass
class RunReport:
    config: dict
    rows: list[dict] = field(default_factory=list)
    constants: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def all_converged(self) -> bool:
        return all(r["status"] == "converged" for r in self.rows)

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] is not False for c in self.constants)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_converged and self.all_passed else 2

    def series(self) -> dict[str, list[dict]]:
        out: dict[str, list[dict]] = {}
        for row in self.rows:
            out.setdefault(row["series"], []).append(row)
        return out

    def to_dict(self, timings: bool = True) -> dict:
        rows = self.rows
        if not timings:
            rows = [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in rows]
        return {
            "config": dict(self.config),
            "rows": [dict(r) for r in rows],
            "constants": [dict(c) for c in self.constants],
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def to_text(self) -> str:
        parts = [f"study: {self.config.get('study')}   mesh: {self.config.get('mesh')}"]
        if self.rows:
            parts += ["", _table(ROW_FIELDS, self.rows)]
        if self.constants:
            parts += ["", _table(CONSTANT_FIELDS, self.constants)]
        verdict = "all rows converged" if self.all_converged else "some rows did not converge"
        if self.constants:
            verdict += "; all checks passed" if self.all_passed else "; some checks failed"
        parts += ["", verdict]
        return "\n".join(parts) + "\n"


def _json_default(obj):
    # numpy scalars end up in extras
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _table(fields, records) -> str:
    cells = [[format_cell(rec.get(f)) for f in fields] for rec in records]
    widths = [max(len(f), *(len(c[j]) for c in cells)) for j, f in enumerate(fields)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))  # noqa: E731
    out = [line(fields), line(["-" * w for w in widths])]
    out += [line(c) for c in cells]
    return "\n".join(out)


def parse_table(text: str) -> list[dict[str, str]]:
    """Read a table produced by :meth:`RunReport.to_text` back into string cells.

    Returns one dict per data line of every table in ``text``.
    """
    records = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        nxt = lines[i + 1] if i + 1 < len(lines) else ""
        if nxt and set(nxt.replace(" ", "")) == {"-"}:
            header = lines[i].split()
            i += 2
            while i < len(lines) and lines[i].strip():
                records.append(dict(zip(header, lines[i].split())))
                i += 1
        i += 1
    return records


def write_csv(path, fields, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for rec in records:
            w.writerow({k: rec.get(k) for k in fields})


def write_outputs(report: RunReport, out_json, figures_dir=None) -> list[Path]:
    """Write JSON, text and CSV next to ``out_json``; figures go to ``figures_dir``.

    ``figures_dir`` defaults to the directory of ``out_json``.  Returns the
    list of written paths.
    """
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    stem = out_json.with_suffix("")
    written = [out_json, stem.with_suffix(".txt")]
    out_json.write_text(report.to_json())
    written[1].write_text(report.to_text())
    if report.rows:
        p = stem.with_suffix(".csv")
        write_csv(p, ROW_FIELDS, report.rows)
        written.append(p)
    if report.constants:
        p = Path(f"{stem}_constants.csv")
        write_csv(p, CONSTANT_FIELDS, report.constants)
        written.append(p)
    fig_dir = Path(figures_dir) if figures_dir is not None else out_json.parent
    written += render_figures(report, fig_dir, stem.name)
    return written


def render_figures(report: RunReport, directory, stem: str) -> list[Path]:
    """Iteration and reduction-factor curves, plus measured constants per level."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if report.rows:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), constrained_layout=True)
        for name, rows in report.series().items():
            ne = [r["elements"] for r in rows]
            ax1.plot(ne, [r["iterations"] for r in rows], "o-", label=name)
            ax2.plot(ne, [r["avg_reduction"] for r in rows], "o-", label=name)
        for ax, ylabel in ((ax1, "PCG iterations"), (ax2, "average reduction factor")):
            ax.set_xscale("log", base=2)
            ax.set_xlabel("elements")
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
        ax2.set_ylim(0.0, 1.0)
        ax1.legend(fontsize="small")
        fig.suptitle(f"{report.config.get('study')} on {report.config.get('mesh')}")
        path = directory / f"{stem}_iterations.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    per_level = {}
    for c in report.constants:
        if c["level"] is not None and isinstance(c["value"], (int, float)):
            per_level.setdefault(c["check"], []).append((c["level"], c["value"]))
    per_level = {k: v for k, v in per_level.items() if len(v) > 1}
    if per_level:
        fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
        for name, pts in per_level.items():
            lv, vals = zip(*pts)
            if min(vals) > 0:
                ax.plot(lv, vals, "s-", label=name)
        ax.set_yscale("log")
        ax.set_xlabel("refinement level")
        ax.set_ylabel("measured value")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small")
        path = directory / f"{stem}_constants.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
