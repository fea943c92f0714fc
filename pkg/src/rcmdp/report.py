"""Tabular reports rendered as aligned text or as structured JSON.

Both renderings come from the same section list, so they carry the same
numbers. Reals are printed with at most 9 significant digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from .staircase import TOL

Cell = Any  # str | int | float | bool | None


def fmt(x: Cell) -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        s = f"{x:.9g}"
        return "0" if s in ("-0", "0") else s
    return str(x)


def _structured(x: Cell) -> Cell:
    if isinstance(x, float):
        if not math.isfinite(x):
            return fmt(x)
        return float(fmt(x))
    return x


@dataclass
class Fields:
    title: str
    items: list[tuple[str, Cell]] = field(default_factory=list)

    def add(self, key: str, value: Cell) -> "Fields":
        self.items.append((key, value))
        return self

    def to_structured(self) -> dict:
        return {"title": self.title, "fields": {k: _structured(v) for k, v in self.items}}

    def render(self) -> list[str]:
        width = max((len(k) for k, _ in self.items), default=0)
        return [f"  {k.ljust(width)} : {fmt(v)}" for k, v in self.items]


@dataclass
class Table:
    title: str
    columns: Sequence[str]
    rows: list[Sequence[Cell]] = field(default_factory=list)

    def add(self, *cells: Cell) -> "Table":
        if len(cells) != len(self.columns):
            raise ValueError(f"row has {len(cells)} cells, table {self.title!r} has {len(self.columns)} columns")
        self.rows.append(cells)
        return self

    def to_structured(self) -> dict:
        return {
            "title": self.title,
            "columns": list(self.columns),
            "rows": [[_structured(c) for c in row] for row in self.rows],
        }

    def render(self) -> list[str]:
        text = [[fmt(c) for c in row] for row in self.rows]
        widths = [len(c) for c in self.columns]
        for row in text:
            widths = [max(w, len(c)) for w, c in zip(widths, row)]
        def line(cells):
            return ("  " + "  ".join(c.ljust(w) for c, w in zip(cells, widths))).rstrip()
        out = [line(self.columns), line(["-" * w for w in widths])]
        out.extend(line(row) for row in text)
        if not self.rows:
            out.append("  (empty)")
        return out


@dataclass
class Report:
    command: str
    sections: list[Fields | Table] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    tolerance: float = TOL

    def fields(self, title: str) -> Fields:
        sec = Fields(title)
        self.sections.append(sec)
        return sec

    def table(self, title: str, columns: Sequence[str]) -> Table:
        sec = Table(title, columns)
        self.sections.append(sec)
        return sec

    def note(self, text: str) -> None:
        self.notes.append(text)

    def section(self, title: str) -> Fields | Table:
        for sec in self.sections:
            if sec.title == title:
                return sec
        raise KeyError(title)

    def to_structured(self) -> dict:
        return {
            "command": self.command,
            "tolerance": self.tolerance,
            "sections": [s.to_structured() for s in self.sections],
            "notes": list(self.notes),
        }

    def render_text(self) -> str:
        lines = [f"# {self.command}", f"tolerance: {fmt(self.tolerance)}"]
        for sec in self.sections:
            lines += ["", f"[{sec.title}]", *sec.render()]
        if self.notes:
            lines += ["", "[notes]", *(f"  {n}" for n in self.notes)]
        return "\n".join(lines) + "\n"

    def render(self, form: str) -> str:
        if form == "structured":
            return json.dumps(self.to_structured(), indent=2, ensure_ascii=False) + "\n"
        return self.render_text()
