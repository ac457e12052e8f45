"""Results tables: rows are methods, columns are target markets."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

# Significance symbols, in display order. The best cell of a column gets a
# leading "*"; these always trail the value.
SYMBOLS = {"single": "†", "unaware": "‡", "FOREC": "+", "MAML": "*"}
BEST = "*"
FORMATS = ("csv", "json", "txt")
CSV_FIELDS = ("method", "market", "ndcg@10", "hr@10", "best", "markers", "source", "provenance")


@dataclass
class Cell:
    ndcg: float
    hr: float
    markers: str = ""
    best: bool = False
    source: str | None = None
    provenance: dict = field(default_factory=dict)

    def text(self) -> str:
        return f"{BEST if self.best else ''}{self.ndcg:.4f}{self.markers}"


@dataclass
class ResultsTable:
    title: str
    methods: list[str]
    markets: list[str]
    cells: dict[tuple[str, str], Cell] = field(default_factory=dict)
    m: int | None = None

    def __setitem__(self, key: tuple[str, str], cell: Cell) -> None:
        method, market = key
        if method not in self.methods or market not in self.markets:
            raise KeyError(f"{key} is outside the table layout")
        self.cells[key] = cell

    def __getitem__(self, key: tuple[str, str]) -> Cell:
        return self.cells[key]

    def value(self, method: str, market: str) -> float:
        return self.cells[(method, market)].ndcg

    def mark_best(self) -> None:
        """Flag exactly one maximum per column; ties go to the earlier row."""
        for mk in self.markets:
            col = [(meth, self.cells[(meth, mk)]) for meth in self.methods if (meth, mk) in self.cells]
            for _, c in col:
                c.best = False
            if col:
                top = max(col, key=lambda mc: (mc[1].ndcg, -self.methods.index(mc[0])))
                top[1].best = True

    def rows(self):
        for meth in self.methods:
            for mk in self.markets:
                if (meth, mk) in self.cells:
                    yield meth, mk, self.cells[(meth, mk)]

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "methods": list(self.methods),
            "markets": list(self.markets),
            "m": self.m,
            "cells": [{"method": a, "market": b, **asdict(c)} for a, b, c in self.rows()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultsTable":
        t = cls(d["title"], list(d["methods"]), list(d["markets"]), m=d.get("m"))
        for row in d["cells"]:
            row = dict(row)
            key = (row.pop("method"), row.pop("market"))
            t[key] = Cell(**row)
        return t

    def render(self) -> str:
        width = max([len(m) for m in self.methods] + [6])
        head = " " * width + "".join(f"{mk:>12}" for mk in self.markets)
        lines = [self.title, head]
        for meth in self.methods:
            vals = "".join(
                f"{self.cells[(meth, mk)].text() if (meth, mk) in self.cells else '-':>12}" for mk in self.markets
            )
            lines.append(f"{meth:<{width}}{vals}")
        if self.m:
            lines.append(f"significance: p < 0.05/{self.m}; {BEST} marks the column best")
        return "\n".join(lines) + "\n"


def marker_string(flags: dict[str, bool]) -> str:
    return "".join(sym for key, sym in SYMBOLS.items() if flags.get(key))


def _write_csv(table: ResultsTable, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for meth, mk, c in table.rows():
            w.writerow([meth, mk, repr(c.ndcg), repr(c.hr), c.best, c.markers, c.source or "", json.dumps(c.provenance)])


def emit_results(table: ResultsTable, out_dir, stem: str = "table", formats=FORMATS) -> list[Path]:
    """Write the table as CSV, JSON and/or plain text under ``out_dir``."""
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ValueError(f"unknown output format(s) {bad}; choose from {FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out / f"{stem}.{fmt}"
        if fmt == "csv":
            _write_csv(table, path)
        elif fmt == "json":
            path.write_text(json.dumps(table.to_dict(), indent=1, ensure_ascii=False))
        else:
            path.write_text(table.render())
        written.append(path)
    return written


def load_table(path) -> ResultsTable:
    return ResultsTable.from_dict(json.loads(Path(path).read_text()))
