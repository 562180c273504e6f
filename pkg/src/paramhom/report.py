"""Convergence series with log-log rate fits and CSV output."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonPositiveData(ValueError):
    pass


def fit_rate(x, y) -> tuple[float, float, float]:
    """Least-squares fit log y = slope log x + c; returns (slope, c, relative residual).
    Needs at least three strictly positive pairs."""
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    if len(x) < 3:
        raise ValueError("a rate fit needs at least three points")
    if not (np.all(x > 0) and np.all(y > 0) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonPositiveData("rate fits need finite positive data")
    x = np.log(x)
    y = np.log(y)
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    r = y - a @ coef
    return float(coef[0]), float(coef[1]), float(np.linalg.norm(r) / max(np.linalg.norm(y), 1e-300))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class ConvergenceReport:
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, *values, **named) -> None:
        if named:
            if values:
                raise ValueError("pass a row either positionally or by name")
            missing = set(self.columns) - set(named)
            if missing or len(named) != len(self.columns):
                raise ValueError(f"row does not match the columns (missing {sorted(missing)})")
            values = tuple(named[c] for c in self.columns)
        if len(values) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(tuple(values))

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def set_column(self, name: str, value) -> None:
        """Overwrite a column with a constant (e.g. a slope fitted afterwards)."""
        k = self.columns.index(name)
        self.rows = [r[:k] + (value,) + r[k + 1:] for r in self.rows]

    def fit(self, xcol: str, ycol: str) -> tuple[float, float, float]:
        return fit_rate(self.column(xcol), self.column(ycol))

    def to_csv(self, path, extra: dict | None = None, columns=None) -> None:
        """Comma separated, header row, LF line endings, UTF-8.  ``columns``
        selects and orders columns; ``extra`` adds constant columns (for
        instance the config hash)."""
        extra = dict(extra or {})
        cols = list(self.columns) if columns is None else list(columns)
        idx = [self.columns.index(c) for c in cols]
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(cols + list(extra)) + "\n")
            for r in self.rows:
                fh.write(",".join(_fmt(v) for v in [r[k] for k in idx] + list(extra.values())) + "\n")

    def sorted_by(self, *cols, reverse: bool = False) -> "ConvergenceReport":
        idx = [self.columns.index(c) for c in cols]
        rows = sorted(self.rows, key=lambda r: tuple(r[k] for k in idx), reverse=reverse)
        return ConvergenceReport(list(self.columns), rows, dict(self.metadata))

    def __str__(self) -> str:
        lines = ["  ".join(f"{c:>14}" for c in self.columns)]
        for r in self.rows:
            lines.append("  ".join(f"{_fmt(v):>14}" if not isinstance(v, float) else f"{v:14.6e}" for v in r))
        return "\n".join(lines)
