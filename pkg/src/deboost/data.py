"""Dataset container, error types, CSV loading, and seeded RNG substreams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Invalid or degenerate input data (bad response domain, missing values, ...)."""


class NumericsError(RuntimeError):
    """A fit became numerically unstable (non-finite risk, predictor overflow, ...)."""


def substream(seed: int, label: str) -> np.random.Generator:
    """Named, reproducible RNG substream derived from a single master seed.

    Different labels ("data", "folds", "probes") give independent streams so
    that one seed drives every source of randomness in a run.
    """
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass
class Dataset:
    """Design matrix plus response.

    ``groups`` maps a factor name to the column positions of its dummy block;
    those columns are updated jointly by a grouped base-learner and are
    selected/deselected as one component.
    """

    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    groups: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise DataError("design matrix must be two-dimensional")
        if self.y.ndim != 1 or self.y.size != self.X.shape[0]:
            raise DataError("response length does not match design matrix rows")
        if len(self.columns) != self.X.shape[1]:
            raise DataError("column name count does not match design matrix")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.columns, self.groups)


def load_csv(path, response: str) -> Dataset:
    """Read a strict CSV (header, comma, '.' decimal, no missing values).

    Numeric columns become covariates as-is.  Non-numeric columns are expanded
    into treatment-coded dummy blocks (first sorted level is the reference)
    registered as grouped components.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read CSV {path!r}: {exc}") from exc
    if frame.shape[0] == 0:
        raise DataError(f"{path!r} has no data rows")
    if response not in frame.columns:
        raise DataError(f"response column {response!r} not found in {path!r}")
    if frame.isna().any().any():
        bad = [c for c in frame.columns if frame[c].isna().any()]
        raise DataError(f"missing values are not supported (columns: {bad})")

    y = pd.to_numeric(frame[response], errors="coerce")
    if y.isna().any():
        raise DataError(f"response column {response!r} contains non-numeric cells")
    y = y.to_numpy(dtype=float)

    cols: list[np.ndarray] = []
    names: list[str] = []
    groups: dict[str, list[int]] = {}
    for name in frame.columns:
        if name == response:
            continue
        col = frame[name]
        numeric = pd.to_numeric(col, errors="coerce")
        if not numeric.isna().any():
            names.append(name)
            cols.append(numeric.to_numpy(dtype=float))
            continue
        # factor column: treatment coding, sorted levels, first is reference
        levels = sorted(col.astype(str).unique())
        if len(levels) < 2:
            raise DataError(f"factor column {name!r} has a single level")
        start = len(names)
        for level in levels[1:]:
            names.append(f"{name}={level}")
            cols.append((col.astype(str) == level).to_numpy(dtype=float))
        groups[name] = list(range(start, len(names)))
    if not names:
        raise DataError("no covariate columns besides the response")
    return Dataset(np.column_stack(cols), y, names, groups)
