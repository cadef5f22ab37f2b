"""Cross-validated choice of the stopping iteration and the earlier-stopping
rules: CV-optimal, one-standard-error, RobustC, and probing."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .data import DataError, Dataset, substream
from .engine import BoostConfig, fit_any


@dataclass
class CVCurve:
    """Out-of-fold predictive risks on the iteration grid 0..m_max.

    Fold risks are means per held-out observation, so folds of unequal size
    are comparable and multiplicative thresholds are size-insensitive.
    """

    n_folds: int
    fold_risks: np.ndarray  # shape (n_folds, m_max + 1)

    @property
    def mean(self) -> np.ndarray:
        return self.fold_risks.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        # conventional CV standard error: sd over folds / sqrt(k)
        return self.fold_risks.std(axis=0, ddof=1) / np.sqrt(self.n_folds)

    @property
    def m_max(self) -> int:
        return self.fold_risks.shape[1] - 1

    def to_frame(self) -> pd.DataFrame:
        data = {"iteration": np.arange(self.m_max + 1), "mean_risk": self.mean,
                "se": self.se}
        for i in range(self.n_folds):
            data[f"fold_{i + 1}"] = self.fold_risks[i]
        return pd.DataFrame(data)


def _fold_risks(data: Dataset, config: BoostConfig, train_idx, test_idx, m_max: int):
    fit = fit_any(
        data.subset(train_idx),
        replace(config, m_stop=m_max),
        eval_data=(data.X[test_idx], data.y[test_idx]),
    )
    return fit.eval_risks


def cv_curve(data: Dataset, config: BoostConfig, n_folds: int = 10,
             m_max: int | None = None, seed: int = 0, n_jobs: int = 1) -> CVCurve:
    """k-fold cross-validated risk curve over iterations 0..m_max.

    The fold partition is a seeded random split into near-equal parts.  If a
    training complement is degenerate for the family (e.g. a single-class
    binary response), the split is redrawn, up to 10 times.
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if data.n < 2 * n_folds:
        raise DataError(f"need at least {2 * n_folds} observations for {n_folds} folds")
    if m_max is None:
        m_max = config.m_stop

    rng = substream(seed, "folds")
    folds = None
    for _ in range(10):
        perm = rng.permutation(data.n)
        parts = np.array_split(perm, n_folds)
        try:
            for part in parts:
                mask = np.ones(data.n, dtype=bool)
                mask[part] = False
                config.family.offset(data.y[mask])
        except DataError:
            continue
        folds = parts
        break
    if folds is None:
        raise DataError("could not find a fold partition with valid training folds")

    splits = []
    for part in folds:
        mask = np.ones(data.n, dtype=bool)
        mask[part] = False
        splits.append((np.flatnonzero(mask), np.sort(part)))

    if n_jobs == 1:
        rows = [_fold_risks(data, config, tr, te, m_max) for tr, te in splits]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_fold_risks)(data, config, tr, te, m_max) for tr, te in splits
        )
    return CVCurve(n_folds=n_folds, fold_risks=np.vstack(rows))


def mstop_opt(curve: CVCurve) -> int:
    """Iteration with the smallest mean CV risk (earliest on ties)."""
    return int(np.argmin(curve.mean))


def mstop_ose(curve: CVCurve) -> int:
    """Smallest iteration within one standard error of the CV minimum."""
    opt = mstop_opt(curve)
    threshold = curve.mean[opt] + curve.se[opt]
    return int(np.argmax(curve.mean <= threshold))


def mstop_robustc(curve: CVCurve, c: float = 1.05) -> int:
    """Smallest iteration whose CV risk is at most c times the CV minimum."""
    if c < 1.0:
        raise ValueError("RobustC multiplier must be >= 1")
    opt = mstop_opt(curve)
    minimum = curve.mean[opt]
    if minimum <= 0.0:
        raise ValueError(
            "RobustC is undefined for a nonpositive minimum CV risk "
            f"(minimum is {minimum:.6g}); the multiplicative rule needs a positive scale"
        )
    return int(np.argmax(curve.mean <= c * minimum))


def _augment_with_probes(data: Dataset, rng: np.random.Generator):
    """Append one independently row-permuted copy of every component.

    Factor dummy blocks are permuted jointly so a probe factor keeps its
    category structure.
    """
    in_group = {}
    for factor, cols in data.groups.items():
        for c in cols:
            in_group[c] = factor
    existing = set(data.columns) | set(data.groups)

    def probe_name(base):
        name = f"{base}.probe"
        while name in existing:
            name += "_"
        existing.add(name)
        return name

    new_cols = [data.X]
    names = list(data.columns)
    groups = {k: list(v) for k, v in data.groups.items()}
    probe_names = []
    done_factors = set()
    offset = data.p
    for pos in range(data.p):
        perm = rng.permutation(data.n)
        if pos in in_group:
            factor = in_group[pos]
            if factor in done_factors:
                continue
            done_factors.add(factor)
            cols = data.groups[factor]
            pname = probe_name(factor)
            probe_names.append(pname)
            block = data.X[np.ix_(perm, cols)]
            new_cols.append(block)
            groups[pname] = list(range(offset, offset + len(cols)))
            names.extend(f"{pname}[{i}]" for i in range(len(cols)))
            offset += len(cols)
        else:
            pname = probe_name(data.columns[pos])
            probe_names.append(pname)
            new_cols.append(data.X[perm, pos][:, None])
            names.append(pname)
            offset += 1
    augmented = Dataset(np.hstack(new_cols), data.y, names, groups)
    return augmented, probe_names


def mstop_probing(data: Dataset, config: BoostConfig, seed: int = 0,
                  cap: int | None = None) -> int:
    """Stopping iteration from probing: boost on the probe-augmented design
    until the first shuffled copy is selected, and stop one iteration before.

    Returns ``cap`` (default 10 n) with a warning if no probe is ever
    selected.  Any candidate restriction in ``config`` is ignored; probing
    always runs on the full component set.
    """
    if data.p < 1:
        raise DataError("probing needs at least one covariate")
    if cap is None:
        cap = 10 * data.n
    rng = substream(seed, "probes")
    augmented, probe_names = _augment_with_probes(data, rng)
    probes = frozenset(probe_names)
    first_hit = []

    def stop(record):
        if record.component in probes:
            first_hit.append(record.iteration)
            return True
        return False

    fit_any(augmented, replace(config, m_stop=cap, candidates=None), stop_on=stop)
    if first_hit:
        return first_hit[0] - 1
    warnings.warn(
        f"no probe was selected within {cap} iterations; returning the cap",
        RuntimeWarning,
        stacklevel=2,
    )
    return cap
