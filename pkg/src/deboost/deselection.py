"""Risk-reduction-based deselection of base-learners.

Each selected component accumulates the per-iteration risk drops of the
iterations in which it was the committed update (its attributable risk
reduction).  Components whose reduction falls below a fraction tau of the
total reduction are deselected; the cumulative variant instead drops the
low-importance tail whose *summed* reduction stays below the threshold.
The full pipeline is: tune and fit, deselect, and refit with only the
surviving components as candidates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .data import Dataset
from .engine import BoostConfig, BoostFit, fit_any
from .tuning import cv_curve, mstop_opt

METHODS = ("attributable", "cumulative")


@dataclass
class ComponentReduction:
    """Attributable risk reduction of one (parameter, component) unit."""

    param: int
    param_name: str
    component: str
    reduction: float
    share: float
    kept: bool


@dataclass
class DeselectionReport:
    """Outcome of a deselection pass over a fit's selection trace."""

    method: str
    tau: float
    total: float
    rows: list[ComponentReduction]
    degenerate: bool = False  # total risk reduction was not positive

    @property
    def kept(self) -> list[tuple[int, str]]:
        return [(r.param, r.component) for r in self.rows if r.kept]

    @property
    def dropped(self) -> list[tuple[int, str]]:
        return [(r.param, r.component) for r in self.rows if not r.kept]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "parameter": [r.param_name for r in self.rows],
                "component": [r.component for r in self.rows],
                "reduction": [r.reduction for r in self.rows],
                "share": [r.share for r in self.rows],
                "kept": [r.kept for r in self.rows],
            }
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tau": self.tau,
            "total_reduction": self.total,
            "degenerate": self.degenerate,
            "components": [
                {
                    "parameter": r.param_name,
                    "component": r.component,
                    "reduction": r.reduction,
                    "share": r.share,
                    "kept": r.kept,
                }
                for r in self.rows
            ],
        }


def attributable_risk_reduction(fit: BoostFit) -> dict[tuple[int, str], float]:
    """Sum of per-iteration risk drops, attributed to the selected component.

    In multi-parameter fits the accounting unit is the (parameter, component)
    pair, so one covariate may carry separate values per parameter.  The
    values telescope: they sum to the total reduction r[0] - r[m_stop].
    """
    out: dict[tuple[int, str], float] = {}
    previous = fit.init_risk
    for record in fit.records:
        key = (record.param, record.component)
        out[key] = out.get(key, 0.0) + (previous - record.risk)
        previous = record.risk
    return out


def _dropped_keys(reductions, total, tau, method, order):
    """Pure partition rule; ``order`` maps keys to a deterministic tiebreak."""
    threshold = tau * total
    if method == "attributable":
        return {key for key, r in reductions.items() if r < threshold}
    # cumulative: ascending by reduction, ties by (parameter, covariate order)
    ranked = sorted(reductions.items(), key=lambda kv: (kv[1], order[kv[0]]))
    dropped = set()
    running = 0.0
    for key, r in ranked:
        if running + r < threshold:
            running += r
            dropped.add(key)
        else:
            break
    return dropped


def deselect(fit: BoostFit, tau: float = 0.01, method: str = "attributable") -> DeselectionReport:
    """Partition the fit's selected components into kept and dropped sets.

    A component is dropped when its attributable risk reduction (or, for the
    cumulative variant, the running sum over the lowest-ranked components)
    is strictly below tau times the total risk reduction.  Equality keeps
    the component.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly between 0 and 1")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")

    reductions = attributable_risk_reduction(fit)
    total = fit.init_risk - fit.final_risk
    order = {
        (k, name): (k, pos)
        for k, lset in enumerate(fit.learner_sets)
        for pos, name in enumerate(lset.names)
    }
    degenerate = bool(reductions) and total <= 0.0
    if degenerate:
        warnings.warn(
            "total risk reduction is not positive; dropping every selected component",
            RuntimeWarning,
            stacklevel=2,
        )
        dropped = set(reductions)
    else:
        dropped = _dropped_keys(reductions, total, tau, method, order)

    param_names = fit.config.family.param_names
    rows = [
        ComponentReduction(
            param=key[0],
            param_name=param_names[key[0]],
            component=key[1],
            reduction=reductions[key],
            share=reductions[key] / total if total > 0 else float("nan"),
            kept=key not in dropped,
        )
        for key in sorted(reductions, key=order.__getitem__)
    ]
    return DeselectionReport(method=method, tau=tau, total=total, rows=rows,
                             degenerate=degenerate)


def deselect_boost(data: Dataset, config: BoostConfig, tau: float = 0.01,
                   method: str = "attributable", retune: bool = False,
                   n_folds: int = 10, m_max: int | None = None, seed: int = 0,
                   n_jobs: int = 1) -> tuple[BoostFit, DeselectionReport, BoostFit]:
    """Three-step pipeline: CV-tuned fit, deselection, restricted refit.

    Step 1 tunes m_stop on the CV-risk curve up to ``m_max`` (default
    ``config.m_stop``) and fits at the optimum.  Step 2 deselects with
    (tau, method).  Step 3 refits with each parameter's candidate set
    restricted to its kept components, reusing step 1's m_stop unless
    ``retune`` re-runs cross-validation on the restricted candidates.
    """
    if m_max is None:
        m_max = config.m_stop
    curve = cv_curve(data, config, n_folds=n_folds, m_max=m_max, seed=seed, n_jobs=n_jobs)
    m_initial = mstop_opt(curve)
    initial = fit_any(data, replace(config, m_stop=m_initial))

    report = deselect(initial, tau=tau, method=method)
    kept = set(report.kept)
    kept_per_param = tuple(
        tuple(name for name in lset.names if (k, name) in kept)
        for k, lset in enumerate(initial.learner_sets)
    )

    if not any(kept_per_param):
        warnings.warn(
            "deselection kept no components; final model is offset-only",
            RuntimeWarning,
            stacklevel=2,
        )
        final = fit_any(data, replace(config, m_stop=0, candidates=kept_per_param))
        return initial, report, final

    restricted = replace(config, candidates=kept_per_param, m_stop=m_initial)
    if retune:
        curve_final = cv_curve(data, replace(config, candidates=kept_per_param),
                               n_folds=n_folds, m_max=m_max, seed=seed, n_jobs=n_jobs)
        restricted = replace(restricted, m_stop=mstop_opt(curve_final))
    final = fit_any(data, restricted)
    return initial, report, final
