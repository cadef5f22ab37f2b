"""Component-wise gradient boosting loops with full selection bookkeeping.

``boost`` fits single-parameter models: in each iteration every candidate
base-learner is fitted to the negative gradient, the best-fitting one is
scaled by the step size and added to the additive predictor, and the
empirical risk after the update is recorded.

``boost_lss`` fits multi-parameter (location/scale/...) models with the
non-cyclical rule: per iteration the best learner of *each* distribution
parameter is identified by its gradient fit, the resulting empirical risk of
each tentative update is evaluated, and only the single update with the
lowest risk is committed.

Every committed update stores its step-scaled coefficient increment, so a
fit can be serialized to JSON and its (selection, risk) trace replayed
exactly on the training data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .baselearners import BaseLearnerSet, LearnerSpec, build_learner_set, learner_from_meta
from .data import DataError, Dataset, NumericsError
from .families import Family, get_family

SCHEMA_VERSION = 1

# exp(x) overflows just above x = 709; abort well before that
_ETA_LIMIT = 700.0


@dataclass(frozen=True)
class BoostConfig:
    """Everything needed to fit: family, iteration count, step size, learners.

    ``candidates`` optionally restricts the candidate components per
    distribution parameter (used by the deselection refit); ``seed`` is
    carried for provenance only, the fitting loop itself is deterministic.
    """

    family: Family
    m_stop: int
    nu: float = 0.1
    learners: LearnerSpec = field(default_factory=LearnerSpec)
    candidates: tuple[tuple[str, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m_stop < 0:
            raise ValueError("m_stop must be nonnegative")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("step size must lie in (0, 1]")
        if self.candidates is not None and len(self.candidates) != self.family.n_params:
            raise ValueError("candidates must list one component tuple per parameter")


@dataclass
class SelectionRecord:
    """One committed update: which component, for which parameter, and the
    empirical risk and step-scaled coefficient increment after the update."""

    iteration: int
    param: int
    component: str
    risk: float
    increment: np.ndarray


@dataclass
class BoostFit:
    """Complete fit trace returned by the boosting loops."""

    config: BoostConfig
    columns: list[str]
    offsets: np.ndarray
    init_risk: float
    records: list[SelectionRecord]
    coef: dict[tuple[int, str], np.ndarray]
    learner_sets: list[BaseLearnerSet]
    n_train: int
    eval_risks: np.ndarray | None = None

    @property
    def m_stop(self) -> int:
        return len(self.records)

    @property
    def final_risk(self) -> float:
        return self.records[-1].risk if self.records else self.init_risk

    def risk_path(self) -> np.ndarray:
        return np.array([self.init_risk] + [r.risk for r in self.records])

    def selected(self, param: int | None = None) -> set:
        """Component names ever selected, overall or for one parameter."""
        if param is None:
            return {(r.param, r.component) for r in self.records}
        return {r.component for r in self.records if r.param == param}

    def coef_at(self, m: int) -> dict[tuple[int, str], np.ndarray]:
        """Accumulated coefficients after the first ``m`` iterations."""
        if not 0 <= m <= self.m_stop:
            raise ValueError(f"iteration {m} outside [0, {self.m_stop}]")
        if m == self.m_stop:
            return self.coef
        out: dict[tuple[int, str], np.ndarray] = {}
        for rec in self.records[:m]:
            key = (rec.param, rec.component)
            if key in out:
                out[key] = out[key] + rec.increment
            else:
                out[key] = rec.increment.copy()
        return out


@dataclass
class Prediction:
    """Per-parameter predictions on the predictor (eta) and response scales."""

    eta: np.ndarray
    response: np.ndarray


def _build_sets(data: Dataset, config: BoostConfig) -> list[BaseLearnerSet]:
    cand = config.candidates
    return [
        build_learner_set(data, config.learners, None if cand is None else cand[k])
        for k in range(config.family.n_params)
    ]


def _run(data: Dataset, config: BoostConfig, *, eval_data=None, stop_on=None) -> BoostFit:
    fam = config.family
    n_params = fam.n_params
    y = data.y
    fam.check_response(y)
    sets = _build_sets(data, config)
    if config.m_stop > 0 and all(len(s) == 0 for s in sets):
        raise ValueError("no candidate base-learners")

    offsets = fam.offset(y)
    eta = np.repeat(offsets[:, None], data.n, axis=1)
    init_risk = fam.risk(y, eta)
    if not np.isfinite(init_risk):
        raise NumericsError("non-finite empirical risk at the offset")

    ev_risks = None
    if eval_data is not None:
        X_ev, y_ev = eval_data
        binders = [s.bind(X_ev) for s in sets]
        eta_ev = np.repeat(offsets[:, None], len(y_ev), axis=1)
        ev_risks = [fam.risk(y_ev, eta_ev) / len(y_ev)]

    log_params = [k for k in range(n_params) if fam.links[k] == "log"]
    records: list[SelectionRecord] = []
    coef: dict[tuple[int, str], np.ndarray] = {}

    for m in range(1, config.m_stop + 1):
        chosen = None  # (tentative risk, param, learner, increment, fitted increment)
        for k in range(n_params):
            if len(sets[k]) == 0:
                continue
            u = fam.negative_gradient(y, eta, k)
            pos, c = sets[k].fit_best(u)
            learner = sets[k].learners[pos]
            inc = config.nu * c
            inc_fit = learner.fitted(inc)
            if n_params == 1:
                chosen = (None, k, learner, inc, inc_fit)
                break
            eta_try = eta.copy()
            eta_try[k] += inc_fit
            risk_try = fam.risk(y, eta_try)
            if chosen is None or risk_try < chosen[0]:
                chosen = (risk_try, k, learner, inc, inc_fit)
        if chosen is None:
            raise ValueError("no candidate base-learners available")

        risk_try, k, learner, inc, inc_fit = chosen
        eta[k] += inc_fit
        for kk in log_params:
            if np.max(np.abs(eta[kk])) > _ETA_LIMIT:
                raise NumericsError(
                    f"additive predictor overflow for parameter "
                    f"{fam.param_names[kk]!r} at iteration {m}"
                )
        risk = fam.risk(y, eta) if n_params == 1 else risk_try
        if not np.isfinite(risk):
            raise NumericsError(f"non-finite empirical risk at iteration {m}")

        record = SelectionRecord(m, k, learner.name, float(risk), inc)
        records.append(record)
        key = (k, learner.name)
        if key in coef:
            coef[key] = coef[key] + inc
        else:
            coef[key] = inc.copy()

        if ev_risks is not None:
            eta_ev[k] += binders[k].apply(learner.name, inc)
            ev_risks.append(fam.risk(y_ev, eta_ev) / len(y_ev))
        if stop_on is not None and stop_on(record):
            break

    return BoostFit(
        config=config,
        columns=list(data.columns),
        offsets=offsets,
        init_risk=float(init_risk),
        records=records,
        coef=coef,
        learner_sets=sets,
        n_train=data.n,
        eval_risks=None if ev_risks is None else np.asarray(ev_risks),
    )


def boost(data: Dataset, config: BoostConfig, *, eval_data=None, stop_on=None) -> BoostFit:
    """Component-wise gradient boosting for a single-parameter family."""
    if config.family.n_params != 1:
        raise ValueError("boost handles single-parameter families; use boost_lss")
    return _run(data, config, eval_data=eval_data, stop_on=stop_on)


def boost_lss(data: Dataset, config: BoostConfig, *, eval_data=None, stop_on=None) -> BoostFit:
    """Non-cyclical multi-parameter boosting: one update per iteration, to the
    (parameter, component) pair whose tentative update yields the lowest
    empirical risk."""
    if config.family.n_params < 2:
        raise ValueError("boost_lss needs a multi-parameter family; use boost")
    return _run(data, config, eval_data=eval_data, stop_on=stop_on)


def fit_any(data: Dataset, config: BoostConfig, **kwargs) -> BoostFit:
    """Dispatch to boost or boost_lss based on the family's parameter count."""
    if config.family.n_params == 1:
        return boost(data, config, **kwargs)
    return boost_lss(data, config, **kwargs)


def predict(fit: BoostFit, newdata, at_iteration: int | None = None) -> Prediction:
    """Model predictions for a new design matrix, optionally truncating the
    fit at an earlier iteration."""
    X = np.asarray(newdata, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(fit.columns):
        raise DataError(
            f"newdata must have {len(fit.columns)} columns, got shape {X.shape}"
        )
    coef = fit.coef if at_iteration is None else fit.coef_at(at_iteration)
    fam = fit.config.family
    eta = np.repeat(fit.offsets[:, None], X.shape[0], axis=1)
    binders = [s.bind(X) for s in fit.learner_sets]
    for (k, name), c in coef.items():
        eta[k] += binders[k].apply(name, c)
    return Prediction(eta=eta, response=fam.response(eta))


def risk_path(fit: BoostFit) -> np.ndarray:
    """In-sample empirical risk at iterations 0..m_stop."""
    return fit.risk_path()


def coefficient_paths(fit: BoostFit) -> pd.DataFrame:
    """Per-iteration scalar coefficient summaries (slope for linear learners,
    L2 norm of the coefficient vector for splines and factor groups)."""
    fam = fit.config.family
    labels = []
    index_of = {}
    for k, lset in enumerate(fit.learner_sets):
        for learner in lset.learners:
            index_of[(k, learner.name)] = len(labels)
            if fam.n_params == 1:
                labels.append(learner.name)
            else:
                labels.append(f"{fam.param_names[k]}:{learner.name}")
    path = np.zeros((fit.m_stop + 1, len(labels)))
    running: dict[tuple[int, str], np.ndarray] = {}
    for i, rec in enumerate(fit.records, start=1):
        path[i] = path[i - 1]
        key = (rec.param, rec.component)
        running[key] = running.get(key, 0.0) + rec.increment
        learner = fit.learner_sets[rec.param].by_name[rec.component]
        path[i, index_of[key]] = learner.summary(running[key])
    frame = pd.DataFrame(path, columns=labels)
    frame.index.name = "iteration"
    return frame


def replay_risks(fit: BoostFit, data: Dataset) -> np.ndarray:
    """Recompute the risk trace by applying the recorded increments in order;
    independent of the fitting loop's internal state."""
    fam = fit.config.family
    y = data.y
    eta = np.repeat(fit.offsets[:, None], data.n, axis=1)
    binders = [s.bind(data.X) for s in fit.learner_sets]
    risks = [fam.risk(y, eta)]
    for rec in fit.records:
        eta[rec.param] += binders[rec.param].apply(rec.component, rec.increment)
        risks.append(fam.risk(y, eta))
    return np.array(risks)


def fit_to_dict(fit: BoostFit) -> dict:
    """JSON-ready document with a stable schema (offsets, trace, learners)."""
    cfg = fit.config
    return {
        "schema_version": SCHEMA_VERSION,
        "family": cfg.family.name,
        "nu": cfg.nu,
        "seed": cfg.seed,
        "m_stop": fit.m_stop,
        "requested_m_stop": cfg.m_stop,
        "learner_spec": asdict(cfg.learners),
        "columns": list(fit.columns),
        "n_train": fit.n_train,
        "offsets": fit.offsets.tolist(),
        "init_risk": fit.init_risk,
        "learners": [[l.meta() for l in s.learners] for s in fit.learner_sets],
        "trace": [
            {
                "iteration": r.iteration,
                "param": r.param,
                "component": r.component,
                "risk": r.risk,
                "increment": r.increment.tolist(),
            }
            for r in fit.records
        ],
    }


def fit_from_dict(doc: dict) -> BoostFit:
    """Rebuild a predict/replay-capable fit from its JSON document."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {doc.get('schema_version')!r}")
    family = get_family(doc["family"])
    config = BoostConfig(
        family=family,
        m_stop=doc["requested_m_stop"],
        nu=doc["nu"],
        learners=LearnerSpec(**doc["learner_spec"]),
        seed=doc["seed"],
    )
    sets = [
        BaseLearnerSet([learner_from_meta(meta) for meta in metas])
        for metas in doc["learners"]
    ]
    records = []
    coef: dict[tuple[int, str], np.ndarray] = {}
    for entry in doc["trace"]:
        inc = np.asarray(entry["increment"], dtype=float)
        records.append(
            SelectionRecord(
                entry["iteration"], entry["param"], entry["component"],
                entry["risk"], inc,
            )
        )
        key = (entry["param"], entry["component"])
        if key in coef:
            coef[key] = coef[key] + inc
        else:
            coef[key] = inc.copy()
    return BoostFit(
        config=config,
        columns=list(doc["columns"]),
        offsets=np.asarray(doc["offsets"], dtype=float),
        init_risk=float(doc["init_risk"]),
        records=records,
        coef=coef,
        learner_sets=sets,
        n_train=int(doc["n_train"]),
    )


def save_fit(fit: BoostFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit), fh, sort_keys=True, indent=1)


def load_fit(path) -> BoostFit:
    with open(path, encoding="utf-8") as fh:
        return fit_from_dict(json.load(fh))
