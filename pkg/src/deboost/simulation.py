"""Data generators for the four benchmark scenarios, evaluation metrics, and
the replication-study runner comparing deselection against earlier stopping.

Scenarios (covariates are multivariate normal with Toeplitz or block
covariance):

* A - linear regression, coefficients (-2, -1.5, -1, 1, 1.5, 2) on x1..x6.
* B - nonlinear regression, 1.5 sin(x1) + x2 - 0.25 x3^2 - 0.25 x4 - x5
  - 1.5 x6, fitted with P-spline learners.
* C - logistic regression with log-odds -5 x1 - 2.5 x2 - x3 + x4 + 2.5 x5
  + 5 x6.
* D - Gaussian location-scale: mu = -2 x1 + 1.25 x2 + x3,
  log(sigma) = 0.5 x4 - 0.5 x5 + 0.5 x6.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import toeplitz
from scipy.stats import rankdata

from .baselearners import LearnerSpec
from .data import DataError, Dataset, substream
from .deselection import deselect
from .engine import BoostConfig, Prediction, fit_any, predict
from .families import get_family
from .tuning import cv_curve, mstop_opt, mstop_ose, mstop_probing, mstop_robustc

SCENARIO_FAMILY = {"A": "l2", "B": "l2", "C": "logistic", "D": "gaussian-ls"}

_BETA_A = np.array([-2.0, -1.5, -1.0, 1.0, 1.5, 2.0])
_BETA_C = np.array([-5.0, -2.5, -1.0, 1.0, 2.5, 5.0])
_BETA_D_MU = np.array([-2.0, 1.25, 1.0])
_BETA_D_SIGMA = np.array([0.5, -0.5, 0.5])

RESULT_COLUMNS = [
    "replication", "scenario", "n", "p", "rho", "snr", "method", "tau",
    "mstop_used", "tp", "fp", "tp_mu", "fp_mu", "tp_sigma", "fp_sigma",
    "metric_name", "metric_value",
]


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation setting: scenario, dimensions, covariance, and seed."""

    scenario: str
    n: int = 500
    p: int = 20
    rho: float = 0.5
    cov: str = "toeplitz"
    snr: float | None = None
    n_test: int = 1000
    seed: int = 0
    block_size: int = 10

    def __post_init__(self):
        if self.scenario not in SCENARIO_FAMILY:
            raise ValueError(f"scenario must be one of {sorted(SCENARIO_FAMILY)}")
        if self.p < 6:
            raise ValueError("scenarios need p >= 6 (six informative components)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.snr is not None and self.scenario != "A":
            raise ValueError("the signal-to-noise ratio applies to scenario A only")


@dataclass
class Truth:
    """Which components are informative (per distribution parameter), plus
    the generating coefficients where the signal is linear."""

    scenario: str
    informative: dict[str, tuple[str, ...]]
    coef: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EvaluationResult:
    """Predictive metrics and selection counts for one fitted model."""

    metrics: dict[str, float]
    tp: int
    fp: int
    per_param: dict[str, tuple[int, int]]
    selected: dict[str, list[str]]


def covariance(kind: str, p: int, rho: float, block_size: int = 10) -> np.ndarray:
    """Toeplitz rho^|i-j| or block-diagonal equicorrelated covariance."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if kind == "toeplitz":
        return toeplitz(rho ** np.arange(p))
    if kind == "block":
        out = np.eye(p)
        for start in range(0, p, block_size):
            stop = min(start + block_size, p)
            out[start:stop, start:stop] = rho
            out[range(start, stop), range(start, stop)] = 1.0
        return out
    raise ValueError(f"unknown covariance kind {kind!r}")


def sample_mvn(n: int, cov: np.ndarray, rng) -> np.ndarray:
    """Rows i.i.d. N(0, cov) via the Cholesky factor of cov."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"covariance is not positive definite: {exc}") from exc
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


def scenario_a_noise_sd(spec: ScenarioSpec) -> float:
    """Noise standard deviation for scenario A under the SNR convention
    SNR = Var(x'beta) / sigma_eps^2 with Var(x'beta) = beta' Sigma beta."""
    if spec.snr is None:
        return 1.0
    beta = np.zeros(spec.p)
    beta[:6] = _BETA_A
    sigma = covariance(spec.cov, spec.p, spec.rho, spec.block_size)
    return float(np.sqrt(beta @ sigma @ beta / spec.snr))


def generate(spec: ScenarioSpec) -> tuple[Dataset, Dataset, Truth]:
    """Train and test datasets plus the generating truth for one scenario."""
    rng = substream(spec.seed, "data")
    sigma = covariance(spec.cov, spec.p, spec.rho, spec.block_size)
    total = spec.n + spec.n_test
    X = sample_mvn(total, sigma, rng)
    names = [f"x{j + 1}" for j in range(spec.p)]
    informative = tuple(names[:6])

    if spec.scenario == "A":
        eta = X[:, :6] @ _BETA_A
        y = eta + rng.normal(0.0, scenario_a_noise_sd(spec), size=total)
        truth = Truth("A", {"mu": informative}, {"mu": _BETA_A.copy()})
    elif spec.scenario == "B":
        eta = (1.5 * np.sin(X[:, 0]) + X[:, 1] - 0.25 * X[:, 2] ** 2
               - 0.25 * X[:, 3] - X[:, 4] - 1.5 * X[:, 5])
        y = eta + rng.normal(0.0, 1.0, size=total)
        truth = Truth("B", {"mu": informative})
    elif spec.scenario == "C":
        logits = X[:, :6] @ _BETA_C
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-logits))).astype(float)
        truth = Truth("C", {"mu": informative}, {"mu": _BETA_C.copy()})
    else:  # D
        mu = X[:, :3] @ _BETA_D_MU
        log_sigma = X[:, 3:6] @ _BETA_D_SIGMA
        y = rng.normal(mu, np.exp(log_sigma))
        truth = Truth(
            "D",
            {"mu": tuple(names[:3]), "sigma": tuple(names[3:6])},
            {"mu": _BETA_D_MU.copy(), "sigma": _BETA_D_SIGMA.copy()},
        )

    train = Dataset(X[: spec.n], y[: spec.n], names)
    test = Dataset(X[spec.n :], y[spec.n :], names)
    return train, test, truth


def auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney rank statistic; tied
    scores count one half."""
    labels = np.asarray(labels, dtype=float)
    scores = np.asarray(scores, dtype=float)
    pos = labels == 1.0
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined when one class is absent")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _selection_counts(selected, informative):
    tp = len(set(selected) & set(informative))
    fp = len(set(selected) - set(informative))
    return tp, fp


def evaluate(prediction, test: Dataset, truth: Truth, selected) -> EvaluationResult:
    """Scenario-appropriate predictive metrics plus selection counts.

    ``prediction`` is an engine Prediction (or a response-scale array of
    shape (n_params, n_test)); ``selected`` maps each distribution
    parameter's name to the components chosen for it.
    """
    response = prediction.response if isinstance(prediction, Prediction) else np.atleast_2d(prediction)
    y = test.y
    if response.shape[-1] != y.size:
        raise ValueError("prediction length does not match the test set")

    if truth.scenario in ("A", "B"):
        metrics = {"msep": float(np.mean((y - response[0]) ** 2))}
    elif truth.scenario == "C":
        metrics = {
            "brier": float(np.mean((y - response[0]) ** 2)),
            "auc": auc(y, response[0]),
        }
    else:
        mu, sd = response[0], response[1]
        metrics = {
            "neg_log_lik": float(np.sum(
                0.5 * np.log(2.0 * np.pi) + np.log(sd) + (y - mu) ** 2 / (2.0 * sd**2)
            ))
        }

    per_param = {}
    tp = fp = 0
    for param, informative in truth.informative.items():
        ptp, pfp = _selection_counts(selected.get(param, ()), informative)
        per_param[param] = (ptp, pfp)
        tp += ptp
        fp += pfp
    # parameters with no informative components still contribute false positives
    for param, chosen in selected.items():
        if param not in truth.informative and chosen:
            per_param[param] = (0, len(set(chosen)))
            fp += len(set(chosen))
    return EvaluationResult(
        metrics=metrics, tp=tp, fp=fp, per_param=per_param,
        selected={k: sorted(v) for k, v in selected.items()},
    )


@dataclass(frozen=True)
class Method:
    """One comparison arm of a study: classical boosting, deselection with a
    threshold, or one of the earlier-stopping rules."""

    kind: str
    tau: float = 0.01
    variant: str = "attributable"
    c: float | None = None

    KINDS = ("classical", "deselect", "ose", "robustc", "probing")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown method {self.kind!r}; choose from {self.KINDS}")

    @classmethod
    def parse(cls, text: str) -> "Method":
        """Parse compact labels like ``deselect(0.01,cumulative)`` or
        ``robustc(1.1)``."""
        text = text.strip()
        name, _, arg_text = text.partition("(")
        name = name.strip()
        args = []
        if arg_text:
            if not text.endswith(")"):
                raise ValueError(f"unbalanced parentheses in method {text!r}")
            args = [a.strip() for a in arg_text[:-1].split(",") if a.strip()]
        if name == "deselect":
            tau = float(args[0]) if args else 0.01
            variant = args[1] if len(args) > 1 else "attributable"
            return cls(kind="deselect", tau=tau, variant=variant)
        if name == "robustc":
            return cls(kind="robustc", c=float(args[0]) if args else None)
        if args:
            raise ValueError(f"method {name!r} takes no arguments")
        return cls(kind=name)

    def label(self) -> str:
        if self.kind == "robustc" and self.c is not None:
            return f"robustc({self.c:g})"
        if self.kind == "deselect" and self.variant != "attributable":
            return f"deselect-{self.variant}"
        return self.kind


def _learner_spec_for(scenario: str) -> LearnerSpec:
    return LearnerSpec(kind="pspline" if scenario == "B" else "linear")


def _selected_by_param(fit) -> dict[str, list[str]]:
    names = fit.config.family.param_names
    return {names[k]: sorted(fit.selected(k)) for k in range(len(names))}


def _replication_rows(rep: int, spec: ScenarioSpec, methods, n_folds: int,
                      m_max: int, nu: float) -> list[dict]:
    train, test, truth = generate(spec)
    family = get_family(SCENARIO_FAMILY[spec.scenario])
    config = BoostConfig(family=family, m_stop=m_max, nu=nu,
                         learners=_learner_spec_for(spec.scenario), seed=spec.seed)
    curve = cv_curve(train, config, n_folds=n_folds, m_max=m_max, seed=spec.seed)
    m_opt = mstop_opt(curve)
    classical_fit = fit_any(train, replace(config, m_stop=m_opt))

    rows = []
    for method in methods:
        tau = float("nan")
        if method.kind == "classical":
            fit, m_used = classical_fit, m_opt
        elif method.kind == "ose":
            m_used = mstop_ose(curve)
            fit = fit_any(train, replace(config, m_stop=m_used))
        elif method.kind == "robustc":
            c = method.c if method.c is not None else (1.1 if spec.scenario == "C" else 1.05)
            m_used = mstop_robustc(curve, c)
            fit = fit_any(train, replace(config, m_stop=m_used))
        elif method.kind == "probing":
            m_used = mstop_probing(train, config, seed=spec.seed)
            fit = fit_any(train, replace(config, m_stop=m_used))
        else:  # deselect: reuse the classical fit, refit on kept components
            tau = method.tau
            report = deselect(classical_fit, tau=method.tau, method=method.variant)
            kept = set(report.kept)
            kept_per_param = tuple(
                tuple(name for name in lset.names if (k, name) in kept)
                for k, lset in enumerate(classical_fit.learner_sets)
            )
            m_used = m_opt if any(kept_per_param) else 0
            fit = fit_any(train, replace(config, m_stop=m_used,
                                         candidates=kept_per_param))

        result = evaluate(predict(fit, test.X), test, truth, _selected_by_param(fit))
        mu_counts = result.per_param.get("mu", (np.nan, np.nan))
        sigma_counts = result.per_param.get("sigma", (np.nan, np.nan))
        two_param = family.n_params == 2
        for metric_name, value in result.metrics.items():
            rows.append({
                "replication": rep,
                "scenario": spec.scenario,
                "n": spec.n,
                "p": spec.p,
                "rho": spec.rho,
                "snr": float("nan") if spec.snr is None else spec.snr,
                "method": method.label(),
                "tau": tau,
                "mstop_used": m_used,
                "tp": result.tp,
                "fp": result.fp,
                "tp_mu": mu_counts[0] if two_param else float("nan"),
                "fp_mu": mu_counts[1] if two_param else float("nan"),
                "tp_sigma": sigma_counts[0] if two_param else float("nan"),
                "fp_sigma": sigma_counts[1] if two_param else float("nan"),
                "metric_name": metric_name,
                "metric_value": value,
            })
    return rows


def run_study(spec: ScenarioSpec, methods, replications: int, seed: int = 0,
              n_folds: int = 10, m_max: int = 1000, nu: float = 0.1,
              n_jobs: int = 1) -> pd.DataFrame:
    """Replicated comparison study on one scenario.

    Per replication: generate data with seed ``seed + replication``, tune
    m_stop by k-fold cross-validation, apply every method, and evaluate on
    the test set.  Emits one row per (replication, method, metric).
    Replication failures are recorded and skipped; more than 20% failures
    aborts the study.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    methods = [Method.parse(m) if isinstance(m, str) else m for m in methods]
    if not methods:
        raise ValueError("need at least one method")

    def job(rep):
        rep_spec = replace(spec, seed=seed + rep)
        try:
            return _replication_rows(rep, rep_spec, methods, n_folds, m_max, nu)
        except Exception as exc:  # noqa: BLE001 - failed replications are reported
            return (rep, f"{type(exc).__name__}: {exc}")

    if n_jobs == 1:
        outcomes = [job(rep) for rep in range(replications)]
    else:
        outcomes = Parallel(n_jobs=n_jobs)(delayed(job)(rep) for rep in range(replications))

    rows, failures = [], []
    for outcome in outcomes:
        if isinstance(outcome, tuple):
            failures.append(outcome)
        else:
            rows.extend(outcome)
    if failures:
        detail = "; ".join(f"replication {rep}: {msg}" for rep, msg in failures)
        if len(failures) > 0.2 * replications:
            raise RuntimeError(f"study aborted, too many failed replications: {detail}")
        warnings.warn(f"some replications failed: {detail}", RuntimeWarning, stacklevel=2)
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)
