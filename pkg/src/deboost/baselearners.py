"""Univariate regression units fitted to negative-gradient vectors.

Three kinds of base-learner are provided: simple linear (intercept + slope),
grouped linear for dummy-coded factors (joint update of all categories), and
penalized B-splines with the smoothing parameter calibrated once to a target
of effective degrees of freedom.  All learners are linear in their
coefficients, so scaled updates can be replayed exactly from stored
coefficient increments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import DataError, Dataset, NumericsError


@dataclass(frozen=True)
class LearnerSpec:
    """Recipe for building one base-learner per covariate on a dataset."""

    kind: str = "linear"  # "linear" | "pspline"
    n_knots: int = 20
    degree: int = 3
    diff_order: int = 2
    df: float = 4.0

    def __post_init__(self):
        if self.kind not in ("linear", "pspline"):
            raise ValueError(f"unknown learner kind {self.kind!r}")


def fit_linear(x, u) -> tuple[float, float]:
    """Least-squares (intercept, slope) of u on x.

    A constant x is degenerate: the slope is 0 and the intercept is mean(u).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.size != u.size or x.size < 2:
        raise ValueError("x and u must have equal length >= 2")
    if np.ptp(x) == 0.0:
        return float(np.mean(u)), 0.0
    xbar = np.mean(x)
    xc = x - xbar
    slope = float(xc @ u) / float(xc @ xc)
    return float(np.mean(u) - slope * xbar), slope


def rss(prediction, u) -> float:
    """Residual sum of squares between a fitted vector and its target."""
    prediction = np.asarray(prediction, dtype=float)
    u = np.asarray(u, dtype=float)
    if prediction.shape != u.shape:
        raise ValueError("prediction and target lengths differ")
    return float(np.sum((u - prediction) ** 2))


class LinearLearner:
    """Simple linear model u ~ intercept + slope * x for one covariate."""

    kind = "linear"

    def __init__(self, name: str, index: int, x=None):
        self.name = name
        self.index = int(index)
        self.degenerate = False
        self._x = None
        if x is not None:
            x = np.ascontiguousarray(x, dtype=float)
            self._x = x
            self.degenerate = np.ptp(x) == 0.0
            self._xbar = float(np.mean(x))
            self._xc = x - self._xbar
            self._sxx = float(self._xc @ self._xc)

    @property
    def n_coef(self) -> int:
        return 2

    def fit(self, u) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("learner was loaded without training data; cannot fit")
        u = np.asarray(u, dtype=float)
        if self.degenerate:
            return np.array([np.mean(u), 0.0])
        slope = float(self._xc @ u) / self._sxx
        return np.array([np.mean(u) - slope * self._xbar, slope])

    def fitted(self, coef) -> np.ndarray:
        return coef[0] + coef[1] * self._x

    def predict(self, coef, X) -> np.ndarray:
        return coef[0] + coef[1] * X[:, self.index]

    def summary(self, coef) -> float:
        return float(coef[1])

    def meta(self) -> dict:
        return {"kind": self.kind, "name": self.name, "index": self.index}


class GroupedLinearLearner:
    """Joint least-squares update over the dummy columns of one factor.

    Selection and deselection treat the factor as a single component.
    """

    kind = "grouped"

    def __init__(self, name: str, indices, X=None):
        self.name = name
        self.indices = [int(i) for i in indices]
        self._Z = None
        if X is not None:
            self._Z = self._design(X)
            self._pinv = np.linalg.pinv(self._Z)

    def _design(self, X) -> np.ndarray:
        return np.column_stack([np.ones(X.shape[0]), X[:, self.indices]])

    @property
    def n_coef(self) -> int:
        return 1 + len(self.indices)

    def fit(self, u) -> np.ndarray:
        if self._Z is None:
            raise RuntimeError("learner was loaded without training data; cannot fit")
        return self._pinv @ np.asarray(u, dtype=float)

    def fitted(self, coef) -> np.ndarray:
        return self._Z @ coef

    def predict(self, coef, X) -> np.ndarray:
        return self._design(X) @ coef

    def summary(self, coef) -> float:
        return float(np.linalg.norm(coef[1:]))

    def meta(self) -> dict:
        return {"kind": self.kind, "name": self.name, "indices": self.indices}


class PSplineLearner:
    """Penalized B-spline learner with a fixed, pre-calibrated penalty.

    Equidistant interior knots span the observed covariate range, extended by
    ``degree`` boundary knots on each side; the basis comes from the de Boor
    recurrence and the penalty is the Gram matrix of d-th order differences
    of adjacent coefficients.  Predictions clip new covariate values to the
    training range.
    """

    kind = "pspline"

    def __init__(self, name, index, x=None, *, n_knots=20, degree=3, diff_order=2,
                 knots=None, lam=0.0):
        self.name = name
        self.index = int(index)
        self.degree = int(degree)
        self.diff_order = int(diff_order)
        self.lam = float(lam)
        self._factor = None
        self._B = None

        if knots is not None:
            self.knots = np.asarray(knots, dtype=float)
        else:
            if x is None:
                raise ValueError("either x or a knot vector is required")
            x = np.asarray(x, dtype=float)
            if n_knots < 4:
                raise ValueError("need at least 4 interior knots")
            if degree < 1 or diff_order < 1:
                raise ValueError("degree and difference order must be >= 1")
            lo, hi = float(np.min(x)), float(np.max(x))
            if hi <= lo:
                raise DataError(f"covariate {name!r} is constant; cannot place knots")
            step = (hi - lo) / (n_knots + 1)
            self.knots = lo + step * np.arange(-degree, n_knots + degree + 2)

        q = self.knots.size - self.degree - 1
        if self.diff_order >= q:
            raise ValueError("difference order must be below the basis dimension")
        diff = np.diff(np.eye(q), n=self.diff_order, axis=0)
        self.penalty = diff.T @ diff

        if x is not None:
            self._B = self.basis(np.asarray(x, dtype=float))
            self._BtB = self._B.T @ self._B

    @property
    def lower(self) -> float:
        return float(self.knots[self.degree])

    @property
    def upper(self) -> float:
        return float(self.knots[-self.degree - 1])

    @property
    def n_coef(self) -> int:
        return self.knots.size - self.degree - 1

    def basis(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def set_lambda(self, lam: float) -> None:
        if lam < 0:
            raise ValueError("smoothing parameter must be nonnegative")
        self.lam = float(lam)
        self._factor = None

    def _factorize(self):
        if self._factor is None:
            if self._B is None:
                raise RuntimeError("learner was loaded without training data; cannot fit")
            try:
                self._factor = cho_factor(self._BtB + self.lam * self.penalty)
            except LinAlgError as exc:
                raise NumericsError(
                    f"penalized system for {self.name!r} is singular: {exc}"
                ) from exc
        return self._factor

    def fit(self, u) -> np.ndarray:
        return cho_solve(self._factorize(), self._B.T @ np.asarray(u, dtype=float))

    def fitted(self, coef) -> np.ndarray:
        return self._B @ coef

    def predict(self, coef, X) -> np.ndarray:
        return self.basis(X[:, self.index]) @ coef

    def summary(self, coef) -> float:
        return float(np.linalg.norm(coef))

    def effective_df(self, lam: float) -> float:
        """trace(B (B'B + lam D'D)^{-1} B') via the equivalent q x q solve."""
        if self._B is None:
            raise RuntimeError("learner was loaded without training data")
        return float(np.trace(np.linalg.solve(self._BtB + lam * self.penalty, self._BtB)))

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "index": self.index,
            "degree": self.degree,
            "diff_order": self.diff_order,
            "lam": self.lam,
            "knots": self.knots.tolist(),
        }


def build_pspline(x, n_knots=20, degree=3, diff_order=2, *, name="x", index=0) -> PSplineLearner:
    """Construct an uncalibrated P-spline learner (lambda = 0) on a covariate."""
    return PSplineLearner(name, index, x, n_knots=n_knots, degree=degree,
                          diff_order=diff_order)


def calibrate_lambda(learner: PSplineLearner, df_target: float, tol: float = 0.01) -> float:
    """Smoothing parameter matching the target effective degrees of freedom.

    Bisects on log(lambda) over [-20, 20]; the trace df is strictly
    decreasing in lambda, from rank(B) at lambda -> 0 down to the penalty
    null-space dimension.
    """
    q = learner.n_coef
    if not 1.0 < df_target < q:
        raise ValueError(f"df target must lie in (1, {q})")
    lo, hi = -20.0, 20.0
    df_lo = learner.effective_df(np.exp(lo))
    df_hi = learner.effective_df(np.exp(hi))
    if not df_hi - tol <= df_target <= df_lo + tol:
        raise DataError(
            f"df target {df_target} unreachable for {learner.name!r}; "
            f"achievable range is [{df_hi:.3f}, {df_lo:.3f}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if learner.effective_df(np.exp(mid)) > df_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    lam = float(np.exp(0.5 * (lo + hi)))
    achieved = learner.effective_df(lam)
    if abs(achieved - df_target) > tol:
        raise DataError(
            f"df calibration for {learner.name!r} stalled at {achieved:.4f} "
            f"(target {df_target})"
        )
    return lam


def fit_pspline(learner: PSplineLearner, u) -> np.ndarray:
    """Solve (B'B + lambda D'D) gamma = B'u for the basis coefficients."""
    u = np.asarray(u, dtype=float)
    if learner._B is None or u.size != learner._B.shape[0]:
        raise ValueError("gradient length does not match the training design")
    return learner.fit(u)


def pspline_learner(name, index, x, spec: LearnerSpec) -> PSplineLearner:
    """Build and df-calibrate a P-spline learner in one step."""
    learner = PSplineLearner(name, index, x, n_knots=spec.n_knots,
                             degree=spec.degree, diff_order=spec.diff_order)
    learner.set_lambda(calibrate_lambda(learner, spec.df))
    return learner


# covariates with too few distinct values cannot support a df-4 spline basis
_MIN_SPLINE_UNIQUE = 6


class BaseLearnerSet:
    """Ordered collection of candidate learners for one distribution parameter.

    Selection ties are broken by position, i.e. by covariate order.  When all
    learners are plain linear units the per-iteration best fit uses a single
    vectorized pass over the cached centered design.
    """

    def __init__(self, learners):
        self.learners = list(learners)
        self.by_name = {lrn.name: lrn for lrn in self.learners}
        if len(self.by_name) != len(self.learners):
            raise ValueError("duplicate component names in a learner set")
        self._fast = bool(self.learners) and all(
            isinstance(l, LinearLearner) and not l.degenerate and l._x is not None
            for l in self.learners
        )
        if self._fast:
            self._Xc = np.column_stack([l._xc for l in self.learners])
            self._sxx = np.array([l._sxx for l in self.learners])
            self._xbar = np.array([l._xbar for l in self.learners])

    def __len__(self) -> int:
        return len(self.learners)

    @property
    def names(self) -> list[str]:
        return [l.name for l in self.learners]

    def fit_best(self, u) -> tuple[int, np.ndarray]:
        """Fit every candidate to u; return (position, coefficients) of the
        learner with the smallest residual sum of squares."""
        if not self.learners:
            raise ValueError("empty learner set")
        u = np.asarray(u, dtype=float)
        if self._fast:
            ubar = float(np.mean(u))
            slopes = (self._Xc.T @ u) / self._sxx
            # rss_j = ||u - ubar||^2 - slope_j^2 sxx_j; the first term is shared
            best = int(np.argmax(slopes**2 * self._sxx))
            coef = np.array([ubar - slopes[best] * self._xbar[best], slopes[best]])
            return best, coef
        best_pos, best_coef, best_rss = 0, None, np.inf
        for pos, learner in enumerate(self.learners):
            coef = learner.fit(u)
            r = rss(learner.fitted(coef), u)
            if r < best_rss:
                best_pos, best_coef, best_rss = pos, coef, r
        return best_pos, best_coef

    def rss_all(self, u) -> np.ndarray:
        """Residual sums of squares of every candidate, via individual fits."""
        u = np.asarray(u, dtype=float)
        return np.array(
            [rss(l.fitted(l.fit(u)), u) for l in self.learners]
        )

    def restrict(self, names) -> "BaseLearnerSet":
        keep = set(names)
        return BaseLearnerSet([l for l in self.learners if l.name in keep])

    def bind(self, X) -> "NewDataBinder":
        return NewDataBinder(self, np.asarray(X, dtype=float))


class NewDataBinder:
    """Applies coefficient vectors of a learner set to a new design matrix,
    caching per-learner designs across repeated calls."""

    def __init__(self, learner_set: BaseLearnerSet, X: np.ndarray):
        self._set = learner_set
        self._X = X
        self._cache: dict[str, np.ndarray] = {}

    def apply(self, name: str, coef) -> np.ndarray:
        learner = self._set.by_name[name]
        if isinstance(learner, LinearLearner):
            return coef[0] + coef[1] * self._column(name, learner)
        return self._design(name, learner) @ coef

    def _column(self, name, learner):
        if name not in self._cache:
            self._cache[name] = self._X[:, learner.index]
        return self._cache[name]

    def _design(self, name, learner):
        if name not in self._cache:
            if isinstance(learner, PSplineLearner):
                self._cache[name] = learner.basis(self._X[:, learner.index])
            else:
                self._cache[name] = learner._design(self._X)
        return self._cache[name]


def learner_from_meta(meta: dict):
    """Rebuild a predict-only learner from its serialized metadata."""
    kind = meta["kind"]
    if kind == "linear":
        return LinearLearner(meta["name"], meta["index"])
    if kind == "grouped":
        return GroupedLinearLearner(meta["name"], meta["indices"])
    if kind == "pspline":
        return PSplineLearner(
            meta["name"], meta["index"], knots=meta["knots"],
            degree=meta["degree"], diff_order=meta["diff_order"], lam=meta["lam"],
        )
    raise DataError(f"unknown learner kind {kind!r} in model file")


def build_learner_set(data: Dataset, spec: LearnerSpec, candidates=None) -> BaseLearnerSet:
    """One learner per component of a dataset, in covariate order.

    Factors (dummy blocks in ``data.groups``) become grouped-linear learners
    regardless of ``spec.kind``.  With ``spec.kind == "pspline"`` a continuous
    covariate with too few distinct values falls back to a linear learner.
    ``candidates`` optionally restricts the set to the named components.
    """
    in_group = {}
    for factor, cols in data.groups.items():
        for c in cols:
            in_group[c] = factor
    learners = []
    done_factors = set()
    for pos in range(data.p):
        if pos in in_group:
            factor = in_group[pos]
            if factor in done_factors:
                continue
            done_factors.add(factor)
            learners.append(GroupedLinearLearner(factor, data.groups[factor], data.X))
            continue
        name = data.columns[pos]
        x = data.X[:, pos]
        if spec.kind == "pspline":
            if np.unique(x).size >= _MIN_SPLINE_UNIQUE:
                learners.append(pspline_learner(name, pos, x, spec))
                continue
            warnings.warn(
                f"covariate {name!r} has too few distinct values for a spline; "
                "using a linear learner",
                RuntimeWarning,
                stacklevel=2,
            )
        learners.append(LinearLearner(name, pos, x))
    if candidates is not None:
        keep = set(candidates)
        learners = [l for l in learners if l.name in keep]
    return BaseLearnerSet(learners)
