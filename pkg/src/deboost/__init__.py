"""Component-wise gradient boosting with risk-reduction-based deselection.

Fits sparse additive models (mean regression, classification, and
location-scale distributional regression) by component-wise gradient
boosting, then prunes base-learners whose share of the total risk reduction
falls below a threshold, and refits on the survivors.  Also provides the
earlier-stopping baselines (one-standard-error, RobustC, probing), scenario
generators, and a replication-study runner.
"""

from .baselearners import (
    BaseLearnerSet,
    GroupedLinearLearner,
    LearnerSpec,
    LinearLearner,
    PSplineLearner,
    build_learner_set,
    build_pspline,
    calibrate_lambda,
    fit_linear,
    fit_pspline,
    pspline_learner,
    rss,
)
from .data import DataError, Dataset, NumericsError, load_csv, substream
from .deselection import (
    DeselectionReport,
    attributable_risk_reduction,
    deselect,
    deselect_boost,
)
from .engine import (
    BoostConfig,
    BoostFit,
    Prediction,
    SelectionRecord,
    boost,
    boost_lss,
    coefficient_paths,
    fit_any,
    fit_from_dict,
    fit_to_dict,
    load_fit,
    predict,
    replay_risks,
    risk_path,
    save_fit,
)
from .families import (
    BetaLocationPrecision,
    Family,
    GaussianLocationScale,
    L2,
    Logistic,
    get_family,
)
from .simulation import (
    EvaluationResult,
    Method,
    ScenarioSpec,
    Truth,
    auc,
    covariance,
    evaluate,
    generate,
    run_study,
    sample_mvn,
)
from .tuning import CVCurve, cv_curve, mstop_opt, mstop_ose, mstop_probing, mstop_robustc

__version__ = "0.1.0"
