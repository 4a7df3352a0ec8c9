"""Multiparty videoconference clip analysis: events, coupling, labels, models."""

__version__ = "0.1.0"

from .sessions import (  # noqa: F401
    ClipWindow,
    FeatureFrameMatrix,
    LabeledClip,
    RatingRecord,
    SchemaError,
    Session,
    SpeakerTrack,
    load_session,
    slice_clip,
)
from .events import ActivityMatrix, EventMark, compute_activity, detect_marks  # noqa: F401
from .coupling import (  # noqa: F401
    GcResult,
    MotionSeries,
    PreparedPanel,
    fit_var,
    pairwise_gc,
    preprocess_motion,
)
from .fusion import FusedDataset, FusionSpec, assemble, build_dataset  # noqa: F401
from .stats import chi2_yates, pearson_r, student_t  # noqa: F401
from .surveys import aggregate_and_binarize, filter_reliable_raters, majority_event  # noqa: F401
from .folds import FoldPlan, stratified_group_kfold  # noqa: F401
from .preprocess import Preprocessor, fit_preprocessor  # noqa: F401
from .sgdlogit import SgdConfig, TrainedModel, train_sgd_logistic  # noqa: F401
from .metrics import Metrics, evaluate  # noqa: F401
from .bayesopt import BayesOptResult, bayes_optimize  # noqa: F401
from .experiment import ExperimentConfig, CvResult, cross_predict, run_cv_experiment  # noqa: F401
