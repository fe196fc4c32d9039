"""barbench: a deterministic workbench for studying how training-test
sampling distributions shape chart-reading regressors.

The pieces compose bottom-up: `domain` enumerates the discrete sampling
axes, `sampling` splits them and selects training values four ways,
`stimulus` renders reproducible bar-chart datasets, `learner` trains a
desk-scale pixel regressor, `analysis` provides the metrics and test
statistics, and `runner`/`cli` orchestrate whole studies into reports.
"""

__version__ = "0.1.0"

from .domain import (
    DiscreteDomain,
    DomainError,
    HeightPair,
    PairTable,
    RatioBin,
    bin_of,
    enumerate_pairs,
    ratio_bin_domain,
    taller_height_domain,
)
from .sampling import (
    DownsampleLevel,
    SamplingPlan,
    Split,
    downsample,
    make_plan,
    sample_adv,
    sample_cov,
    sample_iid,
    sample_ood,
    split_holdout,
    training_test_distance,
)
from .stimulus import (
    Appearance,
    DatasetManifest,
    RenderError,
    StimulusRecord,
    choose_pair,
    generate_dataset,
    regenerate_dataset,
    render,
)
from .learner import (
    GradientCheckError,
    LearnerConfig,
    TrainedModel,
    TrainingError,
    featurize,
    gradient_check,
    predict,
    train,
)
from .analysis import (
    AnalysisError,
    AnovaResult,
    ConsistencyMatrix,
    PredictionRecord,
    aggregate_by_pair,
    anova_oneway,
    confidence_interval_95,
    consistency_matrix,
    lowess,
    mae,
    midmean,
    mlae,
    pearson,
    tukey_hsd,
)
from .runner import ExperimentConfig, RunResult, emit_model_card, run_experiment
