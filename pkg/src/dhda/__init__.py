"""Online configuration-performance learning with dually hierarchical drift adaptation."""

from .core import Batch, ConfigurationSample, Division, SlidingWindow, make_sample, window_append, window_discard_before
from .evaluation import EvaluationTrace, make_learner, mape, mmape, run_baseline, run_many, run_prequential, summarize
from .local_adapt import AdwinDetector, DetectorState, adwin_observe, detector_reset, prune_on_drift
from .models import (
    LocalModel,
    RouterClassifier,
    predict_local,
    route,
    train_local,
    train_router,
    update_local,
)
from .orchestrator import (
    Action,
    AdaptationReport,
    DHDAEngine,
    EngineConfig,
    Maintenance,
    initialize,
    maintenance_decision,
    observe_batch,
    predict,
)
from .partition import (
    GlobalDriftConfig,
    RegressionTree,
    detect_global_drift,
    extract_divisions,
    hoeffding_epsilon,
    total_importance,
    train_cart,
)
from .stream import (
    Concept,
    ConceptChange,
    EnvironmentTable,
    StreamSpec,
    SynthSpec,
    build_stream,
    load_dataset,
    scenario,
    synth_stream,
)

__version__ = "0.1.0"
