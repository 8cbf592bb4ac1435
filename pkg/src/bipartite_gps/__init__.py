"""Joint propensity score subclassification for bipartite network interference."""

__version__ = "0.1.0"

from .data_model import BipartiteDataset, CovariateSchema, InterferenceMap, load_dataset
from .effects import EstimationConfig, run_pipeline
from .exposure import analysis_frame, derive_exposures
from .synth import SynthConfig, generate, true_estimands

__all__ = [
    "BipartiteDataset", "CovariateSchema", "InterferenceMap", "load_dataset",
    "EstimationConfig", "run_pipeline", "analysis_frame", "derive_exposures",
    "SynthConfig", "generate", "true_estimands", "__version__",
]
