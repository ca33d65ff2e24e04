"""pairq: pairwise quality learning across incommensurable rating scales.

Combines separately-annotated databases through within-database pair
probabilities, trains two-headed scorers (quality + uncertainty) with a
fidelity loss plus a hinge uncertainty regularizer, and evaluates with
SRCC/PLCC/fidelity metrics and maximum-differentiation model comparison.
"""

__version__ = "0.1.0"

from .data import AnnotatedItem, Database, Split, load_database, normalize_polarity, split_by_content
from .losses import LossConfig
from .metrics import EvalReport, plcc, srcc
from .pairs import PairSample, TrainingSet, sample_pairs, thurstone_probability
from .scorer import Architecture, ModelOutput, ScorerParams, forward, init_params
from .session import SessionConfig, run_sessions
from .synth import SynthDbConfig, gen_benchmark, gen_database
from .trainer import TrainConfig, train

__all__ = [
    "AnnotatedItem", "Database", "Split", "load_database", "normalize_polarity",
    "split_by_content", "LossConfig", "EvalReport", "plcc", "srcc", "PairSample",
    "TrainingSet", "sample_pairs", "thurstone_probability", "Architecture",
    "ModelOutput", "ScorerParams", "forward", "init_params", "SessionConfig",
    "run_sessions", "SynthDbConfig", "gen_benchmark", "gen_database",
    "TrainConfig", "train", "__version__",
]
