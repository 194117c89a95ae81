from .metrics import mae_mape
from .splits import SplitSpec, split
from .synth import DEFAULT_PAIRS, SynthCities, SynthError, related_pairs, synth_cities
from .tasks import TaskSpec, build_tasks
from .trainer import RunConfig, TrainingDiverged, TrainResult, evaluate, predict_split, train

__all__ = [
    "DEFAULT_PAIRS",
    "RunConfig",
    "SplitSpec",
    "SynthCities",
    "SynthError",
    "TaskSpec",
    "TrainResult",
    "TrainingDiverged",
    "build_tasks",
    "evaluate",
    "mae_mape",
    "predict_split",
    "related_pairs",
    "split",
    "synth_cities",
    "train",
]
