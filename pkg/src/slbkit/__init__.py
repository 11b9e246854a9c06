"""Self-labeling toolkit for weight-sensed assembly recordings."""

from .core import (
    DEFAULT_INTENTION_MS,
    ConfigError,
    IntegrityError,
    IntentionLabel,
    ParseError,
    Part,
    PartCatalog,
    Recording,
    Sample,
    SensorStream,
    SlbError,
    ValidationError,
)
from .detect import DetectorConfig, StateChange, detect_state_changes
from .evaluate import MatchRule, build_confusion, score_agreement, time_savings
from .selflabel import ItmModel, fit_itm, generate_self_labels, pair_labels_to_changes
from .synthgen import ScenarioConfig, default_scenario, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_INTENTION_MS",
    "ConfigError",
    "DetectorConfig",
    "IntegrityError",
    "IntentionLabel",
    "ItmModel",
    "MatchRule",
    "ParseError",
    "Part",
    "PartCatalog",
    "Recording",
    "Sample",
    "ScenarioConfig",
    "SensorStream",
    "SlbError",
    "StateChange",
    "ValidationError",
    "build_confusion",
    "default_scenario",
    "detect_state_changes",
    "fit_itm",
    "generate_corpus",
    "generate_self_labels",
    "pair_labels_to_changes",
    "score_agreement",
    "time_savings",
    "__version__",
]
