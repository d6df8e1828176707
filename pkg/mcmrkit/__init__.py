from . import (
    exceptions,
    types,
)
from .config import (
    ExperimentConfig,
    load_config,
    parse_config,
)
from .pipeline import (
    Experiment,
    experiment,
)
