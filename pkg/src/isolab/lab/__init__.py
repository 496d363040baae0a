from .config import ExperimentConfig, load_config, parse_config
from .runner import RunRecord, dumps17, run

__all__ = ["ExperimentConfig", "RunRecord", "dumps17", "load_config", "parse_config", "run"]
