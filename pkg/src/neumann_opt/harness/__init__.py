from .config import ConfigError, ExperimentConfig, LrConfig, ProblemSpec, parse_config, parse_config_text
from .train import (RunResult, build_problem, gradcheck, run_compare, run_eigenprobe, run_train,
                    split_indices)

__all__ = [
    "ConfigError", "ExperimentConfig", "LrConfig", "ProblemSpec", "parse_config", "parse_config_text",
    "RunResult", "build_problem", "gradcheck", "run_compare", "run_eigenprobe", "run_train", "split_indices",
]
