from .experiment import (ExperimentConfig, ExperimentResult, StrategyReport, export_loss_curves,
                         parse_strategy, read_loss_curves, run_experiment)
from .scoring import WerBreakdown, wer, werr

__all__ = ["ExperimentConfig", "ExperimentResult", "StrategyReport", "WerBreakdown", "export_loss_curves",
           "parse_strategy", "read_loss_curves", "run_experiment", "wer", "werr"]
