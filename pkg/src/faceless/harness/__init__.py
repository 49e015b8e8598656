from .config import MODES, ExperimentConfig, Seeds
from .pipeline import ExperimentResult, QueryRecord, Workbench, evaluate, run_scenario
from .report import emit_report, load_results

__all__ = ["MODES", "ExperimentConfig", "Seeds", "ExperimentResult", "QueryRecord", "Workbench",
           "evaluate", "run_scenario", "emit_report", "load_results"]
