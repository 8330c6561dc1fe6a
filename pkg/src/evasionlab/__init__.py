"""Desk-scale laboratory for targeted black-box evasion of prediction APIs.

Locally trained toy classifiers stand in for victims behind partial
information top-k APIs. Four attack procedures (ENS, PRISM, PRISM_R, QO),
staged schedules over a shared query ledger, a benchmark harness, and
pareto/dominance analysis of query budgets.
"""

from .api import (Postprocessor, PredictionApi, Preprocessor, QueryLedger,
                  TopKResponse)
from .attacks import (METHODS, AttackOutcome, AttackSetting, EnsConfig,
                      PrismConfig, QoConfig, run_ens, run_prism, run_prism_r,
                      run_qo)
from .gradest import EnsembleMember, EnsembleSpec, NesConfig, nes_estimate
from .strategy import NAMED_SCHEDULES, MethodConfigs, Schedule, run_schedule
from .zoo import build_zoo, load_zoo

__version__ = "0.1.0"

__all__ = [
    "AttackOutcome", "AttackSetting", "EnsConfig", "EnsembleMember",
    "EnsembleSpec", "METHODS", "MethodConfigs", "NAMED_SCHEDULES",
    "NesConfig", "Postprocessor", "PredictionApi", "Preprocessor",
    "PrismConfig", "QoConfig", "QueryLedger", "Schedule", "TopKResponse",
    "build_zoo", "load_zoo", "nes_estimate", "run_ens", "run_prism",
    "run_prism_r", "run_qo", "run_schedule",
]
