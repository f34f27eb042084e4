from .anytime import (
    AnytimeMeroState,
    SaddleState,
    anytime_mero_round,
    mero_gradients,
    pretrain_average_risk,
    run_anytime_mero,
    run_gdro_smd,
    run_reference_mero,
    saddle_update,
)
from .common import RunResult, Snapshot, every
from .multistage import run_multistage_mero
from .schedules import StepSchedule
from .smd import RiskMinimizerState, run_smd, smd_risk_step
from .weighted import (
    TwoStageState,
    run_two_stage_weighted_mero,
    run_weighted_gdro,
    smpa_round,
    weighted_gradients,
    weights_from_budgets,
)

__all__ = [
    "AnytimeMeroState",
    "RiskMinimizerState",
    "RunResult",
    "SaddleState",
    "Snapshot",
    "StepSchedule",
    "TwoStageState",
    "anytime_mero_round",
    "every",
    "mero_gradients",
    "pretrain_average_risk",
    "run_anytime_mero",
    "run_gdro_smd",
    "run_multistage_mero",
    "run_reference_mero",
    "run_smd",
    "run_two_stage_weighted_mero",
    "run_weighted_gdro",
    "saddle_update",
    "smd_risk_step",
    "smpa_round",
    "weighted_gradients",
    "weights_from_budgets",
]
