from consolidate._core import (
    ConsolidatedState,
    Dataset,
    EwcError,
    ImportanceMap,
    Network,
    TaskSequence,
    TaskSpec,
    accumulate,
    consolidate,
    explosion_demo,
    fisher_importance,
    make_permuted_tasks,
    make_task_sequence,
    mas_importance,
    mean_ci,
    penalty_gradient,
    penalty_value,
    run_sequential,
    step_factor,
    total_abs_signal_importance,
)

__all__ = [
    "ConsolidatedState",
    "Dataset",
    "EwcError",
    "ImportanceMap",
    "Network",
    "TaskSequence",
    "TaskSpec",
    "accumulate",
    "consolidate",
    "explosion_demo",
    "fisher_importance",
    "make_permuted_tasks",
    "make_task_sequence",
    "mas_importance",
    "mean_ci",
    "penalty_gradient",
    "penalty_value",
    "run_sequential",
    "step_factor",
    "total_abs_signal_importance",
]
