"""Multi-task training with transference-driven gradient coordination.

The package trains shared-bottom networks on several binary tasks at once,
measuring how each task's update moves the others' losses (transference)
and modifying shared-parameter gradients to raise it. Finite-difference
oracles validate every analytic gradient and curvature approximation.
"""

from .errors import (
    CogradError,
    ConfigError,
    CsvParseError,
    DataError,
    DegenerateGradientError,
    DimensionError,
    DivergenceError,
    EvaluationError,
    LayoutError,
    OracleError,
    ProbeError,
    UndefinedMetricError,
)
from .experiments import (
    DataConfig,
    ExperimentConfig,
    ModelConfig,
    RunResult,
    build_dataset,
    config_to_dict,
    load_config,
    resolve_config,
    run_capacity_sweep,
    run_one,
    run_probe,
    run_study,
    run_validate_approx,
)
from .gradmod import (
    EXACT_HVP_PARAM_BUDGET,
    STRATEGY_KINDS,
    StrategyConfig,
    TransferenceRecord,
    approx_hvp,
    cograd_modify,
    cograd_modify_exact_hvp,
    magnitude_balance,
    measure_transference,
    modify_gradients,
    pairwise_cosine,
    pcgrad_modify,
    transfer_exact,
    transfer_first_order,
)
from .metrics import evaluate_auc, evaluate_gauc, loss_weights_from_prior
from .model import (
    DenseLayer,
    ForwardCache,
    SharedBottomNet,
    backward_task,
    forward,
    init_net,
    load_net,
    predict_proba,
    save_net,
    task_loss,
    theta_grad_fn,
    theta_loss_fn,
    trunk_activations,
)
from .tasks_data import (
    DatasetSplits,
    MultiTaskDataset,
    SyntheticTaskConfig,
    batches,
    generate_synthetic,
    load_csv,
    select_tasks,
    split,
    write_csv,
)
from .tensor_core import (
    LayoutEntry,
    ParamVector,
    finite_diff_gradient,
    finite_diff_hvp,
    flatten_params,
    hvp_default_eps,
    unflatten_params,
)
from .trainer import (
    AdamState,
    EvalRecord,
    MetricsLog,
    ProbeConfig,
    ProbeResult,
    StepRecord,
    TrainConfig,
    adam_step,
    probe_harmonization,
    save_metrics,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CogradError",
    "ConfigError",
    "CsvParseError",
    "DataConfig",
    "DataError",
    "DatasetSplits",
    "DegenerateGradientError",
    "DenseLayer",
    "DimensionError",
    "DivergenceError",
    "EXACT_HVP_PARAM_BUDGET",
    "EvalRecord",
    "EvaluationError",
    "ExperimentConfig",
    "ForwardCache",
    "LayoutEntry",
    "LayoutError",
    "MetricsLog",
    "ModelConfig",
    "MultiTaskDataset",
    "OracleError",
    "ParamVector",
    "ProbeConfig",
    "ProbeError",
    "ProbeResult",
    "RunResult",
    "STRATEGY_KINDS",
    "SharedBottomNet",
    "StepRecord",
    "StrategyConfig",
    "SyntheticTaskConfig",
    "TrainConfig",
    "TransferenceRecord",
    "UndefinedMetricError",
    "adam_step",
    "approx_hvp",
    "backward_task",
    "batches",
    "build_dataset",
    "cograd_modify",
    "cograd_modify_exact_hvp",
    "config_to_dict",
    "evaluate_auc",
    "evaluate_gauc",
    "finite_diff_gradient",
    "finite_diff_hvp",
    "flatten_params",
    "forward",
    "generate_synthetic",
    "hvp_default_eps",
    "init_net",
    "load_config",
    "load_csv",
    "load_net",
    "loss_weights_from_prior",
    "magnitude_balance",
    "measure_transference",
    "modify_gradients",
    "pairwise_cosine",
    "pcgrad_modify",
    "predict_proba",
    "probe_harmonization",
    "resolve_config",
    "run_capacity_sweep",
    "run_one",
    "run_probe",
    "run_study",
    "run_validate_approx",
    "save_metrics",
    "save_net",
    "select_tasks",
    "sgd_step",
    "split",
    "task_loss",
    "theta_grad_fn",
    "theta_loss_fn",
    "train",
    "transfer_exact",
    "transfer_first_order",
    "trunk_activations",
    "unflatten_params",
    "write_csv",
]
