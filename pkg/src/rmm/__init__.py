"""Reservoir memory machines: echo state networks with external memory."""

from .bench import (
    BenchReport,
    BenchRow,
    TrialConfig,
    build_reservoir,
    default_neuron_count,
    default_search_space,
    emit_report,
    load_report,
    random_search,
    render_report,
    run_benchmark,
    run_trial,
    sample_hyperparameters,
    train_trial,
)
from .errors import (
    FormatError,
    InvalidArgumentError,
    MetricUndeterminedError,
    SingularSystemError,
    SolverFailureError,
    ToolkitError,
    UnsupportedReservoirError,
)
from .machines import (
    CompiledRnn,
    MooreMachine,
    compile_fsm_to_rnn,
    cycle_reduce,
    moore_run,
    one_cycle_training_sequences,
    random_moore,
    read_machine_file,
    run_compiled,
    toggle_machine,
    write_machine_file,
)
from .memory_machine import (
    Armm,
    ArmmTrace,
    Episode,
    EsnBaseline,
    Memory,
    Rmm,
    RmmTrace,
    armm_run,
    armm_step,
    derive_forced_decisions,
    evaluate_rmse,
    load_model,
    predict_episode,
    rmm_run,
    rmm_step,
    save_model,
    train_armm,
    train_esn,
    train_rmm,
)
from .reservoir import (
    DelayOperatorBank,
    LdnMeta,
    Reservoir,
    delay_operators,
    make_crj_reservoir,
    make_ldn_reservoir,
    make_random_reservoir,
    reservoir_step,
    run_reservoir,
    spectral_radius,
)
from .tasks import (
    TASK_NAMES,
    TaskSpec,
    admits_linear_simulation,
    gen_assoc_recall,
    gen_copy,
    gen_dataset,
    gen_fsm_task,
    gen_latch,
    gen_repeat_copy,
    gen_signal_copy,
    has_rankable_successors,
    read_episodes,
    task_spec,
    write_episodes,
)
from .training import (
    AssociationMetric,
    LinearClassifier,
    RidgeReadout,
    association_costs,
    derive_write_labels,
    fit_association_metric,
    fit_classifier,
    fit_ridge,
)

__all__ = [
    "Armm",
    "ArmmTrace",
    "AssociationMetric",
    "BenchReport",
    "BenchRow",
    "CompiledRnn",
    "DelayOperatorBank",
    "Episode",
    "EsnBaseline",
    "FormatError",
    "InvalidArgumentError",
    "LdnMeta",
    "LinearClassifier",
    "Memory",
    "MetricUndeterminedError",
    "MooreMachine",
    "Reservoir",
    "RidgeReadout",
    "Rmm",
    "RmmTrace",
    "SingularSystemError",
    "SolverFailureError",
    "TASK_NAMES",
    "TaskSpec",
    "ToolkitError",
    "TrialConfig",
    "UnsupportedReservoirError",
    "admits_linear_simulation",
    "armm_run",
    "armm_step",
    "association_costs",
    "build_reservoir",
    "compile_fsm_to_rnn",
    "cycle_reduce",
    "default_neuron_count",
    "default_search_space",
    "delay_operators",
    "derive_forced_decisions",
    "derive_write_labels",
    "emit_report",
    "evaluate_rmse",
    "fit_association_metric",
    "fit_classifier",
    "fit_ridge",
    "gen_assoc_recall",
    "gen_copy",
    "gen_dataset",
    "gen_fsm_task",
    "gen_latch",
    "gen_repeat_copy",
    "gen_signal_copy",
    "has_rankable_successors",
    "load_model",
    "load_report",
    "make_crj_reservoir",
    "make_ldn_reservoir",
    "make_random_reservoir",
    "moore_run",
    "one_cycle_training_sequences",
    "predict_episode",
    "random_moore",
    "random_search",
    "read_episodes",
    "read_machine_file",
    "render_report",
    "reservoir_step",
    "rmm_run",
    "rmm_step",
    "run_benchmark",
    "run_compiled",
    "run_reservoir",
    "run_trial",
    "sample_hyperparameters",
    "save_model",
    "spectral_radius",
    "task_spec",
    "toggle_machine",
    "train_armm",
    "train_esn",
    "train_rmm",
    "train_trial",
    "write_episodes",
    "write_machine_file",
]
