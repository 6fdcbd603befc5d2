"""Benchmark harness: random search, repeated runs, report emission.

The protocol for every task/model/reservoir combination is: draw 10
hyperparameter settings uniformly from the declared search space, score
each on 3 fresh 80/10 train/validation splits, keep the best, then
train and evaluate it on 20 fresh 90/10 datasets, timing each train +
predict pass on a monotonic wall clock. Everything is deterministic in
the master seed except the recorded runtimes.
"""

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError, UnsupportedReservoirError
from .memory_machine import evaluate_rmse, train_armm, train_esn, train_rmm
from .reservoir import (
    Reservoir,
    make_crj_reservoir,
    make_ldn_reservoir,
    make_random_reservoir,
)
from .tasks import TaskSpec, gen_dataset, task_spec

MODEL_NAMES = ("esn", "rmm", "armm")
RESERVOIR_NAMES = ("random", "crj", "ldn")

CSV_COLUMNS = (
    "task",
    "model",
    "reservoir",
    "rmse_mean",
    "rmse_std",
    "runtime_mean",
    "runtime_std",
    "repeats",
)

_NEURON_COUNTS = {
    "latch": 64,
    "signal_copy": 64,
    "fsm": 64,
    "copy": 256,
    "repeat_copy": 256,
    "assoc_recall": 256,
}


def default_neuron_count(task: "TaskSpec | str") -> int:
    """Per-task reservoir size used by the benchmark."""
    name = task.name if isinstance(task, TaskSpec) else task
    try:
        return _NEURON_COUNTS[name]
    except KeyError:
        raise InvalidArgumentError(f"no neuron budget for task {name!r}") from None


@dataclass(frozen=True)
class TrialConfig:
    """One fully specified training configuration."""

    task: TaskSpec
    model: str
    reservoir_kind: str
    n_neurons: int
    hyperparameters: "dict[str, float]"
    seed: int

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise InvalidArgumentError(f"unknown model {self.model!r}")
        if self.reservoir_kind not in RESERVOIR_NAMES:
            raise InvalidArgumentError(
                f"unknown reservoir kind {self.reservoir_kind!r}"
            )
        if self.n_neurons < 1:
            raise InvalidArgumentError("n_neurons must be at least 1")


@dataclass(frozen=True)
class BenchRow:
    """Aggregated results for one task/model/reservoir combination."""

    task: str
    model: str
    reservoir: str
    rmse_mean: float
    rmse_std: float
    runtime_mean_s: float
    runtime_std_s: float
    repeats: int
    best_hyperparameters: "dict[str, float]"
    rmse_values: "tuple[float, ...]"
    runtime_values_s: "tuple[float, ...]"

    def __post_init__(self):
        if self.rmse_std < 0 or self.runtime_std_s < 0:
            raise InvalidArgumentError("standard deviations must be nonnegative")


@dataclass(frozen=True)
class BenchReport:
    """A collection of benchmark rows."""

    rows: "tuple[BenchRow, ...]"


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------


def default_search_space(
    model: str,
    reservoir_kind: str,
    task: "TaskSpec | str",
    n_neurons: "int | None" = None,
) -> "dict[str, tuple]":
    """The declared hyperparameter ranges for one combination.

    Entries are ``name -> (kind, ...)`` with kinds ``uniform`` (low,
    high), ``log_uniform`` (low, high; sampled log-uniformly),
    ``int_uniform`` (low, high inclusive), and ``choice`` (options).
    """
    spec = task if isinstance(task, TaskSpec) else task_spec(task)
    if n_neurons is None:
        n_neurons = default_neuron_count(spec)
    space: "dict[str, tuple]" = {"ridge_lambda": ("log_uniform", 1e-8, 1.0)}
    if reservoir_kind == "random":
        space["spectral_radius"] = ("uniform", 0.5, 0.99)
        space["input_scale"] = ("uniform", 0.1, 2.0)
    elif reservoir_kind == "crj":
        space["r_cycle"] = ("uniform", 0.1, 0.95)
        space["r_jump"] = ("uniform", 0.1, 0.95)
        space["jump_length"] = ("int_uniform", 2, max(2, n_neurons // 2))
        space["input_scale"] = ("uniform", 0.1, 2.0)
    elif reservoir_kind == "ldn":
        space["window"] = ("uniform", 0.5 * spec.horizon, 2.0 * spec.horizon)
    else:
        raise InvalidArgumentError(f"unknown reservoir kind {reservoir_kind!r}")
    if model in ("rmm", "armm"):
        space["hinge_c"] = ("log_uniform", 1e-2, 1e3)
    if model == "armm":
        space["l1_weight"] = ("log_uniform", 1e-5, 1e-1)
    return space


def sample_hyperparameters(
    space: "dict[str, tuple]", rng: np.random.Generator
) -> "dict[str, float]":
    """Draw one configuration; every key is sampled, in name order."""
    if not space:
        raise InvalidArgumentError("search space must be nonempty")
    params: "dict[str, float]" = {}
    for name in sorted(space):
        kind, *args = space[name]
        if kind == "uniform":
            params[name] = float(rng.uniform(args[0], args[1]))
        elif kind == "log_uniform":
            low, high = np.log10(args[0]), np.log10(args[1])
            params[name] = float(10.0 ** rng.uniform(low, high))
        elif kind == "int_uniform":
            params[name] = int(rng.integers(args[0], args[1] + 1))
        elif kind == "choice":
            options = args[0]
            params[name] = options[int(rng.integers(len(options)))]
        else:
            raise InvalidArgumentError(f"unknown sampler kind {kind!r}")
    return params


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------


def build_reservoir(config: TrialConfig) -> Reservoir:
    """Construct the reservoir named by a trial configuration.

    For the delay network the neuron budget is spent on
    ``n_neurons // input_dim`` Legendre coefficients per channel, so the
    realized size is the largest multiple of the channel count within
    the budget.
    """
    params = config.hyperparameters
    m = config.task.input_dim
    if config.reservoir_kind == "random":
        return make_random_reservoir(
            config.n_neurons,
            m,
            spectral_radius_target=params.get("spectral_radius", 0.9),
            input_scale=params.get("input_scale", 1.0),
            seed=config.seed,
        )
    if config.reservoir_kind == "crj":
        return make_crj_reservoir(
            config.n_neurons,
            m,
            r_cycle=params.get("r_cycle", 0.7),
            r_jump=params.get("r_jump", 0.4),
            jump_length=int(params.get("jump_length", 3)),
            input_scale=params.get("input_scale", 1.0),
            seed=config.seed,
        )
    order = max(1, config.n_neurons // m)
    return make_ldn_reservoir(
        order, m, window=float(params.get("window", config.task.horizon))
    )


def train_trial(config: TrialConfig, episodes):
    """Train the model described by a configuration on given episodes."""
    if config.model == "armm" and config.reservoir_kind != "ldn":
        raise UnsupportedReservoirError(
            "the associative machine requires the ldn reservoir"
        )
    res = build_reservoir(config)
    params = config.hyperparameters
    ridge_lambda = params.get("ridge_lambda", 1e-6)
    if config.model == "esn":
        return train_esn(res, episodes, ridge_lambda)
    hinge_c = params.get("hinge_c", 10.0)
    if config.model == "rmm":
        return train_rmm(res, episodes, ridge_lambda, hinge_c)
    return train_armm(
        res,
        episodes,
        ridge_lambda,
        hinge_c,
        l1_weight=params.get("l1_weight", 1e-3),
    )


def run_trial(config: TrialConfig, train_episodes, test_episodes):
    """Train, predict, and time one run.

    Returns ``(rmse, seconds)`` where the clock covers training and
    prediction on the test episodes.
    """
    start = time.monotonic()
    model = train_trial(config, train_episodes)
    _, rmse = evaluate_rmse(model, test_episodes)
    return float(rmse), time.monotonic() - start


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def _run_jobs(jobs):
    """Execute callables, optionally on a thread pool.

    ``RMM_THREADS`` caps the pool; unset or 1 means run sequentially.
    Results keep submission order, so parallel execution changes only
    the recorded runtimes, never the numbers.
    """
    raw = os.environ.get("RMM_THREADS", "")
    workers = max(1, int(raw)) if raw.strip() else 1
    if workers == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [future.result() for future in [pool.submit(j) for j in jobs]]


# ---------------------------------------------------------------------------
# Search and benchmark
# ---------------------------------------------------------------------------


def random_search(
    task: "TaskSpec | str",
    model: str,
    reservoir_kind: str,
    space: "dict[str, tuple]",
    trials: int = 10,
    repeats_per_trial: int = 3,
    seed: int = 0,
    n_neurons: "int | None" = None,
) -> "tuple[dict[str, float], float]":
    """Pick the sampled configuration with minimal mean validation RMSE.

    Each candidate is scored on ``repeats_per_trial`` fresh 80/10
    train/validation splits (shared across candidates so scores are
    comparable); the held-out test episodes of the task datasets are
    never touched here. Returns the winning hyperparameters and their
    validation score. Deterministic in ``seed``.
    """
    spec = task if isinstance(task, TaskSpec) else task_spec(task)
    if not space:
        raise InvalidArgumentError("search space must be nonempty")
    if trials < 1 or repeats_per_trial < 1:
        raise InvalidArgumentError("trials and repeats_per_trial must be positive")
    if model == "armm" and reservoir_kind != "ldn":
        raise UnsupportedReservoirError(
            "the associative machine requires the ldn reservoir"
        )
    if n_neurons is None:
        n_neurons = default_neuron_count(spec)
    root = np.random.SeedSequence(seed)
    sample_seq, data_seq, eval_seq = root.spawn(3)
    datasets = [
        gen_dataset(spec, n_train=80, n_test=10, seed=child)
        for child in data_seq.spawn(repeats_per_trial)
    ]
    rng = np.random.default_rng(sample_seq)
    eval_seeds = eval_seq.spawn(trials * repeats_per_trial)
    best_params: "dict[str, float] | None" = None
    best_rmse = np.inf
    for trial in range(trials):
        params = sample_hyperparameters(space, rng)
        scores = _run_jobs(
            [
                _search_job(
                    spec,
                    model,
                    reservoir_kind,
                    n_neurons,
                    params,
                    datasets[r],
                    eval_seeds[trial * repeats_per_trial + r],
                )
                for r in range(repeats_per_trial)
            ]
        )
        mean_rmse = float(np.mean(scores))
        if mean_rmse < best_rmse:
            best_rmse = mean_rmse
            best_params = params
    assert best_params is not None
    return best_params, best_rmse


def _search_job(spec, model, reservoir_kind, n_neurons, params, dataset, seed_seq):
    config = TrialConfig(
        task=spec,
        model=model,
        reservoir_kind=reservoir_kind,
        n_neurons=n_neurons,
        hyperparameters=params,
        seed=_seed_int(seed_seq),
    )
    train_eps, val_eps = dataset

    def job():
        rmse, _ = run_trial(config, train_eps, val_eps)
        return rmse

    return job


def run_benchmark(
    task: "TaskSpec | str",
    models,
    reservoirs=RESERVOIR_NAMES,
    repeats: int = 20,
    seed: int = 0,
    trials: int = 10,
    repeats_per_trial: int = 3,
    n_neurons: "int | None" = None,
) -> BenchReport:
    """Search then repeatedly evaluate every model×reservoir combination.

    Each repeat trains on a fresh 90-episode dataset and scores the 10
    fresh held-out episodes; RMSE is averaged per episode first. The
    report rows keep the per-repeat values alongside the aggregates.
    """
    spec = task if isinstance(task, TaskSpec) else task_spec(task)
    models = tuple(models)
    reservoirs = tuple(reservoirs)
    if not models or not reservoirs:
        raise InvalidArgumentError("models and reservoirs must be nonempty")
    for model in models:
        if model not in MODEL_NAMES:
            raise InvalidArgumentError(f"unknown model {model!r}")
        for kind in reservoirs:
            if kind not in RESERVOIR_NAMES:
                raise InvalidArgumentError(f"unknown reservoir kind {kind!r}")
            if model == "armm" and kind != "ldn":
                raise UnsupportedReservoirError(
                    "the associative machine requires the ldn reservoir"
                )
    if repeats < 1:
        raise InvalidArgumentError("repeats must be positive")
    if n_neurons is None:
        n_neurons = default_neuron_count(spec)
    root = np.random.SeedSequence(seed)
    rows = []
    for model in models:
        for kind in reservoirs:
            combo_seq = root.spawn(1)[0]
            search_seq, data_seq, eval_seq = combo_seq.spawn(3)
            space = default_search_space(model, kind, spec, n_neurons)
            best_params, _ = random_search(
                spec,
                model,
                kind,
                space,
                trials=trials,
                repeats_per_trial=repeats_per_trial,
                seed=_seed_int(search_seq),
                n_neurons=n_neurons,
            )
            data_children = data_seq.spawn(repeats)
            eval_children = eval_seq.spawn(repeats)
            jobs = []
            for r in range(repeats):
                config = TrialConfig(
                    task=spec,
                    model=model,
                    reservoir_kind=kind,
                    n_neurons=n_neurons,
                    hyperparameters=best_params,
                    seed=_seed_int(eval_children[r]),
                )
                dataset = gen_dataset(
                    spec, n_train=90, n_test=10, seed=data_children[r]
                )
                jobs.append(_repeat_job(config, dataset))
            results = _run_jobs(jobs)
            rmses = np.array([r[0] for r in results])
            runtimes = np.array([r[1] for r in results])
            rows.append(
                BenchRow(
                    task=spec.name,
                    model=model,
                    reservoir=kind,
                    rmse_mean=float(rmses.mean()),
                    rmse_std=float(rmses.std()),
                    runtime_mean_s=float(runtimes.mean()),
                    runtime_std_s=float(runtimes.std()),
                    repeats=repeats,
                    best_hyperparameters=best_params,
                    rmse_values=tuple(float(v) for v in rmses),
                    runtime_values_s=tuple(float(v) for v in runtimes),
                )
            )
    return BenchReport(rows=tuple(rows))


def _repeat_job(config, dataset):
    train_eps, test_eps = dataset

    def job():
        return run_trial(config, train_eps, test_eps)

    return job


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def render_report(report: BenchReport, format: str) -> str:
    """Render a report as csv, markdown, or json text."""
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [
                    row.task,
                    row.model,
                    row.reservoir,
                    repr(row.rmse_mean),
                    repr(row.rmse_std),
                    repr(row.runtime_mean_s),
                    repr(row.runtime_std_s),
                    row.repeats,
                ]
            )
        return buffer.getvalue()
    if format == "markdown":
        lines = [
            "| task | model | reservoir | rmse | runtime [s] | repeats |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for row in report.rows:
            lines.append(
                f"| {row.task} | {row.model} | {row.reservoir} "
                f"| {row.rmse_mean:.3f} ± {row.rmse_std:.3f} "
                f"| {row.runtime_mean_s:.3f} ± {row.runtime_std_s:.3f} "
                f"| {row.repeats} |"
            )
        return "\n".join(lines) + "\n"
    if format == "json":
        payload = {"rows": [asdict(row) for row in report.rows]}
        return json.dumps(payload, indent=2) + "\n"
    raise InvalidArgumentError(f"unknown report format {format!r}")


def emit_report(report: BenchReport, format: str, path) -> None:
    """Write a rendered report to a file."""
    text = render_report(report, format)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_report(path) -> BenchReport:
    """Read back a report written in json format."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        rows = tuple(
            BenchRow(
                task=entry["task"],
                model=entry["model"],
                reservoir=entry["reservoir"],
                rmse_mean=entry["rmse_mean"],
                rmse_std=entry["rmse_std"],
                runtime_mean_s=entry["runtime_mean_s"],
                runtime_std_s=entry["runtime_std_s"],
                repeats=entry["repeats"],
                best_hyperparameters=dict(entry["best_hyperparameters"]),
                rmse_values=tuple(entry["rmse_values"]),
                runtime_values_s=tuple(entry["runtime_values_s"]),
            )
            for entry in payload["rows"]
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"cannot read report from {path}") from exc
    return BenchReport(rows=rows)
