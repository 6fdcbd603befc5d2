"""Command-line surface: datasets, training, evaluation, benchmarks.

Exit codes: 0 on success; 1 for command-line errors that argparse
detects (unknown subcommand or flag, bad literals, invalid choices);
2 for anything that fails once execution starts (missing or malformed
files, unsupported model/reservoir combinations, failed checks).

``--seed`` is accepted both before and after the subcommand; every run
is a pure function of its flags and that seed.
"""

import argparse
import sys

import numpy as np

from .bench import (
    MODEL_NAMES,
    RESERVOIR_NAMES,
    TrialConfig,
    default_neuron_count,
    emit_report,
    load_report,
    render_report,
    run_benchmark,
    train_trial,
)
from .errors import InvalidArgumentError, ToolkitError
from .machines import (
    CompiledRnn,
    compile_fsm_to_rnn,
    encode_one_hot,
    interleave_with_zeros,
    moore_run,
    one_cycle_training_sequences,
    read_machine_file,
    run_compiled,
)
from .memory_machine import evaluate_rmse, load_model, save_model
from .tasks import TASK_NAMES, gen_dataset, read_episodes, task_spec, write_episodes

REPORT_FORMATS = ("csv", "markdown", "json")


# ---------------------------------------------------------------------------
# Compiled-network traces
# ---------------------------------------------------------------------------


def format_trace(rnn: CompiledRnn, symbols) -> str:
    """Tabulate a compiled run: one line per step with x, h, and y.

    Step 0 shows the initial state with no input or output, matching
    the convention that symbol t enters the network at step 2t-1 and
    the machine's t-th output appears at step 2t.
    """
    inputs = interleave_with_zeros(encode_one_hot(symbols, rnn.reservoir.n_inputs))
    states, outputs = run_compiled(rnn, symbols)

    def vec(values) -> str:
        return " ".join(str(int(round(v))) for v in values)

    rows = [
        ("t", "x", "h", "y"),
        ("0", "-", vec(rnn.reservoir.initial_state), "-"),
    ]
    for t in range(inputs.shape[0]):
        rows.append((str(t + 1), vec(inputs[t]), vec(states[t]), vec(outputs[t])))
    widths = [max(len(row[c]) for row in rows) for c in range(4)]
    lines = [
        " | ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    return "\n".join(lines) + "\n"


def verify_compiled(machine, rnn: CompiledRnn, n_random: int = 20, seed: int = 0):
    """Compare the compiled network against direct machine simulation.

    Runs every one-cycle training sequence plus ``n_random`` random
    strings (length <= 20) and demands that every even step carries the
    one-hot machine state and output. Returns ``(mismatches, total)``.
    """
    sequences = [tuple(s) for s in one_cycle_training_sequences(machine)]
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        length = int(rng.integers(1, 21))
        sequences.append(
            tuple(int(s) for s in rng.integers(1, machine.n_symbols + 1, size=length))
        )
    n = rnn.reservoir.n_neurons
    mismatches = 0
    for symbols in sequences:
        states, outputs = run_compiled(rnn, symbols)
        machine_states, machine_outputs = moore_run(machine, symbols)
        expected_h = np.zeros((len(symbols), n))
        expected_h[np.arange(len(symbols)), np.asarray(machine_states) - 1] = 1.0
        expected_y = encode_one_hot(machine_outputs, machine.n_outputs)
        if not (
            np.array_equal(states[1::2], expected_h)
            and np.array_equal(outputs[1::2], expected_y)
        ):
            mismatches += 1
    return mismatches, len(sequences)


def _parse_sequence(text: str, machine) -> "tuple[int, ...]":
    try:
        symbols = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise InvalidArgumentError(f"cannot parse symbol sequence {text!r}") from None
    if not symbols:
        raise InvalidArgumentError("symbol sequence must be nonempty")
    for s in symbols:
        if not 1 <= s <= machine.n_symbols:
            raise InvalidArgumentError(
                f"symbol {s} outside the machine alphabet 1..{machine.n_symbols}"
            )
    return symbols


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen(args) -> int:
    episodes, _ = gen_dataset(args.task, n_train=args.n, n_test=0, seed=args.seed)
    write_episodes(args.out, episodes)
    print(f"wrote {len(episodes)} {args.task} episodes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    spec = task_spec(args.task)
    episodes = read_episodes(args.data)
    params = {}
    if args.ridge_lambda is not None:
        params["ridge_lambda"] = args.ridge_lambda
    config = TrialConfig(
        task=spec,
        model=args.model,
        reservoir_kind=args.reservoir,
        n_neurons=args.n_neurons or default_neuron_count(spec),
        hyperparameters=params,
        seed=args.seed,
    )
    model = train_trial(config, episodes)
    save_model(model, args.out)
    print(f"saved {args.model} model to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model_file)
    episodes = read_episodes(args.data)
    per_episode, mean = evaluate_rmse(model, episodes)
    for index, value in enumerate(per_episode):
        print(f"episode {index} rmse: {value:.6f}")
    print(f"mean rmse: {mean:.6f}")
    return 0


def _cmd_bench(args) -> int:
    models = tuple(name for name in args.models.split(",") if name)
    reservoirs = tuple(name for name in args.reservoirs.split(",") if name)
    report = run_benchmark(
        args.task,
        models,
        reservoirs,
        repeats=args.repeats,
        seed=args.seed,
        trials=args.trials,
        repeats_per_trial=args.repeats_per_trial,
        n_neurons=args.n_neurons,
    )
    emit_report(report, args.format, args.out)
    print(f"wrote {args.format} report with {len(report.rows)} rows to {args.out}")
    return 0


def _cmd_compile_fsm(args) -> int:
    machine = read_machine_file(args.machine)
    rnn = compile_fsm_to_rnn(machine)
    if args.sequence is None:
        # Fold the canonical two-symbol demonstration onto the alphabet.
        symbols = tuple((s - 1) % machine.n_symbols + 1 for s in (1, 2, 2, 1))
    else:
        symbols = _parse_sequence(args.sequence, machine)
    sys.stdout.write(format_trace(rnn, symbols))
    if args.check:
        mismatches, total = verify_compiled(machine, rnn, seed=args.seed)
        if mismatches:
            print(
                f"check failed: {mismatches} of {total} sequences deviate "
                "from the machine",
                file=sys.stderr,
            )
            return 2
        print(f"check passed: {total} sequences match the machine exactly")
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.infile)
    sys.stdout.write(render_report(report, args.format))
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmm",
        description="Reservoir memory machines: datasets, training, benchmarks.",
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="master seed (default: 0)"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = sub.add_parser("gen", help="generate an episode file for a task")
    gen.add_argument("--task", required=True, choices=TASK_NAMES)
    gen.add_argument("--n", type=int, required=True, help="number of episodes")
    gen.add_argument("--out", required=True, help="output episode file")
    gen.set_defaults(handler=_cmd_gen)

    train = sub.add_parser("train", help="train a model on an episode file")
    train.add_argument("--task", required=True, choices=TASK_NAMES)
    train.add_argument("--model", required=True, choices=MODEL_NAMES)
    train.add_argument("--reservoir", required=True, choices=RESERVOIR_NAMES)
    train.add_argument("--data", required=True, help="episode file to train on")
    train.add_argument("--out", required=True, help="model file to write")
    train.add_argument(
        "--n-neurons", type=int, default=None, help="reservoir size (default: per task)"
    )
    train.add_argument(
        "--ridge-lambda", type=float, default=None, help="readout regularization"
    )
    train.set_defaults(handler=_cmd_train)

    evaluate = sub.add_parser("eval", help="report RMSE of a model on an episode file")
    evaluate.add_argument("--model-file", required=True, help="model file to load")
    evaluate.add_argument("--data", required=True, help="episode file to score")
    evaluate.set_defaults(handler=_cmd_eval)

    bench = sub.add_parser("bench", help="hyperparameter search plus repeated runs")
    bench.add_argument("--task", required=True, choices=TASK_NAMES)
    bench.add_argument(
        "--models", default="esn,rmm", help="comma-separated model names"
    )
    bench.add_argument(
        "--reservoirs",
        default=",".join(RESERVOIR_NAMES),
        help="comma-separated reservoir kinds",
    )
    bench.add_argument("--repeats", type=int, default=20)
    bench.add_argument("--trials", type=int, default=10, help="search trials")
    bench.add_argument("--repeats-per-trial", type=int, default=3)
    bench.add_argument("--n-neurons", type=int, default=None)
    bench.add_argument("--format", choices=REPORT_FORMATS, default="json")
    bench.add_argument("--out", required=True, help="report file to write")
    bench.set_defaults(handler=_cmd_bench)

    compile_fsm = sub.add_parser(
        "compile-fsm", help="compile a Moore machine file to an exact network"
    )
    compile_fsm.add_argument("--machine", required=True, help="machine file to read")
    compile_fsm.add_argument(
        "--check",
        action="store_true",
        help="verify the network against machine simulation",
    )
    compile_fsm.add_argument(
        "--sequence",
        default=None,
        help="comma-separated symbols to trace (default: 1,2,2,1)",
    )
    compile_fsm.set_defaults(handler=_cmd_compile_fsm)

    report = sub.add_parser("report", help="render a stored json report")
    report.add_argument("--in", dest="infile", required=True, help="json report file")
    report.add_argument("--format", choices=REPORT_FORMATS, default="markdown")
    report.set_defaults(handler=_cmd_report)

    # Let each subcommand accept --seed too; when given it overrides the
    # global flag (SUPPRESS keeps the attribute untouched otherwise).
    for command in (gen, train, evaluate, bench, compile_fsm, report):
        command.add_argument(
            "--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS
        )
    return parser


def cli(argv=None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage or help text.
        return 0 if exc.code == 0 else 1
    try:
        return args.handler(args)
    except (ToolkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
