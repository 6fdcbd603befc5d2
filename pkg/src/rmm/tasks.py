"""Seeded generators for the six benchmark tasks.

Every generator is a pure function of its seed and emits
:class:`~rmm.memory_machine.Episode` records: inputs, teacher addresses
for the memory machine, and target outputs.

Target layout note: a memory read replaces the state with the stored
state bit-for-bit, so wherever the teacher schedule replays a state, the
target at the replay step must equal the target at the original step —
otherwise no readout (linear or not) can fit both. The copy-style tasks
therefore ask for the payload both while it is presented and when it is
recalled, and the silent tasks put zero targets at both ends of each
replay pair.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

import numpy as np
from scipy.optimize import linprog
from scipy.signal.windows import tukey

from .errors import FormatError, InvalidArgumentError
from .machines import (
    MooreMachine,
    encode_one_hot,
    moore_run,
    one_cycle_training_sequences,
    random_moore,
)
from .memory_machine import Episode, _forced_rmm_states, _pad_episodes
from .reservoir import make_ldn_reservoir


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one benchmark task.

    ``horizon`` is the task's memory span in steps — the scale the
    reservoir must cover — which hyperparameter search uses to bound
    delay-network windows.
    """

    name: str
    input_dim: int
    output_dim: int
    address_count: int
    params: "MappingProxyType[str, object]"

    @property
    def horizon(self) -> int:
        return int(self.params["horizon"])


def _spec(name, n_in, n_out, n_addresses, **params) -> TaskSpec:
    return TaskSpec(
        name=name,
        input_dim=n_in,
        output_dim=n_out,
        address_count=n_addresses,
        params=MappingProxyType(params),
    )


TASK_SPECS = {
    "latch": _spec(
        "latch", 1, 1, 2, length_range=(9, 200), n_spikes=3, horizon=200
    ),
    "copy": _spec("copy", 9, 8, 20, payload_range=(1, 20), horizon=42),
    "repeat_copy": _spec(
        "repeat_copy",
        9,
        8,
        10,
        payload_range=(1, 10),
        repeat_range=(1, 10),
        horizon=110,
    ),
    "assoc_recall": _spec(
        "assoc_recall", 7, 6, 5, block_range=(2, 6), block_steps=3, horizon=25
    ),
    "signal_copy": _spec(
        "signal_copy",
        2,
        1,
        2,
        block_steps=256,
        zero_block_range=(1, 10),
        marker_steps=32,
        horizon=256,
    ),
    # The fsm horizon is the longest teacher path (n_states + 1), not the
    # test length: memory replay resets the state at every step, so the
    # reservoir never has to span more than one training sequence.
    "fsm": _spec(
        "fsm", 2, 2, 4, n_states=4, n_symbols=2, test_length=256, horizon=5
    ),
}

TASK_NAMES = tuple(TASK_SPECS)


def task_spec(name: str) -> TaskSpec:
    """Look up a task by name."""
    try:
        return TASK_SPECS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown task {name!r}; expected one of {', '.join(TASK_NAMES)}"
        ) from None


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def gen_latch(seed: int) -> Episode:
    """One latch episode: spikes toggle a held binary output.

    A single channel is zero except for ones at 3 distinct random
    positions; the sequence length is uniform in [9, 200]. The output
    starts at 0 and toggles at each spike step (inclusive). The teacher
    address is ``output + 1`` at every step, so the machine stores one
    anchor state per output level and pins the trajectory by rereading
    it; ``h0`` itself is the level-0 anchor (``a_0 = 1``).
    """
    rng = np.random.default_rng(seed)
    length = int(rng.integers(9, 201))
    spikes = rng.choice(length, size=3, replace=False)
    inputs = np.zeros((length, 1))
    inputs[spikes, 0] = 1.0
    level = np.cumsum(inputs[:, 0]).astype(int) % 2
    return Episode(
        inputs=inputs,
        addresses=level + 1,
        outputs=level[:, None].astype(float),
        initial_address=1,
    )


def gen_copy(seed: int) -> Episode:
    """One copy episode: echo a bit-vector payload, then replay it.

    Layout: marker step, T payload steps (T uniform in [1, 20],
    patterns from {0,1}^8), marker step, T response steps. Channel 9
    carries the two markers. The target is the payload both during
    presentation and during the response window (the storage schedule
    replays the presentation states, see the module note). Addresses
    run 1..T over the payload and again over the response.
    """
    rng = np.random.default_rng(seed)
    n_payload = int(rng.integers(1, 21))
    payload = rng.integers(0, 2, size=(n_payload, 8)).astype(float)
    length = 2 * n_payload + 2
    inputs = np.zeros((length, 9))
    inputs[0, 8] = 1.0
    inputs[1 : n_payload + 1, :8] = payload
    inputs[n_payload + 1, 8] = 1.0
    addresses = np.zeros(length, dtype=int)
    positions = np.arange(1, n_payload + 1)
    addresses[1 : n_payload + 1] = positions
    addresses[n_payload + 2 :] = positions
    outputs = np.zeros((length, 8))
    outputs[1 : n_payload + 1] = payload
    outputs[n_payload + 2 :] = payload
    return Episode(inputs=inputs, addresses=addresses, outputs=outputs)


def gen_repeat_copy(seed: int) -> Episode:
    """One repeat-copy episode: the payload echoed in R marked windows.

    R is uniform in [1, 10] and the payload length T uniform in [1, 10].
    The episode is R windows of (marker step, T data steps); the first
    window carries the payload on the input channels, later windows are
    input-silent. The target repeats the payload in every window (the
    first "copy" is the presentation itself), and addresses run 1..T in
    each window.
    """
    rng = np.random.default_rng(seed)
    n_payload = int(rng.integers(1, 11))
    n_copies = int(rng.integers(1, 11))
    payload = rng.integers(0, 2, size=(n_payload, 8)).astype(float)
    width = n_payload + 1
    length = n_copies * width
    inputs = np.zeros((length, 9))
    addresses = np.zeros(length, dtype=int)
    outputs = np.zeros((length, 8))
    for c in range(n_copies):
        start = c * width
        inputs[start, 8] = 1.0
        addresses[start + 1 : start + width] = np.arange(1, n_payload + 1)
        outputs[start + 1 : start + width] = payload
    inputs[1:width, :8] = payload
    return Episode(inputs=inputs, addresses=addresses, outputs=outputs)


def gen_assoc_recall(seed: int) -> Episode:
    """One associative-recall episode over 3-step bit-vector blocks.

    B blocks (B uniform in [2, 6]) of 3 random {0,1}^6 vectors are
    presented on channels 1-6, then channel 7 carries a one-step query
    marker, then block j (j uniform in [1, B-1]) is repeated. The target
    is block j+1 on the 3 steps after the query. The teacher stores
    each block-final state under address i-1 (for blocks i >= 2) and
    reads address j at the query's last step, which replays the state
    holding block j+1 in its recent history.
    """
    rng = np.random.default_rng(seed)
    n_blocks = int(rng.integers(2, 7))
    blocks = rng.integers(0, 2, size=(n_blocks, 3, 6)).astype(float)
    query = int(rng.integers(1, n_blocks))
    length = 3 * n_blocks + 7
    inputs = np.zeros((length, 7))
    for i in range(n_blocks):
        inputs[3 * i : 3 * i + 3, :6] = blocks[i]
    inputs[3 * n_blocks, 6] = 1.0
    inputs[3 * n_blocks + 1 : 3 * n_blocks + 4, :6] = blocks[query - 1]
    addresses = np.zeros(length, dtype=int)
    for i in range(2, n_blocks + 1):
        addresses[3 * i - 1] = i - 1
    addresses[3 * n_blocks + 3] = query
    outputs = np.zeros((length, 6))
    outputs[3 * n_blocks + 4 :] = blocks[query]
    return Episode(inputs=inputs, addresses=addresses, outputs=outputs)


_MARKER_PHASE = 2.0 * np.pi * np.arange(32) / 32.0
MARKER_SHAPES = (
    np.sin(_MARKER_PHASE),
    (1.0 - np.cos(_MARKER_PHASE)) / 2.0,
)
"""Two fixed, mutually orthogonal 32-step marker shapes."""


def _random_wavelet(rng: np.random.Generator, length: int) -> np.ndarray:
    """Sum of 3 seeded sinusoids, unit peak, tapered by a Tukey window."""
    t = np.arange(length)
    wave = np.zeros(length)
    for _ in range(3):
        period = rng.uniform(32.0, 128.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += np.sin(2.0 * np.pi * t / period + phase)
    wave /= np.max(np.abs(wave))
    return wave * tukey(length, 0.5)


def gen_signal_copy(seed: int) -> Episode:
    """One signal-copy episode: markers trigger wavelet playback.

    The episode is B blocks of 256 steps, B = 2 + uniform [1, 10].
    Channel 1 presents smooth random wavelet A in block 1 and wavelet B
    in block 2, then silence. Channel 2 ends each of blocks 1..B-1 with
    a 32-step marker shape: shape 1 ends block 1, shape 2 ends block 2,
    and a random shape ends later blocks. The target is silent through
    blocks 1-2; afterwards each marker is answered by its associated
    wavelet filling the following block. The teacher address is the
    marker's index at each marker-bearing block's final step.
    """
    rng = np.random.default_rng(seed)
    block = 256
    n_blocks = 2 + int(rng.integers(1, 11))
    wavelets = (_random_wavelet(rng, block), _random_wavelet(rng, block))
    markers = np.empty(n_blocks - 1, dtype=int)
    markers[0], markers[1] = 1, 2
    markers[2:] = rng.integers(1, 3, size=n_blocks - 3)
    length = block * n_blocks
    inputs = np.zeros((length, 2))
    inputs[:block, 0] = wavelets[0]
    inputs[block : 2 * block, 0] = wavelets[1]
    addresses = np.zeros(length, dtype=int)
    outputs = np.zeros((length, 1))
    for i, marker in enumerate(markers):
        end = (i + 1) * block
        inputs[end - 32 : end, 1] = MARKER_SHAPES[marker - 1]
        addresses[end - 1] = marker
        if i >= 1:
            outputs[end : end + block, 0] = wavelets[marker - 1]
    return Episode(inputs=inputs, addresses=addresses, outputs=outputs)


def has_rankable_successors(machine: MooreMachine) -> bool:
    """Whether some strict ranking of states orders every symbol split.

    Consider the digraph with an edge ``step(1, q) -> step(2, q)`` for
    every state ``q`` whose two successors differ; the machine passes if
    that digraph is acyclic. The condition matters for linear address
    classifiers over linear reservoirs: there the score margin between
    two addresses decomposes into a state term plus a symbol term, so
    adding up the margins around any cycle of the digraph forces
    ``0 > 0`` — a machine with a cycle cannot be simulated exactly by
    such a classifier, no matter how it is trained.
    """
    if machine.n_symbols != 2:
        raise InvalidArgumentError(
            "successor ranking is defined for 2-symbol machines"
        )
    edges = set()
    for q in range(1, machine.n_states + 1):
        a, b = machine.step(1, q), machine.step(2, q)
        if a != b:
            edges.add((a, b))
    # Kahn's algorithm: the digraph is acyclic iff it empties out.
    nodes = {q for edge in edges for q in edge}
    indegree = {q: 0 for q in nodes}
    for _, b in edges:
        indegree[b] += 1
    frontier = [q for q in nodes if indegree[q] == 0]
    seen = 0
    while frontier:
        node = frontier.pop()
        seen += 1
        for a, b in edges:
            if a == node:
                indegree[b] -= 1
                if indegree[b] == 0:
                    frontier.append(b)
    return seen == len(nodes)


def admits_linear_simulation(
    machine: MooreMachine, order: int = 32, window: float = 5.0
) -> bool:
    """Whether exact linear addressing and readout exist for a machine.

    Runs the machine's exhaustive teacher schedule on a canonical linear
    delay reservoir (``order`` units per input channel) and checks that
    the collected states admit (a) a linear scorer whose argmax
    reproduces every teacher address — a small feasibility program — and
    (b) a linear readout that fits every one-hot output exactly. Both
    existence questions have machine-dependent obstructions: teacher
    states of a linear reservoir satisfy exact affine dependencies, and
    any dependence with inconsistent labels on it rules the machine out
    (:func:`has_rankable_successors` captures the simplest family).
    Machines that pass are simulated exactly once the classifier is
    trained to zero error; machines that fail cannot be, at any
    hyperparameter setting.
    """
    episodes = [
        _fsm_episode(machine, np.asarray(symbols, dtype=int))
        for symbols in one_cycle_training_sequences(machine)
    ]
    res = make_ldn_reservoir(order, machine.n_symbols, window=window)
    initial = np.array([ep.initial_address for ep in episodes])
    inputs, addresses, lengths = _pad_episodes(episodes, res.n_inputs)
    pre, post = _forced_rmm_states(
        res, inputs, addresses, machine.n_states, initial
    )
    mask = np.arange(inputs.shape[1])[None, :] < lengths[:, None]

    states = np.concatenate(
        [pre[mask], np.tile(res.initial_state, (len(episodes), 1))]
    )
    labels = np.concatenate([addresses[mask], initial])
    if not _argmax_feasible(states, labels):
        return False

    targets = np.concatenate([ep.outputs for ep in episodes])
    design = np.hstack([post[mask], np.ones((targets.shape[0], 1))])
    solution, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return bool(np.abs(design @ solution - targets).max() < 1e-7)


def _argmax_feasible(states: np.ndarray, labels: np.ndarray) -> bool:
    """Whether some linear scorer's argmax reproduces all the labels."""
    key = np.hstack([np.round(states, 12), labels[:, None]])
    _, index = np.unique(key, axis=0, return_index=True)
    states, labels = states[index], labels[index]
    classes = np.unique(labels)
    if classes.size == 1:
        return True
    n = states.shape[1] + 1
    points = np.hstack([states, np.ones((states.shape[0], 1))])
    rows = []
    for x, label in zip(points, labels):
        owner = int(np.searchsorted(classes, label))
        for j in range(classes.size):
            if j == owner:
                continue
            row = np.zeros(classes.size * n)
            row[j * n : (j + 1) * n] = x
            row[owner * n : (owner + 1) * n] -= x
            rows.append(row)
    result = linprog(
        np.zeros(classes.size * n),
        A_ub=np.array(rows),
        b_ub=np.full(len(rows), -1.0),
        bounds=(-1e5, 1e5),
        method="highs",
    )
    return result.status == 0


def gen_fsm_task(
    n_states: int = 4,
    seed: int = 0,
    n_test: int = 10,
) -> tuple[MooreMachine, list[Episode], list[Episode]]:
    """A random Moore machine with exhaustive short training episodes.

    The machine has ``n_states`` states over the 2-symbol one-hot
    alphabet with one-hot outputs, redrawn until it
    :func:`admits_linear_simulation` so that linear-reservoir memory
    models are not structurally ruled out (tanh reservoirs separate
    every redraw regardless). Training episodes are all input sequences
    whose interior state path is repeat-free (sufficient for exact
    simulation); teacher addresses are the ground-truth states. Test
    episodes are ``n_test`` random sequences of length 256 with oracle
    targets.
    """
    rng = np.random.default_rng(seed)
    machine = random_moore(n_states, 2, 2, seed=rng)
    while not (
        has_rankable_successors(machine) and admits_linear_simulation(machine)
    ):
        machine = random_moore(n_states, 2, 2, seed=rng)
    train = [
        _fsm_episode(machine, np.asarray(symbols, dtype=int))
        for symbols in one_cycle_training_sequences(machine)
    ]
    test_length = int(task_spec("fsm").params["test_length"])
    test = [
        _fsm_episode(machine, rng.integers(1, 3, size=test_length))
        for _ in range(n_test)
    ]
    return machine, train, test


def _fsm_episode(machine: MooreMachine, symbols: np.ndarray) -> Episode:
    states, outputs = moore_run(machine, symbols)
    return Episode(
        inputs=encode_one_hot(symbols, machine.n_symbols),
        addresses=states,
        outputs=encode_one_hot(outputs, machine.n_outputs),
        # The machine starts in its initial state, so h0 is that state's
        # anchor; returns to it must replay h0 rather than write a new
        # anchor the short training paths could never have visited.
        initial_address=machine.initial_state,
    )


_GENERATORS = {
    "latch": gen_latch,
    "copy": gen_copy,
    "repeat_copy": gen_repeat_copy,
    "assoc_recall": gen_assoc_recall,
    "signal_copy": gen_signal_copy,
}


def gen_dataset(
    task: "TaskSpec | str",
    n_train: int = 90,
    n_test: int = 10,
    seed: int = 0,
) -> tuple[list[Episode], list[Episode]]:
    """Train/test episode sets from disjoint seed streams.

    For the fsm task the training set is the exhaustive enumeration for
    a machine drawn from the seed (its size is machine-dependent, not
    ``n_train``), and the test set is ``n_test`` random length-256
    runs of the same machine.
    """
    spec = task if isinstance(task, TaskSpec) else task_spec(task)
    if n_train < 1 or n_test < 0:
        raise InvalidArgumentError("dataset sizes must be positive")
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
    else:
        seq = np.random.SeedSequence(int(seed))
    if spec.name == "fsm":
        _, train, test = gen_fsm_task(
            n_states=int(spec.params["n_states"]), seed=seq.spawn(1)[0], n_test=n_test
        )
        return train, test
    generator = _GENERATORS[spec.name]
    children = seq.spawn(n_train + n_test)
    episodes = [generator(np.random.default_rng(child)) for child in children]
    return episodes[:n_train], episodes[n_train:]


# ---------------------------------------------------------------------------
# Episode files (line-delimited records)
# ---------------------------------------------------------------------------


def write_episodes(path: "str | Path", episodes: "list[Episode]") -> None:
    """Write episodes as line-delimited records (one JSON object each).

    Floats are written as shortest round-trip decimals, so reading the
    file back reproduces the arrays bit-exactly on any locale.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            record = {
                "inputs": ep.inputs.tolist(),
                "addresses": ep.addresses.tolist(),
                "outputs": ep.outputs.tolist(),
                "initial_address": int(ep.initial_address),
            }
            fh.write(json.dumps(record) + "\n")


def read_episodes(path: "str | Path") -> list[Episode]:
    """Read a line-delimited episode file written by write_episodes."""
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                episode = Episode(
                    inputs=np.asarray(record["inputs"], dtype=float),
                    addresses=np.asarray(record["addresses"], dtype=int),
                    outputs=np.asarray(record["outputs"], dtype=float),
                    initial_address=int(record.get("initial_address", 0)),
                )
            except (ValueError, KeyError, TypeError, InvalidArgumentError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed episode record") from exc
            episodes.append(episode)
    return episodes
