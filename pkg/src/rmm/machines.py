"""Moore machines: simulation, cycle reduction, and compilation to RNNs.

A Moore machine is a finite state machine whose output depends only on
the current state. Symbols and outputs are represented internally as
indices ``1..m`` / ``1..K`` and one-hot encoded only at the reservoir
boundary.

Two pieces of machinery connect Moore machines to reservoir memory
machines:

* ``cycle_reduce`` removes memory cycles from an input sequence -- the
  final machine state provably equals the final state on the reduced
  sequence.
* ``one_cycle_training_sequences`` enumerates the input sequences whose
  reservoir states an address classifier must label to simulate the
  machine exactly (all sequences whose interior state path is
  repeat-free).

``compile_fsm_to_rnn`` builds an exact binary-weight recurrent network
for any Moore machine using one neuron per state plus one per
(symbol, state) pair.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .reservoir import Reservoir, run_reservoir

MAX_ENUMERATION_STATES = 12


@dataclass(frozen=True)
class MooreMachine:
    """Finite state machine with state-determined output.

    States are ``1..n_states``, symbols ``1..n_symbols`` and outputs
    ``1..n_outputs``; ``transitions[i-1, j-1]`` is the successor of
    state ``j`` on symbol ``i``, ``outputs[j-1]`` the output of state
    ``j``.
    """

    n_states: int
    n_symbols: int
    n_outputs: int
    transitions: np.ndarray
    outputs: np.ndarray
    initial_state: int

    def __post_init__(self) -> None:
        if min(self.n_states, self.n_symbols, self.n_outputs) < 1:
            raise InvalidArgumentError("state, symbol and output counts must be >= 1")
        if self.transitions.shape != (self.n_symbols, self.n_states):
            raise InvalidArgumentError(
                f"transition table must be ({self.n_symbols}, {self.n_states})"
            )
        if self.outputs.shape != (self.n_states,):
            raise InvalidArgumentError("output table must have one entry per state")
        if not (
            np.all((self.transitions >= 1) & (self.transitions <= self.n_states))
            and np.all((self.outputs >= 1) & (self.outputs <= self.n_outputs))
            and 1 <= self.initial_state <= self.n_states
        ):
            raise InvalidArgumentError("table entries out of range")

    def step(self, symbol: int, state: int) -> int:
        """Successor state for one symbol."""
        return int(self.transitions[symbol - 1, state - 1])


def moore_run(
    machine: MooreMachine, symbols: "list[int] | np.ndarray"
) -> tuple[np.ndarray, np.ndarray]:
    """Run the machine over a symbol-index sequence.

    Returns the state sequence ``q_1..q_T`` and output sequence
    ``y_1..y_T`` (both 1-based indices, same length as the input).
    """
    symbols = np.asarray(symbols, dtype=int)
    if symbols.ndim != 1:
        raise InvalidArgumentError("symbols must be a flat index sequence")
    if symbols.size and not np.all((symbols >= 1) & (symbols <= machine.n_symbols)):
        raise InvalidArgumentError("symbol index out of range")
    states = np.empty(symbols.size, dtype=int)
    q = machine.initial_state
    for t, s in enumerate(symbols):
        q = machine.step(int(s), q)
        states[t] = q
    return states, machine.outputs[states - 1].astype(int)


def random_moore(
    n_states: int, n_symbols: int, n_outputs: int, seed: int
) -> MooreMachine:
    """Sample a machine with uniform tables and initial state."""
    rng = np.random.default_rng(seed)
    return MooreMachine(
        n_states=n_states,
        n_symbols=n_symbols,
        n_outputs=n_outputs,
        transitions=rng.integers(1, n_states + 1, size=(n_symbols, n_states)),
        outputs=rng.integers(1, n_outputs + 1, size=n_states),
        initial_state=int(rng.integers(1, n_states + 1)),
    )


def one_cycle_training_sequences(machine: MooreMachine) -> list[tuple[int, ...]]:
    """All input sequences whose interior state path is repeat-free.

    Enumerates (in lexicographic symbol order) every sequence
    ``x_1..x_T`` such that the visited states ``q_1..q_{T-1}`` are
    pairwise distinct; the final state may be new or may close a cycle.
    These are exactly the sequences a memory machine can be driven into
    before its first unresolved recall, so labeling their reservoir
    states is sufficient training data for exact machine simulation.
    The length bound ``T <= n_states + 1`` follows from distinctness.
    """
    if machine.n_states > MAX_ENUMERATION_STATES:
        raise InvalidArgumentError(
            f"enumeration supports at most {MAX_ENUMERATION_STATES} states, "
            f"got {machine.n_states}"
        )
    sequences: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], visited: frozenset[int], state: int) -> None:
        for symbol in range(1, machine.n_symbols + 1):
            successor = machine.step(symbol, state)
            sequences.append(prefix + (symbol,))
            if successor not in visited:
                extend(prefix + (symbol,), visited | {successor}, successor)

    extend((), frozenset(), machine.initial_state)
    return sequences


def cycle_reduce(
    inputs: np.ndarray, addresses: "list[int] | np.ndarray", a0: int = 0
) -> np.ndarray:
    """Remove memory cycles from an input sequence.

    A cycle is a span ``(t', t]`` with ``a_{t'} = a_t > 0`` (the initial
    address ``a0`` counts as position 0). Repeatedly removes the cycle
    with the largest ``t`` (ties on ``t'`` broken towards the lowest)
    until none remains, splicing inputs and addresses together, and
    returns the retained inputs.
    """
    inputs = np.asarray(inputs)
    addresses = np.asarray(addresses, dtype=int)
    if len(inputs) != len(addresses):
        raise InvalidArgumentError("inputs and addresses must have equal length")
    if a0 < 0 or (addresses.size and addresses.min() < 0):
        raise InvalidArgumentError("addresses must be non-negative")
    addr = [int(a0), *addresses.tolist()]
    keep = list(range(len(addr)))  # positions 0..T into addr
    while True:
        found = False
        for ti in range(len(keep) - 1, 0, -1):
            a_t = addr[keep[ti]]
            if a_t <= 0:
                continue
            for si in range(ti):
                if addr[keep[si]] == a_t:
                    del keep[si + 1 : ti + 1]
                    found = True
                    break
            if found:
                break
        if not found:
            break
    retained = [pos - 1 for pos in keep[1:]]  # drop the virtual position 0
    return inputs[retained]


def encode_one_hot(indices: "list[int] | np.ndarray", width: int) -> np.ndarray:
    """One-hot encode 1-based indices into rows of length ``width``."""
    indices = np.asarray(indices, dtype=int)
    if indices.size and not np.all((indices >= 1) & (indices <= width)):
        raise InvalidArgumentError("index out of range for one-hot encoding")
    out = np.zeros((indices.size, width))
    out[np.arange(indices.size), indices - 1] = 1.0
    return out


def interleave_with_zeros(inputs: np.ndarray) -> np.ndarray:
    """Emit each input row followed by a zero row (length doubles).

    The compiled network alternates between activating a (symbol, state)
    pair neuron and resolving it into the successor state, so inputs are
    presented on odd steps with zero steps in between.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2:
        raise InvalidArgumentError("inputs must be a (T, m) array")
    out = np.zeros((2 * inputs.shape[0], inputs.shape[1]))
    out[0::2] = inputs
    return out


@dataclass(frozen=True)
class CompiledRnn:
    """Binary-weight recurrent network exactly simulating a Moore machine."""

    reservoir: Reservoir
    """Heaviside network over ``n = L*(m+1)`` neurons; the first ``L``
    neurons indicate the machine state, the rest (symbol, state) pairs."""

    output_weights: np.ndarray
    """Readout ``V`` of shape ``(K, n)`` mapping state neurons to one-hot
    outputs."""


def compile_fsm_to_rnn(machine: MooreMachine) -> CompiledRnn:
    """Compile a Moore machine into an exact recurrent network.

    Neuron ``j`` (1-based, ``j <= L``) indicates machine state ``j``;
    neuron ``k = L*i + j`` indicates that symbol ``i`` arrived in state
    ``j``. State neurons have bias -1/2 and fire when their pair neuron
    fired on the previous (even) step; pair neurons have bias -3/2 and
    need both their symbol input and their state neuron active. After
    each symbol a zero step resolves the pair into the successor state,
    so even-step states are exactly one-hot state indicators.
    """
    big_l, m, k_out = machine.n_states, machine.n_symbols, machine.n_outputs
    n = big_l * (m + 1)
    w = np.zeros((n, n))
    u = np.zeros((n, m))
    b = np.full(n, -1.5)
    b[:big_l] = -0.5
    v = np.zeros((k_out, n))
    for i in range(1, m + 1):
        for j in range(1, big_l + 1):
            k = big_l * i + j
            u[k - 1, i - 1] = 1.0
            w[k - 1, j - 1] = 1.0
            w[machine.step(i, j) - 1, k - 1] = 1.0
    for j in range(1, big_l + 1):
        v[int(machine.outputs[j - 1]) - 1, j - 1] = 1.0
    h0 = np.zeros(n)
    h0[machine.initial_state - 1] = 1.0
    reservoir = Reservoir(
        kind="compiled",
        input_weights=u,
        recurrent_weights=w,
        bias=b,
        initial_state=h0,
        activation="heaviside",
    )
    return CompiledRnn(reservoir=reservoir, output_weights=v)


def run_compiled(
    rnn: CompiledRnn, symbols: "list[int] | np.ndarray"
) -> tuple[np.ndarray, np.ndarray]:
    """Run a compiled network on a symbol sequence.

    One-hot encodes the symbols, interleaves zero steps, and returns the
    ``(2T, n)`` state trace and the ``(2T, K)`` readout trace.
    """
    m = rnn.reservoir.n_inputs
    inputs = interleave_with_zeros(encode_one_hot(symbols, m))
    states = run_reservoir(rnn.reservoir, inputs)
    return states, states @ rnn.output_weights.T


def write_machine_file(machine: MooreMachine, path: "str | Path") -> None:
    """Write the line-oriented machine description format.

    Header ``L m K q0``, then the ``m*L`` transition entries row-major
    (symbol-major), then the ``L`` output entries.
    """
    lines = [
        f"{machine.n_states} {machine.n_symbols} {machine.n_outputs} "
        f"{machine.initial_state}"
    ]
    for i in range(machine.n_symbols):
        lines.append(" ".join(str(int(x)) for x in machine.transitions[i]))
    lines.append(" ".join(str(int(x)) for x in machine.outputs))
    Path(path).write_text("\n".join(lines) + "\n")


def read_machine_file(path: "str | Path") -> MooreMachine:
    """Parse the machine description format written by write_machine_file."""
    try:
        tokens = Path(path).read_text().split()
        values = [int(tok) for tok in tokens]
    except ValueError as exc:
        raise FormatError(f"non-integer token in machine file {path}") from exc
    if len(values) < 4:
        raise FormatError("machine file too short for its header")
    big_l, m, k_out, q0 = values[:4]
    expected = 4 + m * big_l + big_l
    if len(values) != expected:
        raise FormatError(
            f"machine file has {len(values)} tokens, expected {expected}"
        )
    delta = np.array(values[4 : 4 + m * big_l]).reshape(m, big_l)
    rho = np.array(values[4 + m * big_l :])
    try:
        return MooreMachine(
            n_states=big_l,
            n_symbols=m,
            n_outputs=k_out,
            transitions=delta,
            outputs=rho,
            initial_state=q0,
        )
    except InvalidArgumentError as exc:
        raise FormatError(f"invalid machine file {path}: {exc}") from exc


def toggle_machine() -> MooreMachine:
    """Two-state machine that flips state on symbol 1 and holds on 2.

    Small enough to verify the compiler's full state/output trace by
    hand, which the tests do.
    """
    return MooreMachine(
        n_states=2,
        n_symbols=2,
        n_outputs=2,
        transitions=np.array([[2, 1], [1, 2]]),
        outputs=np.array([1, 2]),
        initial_state=1,
    )
