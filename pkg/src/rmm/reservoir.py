"""Reservoir construction and simulation.

Three reservoir families are supported:

* ``random`` -- dense Gaussian recurrent weights rescaled to an exact
  spectral radius below one, with tanh activation.
* ``crj`` -- a cycle reservoir with jumps: a unidirectional ring plus
  bidirectional shortcut edges every ``jump_length`` positions.
* ``ldn`` -- a Legendre delay network: ``m`` independent linear systems
  whose state holds the Legendre coefficients of the recent input
  history over a sliding window.

All reservoirs share the recurrence ``h_t = act(U x_t + W h_{t-1} + b)``
and are immutable after construction; every constructor is a pure
function of its arguments.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import legval
from scipy.linalg import expm

from .errors import InvalidArgumentError, UnsupportedReservoirError

ACTIVATIONS = ("tanh", "identity", "heaviside")


def apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    """Apply the named element-wise activation to ``x``."""
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return np.asarray(x, dtype=float)
    if name == "heaviside":
        # Strict threshold: exactly zero pre-activations map to zero.
        return np.where(x > 0.0, 1.0, 0.0)
    raise InvalidArgumentError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LdnMeta:
    """Construction parameters of a Legendre delay network reservoir."""

    order: int
    """Number of Legendre coefficients kept per input channel."""

    window: float
    """Length of the represented history, in time steps."""

    dt: float = 1.0
    """Integration step of the discretization, in time steps."""


@dataclass(frozen=True)
class Reservoir:
    """A fixed recurrent system ``h_t = act(U x_t + W h_{t-1} + b)``."""

    kind: str
    """One of ``random``, ``crj``, ``ldn`` or ``compiled``."""

    input_weights: np.ndarray
    """Input-to-state matrix of shape ``(n, m)``."""

    recurrent_weights: np.ndarray
    """State-to-state matrix of shape ``(n, n)``."""

    bias: np.ndarray
    """Per-neuron bias, shape ``(n,)``."""

    initial_state: np.ndarray
    """State used before the first input, shape ``(n,)``."""

    activation: str
    """Element-wise nonlinearity, one of :data:`ACTIVATIONS`."""

    ldn_meta: LdnMeta | None = field(default=None)
    """Present when ``kind == "ldn"``; records order/window/dt."""

    def __post_init__(self) -> None:
        n, m = self.input_weights.shape
        if self.recurrent_weights.shape != (n, n):
            raise InvalidArgumentError(
                f"recurrent weights must be ({n}, {n}), "
                f"got {self.recurrent_weights.shape}"
            )
        if self.bias.shape != (n,) or self.initial_state.shape != (n,):
            raise InvalidArgumentError("bias and initial state must have length n")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")

    @property
    def n_neurons(self) -> int:
        return self.input_weights.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.input_weights.shape[1]


def spectral_radius(matrix: np.ndarray) -> float:
    """Largest absolute eigenvalue of a square matrix.

    Computed from the full eigenvalue spectrum: Gaussian matrices
    routinely have a complex-conjugate leading pair, for which plain
    power iteration does not converge.
    """
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def _check_finite(**params: float) -> None:
    for name, value in params.items():
        if not np.isfinite(value):
            raise InvalidArgumentError(f"{name} must be finite, got {value!r}")


def make_random_reservoir(
    n: int,
    m: int,
    spectral_radius_target: float = 0.9,
    input_scale: float = 1.0,
    seed: int = 0,
) -> Reservoir:
    """Dense Gaussian reservoir rescaled to an exact spectral radius.

    ``W`` is drawn from a standard Gaussian and rescaled so its spectral
    radius equals ``spectral_radius_target``; ``U`` is Gaussian scaled by
    ``input_scale``. Bias and initial state are zero, activation is tanh.
    """
    if n < 1 or m < 1:
        raise InvalidArgumentError("n and m must be at least 1")
    _check_finite(spectral_radius_target=spectral_radius_target, input_scale=input_scale)
    if not 0.0 < spectral_radius_target < 1.0:
        raise InvalidArgumentError("spectral radius must lie in (0, 1)")
    if input_scale <= 0.0:
        raise InvalidArgumentError("input scale must be positive")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n))
    rho = spectral_radius(w)
    if rho == 0.0:
        raise InvalidArgumentError("degenerate zero recurrent draw")
    w *= spectral_radius_target / rho
    u = rng.standard_normal((n, m)) * input_scale
    return Reservoir(
        kind="random",
        input_weights=u,
        recurrent_weights=w,
        bias=np.zeros(n),
        initial_state=np.zeros(n),
        activation="tanh",
    )


def crj_jump_edges(n: int, jump_length: int) -> list[tuple[int, int]]:
    """Enumerate the jump cells of a cycle reservoir with jumps.

    Jumps start at neuron 0 and connect every ``jump_length``-th neuron
    bidirectionally; when ``n`` is not divisible by ``jump_length`` the
    final jump connects the last anchor back to neuron 0 (a shorter
    hop, following the original construction). The returned list keeps
    one entry per written cell, so a pair shared by two jumps appears
    twice.
    """
    edges: list[tuple[int, int]] = []
    for i in range(0, n, jump_length):
        j = i + jump_length
        if j >= n:
            j = 0
        if j == i:
            continue
        edges.append((i, j))
        edges.append((j, i))
    return edges


def make_crj_reservoir(
    n: int,
    m: int,
    r_cycle: float = 0.7,
    r_jump: float = 0.4,
    jump_length: int = 3,
    input_scale: float = 1.0,
    seed: int = 0,
) -> Reservoir:
    """Cycle reservoir with jumps.

    The recurrent matrix is a unidirectional ring ``i -> i+1 (mod n)``
    with weight ``r_cycle`` plus bidirectional jumps every
    ``jump_length`` positions with weight ``r_jump``. Input weights have
    magnitude ``input_scale`` with signs drawn from ``seed``.
    """
    if n < 1 or m < 1:
        raise InvalidArgumentError("n and m must be at least 1")
    _check_finite(r_cycle=r_cycle, r_jump=r_jump, input_scale=input_scale)
    if not (0.0 <= r_cycle < 1.0 and 0.0 <= r_jump < 1.0):
        raise InvalidArgumentError("ring and jump weights must lie in [0, 1)")
    if jump_length < 2:
        raise InvalidArgumentError("jump length must be at least 2")
    if jump_length >= n:
        raise InvalidArgumentError("jump length must be smaller than n")
    w = np.zeros((n, n))
    for i in range(n):
        w[(i + 1) % n, i] = r_cycle
    for i, j in crj_jump_edges(n, jump_length):
        w[i, j] = r_jump
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(n, m))
    return Reservoir(
        kind="crj",
        input_weights=signs * input_scale,
        recurrent_weights=w,
        bias=np.zeros(n),
        initial_state=np.zeros(n),
        activation="tanh",
    )


def ldn_continuous_matrices(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Legendre delay system for a unit window.

    ``A[i][j] = (2i+1) * (-1 if i < j else (-1)**(i-j+1))`` and
    ``B[i] = (2i+1) * (-1)**i``. Dividing both by the window length
    gives the system whose state tracks the Legendre coefficients of
    the input over that window.
    """
    if order < 1:
        raise InvalidArgumentError("order must be at least 1")
    a = np.empty((order, order))
    b = np.empty(order)
    for i in range(order):
        b[i] = (2 * i + 1) * (-1.0) ** i
        for j in range(order):
            a[i, j] = (2 * i + 1) * (-1.0 if i < j else (-1.0) ** (i - j + 1))
    return a, b


def make_ldn_reservoir(
    order: int,
    m: int,
    window: float,
    dt: float = 1.0,
    seed: int = 0,
) -> Reservoir:
    """Legendre delay network reservoir with ``m`` independent channels.

    The continuous system ``(A/window, B/window)`` is discretized with a
    zero-order hold of step ``dt``; the recurrent matrix repeats the
    discretized ``A`` block-diagonally over channels, so neuron
    ``c*order + i`` holds Legendre coefficient ``i`` of channel ``c``.
    Activation is the identity with zero bias; ``seed`` is accepted for
    interface uniformity but unused.
    """
    del seed  # deterministic construction
    if order < 1 or m < 1:
        raise InvalidArgumentError("order and m must be at least 1")
    _check_finite(window=window, dt=dt)
    if dt <= 0.0:
        raise InvalidArgumentError("dt must be positive")
    if window < dt:
        raise InvalidArgumentError("window must be at least dt")
    a, b = ldn_continuous_matrices(order)
    ac = a / window
    bc = b / window
    ad = expm(ac * dt)
    bd = np.linalg.solve(ac, (ad - np.eye(order)) @ bc)
    n = order * m
    w = np.zeros((n, n))
    u = np.zeros((n, m))
    for c in range(m):
        block = slice(c * order, (c + 1) * order)
        w[block, block] = ad
        u[block, c] = bd
    return Reservoir(
        kind="ldn",
        input_weights=u,
        recurrent_weights=w,
        bias=np.zeros(n),
        initial_state=np.zeros(n),
        activation="identity",
        ldn_meta=LdnMeta(order=order, window=float(window), dt=float(dt)),
    )


def reservoir_step(res: Reservoir, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One application of ``act(U x + W h + b)``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.shape != (res.n_inputs,):
        raise InvalidArgumentError(
            f"input must have shape ({res.n_inputs},), got {x.shape}"
        )
    if h.shape != (res.n_neurons,):
        raise InvalidArgumentError(
            f"state must have shape ({res.n_neurons},), got {h.shape}"
        )
    pre = res.input_weights @ x + res.recurrent_weights @ h + res.bias
    return apply_activation(res.activation, pre)


def run_reservoir(
    res: Reservoir,
    inputs: np.ndarray,
    initial_state: np.ndarray | None = None,
) -> np.ndarray:
    """Run the recurrence over a ``(T, m)`` input sequence.

    Returns the ``(T, n)`` state sequence, where row ``t`` is the state
    after consuming ``inputs[t]``. There is no memory interaction. The
    run starts from ``initial_state`` when given, else from ``res.h0``.

    Steps are computed one matrix-vector product at a time, so a given
    (input, state) pair yields bit-identical successors regardless of
    sequence length or position (batched evaluation does not guarantee
    this because the BLAS kernel may depend on the operand shapes).
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != res.n_inputs:
        raise InvalidArgumentError(
            f"inputs must have shape (T, {res.n_inputs}), got {inputs.shape}"
        )
    if inputs.shape[0] < 1:
        raise InvalidArgumentError("inputs must contain at least one step")
    h = res.initial_state if initial_state is None else np.asarray(initial_state, float)
    if h.shape != (res.n_neurons,):
        raise InvalidArgumentError("initial state has wrong length")
    states = np.empty((inputs.shape[0], res.n_neurons))
    for t in range(inputs.shape[0]):
        h = reservoir_step(res, inputs[t], h)
        states[t] = h
    return states


def run_reservoir_batch(
    res: Reservoir,
    inputs: np.ndarray,
    initial_states: np.ndarray | None = None,
) -> np.ndarray:
    """Run ``B`` sequences of equal length in lock step.

    ``inputs`` has shape ``(B, T, m)``; the result has shape ``(B, T, n)``.
    This is the vectorized inner loop behind :func:`run_reservoir` and
    the batch evaluators: one matrix product per time step for the whole
    batch instead of one per sequence.
    """
    n_batch, n_steps, _ = inputs.shape
    drive = inputs @ res.input_weights.T + res.bias
    w_t = res.recurrent_weights.T
    if initial_states is None:
        h = np.broadcast_to(res.initial_state, (n_batch, res.n_neurons)).copy()
    else:
        h = np.array(initial_states, dtype=float, copy=True)
    states = np.empty((n_batch, n_steps, res.n_neurons))
    for t in range(n_steps):
        h = apply_activation(res.activation, drive[:, t] + h @ w_t)
        states[:, t] = h
    return states


@dataclass(frozen=True)
class DelayOperatorBank:
    """Linear maps recovering past inputs from an LDN state.

    ``operators[k]`` maps the ``n``-dimensional state to the
    ``m``-dimensional input as it was ``delays[k]`` steps in the past.
    """

    delays: tuple[int, ...]
    """Reconstruction lags, in time steps."""

    operators: np.ndarray
    """Stacked maps, shape ``(len(delays), m, n)``."""

    window: float
    """Window length of the source reservoir, in time steps."""

    def reconstruct(self, states: np.ndarray) -> np.ndarray:
        """Apply every operator to states of shape ``(..., n)``.

        Returns shape ``(len(delays), ..., m)``.
        """
        return np.einsum("dmn,...n->d...m", self.operators, states)


def delay_operators(res: Reservoir, delays: list[int]) -> DelayOperatorBank:
    """Build reconstruction operators for the given delays.

    For each delay ``d`` the per-channel row holds the shifted Legendre
    polynomials evaluated at ``(d + 1/2) * dt / window``: under the
    zero-order-hold discretization the state at the end of a step
    represents the input held constant over each step, so sampling at
    the half-step midpoint recovers the step's value. Rows are assembled
    block-wise, one block per channel.
    """
    if res.kind != "ldn" or res.ldn_meta is None:
        raise UnsupportedReservoirError("delay operators require an LDN reservoir")
    meta = res.ldn_meta
    delays = [int(d) for d in delays]
    for d in delays:
        if d < 0:
            raise InvalidArgumentError("delays must be non-negative")
        if d * meta.dt > meta.window:
            raise InvalidArgumentError(
                f"delay {d} exceeds the window of {meta.window} time steps"
            )
    m = res.n_inputs
    order = meta.order
    ops = np.zeros((len(delays), m, res.n_neurons))
    for k, d in enumerate(delays):
        r = (d + 0.5) * meta.dt / meta.window
        coeffs = np.array(
            [legval(2.0 * r - 1.0, np.eye(order)[i]) for i in range(order)]
        )
        for c in range(m):
            ops[k, c, c * order : (c + 1) * order] = coeffs
    return DelayOperatorBank(delays=tuple(delays), operators=ops, window=meta.window)
