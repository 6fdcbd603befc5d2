"""Memory machine dynamics, training pipelines, and serialization.

A reservoir memory machine extends the reservoir recurrence with an
external memory of ``L`` slots. A classifier maps the pre-recall state
``h~_t`` to an address; the first visit to an address stores ``h~_t``,
later visits replace the state with the stored copy, and address 0
leaves the recurrence untouched. The associative variant replaces
explicit addresses with a binary write decision plus a learned
similarity metric that triggers reads.

Both variants are trained convexly under teacher forcing: the episodes
provide the address sequence, the forced run provides the states, and
readout / classifiers / metric are fit on those states.

The module also implements model serialization (single ``.npz``
container with a format-version field, bit-exact round trip).
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InvalidArgumentError,
    MetricUndeterminedError,
    UnsupportedReservoirError,
)
from .reservoir import (
    DelayOperatorBank,
    LdnMeta,
    Reservoir,
    apply_activation,
    delay_operators,
    reservoir_step,
    run_reservoir_batch,
)
from .training import (
    AssociationMetric,
    LinearClassifier,
    RidgeReadout,
    derive_write_labels,
    fit_association_metric,
    fit_classifier,
    fit_ridge,
)

SERIALIZATION_VERSION = "1"


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Memory:
    """External memory: ``L`` slots with written flags and a write cursor.

    An explicit flag marks written slots so that a legitimately zero
    stored state is not mistaken for an empty slot. ``count`` is the
    associative write cursor (number of sequentially filled slots).
    """

    slots: np.ndarray
    written: np.ndarray
    count: int

    def __post_init__(self) -> None:
        if self.slots.ndim != 2 or self.written.shape != (self.slots.shape[0],):
            raise InvalidArgumentError("memory slots and flags are inconsistent")
        if not 0 <= self.count <= self.slots.shape[0]:
            raise InvalidArgumentError("memory cursor out of range")

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @staticmethod
    def empty(n_slots: int, n_neurons: int) -> "Memory":
        return Memory(
            slots=np.zeros((n_slots, n_neurons)),
            written=np.zeros(n_slots, dtype=bool),
            count=0,
        )

    def write(self, slot: int, value: np.ndarray) -> "Memory":
        """Copy with ``value`` stored at 0-based ``slot`` (flag set)."""
        slots = self.slots.copy()
        written = self.written.copy()
        slots[slot] = value
        written[slot] = True
        return Memory(slots=slots, written=written, count=int(written.sum()))


@dataclass(frozen=True)
class EsnBaseline:
    """Plain echo state network: reservoir plus ridge readout."""

    reservoir: Reservoir
    readout: RidgeReadout


@dataclass(frozen=True)
class Rmm:
    """Reservoir memory machine with an address classifier."""

    reservoir: Reservoir
    readout: RidgeReadout
    address_classifier: LinearClassifier
    n_slots: int

    def __post_init__(self) -> None:
        if self.n_slots < 0:
            raise InvalidArgumentError("slot count must be non-negative")
        if not np.all(
            (self.address_classifier.classes >= 0)
            & (self.address_classifier.classes <= self.n_slots)
        ):
            raise InvalidArgumentError("classifier labels must lie in 0..L")


@dataclass(frozen=True)
class Armm:
    """Associative reservoir memory machine."""

    reservoir: Reservoir
    readout: RidgeReadout
    write_classifier: LinearClassifier
    metric: AssociationMetric
    n_slots: int

    def __post_init__(self) -> None:
        if self.metric.theta < 0:
            raise InvalidArgumentError("metric threshold must be non-negative")


@dataclass(frozen=True)
class Episode:
    """One task instance: inputs, teacher addresses, target outputs.

    ``initial_address`` is the teacher address of the initial state
    ``h0`` (the ``a_0`` of the schedule). When positive, forced runs
    pre-fill that slot with ``h0``, so any later visit to the address
    replays ``h0`` instead of re-anchoring the slot mid-episode — the
    same rule free runs apply through the classifier.
    """

    inputs: np.ndarray
    addresses: np.ndarray
    outputs: np.ndarray
    initial_address: int = 0

    def __post_init__(self) -> None:
        t = self.inputs.shape[0]
        if self.inputs.ndim != 2 or self.outputs.ndim != 2:
            raise InvalidArgumentError("inputs and outputs must be 2-d")
        if self.addresses.shape != (t,) or self.outputs.shape[0] != t:
            raise InvalidArgumentError("episode sequences must share their length")
        if t >= 1 and self.addresses.size and int(self.addresses.min()) < 0:
            raise InvalidArgumentError("addresses must be non-negative")
        if self.initial_address < 0:
            raise InvalidArgumentError("initial address must be non-negative")

    @property
    def length(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class RmmTrace:
    """Full record of one memory machine run."""

    pre_states: np.ndarray
    """States before memory interaction, shape ``(T, n)``."""

    states: np.ndarray
    """Post-recall states the readout sees, shape ``(T, n)``."""

    addresses: np.ndarray
    """Realized addresses, shape ``(T,)``."""

    outputs: np.ndarray
    """Readout outputs, shape ``(T, K)``."""

    memory: Memory
    """Final memory."""


@dataclass(frozen=True)
class ArmmTrace:
    """Full record of one associative memory machine run."""

    pre_states: np.ndarray
    states: np.ndarray
    writes: np.ndarray
    """Boolean write decisions per step."""

    read_slots: np.ndarray
    """1-based slot read at each step, 0 when no read happened."""

    outputs: np.ndarray
    memory: Memory


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def rmm_step(
    rmm: Rmm,
    x: np.ndarray,
    h: np.ndarray,
    mem: Memory,
    forced_address: "int | None" = None,
) -> tuple[np.ndarray, int, Memory]:
    """One memory machine step; returns ``(h', address, memory')``.

    The address comes from ``forced_address`` when given, else from the
    classifier on the pre-recall state. First visit to a positive
    address writes, later visits read, address 0 passes through.
    """
    pre = reservoir_step(rmm.reservoir, x, h)
    if forced_address is None:
        address = int(rmm.address_classifier.predict(pre[None, :])[0])
    else:
        address = int(forced_address)
    if address < 0 or address > rmm.n_slots:
        raise InvalidArgumentError(
            f"address {address} outside 0..{rmm.n_slots}"
        )
    if address == 0:
        return pre, 0, mem
    slot = address - 1
    if not mem.written[slot]:
        return pre, address, mem.write(slot, pre)
    return mem.slots[slot].copy(), address, mem


def rmm_run(
    rmm: Rmm,
    inputs: np.ndarray,
    forced: "np.ndarray | None" = None,
    initial_address: int = 0,
) -> RmmTrace:
    """Run a memory machine over one episode.

    Both modes apply the initial-state rule — ``h0`` pre-fills the slot
    of its address when that address is positive. Free runs
    (``forced is None``) take the address from the classifier,
    teacher-forced runs from ``initial_address`` (the episode's
    ``a_0``).
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != rmm.reservoir.n_inputs:
        raise InvalidArgumentError("inputs must be (T, m)")
    n_steps = inputs.shape[0]
    if forced is not None:
        forced = np.asarray(forced, dtype=int)
        if forced.shape != (n_steps,):
            raise InvalidArgumentError("forced addresses must match input length")

    res = rmm.reservoir
    mem_slots = np.zeros((rmm.n_slots, res.n_neurons))
    mem_written = np.zeros(rmm.n_slots, dtype=bool)
    if forced is None:
        a0 = int(rmm.address_classifier.predict(res.initial_state[None, :])[0])
    else:
        a0 = int(initial_address)
    if a0 < 0 or a0 > rmm.n_slots:
        raise InvalidArgumentError(f"address {a0} outside 0..{rmm.n_slots}")
    if a0 > 0:
        mem_slots[a0 - 1] = res.initial_state
        mem_written[a0 - 1] = True

    # Step one matrix-vector product at a time: a given (input, state)
    # pair then yields a bit-identical successor regardless of sequence
    # length, which is what makes cycle removal and slot replay exact.
    h = res.initial_state
    pre_states = np.empty((n_steps, res.n_neurons))
    states = np.empty((n_steps, res.n_neurons))
    addresses = np.empty(n_steps, dtype=int)
    for t in range(n_steps):
        h = reservoir_step(res, inputs[t], h)
        pre_states[t] = h
        if forced is None:
            address = int(rmm.address_classifier.predict(h[None, :])[0])
        else:
            address = int(forced[t])
        if address < 0 or address > rmm.n_slots:
            raise InvalidArgumentError(f"address {address} outside 0..{rmm.n_slots}")
        if address > 0:
            slot = address - 1
            if mem_written[slot]:
                h = mem_slots[slot].copy()
            else:
                mem_slots[slot] = h
                mem_written[slot] = True
        addresses[t] = address
        states[t] = h
    memory = Memory(
        slots=mem_slots, written=mem_written, count=int(mem_written.sum())
    )
    return RmmTrace(
        pre_states=pre_states,
        states=states,
        addresses=addresses,
        outputs=rmm.readout.predict(states),
        memory=memory,
    )


def armm_step(
    armm: Armm,
    x: np.ndarray,
    h: np.ndarray,
    mem: Memory,
    forced: "tuple[bool, int | None] | None" = None,
) -> tuple[np.ndarray, bool, "int | None", Memory]:
    """One associative step; returns ``(h', wrote, read_slot, memory')``.

    Writes append at the cursor and are ignored once memory is full.
    On non-write steps the metric scans the written slots; if the
    smallest squared distance is within the threshold, the state is
    replaced by that slot (ties towards the lowest index). ``forced``
    fixes the (write, read_slot) decision instead.
    """
    pre = reservoir_step(armm.reservoir, x, h)
    step_forced = None
    if forced is not None:
        step_forced = (bool(forced[0]), 0 if forced[1] is None else int(forced[1]))
    return _armm_resolve(armm, pre, mem, step_forced)


def derive_forced_decisions(addresses: np.ndarray) -> list[tuple[bool, int]]:
    """Translate teacher addresses into (write, read_slot) decisions.

    First occurrence of a positive address means "write" (slots fill in
    first-occurrence order); a repeated address means "read" of the slot
    that occurrence created; zero means neither.
    """
    order: dict[int, int] = {}
    decisions: list[tuple[bool, int]] = []
    for a in np.asarray(addresses, dtype=int).tolist():
        if a < 0:
            raise InvalidArgumentError("addresses must be non-negative")
        if a == 0:
            decisions.append((False, 0))
        elif a not in order:
            order[a] = len(order) + 1
            decisions.append((True, 0))
        else:
            decisions.append((False, order[a]))
    return decisions


def armm_run(
    armm: Armm,
    inputs: np.ndarray,
    forced: "np.ndarray | None" = None,
) -> ArmmTrace:
    """Run an associative machine over one episode.

    ``forced`` is a teacher address sequence; its first occurrences
    force writes and its repeats force reads (see
    :func:`derive_forced_decisions`). Memory starts empty either way.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != armm.reservoir.n_inputs:
        raise InvalidArgumentError("inputs must be (T, m)")
    n_steps = inputs.shape[0]
    decisions = None
    if forced is not None:
        forced = np.asarray(forced, dtype=int)
        if forced.shape != (n_steps,):
            raise InvalidArgumentError("forced addresses must match input length")
        decisions = derive_forced_decisions(forced)

    res = armm.reservoir
    h = res.initial_state
    mem = Memory.empty(armm.n_slots, res.n_neurons)
    pre_states = np.empty((n_steps, res.n_neurons))
    states = np.empty((n_steps, res.n_neurons))
    writes = np.zeros(n_steps, dtype=bool)
    read_slots = np.zeros(n_steps, dtype=int)
    for t in range(n_steps):
        pre = reservoir_step(res, inputs[t], h)
        step_forced = None if decisions is None else decisions[t]
        post, wrote, read, mem = _armm_resolve(armm, pre, mem, step_forced)
        pre_states[t] = pre
        states[t] = post
        writes[t] = wrote
        read_slots[t] = 0 if read is None else read
        h = post
    return ArmmTrace(
        pre_states=pre_states,
        states=states,
        writes=writes,
        read_slots=read_slots,
        outputs=armm.readout.predict(states),
        memory=mem,
    )


def _armm_resolve(
    armm: Armm,
    pre: np.ndarray,
    mem: Memory,
    forced: "tuple[bool, int] | None",
) -> tuple[np.ndarray, bool, "int | None", Memory]:
    """Memory interaction of one associative step on a computed pre-state."""
    if forced is not None:
        write, forced_read = bool(forced[0]), int(forced[1])
    else:
        write = bool(armm.write_classifier.predict(pre[None, :])[0])
        forced_read = 0
    if write:
        if mem.count < mem.n_slots:
            return pre, True, None, mem.write(mem.count, pre)
        return pre, True, None, mem
    if forced is not None:
        if forced_read == 0:
            return pre, False, None, mem
        if not 1 <= forced_read <= mem.count:
            raise InvalidArgumentError(f"forced read slot {forced_read} not written")
        return mem.slots[forced_read - 1].copy(), False, forced_read, mem
    if mem.count == 0:
        return pre, False, None, mem
    distances = armm.metric.distances(pre, mem.slots[: mem.count])
    best = int(np.argmin(distances))
    if distances[best] <= armm.metric.theta:
        return mem.slots[best].copy(), False, best + 1, mem
    return pre, False, None, mem


# ---------------------------------------------------------------------------
# Batched runners (internal): one matrix product per step for a whole
# episode batch. Episodes are padded to a common length with zero inputs
# and masked afterwards; each episode owns its batch row, so padding
# never leaks across episodes.
# ---------------------------------------------------------------------------


def _pad_episodes(
    episodes: "list[Episode]", n_inputs: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([ep.length for ep in episodes])
    t_max = int(lengths.max())
    inputs = np.zeros((len(episodes), t_max, n_inputs))
    addresses = np.zeros((len(episodes), t_max), dtype=int)
    for b, ep in enumerate(episodes):
        inputs[b, : ep.length] = ep.inputs
        addresses[b, : ep.length] = ep.addresses
    return inputs, addresses, lengths


def _forced_rmm_states(
    res: Reservoir,
    inputs: np.ndarray,
    addresses: np.ndarray,
    n_slots: int,
    initial_addresses: "np.ndarray | None" = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced batch run; returns (pre, post) of shape (B, T, n)."""
    n_batch, n_steps, _ = inputs.shape
    drive = inputs @ res.input_weights.T + res.bias
    w_t = res.recurrent_weights.T
    h = np.broadcast_to(res.initial_state, (n_batch, res.n_neurons)).copy()
    slots = np.zeros((n_batch, max(n_slots, 1), res.n_neurons))
    written = np.zeros((n_batch, max(n_slots, 1)), dtype=bool)
    rows = np.arange(n_batch)
    if initial_addresses is not None:
        seeded = initial_addresses > 0
        slot0 = np.where(seeded, initial_addresses - 1, 0)
        slots[rows[seeded], slot0[seeded]] = res.initial_state
        written[rows[seeded], slot0[seeded]] = True
    pre_states = np.empty((n_batch, n_steps, res.n_neurons))
    post_states = np.empty((n_batch, n_steps, res.n_neurons))
    for t in range(n_steps):
        pre = apply_activation(res.activation, drive[:, t] + h @ w_t)
        a = addresses[:, t]
        slot = np.where(a > 0, a - 1, 0)
        is_written = written[rows, slot]
        write_mask = (a > 0) & ~is_written
        read_mask = (a > 0) & is_written
        if write_mask.any():
            slots[rows[write_mask], slot[write_mask]] = pre[write_mask]
            written[rows[write_mask], slot[write_mask]] = True
        post = pre.copy()
        if read_mask.any():
            post[read_mask] = slots[rows[read_mask], slot[read_mask]]
        pre_states[:, t] = pre
        post_states[:, t] = post
        h = post
    return pre_states, post_states


def _free_rmm_states(rmm: Rmm, inputs: np.ndarray) -> np.ndarray:
    """Free-running batch run; returns post-recall states (B, T, n)."""
    res = rmm.reservoir
    n_batch, n_steps, _ = inputs.shape
    drive = inputs @ res.input_weights.T + res.bias
    w_t = res.recurrent_weights.T
    h = np.broadcast_to(res.initial_state, (n_batch, res.n_neurons)).copy()
    slots = np.zeros((n_batch, max(rmm.n_slots, 1), res.n_neurons))
    written = np.zeros((n_batch, max(rmm.n_slots, 1)), dtype=bool)
    rows = np.arange(n_batch)
    a0 = int(rmm.address_classifier.predict(res.initial_state[None, :])[0])
    if a0 > rmm.n_slots:
        raise InvalidArgumentError(f"address {a0} outside 0..{rmm.n_slots}")
    if a0 > 0:
        slots[:, a0 - 1] = res.initial_state
        written[:, a0 - 1] = True
    post_states = np.empty((n_batch, n_steps, res.n_neurons))
    for t in range(n_steps):
        pre = apply_activation(res.activation, drive[:, t] + h @ w_t)
        a = rmm.address_classifier.predict(pre).astype(int)
        if a.max(initial=0) > rmm.n_slots:
            raise InvalidArgumentError("classifier produced an out-of-range address")
        slot = np.where(a > 0, a - 1, 0)
        is_written = written[rows, slot]
        write_mask = (a > 0) & ~is_written
        read_mask = (a > 0) & is_written
        if write_mask.any():
            slots[rows[write_mask], slot[write_mask]] = pre[write_mask]
            written[rows[write_mask], slot[write_mask]] = True
        post = pre.copy()
        if read_mask.any():
            post[read_mask] = slots[rows[read_mask], slot[read_mask]]
        post_states[:, t] = post
        h = post
    return post_states


def _forced_armm_states(
    res: Reservoir,
    inputs: np.ndarray,
    decision_lists: "list[list[tuple[bool, int]]]",
    n_slots: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced associative batch run; returns (pre, post)."""
    n_batch, n_steps, _ = inputs.shape
    drive = inputs @ res.input_weights.T + res.bias
    w_t = res.recurrent_weights.T
    h = np.broadcast_to(res.initial_state, (n_batch, res.n_neurons)).copy()
    slots = np.zeros((n_batch, max(n_slots, 1), res.n_neurons))
    cursor = np.zeros(n_batch, dtype=int)
    rows = np.arange(n_batch)
    write_flags = np.zeros((n_batch, n_steps), dtype=bool)
    read_targets = np.zeros((n_batch, n_steps), dtype=int)
    for b, decisions in enumerate(decision_lists):
        for t, (write, read) in enumerate(decisions):
            write_flags[b, t] = write
            read_targets[b, t] = read
    pre_states = np.empty((n_batch, n_steps, res.n_neurons))
    post_states = np.empty((n_batch, n_steps, res.n_neurons))
    for t in range(n_steps):
        pre = apply_activation(res.activation, drive[:, t] + h @ w_t)
        write_mask = write_flags[:, t] & (cursor < n_slots)
        if write_mask.any():
            slots[rows[write_mask], cursor[write_mask]] = pre[write_mask]
            cursor[write_mask] += 1
        post = pre.copy()
        read_mask = read_targets[:, t] > 0
        if read_mask.any():
            if np.any(read_targets[read_mask, t] > cursor[read_mask]):
                raise InvalidArgumentError("forced read of an unwritten slot")
            post[read_mask] = slots[rows[read_mask], read_targets[read_mask, t] - 1]
        pre_states[:, t] = pre
        post_states[:, t] = post
        h = post
    return pre_states, post_states


def _free_armm_states(armm: Armm, inputs: np.ndarray) -> np.ndarray:
    """Free-running associative batch run; returns post-recall states."""
    res = armm.reservoir
    metric = armm.metric
    n_batch, n_steps, _ = inputs.shape
    drive = inputs @ res.input_weights.T + res.bias
    w_t = res.recurrent_weights.T
    h = np.broadcast_to(res.initial_state, (n_batch, res.n_neurons)).copy()
    n_slots = max(armm.n_slots, 1)
    slots = np.zeros((n_batch, n_slots, res.n_neurons))
    cursor = np.zeros(n_batch, dtype=int)
    rows = np.arange(n_batch)
    slot_index = np.arange(n_slots)
    row_weight = metric.alpha.sum(axis=1)
    col_weight = metric.alpha.sum(axis=0)
    post_states = np.empty((n_batch, n_steps, res.n_neurons))
    for t in range(n_steps):
        pre = apply_activation(res.activation, drive[:, t] + h @ w_t)
        write = armm.write_classifier.predict(pre).astype(int) == 1
        write_mask = write & (cursor < armm.n_slots)
        if write_mask.any():
            slots[rows[write_mask], cursor[write_mask]] = pre[write_mask]
            cursor[write_mask] += 1
        post = pre.copy()
        candidates = ~write & (cursor > 0)
        if candidates.any():
            phi_h = metric.bank.reconstruct(pre[candidates])  # (tau, Bc, m)
            phi_m = metric.bank.reconstruct(slots[candidates])  # (tau, Bc, L, m)
            h_sq = np.sum(phi_h**2, axis=-1)  # (tau, Bc)
            m_sq = np.sum(phi_m**2, axis=-1)  # (tau, Bc, L)
            cross = np.einsum("tbm,sblm->tsbl", phi_h, phi_m)
            dist = (
                (row_weight @ h_sq)[:, None]
                + np.einsum("s,sbl->bl", col_weight, m_sq)
                - 2.0 * np.einsum("ts,tsbl->bl", metric.alpha, cross)
            )
            dist[slot_index[None, :] >= cursor[candidates][:, None]] = np.inf
            best = np.argmin(dist, axis=1)
            best_dist = dist[np.arange(dist.shape[0]), best]
            hit = best_dist <= metric.theta
            if hit.any():
                cand_rows = rows[candidates][hit]
                post[cand_rows] = slots[cand_rows, best[hit]]
        post_states[:, t] = post
        h = post
    return post_states


# ---------------------------------------------------------------------------
# Training pipelines
# ---------------------------------------------------------------------------


def _check_episodes(res: Reservoir, episodes: "list[Episode]") -> None:
    if not episodes:
        raise InvalidArgumentError("at least one training episode required")
    for ep in episodes:
        if ep.inputs.shape[1] != res.n_inputs:
            raise InvalidArgumentError(
                f"episode has {ep.inputs.shape[1]} input channels, "
                f"reservoir expects {res.n_inputs}"
            )


def train_esn(
    res: Reservoir, episodes: "list[Episode]", ridge_lambda: float
) -> EsnBaseline:
    """Fit a plain reservoir readout on concatenated episode states."""
    _check_episodes(res, episodes)
    inputs, _, lengths = _pad_episodes(episodes, res.n_inputs)
    states = run_reservoir_batch(res, inputs)
    mask = np.arange(inputs.shape[1])[None, :] < lengths[:, None]
    flat_states = states[mask]
    flat_targets = np.concatenate([ep.outputs for ep in episodes], axis=0)
    readout = fit_ridge(flat_states, flat_targets, ridge_lambda)
    return EsnBaseline(reservoir=res, readout=readout)


def train_rmm(
    res: Reservoir,
    episodes: "list[Episode]",
    ridge_lambda: float,
    hinge_c: float,
) -> Rmm:
    """Train a memory machine by teacher forcing.

    The address classifier is fit on pre-recall states (the dynamics
    evaluate it there); the readout on post-recall states. Each episode
    also contributes the pair ``(h0, a_0)`` from its initial address,
    so the free-run initial-state rule reproduces the teacher's
    pre-filled slot (or the empty memory when ``a_0 = 0``).
    """
    _check_episodes(res, episodes)
    initial_addresses = np.array([ep.initial_address for ep in episodes])
    n_slots = int(
        max(
            max(int(ep.addresses.max(initial=0)) for ep in episodes),
            int(initial_addresses.max(initial=0)),
        )
    )
    inputs, addresses, lengths = _pad_episodes(episodes, res.n_inputs)
    pre, post = _forced_rmm_states(
        res, inputs, addresses, n_slots, initial_addresses
    )
    mask = np.arange(inputs.shape[1])[None, :] < lengths[:, None]

    clf_states = np.concatenate(
        [pre[mask], np.tile(res.initial_state, (len(episodes), 1))], axis=0
    )
    clf_labels = np.concatenate([addresses[mask], initial_addresses], axis=0)
    classifier = fit_classifier(clf_states, clf_labels, hinge_c)

    readout = fit_ridge(
        post[mask], np.concatenate([ep.outputs for ep in episodes]), ridge_lambda
    )
    return Rmm(
        reservoir=res,
        readout=readout,
        address_classifier=classifier,
        n_slots=n_slots,
    )


def _association_triples(
    pre: np.ndarray,
    decisions: "list[tuple[bool, int]]",
) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Triples for one episode per the negative-pair policy.

    ``pre`` holds the episode's pre-recall states. Memory is taken at
    the start of each step: at a read step the correct slot is the
    positive and every other written slot a negative; every other step
    with nonempty memory contributes negatives against all written
    slots.
    """
    triples: list[tuple[np.ndarray, np.ndarray, int]] = []
    stored: list[np.ndarray] = []
    for t, (write, read) in enumerate(decisions):
        state = pre[t]
        if read > 0:
            for ell, slot in enumerate(stored, start=1):
                triples.append((state, slot, +1 if ell == read else -1))
        else:
            for slot in stored:
                triples.append((state, slot, -1))
        if write:
            stored.append(pre[t])
    return triples


def train_armm(
    res: Reservoir,
    episodes: "list[Episode]",
    ridge_lambda: float,
    hinge_c: float,
    l1_weight: float = 1e-3,
    max_delay: int = 8,
) -> Armm:
    """Train an associative memory machine by teacher forcing.

    Requires an LDN reservoir (the metric works through its delay
    operators). Write labels are derived from first occurrences of the
    teacher addresses; the metric is fit on (state, slot, sign) triples
    from the forced runs; the readout on post-recall states.
    """
    if res.kind != "ldn" or res.ldn_meta is None:
        raise UnsupportedReservoirError(
            "associative training requires an LDN reservoir"
        )
    _check_episodes(res, episodes)
    if any(ep.initial_address > 0 for ep in episodes):
        raise InvalidArgumentError(
            "associative machines start with empty memory (a_0 = 0)"
        )
    decision_lists = [derive_forced_decisions(ep.addresses) for ep in episodes]
    n_slots = int(max(sum(w for w, _ in dl) for dl in decision_lists))
    if not any(r > 0 for dl in decision_lists for _, r in dl):
        raise MetricUndeterminedError(
            "no read events in any episode; the metric is undetermined"
        )
    inputs, _, lengths = _pad_episodes(episodes, res.n_inputs)
    pre, post = _forced_armm_states(res, inputs, decision_lists, n_slots)
    mask = np.arange(inputs.shape[1])[None, :] < lengths[:, None]

    write_labels = np.concatenate(
        [derive_write_labels(ep.addresses) for ep in episodes]
    )
    write_classifier = fit_classifier(pre[mask], write_labels, hinge_c)

    delays = list(range(0, min(max_delay, int(res.ldn_meta.window)) + 1))
    bank = delay_operators(res, delays)
    triples: list[tuple[np.ndarray, np.ndarray, int]] = []
    for b, decisions in enumerate(decision_lists):
        triples.extend(_association_triples(pre[b, : lengths[b]], decisions))
    metric = fit_association_metric(triples, bank, l1_weight)

    readout = fit_ridge(
        post[mask], np.concatenate([ep.outputs for ep in episodes]), ridge_lambda
    )
    return Armm(
        reservoir=res,
        readout=readout,
        write_classifier=write_classifier,
        metric=metric,
        n_slots=n_slots,
    )


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------


def predict_episode(model, inputs: np.ndarray) -> np.ndarray:
    """Free-run outputs of any trained model on one input sequence."""
    outputs, = predict_batch(model, [np.asarray(inputs, dtype=float)])
    return outputs


def predict_batch(model, input_list: "list[np.ndarray]") -> list[np.ndarray]:
    """Free-run outputs for several input sequences (batched runner)."""
    if not input_list:
        return []
    res = model.reservoir
    lengths = [arr.shape[0] for arr in input_list]
    t_max = max(lengths)
    inputs = np.zeros((len(input_list), t_max, res.n_inputs))
    for b, arr in enumerate(input_list):
        inputs[b, : arr.shape[0]] = arr
    if isinstance(model, EsnBaseline):
        states = run_reservoir_batch(res, inputs)
    elif isinstance(model, Rmm):
        states = _free_rmm_states(model, inputs)
    elif isinstance(model, Armm):
        states = _free_armm_states(model, inputs)
    else:
        raise InvalidArgumentError(f"unknown model type {type(model).__name__}")
    outputs = model.readout.predict(states)
    return [outputs[b, : lengths[b]] for b in range(len(input_list))]


def evaluate_rmse(model, episodes: "list[Episode]") -> tuple[list[float], float]:
    """Per-episode RMSE of free-run predictions, and their mean."""
    if not episodes:
        raise InvalidArgumentError("at least one evaluation episode required")
    predictions = predict_batch(model, [ep.inputs for ep in episodes])
    losses = [
        float(np.sqrt(np.mean((pred - ep.outputs) ** 2)))
        for pred, ep in zip(predictions, episodes)
    ]
    return losses, float(np.mean(losses))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _reservoir_payload(res: Reservoir, prefix: str) -> dict:
    payload = {
        f"{prefix}input_weights": res.input_weights,
        f"{prefix}recurrent_weights": res.recurrent_weights,
        f"{prefix}bias": res.bias,
        f"{prefix}initial_state": res.initial_state,
    }
    if res.ldn_meta is not None:
        payload[f"{prefix}ldn_meta"] = np.array(
            [res.ldn_meta.order, res.ldn_meta.window, res.ldn_meta.dt]
        )
    return payload


def _reservoir_from_payload(data, meta: dict, prefix: str) -> Reservoir:
    ldn_meta = None
    if f"{prefix}ldn_meta" in data:
        order, window, dt = data[f"{prefix}ldn_meta"]
        ldn_meta = LdnMeta(order=int(order), window=float(window), dt=float(dt))
    return Reservoir(
        kind=meta[f"{prefix}kind"],
        input_weights=data[f"{prefix}input_weights"],
        recurrent_weights=data[f"{prefix}recurrent_weights"],
        bias=data[f"{prefix}bias"],
        initial_state=data[f"{prefix}initial_state"],
        activation=meta[f"{prefix}activation"],
        ldn_meta=ldn_meta,
    )


def save_model(model, path: "str | Path") -> None:
    """Serialize a trained model to a single npz container."""
    meta: dict = {"format_version": SERIALIZATION_VERSION}
    arrays: dict = {}
    res = model.reservoir
    meta["reservoir.kind"] = res.kind
    meta["reservoir.activation"] = res.activation
    arrays.update(_reservoir_payload(res, "reservoir."))
    arrays["readout.weights"] = model.readout.weights
    arrays["readout.intercept"] = model.readout.intercept
    arrays["readout.meta"] = np.array(
        [model.readout.ridge_lambda, model.readout.gradient_norm]
    )
    if isinstance(model, EsnBaseline):
        meta["kind"] = "esn"
    elif isinstance(model, Rmm):
        meta["kind"] = "rmm"
        meta["n_slots"] = model.n_slots
        clf = model.address_classifier
        arrays["classifier.classes"] = clf.classes
        arrays["classifier.weights"] = clf.weights
        arrays["classifier.biases"] = clf.biases
        arrays["classifier.meta"] = np.array([clf.hinge_c, clf.train_accuracy])
    elif isinstance(model, Armm):
        meta["kind"] = "armm"
        meta["n_slots"] = model.n_slots
        clf = model.write_classifier
        arrays["classifier.classes"] = clf.classes
        arrays["classifier.weights"] = clf.weights
        arrays["classifier.biases"] = clf.biases
        arrays["classifier.meta"] = np.array([clf.hinge_c, clf.train_accuracy])
        metric = model.metric
        arrays["metric.alpha"] = metric.alpha
        arrays["metric.delays"] = np.array(metric.bank.delays, dtype=int)
        arrays["metric.meta"] = np.array(
            [metric.theta, metric.l1_weight, metric.objective, metric.duality_gap]
        )
    else:
        raise InvalidArgumentError(f"cannot serialize {type(model).__name__}")
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: "str | Path"):
    """Load a model saved by save_model (bit-exact round trip)."""
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"missing or corrupt metadata in {path}") from exc
        if meta.get("format_version") != SERIALIZATION_VERSION:
            raise FormatError(
                f"unsupported model format version {meta.get('format_version')!r}"
            )
        res = _reservoir_from_payload(data, meta, "reservoir.")
        lam, grad = data["readout.meta"]
        readout = RidgeReadout(
            weights=data["readout.weights"],
            intercept=data["readout.intercept"],
            ridge_lambda=float(lam),
            gradient_norm=float(grad),
        )
        kind = meta.get("kind")
        if kind == "esn":
            return EsnBaseline(reservoir=res, readout=readout)
        if kind in ("rmm", "armm"):
            c, acc = data["classifier.meta"]
            classifier = LinearClassifier(
                classes=data["classifier.classes"],
                weights=data["classifier.weights"],
                biases=data["classifier.biases"],
                hinge_c=float(c),
                train_accuracy=float(acc),
            )
            if kind == "rmm":
                return Rmm(
                    reservoir=res,
                    readout=readout,
                    address_classifier=classifier,
                    n_slots=int(meta["n_slots"]),
                )
            theta, l1w, obj, gap = data["metric.meta"]
            bank = delay_operators(res, data["metric.delays"].tolist())
            metric = AssociationMetric(
                alpha=data["metric.alpha"],
                theta=float(theta),
                bank=bank,
                l1_weight=float(l1w),
                objective=float(obj),
                duality_gap=float(gap),
            )
            return Armm(
                reservoir=res,
                readout=readout,
                write_classifier=classifier,
                metric=metric,
                n_slots=int(meta["n_slots"]),
            )
        raise FormatError(f"unknown model kind {kind!r} in {path}")
