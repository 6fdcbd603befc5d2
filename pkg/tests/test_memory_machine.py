"""Tests for memory machine dynamics, training, and serialization."""

import numpy as np
import pytest

from rmm.errors import (
    FormatError,
    InvalidArgumentError,
    MetricUndeterminedError,
    UnsupportedReservoirError,
)
from rmm.machines import cycle_reduce
from rmm.memory_machine import (
    Armm,
    Episode,
    EsnBaseline,
    Memory,
    Rmm,
    _forced_rmm_states,
    armm_run,
    armm_step,
    derive_forced_decisions,
    evaluate_rmse,
    load_model,
    predict_batch,
    predict_episode,
    rmm_run,
    rmm_step,
    save_model,
    train_armm,
    train_esn,
    train_rmm,
)
from rmm.reservoir import (
    delay_operators,
    make_ldn_reservoir,
    make_random_reservoir,
    run_reservoir,
)
from rmm.training import AssociationMetric, LinearClassifier, RidgeReadout


def constant_classifier(n_neurons: int, label: int, n_labels: int) -> LinearClassifier:
    """Classifier whose argmax is always ``label`` (via biases alone)."""
    biases = np.full(n_labels, -1.0)
    biases[label] = 0.0
    return LinearClassifier(
        classes=np.arange(n_labels),
        weights=np.zeros((n_labels, n_neurons)),
        biases=biases,
        hinge_c=1.0,
        train_accuracy=1.0,
    )


def zero_readout(n_neurons: int, n_outputs: int) -> RidgeReadout:
    return RidgeReadout(
        weights=np.zeros((n_outputs, n_neurons)),
        intercept=np.zeros(n_outputs),
        ridge_lambda=0.0,
        gradient_norm=0.0,
    )


def make_rmm(res, n_slots: int, label: int = 0) -> Rmm:
    return Rmm(
        reservoir=res,
        readout=zero_readout(res.n_neurons, 1),
        address_classifier=constant_classifier(res.n_neurons, label, n_slots + 1),
        n_slots=n_slots,
    )


# ---------------------------------------------------------------------------
# Memory container
# ---------------------------------------------------------------------------


def test_memory_empty_invariants():
    mem = Memory.empty(3, 5)
    assert mem.slots.shape == (3, 5)
    assert not mem.written.any()
    assert mem.count == 0
    assert np.all(mem.slots == 0.0)


def test_memory_write_is_pure_and_flags():
    mem = Memory.empty(2, 3)
    value = np.array([1.0, -2.0, 3.0])
    mem2 = mem.write(1, value)
    assert mem.count == 0 and not mem.written.any()
    assert mem2.count == 1
    assert mem2.written.tolist() == [False, True]
    assert np.array_equal(mem2.slots[1], value)


def test_memory_validation():
    with pytest.raises(InvalidArgumentError):
        Memory(slots=np.zeros((2, 3)), written=np.zeros(3, dtype=bool), count=0)
    with pytest.raises(InvalidArgumentError):
        Memory(slots=np.zeros((2, 3)), written=np.zeros(2, dtype=bool), count=5)


# ---------------------------------------------------------------------------
# rmm_step
# ---------------------------------------------------------------------------


def test_rmm_step_write_then_reread_returns_stored_state():
    res = make_random_reservoir(8, 2, seed=3)
    rmm = make_rmm(res, n_slots=2)
    mem = Memory.empty(2, 8)
    x = np.array([0.4, -0.2])

    h1, a1, mem1 = rmm_step(rmm, x, res.initial_state, mem, forced_address=1)
    assert a1 == 1
    assert mem1.written.tolist() == [True, False]
    assert np.array_equal(mem1.slots[0], h1)

    h2, a2, mem2 = rmm_step(rmm, x, h1, mem1, forced_address=1)
    assert a2 == 1
    # Re-addressing a written slot replaces the state with the stored
    # copy, bit for bit, and leaves memory untouched.
    assert np.array_equal(h2, h1)
    assert np.array_equal(mem2.slots, mem1.slots)


def test_rmm_step_address_zero_passes_through():
    res = make_random_reservoir(8, 2, seed=3)
    rmm = make_rmm(res, n_slots=2)
    mem = Memory.empty(2, 8)
    h1, a1, mem1 = rmm_step(rmm, np.zeros(2), res.initial_state, mem, forced_address=0)
    assert a1 == 0
    assert mem1 is mem
    assert not mem1.written.any()


def test_rmm_step_uses_classifier_when_not_forced():
    res = make_random_reservoir(8, 2, seed=3)
    rmm = make_rmm(res, n_slots=2, label=2)
    mem = Memory.empty(2, 8)
    _, a, mem1 = rmm_step(rmm, np.zeros(2), res.initial_state, mem)
    assert a == 2
    assert mem1.written.tolist() == [False, True]


@pytest.mark.parametrize("bad", [-1, 3, 17])
def test_rmm_step_rejects_out_of_range_address(bad):
    res = make_random_reservoir(8, 2, seed=3)
    rmm = make_rmm(res, n_slots=2)
    with pytest.raises(InvalidArgumentError, match="address"):
        rmm_step(rmm, np.zeros(2), res.initial_state, Memory.empty(2, 8), forced_address=bad)


# ---------------------------------------------------------------------------
# rmm_run
# ---------------------------------------------------------------------------


def test_rmm_run_zero_classifier_equals_plain_reservoir_bitwise():
    res = make_random_reservoir(20, 3, seed=11)
    rmm = make_rmm(res, n_slots=2, label=0)
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(50, 3))
    trace = rmm_run(rmm, inputs)
    plain = run_reservoir(res, inputs)
    assert np.array_equal(trace.states, plain)
    assert np.array_equal(trace.pre_states, plain)
    assert not trace.addresses.any()
    assert not trace.memory.written.any()


def test_rmm_run_forced_matches_stepwise_loop():
    res = make_random_reservoir(12, 2, seed=5)
    rmm = make_rmm(res, n_slots=3)
    rng = np.random.default_rng(1)
    inputs = rng.normal(size=(9, 2))
    forced = np.array([0, 1, 0, 2, 1, 0, 3, 2, 0])

    trace = rmm_run(rmm, inputs, forced=forced)

    h = res.initial_state
    mem = Memory.empty(3, 12)
    for t in range(9):
        h, a, mem = rmm_step(rmm, inputs[t], h, mem, forced_address=int(forced[t]))
        assert a == forced[t]
        np.testing.assert_allclose(trace.states[t], h, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(trace.memory.slots, mem.slots, rtol=0.0, atol=1e-12)
    assert np.array_equal(trace.memory.written, mem.written)


def test_rmm_run_read_fidelity_is_bit_exact():
    res = make_random_reservoir(16, 2, seed=7)
    rmm = make_rmm(res, n_slots=2)
    rng = np.random.default_rng(2)
    inputs = rng.normal(size=(8, 2))
    forced = np.array([0, 1, 0, 0, 0, 1, 0, 2])
    trace = rmm_run(rmm, inputs, forced=forced)
    # Slot 1 written at step 1 (0-based), reread at step 5.
    assert np.array_equal(trace.states[5], trace.pre_states[1])
    # Never-erase: the slot still holds the step-1 state at the end.
    assert np.array_equal(trace.memory.slots[0], trace.pre_states[1])
    assert trace.memory.written.tolist() == [True, True]


def test_rmm_run_free_initial_state_seeds_memory():
    res = make_random_reservoir(10, 2, seed=9)
    rmm = make_rmm(res, n_slots=2, label=2)
    inputs = np.zeros((4, 2))
    trace = rmm_run(rmm, inputs)
    # The classifier maps h0 to address 2, so slot 2 holds h0 before the
    # first step and every later step rereads it.
    assert np.array_equal(trace.memory.slots[1], res.initial_state)
    assert np.all(trace.addresses == 2)
    for t in range(4):
        assert np.array_equal(trace.states[t], res.initial_state)


def test_rmm_run_forced_ignores_initial_state_rule():
    res = make_random_reservoir(10, 2, seed=9)
    rmm = make_rmm(res, n_slots=2, label=2)
    rng = np.random.default_rng(3)
    inputs = rng.normal(size=(6, 2))
    trace = rmm_run(rmm, inputs, forced=np.zeros(6, dtype=int))
    assert np.array_equal(trace.states, run_reservoir(res, inputs))
    assert not trace.memory.written.any()


def test_rmm_run_forced_initial_address_seeds_memory():
    res = make_random_reservoir(12, 2, seed=5)
    rmm = make_rmm(res, n_slots=2)
    rng = np.random.default_rng(8)
    inputs = rng.normal(size=(5, 2))
    forced = np.array([0, 0, 1, 0, 0])
    trace = rmm_run(rmm, inputs, forced=forced, initial_address=1)
    # Slot 1 holds h0 before the first step, so the forced read at step
    # 2 replays h0 bit-for-bit instead of writing a fresh anchor.
    assert np.array_equal(trace.memory.slots[0], res.initial_state)
    assert np.array_equal(trace.states[2], res.initial_state)
    # And the trajectory after the replay is re-based on h0.
    replay = run_reservoir(res, inputs[3:], initial_state=res.initial_state)
    assert np.array_equal(trace.states[3:], replay)


def test_rmm_run_rejects_bad_initial_address():
    res = make_random_reservoir(10, 2, seed=9)
    rmm = make_rmm(res, n_slots=2)
    inputs = np.zeros((3, 2))
    with pytest.raises(InvalidArgumentError):
        rmm_run(rmm, inputs, forced=np.zeros(3, dtype=int), initial_address=-1)
    with pytest.raises(InvalidArgumentError):
        rmm_run(rmm, inputs, forced=np.zeros(3, dtype=int), initial_address=3)


def test_rmm_run_validates_shapes():
    res = make_random_reservoir(10, 2, seed=9)
    rmm = make_rmm(res, n_slots=1)
    with pytest.raises(InvalidArgumentError):
        rmm_run(rmm, np.zeros((4, 3)))
    with pytest.raises(InvalidArgumentError):
        rmm_run(rmm, np.zeros((4, 2)), forced=np.zeros(3, dtype=int))
    with pytest.raises(InvalidArgumentError):
        rmm_run(rmm, np.zeros((4, 2)), forced=np.array([0, 0, 2, 0]))


def test_rmm_run_outputs_use_post_recall_states():
    res = make_random_reservoir(12, 2, seed=13)
    readout = RidgeReadout(
        weights=np.eye(12)[:3],
        intercept=np.zeros(3),
        ridge_lambda=0.0,
        gradient_norm=0.0,
    )
    rmm = Rmm(
        reservoir=res,
        readout=readout,
        address_classifier=constant_classifier(12, 0, 2),
        n_slots=1,
    )
    inputs = np.random.default_rng(4).normal(size=(5, 2))
    trace = rmm_run(rmm, inputs, forced=np.array([1, 0, 0, 1, 0]))
    np.testing.assert_array_equal(trace.outputs, trace.states[:, :3])


# ---------------------------------------------------------------------------
# Cycle consistency (reduction of realized address sequences)
# ---------------------------------------------------------------------------


def test_free_runs_reach_reduced_sequence_state_bitwise():
    """Deleting memory cycles from the input leaves the final state intact.

    For random reservoirs, random linear address classifiers, and random
    inputs, the final post-recall state of a free run is bit-identical to
    the final state of a free run on the cycle-reduced input sequence
    (with position 0 carrying the classifier's address for h0).
    """
    rng = np.random.default_rng(2024)
    n_neurons, n_inputs, n_slots, n_steps = 10, 2, 3, 20
    nontrivial = 0
    for trial in range(120):
        res = make_random_reservoir(
            n_neurons,
            n_inputs,
            spectral_radius_target=0.8,
            seed=int(rng.integers(1 << 31)),
        )
        classifier = LinearClassifier(
            classes=np.arange(n_slots + 1),
            weights=rng.normal(size=(n_slots + 1, n_neurons)),
            biases=rng.normal(size=n_slots + 1),
            hinge_c=1.0,
            train_accuracy=1.0,
        )
        rmm = Rmm(
            reservoir=res,
            readout=zero_readout(n_neurons, 1),
            address_classifier=classifier,
            n_slots=n_slots,
        )
        inputs = rng.normal(size=(n_steps, n_inputs))
        trace = rmm_run(rmm, inputs)
        a0 = int(classifier.predict(res.initial_state[None, :])[0])
        reduced = cycle_reduce(inputs, trace.addresses, a0=a0)
        if reduced.shape[0] < n_steps:
            nontrivial += 1
        if reduced.shape[0] == 0:
            final = res.initial_state
        else:
            final = rmm_run(rmm, reduced).states[-1]
        assert np.array_equal(trace.states[-1], final), f"trial {trial}"
    # The property must be exercised, not vacuous: most random
    # classifiers revisit addresses within 20 steps.
    assert nontrivial >= 100


# ---------------------------------------------------------------------------
# Constructive copy through explicit storage
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n_steps", [4, 7, 10])
def test_forced_address_schedule_solves_copy_exactly(n_steps):
    """Store each presentation state, replay it, read the current input.

    An LDN with ~2.5 coefficients per step, forced addresses
    1..T,1..T, and the delay-0 reconstruction as readout recovers a
    binary input sequence with per-symbol error below 0.5, hence
    exactly after thresholding.
    """
    n_channels = 3
    order = int(np.ceil(2.5 * n_steps))
    res = make_ldn_reservoir(order, n_channels, window=float(n_steps))
    bank = delay_operators(res, [0])
    readout = RidgeReadout(
        weights=bank.operators[0],
        intercept=np.zeros(n_channels),
        ridge_lambda=0.0,
        gradient_norm=0.0,
    )
    rmm = Rmm(
        reservoir=res,
        readout=readout,
        address_classifier=constant_classifier(res.n_neurons, 0, n_steps + 1),
        n_slots=n_steps,
    )
    rng = np.random.default_rng(17)
    bits = rng.integers(0, 2, size=(n_steps, n_channels)).astype(float)
    inputs = np.concatenate([bits, np.zeros((n_steps, n_channels))])
    schedule = np.concatenate([np.arange(1, n_steps + 1)] * 2)

    trace = rmm_run(rmm, inputs, forced=schedule)
    # The replay phase rereads the stored presentation states bit for bit.
    for t in range(n_steps):
        assert np.array_equal(trace.states[n_steps + t], trace.pre_states[t])
    recalled = trace.outputs[n_steps:]
    assert np.max(np.abs(recalled - bits)) < 0.5
    assert np.array_equal((recalled > 0.5).astype(float), bits)


# ---------------------------------------------------------------------------
# Associative stepping
# ---------------------------------------------------------------------------


def make_armm(res, n_slots: int, alpha=None, theta: float = 0.0) -> Armm:
    delays = [0, 1]
    bank = delay_operators(res, delays)
    if alpha is None:
        alpha = np.zeros((2, 2))
    metric = AssociationMetric(
        alpha=np.asarray(alpha, dtype=float),
        theta=theta,
        bank=bank,
        l1_weight=0.0,
        objective=0.0,
        duality_gap=0.0,
    )
    return Armm(
        reservoir=res,
        readout=zero_readout(res.n_neurons, 1),
        write_classifier=constant_classifier(res.n_neurons, 0, 2),
        metric=metric,
        n_slots=n_slots,
    )


def test_armm_step_forced_write_and_read():
    res = make_ldn_reservoir(6, 2, window=8.0)
    armm = make_armm(res, n_slots=3)
    rng = np.random.default_rng(5)
    xs = rng.normal(size=(5, 2))

    h = res.initial_state
    mem = Memory.empty(3, res.n_neurons)
    stored = []
    for t in range(2):
        h, wrote, read, mem = armm_step(armm, xs[t], h, mem, forced=(True, None))
        assert wrote and read is None
        stored.append(h.copy())
    assert mem.count == 2
    for t in (2, 3):
        h, wrote, read, mem = armm_step(armm, xs[t], h, mem, forced=(False, None))
        assert not wrote and read is None
    h, wrote, read, mem = armm_step(armm, xs[4], h, mem, forced=(False, 1))
    assert read == 1
    assert np.array_equal(h, stored[0])
    assert mem.count == 2


def test_armm_step_write_cursor_saturates():
    res = make_ldn_reservoir(4, 1, window=6.0)
    armm = make_armm(res, n_slots=2)
    h = res.initial_state
    mem = Memory.empty(2, res.n_neurons)
    counts = []
    for t in range(4):
        h, wrote, _, mem = armm_step(armm, np.array([0.3]), h, mem, forced=(True, None))
        assert wrote
        counts.append(mem.count)
    # The cursor is monotone and clamps at capacity; extra writes are
    # dropped rather than overwriting earlier slots.
    assert counts == [1, 2, 2, 2]


def test_armm_step_forced_read_of_unwritten_slot_rejected():
    res = make_ldn_reservoir(4, 1, window=6.0)
    armm = make_armm(res, n_slots=2)
    mem = Memory.empty(2, res.n_neurons)
    with pytest.raises(InvalidArgumentError, match="slot"):
        armm_step(armm, np.array([0.1]), res.initial_state, mem, forced=(False, 1))


def test_armm_step_metric_read_ties_to_lowest_slot():
    res = make_ldn_reservoir(4, 1, window=6.0)
    # Weight only the (0, 0) delay pair; generous threshold.
    armm = make_armm(res, n_slots=3, alpha=[[1.0, 0.0], [0.0, 0.0]], theta=100.0)
    h = res.initial_state
    mem = Memory.empty(3, res.n_neurons)
    h, _, _, mem = armm_step(armm, np.array([0.7]), h, mem, forced=(True, None))
    # Write the identical state again: slots 1 and 2 tie exactly.
    mem = mem.write(1, mem.slots[0])
    h2, wrote, read, _ = armm_step(armm, np.array([0.0]), h, mem)
    assert not wrote
    assert read == 1
    assert np.array_equal(h2, mem.slots[0])


def test_armm_step_no_read_when_memory_empty():
    res = make_ldn_reservoir(4, 1, window=6.0)
    armm = make_armm(res, n_slots=2, alpha=[[1.0, 0.0], [0.0, 0.0]], theta=1e9)
    h, wrote, read, mem = armm_step(
        armm, np.array([0.5]), res.initial_state, Memory.empty(2, res.n_neurons)
    )
    assert not wrote and read is None and mem.count == 0


def test_armm_step_threshold_blocks_distant_reads():
    res = make_ldn_reservoir(4, 1, window=6.0)
    armm = make_armm(res, n_slots=2, alpha=[[1.0, 0.0], [0.0, 0.0]], theta=1e-12)
    h = res.initial_state
    mem = Memory.empty(2, res.n_neurons)
    h, _, _, mem = armm_step(armm, np.array([0.9]), h, mem, forced=(True, None))
    h2, wrote, read, _ = armm_step(armm, np.array([-0.9]), h, mem)
    assert not wrote and read is None


def test_derive_forced_decisions_first_occurrence_rule():
    decisions = derive_forced_decisions(np.array([0, 1, 2, 1, 0, 2]))
    assert decisions == [
        (False, 0),
        (True, 0),
        (True, 0),
        (False, 1),
        (False, 0),
        (False, 2),
    ]
    with pytest.raises(InvalidArgumentError):
        derive_forced_decisions(np.array([0, -1]))


def test_armm_run_forced_matches_stepwise_loop():
    res = make_ldn_reservoir(6, 2, window=8.0)
    armm = make_armm(res, n_slots=2)
    rng = np.random.default_rng(8)
    inputs = rng.normal(size=(7, 2))
    teacher = np.array([0, 1, 0, 2, 0, 1, 2])
    trace = armm_run(armm, inputs, forced=teacher)

    h = res.initial_state
    mem = Memory.empty(2, res.n_neurons)
    for t, forced in enumerate(derive_forced_decisions(teacher)):
        write, read = forced
        h, wrote, read_slot, mem = armm_step(
            armm, inputs[t], h, mem, forced=(write, read)
        )
        assert trace.writes[t] == wrote
        assert trace.read_slots[t] == (0 if read_slot is None else read_slot)
        np.testing.assert_allclose(trace.states[t], h, rtol=0.0, atol=1e-12)
    assert trace.memory.count == mem.count


def test_armm_run_read_fidelity_is_bit_exact():
    res = make_ldn_reservoir(6, 2, window=8.0)
    armm = make_armm(res, n_slots=2)
    rng = np.random.default_rng(9)
    inputs = rng.normal(size=(6, 2))
    teacher = np.array([1, 2, 0, 1, 0, 2])
    trace = armm_run(armm, inputs, forced=teacher)
    assert np.array_equal(trace.states[3], trace.pre_states[0])
    assert np.array_equal(trace.states[5], trace.pre_states[1])
    assert trace.memory.count == 2


# ---------------------------------------------------------------------------
# Training: plain reservoir baseline
# ---------------------------------------------------------------------------


def sine_episodes(res, n_episodes: int, n_steps: int, seed: int) -> list:
    """Inputs drive the reservoir; targets are a fixed lag-free map."""
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        phase = rng.uniform(0, 2 * np.pi)
        t = np.arange(n_steps)
        inputs = np.stack([np.sin(0.3 * t + phase), np.cos(0.3 * t + phase)], axis=1)
        outputs = inputs[:, :1] * 0.5
        episodes.append(
            Episode(
                inputs=inputs,
                addresses=np.zeros(n_steps, dtype=int),
                outputs=outputs,
            )
        )
    return episodes


def test_train_esn_fits_memoryless_target():
    res = make_random_reservoir(30, 2, seed=21)
    episodes = sine_episodes(res, 5, 40, seed=0)
    model = train_esn(res, episodes, ridge_lambda=1e-8)
    losses, mean = evaluate_rmse(model, episodes)
    assert len(losses) == 5
    assert mean == pytest.approx(np.mean(losses))
    assert mean < 0.05


def test_train_esn_rejects_empty_and_mismatched_episodes():
    res = make_random_reservoir(10, 2, seed=1)
    with pytest.raises(InvalidArgumentError):
        train_esn(res, [], ridge_lambda=1e-6)
    bad = Episode(
        inputs=np.zeros((4, 3)),
        addresses=np.zeros(4, dtype=int),
        outputs=np.zeros((4, 1)),
    )
    with pytest.raises(InvalidArgumentError):
        train_esn(res, [bad], ridge_lambda=1e-6)


def test_evaluate_rmse_closed_form():
    res = make_random_reservoir(6, 1, seed=2)
    model = EsnBaseline(reservoir=res, readout=zero_readout(6, 1))
    episode = Episode(
        inputs=np.zeros((2, 1)),
        addresses=np.zeros(2, dtype=int),
        outputs=np.array([[0.3], [-0.4]]),
    )
    losses, mean = evaluate_rmse(model, [episode, episode])
    expected = np.sqrt((0.3**2 + 0.4**2) / 2.0)
    assert losses == pytest.approx([expected, expected])
    assert mean == pytest.approx(expected)
    with pytest.raises(InvalidArgumentError):
        evaluate_rmse(model, [])


# ---------------------------------------------------------------------------
# Training: memory machine
# ---------------------------------------------------------------------------


def latch_episodes(n_episodes: int, n_steps_range, seed: int) -> list:
    """Store a cue under a marker, then hold it while the marker is up.

    Channel 0 carries a cue value at step 0; channel 1 raises a marker
    at the store step and during the whole recall phase. The teacher
    stores at step 0 and rereads slot 1 at every marked recall step, so
    the post-recall state is pinned at the stored one. The target is the
    cue wherever that state appears (including the write step itself,
    since a write passes the state through) and zero elsewhere.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        n_steps = int(rng.integers(*n_steps_range))
        recall = int(rng.integers(4, n_steps - 1))
        cue = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0))
        inputs = np.zeros((n_steps, 2))
        inputs[0, 0] = cue
        inputs[0, 1] = 1.0
        inputs[recall:, 1] = 1.0
        addresses = np.zeros(n_steps, dtype=int)
        addresses[0] = 1
        addresses[recall:] = 1
        outputs = np.zeros((n_steps, 1))
        outputs[0, 0] = cue
        outputs[recall:, 0] = cue
        episodes.append(Episode(inputs=inputs, addresses=addresses, outputs=outputs))
    return episodes


def test_train_rmm_learns_store_recall_task():
    res = make_random_reservoir(50, 2, spectral_radius_target=0.8, seed=33)
    train = latch_episodes(30, (8, 14), seed=10)
    test = latch_episodes(10, (8, 14), seed=11)
    model = train_rmm(res, train, ridge_lambda=1e-8, hinge_c=100.0)
    assert model.n_slots == 1
    assert model.address_classifier.train_accuracy == 1.0
    _, mean = evaluate_rmse(model, test)
    assert mean < 0.05
    # The trained machine actually recalls: free-run addresses match the
    # teacher on a fresh episode.
    ep = test[0]
    trace = rmm_run(model, ep.inputs)
    assert np.array_equal(trace.addresses, ep.addresses)


def test_train_rmm_initial_state_gets_address_zero():
    res = make_random_reservoir(50, 2, spectral_radius_target=0.8, seed=33)
    model = train_rmm(res, latch_episodes(20, (8, 12), seed=12), 1e-8, 100.0)
    a0 = int(model.address_classifier.predict(res.initial_state[None, :])[0])
    assert a0 == 0


def anchor_episodes(n_episodes: int, seed: int) -> list:
    """Episodes whose only anchor is h0 itself (initial address 1).

    No step ever writes: slot 1 is pre-filled with h0, and the marked
    recall steps reread it. The target is 1 exactly on those steps.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        n_steps = int(rng.integers(8, 14))
        recall = int(rng.integers(3, n_steps - 1))
        inputs = np.zeros((n_steps, 2))
        # One-sided drive keeps the noise states off the h0 anchor (the
        # zero vector); symmetric noise would put h0 inside their hull.
        inputs[:, 0] = rng.uniform(0.5, 1.5, size=n_steps)
        inputs[recall:, 1] = 1.0
        addresses = np.zeros(n_steps, dtype=int)
        addresses[recall:] = 1
        outputs = np.zeros((n_steps, 1))
        outputs[recall:, 0] = 1.0
        episodes.append(
            Episode(
                inputs=inputs,
                addresses=addresses,
                outputs=outputs,
                initial_address=1,
            )
        )
    return episodes


def test_train_rmm_episode_initial_address_anchors_h0():
    res = make_random_reservoir(40, 2, spectral_radius_target=0.8, seed=17)
    model = train_rmm(res, anchor_episodes(20, seed=3), 1e-8, 100.0)
    assert model.n_slots == 1
    assert model.address_classifier.train_accuracy == 1.0
    # The classifier anchors h0 at the declared initial address ...
    a0 = int(model.address_classifier.predict(res.initial_state[None, :])[0])
    assert a0 == 1
    # ... so a free run replays h0 bit-exactly at every recall step.
    ep = anchor_episodes(1, seed=99)[0]
    trace = rmm_run(model, ep.inputs)
    assert np.array_equal(trace.addresses, ep.addresses)
    for t in np.flatnonzero(ep.addresses == 1):
        assert np.array_equal(trace.states[t], res.initial_state)


def test_episode_rejects_negative_initial_address():
    with pytest.raises(InvalidArgumentError):
        Episode(
            inputs=np.zeros((3, 1)),
            addresses=np.zeros(3, dtype=int),
            outputs=np.zeros((3, 1)),
            initial_address=-1,
        )


def test_train_armm_rejects_initial_address():
    res = make_ldn_reservoir(8, 2, window=6.0)
    episodes = anchor_episodes(4, seed=5)
    with pytest.raises(InvalidArgumentError):
        train_armm(res, episodes, ridge_lambda=1e-8, hinge_c=1.0)


def test_train_rmm_all_zero_addresses_reduces_to_esn():
    res = make_random_reservoir(30, 2, seed=21)
    episodes = sine_episodes(res, 4, 30, seed=3)
    rmm_model = train_rmm(res, episodes, ridge_lambda=1e-8, hinge_c=10.0)
    esn_model = train_esn(res, episodes, ridge_lambda=1e-8)
    assert rmm_model.n_slots == 0
    assert rmm_model.address_classifier.classes.tolist() == [0]
    fresh = sine_episodes(res, 2, 30, seed=4)[0]
    np.testing.assert_allclose(
        predict_episode(rmm_model, fresh.inputs),
        predict_episode(esn_model, fresh.inputs),
        rtol=0.0,
        atol=1e-12,
    )


def test_train_rmm_rejects_empty_episode_list():
    res = make_random_reservoir(10, 2, seed=1)
    with pytest.raises(InvalidArgumentError):
        train_rmm(res, [], ridge_lambda=1e-6, hinge_c=1.0)


def test_forced_batch_runner_matches_rmm_run():
    res = make_random_reservoir(14, 2, seed=41)
    rng = np.random.default_rng(14)
    episodes = []
    for n_steps in (5, 9, 7):
        inputs = rng.normal(size=(n_steps, 2))
        addresses = rng.integers(0, 3, size=n_steps)
        episodes.append(
            Episode(
                inputs=inputs,
                addresses=addresses,
                outputs=np.zeros((n_steps, 1)),
            )
        )
    padded = np.zeros((3, 9, 2))
    addr = np.zeros((3, 9), dtype=int)
    for b, ep in enumerate(episodes):
        padded[b, : ep.length] = ep.inputs
        addr[b, : ep.length] = ep.addresses
    pre, post = _forced_rmm_states(res, padded, addr, 2)
    rmm = make_rmm(res, n_slots=2)
    for b, ep in enumerate(episodes):
        trace = rmm_run(rmm, ep.inputs, forced=ep.addresses)
        np.testing.assert_allclose(
            pre[b, : ep.length], trace.pre_states, rtol=0.0, atol=1e-12
        )
        np.testing.assert_allclose(
            post[b, : ep.length], trace.states, rtol=0.0, atol=1e-12
        )


def test_predict_batch_matches_single_episode_runs():
    res = make_random_reservoir(50, 2, spectral_radius_target=0.8, seed=33)
    train = latch_episodes(20, (8, 14), seed=20)
    model = train_rmm(res, train, ridge_lambda=1e-8, hinge_c=100.0)
    fresh = latch_episodes(4, (8, 14), seed=21)
    batched = predict_batch(model, [ep.inputs for ep in fresh])
    for ep, out in zip(fresh, batched):
        single = rmm_run(model, ep.inputs).outputs
        np.testing.assert_allclose(out, single, rtol=0.0, atol=1e-10)


# ---------------------------------------------------------------------------
# Training: associative memory machine
# ---------------------------------------------------------------------------


def key_recall_episodes(n_episodes: int, seed: int) -> list:
    """Present a key, idle, replay the key; recall must reproduce it.

    The key is a positive level on channel 0 for one step. The same
    level reappears at step 4, and the teacher marks the first step as
    a write and the reappearance as a read of slot 1. Reading replaces
    the state with the stored one, so the target at the read step must
    match the target at the write step (the key in both cases); every
    other step targets zero.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        key = float(rng.uniform(0.4, 1.2))
        inputs = np.zeros((7, 1))
        inputs[0, 0] = key
        inputs[4, 0] = key
        addresses = np.array([1, 0, 0, 0, 1, 0, 0])
        outputs = np.zeros((7, 1))
        outputs[0, 0] = key
        outputs[4, 0] = key
        episodes.append(Episode(inputs=inputs, addresses=addresses, outputs=outputs))
    return episodes


def test_train_armm_learns_key_recall():
    res = make_ldn_reservoir(10, 1, window=4.0)
    train = key_recall_episodes(25, seed=30)
    test = key_recall_episodes(8, seed=31)
    model = train_armm(res, train, ridge_lambda=1e-8, hinge_c=100.0)
    assert model.n_slots == 1
    assert model.metric.duality_gap <= 1e-6
    _, mean = evaluate_rmse(model, test)
    assert mean < 0.1
    trace = armm_run(model, test[0].inputs)
    assert trace.writes.tolist() == [True, False, False, False, False, False, False]
    assert trace.read_slots.tolist() == [0, 0, 0, 0, 1, 0, 0]


def test_train_armm_requires_ldn():
    res = make_random_reservoir(10, 1, seed=5)
    with pytest.raises(UnsupportedReservoirError):
        train_armm(res, key_recall_episodes(3, seed=0), 1e-8, 1.0)


def test_train_armm_requires_read_events():
    res = make_ldn_reservoir(6, 1, window=4.0)
    rng = np.random.default_rng(6)
    episodes = [
        Episode(
            inputs=rng.normal(size=(5, 1)),
            addresses=np.array([1, 0, 2, 0, 0]),
            outputs=np.zeros((5, 1)),
        )
    ]
    with pytest.raises(MetricUndeterminedError):
        train_armm(res, episodes, 1e-8, 1.0)


def test_armm_predict_batch_matches_single_runs():
    res = make_ldn_reservoir(10, 1, window=4.0)
    model = train_armm(res, key_recall_episodes(25, seed=30), 1e-8, 100.0)
    fresh = key_recall_episodes(5, seed=32)
    batched = predict_batch(model, [ep.inputs for ep in fresh])
    for ep, out in zip(fresh, batched):
        single = armm_run(model, ep.inputs).outputs
        np.testing.assert_allclose(out, single, rtol=0.0, atol=1e-10)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def assert_reservoirs_equal(a, b):
    assert a.kind == b.kind and a.activation == b.activation
    assert np.array_equal(a.input_weights, b.input_weights)
    assert np.array_equal(a.recurrent_weights, b.recurrent_weights)
    assert np.array_equal(a.bias, b.bias)
    assert np.array_equal(a.initial_state, b.initial_state)
    assert (a.ldn_meta is None) == (b.ldn_meta is None)
    if a.ldn_meta is not None:
        assert a.ldn_meta == b.ldn_meta


def test_save_load_esn_round_trip(tmp_path):
    res = make_random_reservoir(12, 2, seed=50)
    model = train_esn(res, sine_episodes(res, 3, 20, seed=7), 1e-6)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert isinstance(loaded, EsnBaseline)
    assert_reservoirs_equal(model.reservoir, loaded.reservoir)
    assert np.array_equal(model.readout.weights, loaded.readout.weights)
    assert np.array_equal(model.readout.intercept, loaded.readout.intercept)
    assert model.readout.ridge_lambda == loaded.readout.ridge_lambda
    assert model.readout.gradient_norm == loaded.readout.gradient_norm


def test_save_load_rmm_round_trip_predicts_identically(tmp_path):
    res = make_random_reservoir(50, 2, spectral_radius_target=0.8, seed=33)
    model = train_rmm(res, latch_episodes(20, (8, 12), seed=40), 1e-8, 100.0)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert isinstance(loaded, Rmm)
    assert loaded.n_slots == model.n_slots
    clf, clf2 = model.address_classifier, loaded.address_classifier
    assert np.array_equal(clf.classes, clf2.classes)
    assert np.array_equal(clf.weights, clf2.weights)
    assert np.array_equal(clf.biases, clf2.biases)
    ep = latch_episodes(1, (8, 12), seed=41)[0]
    np.testing.assert_array_equal(
        predict_episode(model, ep.inputs), predict_episode(loaded, ep.inputs)
    )


def test_save_load_armm_round_trip(tmp_path):
    res = make_ldn_reservoir(10, 1, window=4.0)
    model = train_armm(res, key_recall_episodes(25, seed=30), 1e-8, 100.0)
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert isinstance(loaded, Armm)
    assert np.array_equal(model.metric.alpha, loaded.metric.alpha)
    assert model.metric.theta == loaded.metric.theta
    assert model.metric.l1_weight == loaded.metric.l1_weight
    assert model.metric.objective == loaded.metric.objective
    assert model.metric.duality_gap == loaded.metric.duality_gap
    assert loaded.metric.bank.delays == model.metric.bank.delays
    assert np.array_equal(loaded.metric.bank.operators, model.metric.bank.operators)
    ep = key_recall_episodes(1, seed=33)[0]
    np.testing.assert_array_equal(
        predict_episode(model, ep.inputs), predict_episode(loaded, ep.inputs)
    )


def test_load_model_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.npz"
    meta = '{"format_version": "999", "kind": "esn"}'
    np.savez(path, meta_json=np.frombuffer(meta.encode(), dtype=np.uint8))
    with pytest.raises(FormatError, match="version"):
        load_model(path)


def test_load_model_rejects_missing_metadata(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, stray=np.zeros(3))
    with pytest.raises(FormatError):
        load_model(path)
