import numpy as np
import pytest

from src.replay import ReplayBuffer, TransitionRecord


def _push_episode(buf, length, start_value=0.0, terminal=False):
    """`length` transitions whose observations count up from start_value; the last one ends the episode."""
    for t in range(length):
        v = start_value + t
        buf.push(TransitionRecord(
            obs=np.array([v, -v]),
            action=np.array([v / 100.0]),
            reward=v,
            next_obs=np.array([v + 1, -(v + 1)]),
            done=t == length - 1,
            terminal=terminal and t == length - 1,
        ))


def _buffer(capacity=100, seed=0):
    return ReplayBuffer(2, 1, capacity=capacity, rng=np.random.default_rng(seed), dtype=np.float64)


def test_capacity_and_fifo_eviction():
    buf = _buffer(capacity=5)
    for v in range(6):
        buf.push(TransitionRecord(np.array([v, v]), np.array([0.0]), v, np.array([v, v]), False))
    assert len(buf) == 5
    assert buf.record(0).reward == 1.0
    assert buf.record(4).reward == 5.0


def test_record_round_trips_bit_exactly(rng):
    buf = _buffer()
    tr = TransitionRecord(rng.normal(size=2), rng.uniform(-1, 1, size=1), float(rng.normal()), rng.normal(size=2), True, True)
    buf.push(tr)
    out = buf.record(0)
    assert out.obs.tobytes() == tr.obs.tobytes()
    assert out.action.tobytes() == tr.action.tobytes()
    assert out.next_obs.tobytes() == tr.next_obs.tobytes()
    assert out.reward == tr.reward
    assert out.done and out.terminal


def test_push_rejects_wrong_widths():
    buf = _buffer()
    with pytest.raises(ValueError):
        buf.push(TransitionRecord(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), False))
    with pytest.raises(ValueError):
        buf.push(TransitionRecord(np.zeros(2), np.zeros(2), 0.0, np.zeros(2), False))


def test_valid_starts_inside_one_episode():
    buf = _buffer()
    _push_episode(buf, 9)  # ten observations
    np.testing.assert_array_equal(buf.valid_starts(6), [0, 1, 2, 3, 4])
    for _ in range(20):
        assert set(buf.sample_segments(5, 6).starts) <= {0, 1, 2, 3, 4}
    assert buf.sample_segments(6, 6) is None


def test_segments_never_cross_an_episode_boundary():
    buf = _buffer()
    _push_episode(buf, 7, start_value=0.0)
    _push_episode(buf, 8, start_value=100.0)
    span = 4
    expected = [t for t in range(15) if (t + span - 2 < 7) == (t < 7) and t + span - 2 < 15]
    np.testing.assert_array_equal(buf.valid_starts(span), expected)

    batch = buf.sample_segments(len(expected), span)
    obs = batch.observations[:, :, 0]
    # observations inside a window count up by one
    np.testing.assert_array_equal(np.diff(obs, axis=1), 1.0)
    np.testing.assert_allclose(batch.actions[:, :, 0] * 100.0, obs[:, :-1])
    np.testing.assert_array_equal(batch.rewards, obs[:, :-1])


def test_only_the_final_transition_can_be_terminal():
    buf = _buffer()
    for _ in range(5):
        _push_episode(buf, 6, terminal=True)
    batch = buf.sample_segments(20, 4)
    assert not batch.terminals[:, :-1].any()


def test_sampling_is_reproducible():
    a, b = _buffer(seed=3), _buffer(seed=3)
    for buf in (a, b):
        _push_episode(buf, 30)
    x, y = a.sample_segments(16, 5), b.sample_segments(16, 5)
    np.testing.assert_array_equal(x.starts, y.starts)
    np.testing.assert_array_equal(x.observations, y.observations)


def test_not_ready_returns_none():
    buf = _buffer()
    _push_episode(buf, 4)
    assert buf.sample_segments(8, 6) is None
    assert buf.sample_segments(2, 4) is not None


def test_starts_are_uniform():
    buf = _buffer(seed=11)
    _push_episode(buf, 24)
    span = 5
    n_valid = len(buf.valid_starts(span))
    starts = np.concatenate([buf.sample_segments(n_valid, span).starts for _ in range(2000)])
    draws = len(starts)
    counts = np.bincount(starts, minlength=n_valid)
    p = 1.0 / n_valid
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 3 * sigma)


def test_wrapped_buffer_keeps_chronology():
    buf = _buffer(capacity=10)
    _push_episode(buf, 6, start_value=0.0)
    _push_episode(buf, 8, start_value=50.0)
    # the first four transitions are gone; windows still follow time order
    batch = buf.sample_segments(8, 3)
    np.testing.assert_array_equal(np.diff(batch.observations[:, :, 0], axis=1), 1.0)


def test_state_arrays_restore_sampling():
    buf = _buffer(capacity=10, seed=5)
    _push_episode(buf, 6)
    _push_episode(buf, 7, start_value=20.0)
    copy = _buffer(capacity=10, seed=5)
    copy.load_state_arrays(buf.state_arrays())
    assert len(copy) == len(buf)
    x, y = buf.sample_segments(8, 3), copy.sample_segments(8, 3)
    np.testing.assert_array_equal(x.observations, y.observations)


def test_capacity_mismatch_on_restore():
    buf = _buffer(capacity=10)
    _push_episode(buf, 3)
    with pytest.raises(ValueError):
        _buffer(capacity=20).load_state_arrays(buf.state_arrays())


def test_sample_observations_uses_callers_generator():
    buf = _buffer()
    _push_episode(buf, 12)
    a = buf.sample_observations(5, np.random.default_rng(1))
    b = buf.sample_observations(5, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (5, 2)
