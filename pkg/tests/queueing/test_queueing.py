import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exceptions import ContractError
from models import ArrivalModel, QueueState
from queueing import (
    FifoDelayTracker,
    fifo_delay_tracker,
    frame_boundary,
    queue_update,
    sample_arrival,
    sample_arrivals,
)


class TestQueueUpdate:
    def test_served_slot(self):
        state = queue_update(QueueState(10.0, 0, 20), rate=100.0, error=0, dt=0.005)
        assert state.backlog == pytest.approx(9.5)
        assert state.slot_index == 1
        assert state.last_served == pytest.approx(0.5)

    def test_packet_error_serves_nothing(self):
        state = queue_update(QueueState(10.0, 0, 20), rate=100.0, error=1, dt=0.005)
        assert state.backlog == 10.0
        assert state.last_served == 0.0

    def test_backlog_never_negative(self):
        state = queue_update(QueueState(0.2, 3, 20), rate=1000.0, error=0, dt=0.005)
        assert state.backlog == 0.0
        assert state.last_served == pytest.approx(0.2)

    def test_arrival_enters_at_frame_boundary(self):
        state = queue_update(QueueState(1.0, 19, 20), rate=0.0, error=0, dt=0.005, arrival=5.0)
        assert state.backlog == 6.0
        assert state.at_frame_boundary

    def test_missing_arrival_at_boundary(self):
        with pytest.raises(ContractError, match="needs an arrival"):
            queue_update(QueueState(1.0, 19, 20), rate=0.0, error=0, dt=0.005)

    def test_arrival_off_boundary(self):
        with pytest.raises(ContractError, match="not a frame boundary"):
            queue_update(QueueState(1.0, 3, 20), rate=0.0, error=0, dt=0.005, arrival=5.0)

    def test_bad_inputs(self):
        with pytest.raises(ContractError):
            queue_update(QueueState(1.0, 0, 20), rate=-1.0, error=0, dt=0.005)
        with pytest.raises(ContractError):
            queue_update(QueueState(1.0, 0, 20), rate=1.0, error=2, dt=0.005)
        with pytest.raises(ContractError):
            QueueState(-1.0, 0, 20)

    @given(
        st.lists(
            st.tuples(st.floats(0.0, 500.0), st.integers(0, 1), st.floats(0.0, 50.0)),
            min_size=1,
            max_size=60,
        ),
        st.floats(0.0, 100.0),
    )
    def test_sample_path_conservation(self, slots, start):
        # U(K) = U(0) + arrivals - served over any horizon
        state = QueueState(start, 0, 4)
        arrived = served = 0.0
        for rate, error, burst in slots:
            arrival = burst if frame_boundary(state.slot_index + 1, 4) else None
            state = queue_update(state, rate, error, 0.01, arrival)
            arrived += arrival or 0.0
            served += state.last_served
            assert state.backlog >= 0.0
        assert state.backlog == pytest.approx(start + arrived - served, abs=1e-9)


def test_frame_boundary():
    assert frame_boundary(0, 20)
    assert frame_boundary(40, 20)
    assert not frame_boundary(21, 20)


class TestArrivals:
    def test_deterministic(self, rng):
        model = ArrivalModel.deterministic(20.0)
        assert sample_arrival(model, rng) == 20.0
        assert model.mean_per_frame == 20.0
        assert model.max_per_frame == 20.0
        np.testing.assert_array_equal(sample_arrivals(model, rng, 3), [20.0, 20.0, 20.0])

    def test_two_point_table(self, rng):
        model = ArrivalModel.table([10.0, 30.0], [0.25, 0.75])
        assert model.mean_per_frame == pytest.approx(25.0)
        assert model.max_per_frame == 30.0
        draws = sample_arrivals(model, rng, 40_000)
        assert set(np.unique(draws)) == {10.0, 30.0}
        assert draws.mean() == pytest.approx(25.0, rel=0.01)

    def test_table_must_be_a_distribution(self):
        with pytest.raises(ContractError):
            ArrivalModel.table([10.0, 30.0], [0.5, 0.6])
        with pytest.raises(ContractError):
            ArrivalModel.table([10.0], [0.5, 0.5])
        with pytest.raises(ContractError):
            ArrivalModel("deterministic", (1.0, 2.0), (0.5, 0.5))

    def test_max_ignores_impossible_atoms(self):
        model = ArrivalModel.table([10.0, 99.0], [1.0, 0.0])
        assert model.max_per_frame == 10.0


class TestFifoDelay:
    def test_single_burst(self):
        tracker = fifo_delay_tracker()
        tracker.arrive(4.0, 0.0)
        for k in range(4):
            tracker.serve(1.0, (k + 1) * 0.01)
        # nats leave after 1, 2, 3 and 4 slots
        assert tracker.average_delay == pytest.approx(0.025)
        assert tracker.backlog == pytest.approx(0.0)

    def test_first_in_first_out(self):
        tracker = FifoDelayTracker()
        tracker.arrive(1.0, 0.0)
        tracker.arrive(1.0, 1.0)
        tracker.serve(1.0, 2.0)
        assert tracker.average_delay == pytest.approx(2.0)
        assert tracker.backlog == pytest.approx(1.0)

    def test_warmup_arrivals_are_not_recorded(self):
        tracker = FifoDelayTracker(record_after=1.0)
        tracker.arrive(1.0, 0.5)
        tracker.serve(1.0, 2.0)
        assert tracker.average_delay is None
