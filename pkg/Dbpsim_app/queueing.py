"""Slot/frame timeline, bursty arrivals and the fluid queue recursion.

Bursts arrive at frame boundaries. A burst arriving at time m*T is added by
the update that enters slot m*T/dt, so it is in the backlog the scheduler
sees in that slot.
"""

import logging
from collections import deque

import numpy as np

from exceptions import ContractError
from models import ArrivalModel, QueueState

logger = logging.getLogger(__name__)


def frame_boundary(slot_index, slots_per_frame):
    return slot_index % slots_per_frame == 0


def queue_update(state: QueueState, rate, error, dt, arrival=None):
    """U(k+1) = [U(k) - r(1-e) dt]^+ + B 1(slot k+1 starts a frame).

    The returned state's ``last_served`` is min(U, r(1-e) dt).
    """
    if rate < 0:
        raise ContractError(f"rate must be >= 0, got {rate}")
    if error not in (0, 1):
        raise ContractError(f"error indicator must be 0 or 1, got {error}")
    next_slot = state.slot_index + 1
    boundary = frame_boundary(next_slot, state.slots_per_frame)
    if boundary and arrival is None:
        raise ContractError(f"slot {next_slot} starts a frame and needs an arrival")
    if not boundary and arrival is not None:
        raise ContractError(f"arrival supplied for slot {next_slot}, which is not a frame boundary")
    if arrival is not None and arrival < 0:
        raise ContractError("arrival must be >= 0")

    served = min(state.backlog, rate * (1 - error) * dt)
    backlog = state.backlog - served
    if arrival is not None:
        backlog += arrival
    return QueueState(
        backlog=backlog,
        slot_index=next_slot,
        slots_per_frame=state.slots_per_frame,
        last_served=served,
    )


def sample_arrival(model: ArrivalModel, rng):
    if model.kind == "deterministic":
        return model.values[0]
    return float(rng.choice(model.values, p=model.probabilities))


def sample_arrivals(model: ArrivalModel, rng, size):
    if model.kind == "deterministic":
        return np.full(size, model.values[0])
    return rng.choice(np.asarray(model.values), size=size, p=np.asarray(model.probabilities))


class FifoDelayTracker:
    """Tags every burst with its arrival time and serves nats first-in first-out.

    The average sojourn of served nats is a cross-check of the Little's-law
    delay; the two agree for FIFO fluid service.
    """

    def __init__(self, record_after=0.0):
        self.record_after = record_after
        self._queue = deque()  # [arrival_time, nats left]
        self.served_nats = 0.0
        self.weighted_sojourn = 0.0

    def arrive(self, amount, time):
        if amount > 0:
            self._queue.append([time, amount])

    def serve(self, amount, time):
        """Remove ``amount`` nats departing at ``time``."""
        while amount > 1e-12 and self._queue:
            head = self._queue[0]
            taken = min(amount, head[1])
            if head[0] >= self.record_after:
                self.served_nats += taken
                self.weighted_sojourn += taken * (time - head[0])
            head[1] -= taken
            amount -= taken
            if head[1] <= 1e-12:
                self._queue.popleft()

    @property
    def backlog(self):
        return sum(part[1] for part in self._queue)

    @property
    def average_delay(self):
        if self.served_nats == 0:
            return None
        return self.weighted_sojourn / self.served_nats


def fifo_delay_tracker(record_after=0.0):
    return FifoDelayTracker(record_after)
