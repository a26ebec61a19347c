# This file defines the data records passed between the modules.
# Each class is a small, mostly immutable container; the behaviour lives in
# the module that owns the concept (channel, phy, queueing, policies, vcts).

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from exceptions import ContractError, DomainError

PROBABILITY_TOLERANCE = 1e-12


# NcChiSqParams - law of the normalized received energy on the independent subcarriers
@dataclass(frozen=True)
class NcChiSqParams:
    half_dof: int            # N_d, the law has 2*N_d degrees of freedom
    noncentrality: float     # s^2, mean CSIT energy over the independent subcarriers
    error_variance: float    # sigma_e^2, per-subcarrier CSIT error variance

    def __post_init__(self):
        if int(self.half_dof) != self.half_dof or self.half_dof < 1:
            raise DomainError(f"half_dof must be a positive integer, got {self.half_dof}")
        if not self.noncentrality >= 0:
            raise DomainError(f"noncentrality must be >= 0, got {self.noncentrality}")
        if not self.error_variance > 0:
            raise DomainError(f"error_variance must be > 0, got {self.error_variance}")

    @property
    def mean(self):
        return self.noncentrality + self.error_variance

    @property
    def variance(self):
        s2, e2 = self.noncentrality, self.error_variance
        return (e2 * e2 + 2.0 * e2 * s2) / self.half_dof


# PowerDelayProfile - variances of the time-domain channel taps
@dataclass(frozen=True)
class PowerDelayProfile:
    tap_variances: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tap_variances", tuple(float(v) for v in self.tap_variances))
        if not self.tap_variances:
            raise ContractError("power-delay profile needs at least one tap")
        if any(v < 0 for v in self.tap_variances):
            raise ContractError("tap variances must be nonnegative")

    @classmethod
    def uniform(cls, n_taps, total_power=1.0):
        return cls(tuple([total_power / n_taps] * n_taps))

    @property
    def n_taps(self):
        return len(self.tap_variances)

    @property
    def total_power(self):
        return math.fsum(self.tap_variances)


# CsitErrorModel - per-tap variances of the CSIT error
@dataclass(frozen=True)
class CsitErrorModel:
    per_tap_error_variance: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "per_tap_error_variance", tuple(float(v) for v in self.per_tap_error_variance)
        )
        if any(v < 0 for v in self.per_tap_error_variance):
            raise ContractError("CSIT error variances must be nonnegative")

    @classmethod
    def uniform(cls, sigma_e2, n_taps):
        """Split an aggregate sigma_e^2 evenly across the taps."""
        return cls(tuple([sigma_e2 / n_taps] * n_taps))

    @property
    def sigma_e2(self):
        return math.fsum(self.per_tap_error_variance)

    @property
    def n_taps(self):
        return len(self.per_tap_error_variance)


# ChannelDraw - one slot's channel: true taps/spectrum and the CSIT spectrum
@dataclass
class ChannelDraw:
    taps: np.ndarray                          # h_l, true time-domain taps
    freq_true: np.ndarray                     # H_n, length n_F
    freq_csit: Optional[np.ndarray] = None    # \hat H_n, length n_F
    csit_taps: Optional[np.ndarray] = None    # \hat h_l, kept when known

    @property
    def n_fft(self):
        return len(self.freq_true)


# LinkState - what the scheduler observes at the start of a slot
@dataclass(frozen=True)
class LinkState:
    backlog: float           # U, nats
    csit: np.ndarray         # \hat H


# PhyParams - physical-layer constants of the link
@dataclass(frozen=True)
class PhyParams:
    n_fft: int               # n_F
    target_per: float        # epsilon
    sigma_e2: float          # aggregate CSIT error variance
    circuit_power: float     # P_cct, linear
    n_taps: int              # N_d

    def __post_init__(self):
        if not 0.0 < self.target_per < 1.0:
            raise ContractError(f"target_per must lie in (0,1), got {self.target_per}")
        if self.circuit_power < 0:
            raise ContractError("circuit_power must be >= 0")

    @property
    def noise_variance(self):
        # total noise power across the n_F subcarriers is unity
        return 1.0 / self.n_fft


# ArrivalModel - bursty source, one burst per frame
@dataclass(frozen=True)
class ArrivalModel:
    kind: str                               # "deterministic" or "iid"
    values: Tuple[float, ...]               # atoms, nats per frame
    probabilities: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if self.kind not in ("deterministic", "iid"):
            raise ContractError(f"unknown arrival kind {self.kind!r}")
        if len(self.values) != len(self.probabilities) or not self.values:
            raise ContractError("arrival table needs matching, nonempty values and probabilities")
        if self.kind == "deterministic" and len(self.values) != 1:
            raise ContractError("deterministic arrivals have a single atom")
        if any(v < 0 for v in self.values):
            raise ContractError("arrival values must be nonnegative")
        if any(p < 0 for p in self.probabilities):
            raise ContractError("arrival probabilities must be nonnegative")
        if abs(math.fsum(self.probabilities) - 1.0) > PROBABILITY_TOLERANCE:
            raise ContractError("arrival probabilities must sum to 1")

    @classmethod
    def deterministic(cls, burst):
        return cls("deterministic", (burst,), (1.0,))

    @classmethod
    def table(cls, values: Sequence[float], probabilities: Sequence[float]):
        return cls("iid", tuple(values), tuple(probabilities))

    @property
    def mean_per_frame(self):
        return math.fsum(v * p for v, p in zip(self.values, self.probabilities))

    @property
    def max_per_frame(self):
        return max(v for v, p in zip(self.values, self.probabilities) if p > 0)


# QueueState - backlog and position on the slot/frame timeline
@dataclass(frozen=True)
class QueueState:
    backlog: float
    slot_index: int
    slots_per_frame: int
    last_served: float = 0.0

    def __post_init__(self):
        if self.backlog < 0:
            raise ContractError(f"backlog must be >= 0, got {self.backlog}")
        if self.slots_per_frame < 1:
            raise ContractError("slots_per_frame must be >= 1")

    @property
    def at_frame_boundary(self):
        return self.slot_index % self.slots_per_frame == 0


# PolicyConfig - which controller runs and with what knobs
@dataclass(frozen=True)
class PolicyConfig:
    kind: str                               # "dbp", "csit-only" or "no-csit"
    tradeoff_v: Optional[float] = None      # V, dbp and csit-only
    fixed_rate: Optional[float] = None      # nats/s, no-csit
    fixed_power: Optional[float] = None     # linear transmit power, no-csit

    KINDS = ("dbp", "csit-only", "no-csit")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractError(f"unknown policy kind {self.kind!r}")
        if self.kind in ("dbp", "csit-only"):
            if self.tradeoff_v is None or not self.tradeoff_v > 0:
                raise ContractError(f"{self.kind} needs tradeoff_v > 0")
            if self.fixed_rate is not None or self.fixed_power is not None:
                raise ContractError(f"{self.kind} takes no fixed rate/power")
        else:
            if self.fixed_rate is None or self.fixed_power is None:
                raise ContractError("no-csit needs fixed_rate and fixed_power")
            if self.fixed_rate < 0 or self.fixed_power < 0:
                raise ContractError("no-csit rate and power must be >= 0")
            if self.tradeoff_v is not None:
                raise ContractError("no-csit takes no tradeoff_v")

    @property
    def sweep_param(self):
        return self.fixed_power if self.kind == "no-csit" else self.tradeoff_v


# ExpectationEstimate - Monte Carlo CSIT averages behind the analytical bounds
@dataclass(frozen=True)
class ExpectationEstimate:
    beta: float
    beta_prime: float
    mean_f: float
    beta_se: float
    beta_prime_se: float
    mean_f_se: float
    n_samples: int


# VctsParams - everything the analytical engine needs for one operating point
@dataclass(frozen=True)
class VctsParams:
    beta: float              # E[log((1-eps) f / V)]
    beta_prime: float        # E[(log((1-eps) f / V))^+]
    mean_f: float            # E[f]
    n_fft: int
    target_per: float
    tradeoff_v: float
    circuit_power: float
    frame_s: float
    dt_s: float
    beta_se: float = 0.0
    beta_prime_se: float = 0.0
    mean_f_se: float = 0.0
    l_delta_scale: float = 1.0
    quality_samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.beta_prime < self.beta:
            raise ContractError("beta_prime must be >= beta")
        if not self.mean_f > 0:
            raise ContractError("mean_f must be > 0")

    @property
    def drain_coefficient(self):
        # n_F (1 - eps), the slope of the VCTS drain in log-backlog
        return self.n_fft * (1.0 - self.target_per)

    @property
    def activation_level(self):
        # backlog below which the mean-rate drain stops
        return math.exp(-self.beta)

    @property
    def l_delta(self):
        return self.l_delta_scale * math.exp(-self.beta)

    @property
    def power_slope(self):
        # d g / d U on the active branch: n_F (1 - eps) / V
        return self.drain_coefficient / self.tradeoff_v


# VctsBounds - analytical results for one configuration
@dataclass(frozen=True)
class VctsBounds:
    beta: float
    beta_prime: float
    leftover_fixed_point: float  # L*
    ju_upper: float              # nats*s
    jg_lower: float              # power*s
    delay_upper: float           # s
    power_lower: float           # linear
    t_d: float                   # s, clipped to (0, T]
    t_p: float                   # s, clipped to (0, T]
    beta_se: float = 0.0
    beta_prime_se: float = 0.0
    delay_order: Optional[float] = None
    power_order: Optional[float] = None
    random_arrivals: bool = False
    regime_note: str = ""

    def as_dict(self):
        return {
            "beta": self.beta,
            "beta_se": self.beta_se,
            "beta_prime": self.beta_prime,
            "beta_prime_se": self.beta_prime_se,
            "leftover_fixed_point": self.leftover_fixed_point,
            "ju_upper": self.ju_upper,
            "jg_lower": self.jg_lower,
            "delay_upper_s": self.delay_upper,
            "power_lower": self.power_lower,
            "t_d_s": self.t_d,
            "t_p_s": self.t_p,
            "delay_order": self.delay_order,
            "power_order": self.power_order,
            "random_arrivals": self.random_arrivals,
            "regime_note": self.regime_note,
        }


# SimStats - post-warmup statistics of one simulation run
@dataclass(frozen=True)
class SimStats:
    avg_backlog: float       # nats
    avg_delay: float         # s, Little's law
    avg_power: float         # linear
    conditional_per: float   # errors / transmitting slots
    bursts: int
    slots_simulated: int
    seed: int
    warmup_slots: int
    avg_rate: float = 0.0            # scheduled nats/s averaged over all slots
    spectral_efficiency: float = 0.0 # avg_rate / bandwidth
    transmit_fraction: float = 0.0
    transmissions: int = 0
    errors: int = 0
    arrival_rate: float = 0.0        # B-bar, nats/s
    fifo_delay: Optional[float] = None
    merged_seeds: Tuple[int, ...] = ()  # set by merge()


# TradeoffPoint - one operating point of a sweep
@dataclass(frozen=True)
class TradeoffPoint:
    policy: str
    sweep_param: float
    stats: Optional[SimStats]
    bounds: Optional[VctsBounds]
    config_hash: str
    sigma_e2: float
    p_cct: float
    error: Optional[str] = None

    @property
    def failed(self):
        return self.stats is None
