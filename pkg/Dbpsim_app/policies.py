"""Rate-control policies mapping (U, hat H) to a rate and a power.

DBP maximizes U r (1-eps) dt - V (P_tx + P_cct) dt each slot, which gives the
multilevel water-filling rate r = n_F [log(U (1-eps) f / V)]^+. CSIT-only drops
the backlog from the log; No-CSIT sends a fixed rate at a fixed power.
"""

import logging
import math

import numpy as np

from channel import independent_subcarrier_set
from exceptions import ContractError
from models import PhyParams, PolicyConfig
from phy import f_quality, total_power

logger = logging.getLogger(__name__)


def dbp_objective(rate, backlog, tradeoff_v, f, params: PhyParams, dt=1.0):
    """Drift-minus-penalty objective; only used to check dbp_rate."""
    if rate < 0:
        raise ContractError("rate must be >= 0")
    goodput = backlog * rate * (1.0 - params.target_per) * dt
    return goodput - tradeoff_v * total_power(rate, f, params) * dt


def dbp_rate_given_quality(backlog, f, tradeoff_v, params: PhyParams):
    if backlog <= 0:
        return 0.0
    level = backlog * (1.0 - params.target_per) * f / tradeoff_v
    return params.n_fft * math.log(level) if level > 1.0 else 0.0


def dbp_power_given_quality(backlog, f, tradeoff_v, params: PhyParams):
    """U (1-eps) n_F / V - n_F / f + P_cct above the water level, else 0."""
    water_level = backlog * (1.0 - params.target_per) * params.n_fft / tradeoff_v
    floor = params.n_fft / f
    if backlog <= 0 or water_level <= floor:
        return 0.0
    return water_level - floor + params.circuit_power


def _quality(csit, phy_params):
    return f_quality(phy_params, csit, independent_subcarrier_set(len(csit), phy_params.n_taps))


def _require(cfg: PolicyConfig, *kinds):
    if cfg.kind not in kinds:
        raise ContractError(f"policy {cfg.kind!r} used where {' or '.join(kinds)} is required")


def dbp_rate(backlog, csit, cfg: PolicyConfig, phy_params: PhyParams):
    _require(cfg, "dbp")
    return dbp_rate_given_quality(backlog, _quality(csit, phy_params), cfg.tradeoff_v, phy_params)


def dbp_power(backlog, csit, cfg: PolicyConfig, phy_params: PhyParams):
    _require(cfg, "dbp")
    return dbp_power_given_quality(backlog, _quality(csit, phy_params), cfg.tradeoff_v, phy_params)


def csit_only_rate_given_quality(f, tradeoff_v, params: PhyParams):
    level = (1.0 - params.target_per) * f / tradeoff_v
    return params.n_fft * math.log(level) if level > 1.0 else 0.0


def csit_only_rate(csit, cfg: PolicyConfig, phy_params: PhyParams):
    _require(cfg, "csit-only")
    return csit_only_rate_given_quality(_quality(csit, phy_params), cfg.tradeoff_v, phy_params)


def no_csit_rate(cfg: PolicyConfig, backlog=1.0):
    """(rate, power): the configured constants while there is backlog, else (0, 0)."""
    _require(cfg, "no-csit")
    if backlog <= 0:
        return 0.0, 0.0
    return cfg.fixed_rate, cfg.fixed_power


class Policy:
    """Per-slot decision from the backlog and the CSIT quality f."""

    uses_quality = True

    def __init__(self, cfg: PolicyConfig, phy_params: PhyParams):
        self.cfg = cfg
        self.phy = phy_params

    @property
    def name(self):
        return self.cfg.kind

    def decide(self, backlog, f):
        """Return (rate, power) for this slot."""
        raise NotImplementedError


class DbpPolicy(Policy):
    def decide(self, backlog, f):
        rate = dbp_rate_given_quality(backlog, f, self.cfg.tradeoff_v, self.phy)
        if rate == 0.0:
            return 0.0, 0.0
        return rate, total_power(rate, f, self.phy)


class CsitOnlyPolicy(Policy):
    def decide(self, backlog, f):
        if backlog <= 0:
            return 0.0, 0.0
        rate = csit_only_rate_given_quality(f, self.cfg.tradeoff_v, self.phy)
        if rate == 0.0:
            return 0.0, 0.0
        return rate, total_power(rate, f, self.phy)


class NoCsitPolicy(Policy):
    uses_quality = False

    def decide(self, backlog, f=None):
        rate, power = no_csit_rate(self.cfg, backlog)
        if rate == 0.0:
            return 0.0, 0.0
        # P_tx is the configured power; circuit power is spent on top while sending
        return rate, power + self.phy.circuit_power


class InvertedPolicy(DbpPolicy):
    """DBP evaluated at the mirrored backlog U_pivot^2 / U: sends less as U grows.

    Negative control for the drift check, never a real scheduler.
    """

    def __init__(self, cfg: PolicyConfig, phy_params: PhyParams, pivot):
        super().__init__(cfg, phy_params)
        if not pivot > 0:
            raise ContractError("pivot backlog must be > 0")
        self.pivot = pivot

    @property
    def name(self):
        return "inverted"

    def decide(self, backlog, f):
        if backlog <= 0:
            return 0.0, 0.0
        return super().decide(self.pivot**2 / backlog, f)


def make_policy(cfg: PolicyConfig, phy_params: PhyParams):
    if cfg.kind == "dbp":
        return DbpPolicy(cfg, phy_params)
    if cfg.kind == "csit-only":
        return CsitOnlyPolicy(cfg, phy_params)
    return NoCsitPolicy(cfg, phy_params)


def dbp_rate_vector(backlog, f, tradeoff_v, params: PhyParams):
    """dbp_rate_given_quality over arrays of backlogs and qualities."""
    level = np.asarray(backlog) * (1.0 - params.target_per) * np.asarray(f) / tradeoff_v
    with np.errstate(divide="ignore"):
        return params.n_fft * np.where(level > 1.0, np.log(np.maximum(level, 1.0)), 0.0)
