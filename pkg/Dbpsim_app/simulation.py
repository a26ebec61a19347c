"""Slot-level Monte Carlo driver and parameter sweeps.

Every slot draws CSIT, lets the policy pick (rate, power), draws the true
channel conditional on the CSIT for the outage oracle and applies the queue
recursion. With mc.outage = target a transmission is lost with probability
epsilon instead. Statistics are taken after a warm-up and delay follows from
Little's law.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from channel import csit_on_independent_set, sample_csit_block, true_gain_block
from config import SystemConfig
from exceptions import ContractError, DbpSimError, InstabilityError
from models import QueueState, SimStats, TradeoffPoint
from phy import mutual_information_from_gain, quality_batch
from policies import InvertedPolicy, dbp_rate_vector, make_policy
from queueing import FifoDelayTracker, frame_boundary, queue_update, sample_arrival
from vcts import compute_bounds

logger = logging.getLogger(__name__)

# channel is drawn this many subcarrier gains at a time
BLOCK_GAINS = 262_144
WATCHDOG_FACTOR = 1e6
MIN_BIN_SAMPLES = 30


def _rng_streams(seed):
    channel, innovation, arrivals, outages = np.random.SeedSequence(seed).spawn(4)
    return (
        np.random.default_rng(channel),
        np.random.default_rng(innovation),
        np.random.default_rng(arrivals),
        np.random.default_rng(outages),
    )


def _simulate(config: SystemConfig, policy, n_slots, seed, track_fifo=False, record_trace=False):
    phy = config.phy_params
    err = config.error_model
    profile = config.profile
    n_fft = config.n_fft
    dt = config.dt_s
    slots_per_frame = config.slots_per_frame
    warmup = config.mc.warmup_slots(n_slots)
    if n_slots <= warmup:
        raise ContractError(f"n_slots={n_slots} must exceed the {warmup} warm-up slots")

    rng_channel, rng_innovation, rng_arrivals, rng_outage = _rng_streams(seed)
    # no-CSIT has no PER target and always meets the mutual-information check
    nominal_outage = config.mc.outage == "target" and policy.uses_quality
    mean_burst = config.arrival.mean_per_frame
    limit = WATCHDOG_FACTOR * mean_burst if mean_burst > 0 else math.inf

    state = QueueState(sample_arrival(config.arrival, rng_arrivals), 0, slots_per_frame)
    fifo = FifoDelayTracker(record_after=warmup * dt) if track_fifo else None
    if fifo:
        fifo.arrive(state.backlog, 0.0)

    sum_backlog = sum_power = sum_rate = 0.0
    half_sums = [0.0, 0.0]
    transmissions = errors = bursts = 0
    trace = {"backlog": [], "quality": [], "rate": [], "power": [], "error": [],
             "served": [], "arrival": [], "next_backlog": []} if record_trace else None

    block = max(64, BLOCK_GAINS // n_fft)
    midpoint = warmup + (n_slots - warmup) // 2
    k = 0
    while k < n_slots:
        size = min(block, n_slots - k)
        csit_taps = sample_csit_block(profile, err, size, rng_channel)
        quality = None
        if policy.uses_quality:
            quality = quality_batch(phy, csit_on_independent_set(csit_taps))
        gains = true_gain_block(csit_taps, err, n_fft, rng_innovation)

        for i in range(size):
            backlog = state.backlog
            f = quality[i] if quality is not None else None
            rate, power = policy.decide(backlog, f)
            error = 0
            if rate > 0:
                if nominal_outage:
                    error = int(rng_outage.random() < phy.target_per)
                else:
                    p_tx = power - phy.circuit_power
                    error = int(rate > mutual_information_from_gain(gains[i], p_tx, n_fft))

            arrival = None
            if frame_boundary(k + 1, slots_per_frame):
                arrival = sample_arrival(config.arrival, rng_arrivals)
            state = queue_update(state, rate, error, dt, arrival)

            if fifo:
                fifo.serve(state.last_served, (k + 1) * dt)
                if arrival is not None:
                    fifo.arrive(arrival, (k + 1) * dt)
            if k >= warmup:
                sum_backlog += backlog
                sum_power += power
                sum_rate += rate
                half_sums[k >= midpoint] += backlog
                if rate > 0:
                    transmissions += 1
                    errors += error
                if arrival is not None:
                    bursts += 1
            if trace is not None:
                trace["backlog"].append(backlog)
                trace["quality"].append(np.nan if f is None else f)
                trace["rate"].append(rate)
                trace["power"].append(power)
                trace["error"].append(error)
                trace["served"].append(state.last_served)
                trace["arrival"].append(0.0 if arrival is None else arrival)
                trace["next_backlog"].append(state.backlog)
            if state.backlog > limit:
                raise InstabilityError(
                    f"backlog {state.backlog:.4g} nats exceeds {WATCHDOG_FACTOR:g}x the per-frame "
                    f"arrival at slot {k + 1} ({policy.name}, seed {seed})"
                )
            k += 1

    measured = n_slots - warmup
    first = half_sums[0] / max(1, midpoint - warmup)
    second = half_sums[1] / max(1, n_slots - midpoint)
    if mean_burst > 0 and second > 2.0 * first + mean_burst:
        logger.warning(
            f"Backlog keeps growing under {policy.name}: the arrival rate may be outside the stability region"
        )

    avg_backlog = sum_backlog / measured
    arrival_rate = config.arrival_rate
    avg_rate = sum_rate / measured
    stats = SimStats(
        avg_backlog=avg_backlog,
        avg_delay=avg_backlog / arrival_rate if arrival_rate > 0 else 0.0,
        avg_power=sum_power / measured,
        conditional_per=errors / transmissions if transmissions else 0.0,
        bursts=bursts,
        slots_simulated=n_slots,
        seed=seed,
        warmup_slots=warmup,
        avg_rate=avg_rate,
        spectral_efficiency=avg_rate / config.bandwidth_hz,
        transmit_fraction=transmissions / measured,
        transmissions=transmissions,
        errors=errors,
        arrival_rate=arrival_rate,
        fifo_delay=fifo.average_delay if fifo else None,
    )
    logger.info(
        f"{policy.name} run seed={seed}: delay {stats.avg_delay:.4g} s, power {stats.avg_power:.4g}, "
        f"PER {stats.conditional_per:.3g}"
    )
    frame = pd.DataFrame(trace) if trace is not None else None
    if frame is not None:
        frame["slot"] = np.arange(n_slots)
        frame["measured"] = frame["slot"] >= warmup
    return stats, frame


def run(config: SystemConfig, policy=None, n_slots=None, seed=None, track_fifo=False):
    """Simulate one operating point; deterministic given (config, policy, n_slots, seed)."""
    policy_cfg = policy or config.policy
    n_slots = config.mc.n_slots if n_slots is None else n_slots
    seed = config.mc.seed if seed is None else seed
    stats, _ = _simulate(config, make_policy(policy_cfg, config.phy_params), n_slots, seed, track_fifo)
    return stats


def run_trace(config: SystemConfig, n_slots=None, seed=None, policy_impl=None):
    """Simulate and also return the per-slot trace as a DataFrame."""
    n_slots = config.mc.n_slots if n_slots is None else n_slots
    seed = config.mc.seed if seed is None else seed
    policy_impl = policy_impl or make_policy(config.policy, config.phy_params)
    return _simulate(config, policy_impl, n_slots, seed, record_trace=True)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def point_seed(base_seed, index):
    """Per-point seed from a counter-based split of base_seed."""
    state = np.random.SeedSequence(base_seed, spawn_key=(index,)).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def _run_point(job):
    config, n_slots, seed = job
    try:
        return run(config, n_slots=n_slots, seed=seed), None
    except DbpSimError as exc:
        logger.warning(f"Sweep point {config.policy.kind} @ {config.policy.sweep_param:g} failed: {exc}")
        return None, f"{type(exc).__name__}: {exc}"


def sweep(config: SystemConfig, policy_kind, sweep_values, n_slots=None, base_seed=None,
          parallelism=1, attach_bounds=True):
    """One run per sweep value (V, or the fixed power for no-csit) with decorrelated seeds."""
    values = [float(v) for v in sweep_values]
    if not values or any(not v > 0 for v in values):
        raise ContractError("sweep values must be positive")
    n_slots = config.mc.n_slots if n_slots is None else n_slots
    base_seed = config.mc.seed if base_seed is None else base_seed

    configs = [config.with_policy(policy_kind, v) for v in values]
    jobs = [(cfg, n_slots, point_seed(base_seed, i)) for i, cfg in enumerate(configs)]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_point, jobs))
    else:
        outcomes = [_run_point(job) for job in jobs]

    points = []
    for cfg, value, (stats, error) in zip(configs, values, outcomes):
        bounds = None
        if attach_bounds and policy_kind == "dbp":
            try:
                bounds = compute_bounds(cfg)
            except DbpSimError as exc:
                logger.warning(f"No analytical bounds at V={value:g}: {exc}")
        points.append(
            TradeoffPoint(
                policy=policy_kind,
                sweep_param=value,
                stats=stats,
                bounds=bounds,
                config_hash=cfg.config_hash,
                sigma_e2=cfg.sigma_e2,
                p_cct=cfg.p_cct,
                error=error,
            )
        )
    failed = sum(point.failed for point in points)
    if failed:
        logger.warning(f"{failed} of {len(points)} {policy_kind} sweep points failed")
    return points


def merge(stats_list: List[SimStats]):
    """Combine runs of the same operating point, weighting by measured slots."""
    if not stats_list:
        raise ContractError("nothing to merge")
    weights = np.array([s.slots_simulated - s.warmup_slots for s in stats_list], dtype=float)
    total = weights.sum()

    def weighted(attr):
        return float(np.dot(weights, [getattr(s, attr) for s in stats_list]) / total)

    avg_backlog = weighted("avg_backlog")
    arrival_rate = weighted("arrival_rate")
    transmissions = sum(s.transmissions for s in stats_list)
    errors = sum(s.errors for s in stats_list)
    fifo = None
    if all(s.fifo_delay is not None for s in stats_list):
        fifo = weighted("fifo_delay")
    seeds = []
    for s in stats_list:
        seeds.extend(s.merged_seeds or (s.seed,))
    return SimStats(
        avg_backlog=avg_backlog,
        avg_delay=avg_backlog / arrival_rate if arrival_rate > 0 else 0.0,
        avg_power=weighted("avg_power"),
        conditional_per=errors / transmissions if transmissions else 0.0,
        bursts=sum(s.bursts for s in stats_list),
        slots_simulated=sum(s.slots_simulated for s in stats_list),
        seed=seeds[0],
        warmup_slots=sum(s.warmup_slots for s in stats_list),
        avg_rate=weighted("avg_rate"),
        spectral_efficiency=weighted("spectral_efficiency"),
        transmit_fraction=weighted("transmit_fraction"),
        transmissions=transmissions,
        errors=errors,
        arrival_rate=arrival_rate,
        fifo_delay=fifo,
        merged_seeds=tuple(seeds),
    )


def matched_delay_power(points, delays):
    """Power on a sweep curve at the given delays (linear interpolation, NaN outside)."""
    curve = sorted(
        (p.stats.avg_delay, p.stats.avg_power) for p in points if not p.failed
    )
    if len(curve) < 2:
        return np.full(len(np.atleast_1d(delays)), np.nan)
    x, y = zip(*curve)
    return np.interp(np.atleast_1d(delays), x, y, left=np.nan, right=np.nan)


def csit_error_sweep(config: SystemConfig, sigma_e2_list, delay_targets, v_values,
                     n_slots=None, base_seed=None, parallelism=1):
    """Minimum DBP power meeting each delay target, per CSIT error variance."""
    rows = []
    for sigma_e2 in sigma_e2_list:
        points = sweep(
            config.with_sigma_e2(sigma_e2), "dbp", v_values, n_slots, base_seed,
            parallelism, attach_bounds=False,
        )
        powers = matched_delay_power(points, delay_targets)
        for target, power in zip(delay_targets, powers):
            rows.append({"sigma_e2": sigma_e2, "delay_target_s": target, "min_power": power})
    frame = pd.DataFrame(rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        frame["min_power_db"] = 10.0 * np.log10(frame["min_power"])
    return frame


# ---------------------------------------------------------------------------
# Lyapunov drift check
# ---------------------------------------------------------------------------


@dataclass
class DriftReport:
    table: pd.DataFrame
    passed: bool
    a_max: float
    r_max: float
    insufficient_bins: List[str] = field(default_factory=list)
    policy: str = "dbp"


def drift_check(config: SystemConfig, n_slots=None, bins=10, seed=None, inverted=False,
                r_max: Optional[float] = None, min_samples=MIN_BIN_SAMPLES):
    """Binned empirical drift of U^2/2 against (A_max^2 + R_max^2)/2 - U E[r(1-e) dt - A | U].

    The service term is the DBP rate at the observed (U, f) times (1-eps) dt.
    ``inverted`` runs the backlog-mirrored policy as a negative control.
    """
    if config.policy.kind != "dbp":
        raise ContractError("drift check runs against a dbp policy config")
    phy = config.phy_params
    policy_impl = None
    if inverted:
        # pivot well below the burst: once a frame arrives the mirrored policy stops serving
        pivot = 0.25 * math.sqrt(config.arrival.mean_per_frame * config.policy.tradeoff_v)
        policy_impl = InvertedPolicy(config.policy, phy, pivot=max(pivot, 1e-6))
    _, trace = run_trace(config, n_slots, seed, policy_impl)
    trace = trace[trace["measured"]].copy()

    dt = config.dt_s
    reference = dbp_rate_vector(trace["backlog"], trace["quality"], config.policy.tradeoff_v, phy)
    trace["reference_service"] = reference * (1.0 - phy.target_per) * dt
    offered = trace["rate"] * (1 - trace["error"]) * dt
    a_max = config.arrival.max_per_frame
    if r_max is None:
        r_max = float(max(trace["reference_service"].max(), offered.max()))

    u = trace["backlog"]
    trace["drift"] = 0.5 * (trace["next_backlog"] ** 2 - u**2)
    trace["rhs"] = 0.5 * (a_max**2 + r_max**2) - u * (trace["reference_service"] - trace["arrival"])
    trace["slack"] = trace["drift"] - trace["rhs"]
    trace["bin"] = pd.qcut(u, q=bins, duplicates="drop")

    table = trace.groupby("bin", observed=True).agg(
        backlog=("backlog", "mean"),
        samples=("slack", "size"),
        drift=("drift", "mean"),
        rhs=("rhs", "mean"),
        slack=("slack", "mean"),
        slack_sd=("slack", "std"),
    )
    table["slack_se"] = table["slack_sd"].fillna(0.0) / np.sqrt(table["samples"])
    table["passed"] = table["slack"] <= 3.0 * table["slack_se"]
    table["insufficient"] = table["samples"] < min_samples
    insufficient = [str(label) for label in table.index[table["insufficient"]]]
    if insufficient:
        logger.warning(f"Drift bins with fewer than {min_samples} samples: {', '.join(insufficient)}")
    return DriftReport(
        table=table.reset_index(),
        passed=bool(table["passed"].all()),
        a_max=a_max,
        r_max=r_max,
        insufficient_bins=insufficient,
        policy="inverted" if inverted else "dbp",
    )
