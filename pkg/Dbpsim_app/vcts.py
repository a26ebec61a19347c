"""Virtual continuous-time analysis of the DBP queue.

Within a frame the fluid backlog drains at the conditional mean goodput
(1-eps) E[r_DBP | U]. Bounding that mean below by n_F (log U + beta) gives the
closed-form trajectory

    y(t; beta) = exp(-beta + Ei^-1(Ei(log u0 + beta) - n_F (1-eps) e^beta t)),

which solves dy/dt = -n_F (1-eps) (log y + beta). Here beta = E[log((1-eps) f / V)]
and beta' = E[(log((1-eps) f / V))^+], both Monte Carlo averages over CSIT draws.
The per-period unfinished work under y(.; beta), started from B + L*, bounds
the delay; the tangent-line power under y(.; beta') bounds the power.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from exceptions import ContractError, ConvergenceError, DomainError, RegimeError
from models import (
    ArrivalModel,
    CsitErrorModel,
    ExpectationEstimate,
    PhyParams,
    PowerDelayProfile,
    VctsBounds,
    VctsParams,
)
from phy import sample_quality
from services.expectation_cache import cache_samples
from specfun import exp_integral_ei, inv_exp_integral_ei, quad_adaptive

logger = logging.getLogger(__name__)

MIN_EXPECTATION_SAMPLES = 10_000
FIXED_POINT_RESIDUAL = 1e-8
MAX_BRACKET_DOUBLINGS = 200
# Ei targets below this are past the point where Ei^-1 underflows
EI_TARGET_FLOOR = -700.0


# ---------------------------------------------------------------------------
# CSIT expectations
# ---------------------------------------------------------------------------


def _standard_error(values):
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def estimate_beta(phy_params: PhyParams, n_samples, rng, profile=None, error_model=None):
    """Monte Carlo E[log((1-eps) f)], E[(log((1-eps) f))^+] and E[f] with standard errors."""
    if n_samples < MIN_EXPECTATION_SAMPLES:
        raise ContractError(f"need at least {MIN_EXPECTATION_SAMPLES} samples, got {n_samples}")
    profile = profile or PowerDelayProfile.uniform(phy_params.n_taps)
    error_model = error_model or CsitErrorModel.uniform(phy_params.sigma_e2, phy_params.n_taps)
    f = sample_quality(phy_params, profile, error_model, n_samples, rng)
    return _estimate_from_samples(f, phy_params.target_per, 1.0)


def _estimate_from_samples(f, target_per, tradeoff_v):
    log_term = np.log((1.0 - target_per) * f / tradeoff_v)
    positive = np.maximum(log_term, 0.0)
    return ExpectationEstimate(
        beta=float(np.mean(log_term)),
        beta_prime=float(np.mean(positive)),
        mean_f=float(np.mean(f)),
        beta_se=_standard_error(log_term),
        beta_prime_se=_standard_error(positive),
        mean_f_se=_standard_error(f),
        n_samples=len(f),
    )


@cache_samples
def quality_samples(n_fft, per_tap_error_variance, target_per, n_samples, seed):
    """CSIT quality draws for one (error model, eps), keyed for the expectation cache."""
    n_taps = len(per_tap_error_variance)
    err = CsitErrorModel(tuple(per_tap_error_variance))
    phy = PhyParams(n_fft, target_per, err.sigma_e2, 0.0, n_taps)
    logger.info(f"Sampling {n_samples} CSIT qualities (sigma_e2={err.sigma_e2:g}, eps={target_per:g})")
    rng = np.random.default_rng(seed)
    return sample_quality(phy, PowerDelayProfile.uniform(n_taps), err, n_samples, rng)


def build_params(config, tradeoff_v=None, samples=None):
    """VctsParams for a SystemConfig at tradeoff parameter V (default: the config's)."""
    v = tradeoff_v if tradeoff_v is not None else config.policy.tradeoff_v
    if v is None or not v > 0:
        raise ContractError("the analytical bounds need a DBP tradeoff parameter V > 0")
    if samples is None:
        samples = quality_samples(
            config.n_fft,
            config.error_model.per_tap_error_variance,
            config.target_per,
            config.mc.expectation_samples,
            config.mc.seed,
        )
    estimate = _estimate_from_samples(samples, config.target_per, v)
    return VctsParams(
        beta=estimate.beta,
        beta_prime=estimate.beta_prime,
        mean_f=estimate.mean_f,
        n_fft=config.n_fft,
        target_per=config.target_per,
        tradeoff_v=v,
        circuit_power=config.p_cct,
        frame_s=config.frame_s,
        dt_s=config.dt_s,
        beta_se=estimate.beta_se,
        beta_prime_se=estimate.beta_prime_se,
        mean_f_se=estimate.mean_f_se,
        l_delta_scale=config.l_delta_scale,
        quality_samples=samples,
    )


def _samples(params: VctsParams):
    if params.quality_samples is None:
        raise ContractError("this bound needs the CSIT quality samples in VctsParams")
    return params.quality_samples


# ---------------------------------------------------------------------------
# Conditional mean rate and power
# ---------------------------------------------------------------------------


def rate_low(backlog, params: VctsParams):
    """n_F (log U + beta)^+, below E[r_DBP | U] by Jensen."""
    if backlog <= 0:
        return 0.0
    return params.n_fft * max(0.0, math.log(backlog) + params.beta)


def rate_up(backlog, params: VctsParams):
    """n_F ((log U)^+ + beta'), above E[r_DBP | U]."""
    if backlog <= 0:
        return 0.0
    return params.n_fft * (max(0.0, math.log(backlog)) + params.beta_prime)


def conditional_mean_rate(backlog, params: VctsParams):
    """(E[r_DBP | U], s.e.) over the stored CSIT samples."""
    f = _samples(params)
    if backlog <= 0:
        return 0.0, 0.0
    level = backlog * (1.0 - params.target_per) * f / params.tradeoff_v
    rates = params.n_fft * np.log(np.maximum(level, 1.0))
    return float(np.mean(rates)), _standard_error(rates)


def mean_power(backlog, params: VctsParams):
    """(E[g_DBP | U], s.e.): E[[U (1-eps) n_F / V - n_F / f]^+ + P_cct 1(active)].

    Circuit power is charged only on the active branch, as in the per-slot power.
    """
    f = _samples(params)
    excess = backlog * params.power_slope - params.n_fft / f
    power = np.where(excess > 0, excess + params.circuit_power, 0.0)
    return float(np.mean(power)), _standard_error(power)


def power_low(backlog, start_backlog, params: VctsParams):
    """Tangent-line lower bound on E[g_DBP | U] anchored at the period start."""
    anchor, _ = mean_power(start_backlog, params)
    return anchor - params.power_slope * (start_backlog - backlog)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def traj_y(t, u0, beta, n_fft, target_per):
    """Closed-form drain trajectory y(t; beta) from y(0) = u0."""
    if not u0 > 0:
        raise DomainError(f"trajectory start must be > 0, got {u0}")
    x0 = math.log(u0) + beta
    if x0 <= 0:
        raise DomainError(
            f"log(u0) + beta = {x0:.6g} <= 0: backlog is below the DBP activation level"
        )
    if t == 0:
        return u0
    target = exp_integral_ei(x0) - n_fft * (1.0 - target_per) * math.exp(beta) * t
    return math.exp(-beta + inv_exp_integral_ei(target))


class _Drain:
    """y(t; beta) from a fixed start with Ei(x0) precomputed, held at e^-beta once drained."""

    def __init__(self, u0, beta, n_fft, target_per):
        self.u0 = u0
        self.beta = beta
        self.floor = math.exp(-beta)
        self.flat = u0 <= 0 or math.log(u0) + beta <= 0
        if not self.flat:
            self.ei0 = exp_integral_ei(math.log(u0) + beta)
            self.speed = n_fft * (1.0 - target_per) * math.exp(beta)

    def x(self, t):
        """log y(t) + beta, or None once clamped."""
        target = self.ei0 - self.speed * t
        if target < EI_TARGET_FLOOR:
            return None
        try:
            return inv_exp_integral_ei(target)
        except DomainError:
            return None

    def __call__(self, t):
        if self.flat or t <= 0:
            return self.u0
        x = self.x(t)
        if x is None:
            logger.debug(f"trajectory from {self.u0:g} clamped at the activation level")
            return self.floor
        return math.exp(-self.beta + x)


def clamped_trajectory(t, u0, beta, n_fft, target_per):
    """traj_y, flat below the activation level and held at e^-beta once drained."""
    return _Drain(u0, beta, n_fft, target_per)(t)


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    error_estimate: float


def _rk4(u0, horizon, n_steps, drain):
    h = horizon / n_steps
    values = np.empty(n_steps + 1)
    u = u0
    values[0] = u
    for i in range(n_steps):
        k1 = drain(u)
        k2 = drain(u - 0.5 * h * k1)
        k3 = drain(u - 0.5 * h * k2)
        k4 = drain(u - h * k3)
        u = u - h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        values[i + 1] = u
    return values


def vcts_ode_integrate(u0, beta, horizon, step, n_fft, target_per, rate=None, richardson_tol=1e-6):
    """RK4 solution of dU/dt = -(1-eps) rate(U).

    ``rate`` defaults to n_F (log U + beta)^+. The step is checked by comparing
    against a run at twice the step; ConvergenceError if the estimated relative
    error exceeds ``richardson_tol``.
    """
    if not step > 0 or not horizon > 0:
        raise ContractError("step and horizon must be > 0")
    if rate is None:
        def rate(u):
            return n_fft * max(0.0, math.log(u) + beta) if u > 0 else 0.0

    def drain(u):
        return (1.0 - target_per) * rate(u)

    n_steps = max(2, int(math.ceil(horizon / step)))
    n_steps += n_steps % 2
    fine = _rk4(u0, horizon, n_steps, drain)
    coarse = _rk4(u0, horizon, n_steps // 2, drain)
    # RK4: error of the fine run is about (coarse - fine) / 15
    error = float(np.max(np.abs(fine[::2] - coarse)) / 15.0 / max(abs(u0), 1e-300))
    if error > richardson_tol:
        raise ConvergenceError(
            f"RK4 step {horizon / n_steps:.3g} too large: estimated relative error {error:.3g}"
        )
    return Trajectory(np.linspace(0.0, horizon, n_steps + 1), fine, error)


# ---------------------------------------------------------------------------
# Fixed point of the one-period map
# ---------------------------------------------------------------------------


def leftover_fixed_point(burst, frame_s, beta, n_fft, target_per):
    """Unique L* with L* = y(T; B + L*)."""
    if not burst > 0:
        raise DomainError(f"burst must be > 0, got {burst}")

    def gap(leftover):
        return clamped_trajectory(frame_s, burst + leftover, beta, n_fft, target_per) - leftover

    lo = max(0.0, math.exp(-beta) - burst)
    hi = max(burst, math.exp(-beta), 1.0)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if gap(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RegimeError(
            f"no fixed point bracket for B={burst:g}, beta={beta:g}: the drain never catches up"
        )

    leftover = optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=1e-15, maxiter=300)
    residual = abs(gap(leftover))
    if residual > max(FIXED_POINT_RESIDUAL, 1e-13 * leftover):
        raise ConvergenceError(f"fixed point residual {residual:.3g} exceeds {FIXED_POINT_RESIDUAL}")

    # dF/dL = x_T / x_0 < 1 with x = log y + beta
    x0 = math.log(burst + leftover) + beta
    xt = math.log(leftover) + beta if leftover > 0 else 0.0
    slope = xt / x0 if x0 > 0 else 1.0
    if not slope < 1.0:
        raise RegimeError(f"one-period map is not a contraction at L*={leftover:g} (slope {slope:g})")
    return float(leftover)


def leftover_iteration(burst, n_periods, leftover0, frame_s, beta, n_fft, target_per):
    """Leftovers of n_periods consecutive periods: L_{m+1} = y(T; B + L_m)."""
    leftovers = [float(leftover0)]
    for _ in range(n_periods):
        leftovers.append(clamped_trajectory(frame_s, burst + leftovers[-1], beta, n_fft, target_per))
    return leftovers


# ---------------------------------------------------------------------------
# Per-period unfinished work and energy
# ---------------------------------------------------------------------------


def ju_upper(u0, frame_s, params: VctsParams):
    """Upper bound on the per-period unfinished work: integral of y(t; beta) over [0, T]."""
    drain = _Drain(u0, params.beta, params.n_fft, params.target_per)
    if drain.flat:
        return u0 * frame_s
    tol = 1e-9 * u0 * frame_s
    return quad_adaptive(drain, 0.0, frame_s, tol)


def jg_lower(u0, frame_s, params: VctsParams):
    """Lower bound on the per-period energy.

    Integrates [y(t; beta') s + E[g_DBP | u0] - u0 s]^+ with s = n_F (1-eps) / V.
    """
    if u0 <= 0:
        return 0.0
    slope = params.power_slope
    anchor, _ = mean_power(u0, params)
    if anchor <= 0:
        return 0.0
    drain = _Drain(u0, params.beta_prime, params.n_fft, params.target_per)

    def integrand(t):
        return drain(t) * slope + anchor - u0 * slope

    end = frame_s
    if integrand(frame_s) < 0:
        end = optimize.brentq(integrand, 0.0, frame_s, xtol=1e-14 * frame_s, maxiter=200)
    tol = 1e-9 * anchor * frame_s
    return quad_adaptive(lambda t: max(0.0, integrand(t)), 0.0, end, tol)


def discrete_unfinished_work(u0, frame_s, dt, params: VctsParams):
    """Slot sum of U_k dt with U_{k+1} = U_k - (1-eps) r_low(U_k) dt."""
    n_slots = int(round(frame_s / dt))
    backlog = u0
    total = 0.0
    for _ in range(n_slots):
        total += backlog * dt
        served = (1.0 - params.target_per) * rate_low(backlog, params) * dt
        backlog = max(backlog - served, min(backlog, params.activation_level))
    return total


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


def delay_upper_bound(burst, params: VctsParams):
    """Seconds: ju_upper(B + L*, T) / (B-bar T)."""
    frame_s = params.frame_s
    leftover = leftover_fixed_point(burst, frame_s, params.beta, params.n_fft, params.target_per)
    return ju_upper(burst + leftover, frame_s, params) / burst


def power_lower_bound(burst, params: VctsParams):
    """Linear power: jg_lower(B, T) / T."""
    return jg_lower(burst, params.frame_s, params) / params.frame_s


def drain_time(burst, params: VctsParams, leftover=None):
    """t_d: time for y(.; beta) to fall from B + L* to L* + L_delta, at most T."""
    if leftover is None:
        leftover = leftover_fixed_point(
            burst, params.frame_s, params.beta, params.n_fft, params.target_per
        )
    beta = params.beta
    upper = exp_integral_ei(math.log(burst + leftover) + beta)
    x_low = math.log(leftover + params.l_delta) + beta
    if x_low <= 0:
        raise RegimeError("L* + L_delta lies below the activation level; raise vcts.l_delta_scale")
    lower = exp_integral_ei(x_low)
    t_d = math.exp(-beta) / ((1.0 - params.target_per) * params.n_fft) * (upper - lower)
    return min(max(t_d, 0.0), params.frame_s)


def power_time(burst, params: VctsParams):
    """t_p: where the tangent of the power lower bound at the period start reaches zero."""
    rate, _ = conditional_mean_rate(burst, params)
    if rate <= 0:
        raise RegimeError(f"DBP never activates at backlog {burst:g} for V={params.tradeoff_v:g}")
    power, _ = mean_power(burst, params)
    return min(power / (rate / params.tradeoff_v), params.frame_s)


@dataclass(frozen=True)
class AsymptoticTerms:
    t_d: float
    t_p: float
    delay_order: float
    power_order: float


def _log_load(burst, params: VctsParams):
    value = burst * params.mean_f / params.tradeoff_v
    if not value > 1.0:
        raise RegimeError(f"log(B E[f] / V) = log({value:.4g}) <= 0: outside the small-V regime")
    return math.log(value)


def delay_order(burst, params: VctsParams):
    return burst**2 / _log_load(burst, params) + params.tradeoff_v / params.mean_f


def power_order(burst, params: VctsParams):
    return (burst / params.tradeoff_v + params.circuit_power) * burst / _log_load(burst, params)


def asymptotic_terms(burst, params: VctsParams):
    return AsymptoticTerms(
        t_d=drain_time(burst, params),
        t_p=power_time(burst, params),
        delay_order=delay_order(burst, params),
        power_order=power_order(burst, params),
    )


def overbound_area(burst, params: VctsParams):
    """(1/2)(B - L_delta) t_d + T (L* + L_delta), over ju_upper(B + L*) for small V."""
    leftover = leftover_fixed_point(
        burst, params.frame_s, params.beta, params.n_fft, params.target_per
    )
    t_d = drain_time(burst, params, leftover)
    return 0.5 * (burst - params.l_delta) * t_d + params.frame_s * (leftover + params.l_delta)


def random_arrival_bounds(arrival: ArrivalModel, params: VctsParams):
    """(delay_upper, power_lower) for i.i.d. bursts, leftover taken at B_max."""
    mean_burst = arrival.mean_per_frame
    if not mean_burst > 0:
        raise DomainError("random-arrival bounds need a positive mean burst")
    frame_s = params.frame_s
    leftover_max = leftover_fixed_point(
        arrival.max_per_frame, frame_s, params.beta, params.n_fft, params.target_per
    )
    work = math.fsum(
        p * ju_upper(b + leftover_max, frame_s, params)
        for b, p in zip(arrival.values, arrival.probabilities)
        if p > 0
    )
    energy = math.fsum(
        p * jg_lower(b, frame_s, params)
        for b, p in zip(arrival.values, arrival.probabilities)
        if p > 0
    )
    return work / mean_burst, energy / frame_s


def random_arrival_orders(arrival: ArrivalModel, params: VctsParams):
    """Expected order terms over the arrival table (atoms with positive bursts)."""
    atoms = [(b, p) for b, p in zip(arrival.values, arrival.probabilities) if p > 0 and b > 0]
    if not atoms:
        raise DomainError("no positive bursts in the arrival table")
    delay = math.fsum(p * burst**2 / _log_load(burst, params) for burst, p in atoms)
    power = math.fsum(
        p * (burst / params.tradeoff_v + params.circuit_power) * burst / _log_load(burst, params)
        for burst, p in atoms
    )
    return delay + params.tradeoff_v / params.mean_f, power


def compute_bounds(config, tradeoff_v=None, params: Optional[VctsParams] = None):
    """VctsBounds for a config, deterministic or i.i.d. arrivals."""
    params = params or build_params(config, tradeoff_v)
    arrival = config.arrival
    if not arrival.mean_per_frame > 0:
        raise ContractError("analytical bounds need a positive arrival rate")
    random_arrivals = arrival.kind == "iid"
    notes = []

    if random_arrivals:
        delay, power = random_arrival_bounds(arrival, params)
        burst = arrival.max_per_frame
    else:
        burst = arrival.mean_per_frame
        delay = delay_upper_bound(burst, params)
        power = power_lower_bound(burst, params)
    leftover = leftover_fixed_point(
        burst, params.frame_s, params.beta, params.n_fft, params.target_per
    )

    t_d = drain_time(burst, params, leftover)
    try:
        t_p = power_time(burst, params)
    except RegimeError as exc:
        notes.append(f"{exc}; power bound is 0")
        t_p = params.frame_s
    try:
        if random_arrivals:
            d_order, p_order = random_arrival_orders(arrival, params)
        else:
            d_order, p_order = delay_order(burst, params), power_order(burst, params)
    except RegimeError as exc:
        notes.append(str(exc))
        d_order = p_order = None

    if notes:
        logger.warning(f"Bounds at V={params.tradeoff_v:g}: {'; '.join(notes)}")
    return VctsBounds(
        beta=params.beta,
        beta_prime=params.beta_prime,
        leftover_fixed_point=leftover,
        ju_upper=delay * arrival.mean_per_frame,
        jg_lower=power * params.frame_s,
        delay_upper=delay,
        power_lower=power,
        t_d=t_d if t_d > 0 else params.frame_s,
        t_p=t_p if t_p > 0 else params.frame_s,
        beta_se=params.beta_se,
        beta_prime_se=params.beta_prime_se,
        delay_order=d_order,
        power_order=p_order,
        random_arrivals=random_arrivals,
        regime_note="; ".join(notes),
    )
