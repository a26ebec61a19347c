"""Physical-layer abstraction: CSIT quality, rate-to-power map and the outage oracle.

All rates are nats/s with the bandwidth folded into the n_F normalization;
powers are linear until the reporting boundary (to_db).
"""

import logging

import numpy as np
import pandas as pd
from scipy import stats

from channel import csit_on_independent_set, independent_subcarrier_set, sample_csit_block, true_gain_block
from exceptions import ContractError
from models import CsitErrorModel, NcChiSqParams, PhyParams, PowerDelayProfile
from specfun import ncx2_quantile

logger = logging.getLogger(__name__)


def f_quality(params: PhyParams, csit, index_set=None):
    """CSIT quality f: the eps-quantile of the normalized energy on I_B given hat H."""
    csit = np.asarray(csit)
    if index_set is None:
        index_set = independent_subcarrier_set(len(csit), params.n_taps)
    if len(index_set) != params.n_taps:
        raise ContractError(f"|I_B| must equal N_d={params.n_taps}, got {len(index_set)}")
    on_set = csit[np.asarray(index_set)]
    s2 = float(np.mean(on_set.real**2 + on_set.imag**2))
    return ncx2_quantile(params.target_per, NcChiSqParams(params.n_taps, s2, params.sigma_e2))


def quality_from_energy(params: PhyParams, s2):
    """Vectorized f for an array of noncentralities s^2."""
    n_d = params.n_taps
    scale = params.sigma_e2 / (2.0 * n_d)
    return scale * stats.ncx2.ppf(params.target_per, 2 * n_d, np.asarray(s2) / scale)


def quality_batch(params: PhyParams, csit_on_set):
    """f for each row of hat H restricted to I_B, shape (n_slots, N_d)."""
    csit_on_set = np.asarray(csit_on_set)
    s2 = np.mean(csit_on_set.real**2 + csit_on_set.imag**2, axis=-1)
    return quality_from_energy(params, s2)


def sample_quality(params: PhyParams, profile: PowerDelayProfile, err: CsitErrorModel, n_draws, rng):
    """f over n_draws fresh i.i.d. CSIT draws."""
    taps = sample_csit_block(profile, err, n_draws, rng)
    return quality_batch(params, csit_on_independent_set(taps))


def tx_power(rate, f, n_fft):
    """P_tx = (e^{r/n_F} - 1) n_F / f."""
    if np.any(np.asarray(rate) < 0):
        raise ContractError("rate must be >= 0")
    return np.expm1(np.asarray(rate) / n_fft) * n_fft / np.asarray(f)


def total_power(rate, f, params: PhyParams):
    """P_tx + P_cct while transmitting, exactly 0 otherwise."""
    rate = np.asarray(rate, dtype=float)
    power = np.where(rate > 0, tx_power(rate, f, params.n_fft) + params.circuit_power, 0.0)
    return float(power) if power.ndim == 0 else power


def mutual_information(true_channel, p_tx, n_fft):
    """sum_n log(1 + P_tx |H_n|^2 / n_F) in nats/s."""
    if p_tx < 0:
        raise ContractError("p_tx must be >= 0")
    gain = np.abs(np.asarray(true_channel)) ** 2
    return mutual_information_from_gain(gain, p_tx, n_fft)


def mutual_information_from_gain(gain, p_tx, n_fft):
    return float(np.sum(np.log1p(p_tx * gain / n_fft)))


def packet_error(rate, true_channel, p_tx, n_fft):
    """e(k): 1 iff the scheduled rate exceeds the instantaneous mutual information."""
    if rate <= 0:
        return 0
    return int(rate > mutual_information(true_channel, p_tx, n_fft))


def to_db(power):
    power = np.asarray(power, dtype=float)
    with np.errstate(divide="ignore"):
        value = 10.0 * np.log10(power)
    return float(value) if value.ndim == 0 else value


def from_db(power_db):
    value = 10.0 ** (np.asarray(power_db, dtype=float) / 10.0)
    return float(value) if value.ndim == 0 else value


def required_power_curve(rates, sigma_e2_list, params: PhyParams, n_draws, rng):
    """Mean required P_tx (dB) per data rate and CSIT error variance."""
    profile = PowerDelayProfile.uniform(params.n_taps)
    # common random numbers across the curves
    seed = int(rng.integers(2**63))
    rows = []
    for sigma_e2 in sigma_e2_list:
        phy = PhyParams(params.n_fft, params.target_per, sigma_e2, params.circuit_power, params.n_taps)
        err = CsitErrorModel.uniform(sigma_e2, params.n_taps)
        f = sample_quality(phy, profile, err, n_draws, np.random.default_rng(seed))
        for rate in rates:
            rows.append(
                {
                    "sigma_e2": sigma_e2,
                    "rate": rate,
                    "required_power_db": to_db(np.mean(tx_power(rate, f, params.n_fft))),
                }
            )
    return pd.DataFrame(rows)


def quality_curve(sigma_e2_list, eps_list, params: PhyParams, n_draws, rng):
    """E[f] with its standard error per CSIT error variance and target PER."""
    profile = PowerDelayProfile.uniform(params.n_taps)
    seed = int(rng.integers(2**63))
    rows = []
    for eps in eps_list:
        for sigma_e2 in sigma_e2_list:
            phy = PhyParams(params.n_fft, eps, sigma_e2, params.circuit_power, params.n_taps)
            err = CsitErrorModel.uniform(sigma_e2, params.n_taps)
            f = sample_quality(phy, profile, err, n_draws, np.random.default_rng(seed))
            rows.append(
                {
                    "target_per": eps,
                    "sigma_e2": sigma_e2,
                    "mean_f": float(np.mean(f)),
                    "mean_f_se": float(np.std(f, ddof=1) / np.sqrt(len(f))),
                }
            )
    return pd.DataFrame(rows)


def outage_rate(params: PhyParams, profile: PowerDelayProfile, err: CsitErrorModel, rate, n_draws, rng,
                chunk=20_000):
    """Empirical PER of a fixed rate scheduled on fresh CSIT draws.

    Each draw sets P_tx from its own f and checks the rate against the mutual
    information of the true channel given that CSIT.
    """
    if not rate > 0:
        raise ContractError(f"rate must be > 0, got {rate}")
    errors = 0
    done = 0
    while done < n_draws:
        size = min(chunk, n_draws - done)
        taps = sample_csit_block(profile, err, size, rng)
        f = quality_batch(params, csit_on_independent_set(taps))
        p_tx = tx_power(rate, f, params.n_fft)
        gains = true_gain_block(taps, err, params.n_fft, rng)
        mi = np.sum(np.log1p(p_tx[:, None] * gains / params.n_fft), axis=1)
        errors += int(np.count_nonzero(mi < rate))
        done += size
    per = errors / n_draws
    logger.debug(f"Outage at rate {rate:g}: {errors}/{n_draws} = {per:.4g}")
    return per
