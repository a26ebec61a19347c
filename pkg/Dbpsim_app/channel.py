"""Frequency-selective fading with imperfect CSIT.

Taps are drawn in the time domain and taken to the subcarriers with an
n_F-point FFT. The CSIT is the MMSE estimate of the channel: per tap
hat h_l ~ CN(0, sigma_l^2 - sigma_{h,l}^2) and h_l = hat h_l + Delta h_l with an
independent Delta h_l ~ CN(0, sigma_{h,l}^2), so the true channel keeps the
profile power. The frequency-domain error correlation
sum_l sigma_{h,l}^2 exp(-j 2 pi l (n1 - n2) / n_F) comes out exactly.
"""

import logging
import math

import numpy as np

from exceptions import ConfigError, ContractError
from models import ChannelDraw, CsitErrorModel, PowerDelayProfile
from specfun import bessel_j0

logger = logging.getLogger(__name__)


def _cscg(rng, variances, size=None):
    """Zero-mean circularly symmetric complex Gaussian with the given variances."""
    scale = np.sqrt(np.asarray(variances, dtype=float) / 2.0)
    shape = scale.shape if size is None else (size,) + scale.shape
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _check_fft_size(n_fft):
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise ConfigError(f"n_fft: must be a power of two, got {n_fft}")


def derive_error_variance(pilot_snr, doppler_hz, duplex_delay_s, tap_variance):
    """Per-tap CSIT error variance from pilot SNR, Doppler and duplexing delay.

    sigma_{h,l}^2 = 1 - E_p sigma_l^2 / (E_p sigma_l^2 + 1) * J0(2 pi f_D tau),
    clamped to [0, sigma_l^2].
    """
    if not pilot_snr > 0:
        raise ContractError(f"pilot_snr must be > 0, got {pilot_snr}")
    if doppler_hz < 0 or duplex_delay_s < 0 or tap_variance < 0:
        raise ContractError("doppler, duplex delay and tap variance must be >= 0")
    snr = pilot_snr * tap_variance
    value = 1.0 - snr / (snr + 1.0) * bessel_j0(2.0 * math.pi * doppler_hz * duplex_delay_s)
    if value > tap_variance:
        logger.warning(
            f"CSIT error variance {value:.4g} exceeds the tap variance {tap_variance:.4g}; clamping"
        )
        value = tap_variance
    return max(0.0, value)


def error_model_from_pilot(pilot_snr, doppler_hz, duplex_delay_s, profile: PowerDelayProfile):
    return CsitErrorModel(
        tuple(
            derive_error_variance(pilot_snr, doppler_hz, duplex_delay_s, variance)
            for variance in profile.tap_variances
        )
    )


def sample_taps(profile: PowerDelayProfile, rng):
    return _cscg(rng, profile.tap_variances)


def taps_to_freq(taps, n_fft):
    """H_n = sum_l h_l exp(-j 2 pi l n / n_F), n = 0..n_F-1 (along the last axis)."""
    _check_fft_size(n_fft)
    taps = np.asarray(taps, dtype=complex)
    if taps.shape[-1] > n_fft:
        raise ContractError(f"{taps.shape[-1]} taps do not fit in a {n_fft}-point FFT")
    return np.fft.fft(taps, n=n_fft, axis=-1)


def direct_dft(taps, n_fft):
    """O(n_F * N_d) evaluation of the same sum, for any n_F."""
    taps = np.asarray(taps, dtype=complex)
    l = np.arange(len(taps))
    n = np.arange(n_fft)
    return np.exp(-2j * np.pi * np.outer(n, l) / n_fft) @ taps


def csit_variances(profile: PowerDelayProfile, err: CsitErrorModel):
    """Per-tap CSIT variance sigma_l^2 - sigma_{h,l}^2."""
    if err.n_taps != profile.n_taps:
        raise ContractError(f"error model has {err.n_taps} taps, profile has {profile.n_taps}")
    variances = np.asarray(profile.tap_variances) - np.asarray(err.per_tap_error_variance)
    if np.any(variances < 0):
        raise ContractError(
            f"CSIT error variances {err.per_tap_error_variance} exceed the tap variances "
            f"{profile.tap_variances}"
        )
    return variances


def sample_csit(draw: ChannelDraw, err: CsitErrorModel, rng, profile: PowerDelayProfile = None):
    """CSIT given the true taps.

    With the profile known, hat h | h ~ CN(rho h, rho sigma_{h,l}^2) where
    rho = 1 - sigma_{h,l}^2 / sigma_l^2, the joint law of the MMSE split.
    Without it, hat h = h + Delta h.
    """
    if err.n_taps != len(draw.taps):
        raise ContractError(f"error model has {err.n_taps} taps, channel has {len(draw.taps)}")
    error_variance = np.asarray(err.per_tap_error_variance)
    if profile is None:
        csit_taps = draw.taps + _cscg(rng, error_variance)
    else:
        tap_variance = np.asarray(profile.tap_variances)
        csit_variances(profile, err)
        rho = np.divide(
            tap_variance - error_variance,
            tap_variance,
            out=np.zeros_like(tap_variance),
            where=tap_variance > 0,
        )
        csit_taps = rho * draw.taps + _cscg(rng, rho * error_variance)
    return ChannelDraw(
        taps=draw.taps,
        freq_true=draw.freq_true,
        freq_csit=taps_to_freq(csit_taps, draw.n_fft),
        csit_taps=csit_taps,
    )


def independent_subcarrier_set(n_fft, n_taps):
    """Indices {0, n_F/N_d, 2 n_F/N_d, ...} of the N_d independent subcarriers."""
    if n_taps < 1 or n_fft % n_taps:
        raise ContractError(f"N_d={n_taps} must divide n_F={n_fft}")
    return np.arange(n_taps) * (n_fft // n_taps)


def sample_true_given_csit(csit_taps, err: CsitErrorModel, n_fft, rng):
    """True channel conditional on the CSIT: taps hat h_l plus a fresh CN(0, sigma_{h,l}^2).

    H_n given hat H_n is then complex normal with mean hat H_n and variance sigma_e^2.
    """
    csit_taps = np.asarray(csit_taps, dtype=complex)
    taps = csit_taps + _cscg(rng, err.per_tap_error_variance)
    return ChannelDraw(
        taps=taps,
        freq_true=taps_to_freq(taps, n_fft),
        freq_csit=taps_to_freq(csit_taps, n_fft),
        csit_taps=csit_taps,
    )


def sample_slot(profile: PowerDelayProfile, err: CsitErrorModel, n_fft, rng):
    """One slot: the CSIT first, then the true channel given the CSIT."""
    csit_taps = _cscg(rng, csit_variances(profile, err))
    return sample_true_given_csit(csit_taps, err, n_fft, rng)


def sample_csit_block(profile: PowerDelayProfile, err: CsitErrorModel, n_slots, rng):
    """CSIT taps for n_slots i.i.d. slots, shape (n_slots, N_d)."""
    return _cscg(rng, csit_variances(profile, err), n_slots)


def csit_on_independent_set(csit_taps):
    """hat H on the independent subcarriers.

    The subcarriers n_F/N_d apart see the taps through an N_d-point DFT, so
    this needs no n_F-point transform.
    """
    csit_taps = np.asarray(csit_taps, dtype=complex)
    return np.fft.fft(csit_taps, n=csit_taps.shape[-1], axis=-1)


def true_gain_block(csit_taps, err: CsitErrorModel, n_fft, rng):
    """|H_n|^2 of the true channel given a block of CSIT taps, shape (n_slots, n_F)."""
    csit_taps = np.asarray(csit_taps, dtype=complex)
    taps = csit_taps + _cscg(rng, err.per_tap_error_variance, csit_taps.shape[0])
    freq = taps_to_freq(taps, n_fft)
    return freq.real**2 + freq.imag**2
