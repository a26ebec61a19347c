"""Oracle suite for the special functions.

Each check compares specfun against an independent oracle (series, closed
form, quadrature of a defining integral or Monte Carlo) and reports the
largest error seen next to its tolerance.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special

from models import NcChiSqParams
from specfun import (
    bessel_j0,
    exp_integral_ei,
    exp_integral_ei_series,
    inv_exp_integral_ei,
    marcum_q,
    ncx2_cdf,
    ncx2_quantile,
)

logger = logging.getLogger(__name__)

MC_DRAWS = 10_000_000
MC_CHUNK = 1_000_000
MC_TRIPLES = ((4, 2.0, 0.1), (1, 0.5, 0.05), (16, 1.0, 0.05))
MC_LEVELS = (0.5, 0.1, 0.01)
J0_FIRST_ROOT = 2.404825557695773


@dataclass
class OracleCheck:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return math.isfinite(self.max_error) and self.max_error <= self.tolerance

    def as_dict(self):
        return {**asdict(self), "passed": self.passed}


def check_ei_roundtrip():
    xs = np.logspace(-4, 2, 241)
    error = max(abs(inv_exp_integral_ei(exp_integral_ei(x)) - x) / x for x in xs)
    return OracleCheck("ei_inverse_roundtrip", error, 1e-9)


def check_ei_series():
    xs = np.concatenate([np.logspace(-8, 1, 60), np.linspace(35.0, 45.0, 41)])
    # relative error is meaningless next to the root of Ei
    xs = xs[np.abs(xs - 0.3725) > 1e-2]
    error = max(abs(exp_integral_ei(x) / exp_integral_ei_series(x) - 1.0) for x in xs)
    return OracleCheck("ei_series_agreement", error, 1e-11)


def check_ncx2_central_closed_form():
    p = NcChiSqParams(half_dof=1, noncentrality=0.0, error_variance=1.0)
    error = max(
        abs(ncx2_quantile(eps, p) + math.log1p(-eps))
        for eps in (0.5, 0.1, 0.01, 1e-3, 1e-4)
    )
    return OracleCheck("ncx2_central_closed_form", error, 1e-8)


def check_ncx2_roundtrip():
    error = 0.0
    for half_dof, s2, sigma_e2 in MC_TRIPLES + ((2, 0.0, 0.3),):
        p = NcChiSqParams(half_dof=half_dof, noncentrality=s2, error_variance=sigma_e2)
        for eps in (1e-3, 0.01, 0.3, 0.7):
            error = max(error, abs(ncx2_cdf(ncx2_quantile(eps, p), p) - eps))
    return OracleCheck("ncx2_quantile_roundtrip", error, 1e-9)


def _marcum_integral(order, a, b):
    # integrand scaled by exp(-a x) through ive
    def integrand(x):
        return x * (x / a) ** (order - 1) * math.exp(-0.5 * (x - a) ** 2) * special.ive(order - 1, a * x)

    value, _ = integrate.quad(integrand, b, math.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return value


def check_marcum_q():
    cases = ((2, 1.5, 2.0), (1, 0.5, 1.0), (4, 3.0, 2.5), (16, 5.0, 6.0))
    error = max(abs(marcum_q(m, a, b) - _marcum_integral(m, a, b)) for m, a, b in cases)
    error = max(error, abs(marcum_q(1, 0.0, 1.3) - math.exp(-0.5 * 1.3**2)))
    return OracleCheck("marcum_q_integral", error, 1e-10)


def _j0_series(x):
    term, total, k = 1.0, 1.0, 0
    while abs(term) > 1e-20:
        k += 1
        term *= -(x * x / 4.0) / (k * k)
        total += term
    return total


def check_bessel_j0():
    xs = np.linspace(0.0, 10.0, 41)
    error = max(abs(bessel_j0(x) - _j0_series(x)) for x in xs)
    error = max(error, abs(bessel_j0(J0_FIRST_ROOT)))
    return OracleCheck("bessel_j0_series", error, 1e-10)


def empirical_cdf_gap(half_dof, s2, sigma_e2, eps, n_draws, rng, chunk=MC_CHUNK):
    """(|empirical CDF at the quantile - eps|, binomial standard error)."""
    p = NcChiSqParams(half_dof=half_dof, noncentrality=s2, error_variance=sigma_e2)
    quantile = ncx2_quantile(eps, p)
    mean = math.sqrt(s2)
    scale = math.sqrt(sigma_e2 / 2.0)
    below = 0
    done = 0
    while done < n_draws:
        size = min(chunk, n_draws - done)
        re = rng.normal(mean, scale, size=(size, half_dof))
        im = rng.normal(0.0, scale, size=(size, half_dof))
        psi2 = (re**2 + im**2).mean(axis=1)
        below += int(np.count_nonzero(psi2 <= quantile))
        done += size
    return abs(below / n_draws - eps), math.sqrt(eps * (1.0 - eps) / n_draws)


def check_ncx2_monte_carlo(n_draws=MC_DRAWS, seed=0):
    """Worst gap in units of standard errors; passes at 3."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for (half_dof, s2, sigma_e2), eps in zip(MC_TRIPLES, MC_LEVELS):
        gap, se = empirical_cdf_gap(half_dof, s2, sigma_e2, eps, n_draws, rng)
        worst = max(worst, gap / se)
    return OracleCheck("ncx2_monte_carlo_se", worst, 3.0)


def run_selftest(mc_draws=MC_DRAWS, seed=0):
    checks = [
        check_ei_roundtrip(),
        check_ei_series(),
        check_ncx2_central_closed_form(),
        check_ncx2_roundtrip(),
        check_marcum_q(),
        check_bessel_j0(),
    ]
    if mc_draws:
        checks.append(check_ncx2_monte_carlo(mc_draws, seed))
    for check in checks:
        level = logging.INFO if check.passed else logging.WARNING
        logger.log(level, f"{check.name}: max error {check.max_error:.3g} (tolerance {check.tolerance:g})")
    return checks
