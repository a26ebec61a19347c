"""Special functions behind the quality function and the trajectory bounds.

Ei and its inverse, the generalized Marcum Q-function and the non-central
chi-square law of the normalized subcarrier energy, Bessel J0 and an adaptive
quadrature wrapper. All functions are pure.
"""

import logging
import math
import warnings

import numpy as np
from scipy import integrate, optimize, special

from exceptions import ConvergenceError, DomainError, NumericalOverflowError
from models import NcChiSqParams

logger = logging.getLogger(__name__)

# Ei(x) overflows once e^x does
EI_MAX_ARGUMENT = 709.0
# positive root of Ei
EI_ROOT = 0.37250741078136663
# Poisson weights below this fraction of the largest are dropped
SERIES_CUTOFF = 1e-17
QUANTILE_CDF_TOLERANCE = 1e-12


def _check_finite(name, value):
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")


def exp_integral_ei_series(x):
    """Ei(x) from the convergent series gamma + ln x + sum x^k / (k k!).

    Used as an independent oracle; accurate for 0 < x <= 50.
    """
    if not x > 0:
        raise DomainError(f"Ei is defined here for x > 0, got {x}")
    terms = [np.euler_gamma, math.log(x)]
    term = 1.0
    k = 1
    while True:
        term *= x / k
        contribution = term / k
        terms.append(contribution)
        if contribution < 1e-18 * abs(math.fsum(terms)) or k > 500:
            break
        k += 1
    return math.fsum(terms)


def exp_integral_ei(x):
    """Exponential integral Ei(x) = integral of e^t/t from -inf to x, x > 0."""
    _check_finite("x", x)
    if x <= 0:
        raise DomainError(f"Ei is defined here for x > 0, got {x}")
    if x > EI_MAX_ARGUMENT:
        raise NumericalOverflowError(f"Ei({x}) exceeds the double range")
    return float(special.expi(x))


def _ei_derivative(x):
    return math.exp(x) / x


def inv_exp_integral_ei(y):
    """Unique x > 0 with Ei(x) = y."""
    _check_finite("y", y)
    if y < -30.0:
        # Ei(x) = gamma + ln x + x + O(x^2) near zero
        x = math.exp(y - np.euler_gamma)
        if x == 0.0:
            raise DomainError(f"Ei^-1({y}) underflows to zero")
        return x * (1.0 - x)
    if y > special.expi(EI_MAX_ARGUMENT):
        raise NumericalOverflowError(f"Ei^-1({y}) exceeds the representable range")

    # log-domain seed, then bracket around it
    if y <= 0.0:
        guess = min(math.exp(y - np.euler_gamma), EI_ROOT)
    else:
        guess = max(EI_ROOT, math.log1p(y) + math.log(max(math.log1p(y), 1.0)))
    lo, hi = guess, guess
    while special.expi(lo) > y:
        lo *= 0.5
    while special.expi(hi) < y:
        hi = min(hi * 2.0, EI_MAX_ARGUMENT)
    x = optimize.brentq(
        lambda t: special.expi(t) - y, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200
    )
    return _newton_polish(x, y)


def _newton_polish(x, y, steps=3):
    for _ in range(steps):
        step = (special.expi(x) - y) / _ei_derivative(x)
        if not math.isfinite(step):
            break
        candidate = x - step
        if candidate <= 0:
            break
        x = candidate
        if abs(step) <= 1e-16 * x:
            break
    return float(x)


def _poisson_weights(mean):
    """Poisson(mean) weights over the window that carries the mass.

    Computed in log space so large means neither overflow nor underflow.
    """
    if mean == 0.0:
        return np.zeros(1, dtype=int), np.ones(1)
    mode = int(math.floor(mean))
    half_width = int(math.ceil(12.0 * math.sqrt(mean + 1.0) + 30.0))
    j = np.arange(max(0, mode - half_width), mode + half_width + 1)
    log_w = -mean + j * math.log(mean) - special.gammaln(j + 1.0)
    w = np.exp(log_w)
    keep = w >= SERIES_CUTOFF * w.max()
    return j[keep], w[keep]


def marcum_q(order, a, b):
    """Generalized Marcum Q-function Q_m(a, b).

    Series over Poisson(a^2/2) mixing weights of regularized upper incomplete
    gamma terms, which equals the Bessel-I series of the defining integral.
    """
    if int(order) != order or order < 1:
        raise DomainError(f"Marcum Q order must be a positive integer, got {order}")
    if a < 0 or b < 0:
        raise DomainError("Marcum Q arguments must be nonnegative")
    if b == 0:
        return 1.0
    j, w = _poisson_weights(0.5 * a * a)
    q = math.fsum(w * special.gammaincc(order + j, 0.5 * b * b))
    return min(1.0, max(0.0, q))


def _scaled_arguments(x, p):
    # 2 N_d psi^2 / sigma_e^2 is non-central chi-square with 2 N_d dof
    scale = p.half_dof / p.error_variance
    return scale * p.noncentrality, scale * x, scale


def ncx2_cdf(x, p: NcChiSqParams):
    """Pr[psi^2 <= x] for the normalized energy on the independent subcarriers."""
    _check_finite("x", x)
    if x < 0:
        raise DomainError(f"ncx2_cdf needs x >= 0, got {x}")
    if x == 0:
        return 0.0
    mean, half_z, _ = _scaled_arguments(x, p)
    j, w = _poisson_weights(mean)
    value = math.fsum(w * special.gammainc(p.half_dof + j, half_z))
    return min(1.0, max(0.0, value))


def ncx2_pdf(x, p: NcChiSqParams):
    """Density of psi^2 at x (derivative of ncx2_cdf)."""
    if x < 0:
        raise DomainError(f"ncx2_pdf needs x >= 0, got {x}")
    mean, half_z, scale = _scaled_arguments(x, p)
    if half_z == 0:
        return scale * math.exp(-mean) if p.half_dof == 1 else 0.0
    j, w = _poisson_weights(mean)
    shape = p.half_dof + j
    log_gamma_pdf = (shape - 1.0) * math.log(half_z) - half_z - special.gammaln(shape)
    return float(scale * math.fsum(w * np.exp(log_gamma_pdf)))


def ncx2_quantile(eps, p: NcChiSqParams):
    """x with ncx2_cdf(x, p) = eps, 0 < eps < 1."""
    _check_finite("eps", eps)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"quantile level must lie in (0,1), got {eps}")

    hi = p.mean + 10.0 * math.sqrt(p.variance)
    while ncx2_cdf(hi, p) < eps:
        hi *= 2.0
    lo = 0.0
    x = optimize.brentq(lambda t: ncx2_cdf(t, p) - eps, lo, hi, xtol=1e-300, rtol=1e-14, maxiter=300)

    # Newton refinement in CDF space
    for _ in range(4):
        residual = ncx2_cdf(x, p) - eps
        if abs(residual) <= QUANTILE_CDF_TOLERANCE:
            break
        density = ncx2_pdf(x, p)
        if not density > 0:
            break
        candidate = x - residual / density
        if candidate <= 0:
            break
        x = candidate
    return float(x)


def bessel_j0(x):
    """Bessel function of the first kind, order zero."""
    return float(special.j0(x))


def quad_adaptive(f, a, b, tol, max_subdivisions=200):
    """Integral of f over [a, b] to absolute tolerance tol.

    Raises ConvergenceError once the subdivision budget is spent without
    meeting the tolerance.
    """
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    if a > b:
        raise DomainError(f"need a <= b, got [{a}, {b}]")
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(f, a, b, epsabs=tol, epsrel=0.0, limit=max_subdivisions)
        except integrate.IntegrationWarning as exc:
            raise ConvergenceError(f"quadrature on [{a}, {b}] did not converge: {exc}") from exc
    if not math.isfinite(value):
        raise ConvergenceError(f"quadrature on [{a}, {b}] produced {value}")
    if abserr > tol:
        logger.warning(f"quadrature error estimate {abserr:.3g} exceeds tolerance {tol:.3g}")
    return float(value)
