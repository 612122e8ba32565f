"""Float reference functions: error function, normal CDF and both GELU forms."""

import math
from functools import lru_cache

import numpy as np

SQRT_PI = math.sqrt(math.pi)
SERIES_LIMIT = 3.0
SERIES_TERMS = 120
CF_DEPTH = 80

# piecewise GELU segments: below -3, [-3, -1), [-1, 1), from 1 up
GELU_THRESHOLDS = (-3.0, -1.0, 1.0)
GELU_MID_SLOPE = 0.8413
GELU_OFFSET = 0.1587

GELU_POLY_DEGREE = 12
GELU_POLY_HALF_WIDTH = 5.0


def _erf_series(z: np.ndarray) -> np.ndarray:
    # all-positive series, stable for 0 <= z < 3
    term = z.copy()
    total = z.copy()
    z2 = z * z
    for n in range(1, SERIES_TERMS):
        term = term * 2.0 * z2 / (2 * n + 1)
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return 2.0 / SQRT_PI * np.exp(-z2) * total


def _erfc_fraction(z: np.ndarray) -> np.ndarray:
    # continued fraction with partial numerators k/2, evaluated bottom-up; z >= 3
    t = z.copy()
    for k in range(CF_DEPTH, 0, -1):
        t = z + (k / 2.0) / t
    return np.exp(-z * z) / SQRT_PI / t


def _erf_erfc(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    erf_a = np.empty_like(a)
    erfc_a = np.empty_like(a)
    small = a < SERIES_LIMIT
    if np.any(small):
        erf_a[small] = _erf_series(a[small])
        erfc_a[small] = 1.0 - erf_a[small]
    if np.any(~small):
        erfc_a[~small] = _erfc_fraction(a[~small])
        erf_a[~small] = 1.0 - erfc_a[~small]
    return np.sign(x) * erf_a, np.where(x < 0, 2.0 - erfc_a, erfc_a), erfc_a


def erf(x) -> np.ndarray:
    return _erf_erfc(x)[0]


def erfc(x) -> np.ndarray:
    return _erf_erfc(x)[1]


def norm_cdf(x) -> np.ndarray:
    """Standard normal CDF; the lower tail goes through erfc to keep precision."""
    x = np.asarray(x, dtype=np.float64)
    z = x / math.sqrt(2.0)
    _, _, erfc_abs = _erf_erfc(z)
    return np.where(x < 0, 0.5 * erfc_abs, 1.0 - 0.5 * erfc_abs)


def gelu_exact(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * norm_cdf(x)


def gelu_piecewise(x) -> np.ndarray:
    """Four-segment linear GELU surrogate, discontinuous at -3, -1 and 1."""
    x = np.asarray(x, dtype=np.float64)
    lo, mid, hi = GELU_THRESHOLDS
    return np.select(
        [x < lo, x < mid, x < hi],
        [np.zeros_like(x), 0.5 * x, GELU_MID_SLOPE * x + GELU_OFFSET],
        default=x - GELU_OFFSET,
    )


def gelu_reference(x, mode: str = "exact") -> np.ndarray:
    """GELU in ``exact`` (x * Phi(x)) or piecewise form (``paper_piecewise``, alias ``piecewise``).

    >>> float(gelu_reference(0.0, "piecewise"))
    0.1587
    """
    if mode == "exact":
        return gelu_exact(x)
    if mode in ("paper_piecewise", "piecewise"):
        return gelu_piecewise(x)
    raise ValueError(f"unknown GELU mode {mode!r}")


@lru_cache(maxsize=1)
def gelu_polynomial_coefficients() -> tuple:
    """Least-squares fit of exact GELU on [-5, 5] in the variable u = x / 5, lowest order first."""
    grid = np.linspace(-GELU_POLY_HALF_WIDTH, GELU_POLY_HALF_WIDTH, 2561)
    fit = np.polynomial.Polynomial.fit(grid, gelu_exact(grid), GELU_POLY_DEGREE,
                                       domain=[-GELU_POLY_HALF_WIDTH, GELU_POLY_HALF_WIDTH])
    return tuple(float(c) for c in fit.coef)


def gelu_polynomial(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.polynomial.polynomial.polyval(x / GELU_POLY_HALF_WIDTH, gelu_polynomial_coefficients())
