"""Bessel and Hankel functions of order 0 and 1, the 2D Helmholtz Green
function, and a direct discrete Fourier transform.

Real-argument Bessel functions are evaluated on three branches:

* ``x < 8``: ascending power series (Horner form in ``z = x**2 / 4``),
* ``8 <= x < 25``: Miller backward recurrence normalised by
  ``J0 + 2 * sum(J_2k) = 1``, with Y0 and Y1 from the Neumann series,
* ``x >= 25``: Hankel asymptotic expansion with phase functions P and Q.

Each branch is accurate to roughly 1e-14 relative to ``|H_n(x)|`` on its
interval; neighbouring branches agree to better than 1e-12 around the
crossovers. All routines accept scalars or numpy arrays.
"""

import math

import numpy as np

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286061

SERIES_MAX = 8.0
ASYMPTOTIC_MIN = 25.0
Y_MIN_ARGUMENT = 1e-300

_N_SERIES = 28
_N_ASYMPTOTIC = 30


def _series_coefficients():
    j0 = np.empty(_N_SERIES)
    j1 = np.empty(_N_SERIES)
    y0 = np.empty(_N_SERIES)
    y1 = np.empty(_N_SERIES)
    harmonic = 0.0
    for k in range(_N_SERIES):
        if k > 0:
            harmonic += 1.0 / k
        fk = math.factorial(k)
        sign = -1.0 if k % 2 else 1.0
        j0[k] = sign / (fk * fk)
        j1[k] = sign / (fk * fk * (k + 1))
        # Y0 = (2/pi) (ln(x/2) + gamma) J0 - (2/pi) sum (-z)^k H_k / (k!)^2
        y0[k] = -sign * harmonic / (fk * fk)
        # digamma(k+1) + digamma(k+2) = H_k + H_{k+1} - 2 gamma
        y1[k] = sign * (2.0 * harmonic + 1.0 / (k + 1)) / (fk * fk * (k + 1))
    return j0[::-1].copy(), j1[::-1].copy(), y0[::-1].copy(), y1[::-1].copy()


_J0_SER, _J1_SER, _Y0_SER, _Y1_SER = _series_coefficients()


def _horner(coeffs, z):
    out = np.full_like(z, coeffs[0])
    for c in coeffs[1:]:
        out = out * z + c
    return out


def _asymptotic_coefficients(order):
    mu = 4.0 * order * order
    a = [1.0]
    for k in range(1, _N_ASYMPTOTIC):
        a.append(a[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return np.array(a)


_ASYM = {0: _asymptotic_coefficients(0), 1: _asymptotic_coefficients(1)}


def _series_terms(z_max):
    # the k-th term is at most (1 + 2 H_k) z^k / (k!)^2; stop once it is negligible
    term = 1.0
    for k in range(1, _N_SERIES):
        term *= z_max / (k * k)
        if term * (3.0 + 2.0 * math.log(k)) < 1e-18:
            return k + 1
    return _N_SERIES


def _branch_series(x, want_y=True):
    z = 0.25 * x * x
    n = _series_terms(float(z.max()))
    j0 = _horner(_J0_SER[-n:], z)
    j1 = 0.5 * x * _horner(_J1_SER[-n:], z)
    if not want_y:
        return j0, j1, None, None
    log_term = np.log(0.5 * x) + EULER_GAMMA
    y0 = (2.0 / np.pi) * (log_term * j0 + _horner(_Y0_SER[-n:], z))
    y1 = (
        -2.0 / (np.pi * x)
        + (2.0 / np.pi) * log_term * j1
        - (x / (2.0 * np.pi)) * _horner(_Y1_SER[-n:], z)
    )
    return j0, j1, y0, y1


def _odd_weight(m):
    # coefficient of J_m (m odd) in sum_k (-1)^k (J_{2k-1} - J_{2k+1}) / k
    k = (m + 1) // 2
    w = (-1.0) ** k / k
    if m >= 3:
        k = (m - 1) // 2
        w -= (-1.0) ** k / k
    return w


def _branch_recurrence(x):
    start = 2 * (int(0.6 * float(np.max(x))) + 30)
    j_above = np.zeros_like(x)
    j_here = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    sum_y0 = np.zeros_like(x)
    sum_y1 = np.zeros_like(x)
    j1 = None
    two_over_x = 2.0 / x
    for n in range(start, 0, -1):
        if n % 2 == 0:
            k = n // 2
            norm += 2.0 * j_here
            sum_y0 += ((-1.0) ** k / k) * j_here
        else:
            sum_y1 += _odd_weight(n) * j_here
            if n == 1:
                j1 = j_here
        j_above, j_here = j_here, n * two_over_x * j_here - j_above
        if n % 8 == 0 and np.max(np.abs(j_here)) > 1e200:
            scale = np.where(np.abs(j_here) > 1e200, 1e-200, 1.0)
            j_above, j_here = j_above * scale, j_here * scale
            norm, sum_y0, sum_y1 = norm * scale, sum_y0 * scale, sum_y1 * scale
    norm += j_here
    j0 = j_here / norm
    j1 = j1 / norm
    sum_y0 = sum_y0 / norm
    sum_y1 = sum_y1 / norm
    log_term = np.log(0.5 * x) + EULER_GAMMA
    y0 = (2.0 / np.pi) * (log_term * j0 - 2.0 * sum_y0)
    y1 = (2.0 / np.pi) * (-j0 / x + log_term * j1 + sum_y1)
    return j0, j1, y0, y1


def _phase_functions(order, x):
    a = _ASYM[order]
    inv = 1.0 / x
    inv2 = -inv * inv
    p = _horner(a[0::2][::-1], inv2)
    q = inv * _horner(a[1::2][::-1], inv2)
    return p, q


def _branch_asymptotic(x):
    amp = np.sqrt(2.0 / (np.pi * x))
    s, c = np.sin(x), np.cos(x)
    root_half = math.sqrt(0.5)
    # chi0 = x - pi/4 and chi1 = x - 3pi/4
    cos0, sin0 = root_half * (c + s), root_half * (s - c)
    cos1, sin1 = sin0, -cos0
    p0, q0 = _phase_functions(0, x)
    p1, q1 = _phase_functions(1, x)
    j0 = amp * (p0 * cos0 - q0 * sin0)
    y0 = amp * (p0 * sin0 + q0 * cos0)
    j1 = amp * (p1 * cos1 - q1 * sin1)
    y1 = amp * (p1 * sin1 + q1 * cos1)
    return j0, j1, y0, y1


def _check_argument(x, positive):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Bessel argument must be finite")
    if positive:
        if np.any(arr < Y_MIN_ARGUMENT):
            raise DomainError(
                "Bessel function of the second kind needs x >= %g (logarithmic "
                "singularity at 0)" % Y_MIN_ARGUMENT
            )
    elif np.any(arr < 0):
        raise DomainError("Bessel argument must be non-negative")
    return arr


def _check_order(order):
    if order not in (0, 1) or isinstance(order, bool):
        raise DomainError("only orders 0 and 1 are supported, got %r" % (order,))


def _evaluate(arr, want_y):
    """Return (J0, J1, Y0, Y1) on a flat float array; Y is None if not wanted."""
    flat = arr.ravel()
    j0 = np.empty_like(flat)
    j1 = np.empty_like(flat)
    y0 = np.empty_like(flat) if want_y else None
    y1 = np.empty_like(flat) if want_y else None
    small = flat < SERIES_MAX
    large = flat >= ASYMPTOTIC_MIN
    mid = ~(small | large)
    for mask, branch in ((small, _branch_series), (mid, _branch_recurrence), (large, _branch_asymptotic)):
        if not np.any(mask):
            continue
        whole = bool(mask.all())
        xs = flat if whole else flat[mask]
        if branch is _branch_series:
            a, b, c, d = branch(xs, want_y)
        else:
            a, b, c, d = branch(xs)
        if whole:
            mask = slice(None)
        j0[mask], j1[mask] = a, b
        if want_y:
            y0[mask], y1[mask] = c, d
    shape = arr.shape
    out = (j0.reshape(shape), j1.reshape(shape))
    if want_y:
        out += (y0.reshape(shape), y1.reshape(shape))
    else:
        out += (None, None)
    return out


def _unwrap(value, like):
    if np.ndim(like) == 0:
        return value.item()
    return value


def bessel_j(order, x):
    """Bessel function of the first kind J_order(x) for order 0 or 1, x >= 0."""
    _check_order(order)
    arr = _check_argument(x, positive=False)
    j0, j1, _, _ = _evaluate(np.atleast_1d(arr), want_y=False)
    return _unwrap((j0 if order == 0 else j1).reshape(arr.shape), x)


def bessel_y(order, x):
    """Bessel function of the second kind Y_order(x) for order 0 or 1, x > 0."""
    _check_order(order)
    arr = _check_argument(x, positive=True)
    _, _, y0, y1 = _evaluate(np.atleast_1d(arr), want_y=True)
    return _unwrap((y0 if order == 0 else y1).reshape(arr.shape), x)


def bessel_jy(x):
    """Return ``(J0, J1, Y0, Y1)`` evaluated together at ``x > 0``."""
    arr = _check_argument(x, positive=True)
    vals = _evaluate(np.atleast_1d(arr), want_y=True)
    return tuple(_unwrap(v.reshape(arr.shape), x) for v in vals)


def hankel1(order, x):
    """Hankel function of the first kind, ``J_order(x) + 1j * Y_order(x)``."""
    _check_order(order)
    arr = _check_argument(x, positive=True)
    j0, j1, y0, y1 = _evaluate(np.atleast_1d(arr), want_y=True)
    if order == 0:
        h = j0 + 1j * y0
    else:
        h = j1 + 1j * y1
    return _unwrap(h.reshape(arr.shape), x)


def hankel1_0(x):
    """H0^(1)(x) for an array of positive arguments, without domain checks.

    Hot path for matrix assembly; callers guarantee ``x > 0``.
    """
    arr = np.asarray(x, dtype=float)
    j0, _, y0, _ = _evaluate(np.atleast_1d(arr), want_y=True)
    return (j0 + 1j * y0).reshape(arr.shape)


def wavenumber(wavelength):
    """Free-space wavenumber ``2 pi / wavelength``."""
    if not wavelength > 0 or not math.isfinite(wavelength):
        raise DomainError("wavelength must be positive and finite")
    return 2.0 * math.pi / wavelength


def green2d(k, r):
    """Outgoing 2D Helmholtz Green function ``-(i/4) H0^(1)(k r)``."""
    if not k > 0:
        raise DomainError("wavenumber must be positive")
    arr = np.asarray(r, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("Green function is singular at r = 0")
    return -0.25j * hankel1(0, k * r)


def dft(sequence):
    """Unnormalised discrete Fourier transform by direct O(P^2) summation.

    ``X[j] = sum_n x[n] exp(-2 pi i j n / P)``.
    """
    x = np.asarray(sequence, dtype=complex)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("dft needs a non-empty one-dimensional sequence")
    n = x.size
    idx = np.arange(n)
    phase = np.outer(idx, idx) % n
    kernel = np.exp(-2j * np.pi * phase / n)
    return kernel @ x


def idft(spectrum):
    """Inverse of :func:`dft` (carries the 1/P factor)."""
    x = np.asarray(spectrum, dtype=complex)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("idft needs a non-empty one-dimensional sequence")
    n = x.size
    idx = np.arange(n)
    phase = np.outer(idx, idx) % n
    kernel = np.exp(2j * np.pi * phase / n)
    return (kernel @ x) / n
