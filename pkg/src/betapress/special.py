"""Gamma-family special functions and the mean/precision beta law.

log-gamma, digamma and trigamma share one scheme: shift the argument
upward with the recurrence until it reaches ``_SHIFT_TO`` and then sum the
asymptotic (Stirling-type) series.  Everything accepts scalars or arrays
and returns the same shape; scalar input gives a Python float.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "BetaParams",
    "beta_log_density",
    "beta_sample",
    "digamma",
    "log_gamma",
    "random_stream",
    "trigamma",
]

_SHIFT_TO = 10.0
_HALF_LOG_2PI = 0.91893853320467274178

# B_{2k} / (2k (2k - 1)) for the log-gamma series
_LGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
# B_{2k} / (2k) for digamma
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2k} for trigamma
_TRIGAMMA_SERIES = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _positive_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        bad = arr[~(arr > 0)].ravel()[0]
        raise DomainError(f"{name} requires x > 0, got {bad!r}")
    return arr


def _shift(arr):
    """Return (z, mask per step) with z >= _SHIFT_TO."""
    z = arr.copy()
    steps = []
    while True:
        below = z < _SHIFT_TO
        if not below.any():
            return z, steps
        steps.append((below, z.copy()))
        z = np.where(below, z + 1.0, z)


def _out(result, x):
    if np.ndim(x) == 0:
        return float(result)
    return result


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    arr = _positive_array(x, "log_gamma")
    z, steps = _shift(arr)
    # product of the shifted-over factors, folded into one log at the end
    prod = np.ones(z.shape, dtype=np.longdouble)
    for below, zk in steps:
        prod = np.where(below, prod * zk, prod)
    zinv = 1.0 / z
    zinv2 = zinv * zinv
    series = np.zeros_like(z)
    for coef in reversed(_LGAMMA_SERIES):
        series = series * zinv2 + coef
    series *= zinv
    result = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - np.log(prod).astype(float)
    return _out(result, x)


def digamma(x):
    """Logarithmic derivative of the gamma function, psi(x), for x > 0."""
    arr = _positive_array(x, "digamma")
    z, steps = _shift(arr)
    correction = np.zeros(z.shape, dtype=np.longdouble)
    for below, zk in reversed(steps):
        correction = np.where(below, correction + 1.0 / zk.astype(np.longdouble), correction)
    zinv = 1.0 / z
    zinv2 = zinv * zinv
    series = np.zeros_like(z)
    for coef in reversed(_DIGAMMA_SERIES):
        series = series * zinv2 + coef
    series *= zinv2
    with np.errstate(over="ignore"):
        # subnormal arguments send the correction to infinity
        result = np.log(z) - 0.5 * zinv - series - correction.astype(float)
    return _out(result, x)


def trigamma(x):
    """Derivative of digamma, psi'(x), for x > 0."""
    arr = _positive_array(x, "trigamma")
    z, steps = _shift(arr)
    correction = np.zeros(z.shape, dtype=np.longdouble)
    for below, zk in reversed(steps):
        zl = zk.astype(np.longdouble)
        correction = np.where(below, correction + 1.0 / (zl * zl), correction)
    zinv = 1.0 / z
    zinv2 = zinv * zinv
    series = np.zeros_like(z)
    for coef in reversed(_TRIGAMMA_SERIES):
        series = series * zinv2 + coef
    series *= zinv2 * zinv
    # tail summed in extended precision; the 1/x^2 terms dominate near 0
    with np.errstate(over="ignore"):
        result = ((zinv + 0.5 * zinv2 + series) + correction).astype(float)
    return _out(result, x)


@dataclass(frozen=True)
class BetaParams:
    """Mean ``mu`` in (0, 1) and precision ``phi`` > 0 (scalars or arrays).

    ``Var(y) = mu (1 - mu) / (1 + phi)``.
    """

    mu: object
    phi: object

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if not np.all((mu > 0) & (mu < 1)):
            raise DomainError("mu must lie in the open interval (0, 1)")
        if not np.all(phi > 0):
            raise DomainError("phi must be positive")

    @property
    def variance(self):
        mu = np.asarray(self.mu, dtype=float)
        return _out(mu * (1 - mu) / (1 + np.asarray(self.phi, dtype=float)), self.mu)


def beta_log_density(y, params):
    """Log density of ``y`` under Beta(mu * phi, (1 - mu) * phi)."""
    yy = np.asarray(y, dtype=float)
    if not np.all((yy > 0) & (yy < 1)):
        raise DomainError("beta density is supported on the open interval (0, 1)")
    mu = np.asarray(params.mu, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    a = mu * phi
    b = (1 - mu) * phi
    result = (
        log_gamma(phi)
        - log_gamma(a)
        - log_gamma(b)
        + (a - 1) * np.log(yy)
        + (b - 1) * np.log1p(-yy)
    )
    if np.ndim(result) == 0:
        return float(result)
    return result


def random_stream(seed, *key):
    """Counter-based generator for ``seed`` and an optional integer key path.

    Streams with distinct keys are statistically independent, so replication
    ``r`` can use ``random_stream(seed, r)`` regardless of execution order.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def beta_sample(params, stream, size=None):
    """Draw from the beta law via two independent gamma variates.

    Draws that round to exactly 0 or 1 in double precision are redrawn
    from the same stream, so every returned value lies inside (0, 1).
    """
    mu = np.asarray(params.mu, dtype=float)
    phi = np.asarray(params.phi, dtype=float)
    shape = np.broadcast_shapes(mu.shape, phi.shape) if size is None else size
    a = np.broadcast_to(mu * phi, shape)
    b = np.broadcast_to((1 - mu) * phi, shape)
    out = np.empty(shape)
    todo = np.ones(shape, dtype=bool)
    while todo.any():
        ga = stream.standard_gamma(a[todo])
        gb = stream.standard_gamma(b[todo])
        draw = ga / (ga + gb)
        out[todo] = draw
        ok = (draw > 0) & (draw < 1)
        idx = np.flatnonzero(todo.ravel())
        todo.ravel()[idx[ok]] = False
    if out.ndim == 0:
        return float(out)
    return out
