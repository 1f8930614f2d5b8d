"""Link functions for the mean and precision submodels.

Each link is a strictly increasing map; ``link_deriv`` is dg/dm so the
diagonal scale factors 1/g'(mu) and 1/h'(phi) stay positive.
"""

from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "LinkKind",
    "MEAN_LINKS",
    "PRECISION_LINKS",
    "link_deriv",
    "link_inverse",
    "link_value",
]


class LinkKind(str, Enum):
    LOGIT = "logit"
    LOGLOG = "loglog"
    LOG = "log"
    SQRT = "sqrt"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown link {name!r}; expected one of {known}") from None


MEAN_LINKS = frozenset({LinkKind.LOGIT, LinkKind.LOGLOG})
PRECISION_LINKS = frozenset({LinkKind.LOG, LinkKind.SQRT, LinkKind.IDENTITY})


def _scalar_or_array(result, x):
    return float(result) if np.ndim(x) == 0 else result


def _check_domain(kind, m):
    if kind in MEAN_LINKS:
        ok = (m > 0) & (m < 1)
        where = "(0, 1)"
    elif kind is LinkKind.LOG:
        ok = m > 0
        where = "(0, inf)"
    elif kind is LinkKind.SQRT:
        ok = m >= 0
        where = "[0, inf)"
    else:
        ok = np.isfinite(m)
        where = "the real line"
    if not np.all(ok):
        raise DomainError(f"{kind.value} link is defined on {where}")


def link_value(kind, m):
    """eta = g(m)."""
    kind = LinkKind.parse(kind)
    arr = np.asarray(m, dtype=float)
    _check_domain(kind, arr)
    if kind is LinkKind.LOGIT:
        out = np.log(arr) - np.log1p(-arr)
    elif kind is LinkKind.LOGLOG:
        out = -np.log(-np.log(arr))
    elif kind is LinkKind.LOG:
        out = np.log(arr)
    elif kind is LinkKind.SQRT:
        out = np.sqrt(arr)
    else:
        out = arr.copy()
    return _scalar_or_array(out, m)


def link_inverse(kind, eta):
    """m such that g(m) = eta."""
    kind = LinkKind.parse(kind)
    arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("link inverse needs a finite predictor")
    if kind is LinkKind.LOGIT:
        # numerically symmetric form of 1 / (1 + exp(-eta))
        e = np.exp(-np.abs(arr))
        out = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    elif kind is LinkKind.LOGLOG:
        with np.errstate(over="ignore"):
            out = np.exp(-np.exp(-arr))
    elif kind is LinkKind.LOG:
        # overflow gives inf, which callers reject as an inadmissible precision
        with np.errstate(over="ignore"):
            out = np.exp(arr)
    elif kind is LinkKind.SQRT:
        if np.any(arr < 0):
            raise DomainError("sqrt link inverse is defined for eta >= 0")
        out = arr * arr
    else:
        out = arr.copy()
    return _scalar_or_array(out, eta)


def link_deriv(kind, m):
    """dg/dm evaluated at m."""
    kind = LinkKind.parse(kind)
    arr = np.asarray(m, dtype=float)
    _check_domain(kind, arr)
    if kind is LinkKind.LOGIT:
        out = 1.0 / (arr * (1.0 - arr))
    elif kind is LinkKind.LOGLOG:
        out = -1.0 / (arr * np.log(arr))
    elif kind is LinkKind.LOG:
        out = 1.0 / arr
    elif kind is LinkKind.SQRT:
        if np.any(arr == 0):
            raise DomainError("sqrt link derivative is unbounded at 0")
        out = 0.5 / np.sqrt(arr)
    else:
        out = np.ones_like(arr)
    return _scalar_or_array(out, m)
