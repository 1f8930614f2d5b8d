"""Residuals, leverage, PRESS and the P^2 / R^2 model-selection statistics.

Everything here is a pure function of a converged :class:`FitResult`.
PRESS uses the one-step deletion shortcut on the weighted least squares
form of the scoring iteration: regressing ``sqrt(phi w) u1`` on
``sqrt(phi w) J1`` reproduces ``beta_hat``, so the deleted prediction
error of observation ``t`` equals ``r_t / (1 - h_tt)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import links
from .errors import NonPositiveZetaError, SingularInformationError, UnitLeverageError, ZeroSSTError
from .estimation import fit_null
from .special import digamma, trigamma

__all__ = [
    "ALPHA",
    "DELTA",
    "DiagnosticsReport",
    "combined_residual",
    "deleted_prediction_error",
    "diagnose",
    "flag_components",
    "lambda_intensity",
    "leverage",
    "one_step_deleted_beta",
    "p2_family",
    "penalized",
    "press",
    "press_combined",
    "press_plot_data",
    "r2_family",
    "score_component_a",
    "sst_deleted",
    "sst_total",
    "working_response",
    "weighted_residual_1",
    "zeta",
]

# weights of the penalized likelihood-ratio R^2
ALPHA = 0.4
DELTA = 1.0

_UNIT_LEVERAGE_TOL = 1e-12
_RANK_TOL = 1e-12


def _pick(vec, t):
    return vec if t is None else float(vec[t])


def weighted_residual_1(fit, t=None):
    """``(y*_t - mu*_t) / sqrt(v_t)`` at the estimates (all t if ``t`` is None)."""
    s = fit.state
    r = (s.ystar - s.mustar) / np.sqrt(s.v)
    return _pick(r, t)


def zeta(mu, phi):
    """Variance of ``(y* - mu*) + a`` under the fitted law."""
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return (
        (1.0 + mu) ** 2 * trigamma(mu * phi)
        + mu**2 * trigamma((1.0 - mu) * phi)
        - trigamma(phi)
    )


def score_component_a(y, mu, phi):
    """Precision-score contribution ``a_t``."""
    y = np.asarray(y, dtype=float)
    ystar = np.log(y) - np.log1p(-y)
    mustar = digamma(mu * phi) - digamma((1.0 - mu) * phi)
    return mu * (ystar - mustar) + np.log1p(-y) - digamma((1.0 - mu) * phi) + digamma(phi)


def combined_residual(fit, t=None):
    """``((y*_t - mu*_t) + a_t) / sqrt(zeta_t)`` at the estimates."""
    s = fit.state
    z = zeta(s.mu, s.phi)
    bad = ~(z > 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonPositiveZetaError(row, float(z[row]))
    r = ((s.ystar - s.mustar) + s.a) / np.sqrt(z)
    return _pick(r, t)


def _weighted_design(fit):
    return np.sqrt(fit.weights)[:, None] * fit.state.J1


def _weighted_qr(fit):
    # thin QR keeps the trace at k without squaring the condition number
    q, r = np.linalg.qr(_weighted_design(fit))
    diag = np.abs(np.diag(r))
    if not diag.min() > _RANK_TOL * diag.max():
        raise SingularInformationError("mean information matrix is singular; check the predictor Jacobian rank")
    return q, r


def leverage(fit):
    """Diagonal of ``H* = (Phi W)^1/2 J1 (J1' Phi W J1)^-1 J1' (Phi W)^1/2``."""
    q, _ = _weighted_qr(fit)
    return np.einsum("ij,ij->i", q, q)


def _deletion_factor(h, t=None):
    idx = range(h.size) if t is None else [t]
    for i in idx:
        if 1.0 - h[i] <= _UNIT_LEVERAGE_TOL:
            raise UnitLeverageError(i)
    return 1.0 - h


def one_step_deleted_beta(fit, t):
    """One-step approximation of beta estimated without observation ``t``."""
    q, r_factor = _weighted_qr(fit)
    h = np.einsum("ij,ij->i", q, q)
    one_minus_h = _deletion_factor(h, t)
    r = weighted_residual_1(fit)
    # K^-1 J1_t sqrt(phi_t w_t) = R^-1 q_t
    direction = linalg.solve_triangular(r_factor, q[t])
    return fit.beta_hat - direction * r[t] / one_minus_h[t]


def deleted_prediction_error(fit, t):
    """``sqrt(phi_t w_t) (u1_t - J1_t' beta_(t))`` computed from the deleted beta."""
    beta_t = one_step_deleted_beta(fit, t)
    return float(np.sqrt(fit.weights[t]) * (fit.u1[t] - fit.state.J1[t] @ beta_t))


def _press_from(resid, h):
    comps = (resid / _deletion_factor(h)) ** 2
    return float(np.sum(comps)), comps


def press(fit):
    """``sum_t (r_t / (1 - h_tt))^2`` with weighted residuals; returns (total, components)."""
    return _press_from(weighted_residual_1(fit), leverage(fit))


def press_combined(fit):
    """PRESS built from the combined residuals; returns (total, components)."""
    return _press_from(combined_residual(fit), leverage(fit))


SST_RESPONSES = ("predictor", "linearized")


def working_response(fit, kind="predictor"):
    """Working response used for the total sum of squares.

    ``"linearized"`` is the stored ``u1 = J1 beta + W^-1 T (y* - mu*)``;
    ``"predictor"`` replaces ``J1 beta`` by the fitted predictor ``eta1``.
    They coincide for predictors that are linear in beta without a
    parameter-free term.
    """
    if kind == "linearized":
        return fit.u1
    if kind == "predictor":
        s = fit.state
        return s.eta1 + s.T * (s.ystar - s.mustar) / s.w
    raise ValueError(f"unknown working response {kind!r}; expected one of {SST_RESPONSES}")


def sst_total(fit, response="predictor"):
    """``sum (ycheck_t - mean ycheck)^2`` with ``ycheck = sqrt(phi w) * working response``."""
    ycheck = np.sqrt(fit.weights) * working_response(fit, response)
    return float(np.sum((ycheck - ycheck.mean()) ** 2))


def sst_deleted(fit, response="predictor"):
    """``(n / (n - p))^2`` times :func:`sst_total`, with ``p = k + q``."""
    n = fit.n
    p = fit.model.k + fit.model.q
    return (n / (n - p)) ** 2 * sst_total(fit, response)


def penalty_counts(model, penalty="covariates"):
    """Return the (k1, q1) used by the penalized coefficients.

    ``"covariates"`` counts the distinct covariates referenced by each
    predictor, so an intercept-only precision submodel gives ``q1 = 0``.
    ``"parameters"`` counts parameters instead (``k1 = k``, ``q1 = q``),
    i.e. the number of regressors including intercepts for linear
    predictors.
    """
    if penalty == "covariates":
        return model.mean.covariate_count, model.precision.covariate_count
    if penalty == "parameters":
        return model.k, model.q
    raise ValueError(f"unknown penalty count mode {penalty!r}")


def penalized(value, n, k1, q1):
    """``1 - (1 - value)(n - 1)/(n - (k1 + q1))``; NaN when the denominator is not positive."""
    denom = n - (k1 + q1)
    if denom <= 0:
        return float("nan")
    return 1.0 - (1.0 - value) * (n - 1) / denom


def p2_family(fit, penalty="covariates", response="predictor"):
    """``(P2, P2_c, P2_bg, P2_bg_c)`` from both PRESS versions."""
    sst = sst_deleted(fit, response)
    if not sst > 0:
        raise ZeroSSTError("working response has zero total sum of squares")
    n = fit.n
    k1, q1 = penalty_counts(fit.model, penalty)
    p2 = 1.0 - press(fit)[0] / sst
    p2_bg = 1.0 - press_combined(fit)[0] / sst
    return p2, penalized(p2, n, k1, q1), p2_bg, penalized(p2_bg, n, k1, q1)


def r2_fc(fit):
    """Squared correlation between g(y) and the fitted mean predictor."""
    gy = links.link_value(fit.model.mean_link, fit.data.response)
    eta = fit.state.eta1
    if np.ptp(eta) == 0 or np.ptp(gy) == 0:
        return 0.0
    return float(np.corrcoef(gy, eta)[0, 1] ** 2)


def r2_family(fit, null_fit, penalty="covariates", alpha=ALPHA, delta=DELTA):
    """``(R2_FC, R2_FC_c, R2_LR, R2_LR_c)``; ``null_fit`` is the intercept-only fit."""
    n = fit.n
    k1, q1 = penalty_counts(fit.model, penalty)
    fc = r2_fc(fit)
    lr = 1.0 - float(np.exp((2.0 / n) * (null_fit.log_lik - fit.log_lik)))
    denom = n - (1.0 + alpha) * k1 - (1.0 - alpha) * q1
    lr_c = 1.0 - (1.0 - lr) * ((n - 1) / denom) ** delta if denom > 0 else float("nan")
    return fc, penalized(fc, n, k1, q1), lr, lr_c


def lambda_intensity(fit):
    """Ratio of the largest to the smallest fitted precision."""
    phi = fit.phi_hat
    return float(np.max(phi) / np.min(phi))


def press_plot_data(fit, factor=3.0):
    """Per-observation combined-PRESS components against ``factor`` times their mean.

    Returns a dict of columns ``t`` (1-based), ``component``, ``threshold``
    and ``flagged``.
    """
    _, comps = press_combined(fit)
    threshold, flagged = flag_components(comps, factor)
    return {
        "t": np.arange(1, comps.size + 1),
        "component": comps,
        "threshold": np.full(comps.size, threshold),
        "flagged": flagged,
    }


def flag_components(components, factor=3.0):
    """Return ``(threshold, flags)`` with threshold ``factor * mean(components)``."""
    comps = np.asarray(components, dtype=float)
    threshold = factor * float(np.sum(comps)) / comps.size
    return threshold, comps > threshold


@dataclass
class DiagnosticsReport:
    """The full residual / PRESS / P^2 / R^2 summary of one fit."""

    n: int
    k1: int
    q1: int
    p: int
    penalty: str
    response: str
    press: float
    press_combined: float
    sst: float
    sst_deleted: float
    P2: float
    P2_c: float
    P2_bg: float
    P2_bg_c: float
    R2_FC: float
    R2_FC_c: float
    R2_LR: float
    R2_LR_c: float
    lambda_: float
    log_lik: float
    log_lik_null: float
    converged: bool
    threshold: float
    y: np.ndarray = field(repr=False)
    mu_hat: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)
    r_beta: np.ndarray = field(repr=False)
    r_beta_gamma: np.ndarray = field(repr=False)
    leverage: np.ndarray = field(repr=False)
    press_components: np.ndarray = field(repr=False)
    press_components_combined: np.ndarray = field(repr=False)
    flagged: np.ndarray = field(repr=False)

    STATISTICS = ("P2", "P2_c", "P2_bg", "P2_bg_c", "R2_LR", "R2_LR_c", "R2_FC", "R2_FC_c")

    def statistics(self):
        return {name: getattr(self, name) for name in self.STATISTICS}

    def to_dict(self):
        """Flat JSON-ready summary (scalars only)."""
        out = {
            "n": int(self.n),
            "k1": int(self.k1),
            "q1": int(self.q1),
            "p": int(self.p),
            "penalty": self.penalty,
            "sst_response": self.response,
            "PRESS": self.press,
            "PRESS_bg": self.press_combined,
            "SST": self.sst,
            "SST_deleted": self.sst_deleted,
            "lambda": self.lambda_,
            "log_lik": self.log_lik,
            "log_lik_null": self.log_lik_null,
            "converged": bool(self.converged),
            "press_threshold": self.threshold,
            "flagged": [int(t) + 1 for t in np.flatnonzero(self.flagged)],
        }
        out.update({k: float(v) for k, v in self.statistics().items()})
        return out

    CSV_COLUMNS = (
        "t", "y", "mu_hat", "phi_hat", "r_beta", "r_beta_gamma",
        "leverage", "press_component", "press_bg_component", "flagged",
    )

    def rows(self):
        """Per-observation rows matching ``CSV_COLUMNS``."""
        for i in range(self.n):
            yield (
                i + 1,
                float(self.y[i]),
                float(self.mu_hat[i]),
                float(self.phi_hat[i]),
                float(self.r_beta[i]),
                float(self.r_beta_gamma[i]),
                float(self.leverage[i]),
                float(self.press_components[i]),
                float(self.press_components_combined[i]),
                int(bool(self.flagged[i])),
            )


def diagnose(fit, null_fit=None, penalty="covariates", response="predictor"):
    """Compute every statistic for ``fit``.

    The null fit for the likelihood-ratio R^2 is the intercept-only model in
    both submodels with the same links; it is fitted here unless supplied.
    ``penalty`` picks the (k1, q1) convention of :func:`penalty_counts` and
    ``response`` the working response of :func:`working_response`.
    """
    if null_fit is None:
        null_fit = fit_null(fit.data, fit.model.mean_link, fit.model.precision_link)
    h = leverage(fit)
    r_b = weighted_residual_1(fit)
    r_bg = combined_residual(fit)
    press_total, comps = _press_from(r_b, h)
    press_bg_total, comps_bg = _press_from(r_bg, h)
    sst = sst_total(fit, response)
    sst_del = sst_deleted(fit, response)
    if not sst_del > 0:
        raise ZeroSSTError("working response has zero total sum of squares")
    n = fit.n
    k1, q1 = penalty_counts(fit.model, penalty)
    p2 = 1.0 - press_total / sst_del
    p2_bg = 1.0 - press_bg_total / sst_del
    fc, fc_c, lr, lr_c = r2_family(fit, null_fit, penalty)
    threshold, flagged = flag_components(comps_bg)
    return DiagnosticsReport(
        n=n,
        k1=k1,
        q1=q1,
        p=fit.model.k + fit.model.q,
        penalty=penalty,
        response=response,
        press=press_total,
        press_combined=press_bg_total,
        sst=sst,
        sst_deleted=sst_del,
        P2=p2,
        P2_c=penalized(p2, n, k1, q1),
        P2_bg=p2_bg,
        P2_bg_c=penalized(p2_bg, n, k1, q1),
        R2_FC=fc,
        R2_FC_c=fc_c,
        R2_LR=lr,
        R2_LR_c=lr_c,
        lambda_=lambda_intensity(fit),
        log_lik=fit.log_lik,
        log_lik_null=null_fit.log_lik,
        converged=bool(fit.converged and null_fit.converged),
        threshold=threshold,
        y=fit.data.response.copy(),
        mu_hat=fit.mu_hat.copy(),
        phi_hat=fit.phi_hat.copy(),
        r_beta=r_b,
        r_beta_gamma=r_bg,
        leverage=h,
        press_components=comps,
        press_components_combined=comps_bg,
        flagged=flagged,
    )
