"""Maximum likelihood for beta regression with mean and precision submodels.

The model is ``g(mu_t) = f1(x_t; beta)`` and ``h(phi_t) = f2(z_t; gamma)``.
Each sweep tries a joint Fisher-scoring step on ``(beta, gamma)`` with the
full information matrix and falls back to alternating block steps for
``beta`` and ``gamma`` when the joint step finds no ascent.  A step is
halved whenever it lowers the log-likelihood or leaves the admissible
region (predictor undefined, ``mu`` outside (0, 1), ``phi <= 0``).
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import links
from .errors import (
    BetaPressError,
    ConfigError,
    DomainError,
    EvaluationDomainError,
    InadmissibleParameterError,
    NoAdmissibleStartError,
    SingularInformationError,
)
from .formula import PredictorSpec, parse_formula
from .links import LinkKind
from .special import digamma, log_gamma, trigamma

__all__ = [
    "FitOptions",
    "FitResult",
    "ModelSpec",
    "WorkingState",
    "fisher_information",
    "fit",
    "log_likelihood",
    "score",
    "spd_solve",
    "starting_values",
    "working_state",
]

logger = logging.getLogger(__name__)

_INADMISSIBLE = (EvaluationDomainError, InadmissibleParameterError, DomainError)


@dataclass(frozen=True)
class ModelSpec:
    """Predictors and links of the mean and precision submodels."""

    mean: PredictorSpec
    mean_link: LinkKind
    precision: PredictorSpec
    precision_link: LinkKind

    def __post_init__(self):
        mean_link = LinkKind.parse(self.mean_link)
        precision_link = LinkKind.parse(self.precision_link)
        if mean_link not in links.MEAN_LINKS:
            raise ConfigError(f"{mean_link.value} is not a mean link")
        if precision_link not in links.PRECISION_LINKS:
            raise ConfigError(f"{precision_link.value} is not a precision link")
        object.__setattr__(self, "mean_link", mean_link)
        object.__setattr__(self, "precision_link", precision_link)

    @classmethod
    def from_formulas(cls, mean, precision=None, mean_link="logit", precision_link="log", schema=None):
        """Build a model from formula strings; precision defaults to ``g1``."""
        return cls(
            parse_formula(mean, schema, prefix="b"),
            mean_link,
            parse_formula(precision or "g1", schema, prefix="g"),
            precision_link,
        )

    @property
    def k(self):
        return self.mean.param_count

    @property
    def q(self):
        return self.precision.param_count

    def null_model(self):
        """Intercept-only mean and precision with the same links."""
        return ModelSpec.from_formulas("b1", "g1", self.mean_link, self.precision_link)

    def describe(self):
        return {
            "mean": str(self.mean),
            "mean_link": self.mean_link.value,
            "precision": str(self.precision),
            "precision_link": self.precision_link.value,
        }


@dataclass
class FitOptions:
    max_iterations: int = 500
    tol_loglik: float = 1e-10
    tol_score: float = 1e-8
    max_step_halvings: int = 30
    beta_start: object = None
    gamma_start: object = None
    refine_start: bool = True


@dataclass
class WorkingState:
    """Per-observation quantities at one parameter point.

    ``T`` and ``H`` hold the diagonals 1/g'(mu_t) and 1/h'(phi_t).
    """

    beta: np.ndarray
    gamma: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    ystar: np.ndarray
    mustar: np.ndarray
    v: np.ndarray
    w: np.ndarray
    c: np.ndarray
    xi: np.ndarray
    d: np.ndarray
    a: np.ndarray
    T: np.ndarray
    H: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    loglik_terms: np.ndarray
    loglik_scale: float

    @property
    def loglik(self):
        return float(np.sum(self.loglik_terms))


def _columns(data):
    return data.columns


def _eval_predictor(spec, params, data):
    return spec.evaluate(params, data.columns, data.n)


def working_state(model, data, beta, gamma, jacobians=True):
    """Evaluate every per-observation quantity used by score and information.

    Raises
    ------
    EvaluationDomainError
        A predictor is undefined at some row.
    InadmissibleParameterError
        ``mu_t`` leaves (0, 1) or ``phi_t`` is not positive.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    y = data.response
    eta1 = _eval_predictor(model.mean, beta, data)
    eta2 = _eval_predictor(model.precision, gamma, data)
    mu = links.link_inverse(model.mean_link, eta1)
    bad = ~((mu > 0) & (mu < 1))
    if bad.any():
        raise InadmissibleParameterError(np.flatnonzero(bad)[0], "mean outside (0, 1)")
    if model.precision_link is LinkKind.SQRT and np.any(eta2 < 0):
        raise InadmissibleParameterError(np.flatnonzero(eta2 < 0)[0], "negative sqrt-link predictor")
    phi = links.link_inverse(model.precision_link, eta2)
    ap = mu * phi
    bp = (1.0 - mu) * phi
    bad = ~((phi > 0) & np.isfinite(phi) & (ap > 0) & (bp > 0))
    if bad.any():
        raise InadmissibleParameterError(np.flatnonzero(bad)[0], "precision not positive")

    log_y = np.log(y)
    log_1my = np.log1p(-y)
    ystar = log_y - log_1my
    lg_phi, lg_a, lg_b = log_gamma(phi), log_gamma(ap), log_gamma(bp)
    terms = lg_phi - lg_a - lg_b + (ap - 1.0) * log_y + (bp - 1.0) * log_1my
    if not np.all(np.isfinite(terms)):
        raise InadmissibleParameterError(np.flatnonzero(~np.isfinite(terms))[0], "non-finite log-likelihood")
    scale = float(np.sum(np.abs(lg_phi) + np.abs(lg_a) + np.abs(lg_b) + np.abs(ap * log_y) + np.abs(bp * log_1my)))

    psi_a, psi_b, psi_phi = digamma(ap), digamma(bp), digamma(phi)
    tri_a, tri_b, tri_phi = trigamma(ap), trigamma(bp), trigamma(phi)
    mustar = psi_a - psi_b
    v = tri_a + tri_b
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        T = 1.0 / links.link_deriv(model.mean_link, mu)
        H = 1.0 / links.link_deriv(model.precision_link, phi)
        w = phi * v * T * T
        c = phi * (tri_a * mu - tri_b * (1.0 - mu))
        xi = tri_a * mu * mu + tri_b * (1.0 - mu) ** 2 - tri_phi
        d = xi * H * H
        a = mu * (ystar - mustar) + log_1my - psi_b + psi_phi
    finite = np.isfinite(w) & np.isfinite(c) & np.isfinite(d) & np.isfinite(a) & np.isfinite(mustar)
    if not finite.all():
        raise InadmissibleParameterError(np.flatnonzero(~finite)[0], "information not finite")
    if jacobians:
        J1 = model.mean.jacobian(beta, data.columns, data.n)
        J2 = model.precision.jacobian(gamma, data.columns, data.n)
    else:
        J1 = J2 = None
    return WorkingState(
        beta=beta, gamma=gamma, eta1=eta1, eta2=eta2, mu=mu, phi=phi,
        ystar=ystar, mustar=mustar, v=v, w=w, c=c, xi=xi, d=d, a=a,
        T=T, H=H, J1=J1, J2=J2, loglik_terms=terms, loglik_scale=scale,
    )


def log_likelihood(model, data, beta, gamma):
    """Sum of beta log-densities after applying the inverse links."""
    return working_state(model, data, beta, gamma, jacobians=False).loglik


def score(model, data, beta, gamma, state=None):
    """Analytic score ``(U_beta, U_gamma)``."""
    if state is None:
        state = working_state(model, data, beta, gamma)
    u_beta = state.J1.T @ (state.phi * state.T * (state.ystar - state.mustar))
    u_gamma = state.J2.T @ (state.H * state.a)
    return u_beta, u_gamma


def fisher_information(model, data, state):
    """Blocks ``(K_bb, K_bg, K_gg)`` of the expected information."""
    J1, J2 = state.J1, state.J2
    k_bb = J1.T @ ((state.phi * state.w)[:, None] * J1)
    k_bg = J1.T @ ((state.c * state.T * state.H)[:, None] * J2)
    k_gg = J2.T @ (state.d[:, None] * J2)
    # matmul rounding leaves the diagonal blocks asymmetric in the last bit
    return 0.5 * (k_bb + k_bb.T), k_bg, 0.5 * (k_gg + k_gg.T)


def _cholesky(K):
    try:
        return linalg.cho_factor(K, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return None


def spd_solve(K, rhs, what="information"):
    """Solve ``K x = rhs`` for symmetric positive-definite ``K``.

    One ridge of ``1e-10 * trace / dim`` is tried before giving up.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    K = 0.5 * (K + K.T)
    factor = _cholesky(K)
    if factor is None:
        dim = K.shape[0]
        ridge = 1e-10 * np.trace(K) / dim
        if np.isfinite(ridge) and ridge > 0:
            factor = _cholesky(K + ridge * np.eye(dim))
        if factor is None:
            raise SingularInformationError(f"{what} matrix is singular; check the predictor Jacobian rank")
    return linalg.cho_solve(factor, rhs)


# ---------------------------------------------------------------------------
# starting values

_FILL_LADDER = (0.0, 1.0, 0.5, -0.5, -1.0, 2.0, 0.1)


def _anchor_vector(anchor, size, fill):
    vec = np.full(size, fill, dtype=float)
    if anchor is None:
        return vec
    if isinstance(anchor, dict):
        for key, value in anchor.items():
            idx = int(str(key).lstrip("bg")) - 1
            if not 0 <= idx < size:
                raise ConfigError(f"anchor index {key!r} out of range")
            vec[idx] = float(value)
        return vec
    values = list(anchor)
    if len(values) > size:
        raise ConfigError(f"{len(values)} anchors for {size} parameters")
    for i, value in enumerate(values):
        if value is not None:
            vec[i] = float(value)
    return vec


def _anchor_complete(anchor, size):
    if anchor is None:
        return False
    if isinstance(anchor, dict):
        return len(anchor) == size
    return len(anchor) == size and all(v is not None for v in anchor)


def _evaluable(spec, params, data):
    try:
        vals = _eval_predictor(spec, params, data)
    except _INADMISSIBLE:
        return None
    return vals if np.all(np.isfinite(vals)) else None


def nonlinear_least_squares(spec, data, target, start, max_iter=200, tol=1e-12):
    """Levenberg-Marquardt fit of ``spec`` to ``target``.

    Steps that make the predictor undefined are treated like steps that
    increase the residual sum of squares.
    """
    theta = np.asarray(start, dtype=float).copy()
    fitted = _evaluable(spec, theta, data)
    if fitted is None:
        raise NoAdmissibleStartError("predictor is undefined at the starting point")
    resid = target - fitted
    sse = float(resid @ resid)
    damping = 1e-3
    for _ in range(max_iter):
        J = spec.jacobian(theta, data.columns, data.n)
        if not np.all(np.isfinite(J)):
            break
        JtJ = J.T @ J
        g = J.T @ resid
        diag = np.diag(JtJ).copy()
        diag[diag <= 0] = 1.0
        improved = False
        for _ in range(40):
            A = JtJ + damping * np.diag(diag)
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            cand = theta + step
            cand_fit = _evaluable(spec, cand, data)
            if cand_fit is not None:
                cand_resid = target - cand_fit
                cand_sse = float(cand_resid @ cand_resid)
                if cand_sse <= sse:
                    improved = True
                    break
            damping *= 10.0
        if not improved:
            break
        rel = (sse - cand_sse) / max(sse, 1e-300)
        theta, resid, sse = cand, cand_resid, cand_sse
        damping = max(damping / 10.0, 1e-12)
        if rel < tol or sse == 0.0:
            break
    return theta


def _fit_submodel_start(spec, data, target, anchor, refine):
    """Starting parameters matching ``target`` on the predictor scale."""
    size = spec.param_count
    if anchor is not None and not refine and _anchor_complete(anchor, size):
        return _anchor_vector(anchor, size, 0.0)
    if spec.is_linear and anchor is None:
        zero = np.zeros(size)
        try:
            offset = _eval_predictor(spec, zero, data)
            X = spec.jacobian(zero, data.columns, data.n)
        except _INADMISSIBLE as exc:
            raise NoAdmissibleStartError(f"predictor {spec} is not evaluable: {exc}") from exc
        sol, *_ = np.linalg.lstsq(X, target - offset, rcond=None)
        return sol
    for fill in _FILL_LADDER:
        start = _anchor_vector(anchor, size, fill)
        if _evaluable(spec, start, data) is None:
            continue
        try:
            return nonlinear_least_squares(spec, data, target, start)
        except NoAdmissibleStartError:
            continue
    raise NoAdmissibleStartError(f"no evaluable starting point for {spec}")


def _moment_precision(model, data, beta0):
    """Precision from the variance of transformed-scale residuals."""
    z = links.link_value(model.mean_link, data.response)
    eta = _eval_predictor(model.mean, beta0, data)
    mu = links.link_inverse(model.mean_link, eta)
    mu = np.clip(mu, 1e-12, 1 - 1e-12)
    resid = z - eta
    dof = max(data.n - model.k, 1)
    sigma2 = float(resid @ resid) / (dof * links.link_deriv(model.mean_link, mu) ** 2)
    with np.errstate(divide="ignore"):
        phi = float(np.mean(mu * (1.0 - mu) / sigma2)) - 1.0
    if not np.isfinite(phi) or phi <= 0:
        return None
    return phi


def starting_values(model, data, beta_anchor=None, gamma_anchor=None, refine=True):
    """Admissible ``(beta0, gamma0)``.

    Mean: least squares of g(y) on the predictor, linear or
    Levenberg-Marquardt from the anchor.  Precision: the predictor is
    matched to h(phi0), with phi0 the moment estimate from the mean
    residuals.  If that point is inadmissible the precision target falls
    back through 10, 1 and 100.
    """
    z = links.link_value(model.mean_link, data.response)
    beta0 = _fit_submodel_start(model.mean, data, z, beta_anchor, refine)
    try:
        mu0 = links.link_inverse(model.mean_link, _eval_predictor(model.mean, beta0, data))
    except _INADMISSIBLE as exc:
        raise NoAdmissibleStartError(f"mean start is not evaluable: {exc}") from exc
    if not np.all((mu0 > 0) & (mu0 < 1)):
        raise NoAdmissibleStartError("mean start gives fitted values outside (0, 1)")

    phi0 = _moment_precision(model, data, beta0)
    targets = ([phi0] if phi0 is not None else []) + [10.0, 1.0, 100.0]
    last_error = None
    for phi_target in targets:
        target = np.full(data.n, links.link_value(model.precision_link, phi_target))
        try:
            gamma0 = _fit_submodel_start(model.precision, data, target, gamma_anchor, refine)
            working_state(model, data, beta0, gamma0, jacobians=False)
        except (NoAdmissibleStartError,) + _INADMISSIBLE as exc:
            last_error = exc
            continue
        return beta0, gamma0
    raise NoAdmissibleStartError(f"no admissible starting point: {last_error}")


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``u1`` is the working response ``J1 beta + W^{-1} T (y* - mu*)`` and
    ``weights`` the diagonal of ``Phi W``, both at the final estimate.
    """

    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    mu_hat: np.ndarray
    phi_hat: np.ndarray
    log_lik: float
    iterations: int
    converged: bool
    score_norm: float
    u1: np.ndarray
    weights: np.ndarray
    loglik_trace: list = field(default_factory=list)
    beta_start: np.ndarray = None
    gamma_start: np.ndarray = None
    message: str = ""
    state: WorkingState = field(default=None, repr=False)
    model: ModelSpec = field(default=None, repr=False)
    data: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.mu_hat.size

    def to_dict(self):
        return {
            "model": self.model.describe() if self.model is not None else None,
            "n": int(self.n),
            "beta_hat": [float(b) for b in self.beta_hat],
            "gamma_hat": [float(g) for g in self.gamma_hat],
            "log_lik": float(self.log_lik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "score_norm": float(self.score_norm),
            "message": self.message,
            "beta_start": [float(b) for b in self.beta_start],
            "gamma_start": [float(g) for g in self.gamma_start],
            "mu_hat": [float(m) for m in self.mu_hat],
            "phi_hat": [float(p) for p in self.phi_hat],
            "u1": [float(u) for u in self.u1],
            "weights": [float(w) for w in self.weights],
        }


def _ascent_step(model, data, state, block, direction, max_halvings):
    """Step-halving search along ``direction`` for one parameter block."""
    base = state.loglik
    noise = 1e-14 * state.loglik_scale
    step = 1.0
    for _ in range(max_halvings + 1):
        if block == "joint":
            k = state.beta.size
            beta, gamma = state.beta + step * direction[:k], state.gamma + step * direction[k:]
        elif block == "beta":
            beta, gamma = state.beta + step * direction, state.gamma
        else:
            beta, gamma = state.beta, state.gamma + step * direction
        try:
            cand = working_state(model, data, beta, gamma)
        except _INADMISSIBLE:
            step *= 0.5
            continue
        if cand.loglik >= base - noise:
            return cand, True
        step *= 0.5
    return state, False


def _joint_step(model, data, state, max_halvings):
    """Fisher-scoring step on (beta, gamma) using the full information matrix."""
    u_beta, u_gamma = score(model, data, None, None, state)
    k_bb, k_bg, k_gg = fisher_information(model, data, state)
    K = np.block([[k_bb, k_bg], [k_bg.T, k_gg]])
    try:
        direction = spd_solve(K, np.concatenate([u_beta, u_gamma]), "joint information")
    except SingularInformationError:
        return state, False
    return _ascent_step(model, data, state, "joint", direction, max_halvings)


# Newton polishes allowed per fit; each costs up to 50 Hessian evaluations
_POLISH_ATTEMPTS = 3


def _score_vector(model, data, state):
    u_beta, u_gamma = score(model, data, None, None, state)
    return np.concatenate([u_beta, u_gamma])


def _observed_hessian(model, data, state):
    """Central differences of the analytic score, symmetrized."""
    theta = np.concatenate([state.beta, state.gamma])
    k = state.beta.size
    p = theta.size
    hess = np.empty((p, p))
    for j in range(p):
        h = 1e-6 * max(1.0, abs(theta[j]))
        cols = []
        for sign in (1.0, -1.0):
            th = theta.copy()
            th[j] += sign * h
            cols.append(_score_vector(model, data, working_state(model, data, th[:k], th[k:])))
        hess[:, j] = (cols[0] - cols[1]) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def _newton_polish(model, data, state, tol_score, max_iter=50, max_halvings=30):
    """Newton steps on the observed information once the log-likelihood is flat.

    Fisher scoring can fail to contract near an optimum where expected and
    observed information differ a lot; there the log-likelihood changes
    less than its rounding noise, so steps are accepted on a smaller score
    norm instead.
    """
    noise = 1e-14 * state.loglik_scale
    for _ in range(max_iter):
        grad = _score_vector(model, data, state)
        norm = np.max(np.abs(grad))
        if norm < tol_score:
            break
        try:
            direction = spd_solve(-_observed_hessian(model, data, state), grad, "observed information")
        except (SingularInformationError, *_INADMISSIBLE):
            break
        k = state.beta.size
        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            try:
                cand = working_state(model, data, state.beta + step * direction[:k], state.gamma + step * direction[k:])
            except _INADMISSIBLE:
                step *= 0.5
                continue
            if cand.loglik >= state.loglik - noise and np.max(np.abs(_score_vector(model, data, cand))) < norm:
                state, accepted = cand, True
                break
            step *= 0.5
        if not accepted:
            break
    return state


def _check_rank(J, name):
    if J.shape[1] > 0 and np.linalg.matrix_rank(J) < J.shape[1]:
        warnings.warn(f"{name} Jacobian is rank deficient at the starting point", RuntimeWarning, stacklevel=3)


def fit(model, data, opts=None):
    """Fit ``model`` to ``data`` by Fisher scoring with step halving.

    Convergence needs both ``|delta loglik| < tol_loglik`` (or below the
    rounding noise of the log-likelihood) over one full sweep and
    ``max |score| < tol_score``.  Running out of iterations is reported
    through ``converged=False``, not raised.
    """
    opts = opts or FitOptions()
    if model.k + model.q >= data.n:
        raise ConfigError(f"k + q = {model.k + model.q} must be smaller than n = {data.n}")
    beta0, gamma0 = starting_values(model, data, opts.beta_start, opts.gamma_start, opts.refine_start)
    try:
        state = working_state(model, data, beta0, gamma0)
    except _INADMISSIBLE as exc:
        raise NoAdmissibleStartError(str(exc)) from exc
    _check_rank(state.J1, "mean")
    _check_rank(state.J2, "precision")

    trace = [state.loglik]
    converged = False
    message = "iteration limit reached"
    score_norm = np.inf
    iterations = 0
    polish_budget = _POLISH_ATTEMPTS
    for iterations in range(1, opts.max_iterations + 1):
        before = state.loglik
        state, ok_joint = _joint_step(model, data, state, opts.max_step_halvings)
        ok_beta = ok_gamma = False
        if not ok_joint:
            u_beta, _ = score(model, data, None, None, state)
            k_bb, _, _ = fisher_information(model, data, state)
            state, ok_beta = _ascent_step(
                model, data, state, "beta", spd_solve(k_bb, u_beta, "mean information"), opts.max_step_halvings
            )
            _, u_gamma = score(model, data, None, None, state)
            _, _, k_gg = fisher_information(model, data, state)
            state, ok_gamma = _ascent_step(
                model, data, state, "gamma", spd_solve(k_gg, u_gamma, "precision information"), opts.max_step_halvings
            )
        trace.append(state.loglik)
        u_beta, u_gamma = score(model, data, None, None, state)
        score_norm = float(np.max(np.abs(np.concatenate([u_beta, u_gamma]))))
        change = abs(state.loglik - before)
        if (change < opts.tol_loglik or change <= 1e-14 * state.loglik_scale) and score_norm < opts.tol_score:
            converged = True
            message = "converged"
            break
        # slow or stalled scoring: finish with Newton steps
        slow = change < max(opts.tol_loglik, 1e-6 * (1.0 + abs(state.loglik)))
        if polish_budget and (slow or not (ok_joint or ok_beta or ok_gamma)):
            polish_budget -= 1
            state = _newton_polish(model, data, state, opts.tol_score)
            u_beta, u_gamma = score(model, data, None, None, state)
            score_norm = float(np.max(np.abs(np.concatenate([u_beta, u_gamma]))))
            if score_norm < opts.tol_score:
                trace.append(state.loglik)
                converged = True
                message = "converged"
                break
        if not (ok_joint or ok_beta or ok_gamma):
            message = "no ascent step found"
            break
    logger.debug("fit finished after %d iterations: %s", iterations, message)

    resid = state.ystar - state.mustar
    u1 = state.J1 @ state.beta + state.T * resid / state.w
    return FitResult(
        beta_hat=state.beta.copy(),
        gamma_hat=state.gamma.copy(),
        mu_hat=state.mu.copy(),
        phi_hat=state.phi.copy(),
        log_lik=state.loglik,
        iterations=iterations,
        converged=converged,
        score_norm=score_norm,
        u1=u1,
        weights=state.phi * state.w,
        loglik_trace=trace,
        beta_start=np.asarray(beta0, dtype=float),
        gamma_start=np.asarray(gamma0, dtype=float),
        message=message,
        state=state,
        model=model,
        data=data,
    )


def fit_null(data, mean_link="logit", precision_link="log", opts=None):
    """Intercept-only fit in both submodels."""
    model = ModelSpec.from_formulas("b1", "g1", mean_link, precision_link)
    return fit(model, data, opts)
