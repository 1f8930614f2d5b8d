"""Simulated datasets shared by the test modules."""

import mpmath
import numpy as np

from betapress import BetaParams, Dataset, beta_sample, link_inverse, parse_formula, random_stream
from betapress.errors import BetaPressError
from betapress.formula import Binary, Const, Covariate, Param, Unary, eval_jacobian_row, eval_predictor
from betapress.io import ModelConfig, load_demo_config

S4_BETA = (-1.9, 1.2, 1.0, 1.1, 1.3)
S4_MEAN = "b1 + b2*x2 + b3*x3 + b4*x4 + b5*x5"


def linear_data(n=80, phi=50.0, seed=3):
    """Fixed-precision logit data with the Scenario-4 coefficients."""
    rs = random_stream(seed)
    X = rs.uniform(0.0, 1.0, (n, 4))
    mu = link_inverse("logit", S4_BETA[0] + X @ np.array(S4_BETA[1:]))
    y = beta_sample(BetaParams(mu, np.full(n, phi)), rs)
    return Dataset(y, {f"x{i + 2}": X[:, i] for i in range(4)})


def varying_data(n=120, seed=5, gamma=(4.0, 2.0)):
    """Logit mean in x2, x3 and log precision in z2."""
    rs = random_stream(seed)
    x2, x3 = rs.uniform(0.0, 1.0, (2, n))
    z2 = rs.uniform(-0.5, 0.5, n)
    mu = link_inverse("logit", -1.0 + 1.5 * x2 - 0.8 * x3)
    phi = np.exp(gamma[0] + gamma[1] * z2)
    y = beta_sample(BetaParams(mu, phi), rs)
    return Dataset(y, {"x2": x2, "x3": x3, "z2": z2})


_APPS = ("app1_gas", "app2_insecticide", "app3_chlorine")


def application_data(name, seed=11):
    """Synthetic stand-in for an application dataset, matching its config schema."""
    rs = random_stream(seed, _APPS.index(name))
    if name == "app1_gas":
        x1 = np.sort(rs.uniform(-1.9, 2.1, 42))
        mu = link_inverse("loglog", -0.63 - 0.31 * x1)
        phi = np.exp(3.81 + 0.77 * x1)
        cols = {"x1": x1}
    elif name == "app2_insecticide":
        x1 = np.repeat([2.0, 5.0, 10.0, 15.0, 20.0], 3)
        x2 = np.tile([0.0, 3.9, 19.5], 5)
        mu = link_inverse("logit", -2.0 + 1.2 * np.log(x1 - 1.0) + 1.5 * x2 / (x2 + 4.0))
        phi = 4.0 * (1.19 + 0.19 * x1 + 0.1 * x2) ** 2
        cols = {"x1": x1, "x2": x2}
    elif name == "app3_chlorine":
        x1 = np.repeat(np.arange(8.0, 43.0, 2.5), 3)[:42]
        mu = link_inverse("logit", -0.46 + (0.095 + 0.46) * np.exp(-0.042 * (x1 - 8.0)))
        phi = np.exp(6.0 - 0.05 * np.log(x1) + np.exp(-2.63 * (x1 - 8.0)))
        cols = {"x1": x1}
    return Dataset(beta_sample(BetaParams(mu, phi), rs), cols)


def application_candidates():
    """``(config name, ModelConfig)`` for every shipped candidate."""
    out = []
    for name in _APPS:
        for raw in load_demo_config(name)["candidates"]:
            out.append((name, ModelConfig.from_dict(raw)))
    return out


# ---------------------------------------------------------------------------
# random predictor formulas with an independent high-precision evaluator

DEMO_FORMULAS = (
    "b1 + b2*x2",
    "b1 + x2^b2 + b3*log(x3 - b4) + x3/b5",
    "b1 + (b3 - b1)*exp(b2*(x1 - 8))",
    "b1 + (0.49 - b1)*exp(b2*(x1 - 8))",
    "g1 + g2*log(x1) + exp(g3*(x1 - 8))",
    "b1 + b2*log(x1 + 1.0) + b3*x2",
    "b1 + b2*log(x1 - b3) + b4*x2/(x2 + b5)",
    "g1 + g2*x1 + g3*x2 + g4*x1*x2",
    "b1 + x^b2",
    "g1 + z^g2",
    "-b1^2 + sqrt(b2)*(x - 1)/2",
)


def random_tree(rs, depth=0):
    """Random expression over b1..b3 and covariates x, z."""
    if depth >= 4 or rs.uniform() < 0.2 * depth:
        kind = rs.integers(3)
        if kind == 0:
            return Const(round(float(rs.uniform(0.1, 3.0)), 2))
        if kind == 1:
            return Param("b", int(rs.integers(3)))
        return Covariate(("x", "z")[rs.integers(2)])
    if rs.uniform() < 0.3:
        op = ("neg", "log", "exp", "sqrt")[rs.integers(4)]
        return Unary(op, random_tree(rs, depth + 1))
    op = ("add", "sub", "mul", "div", "pow")[rs.integers(5)]
    return Binary(op, random_tree(rs, depth + 1), random_tree(rs, depth + 1))


def mp_value(node, params, row):
    """Evaluate a tree in mpmath arithmetic; returns None outside the real domain."""
    if isinstance(node, Const):
        return mpmath.mpf(node.value)
    if isinstance(node, Param):
        return params[node.index]
    if isinstance(node, Covariate):
        return mpmath.mpf(row[node.name])
    if isinstance(node, Unary):
        a = mp_value(node.arg, params, row)
        if a is None:
            return None
        if node.op == "neg":
            return -a
        if node.op == "exp":
            return mpmath.exp(a)
        if a <= 0:
            return None
        return mpmath.log(a) if node.op == "log" else mpmath.sqrt(a)
    a = mp_value(node.left, params, row)
    b = mp_value(node.right, params, row)
    if a is None or b is None:
        return None
    if node.op == "add":
        return a + b
    if node.op == "sub":
        return a - b
    if node.op == "mul":
        return a * b
    if node.op == "div":
        return None if b == 0 else a / b
    if a <= 0 and b != int(b):
        return None
    return a**b


def random_triples(count, seed=0):
    """``(spec, params, row)`` with every parameter present and values in a sane range."""
    rs = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        text = f"({random_tree(rs)}) + b1 + b2*b3"
        spec = parse_formula(text, ["x", "z"])
        params = rs.uniform(0.2, 2.0, 3)
        row = {"x": float(rs.uniform(0.2, 3.0)), "z": float(rs.uniform(0.2, 3.0))}
        try:
            value = eval_predictor(spec, params, row)
            grad = eval_jacobian_row(spec, params, row)
        except BetaPressError:
            continue
        if abs(value) > 1e6 or not np.all(np.abs(grad) < 1e6):
            continue
        # both evaluators must agree on the domain at and near the point
        mp_params = [mpmath.mpf(float(p)) for p in params]
        if any(
            mp_value(spec.expression, [q + d if i == j else q for i, q in enumerate(mp_params)], row) is None
            for j in range(3)
            for d in (-1e-6, 0, 1e-6)
        ):
            continue
        out.append((spec, params, row))
    return out


def derivative_errors(triples):
    """Scaled gap ``|analytic - oracle| / max(1, |oracle|)`` for every partial."""
    mpmath.mp.dps = 50
    errs = []
    for spec, params, row in triples:
        grad = eval_jacobian_row(spec, params, row)
        base = [mpmath.mpf(float(p)) for p in params]
        for j in range(spec.param_count):
            def f(t, j=j):
                p = list(base)
                p[j] = t
                return mp_value(spec.expression, p, row)

            ref = float(mpmath.diff(f, base[j]))
            errs.append(abs(grad[j] - ref) / max(1.0, abs(ref)))
    return np.array(errs)


# ---------------------------------------------------------------------------
# score against finite differences of the log-likelihood


def gradient_cases():
    """``(label, model, data, theta_true, k)`` for the four model families."""
    from betapress.simulation import build_scenario, generate_dataset

    cases = []
    for label, sid, estimated, n, level in (
        ("linear logit, fixed precision", "s4", "true", 40, 150),
        ("linear logit, log precision", "s8", "true", 40, 100),
        ("nonlinear mean", "nl-mean", "true", 60, 400),
        ("nonlinear mean and precision", "nl-disp", "true", 400, 25),
    ):
        spec = build_scenario(sid, estimated=estimated)
        model = spec.true_model()
        data = generate_dataset(spec, n, random_stream(99, n), level)
        theta = np.concatenate([spec.beta, spec.gamma(level)])
        cases.append((label, model, data, theta, model.k))
    return cases


def random_admissible_points(model, data, theta, count, seed=0, spread=0.15):
    from betapress import log_likelihood

    rs = np.random.default_rng(seed)
    k = model.k
    out = []
    while len(out) < count:
        point = theta + spread * np.maximum(1.0, np.abs(theta)) * rs.standard_normal(theta.size)
        try:
            log_likelihood(model, data, point[:k], point[k:])
        except BetaPressError:
            continue
        out.append(point)
    return out


def score_relative_errors(model, data, points):
    """``max |analytic - fd| / max |analytic|`` per point, fourth-order central differences."""
    from betapress import log_likelihood, score

    k = model.k

    def ll(p):
        return log_likelihood(model, data, p[:k], p[k:])

    errs = []
    for p in points:
        u = np.concatenate(score(model, data, p[:k], p[k:]))
        fd = np.empty_like(p)
        for j in range(p.size):
            h = 1e-4 * max(1.0, abs(p[j]))
            e = np.zeros_like(p)
            e[j] = h
            fd[j] = (-ll(p + 2 * e) + 8 * ll(p + e) - 8 * ll(p - e) + ll(p - 2 * e)) / (12 * h)
        errs.append(np.max(np.abs(u - fd)) / np.max(np.abs(u)))
    return np.array(errs)


def irls_residual(result):
    """Solve residual of the closed IRLS form at a fit.

    Returns ``(residual, gap)``: ``max |K beta_hat - J1' Phi W u1|`` scaled by
    ``max |J1' Phi W u1|``, and ``max |beta_irls - beta_hat|``.
    """
    from scipy import linalg

    J1 = result.state.J1
    wts = result.weights
    K = J1.T @ (wts[:, None] * J1)
    rhs = J1.T @ (wts * result.u1)
    beta_irls = linalg.solve(K, rhs, assume_a="pos")
    residual = np.max(np.abs(K @ result.beta_hat - rhs)) / max(1.0, np.max(np.abs(rhs)))
    return residual, float(np.max(np.abs(beta_irls - result.beta_hat)))


def loo_correlation(n=80, phi=50.0, seed=13):
    """Pearson correlation of shortcut PRESS components with full-refit leave-one-out errors."""
    from betapress import ModelSpec, fit, press

    data = linear_data(n=n, phi=phi, seed=seed)
    model = ModelSpec.from_formulas(S4_MEAN, "g1", schema=data.schema)
    result = fit(model, data)
    _, shortcut = press(result)
    refit = np.empty(n)
    for t in range(n):
        beta_t = fit(model, data.drop(t)).beta_hat
        err = np.sqrt(result.weights[t]) * (result.u1[t] - result.state.J1[t] @ beta_t)
        refit[t] = err**2
    return float(np.corrcoef(shortcut, refit)[0, 1])
