"""Scenario catalog and a reproducible Monte Carlo engine.

A scenario fixes the true data-generating model, the covariate laws and
the model that is actually estimated (possibly misspecified).  Covariates
are drawn once per (scenario, n) from the scenario's design seed and
reused by every replication.  Scenarios with a replication block draw
one block of covariate rows and tile it, so the realized dispersion
intensity does not change with n.  Each replication draws its responses
from its own counter-based stream ``random_stream(seed, rep)``, so
results do not depend on execution order or worker count.
"""

import csv
import math
from functools import lru_cache
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import links
from .data import Dataset
from .diagnostics import diagnose
from .errors import BetaPressError, ConfigError, DomainError, UnknownScenarioError
from .estimation import FitOptions, ModelSpec, fit, fit_null
from .special import BetaParams, beta_sample, random_stream

__all__ = [
    "MonteCarloSummary",
    "SCENARIO_IDS",
    "STATISTICS",
    "ScenarioSpec",
    "build_scenario",
    "design",
    "generate_dataset",
    "mu_range_check",
    "run_monte_carlo",
    "true_moments",
]

STATISTICS = ("P2", "P2_c", "P2_bg", "P2_bg_c", "R2_LR", "R2_LR_c", "R2_FC", "R2_FC_c", "lambda")

SCENARIO_IDS = ("s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "nl-mean", "nl-disp")


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to simulate and fit one experiment.

    ``levels`` maps a level label (a precision value, or a nominal
    dispersion intensity for varying-precision designs) to the true
    precision parameters.  ``covariates`` lists ``(name, low, high)``
    uniform laws in draw order.
    """

    name: str
    description: str
    true_mean: str
    true_precision: str
    beta: tuple
    levels: dict
    level_kind: str
    covariates: tuple
    estimated_mean: str
    estimated_precision: str
    sizes: tuple
    mu_range: tuple
    design_seed: int
    mean_link: str = "logit"
    precision_link: str = "log"
    block_size: int = None
    anchor_mean: bool = False
    anchor_precision: bool = False

    @property
    def schema(self):
        return [c[0] for c in self.covariates]

    def true_model(self):
        return ModelSpec.from_formulas(
            self.true_mean, self.true_precision, self.mean_link, self.precision_link, self.schema
        )

    def estimated_model(self):
        return ModelSpec.from_formulas(
            self.estimated_mean, self.estimated_precision, self.mean_link, self.precision_link, self.schema
        )

    def gamma(self, level):
        key = _level_key(self, level)
        return tuple(self.levels[key])


def _level_key(spec, level):
    for key in spec.levels:
        if math.isclose(float(key), float(level)):
            return key
    known = ", ".join(str(k) for k in spec.levels)
    raise ConfigError(f"scenario {spec.name} has no {spec.level_kind} level {level}; expected one of {known}")


# ---------------------------------------------------------------------------
# catalog

_PHI_LEVELS = (20, 50, 150, 400)

_REGIMES = {
    "mid": ((-1.9, 1.2, 1.0, 1.1, 1.3), (0.20, 0.88)),
    "high": ((1.8, 1.2, 1.0, 1.1, 0.9), (0.90, 0.99)),
    "low": ((-1.5, -1.2, -1.0, -1.1, -1.3), (0.005, 0.12)),
}

_LINEAR_MEANS = (
    "b1 + b2*x2",
    "b1 + b2*x2 + b3*x3",
    "b1 + b2*x2 + b3*x3 + b4*x4",
    "b1 + b2*x2 + b3*x3 + b4*x4 + b5*x5",
)

# One design seed per family (s7 and s8 share a data-generating process).
# Each is the minimizer of family_discrepancy over seeds 0..999; see
# select_design_seed.
_DESIGN_SEEDS = {"omitted": 507, "s5": 908, "s6": 480, "s7": 595, "nl-mean": 33, "nl-disp": 48}
DESIGN_SEARCH_SPACE = range(1000)


def _fixed_phi_levels():
    return {phi: (math.log(phi),) for phi in _PHI_LEVELS}


def _omitted(number, regime):
    if regime not in _REGIMES:
        raise ConfigError(f"unknown mean regime {regime!r}; expected one of {', '.join(_REGIMES)}")
    beta, mu_range = _REGIMES[regime]
    return ScenarioSpec(
        name=f"s{number}",
        description=f"fixed precision, {4 - number} covariate(s) omitted from the estimated mean, regime {regime}",
        true_mean=_LINEAR_MEANS[3],
        true_precision="g1",
        beta=beta,
        levels=_fixed_phi_levels(),
        level_kind="phi",
        covariates=tuple((f"x{i}", 0.0, 1.0) for i in range(2, 6)),
        estimated_mean=_LINEAR_MEANS[number - 1],
        estimated_precision="g1",
        sizes=(40, 80, 120, 400),
        mu_range=mu_range,
        design_seed=_DESIGN_SEEDS["omitted"],
    )


def _varying(number):
    if number == 5:
        nx = 1
        beta = (-1.3, 3.2)
        levels = {20: (3.5, 3.0), 50: (3.5, 4.0), 100: (3.5, 5.0)}
        mu_range = (0.22, 0.87)
    elif number == 6:
        nx = 3
        beta = (-1.9, 1.2, 1.6, 2.0)
        levels = {20: (2.4, 1.2, -1.7, 1.0), 50: (2.9, 2.0, -1.7, 2.0), 100: (2.9, 2.0, -1.7, 2.8)}
        mu_range = (0.24, 0.88)
    else:
        nx = 4
        beta = (-1.9, 1.2, 1.0, 1.1, 1.3)
        levels = {
            20: (3.2, 2.5, -1.1, 1.9, 2.2),
            50: (3.2, 2.5, -1.1, 1.9, 3.2),
            100: (3.2, 2.5, -1.1, 1.9, 4.0),
        }
        mu_range = (0.20, 0.88)
    xs = [f"x{i}" for i in range(2, 2 + nx)]
    zs = [f"z{i}" for i in range(2, 2 + nx)]
    mean = " + ".join(["b1"] + [f"b{i}*{x}" for i, x in enumerate(xs, start=2)])
    prec = " + ".join(["g1"] + [f"g{i}*{z}" for i, z in enumerate(zs, start=2)])
    full = number == 8
    return ScenarioSpec(
        name=f"s{number}",
        description=(
            "varying precision, full model estimated"
            if full
            else "varying precision, constant precision estimated"
        ),
        true_mean=mean,
        true_precision=prec,
        beta=beta,
        levels=levels,
        level_kind="lambda",
        covariates=tuple((x, 0.0, 1.0) for x in xs) + tuple((z, -0.5, 0.5) for z in zs),
        estimated_mean=mean,
        estimated_precision=prec if full else "g1",
        sizes=(40, 80, 120),
        mu_range=mu_range,
        design_seed=_DESIGN_SEEDS[f"s{min(number, 7)}"],
        block_size=20,
    )


def _nl_mean(estimated):
    true_mean = "b1 + x2^b2 + b3*log(x3 - b4) + x3/b5"
    correct = estimated == "true"
    return ScenarioSpec(
        name="nl-mean",
        description="nonlinear mean, fixed precision; " + ("correct fit" if correct else "linear fit"),
        true_mean=true_mean,
        true_precision="g1",
        beta=(1.0, 1.9, -2.0, 3.4, 7.2),
        levels=_fixed_phi_levels(),
        level_kind="phi",
        covariates=(("x2", 1.0, 2.0), ("x3", 4.5, 34.5)),
        estimated_mean=true_mean if correct else "b1 + b2*x2 + b3*x3",
        estimated_precision="g1",
        sizes=(20, 40, 60, 200, 400),
        mu_range=(0.36, 0.98),
        design_seed=_DESIGN_SEEDS["nl-mean"],
        anchor_mean=correct,
    )


def _nl_disp(estimated):
    true_mean = "b1 + x^b2"
    true_prec = "g1 + z^g2"
    correct = estimated == "true"
    return ScenarioSpec(
        name="nl-disp",
        description="nonlinear mean and precision; " + ("correct fit" if correct else "linear fit"),
        true_mean=true_mean,
        true_precision=true_prec,
        beta=(-1.1, 1.7),
        levels={25: (2.6, 3.0), 29: (1.6, 3.1), 35: (0.9, 3.2), 100: (-0.3, 3.9)},
        level_kind="lambda",
        covariates=(("x", 0.3, 1.3), ("z", 0.5, 1.5)),
        estimated_mean=true_mean if correct else "b1 + b2*x",
        estimated_precision=true_prec if correct else "g1 + g2*z",
        sizes=(400,),
        mu_range=(0.28, 0.61),
        design_seed=_DESIGN_SEEDS["nl-disp"],
        anchor_mean=correct,
        anchor_precision=correct,
    )


def build_scenario(scenario_id, regime="mid", estimated="misspecified", design_seed=None):
    """Catalog lookup.

    ``regime`` ("mid", "high", "low") selects the mean coefficients of
    s1-s4.  ``estimated`` ("misspecified" or "true") selects the fitted
    model of the nonlinear scenarios; s1-s8 encode it in the id.
    ``design_seed`` replaces the catalog's fixed design seed.
    """
    spec = _lookup(scenario_id, regime, estimated)
    if design_seed is not None:
        spec = replace(spec, design_seed=int(design_seed))
    return spec


def _lookup(scenario_id, regime, estimated):
    sid = str(scenario_id).strip().lower()
    if estimated not in ("misspecified", "true"):
        raise ConfigError(f"estimated must be 'misspecified' or 'true', not {estimated!r}")
    if sid in ("s1", "s2", "s3", "s4"):
        return _omitted(int(sid[1]), regime)
    if sid in ("s5", "s6", "s7", "s8"):
        return _varying(int(sid[1]))
    if sid == "nl-mean":
        return _nl_mean(estimated)
    if sid == "nl-disp":
        return _nl_disp(estimated)
    raise UnknownScenarioError(f"unknown scenario {scenario_id!r}; expected one of {', '.join(SCENARIO_IDS)}")


# ---------------------------------------------------------------------------
# data generation


def design(spec, n):
    """Fixed covariate columns for sample size ``n``."""
    if spec.block_size:
        if n % spec.block_size:
            raise ConfigError(f"n = {n} is not a multiple of the block size {spec.block_size}")
        stream = random_stream(spec.design_seed, 0)
        rows = spec.block_size
    else:
        stream = random_stream(spec.design_seed, n)
        rows = n
    cols = {name: stream.uniform(low, high, rows) for name, low, high in spec.covariates}
    if spec.block_size:
        cols = {name: np.tile(values, n // rows) for name, values in cols.items()}
    return cols


@lru_cache(maxsize=64)
def _model(mean, precision, mean_link, precision_link, schema):
    return ModelSpec.from_formulas(mean, precision, mean_link, precision_link, list(schema))


def true_moments(spec, n, level):
    """True ``(mu_t, phi_t)`` on the fixed design."""
    model = _model(spec.true_mean, spec.true_precision, spec.mean_link, spec.precision_link, tuple(spec.schema))
    cols = design(spec, n)
    eta1 = model.mean.evaluate(np.asarray(spec.beta, dtype=float), cols, n)
    eta2 = model.precision.evaluate(np.asarray(spec.gamma(level), dtype=float), cols, n)
    mu = np.broadcast_to(links.link_inverse(model.mean_link, eta1), (n,)).copy()
    phi = np.broadcast_to(links.link_inverse(model.precision_link, eta2), (n,)).copy()
    if not (np.all((mu > 0) & (mu < 1)) and np.all(phi > 0)):
        raise DomainError(f"scenario {spec.name}: true parameters give inadmissible mu or phi")
    return mu, phi


def mu_range_check(spec, n, level=None):
    """Return ``(mean_inside, fraction_inside)`` for the declared mean range."""
    level = next(iter(spec.levels)) if level is None else level
    mu, _ = true_moments(spec, n, level)
    lo, hi = spec.mu_range
    return bool(lo < mu.mean() < hi), float(np.mean((mu > lo) & (mu < hi)))


def _logit(p):
    return math.log(p) - math.log1p(-p)


def design_discrepancy(spec, sizes=None):
    """Distance between a realized design and the scenario's declared features.

    Sums, over sample sizes and levels, the squared logit-scale gaps
    between the realized extremes of the true ``mu_t`` and the declared
    range, plus (for dispersion-intensity levels) the squared log gap
    between the realized ``max phi / min phi`` and the level label.
    Tiled designs are scored once.
    """
    if sizes is None:
        sizes = spec.sizes[:1] if spec.block_size else spec.sizes
    lo, hi = spec.mu_range
    total = 0.0
    for n in sizes:
        for i, level in enumerate(spec.levels):
            mu, phi = true_moments(spec, n, level)
            if i == 0:
                total += (_logit(mu.min()) - _logit(lo)) ** 2 + (_logit(mu.max()) - _logit(hi)) ** 2
            if spec.level_kind == "lambda":
                total += (math.log(phi.max() / phi.min()) - math.log(level)) ** 2
    return total


def _family(scenario_id):
    sid = str(scenario_id).strip().lower()
    if sid in ("s1", "s2", "s3", "s4"):
        return [_omitted(4, regime) for regime in _REGIMES]
    return [_lookup(sid, "mid", "true")]


def family_discrepancy(scenario_id, design_seed):
    """:func:`design_discrepancy` summed over every spec sharing the design.

    s1-s4 share one design across the three mean regimes.
    """
    return sum(design_discrepancy(replace(spec, design_seed=design_seed)) for spec in _family(scenario_id))


def select_design_seed(scenario_id, candidates=DESIGN_SEARCH_SPACE):
    """Seed in ``candidates`` whose design best matches the declared features."""
    return min(candidates, key=lambda seed: family_discrepancy(scenario_id, seed))


def generate_dataset(spec, n, stream, level):
    """One response draw on the fixed design."""
    mu, phi = true_moments(spec, n, level)
    y = beta_sample(BetaParams(mu, phi), stream)
    return Dataset(y, design(spec, n), provenance=f"simulated {spec.name} n={n} {spec.level_kind}={level}")


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloSummary:
    """Aggregated statistic family over the converged replications."""

    scenario: str
    n: int
    level: float
    level_kind: str
    seed: int
    replications: int
    used: int
    nonconverged: int
    failed: int
    statistics: dict
    rows: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "n": self.n,
            self.level_kind: self.level,
            "seed": self.seed,
            "replications": self.replications,
            "used": self.used,
            "nonconverged": self.nonconverged,
            "failed": self.failed,
            "statistics": self.statistics,
        }

    def mean(self, name):
        return self.statistics[name]["mean"]

    def write_rows(self, path):
        """Per-replication rows as CSV (``rep``, ``status`` then each statistic)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("rep", "status") + STATISTICS)
            for row in self.rows:
                writer.writerow([row["rep"], row["status"]] + [repr(row.get(s, float("nan"))) for s in STATISTICS])


def summarize(rows):
    """Mean, median and quartiles of each statistic over rows with status "ok"."""
    ok = [r for r in rows if r["status"] == "ok"]
    out = {}
    for name in STATISTICS:
        values = np.array([r[name] for r in ok], dtype=float)
        if values.size == 0:
            out[name] = {"mean": float("nan"), "median": float("nan"), "q1": float("nan"), "q3": float("nan")}
            continue
        q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75])
        out[name] = {"mean": float(values.mean()), "median": float(med), "q1": float(q1), "q3": float(q3)}
    return out


def _fit_options(spec, level):
    opts = FitOptions()
    if spec.anchor_mean:
        opts.beta_start = list(spec.beta)
    if spec.anchor_precision:
        opts.gamma_start = list(spec.gamma(level))
    return opts


def _replicate(spec, n, level, seed, rep, penalty, response):
    row = {"rep": rep}
    data = generate_dataset(spec, n, random_stream(seed, rep), level)
    model = spec.estimated_model()
    try:
        result = fit(model, data, _fit_options(spec, level))
        null = fit_null(data, model.mean_link, model.precision_link)
        if not (result.converged and null.converged):
            row["status"] = "nonconverged"
            return row
        report = diagnose(result, null, penalty, response)
    except BetaPressError as exc:
        row["status"] = "failed"
        row["error"] = type(exc).__name__
        return row
    row["status"] = "ok"
    row.update({k: float(v) for k, v in report.statistics().items()})
    row["lambda"] = report.lambda_
    return row


def _replicate_range(args):
    spec, n, level, seed, reps, penalty, response = args
    return [_replicate(spec, n, level, seed, rep, penalty, response) for rep in reps]


def run_monte_carlo(
    spec, n, level, R=1000, seed=0, workers=1, penalty="covariates", response="predictor", keep_rows=True
):
    """Fit the estimated model to ``R`` simulated datasets and aggregate.

    ``penalty`` and ``response`` are passed to :func:`diagnose`.
    Non-converged or failed replications are excluded from the summary and
    counted; they are never retried with fresh draws.
    """
    if R < 1:
        raise ConfigError("R must be at least 1")
    level = _level_key(spec, level)
    spec.estimated_model()
    if workers and workers > 1:
        chunks = [range(i, R, workers) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_replicate_range, [(spec, n, level, seed, c, penalty, response) for c in chunks])
            rows = [row for part in parts for row in part]
        rows.sort(key=lambda r: r["rep"])
    else:
        rows = _replicate_range((spec, n, level, seed, range(R), penalty, response))
    return MonteCarloSummary(
        scenario=spec.name,
        n=int(n),
        level=level,
        level_kind=spec.level_kind,
        seed=int(seed),
        replications=int(R),
        used=sum(r["status"] == "ok" for r in rows),
        nonconverged=sum(r["status"] == "nonconverged" for r in rows),
        failed=sum(r["status"] == "failed" for r in rows),
        statistics=summarize(rows),
        rows=rows if keep_rows else [],
    )
