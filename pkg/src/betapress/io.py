"""Model configuration files and report serialization.

A config file is a JSON object describing one model, or an object with a
``candidates`` list of such models::

    {
      "name": "loglog",
      "mean": "b1 + b2*x1",
      "mean_link": "loglog",
      "precision": "g1 + g2*x1",
      "precision_link": "log",
      "beta_start": {"b1": -0.6},
      "fit": {"max_iterations": 500}
    }

``precision`` defaults to ``"g1"`` with a log link.  Starting-value anchors
map 1-based names (``"b3"``) to values, or are full lists.
"""

import csv
import json
import sys
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from importlib import resources

from .errors import ConfigError
from .estimation import FitOptions, ModelSpec

__all__ = [
    "ModelConfig",
    "dump_json",
    "demo_config_names",
    "load_config",
    "load_demo_config",
    "report_payload",
    "write_table",
]

_FIT_OPTION_NAMES = {f.name for f in fields(FitOptions)} - {"beta_start", "gamma_start"}


@dataclass
class ModelConfig:
    """Formulas, links, optional anchors and fit options for one model."""

    mean: str
    mean_link: str = "logit"
    precision: str = "g1"
    precision_link: str = "log"
    name: str = ""
    description: str = ""
    beta_start: object = None
    gamma_start: object = None
    fit: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("a model config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "mean" not in raw:
            raise ConfigError("a model config needs a 'mean' formula")
        cfg = cls(**raw)
        if cfg.precision is None:
            cfg.precision = "g1"
        bad = sorted(set(cfg.fit) - _FIT_OPTION_NAMES)
        if bad:
            raise ConfigError(f"unknown fit options: {', '.join(bad)}")
        return cfg

    def model(self, schema=None):
        """Parse the formulas against ``schema`` (a list of covariate names)."""
        return ModelSpec.from_formulas(self.mean, self.precision, self.mean_link, self.precision_link, schema)

    def fit_options(self):
        return FitOptions(beta_start=self.beta_start, gamma_start=self.gamma_start, **self.fit)

    def to_dict(self):
        out = {
            "name": self.name,
            "mean": self.mean,
            "mean_link": self.mean_link,
            "precision": self.precision,
            "precision_link": self.precision_link,
        }
        if self.beta_start is not None:
            out["beta_start"] = self.beta_start
        if self.gamma_start is not None:
            out["gamma_start"] = self.gamma_start
        if self.fit:
            out["fit"] = dict(self.fit)
        return out


def _select(raw, candidate, source):
    if isinstance(raw, dict) and "candidates" in raw:
        cands = raw["candidates"]
        if not cands:
            raise ConfigError(f"{source}: empty candidate list")
        if candidate is None:
            return cands[0]
        for cand in cands:
            if cand.get("name") == candidate:
                return cand
        names = ", ".join(str(c.get("name")) for c in cands)
        raise ConfigError(f"{source}: no candidate named {candidate!r}; available: {names}")
    if candidate is not None and raw.get("name") != candidate:
        raise ConfigError(f"{source}: holds a single model, not candidate {candidate!r}")
    return raw


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None


def load_config(path, candidate=None):
    """Read one model (or one named candidate) from a JSON config file."""
    return ModelConfig.from_dict(_select(_read_json(path), candidate, path))


def demo_config_names():
    """Names of the bundled demo config files (without ``.json``)."""
    root = resources.files("betapress") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_demo_config(name):
    """The raw JSON of a bundled demo config."""
    path = resources.files("betapress") / "configs" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no demo config {name!r}; available: {', '.join(demo_config_names())}")
    return json.loads(path.read_text(encoding="utf-8"))


def _clean(value):
    """Make ``value`` JSON-safe: NaN and infinities become null."""
    if isinstance(value, float):
        return value if value == value and abs(value) != float("inf") else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def report_payload(result, command, argv=None):
    """Wrap ``result`` with a metadata block that holds everything run-specific."""
    from . import __version__

    return {
        "result": result,
        "metadata": {
            "command": command,
            "argv": list(argv) if argv is not None else None,
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        },
    }


def dump_json(payload, path=None):
    """Sorted-key UTF-8 JSON to ``path`` or stdout."""
    text = json.dumps(_clean(payload), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def write_table(header, rows, path=None):
    """CSV with ``repr`` floats to ``path`` or stdout."""

    def cell(v):
        return repr(float(v)) if isinstance(v, float) else v

    fh = sys.stdout if path is None else open(path, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell(v) for v in row])
    finally:
        if path is not None:
            fh.close()
