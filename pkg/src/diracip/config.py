"""Experiment configuration: TOML files merged over built-in defaults.

A config file has top-level tables shared by all experiments and one
``[experiments.<name>]`` table per subcommand::

    seed = 0

    [domain]
    shape = "box"          # or "ball" (with radius instead of size)
    center = [0.0, 0.0, 2.0]
    size = 1.0
    n = 17

    [phase]
    x0 = [0.0, 0.0, 0.0]
    omega = [1.0, 0.0, 0.0]

    [weights]
    alpha = 0.05
    C0 = 20.0

    [h_grid]
    exponents = [2, 3, 4, 5, 6]   # h = 2**-k

    [gamma]
    margin = 0.05                 # Gamma = {(x - x0).nu <= margin}

    [coefficients.base]
    A = ["0.3*sin(x2)", "0.2*x1*x3", "0.1*cos(x1+x3)"]
    q_plus = "1+0.5*x1*x2"
    q_minus = "2+0.3*x3"

Coefficient expressions use ``x1, x2, x3``, ``pi``, the operators
``+ - * / **`` and ``exp sin cos sqrt log tanh``. Any key of an experiment
table overrides the shared value of the same name for that experiment only.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import tomli

from .coefficients import Coefficients
from .expr import ExpressionError, parse
from .geometry import DomainError, build_domain

EXPERIMENTS = (
    "algebra-selftest",
    "phase-check",
    "cauchy-check",
    "cgo-residual",
    "forward-converge",
    "identity-check",
    "carleman-probe",
    "decay-scan",
    "recover-slices",
)

BASE_A = ["0.3*sin(x2)", "0.2*x1*x3", "0.1*cos(x1+x3)"]
BUMP = "64*((x1**2-0.25)*(x2**2-0.25)*((x3-2)**2-0.25))**2"

# small box near the pole for the decay scan: the weighted solves only
# resolve a few e-folds of exp(phi/h), so the range of phi must stay small
_DECAY_L = 0.15
_DECAY_C = 1.1
_DECAY_A = _DECAY_L / 2
_DECAY_BUMP = (f"((x1**2-{_DECAY_A**2!r})*(x2**2-{_DECAY_A**2!r})*((x3-{_DECAY_C})**2-{_DECAY_A**2!r}))**2"
               f"*{1 / _DECAY_A**12!r}")

DEFAULTS = {
    "seed": 0,
    "domain": {"shape": "box", "center": [0.0, 0.0, 2.0], "size": 1.0, "n": 17},
    "phase": {"x0": [0.0, 0.0, 0.0], "omega": [1.0, 0.0, 0.0]},
    "weights": {"alpha": 0.05, "C0": 20.0},
    "h_grid": {"exponents": [2, 3, 4, 5, 6]},
    "gamma": {"margin": 0.05},
    "coefficients": {
        "base": {"A": BASE_A, "q_plus": "1+0.5*x1*x2", "q_minus": "2+0.3*x3"},
    },
    "experiments": {
        "algebra-selftest": {"samples": 1000, "tolerance": 1e-12},
        "phase-check": {"resolutions": [9, 17, 33], "order_target": 2.0, "order_window": 0.5,
                        "closed_form_tolerance": 1e-12},
        "cauchy-check": {"resolutions": [64, 128], "theta": 1.5, "lo": [-1.0, 1.0], "hi": [1.0, 3.0],
                         "density": "exp(-((x1-0.1)**2+(x2-2.05)**2)/0.04)*(1+x1*x2)",
                         "quadrature_points": 5, "quadrature_radius": 4.0, "quadrature_nodes": 300,
                         "min_order": 1.0, "quadrature_tolerance": 1e-6},
        "cgo-residual": {"cylinder_n": 17, "orders": [0, 1, 2, 3], "variant": "minus_rho",
                         "min_slope_order1": 0.7, "min_slope_order3": 2.5},
        "forward-converge": {"resolutions": [9, 13, 17, 21], "stabilization": 0.25,
                             "solution": {"real": ["sin(x1)*x2", "cos(x2+x3)", "x1*x3**2", "exp(0.3*x1)"],
                                          "imag": ["0", "x1*x2", "0", "sin(x3)"]},
                             "gauge": "0.5*" + BUMP, "gauge_n": 13, "gauge_samples": 4,
                             "order_range": [1.5, 2.5], "solver_tolerance": 1e-10},
        "identity-check": {"resolutions": [9, 13, 17, 25, 33], "solver": "decoupled", "pair": "gauge",
                           "gauge": "6*" + BUMP, "gap_tolerance": 0.05, "gap_resolution": 17},
        "carleman-probe": {"domain": {"n": 9}, "panels": 6, "order": 8, "degree": 1,
                           "families": ["bump", "layer", "oscillatory"], "kinds": ["scalar", "dirac"],
                           "coefficients": {"base": {"q_minus": "x1**2+x2**2+(x3-2)**2-0.09"}},
                           "slope_window": 0.2},
        "decay-scan": {
            "domain": {"center": [0.0, 0.0, _DECAY_C], "size": _DECAY_L, "n": 33},
            "cylinder_n": 17,
            "cutoff": [0.15, 0.35],
            "coefficients": {
                "base": {"A": ["0.6*sin(20*x2)", f"4*x1*(x3-{_DECAY_C})", "0.3*cos(20*(x1+x3))"],
                         "q_plus": "1+20*x1*x2", "q_minus": f"5+3*(x3-{_DECAY_C})"},
                "electric": {"A": ["0.6*sin(20*x2)", f"4*x1*(x3-{_DECAY_C})", "0.3*cos(20*(x1+x3))"],
                             "q_plus": f"1+20*x1*x2+{_DECAY_BUMP}",
                             "q_minus": (f"5+3*(x3-{_DECAY_C})-3*exp(-(x1**2+x2**2+(x3-{_DECAY_C})**2)"
                                         f"/(2*{(0.15 * _DECAY_L) ** 2!r}))")},
            },
            "gauge": f"0.5*{_DECAY_BUMP}",
            "kinds": ["magnetic", "electric"],
        },
        "recover-slices": {"slice_m": 32, "n_theta": 164, "vector_slice_m": 16, "vector_n_theta": 82,
                           "error_tolerance": 0.10, "curl_tolerance": 0.01, "theta_tolerance": 1e-10,
                           "theta_free_q": "exp(-(x1**2+(sqrt(x2**2+x3**2)-2)**2)/0.05)",
                           "theta_control_q": "exp(-(x1**2+x2**2+(x3-2)**2)/0.05)",
                           "write_grids": True},
    },
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class ExperimentConfig:
    """A resolved configuration: shared settings merged with one experiment's overrides."""

    experiment: str
    settings: dict
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def domain_spec(self):
        return dict(self.settings["domain"])

    def domain(self, n=None):
        spec = self.domain_spec
        if n is not None:
            spec["n"] = int(n)
        return build_domain(spec)

    @property
    def x0(self):
        return np.asarray(self.settings["phase"]["x0"], dtype=float)

    @property
    def omega(self):
        return np.asarray(self.settings["phase"]["omega"], dtype=float)

    @property
    def alpha(self):
        return float(self.settings["weights"]["alpha"])

    @property
    def C0(self):
        return float(self.settings["weights"]["C0"])

    @property
    def h_grid(self):
        hg = self.settings["h_grid"]
        if "h" in hg:
            return [float(h) for h in hg["h"]]
        return [2.0 ** -int(k) for k in hg["exponents"]]

    @property
    def gamma_margin(self):
        return float(self.settings["gamma"]["margin"])

    def coefficients(self, name="base") -> Coefficients:
        table = self.settings["coefficients"]
        if name not in table:
            raise ConfigError(f"no coefficient scenario {name!r}")
        c = table[name]
        return Coefficients.build(A=tuple(c["A"]), q_plus=c["q_plus"], q_minus=c["q_minus"])

    def get(self, key, default=None):
        return self.settings.get(key, default)

    def __getitem__(self, key):
        return self.settings[key]

    @property
    def hash(self):
        """SHA-256 of the canonical JSON of the resolved settings and seed."""
        blob = json.dumps({"experiment": self.experiment, "seed": self.seed, "settings": _canonical(self.settings)},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self):
        try:
            self.domain()
        except DomainError as exc:
            raise ConfigError(f"domain: {exc}") from exc
        for name, c in self.settings["coefficients"].items():
            for key in ("A", "q_plus", "q_minus"):
                if key not in c:
                    raise ConfigError(f"coefficients.{name}: missing {key}")
            if len(c["A"]) != 3:
                raise ConfigError(f"coefficients.{name}.A needs three components")
            try:
                for e in (*c["A"], c["q_plus"], c["q_minus"]):
                    parse(e)
            except ExpressionError as exc:
                raise ConfigError(f"coefficients.{name}: {exc}") from exc
        if not 0 < self.alpha < 1:
            raise ConfigError("weights.alpha must lie in (0, 1)")
        if self.C0 <= 0:
            raise ConfigError("weights.C0 must be positive")
        hs = self.h_grid
        if len(hs) < 2 or any(not 0 < h < 1 for h in hs):
            raise ConfigError("h_grid needs at least two values in (0, 1)")
        if np.linalg.norm(self.omega) == 0:
            raise ConfigError("phase.omega must be nonzero")
        return self


def resolve(data: dict | None, experiment: str, seed=None) -> ExperimentConfig:
    """Merge ``data`` over the defaults and apply the experiment's overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    full = _merge(DEFAULTS, data or {})
    unknown = set(full["experiments"]) - set(EXPERIMENTS)
    if unknown:
        raise ConfigError(f"unknown experiment tables: {sorted(unknown)}")
    shared = {k: v for k, v in full.items() if k not in ("experiments", "seed")}
    settings = _merge(shared, full["experiments"].get(experiment, {}))
    s = int(full.get("seed", 0) if seed is None else seed)
    return ExperimentConfig(experiment, settings, s, full).validate()


def load_config(path, experiment: str, seed=None) -> ExperimentConfig:
    if path is None:
        return resolve(None, experiment, seed)
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return resolve(data, experiment, seed)
