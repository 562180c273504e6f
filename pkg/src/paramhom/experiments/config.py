"""Sectioned key-value experiment configuration with typed, per-scenario defaults."""
from __future__ import annotations

import configparser
import copy
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# ---------------------------------------------------------------------------
# value types

def _number(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _split(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


PARSERS = {
    "str": str.strip,
    "int": _parse_int,
    "float": _number,
    "bool": _parse_bool,
    "ints": lambda t: [_parse_int(s) for s in _split(t)],
    "floats": lambda t: [_number(s) for s in _split(t)],
}


def _format(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


# section -> key -> type; every scenario fills these with its own defaults
SCHEMA: dict[str, dict[str, str]] = {
    "run": {"scenario": "str", "deterministic": "bool", "threads": "int", "out": "str"},
    "problem": {"family": "str", "modes": "int", "decay": "float", "amplitude": "float",
                "kappa": "float", "lambda_min": "floats", "lambda_ratio": "float",
                "forcing": "floats"},
    "discretization": {"mesh": "int", "order": "int", "y_mesh": "int", "y_order": "int",
                       "eps": "floats", "fine_factor": "int", "quadrature": "int", "levels": "ints",
                       "lambda_eps": "float", "lambda_mesh": "int", "lambda_y_mesh": "int",
                       "lambda_fine_factor": "int"},
    "gpc": {"n_list": "ints", "bound": "str", "p": "float", "form": "str"},
}

# sections/keys that do not change the computed numbers stay out of the hash
UNHASHED = {("run", "deterministic"), ("run", "threads"), ("run", "out")}

# desk-scale budgets
MAX_MESH = 64
MAX_MODES = 8
MAX_N = 64
MIN_EPS = 1.0 / 64


@dataclass
class ExperimentConfig:
    """Typed configuration values, ``values[section][key]``.  Keys absent from
    the scenario's defaults are rejected."""
    values: dict = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.values["run"]["scenario"]

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"{section}.{key}", "not defined for this scenario") from None

    def __getitem__(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.get(section, key)

    def set(self, section: str, key: str, text: str) -> None:
        dotted = f"{section}.{key}"
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(dotted, "unknown key")
        if section not in self.values or key not in self.values[section]:
            raise ConfigError(dotted, f"not used by scenario {self.values['run']['scenario']!r}")
        kind = SCHEMA[section][key]
        try:
            self.values[section][key] = PARSERS[kind](text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(dotted, f"expected {kind}: {exc}") from None

    def with_overrides(self, overrides=()) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings."""
        out = copy.deepcopy(self)
        for item in overrides:
            lhs, sep, rhs = item.partition("=")
            section, dot, key = lhs.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(lhs.strip() or item, "override must look like section.key=value")
            if (section, key) == ("run", "scenario"):
                raise ConfigError("run.scenario", "the scenario cannot be overridden")
            out.set(section, key.strip(), rhs)
        return out

    def to_text(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, val in keys.items():
                lines.append(f"{key} = {_format(SCHEMA[section][key], val)}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        parts = [f"{s}.{k}={_format(SCHEMA[s][k], v)}" for s, keys in self.values.items()
                 for k, v in keys.items() if (s, k) not in UNHASHED]
        parts.append(f"run.scenario={self.scenario}")
        return hashlib.sha256("\n".join(sorted(set(parts))).encode()).hexdigest()[:16]

    @classmethod
    def defaults(cls, scenario: str) -> "ExperimentConfig":
        from .scenarios import get_scenario
        sc = get_scenario(scenario)
        vals = copy.deepcopy(sc.defaults)
        run = {"scenario": scenario, "deterministic": False, "threads": 1, "out": f"results/{scenario}",
               **vals.pop("run", {})}
        return cls({"run": run, **vals})

    @classmethod
    def from_text(cls, text: str, scenario: str | None = None) -> "ExperimentConfig":
        """Parse INI text on top of the scenario defaults.  ``scenario`` is used
        when the text has no ``run.scenario``; a conflicting one is rejected."""
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("<file>", f"unreadable config: {exc}") from None
        named = cp.get("run", "scenario", fallback=None)
        named = named.strip() if named else None
        if named and scenario and named != scenario:
            raise ConfigError("run.scenario", f"config is for {named!r}, not {scenario!r}")
        name = named or scenario
        if not name:
            raise ConfigError("run.scenario", "missing")
        cfg = cls.defaults(name)
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(section, "unknown section")
            for key, val in cp.items(section):
                if (section, key) == ("run", "scenario"):
                    continue
                cfg.set(section, key, val)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, scenario: str | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        return cls.from_text(text, scenario)

    def validate(self) -> "ExperimentConfig":
        from .scenarios import get_scenario
        v = self.values

        def check(section, key, ok, msg):
            if section in v and key in v[section] and not ok(v[section][key]):
                raise ConfigError(f"{section}.{key}", msg)

        check("run", "threads", lambda t: t >= 1, "must be at least 1")
        check("problem", "modes", lambda m: 1 <= m <= MAX_MODES, f"must lie in [1, {MAX_MODES}]")
        check("problem", "decay", lambda s: s > 0.0, "decay exponent must be positive")
        check("problem", "amplitude", lambda a: a > 0, "must be positive")
        check("problem", "kappa", lambda k: k >= 0, "must be nonnegative (0 derives it from the bounds)")
        check("problem", "lambda_min", lambda ls: len(ls) > 0 and all(x > 0 for x in ls), "needs positive values")
        check("problem", "lambda_ratio", lambda r: r >= 1.0, "must be at least 1")
        for key in ("mesh", "y_mesh", "lambda_mesh", "lambda_y_mesh"):
            check("discretization", key, lambda n: 1 <= n <= MAX_MESH, f"must lie in [1, {MAX_MESH}]")
        for key in ("order", "y_order"):
            check("discretization", key, lambda o: o in (1, 2), "must be 1 or 2")
        for key in ("fine_factor", "lambda_fine_factor"):
            check("discretization", key, lambda f: f >= 1, "must be positive")
        check("discretization", "quadrature", lambda q: 1 <= q <= 12, "must lie in [1, 12]")
        check("discretization", "levels", lambda ls: len(ls) >= 2 and all(1 <= n <= MAX_MESH for n in ls),
              f"needs at least two mesh sizes in [1, {MAX_MESH}]")
        check("discretization", "eps", lambda es: len(es) > 0 and all(MIN_EPS - 1e-15 <= e <= 1 for e in es),
              "values must lie in [1/64, 1]")
        check("discretization", "lambda_eps", lambda e: MIN_EPS - 1e-15 <= e <= 1, "must lie in [1/64, 1]")
        check("gpc", "n_list", lambda ns: len(ns) > 0 and all(1 <= n <= MAX_N for n in ns),
              f"values must lie in [1, {MAX_N}]")
        check("gpc", "p", lambda p: 0 < p < 1, "must lie in (0, 1)")
        sc = get_scenario(self.scenario)
        sc.check(self)
        return self
