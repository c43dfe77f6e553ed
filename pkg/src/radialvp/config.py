"""Simulation configuration: an INI file with explicit physics and numerics.

Every value that affects the numbers must be written in the file; the only
defaults are ``lambda = 1``, ``t0 = 0``, ``field_update = stage`` and the
diagnostics/output settings.  Errors name the file, line, section and key.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evolve
from .diagnostics import WeightError, parse_weight
from .field import ParticleEnsemble

__all__ = ["ConfigError", "SimConfig", "load_config", "parse_config", "parse_times"]


class ConfigError(ValueError):
    """Invalid configuration; the message points at the offending line."""


_SCHEMA = {
    "physics": {"q", "lambda"},
    "initial": None,  # profile parameters are checked against the profile class
    "sampling": {"method", "theta_range", "a_range", "n_theta", "n_a", "n", "seed"},
    "time": {"t0", "t_end", "dt_min", "dt_factor", "dt_max", "field_update"},
    "diagnostics": {
        "times", "norms", "tau_alphas", "tangents", "rho_bandwidth", "field_fit",
        "average_fit", "scatter_fit", "scatter_compare", "e_inf_window",
    },
    "output": {"snapshot_times"},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s=:#;][^=:]*?)\s*[=:]")


def _line_map(text: str):
    lines, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


_CALL_RE = re.compile(r"^(lin|geom)\(\s*([^,]+),\s*([^,]+),\s*([^,)]+)\)$")


def parse_times(text: str) -> tuple:
    """``geom(t1, t2, n)``, ``lin(t1, t2, n)`` or a comma list of times."""
    text = text.strip()
    m = _CALL_RE.match(text)
    if m:
        lo, hi, n = float(m.group(2)), float(m.group(3)), int(m.group(4))
        if n < 1:
            raise ValueError("need at least one time")
        if m.group(1) == "geom":
            if not lo > 0:
                raise ValueError("geom() needs a positive start")
            arr = np.geomspace(lo, hi, n)
        else:
            arr = np.linspace(lo, hi, n)
        # pin the end points so they land exactly on the requested values
        arr[0], arr[-1] = lo, hi
        return tuple(float(x) for x in arr)
    if not text:
        return ()
    values = tuple(float(x) for x in text.split(","))
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("times must be strictly increasing")
    return values


@dataclass(frozen=True)
class SimConfig:
    q: float
    lam: float
    profile: str
    epsilon: float
    profile_params: dict
    sampling: str
    theta_range: tuple
    a_range: tuple
    n_theta: int | None
    n_a: int | None
    n: int | None
    seed: int | None
    t0: float
    t_end: float
    dt_min: float
    dt_factor: float
    dt_max: float
    field_update: str
    times: tuple
    norms: tuple = ()
    tau_alphas: tuple = ()
    tangents: bool = False
    rho_bandwidth: float = 0.05
    field_fit: tuple = (1e2, 1e4)
    average_fit: tuple = (1e2, 1e3)
    scatter_fit: tuple = (1e2, 1e3)
    scatter_compare: float = 1e3
    e_inf_window: int = 1
    snapshot_times: tuple = ()
    source: str = field(default="", compare=False)

    def make_profile(self):
        return evolve.make_profile(self.profile, self.epsilon, **self.profile_params)

    def sample(self) -> ParticleEnsemble:
        prof = self.make_profile()
        if self.sampling == "grid":
            return evolve.sample_grid(prof, self.theta_range, self.a_range, self.n_theta, self.n_a,
                                      self.q, self.lam, self.t0)
        return evolve.sample_monte_carlo(prof, self.theta_range, self.a_range, self.n, self.seed,
                                         self.q, self.lam, self.t0)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("source")
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, parser, lines, path):
        self.parser, self.lines, self.path = parser, lines, path

    def where(self, section, key=None):
        n = self.lines.get((section, key)) or self.lines.get((section, None))
        loc = f"{self.path}:{n}" if n else self.path
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section, key, msg):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def raw(self, section, key, required=True):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if required:
            if not self.parser.has_section(section):
                raise ConfigError(f"{self.path}: missing section [{section}]")
            self.fail(section, None, f"missing required key {key!r}")
        return None

    def get(self, section, key, conv, default=None, required=True):
        text = self.raw(section, key, required and default is None)
        if text is None:
            return default
        try:
            return conv(text)
        except (ValueError, TypeError) as exc:
            self.fail(section, key, f"cannot parse {text!r}: {exc}")


def _pair(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return tuple(parts)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _strings(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text):
    value = text.strip().lower()
    if value in ("true", "yes", "on", "1"):
        return True
    if value in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def parse_config(text: str, path: str = "<config>") -> SimConfig:
    lines = _line_map(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: [{exc.section}] {exc.option}: duplicate key") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside any section") from None
    except configparser.ParsingError as exc:
        n, line = exc.errors[0]
        raise ConfigError(f"{path}:{n}: cannot parse line {line}") from None
    rd = _Reader(parser, lines, path)

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{rd.where(section)}: unknown section")
        allowed = _SCHEMA[section]
        for key in parser.options(section):
            if allowed is not None and key not in allowed:
                rd.fail(section, key, "unknown key")

    q = rd.get("physics", "q", float)
    if not q > 0:
        rd.fail("physics", "q", "must be positive")
    lam = rd.get("physics", "lambda", float, default=1.0)

    profile = rd.get("initial", "profile", str.strip)
    if profile not in evolve.PROFILES:
        rd.fail("initial", "profile", f"unknown profile; choose from {sorted(evolve.PROFILES)}")
    epsilon = rd.get("initial", "epsilon", float)
    if not epsilon >= 0:
        rd.fail("initial", "epsilon", "must be non-negative")
    fields = {f.name: f for f in dataclasses.fields(evolve.PROFILES[profile]) if f.name != "epsilon"}
    params = {}
    for key in parser.options("initial"):
        if key in ("profile", "epsilon"):
            continue
        if key not in fields:
            rd.fail("initial", key, f"not a parameter of {profile!r}; expected {sorted(fields)}")
        params[key] = rd.get("initial", key, float)
    for name, f in fields.items():
        if name not in params and f.default is dataclasses.MISSING:
            rd.fail("initial", None, f"missing required key {name!r} for profile {profile!r}")

    method = rd.get("sampling", "method", str.strip)
    if method not in ("grid", "monte-carlo"):
        rd.fail("sampling", "method", "must be 'grid' or 'monte-carlo'")
    theta_range = rd.get("sampling", "theta_range", _pair)
    a_range = rd.get("sampling", "a_range", _pair)
    if not theta_range[1] > theta_range[0]:
        rd.fail("sampling", "theta_range", "must be increasing")
    if not (a_range[1] > a_range[0] >= 0):
        rd.fail("sampling", "a_range", "must be increasing and non-negative")
    n_theta = n_a = n = seed = None
    if method == "grid":
        n_theta = rd.get("sampling", "n_theta", int)
        n_a = rd.get("sampling", "n_a", int)
        for key, val in (("n_theta", n_theta), ("n_a", n_a)):
            if val < 1:
                rd.fail("sampling", key, "must be at least 1")
    else:
        n = rd.get("sampling", "n", int)
        seed = rd.get("sampling", "seed", int)
        if n < 1:
            rd.fail("sampling", "n", "must be at least 1")

    t0 = rd.get("time", "t0", float, default=0.0)
    t_end = rd.get("time", "t_end", float)
    if not t0 >= 0:
        rd.fail("time", "t0", "must be non-negative")
    if not t_end > t0:
        rd.fail("time", "t_end", "must exceed t0")
    dt_min = rd.get("time", "dt_min", float)
    dt_factor = rd.get("time", "dt_factor", float)
    dt_max = rd.get("time", "dt_max", float)
    if not dt_min > 0:
        rd.fail("time", "dt_min", "must be positive")
    if not dt_factor >= 0:
        rd.fail("time", "dt_factor", "must be non-negative")
    if not dt_max >= dt_min:
        rd.fail("time", "dt_max", "must be at least dt_min")
    field_update = rd.get("time", "field_update", str.strip, default="stage")
    if field_update not in evolve.FIELD_UPDATES:
        rd.fail("time", "field_update", f"must be one of {evolve.FIELD_UPDATES}")

    def times_in_range(section, key, values):
        if any(not (t0 <= t <= t_end) for t in values):
            rd.fail(section, key, f"times must lie in [t0, t_end] = [{t0}, {t_end}]")
        return values

    times = rd.get("diagnostics", "times", parse_times, default=(t0, t_end))
    times = times_in_range("diagnostics", "times", times)
    if times[-1] != t_end:
        times = times + (t_end,)
    norms = rd.get("diagnostics", "norms", _strings, default=())
    for expr in norms:
        try:
            parse_weight(expr)
        except WeightError as exc:
            rd.fail("diagnostics", "norms", str(exc))
    tau_alphas = rd.get("diagnostics", "tau_alphas", _floats, default=())
    if any(not a > 0 for a in tau_alphas):
        rd.fail("diagnostics", "tau_alphas", "must be positive")
    e_inf_window = rd.get("diagnostics", "e_inf_window", int, default=1)
    if not 1 <= e_inf_window <= len(times):
        rd.fail("diagnostics", "e_inf_window", "must be between 1 and the number of diagnostic times")

    snap_text = rd.get("output", "snapshot_times", str.strip, default="diagnostics")
    if snap_text == "diagnostics":
        snapshot_times = times
    elif snap_text == "none":
        snapshot_times = ()
    else:
        try:
            snapshot_times = parse_times(snap_text)
        except ValueError as exc:
            rd.fail("output", "snapshot_times", str(exc))
        snapshot_times = times_in_range("output", "snapshot_times", snapshot_times)

    return SimConfig(
        q=q,
        lam=lam,
        profile=profile,
        epsilon=epsilon,
        profile_params=params,
        sampling=method,
        theta_range=theta_range,
        a_range=a_range,
        n_theta=n_theta,
        n_a=n_a,
        n=n,
        seed=seed,
        t0=t0,
        t_end=t_end,
        dt_min=dt_min,
        dt_factor=dt_factor,
        dt_max=dt_max,
        field_update=field_update,
        times=times,
        norms=norms,
        tau_alphas=tau_alphas,
        tangents=rd.get("diagnostics", "tangents", _bool, default=False),
        rho_bandwidth=rd.get("diagnostics", "rho_bandwidth", float, default=0.05),
        field_fit=rd.get("diagnostics", "field_fit", _pair, default=(1e2, 1e4)),
        average_fit=rd.get("diagnostics", "average_fit", _pair, default=(1e2, 1e3)),
        scatter_fit=rd.get("diagnostics", "scatter_fit", _pair, default=(1e2, 1e3)),
        scatter_compare=rd.get("diagnostics", "scatter_compare", float, default=1e3),
        e_inf_window=e_inf_window,
        snapshot_times=snapshot_times,
        source=text,
    )


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
