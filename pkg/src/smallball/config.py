"""Run configuration: a versioned JSON document validated at load time.

Every validation failure raises :class:`ConfigError` whose message starts
with the dotted path of the offending field, e.g. ``mc.n_paths: ...``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, SmallBallError
from .grid import FunctionSpec, HurstIndex, TimeGrid

__all__ = ["SCHEMA_VERSION", "RunConfig", "default_config", "load_config"]

SCHEMA_VERSION = 1
_TOP = {"schema_version", "H", "T", "grid_n", "trend", "boundary", "epsilons", "mc",
        "certificates", "outputs", "P0", "verify", "asymptotics"}
_CHECKS = ("girsanov", "sandwich", "ibp", "novikov", "reflection")
_FORMATS = ("json", "csv")

DEFAULT = {
    "schema_version": SCHEMA_VERSION,
    "H": 0.25,
    "T": 1.0,
    "grid_n": 256,
    "trend": {"kind": "constant", "c": 0.5},
    "boundary": {"kind": "constant", "c": 1.0},
    "epsilons": [0.6, 0.9, 1.2],
    "mc": {"n_paths": 200000, "seed": 1, "generator": "volterra"},
    "certificates": {"ladder": [1, 2, 4, 8, 16]},
    "outputs": {"directory": "out", "formats": ["json", "csv"]},
    "verify": {
        "checks": list(_CHECKS),
        "girsanov_epsilon": 1.2,
        "ibp_function": {"kind": "linear", "a": 1.0},
        "ibp_ladder": [128, 256, 512],
        "ibp_paths": 20000,
        "novikov_function": {"kind": "linear", "a": 1.0, "b": 1.0},
        "novikov_epsilon": 1.0,
        "wiener_paths": 100000,
        "wiener_grid_n": 512,
    },
    "asymptotics": {
        "processes": ["wiener", "mixed"],
        "H": 0.4,
        "epsilons": [2.0, 1.7, 1.4, 1.1, 0.9, 0.75, 0.6],
        "band": [0.005, 0.6],
        "n_paths": 100000,
        "grid_n": 512,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT)


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _real(d, key, path, positive=False):
    if key not in d:
        _fail(path + key, "missing required field")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(path + key, f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        _fail(path + key, f"must be positive, got {v!r}")
    return float(v)


def _int(d, key, path, minimum=None):
    if key not in d:
        _fail(path + key, "missing required field")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path + key, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _fail(path + key, f"must be >= {minimum}, got {v}")
    return v


def _reals(d, key, path, positive=True, min_len=1):
    v = d.get(key)
    if not isinstance(v, list) or len(v) < min_len:
        _fail(path + key, f"expected a list of at least {min_len} number(s)")
    return [_real({str(i): x}, str(i), f"{path}{key}.", positive) for i, x in enumerate(v)]


def _spec(d, key, path):
    if key not in d or not isinstance(d[key], dict):
        _fail(path + key, "expected a function description object with a 'kind' field")
    try:
        return FunctionSpec.from_dict(d[key])
    except SmallBallError as exc:
        _fail(path + key, str(exc))


def _unknown(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        _fail(path + extra[0], "unknown field")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``raw`` keeps the normalized document."""

    H: float
    T: float
    grid_n: int
    trend: FunctionSpec
    boundary: FunctionSpec
    epsilons: tuple
    n_paths: int
    seed: int
    generator: str
    ladder: tuple
    directory: str
    formats: tuple
    P0: dict | None
    verify: dict
    asymptotics: dict
    raw: dict = field(repr=False, compare=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(d, Mapping):
            _fail("<root>", "configuration must be a JSON object")
        d = copy.deepcopy(dict(d))
        _unknown(d, _TOP, "")
        if d.get("schema_version") != SCHEMA_VERSION:
            _fail("schema_version", f"expected {SCHEMA_VERSION}, got {d.get('schema_version')!r}")
        H = _real(d, "H", "")
        try:
            HurstIndex(H)
        except SmallBallError as exc:
            _fail("H", str(exc))
        T = _real(d, "T", "", positive=True)
        n = _int(d, "grid_n", "", minimum=2)
        TimeGrid(T, n)
        trend = _spec(d, "trend", "")
        boundary = _spec(d, "boundary", "")
        eps = _reals(d, "epsilons", "")
        mc = d.get("mc")
        if not isinstance(mc, dict):
            _fail("mc", "expected an object")
        _unknown(mc, {"n_paths", "seed", "generator"}, "mc.")
        n_paths = _int(mc, "n_paths", "mc.", minimum=1)
        seed = _int(mc, "seed", "mc.", minimum=0)
        if seed >= 1 << 64:
            _fail("mc.seed", "must fit in an unsigned 64-bit integer")
        gen = mc.get("generator", "volterra")
        if gen not in ("cholesky", "circulant", "volterra"):
            _fail("mc.generator", f"expected cholesky, circulant or volterra, got {gen!r}")
        cert = d.get("certificates", {"ladder": list(DEFAULT["certificates"]["ladder"])})
        if not isinstance(cert, dict):
            _fail("certificates", "expected an object")
        _unknown(cert, {"ladder"}, "certificates.")
        lad = cert.get("ladder")
        if not isinstance(lad, list) or not lad:
            _fail("certificates.ladder", "expected a non-empty list of integers")
        ladder = tuple(_int({str(i): v}, str(i), "certificates.ladder.", minimum=1) for i, v in enumerate(lad))
        out = d.get("outputs", copy.deepcopy(DEFAULT["outputs"]))
        if not isinstance(out, dict):
            _fail("outputs", "expected an object")
        _unknown(out, {"directory", "formats"}, "outputs.")
        directory = out.get("directory", "out")
        if not isinstance(directory, str) or not directory:
            _fail("outputs.directory", "expected a non-empty string")
        formats = out.get("formats", ["json", "csv"])
        if not isinstance(formats, list) or not set(formats) <= set(_FORMATS) or not formats:
            _fail("outputs.formats", f"expected a non-empty subset of {list(_FORMATS)}, got {formats!r}")
        P0 = d.get("P0")
        if P0 is not None:
            if not isinstance(P0, dict):
                _fail("P0", "expected an object mapping every epsilon (as a string) to a probability")
            vals = {}
            for k in P0:
                try:
                    e = float(k)
                except ValueError:
                    _fail(f"P0.{k}", "key is not a number")
                p = _real(P0, k, "P0.")
                if not 0.0 <= p <= 1.0:
                    _fail(f"P0.{k}", f"probability must lie in [0, 1], got {p}")
                vals[e] = p
            missing = [e for e in eps if e not in vals]
            if missing:
                _fail("P0", f"no probability given for epsilon {missing[0]!r}")
            P0 = vals
        verify = copy.deepcopy(DEFAULT["verify"])
        if "verify" in d:
            if not isinstance(d["verify"], dict):
                _fail("verify", "expected an object")
            _unknown(d["verify"], DEFAULT["verify"], "verify.")
            verify.update(d["verify"])
        for i, c in enumerate(verify["checks"]):
            if c not in _CHECKS:
                _fail(f"verify.checks.{i}", f"unknown check {c!r}; expected one of {list(_CHECKS)}")
        _real(verify, "girsanov_epsilon", "verify.", positive=True)
        _real(verify, "novikov_epsilon", "verify.", positive=True)
        for k in ("ibp_paths", "wiener_paths"):
            _int(verify, k, "verify.", minimum=1)
        _int(verify, "wiener_grid_n", "verify.", minimum=2)
        for i, v in enumerate(verify["ibp_ladder"]):
            _int({str(i): v}, str(i), "verify.ibp_ladder.", minimum=2)
        _spec(verify, "ibp_function", "verify.")
        _spec(verify, "novikov_function", "verify.")
        asy = copy.deepcopy(DEFAULT["asymptotics"])
        if "asymptotics" in d:
            if not isinstance(d["asymptotics"], dict):
                _fail("asymptotics", "expected an object")
            _unknown(d["asymptotics"], DEFAULT["asymptotics"], "asymptotics.")
            asy.update(d["asymptotics"])
        for i, p in enumerate(asy["processes"]):
            if p not in ("wiener", "fbm", "mixed"):
                _fail(f"asymptotics.processes.{i}", f"unknown process {p!r}")
        try:
            HurstIndex(_real(asy, "H", "asymptotics."))
        except SmallBallError as exc:
            _fail("asymptotics.H", str(exc))
        _reals(asy, "epsilons", "asymptotics.")
        band = _reals(asy, "band", "asymptotics.", positive=False, min_len=2)
        if len(band) != 2 or not 0.0 < band[0] < band[1] < 1.0:
            _fail("asymptotics.band", f"expected [low, high] with 0 < low < high < 1, got {band}")
        _int(asy, "n_paths", "asymptotics.", minimum=1)
        _int(asy, "grid_n", "asymptotics.", minimum=2)
        raw = dict(d)
        raw.setdefault("certificates", cert)
        raw.setdefault("outputs", out)
        raw["verify"] = verify
        raw["asymptotics"] = asy
        return cls(H, T, n, trend, boundary, tuple(eps), n_paths, seed, gen, ladder, directory,
                   tuple(formats), P0, verify, asy, raw)

    def with_overrides(self, directory: str | None = None, seed: int | None = None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if directory is not None:
            raw["outputs"]["directory"] = directory
        if seed is not None:
            raw["mc"]["seed"] = seed
        return RunConfig.from_dict(raw)

    def canonical_json(self) -> str:
        """Sorted compact JSON of the document; the output location is not part of it."""
        raw = copy.deepcopy(self.raw)
        raw["outputs"].pop("directory", None)
        return json.dumps(raw, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {p}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return RunConfig.from_dict(d)
