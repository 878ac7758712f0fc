"""Command line front end.

``smallball split|bounds|verify|asymptotics --config <path> [--out <dir>] [--seed <u64>]``

Exit codes: 0 success, 1 configuration error, 2 numerical or component
error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from .asymptotics import MCConfig, fit_scaling, sandwich_scaling_report
from .bounds import bounds_report, certificate_ladder
from .config import RunConfig, load_config
from .errors import ConfigError, SmallBallError
from .grid import FunctionSpec, make_grid, sample
from .kernel import objective, oracle_minimize, solve_split
from .report import OutputWriter
from .simulate import (
    MCRequest,
    gen_mixed,
    gen_wiener,
    girsanov_consistency,
    integration_by_parts_check,
    mc_small_ball,
    novikov_identity_check,
    wiener_small_ball_exact,
)

__all__ = ["EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_OK", "EXIT_VERIFY", "cmd_asymptotics", "cmd_bounds",
           "cmd_split", "cmd_verify", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

IBP_LIMIT = 0.02
WIENER_ALLOWANCE = 0.01


class VerificationFailure(SmallBallError):
    """A verification check did not pass; the files are still written."""


def _writer(cfg: RunConfig, command: str) -> OutputWriter:
    return OutputWriter(cfg.directory, command, cfg.digest, cfg.seed, __version__)


def _grid(cfg):
    return make_grid(cfg.T, cfg.grid_n)


def cmd_split(cfg: RunConfig):
    """Solve for the optimal split; writes ``split.json`` and ``split.csv``."""
    grid = _grid(cfg)
    gprime = sample(cfg.trend, grid)
    split = solve_split(gprime, cfg.H)
    x_or = oracle_minimize(gprime, cfg.H)
    out = _writer(cfg, "split")
    doc = split.to_dict(include_functions=False)
    doc["oracle_exponent"] = 0.5 * objective(x_or, gprime, cfg.H)
    if "json" in cfg.formats:
        out.json("split.json", doc)
    if "csv" in cfg.formats:
        rows = zip(grid.nodes.tolist(), split.gB_prime.values.tolist(), split.gW_prime.values.tolist(),
                   split.h.values.tolist())
        out.csv("split.csv", ["t", "gB_prime", "gW_prime", "h"], rows)
    out.finish()
    return out.paths


def cmd_bounds(cfg: RunConfig):
    """Lower bounds and certificate ladders; writes ``bounds.json`` and ``bounds.csv``."""
    source = cfg.P0 if cfg.P0 is not None else MCRequest(cfg.n_paths, cfg.seed, cfg.generator)
    rep = bounds_report(cfg.trend, cfg.boundary, cfg.H, cfg.T, cfg.grid_n, cfg.epsilons, source, cfg.ladder)
    out = _writer(cfg, "bounds")
    if "json" in cfg.formats:
        out.text("bounds.json", rep.to_json() + "\n")
    if "csv" in cfg.formats:
        out.text("bounds.csv", rep.to_csv())
    bad = [c for c in rep.certificates if c.upper < c.lower * (1.0 - 1e-12)]
    out.finish("failed" if bad else "ok")
    if bad:
        raise VerificationFailure(f"certificate upper bound below lower bound at epsilon={bad[0].epsilon}, n={bad[0].n}")
    return out.paths


def _girsanov(cfg, split, fv):
    batch = gen_mixed(_grid(cfg), cfg.H, cfg.n_paths, cfg.seed, cfg.generator)
    eps = float(cfg.verify["girsanov_epsilon"])
    d, r = girsanov_consistency(batch, split, fv, eps)
    comb = math.hypot(d.stderr, r.stderr)
    wm, ws = r.diagnostics["weight_mean"], r.diagnostics["weight_stderr"]
    m1 = 3.0 * comb - abs(d.p_hat - r.p_hat)
    m2 = 4.0 * ws - abs(wm - 1.0)
    return {"pass": bool(m1 >= 0 and m2 >= 0), "margin": min(m1, m2), "epsilon": eps,
            "direct": d.to_dict(), "reweighted": r.to_dict()}


def _sandwich(cfg, split, fv):
    mc = MCConfig(cfg.n_paths, cfg.seed, cfg.grid_n, cfg.T, cfg.generator)
    rep = sandwich_scaling_report(cfg.H, fv, cfg.trend, cfg.epsilons, mc, cfg.ladder)
    margins, rows = [], []
    for r in rep.rows:
        m_lo = r["p_hat"] + 3 * r["stderr"] - r["lower"]
        m_up = r["upper"] + 3 * r["stderr"] - r["p_hat"]
        margins += [m_lo, m_up]
        rows.append(dict(r, margin_lower=m_lo, margin_upper=m_up))
    eps0 = min(cfg.epsilons)
    p0 = {eps0: next(r["P0"] for r in rep.rows if r["epsilon"] == eps0)}
    ups = [c.upper for c in certificate_ladder(split, fv, [eps0], p0, cfg.ladder)]
    # upper is P0 times a factor; the factor decides monotonicity even when P0 is estimated as 0
    factors = [c.upper for c in certificate_ladder(split, fv, [eps0], {eps0: 1.0}, cfg.ladder)]
    decreasing = all(b < a for a, b in zip(factors, factors[1:]))
    return {"pass": bool(min(margins) >= 0 and decreasing), "margin": min(margins), "rows": rows,
            "ladder": list(cfg.ladder), "upper_at_smallest_epsilon": ups,
            "upper_over_P0_at_smallest_epsilon": factors,
            "decreasing_in_n": decreasing}


def _ibp(cfg):
    f = FunctionSpec.from_dict(cfg.verify["ibp_function"])
    vals = []
    for n in cfg.verify["ibp_ladder"]:
        batch = gen_mixed(make_grid(cfg.T, n), cfg.H, cfg.verify["ibp_paths"], cfg.seed, "volterra")
        vals.append(integration_by_parts_check(batch, f))
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    return {"pass": bool(decreasing and vals[-1] <= IBP_LIMIT), "margin": IBP_LIMIT - vals[-1],
            "ladder": list(cfg.verify["ibp_ladder"]), "discrepancy": vals, "decreasing": decreasing}


def _novikov(cfg):
    f = FunctionSpec.from_dict(cfg.verify["novikov_function"])
    lhs, rhs = novikov_identity_check(f, cfg.verify["novikov_epsilon"], cfg.verify["wiener_paths"],
                                      cfg.seed, cfg.T, cfg.verify["wiener_grid_n"])
    margin = 3.0 * math.hypot(lhs.stderr, rhs.stderr) - abs(lhs.p_hat - rhs.p_hat)
    return {"pass": bool(margin >= 0), "margin": margin, "lhs": lhs.to_dict(), "rhs": rhs.to_dict()}


def _reflection(cfg):
    n = cfg.verify["wiener_grid_n"]
    grid = make_grid(1.0, n)
    batch = gen_wiener(grid, cfg.verify["wiener_paths"], cfg.seed)
    est = mc_small_ball(batch, grid.zeros(), sample(FunctionSpec.constant(1.0), grid), 1.0)
    exact = wiener_small_ball_exact(1.0, 1.0)
    margin = 3.0 * est.stderr + WIENER_ALLOWANCE - abs(est.p_hat - exact)
    return {"pass": bool(margin >= 0), "margin": margin, "estimate": est.to_dict(), "exact": exact,
            "allowance": WIENER_ALLOWANCE}


def cmd_verify(cfg: RunConfig):
    """Run the configured consistency checks; writes ``verify.json``."""
    checks = cfg.verify["checks"]
    grid = _grid(cfg)
    fv = sample(cfg.boundary, grid)
    split = solve_split(sample(cfg.trend, grid), cfg.H) if {"girsanov", "sandwich"} & set(checks) else None
    results = {}
    for name in checks:
        if name == "girsanov":
            results[name] = _girsanov(cfg, split, fv)
        elif name == "sandwich":
            results[name] = _sandwich(cfg, split, fv)
        elif name == "ibp":
            results[name] = _ibp(cfg)
        elif name == "novikov":
            results[name] = _novikov(cfg)
        elif name == "reflection":
            results[name] = _reflection(cfg)
    ok = all(r["pass"] for r in results.values())
    out = _writer(cfg, "verify")
    out.json("verify.json", {"all_pass": ok, "checks": results, "seed": cfg.seed})
    out.finish("ok" if ok else "failed")
    for name, r in results.items():
        print(f"{name}: {'PASS' if r['pass'] else 'FAIL'} (margin {r['margin']:.4g})")
    if not ok:
        failed = [k for k, r in results.items() if not r["pass"]]
        raise VerificationFailure(f"verification failed: {', '.join(failed)}")
    return out.paths


def cmd_asymptotics(cfg: RunConfig):
    """Scaling fits and the sandwich table; writes ``asymptotics*.json/csv``."""
    a = cfg.asymptotics
    mc = MCConfig(a["n_paths"], cfg.seed, a["grid_n"], cfg.T)
    out = _writer(cfg, "asymptotics")
    fits = []
    for proc in a["processes"]:
        grid = make_grid(cfg.T, a["grid_n"])
        fit = fit_scaling(proc, a["H"], sample(cfg.boundary, grid), a["epsilons"], mc, tuple(a["band"]))
        fits.append(fit)
    sw = sandwich_scaling_report(cfg.H, cfg.boundary, cfg.trend, cfg.epsilons,
                                 MCConfig(cfg.n_paths, cfg.seed, cfg.grid_n, cfg.T, cfg.generator), cfg.ladder)
    if "json" in cfg.formats:
        out.json("asymptotics.json", {"fits": [f.to_dict() for f in fits], "sandwich": sw.to_dict()})
    if "csv" in cfg.formats:
        rows = []
        for f in fits:
            for e, p, u in zip(f.epsilons, f.p_hats, f.used):
                nl = -math.log(p.p_hat) if p.p_hat > 0 else math.inf
                rows.append([f.process, e, p.p_hat, p.stderr, nl, u])
        out.csv("asymptotics_fit.csv", ["process", "epsilon", "p_hat", "stderr", "neglog", "used"], rows)
        out.text("asymptotics_sandwich.csv", sw.to_csv())
    out.finish()
    return out.paths


COMMANDS = {"split": cmd_split, "bounds": cmd_bounds, "verify": cmd_verify, "asymptotics": cmd_asymptotics}


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smallball", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"smallball {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.split(";")[0])
        sp.add_argument("--config", required=True, help="path to the JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides outputs.directory)")
        sp.add_argument("--seed", type=_seed, help="Monte Carlo seed (overrides mc.seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = COMMANDS[args.command](cfg)
    except VerificationFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VERIFY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SmallBallError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
