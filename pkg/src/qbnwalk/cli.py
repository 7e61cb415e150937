"""Command-line scenario runner.

Every subcommand validates its whole configuration before computing, and
writes artifacts only after all computation has finished. Exit status is 0
when every assertion holds, 1 when one fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import QBNWalkError, SpecParseError
from .fock import PermutedIsomorphism
from .initial import Dirac, Mixture, Separable, check_budget, init_vectors, parse_initial, required_budget
from .openwalk import applicable_engines, evolve, write_nucleus_snapshot
from .stats import (
    binomial_charfn,
    char_function,
    default_grid,
    fmt,
    gauss_sup_error,
    is_strictly_decreasing,
    moments,
    moments_csv,
)
from .unitary import (
    VectorState,
    compare_open_unitary,
    norm_distribution,
    unitary_evolve,
    witness_expected,
    write_vector_snapshot,
)
from .verify import algebra_suite, channel_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
TOL = 1e-12

DEFAULTS = {
    "d": 1,
    "steps": 4,
    "modes": None,
    "initial": None,
    "engine": "auto",
    "out_dir": "out",
    "format": "csv",
    "seed": 0,
    "snapshot": False,
    "t_max": 3.0,
    "t_step": 0.1,
    "ns": "16,64,256",
    "iso": "canonical",
    "coin_modes": 2,
}

COMMAND_DEFAULTS = {
    "verify-algebra": {"d": 3, "modes": 6},
    "verify-channel": {"modes": 3, "steps": None},
}

# keys each subcommand accepts (from flags or from a config file)
KEYS = {
    "simulate-open": {"d", "steps", "modes", "initial", "engine", "out_dir", "format", "snapshot", "iso"},
    "simulate-unitary": {"d", "steps", "modes", "initial", "out_dir", "format"},
    "compare": {"d", "steps", "modes", "initial", "out_dir", "format"},
    "clt": {"d", "modes", "initial", "engine", "out_dir", "format", "t_max", "t_step", "ns"},
    "verify-algebra": {"d", "modes", "coin_modes", "out_dir", "format", "seed"},
    "verify-channel": {"d", "steps", "modes", "out_dir", "format", "seed"},
}

BOOL_KEYS = {"snapshot"}
INT_KEYS = {"d", "steps", "modes", "seed", "coin_modes"}
FLOAT_KEYS = {"t_max", "t_step"}


class ConfigError(QBNWalkError):
    pass


# config ---------------------------------------------------------------------

def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes and underscores are equivalent."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip().strip('"')
    return out


def _convert(key: str, value):
    if value is None:
        return None
    try:
        if key in BOOL_KEYS:
            if isinstance(value, bool):
                return value
            v = str(value).lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise SpecParseError(f"invalid value {value!r}", key) from None
    return str(value)


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    given = {}
    if args.config:
        given.update(read_config_file(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            given[key] = v
    for key in given:
        if key not in DEFAULTS:
            raise SpecParseError("unknown key", key)
        if key not in KEYS[command]:
            raise SpecParseError(f"not accepted by {command}", key)
    defaults = {**DEFAULTS, **COMMAND_DEFAULTS.get(command, {})}
    cfg = {k: _convert(k, given.get(k, defaults[k])) for k in KEYS[command]}
    if "format" in cfg and cfg["format"] not in ("csv", "json"):
        raise SpecParseError(f"expected csv or json, got {cfg['format']!r}", "format")
    for key in ("d", "steps", "modes", "coin_modes"):
        if key not in cfg or cfg[key] is None:
            continue
        low = 0 if key == "steps" else 1
        if cfg[key] < low:
            raise SpecParseError(f"must be at least {low}", key)
    return cfg


def _initial(cfg: dict, default: str | None = None):
    text = cfg.get("initial") or default
    if text is None:
        raise SpecParseError("an initial state is required", "initial")
    try:
        spec = parse_initial(text, cfg["d"])
    except QBNWalkError as exc:
        raise SpecParseError(str(exc), "initial") from None
    return spec


def _budget(cfg: dict, spec, steps: int) -> int:
    K = cfg.get("modes")
    if K is None:
        return required_budget(spec, steps)
    try:
        check_budget(spec, steps, K)
    except QBNWalkError as exc:
        raise SpecParseError(str(exc), "modes") from None
    return K


def _iso(cfg: dict, n_modes: int):
    text = cfg.get("iso", "canonical")
    if text == "canonical":
        return None
    if text.startswith("perm:"):
        try:
            seed = int(text[5:])
        except ValueError:
            raise SpecParseError(f"expected perm:<int seed>, got {text!r}", "iso") from None
        if n_modes > 16:
            raise SpecParseError("a permuted isomorphism is limited to 16 joint modes", "iso")
        return PermutedIsomorphism.random(n_modes, seed)
    raise SpecParseError(f"expected canonical or perm:<seed>, got {text!r}", "iso")


def _engine(cfg: dict, spec, K: int, iso) -> str:
    engine = cfg.get("engine", "auto")
    choices = applicable_engines(spec, K)
    if iso is not None:
        choices = ["dense"]
    if engine == "auto":
        for pick in ("weights", "separable", "retire", "dense"):
            if pick in choices:
                return pick
    if engine not in ("dense", "retire", "weights", "separable"):
        raise SpecParseError(f"unknown engine {engine!r}", "engine")
    if engine not in choices:
        raise SpecParseError(f"engine {engine!r} cannot evolve this initial state (applicable: {', '.join(choices)})",
                             "engine")
    return engine


def _ns(cfg: dict) -> list[int]:
    try:
        ns = [int(v) for v in str(cfg["ns"]).split(",") if v.strip()]
    except ValueError:
        raise SpecParseError(f"expected comma-separated integers, got {cfg['ns']!r}", "ns") from None
    if not ns or any(n < 1 for n in ns):
        raise SpecParseError("step counts must be positive", "ns")
    return sorted(set(ns))


# artifact writing --------------------------------------------------------------

def write_artifacts(out_dir: str, files: dict[str, str]):
    """Write every artifact via a temporary file and rename, so no file is half written."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(files.items()):
        fd, tmp = tempfile.mkstemp(dir=path, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, path / name)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _snapshot_text(writer, obj, *args) -> str:
    buf = io.StringIO()
    writer(obj, buf, *args)
    return buf.getvalue()


# subcommands -------------------------------------------------------------------

def cmd_simulate_open(cfg: dict):
    spec = _initial(cfg)
    steps = cfg["steps"]
    K = _budget(cfg, spec, steps)
    iso = _iso(cfg, spec.d * K)
    engine = _engine(cfg, spec, K, iso)

    result = evolve(spec, steps, engine=engine, K=K, iso=iso)
    dist = result.distribution
    ok = dist.is_normalized(TOL)
    files = {}
    if cfg["format"] == "csv":
        files["distribution.csv"] = dist.to_csv()
    else:
        files["distribution.json"] = _dumps({"engine": engine, "K": K, "steps": steps,
                                             "distribution": dist.to_json(), "total": fmt(dist.total()),
                                             "pass": ok})
    if cfg["snapshot"]:
        files["nucleus.snapshot"] = _snapshot_text(write_nucleus_snapshot, result.nucleus, engine)
    return ok, files, f"engine={engine} K={K} steps={steps} sites={len(dist)} total={fmt(dist.total())}"


def _vector_start(spec, K: int) -> VectorState:
    if isinstance(spec, Mixture):
        raise SpecParseError("the unitary walk needs a pure initial state", "initial")
    vecs = init_vectors(spec, K)
    if any(len(v) != 1 for v in vecs.values()):
        raise SpecParseError("the unitary walk needs a pure initial state", "initial")
    if isinstance(spec, Separable) and len(vecs) != 1:
        raise SpecParseError("the unitary walk needs a single-site initial state", "initial")
    return VectorState(spec.d, K, {x: v[0] for x, v in vecs.items()})


def cmd_simulate_unitary(cfg: dict):
    spec = _initial(cfg)
    steps = cfg["steps"]
    K = _budget(cfg, spec, steps)
    if spec.d * K > 24:
        raise SpecParseError(f"unitary vectors over {spec.d * K} joint modes are too large", "modes")
    W0 = _vector_start(spec, K)

    W = unitary_evolve(W0, steps)[-1]
    dist = norm_distribution(W)
    ok = abs(W.norm_sq() - 1.0) <= TOL
    files = {"state.snapshot": _snapshot_text(write_vector_snapshot, W)}
    if cfg["format"] == "csv":
        files["distribution.csv"] = dist.to_csv()
    else:
        files["distribution.json"] = _dumps({"K": K, "steps": steps, "distribution": dist.to_json(),
                                             "norm_sq": fmt(W.norm_sq()), "pass": ok})
    return ok, files, f"K={K} steps={steps} sites={len(dist)} norm_sq={fmt(W.norm_sq())}"


def cmd_compare(cfg: dict):
    spec = _initial(cfg)
    if not isinstance(spec, Dirac):
        raise SpecParseError("compare needs a dirac start", "initial")
    steps = cfg["steps"]
    K = _budget(cfg, spec, steps)
    if spec.d * K > 20:
        raise SpecParseError(f"comparison over {spec.d * K} joint modes is too large", "modes")

    report = compare_open_unitary(spec.sigmas, spec.x0, steps, K)
    files = {}
    if cfg["format"] == "csv":
        lines = ["n,max_gap,max_trace_norm_gap"]
        for n, (g, tn) in enumerate(zip(report.max_gaps, report.trace_norm_gaps), 1):
            tn_text = "" if tn is None else fmt(max(tn.values(), default=0.0))
            lines.append(f"{n},{fmt(g)},{tn_text}")
        files["compare.csv"] = "\n".join(lines) + "\n"
        gap = "" if report.witness is None else fmt(report.witness)
        files["witness.csv"] = ("n,x,gap,expected,threshold\n"
                                f"2,{' '.join(map(str, spec.x0))},{gap},"
                                f"{fmt(witness_expected(spec.d))},{fmt(report.witness_threshold)}\n")
    else:
        files["compare.json"] = report.dumps()
    w = "n/a" if report.witness is None else fmt(report.witness)
    return report.passed, files, f"max_gap={fmt(report.max_gap)} witness={w} pass={report.passed}"


def cmd_clt(cfg: dict):
    d = cfg["d"]
    spec = _initial(cfg, "dirac:sigma=;x=" + ",".join("0" * d))
    ns = _ns(cfg)
    if cfg["t_step"] <= 0 or cfg["t_max"] <= 0:
        raise SpecParseError("t_max and t_step must be positive", "t_step" if cfg["t_step"] <= 0 else "t_max")
    K = _budget(cfg, spec, max(ns))
    engine = _engine(cfg, spec, K, None)
    grid = default_grid(d, cfg["t_max"], cfg["t_step"])

    tables, errors, moment_sets = {}, {}, {}
    checks = []
    for n in ns:
        dist = evolve(spec, n, engine=engine, K=K).distribution
        table = char_function(dist, n, grid)
        tables[n] = table
        errors[n] = gauss_sup_error(table)
        moment_sets[n] = moments(dist)
        at_zero = char_function(dist, n, np.zeros((1, d))).values[0]
        flipped = char_function(dist, n, -grid).values
        checks.append(abs(at_zero - 1.0) <= TOL)
        checks.append(float(np.max(np.abs(flipped - table.values.conj()))) <= TOL)
    decreasing = is_strictly_decreasing([errors[n] for n in ns])
    ok = all(checks) and decreasing

    files = {}
    if cfg["format"] == "csv":
        for n in ns:
            files[f"charfn_n{n}.csv"] = tables[n].to_csv()
            files[f"moments_n{n}.csv"] = moments_csv(moment_sets[n])
        lines = ["n,sup_error,binomial_oracle_sup_error"]
        for n in ns:
            oracle = float(np.max(np.abs(binomial_charfn(grid, n) - tables[n].gauss)))
            lines.append(f"{n},{fmt(errors[n])},{fmt(oracle)}")
        files["sup_error.csv"] = "\n".join(lines) + "\n"
    else:
        files["clt.json"] = _dumps({
            "d": d, "engine": engine, "ns": ns, "t_max": fmt(cfg["t_max"]), "t_step": fmt(cfg["t_step"]),
            "sup_error": {str(n): fmt(errors[n]) for n in ns},
            "moments": {str(n): {k: fmt(v) for k, v in moment_sets[n].items()} for n in ns},
            "strictly_decreasing": decreasing, "pass": ok,
        })
    series = " ".join(f"n={n}:{fmt(errors[n])}" for n in ns)
    return ok, files, f"engine={engine} sup_error {series} decreasing={decreasing}"


def _suite_files(rep, cfg, stem):
    if cfg["format"] == "csv":
        return {f"{stem}.csv": rep.to_csv()}
    return {f"{stem}.json": rep.dumps()}


def cmd_verify_algebra(cfg: dict):
    modes = cfg["modes"]
    if modes > 10 or cfg["coin_modes"] * cfg["d"] > 12:
        raise SpecParseError("dense identity checks are limited to 10 modes and 12 joint coin modes", "modes")
    rep = algebra_suite(modes=modes, max_d=cfg["d"], coin_K=cfg["coin_modes"],
                        seed=cfg["seed"])
    failed = [c.name for c in rep.checks if not c.passed]
    return rep.passed, _suite_files(rep, cfg, "verify_algebra"), \
        f"{len(rep.checks) - len(failed)}/{len(rep.checks)} checks passed"


def cmd_verify_channel(cfg: dict):
    K = cfg["modes"]
    steps = K if cfg["steps"] is None else cfg["steps"]
    if steps > K:
        raise SpecParseError(f"{steps} steps need at least {steps} modes", "modes")
    if cfg["d"] * K > 10:
        raise SpecParseError("channel checks are limited to 10 joint modes", "modes")
    rep = channel_suite(d=cfg["d"], K=K, steps=steps, seed=cfg["seed"])
    failed = [c.name for c in rep.checks if not c.passed]
    return rep.passed, _suite_files(rep, cfg, "verify_channel"), \
        f"{len(rep.checks) - len(failed)}/{len(rep.checks)} checks passed"


COMMANDS = {
    "simulate-open": cmd_simulate_open,
    "simulate-unitary": cmd_simulate_unitary,
    "compare": cmd_compare,
    "clt": cmd_clt,
    "verify-algebra": cmd_verify_algebra,
    "verify-channel": cmd_verify_channel,
}

HELP = {
    "simulate-open": "evolve the open walk and write its distribution",
    "simulate-unitary": "evolve the unitary walk and write its distribution and state",
    "compare": "compare open and unitary walks from the same basis start",
    "clt": "characteristic functions and Gaussian sup-error series",
    "verify-algebra": "operator identity suite",
    "verify-channel": "Kraus completeness and channel equivalence suite",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbnwalk", description="Open and unitary QBN walk simulator.")
    parser.add_argument("--version", action="version", version=f"qbnwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in KEYS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key = value file; flags override it")
        if "d" in keys:
            p.add_argument("--d", help="lattice dimension")
        if "steps" in keys:
            p.add_argument("--steps", help="number of steps")
        if "modes" in keys:
            p.add_argument("--modes", help="mode budget K per axis")
        if "coin_modes" in keys:
            p.add_argument("--coin-modes", dest="coin_modes", help="mode budget for the coin identities")
        if "initial" in keys:
            p.add_argument("--initial", help="initial state, e.g. 'dirac:sigma=;x=0'")
        if "engine" in keys:
            p.add_argument("--engine", help="auto, dense, retire, weights or separable")
        if "iso" in keys:
            p.add_argument("--iso", help="canonical or perm:<seed>")
        if "snapshot" in keys:
            p.add_argument("--snapshot", action="store_const", const=True, help="also write the nucleus")
        if "t_max" in keys:
            p.add_argument("--t-max", dest="t_max")
            p.add_argument("--t-step", dest="t_step")
            p.add_argument("--ns", help="comma-separated step counts")
        if "seed" in keys:
            p.add_argument("--seed", help="seed of the randomized checks")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--format", choices=("csv", "json"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_config(args.command, args)
        ok, files, summary = COMMANDS[args.command](cfg)
    except QBNWalkError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_artifacts(cfg["out_dir"], files)
    print(f"{args.command}: {summary}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
