"""Command-line entry point: ``fermi-mushroom {volumes,theory,simulate,compare}``.

Exit codes: 0 success, 2 configuration or shape error, 3 protocol with more
than one capture interval, 4 too many aborted trajectories.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import ensemble as ens
from . import theory
from .geometry import MushroomShape, ShapeError, area, delta, volumes
from .protocol import ProtocolError, protocol_from_dict

EXIT_OK, EXIT_CONFIG, EXIT_TOPOLOGY, EXIT_QUALITY = 0, 2, 3, 4
OUT_ENV = "FERMI_MUSHROOM_OUT"

DEFAULTS = {"n_particles": 5000, "e0": 1e6, "cycles": 1, "seed": 0, "bins": 100,
            "panels": theory.DEFAULT_PANELS, "speed_ratio": 1e-3, "per_particle": False}

log = logging.getLogger("fermi_mushroom")


class ConfigError(ValueError):
    pass


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def resolve_config(args) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        doc = _load_json(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(doc) - set(DEFAULTS) - {"protocol", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(doc)
    for key in list(DEFAULTS) + ["out"]:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if getattr(args, "protocol", None):
        cfg["protocol"] = args.protocol
    if "protocol" not in cfg:
        raise ConfigError("no protocol given (positional argument or 'protocol' in the config file)")
    if isinstance(cfg["protocol"], str):
        cfg["protocol"] = _load_json(cfg["protocol"])
    cfg.setdefault("out", os.environ.get(OUT_ENV, "results"))
    return cfg


def build_protocol(cfg):
    return protocol_from_dict(cfg["protocol"], e0=cfg["e0"], speed_ratio=cfg["speed_ratio"])


def _echo(cfg, protocol) -> dict:
    """Config as run, with the fully resolved protocol."""
    out = {k: v for k, v in cfg.items() if k != "protocol"}
    out["out"] = str(out.get("out"))
    out["protocol"] = protocol.to_dict()
    return out


def cmd_volumes(args) -> int:
    shape = MushroomShape(args.r, args.w, args.h, args.tan_theta)
    vol = volumes(shape)
    doc = dict(vol.to_dict(), delta=delta(shape.nu), area=area(shape))
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_theory(args) -> int:
    cfg = resolve_config(args)
    p = build_protocol(cfg)
    pred = theory.predict(p, panels=int(cfg["panels"]), bins=int(cfg["bins"]))
    pred.write(cfg["out"], {"config": _echo(cfg, p), "seed": cfg["seed"]})
    print(json.dumps(pred.summary(), indent=2, sort_keys=True))
    if len(p.capture_intervals()) > 1:
        print(f"error: {len(p.capture_intervals())} capture intervals per cycle; "
              "curves and predicted distribution need exactly one", file=sys.stderr)
        return EXIT_TOPOLOGY
    return EXIT_OK


def _ensemble(cfg, p):
    config = ens.EnsembleConfig(int(cfg["n_particles"]), float(cfg["e0"]), int(cfg["cycles"]),
                                int(cfg["seed"]), int(cfg["bins"]))
    result = ens.simulate_ensemble(p, config)
    stats = ens.statistics(result, enforce=False)
    return result, stats


def _quality_ok(result) -> bool:
    frac = result.n_aborted / len(result.status)
    if frac > ens.MAX_ABORTED_FRACTION:
        print(f"error: aborted fraction {frac:.2e} exceeds {ens.MAX_ABORTED_FRACTION:g} "
              f"({result.abort_reasons()})", file=sys.stderr)
        return False
    return True


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    p = build_protocol(cfg)
    result, stats = _ensemble(cfg, p)
    extra = sorted({n for n in (10, 30, int(cfg["cycles"])) if 1 < n <= int(cfg["cycles"])})
    doc = ens.write_outputs(cfg["out"], result, stats, _echo(cfg, p),
                            per_particle=bool(cfg["per_particle"]), extra_cycles=extra)
    print(json.dumps({k: doc[k] for k in ("m1_star", "sigma_N", "p_nc_star", "aborted")}, sort_keys=True))
    return EXIT_OK if _quality_ok(result) else EXIT_QUALITY


def _verdict(ok: bool, conclusive: bool) -> str:
    if not conclusive:
        return "INCONCLUSIVE"
    return "PASS" if ok else "FAIL"


def compare(p, result, stats, panels=theory.DEFAULT_PANELS) -> dict:
    """Theory against simulation: m1 (3 sigma_N), p_nc (3 binomial sigma), capture-time chi-square (1%)."""
    table = theory.FluxTable(p, panels)
    m1 = theory.growth_rate(p, panels, table)
    p_nc = theory.non_capture_probability(p, table)
    n = stats.n_used
    conclusive = n >= 30 and math.isfinite(stats.sigma_n)
    report = {"n_used": n, "aborted": stats.n_aborted}
    dm = stats.m1_star - m1
    report["m1"] = {"theory": m1, "simulated": stats.m1_star, "sigma_N": stats.sigma_n,
                    "verdict": _verdict(abs(dm) <= 3 * stats.sigma_n, conclusive)}
    sig_b = ens.binomial_sigma(p_nc, n)
    dp = stats.p_nc_star - p_nc
    ok_p = abs(dp) <= 3 * sig_b if sig_b > 0 else abs(dp) < 1e-12
    report["p_nc"] = {"theory": p_nc, "simulated": stats.p_nc_star, "binomial_sigma": sig_b,
                      "verdict": _verdict(ok_p, conclusive)}
    intervals = p.capture_intervals()
    if len(intervals) == 1 and stats.n_cycles == 1:
        chi2, dof, pval = ens.capture_time_chi_square(result.first_capture[result.ok, 0, 0], p)
        report["capture_times"] = {"chi2": chi2, "dof": dof, "p_value": pval,
                                   "verdict": _verdict(pval >= 0.01, conclusive and dof >= 1)}
    else:
        report["capture_times"] = {"verdict": "NOT APPLICABLE" if not intervals else "INCONCLUSIVE"}
    return report


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    p = build_protocol(cfg)
    if len(p.capture_intervals()) > 1:
        print("error: comparison needs a single capture interval per cycle", file=sys.stderr)
        return EXIT_TOPOLOGY
    cfg["cycles"] = 1
    result, stats = _ensemble(cfg, p)
    report = compare(p, result, stats, int(cfg["panels"]))
    report["config"] = _echo(cfg, p)
    report["seed"] = cfg["seed"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(ens.json_safe(report), indent=2, sort_keys=True) + "\n"
    (out / "compare.json").write_text(text)
    print(text, end="")
    return EXIT_OK if _quality_ok(result) else EXIT_QUALITY


def _add_run_flags(sp, ensemble=True):
    sp.add_argument("protocol", nargs="?", help="protocol JSON file")
    sp.add_argument("--config", help="JSON config file; flags override its values")
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    sp.add_argument("--panels", type=int, help="Simpson panels over the capture interval")
    sp.add_argument("--bins", type=int, help="histogram bins")
    sp.add_argument("--e0", type=float, help="initial energy (also sets a rectangle's default period)")
    sp.add_argument("--speed-ratio", dest="speed_ratio", type=float,
                    help="wall/particle speed ratio for a rectangle without period")
    sp.add_argument("--seed", type=int, help="master seed")
    if ensemble:
        sp.add_argument("-N", "--n-particles", dest="n_particles", type=int, help="number of particles")
        sp.add_argument("--cycles", type=int, help="number of cycles n")
        sp.add_argument("--per-particle", dest="per_particle", action="store_true",
                        help="also write particles.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fermi-mushroom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("volumes", help="phase-space volumes of a frozen mushroom")
    v.add_argument("--r", type=float, required=True)
    v.add_argument("--w", type=float, required=True)
    v.add_argument("--h", type=float, required=True)
    v.add_argument("--tan-theta", dest="tan_theta", type=float, default=0.0)
    v.set_defaults(func=cmd_volumes)
    t = sub.add_parser("theory", help="theoretical growth rate, curves and predicted distribution")
    _add_run_flags(t, ensemble=False)
    t.set_defaults(func=cmd_theory)
    s = sub.add_parser("simulate", help="Monte-Carlo ensemble")
    _add_run_flags(s)
    s.set_defaults(func=cmd_simulate)
    c = sub.add_parser("compare", help="theory against simulation")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ShapeError, ProtocolError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except theory.UnsupportedProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ens.SimulationQualityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUALITY


if __name__ == "__main__":
    sys.exit(main())
