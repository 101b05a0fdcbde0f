"""Command-line front end.

Subcommands ``simulate``, ``analyze`` (alias ``fit-gain``), ``project`` and
``full-run``. Files are the interface between stages; every output is a
deterministic function of the configuration and seed.

Exit codes: 0 success, 2 configuration error, 3 input/format error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, _parse_mask, parse_config, preset_path
from .errors import (ConfigError, DomainError, MeolinkError, NumericalError, ParameterError,
                     ParseError, RangeError, ValidationError)
from .montecarlo import load_tags, write_tags
from .pipeline import (HISTOGRAM_FILE, PROJECTION_FILE, REPORT_FILE, SLR_FILE, TAGS_FILE,
                       TRUTH_FILE, analyze_stream, dump_json, run_projection, run_simulation,
                       truth_summary)
from .timing import load_slr_pairs, write_slr_pairs

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


def _mask_arg(text: str) -> tuple[float, float]:
    try:
        (interval,) = _parse_mask(text)
    except (ConfigError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return interval


def _load_config(args) -> RunConfig:
    if args.config is None:
        cfg = parse_config(preset_path("lageos2"))
    elif Path(args.config).is_file() or "/" in args.config or args.config.endswith(".cfg"):
        cfg = parse_config(args.config)
    else:
        cfg = parse_config(preset_path(args.config))
    over = {
        "seed": args.seed,
        "out_dir": args.out,
        "bin_width": args.bin_ns * 1e-9 if args.bin_ns is not None else None,
        "class_filter": args.class_filter,
        "mask": tuple(args.mask) if args.mask else None,
    }
    if getattr(args, "scenario", None):
        over["projection"] = args.scenario
    if getattr(args, "baseline_snr", None) is not None:
        over["baseline_snr"] = args.baseline_snr
    try:
        return cfg.with_overrides(**over)
    except MeolinkError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig) -> dict:
    cfg.require_seed()
    out = _out_dir(cfg)
    stream, truth, _ = run_simulation(cfg)
    write_tags(stream, out / TAGS_FILE)
    write_slr_pairs(stream.slr_pairs(), out / SLR_FILE)
    dump_json(truth_summary(truth, cfg), out / TRUTH_FILE)
    n = int(len(stream.detector_tags()))
    return {"detector_tags": n, "tags": str(out / TAGS_FILE), "slr": str(out / SLR_FILE),
            "truth": str(out / TRUTH_FILE)}


def cmd_analyze(cfg: RunConfig, tags_path=None, slr_path=None) -> dict:
    out = _out_dir(cfg)
    tags_path = Path(tags_path) if tags_path else out / TAGS_FILE
    slr_path = Path(slr_path) if slr_path else out / SLR_FILE
    for path in (tags_path, slr_path):
        if not path.is_file():
            raise ParseError("input file not found", path=path)
    stream = load_tags(tags_path)
    pairs = load_slr_pairs(slr_path)
    report, hists = analyze_stream(stream.detector_tags(), pairs, cfg.ephemeris_table(), cfg)
    dump_json(report, out / REPORT_FILE)
    hists["all_tags"].write_csv(out / HISTOGRAM_FILE)
    for name, h in hists.items():
        if name != "all_tags":
            h.write_csv(out / f"histogram_{name}.csv")
    return report


def cmd_project(cfg: RunConfig, report_path=None) -> dict:
    out = _out_dir(cfg)
    report = None
    if report_path:
        try:
            report = json.loads(Path(report_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read report: {exc}", path=report_path) from None
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno, path=report_path) from None
    proj = run_projection(cfg, report)
    dump_json(proj, out / PROJECTION_FILE)
    return proj


def cmd_full_run(cfg: RunConfig) -> dict:
    sim = cmd_simulate(cfg)
    report = cmd_analyze(cfg)
    proj = cmd_project(cfg, _out_dir(cfg) / REPORT_FILE)
    return {"simulate": sim, "report": report, "projection": proj}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, or a shipped preset name (default: lageos2)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--bin-ns", type=float, help="histogram bin width in ns")
    common.add_argument("--class", dest="class_filter", choices=("le1", "le2", "all"),
                        help="photon-number class selection for pooled statistics")
    common.add_argument("--mask", action="append", type=_mask_arg, metavar="START:END",
                        help="exclude an interval (s) from the gain fit; repeatable")

    parser = argparse.ArgumentParser(prog="meolink", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a pass and write tag files")
    for name in ("analyze", "fit-gain"):
        sp = sub.add_parser(name, parents=[common], help="analyse tag files")
        sp.add_argument("--tags", help="time-tag CSV (default OUT/tags.csv)")
        sp.add_argument("--slr", help="ranging-epoch CSV (default OUT/slr.csv)")
    sp = sub.add_parser("project", parents=[common], help="detector-upgrade projection")
    sp.add_argument("--report", help="analysis report supplying the baseline SNR")
    sp.add_argument("--scenario", help="si-meo, si-gnss, snspd-meo, snspd-gnss, identity or all")
    sp.add_argument("--baseline-snr", type=float, help="override the baseline SNR")
    sub.add_parser("full-run", parents=[common], help="simulate, analyse and project")
    return parser


def _summary(command: str, result: dict) -> str:
    if command == "simulate":
        return f"simulated {result['detector_tags']} detector tags -> {result['tags']}"
    if command in ("analyze", "fit-gain"):
        fit = result["gauss_fit"]
        lines = [f"sigma_G = {result['sigma_g_used'] * 1e9:.3f} ns ({result['sigma_g_source']}), "
                 f"delta0 = {fit['delta0'] * 1e9:+.3f} ns"]
        g = result["gain"]
        lines.append(f"G_t = {g['G_t']:.4g} +- {g['std_error']:.2g} ({g['n_slices']} slices)"
                     if g else f"G_t: {result['gain_error']}")
        if command == "analyze":
            sel = result["selected"]
            if sel:
                lines.append(f"{result['class_filter']}: {sel['integration_time']:.0f} s, "
                             f"significance {sel['significance']:.2f}, SNR {sel['snr']:.2f}, "
                             f"rate {sel['mean_rate']:.2f} c/s")
        return "\n".join(lines)
    if command == "project":
        return "\n".join(f"{k}: SNR {v['snr_projected']:.3g}, QBER {v['qber']:.2%}"
                         for k, v in result["scenarios"].items())
    return "\n".join(_summary(k, v) for k, v in
                     (("simulate", result["simulate"]), ("analyze", result["report"]),
                      ("project", result["projection"])))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "simulate":
            result = cmd_simulate(cfg)
        elif args.command in ("analyze", "fit-gain"):
            result = cmd_analyze(cfg, args.tags, args.slr)
        elif args.command == "project":
            result = cmd_project(cfg, args.report)
        else:
            result = cmd_full_run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, RangeError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(args.command, result))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
