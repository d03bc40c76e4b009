"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .features import DesignError, derive_rows
from .panel_store import DataError
from .reporting import StudyReport, canonical_json, render_text, report_csv_files, write_report
from .simulate import ConfigError, simulate_panel
from .study import (STAGE_ERRORS, StudyConfig, describe, error_kind, fit_form, first_error_kind, hausman_for_form,
                    ingest, load_dgp_config, load_study_config, run_study)
from .numerics import RandomSource

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4
EXIT_CODES = {"config": EXIT_CONFIG, "data": EXIT_DATA, "estimation": EXIT_ESTIMATION}
ENGINE_ALIASES = {"mean": "mean_fe", "qr": "panel_qr", "mean_fe": "mean_fe", "panel_qr": "panel_qr"}

logger = logging.getLogger("capstruct")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _tau_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv", "text"), default="json")
    common.add_argument("--out", type=Path, help="output directory (default: print to stdout)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--panel", type=Path, required=True)
    data.add_argument("--macro", type=Path, required=True)
    data.add_argument("--winsorize", type=float, default=None, metavar="P")

    p = _Parser(prog="capstruct", description="Leverage determinants and adjustment-speed estimation on firm panels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common, data], help="validate and merge panel and macro files")
    sub.add_parser("describe", parents=[common, data], help="yearly means and correlation table")
    h = sub.add_parser("hausman", parents=[common, data], help="FE vs RE test on the mean model")
    h.add_argument("--leverage", choices=("tdr", "ltdr", "stdr"), default="tdr")
    f = sub.add_parser("fit", parents=[common, data], help="adjustment model for one leverage form")
    f.add_argument("--leverage", choices=("tdr", "ltdr", "stdr"), default="tdr")
    f.add_argument("--engine", choices=("mean", "qr"), action="append",
                   help="repeat to run several engines (default: both)")
    f.add_argument("--tau", type=_tau_list, default=None, help="comma-separated quantile levels")
    f.add_argument("--lambda", dest="lam", type=float, default=0.0)
    f.add_argument("--bootstrap", type=int, default=50)
    f.add_argument("--cov-type", choices=("conventional", "clustered"), default="conventional")
    s = sub.add_parser("simulate", parents=[common], help="write a synthetic panel.csv/macro.csv and truth.json")
    s.add_argument("--config", type=Path, required=True)
    st = sub.add_parser("study", parents=[common], help="run the full pipeline from a config file")
    st.add_argument("--config", type=Path, required=True)
    return p


def _emit(report: StudyReport, args) -> None:
    if args.out is not None:
        for path in write_report(report, args.out, args.format):
            logger.info("wrote %s", path)
        return
    if args.format == "json":
        sys.stdout.write(report.to_json())
    elif args.format == "text":
        sys.stdout.write(render_text(report))
    else:
        for name, text in report_csv_files(report).items():
            sys.stdout.write(f"# {name}\n{text}")


def _exit_for(report: StudyReport) -> int:
    kind = first_error_kind(report)
    return EXIT_OK if kind is None else EXIT_CODES[kind]


def _data_report(args, extra: dict | None = None) -> tuple[StudyReport, object | None]:
    report = StudyReport(metadata={"panel": str(args.panel), "macro": str(args.macro), "winsorize": args.winsorize,
                                   **(extra or {})})
    dataset = ingest(args.panel, args.macro)
    report.diagnostics["merge"] = dataset.diagnostics.to_dict()
    report.diagnostics["firms"] = len(dataset.firms)
    return report, dataset


def cmd_ingest(args) -> int:
    report, _ = _data_report(args)
    _emit(report, args)
    return EXIT_OK


def cmd_describe(args) -> int:
    report, dataset = _data_report(args)
    report.descriptives = describe(derive_rows(dataset, args.winsorize))
    _emit(report, args)
    return EXIT_OK


def cmd_hausman(args) -> int:
    report, dataset = _data_report(args, {"leverage_forms": [args.leverage]})
    report.hausman[args.leverage] = hausman_for_form(derive_rows(dataset, args.winsorize), args.leverage)
    _emit(report, args)
    return EXIT_OK


def cmd_fit(args) -> int:
    engines = tuple(dict.fromkeys(ENGINE_ALIASES[e] for e in (args.engine or ["mean", "qr"])))
    seed = 0 if args.seed is None else args.seed
    cfg = StudyConfig(panel=str(args.panel), macro=str(args.macro), leverage_forms=(args.leverage,),
                      engines=engines, taus=tuple(args.tau or (0.5,)), lam=args.lam, bootstrap=args.bootstrap,
                      seed=seed, winsorize=args.winsorize, cov_type=args.cov_type)
    report, dataset = _data_report(args)
    report.metadata = cfg.metadata()
    adj = fit_form(derive_rows(dataset, args.winsorize), args.leverage, cfg, RandomSource(seed))
    report.adjustment[args.leverage] = adj
    _emit(report, args)
    if not adj["cells"]:
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_dgp_config(args.config)
    if args.seed is not None:
        cfg = type(cfg).from_dict({**cfg.to_dict(), "seed": args.seed})
    if args.out is None:
        raise ConfigError("simulate needs --out")
    paths = simulate_panel(cfg).write_csv(args.out)
    sys.stdout.write(canonical_json({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = load_study_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    report = run_study(cfg)
    _emit(report, args)
    return _exit_for(report)


COMMANDS = {"ingest": cmd_ingest, "describe": cmd_describe, "hausman": cmd_hausman, "fit": cmd_fit,
            "simulate": cmd_simulate, "study": cmd_study}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return COMMANDS[args.command](args)
    except (DataError, DesignError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except STAGE_ERRORS as exc:
        kind = error_kind(exc)
        print(f"{kind} error: {exc}", file=sys.stderr)
        return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
