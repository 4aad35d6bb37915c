"""Command-line interface.

Subcommands: ``gen-demos``, ``fit-baseline``, ``train``, ``unroll``,
``eval`` and ``run`` (all of the above in sequence). Every subcommand takes
``--config`` plus flag overrides; see :mod:`dmpcouple.config` for the
``DMPCOUPLE_*`` environment overrides.

Exit codes: 0 success, 1 an acceptance gate failed, 2 usage, configuration
or artifact error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import PROTOCOLS, resolve
from .errors import ArtifactError, ConfigError, DmpError
from .obstacles import KINDS

log = logging.getLogger("dmpcouple")

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}") from None


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--parallel", type=int, metavar="N", help="worker processes (0: one per core)")
    p.add_argument("-v", "--verbose", action="store_true")


def _obstacle(p):
    p.add_argument("--obstacle", choices=KINDS + ("all",), default="all")


def build_parser():
    parser = _Parser(prog="dmpcouple", description="Learned obstacle-avoidance coupling terms for DMPs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-demos", help="generate the synthetic demonstration dataset")
    _common(p)

    p = sub.add_parser("fit-baseline", help="fit the baseline primitive to the obstacle-free demonstrations")
    _common(p)

    p = sub.add_parser("train", help="train coupling networks")
    _common(p)
    _obstacle(p)
    p.add_argument("--protocol", choices=("per-setting", "multi"), default="multi")

    p = sub.add_parser("unroll", help="unroll the baseline, optionally coupled, in one obstacle setting")
    _common(p)
    p.add_argument("--setting", required=True, help="setting id from the dataset, or a setting JSON file")
    p.add_argument("--model", help="model JSON (default: the multi-setting network of the setting's kind)")
    p.add_argument("--no-coupling", action="store_true", help="unroll the baseline alone")
    p.add_argument("--guards", choices=("on", "off"), default="on")
    p.add_argument("--output", help="trajectory file (default: <out>/unrolls/<setting>.csv)")

    p = sub.add_parser("eval", help="run an evaluation protocol and check its acceptance gates")
    _common(p)
    _obstacle(p)
    p.add_argument("--protocol", choices=PROTOCOLS, default="multi")
    p.add_argument("--guards", choices=("on", "off"), default="on")
    p.add_argument("--mixed", action="store_true", help="add the flagged one-network-for-all-kinds run (multi)")

    p = sub.add_parser("run", help="gen-demos, fit-baseline and every evaluation protocol")
    _common(p)
    _obstacle(p)
    p.add_argument("--guards", choices=("on", "off"), default="on")
    p.add_argument("--mixed", action="store_true", help="add the flagged one-network-for-all-kinds run")
    return parser


LOG_NAME = "dmpcouple.log"


def _config(args):
    cfg = resolve(args.config, seed=args.seed, out=args.out, parallel=args.parallel)
    if getattr(args, "guards", "on") == "off":
        from .config import merge

        cfg = merge(cfg, {"guards": {"beyond_goal": False, "zero_x": False, "passing_decay": False}})
    _log_to(cfg.out_dir / LOG_NAME, args.command)
    return cfg


def _log_to(path, command):
    """Append INFO-level records of this command to the run's log file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.info("dmpcouple %s", command)


def _print_gates(reports, cfg):
    failed = 0
    for r in reports:
        a = r.aggregates()
        tag = " [UNSAFE]" if r.unsafe else ""
        tag += " [flagged comparison]" if r.flagged else ""
        print(f"{r.label}{tag}: {a['settings']} settings, hits {a['hits']}, converged {a['converged']}, "
              f"baseline hits {a['baseline_hits']}, max goal distance {a['goal_dist_max']:.4g} m")
        for g in r.gates(cfg):
            print("  " + g.line())
            failed += not g.passed
    return failed


def cmd_gen_demos(args):
    from .pipeline import generate

    cfg = _config(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(cfg.out_dir / "config.yaml")
    m = generate(cfg)
    print(f"dataset written to {cfg.dataset_dir} ({len(m['files'])} files, hash {m['dataset_hash'][:12]})")
    return EXIT_OK


def cmd_fit_baseline(args):
    from .pipeline import fit_baseline_step

    cfg = _config(args)
    dmp = fit_baseline_step(cfg)
    print(f"baseline written to {cfg.baseline_path} (forcing fit NMSE {dmp.fit_nmse})")
    return EXIT_OK


def cmd_train(args):
    from .pipeline import train_step

    cfg = _config(args)
    models = train_step(cfg, args.protocol, args.obstacle)
    for name, m in models.items():
        meta = m.train_meta
        print(f"{name}: train NMSE {meta['final_nmse']:.4g} after {meta['epochs']} iterations ({meta['stop_reason']})")
    return EXIT_OK


def cmd_unroll(args):
    from .guards import GuardConfig
    from .pipeline import load_dataset_dir
    from .rollout import rollout

    cfg = _config(args)
    baseline = io.load_dmp(cfg.baseline_path)
    if Path(args.setting).is_file():
        setting = io.load_setting(args.setting)
    else:
        data = load_dataset_dir(cfg.dataset_dir, verify=False)
        pool = [s for group in (*data.settings.values(), *data.unseen.values()) for s in group]
        match = [s for s in pool if s.setting_id == args.setting]
        if not match:
            raise ArtifactError(f"no setting {args.setting!r} in {cfg.dataset_dir}")
        setting = match[0]
    model = None
    if not args.no_coupling:
        path = args.model or cfg.model_dir / "multi" / f"{setting.kind}.json"
        model = io.load_model(path)
    guards = cfg.guards.to_guards() if args.guards == "on" else GuardConfig.off()
    res = rollout(baseline, setting, model, guards=guards, horizon=cfg.gates.horizon, gravity=cfg.scene.gravity)
    out = Path(args.output) if args.output else cfg.out_dir / "unrolls" / f"{setting.setting_id}.csv"
    io.save_unroll(out, res)
    stamp = "UNSAFE (guards off) " if res.unsafe else ""
    print(f"{stamp}unroll written to {out}: closest distance {res.sdist.min():.4g} m, "
          f"final goal distance {float(((res.x[-1] - setting.goal) ** 2).sum() ** 0.5):.4g} m")
    return EXIT_OK


def cmd_eval(args):
    from .pipeline import evaluate

    cfg = _config(args)
    reports = evaluate(cfg, args.protocol, args.obstacle, mixed=args.mixed)
    failed = _print_gates(reports, cfg)
    print(f"reports written to {cfg.report_dir}")
    return EXIT_GATE if failed else EXIT_OK


def cmd_run(args):
    from .pipeline import run_all

    cfg = _config(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(cfg.out_dir / "config.yaml")
    reports = run_all(cfg, obstacle=args.obstacle, mixed=args.mixed)
    failed = _print_gates(reports, cfg)
    return EXIT_GATE if failed else EXIT_OK


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "fit-baseline": cmd_fit_baseline,
    "train": cmd_train,
    "unroll": cmd_unroll,
    "eval": cmd_eval,
    "run": cmd_run,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
        return EXIT_USAGE
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(console)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArtifactError) as exc:
        print(f"dmpcouple {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DmpError as exc:
        print(f"dmpcouple {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
