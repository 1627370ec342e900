"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command
prints its resolved configuration (including the seed) before executing.
``--threads`` (or the JUMPVEL_THREADS environment variable) controls fold
parallelism; the default of 1 keeps runs strictly sequential.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict

from . import checks, datasets, fusion, harness, synthdata
from ._runtime import tune_process
from .errors import JumpvelError


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(f"{self.prog}: {message}")


def _threads_default() -> int:
    env = os.environ.get("JUMPVEL_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def build_parser() -> Parser:
    parser = Parser(prog="jumpvel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker threads for independent fold runs")

    p = sub.add_parser("gen-data", parents=[common],
                       help="render a synthetic multi-view jump dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, default=86)
    p.add_argument("--jumps", type=int, default=2)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common],
                       help="train a fusion model on the whole dataset")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--view", choices=datasets.VIEW_SELECTIONS, default="combined")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on one fold's test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--fold", type=int, required=True, choices=(0, 1, 2))
    p.add_argument("--seed", type=int, default=0,
                   help="seed of the fold split to evaluate against")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-validate", parents=[common],
                       help="3-fold participant-disjoint cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--view", choices=datasets.VIEW_SELECTIONS, default="combined")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("ablate", parents=[common],
                       help="cross-validate every view selection")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", parents=[common],
                       help="frozen conv features + SVR or dense head, 3-fold CV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("svr", "dense"), required=True)
    p.add_argument("--view", choices=datasets.VIEW_SELECTIONS, default="combined")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient check of every layer")
    p.add_argument("--tolerance", type=float, default=None,
                   help="override all per-layer tolerances")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _announce(args: argparse.Namespace) -> None:
    shown = {k: v for k, v in vars(args).items()
             if k not in ("func", "command") and v is not None}
    seed = shown.get("seed", 0)
    print(f"[jumpvel] {args.command} seed={seed} config={shown}")


def _manifest_path(data: str) -> str:
    return data if data.endswith(".tsv") else os.path.join(data, "manifest.tsv")


def cmd_gen_data(args) -> int:
    spec = synthdata.SyntheticSpec(
        participants=args.participants,
        jumps_per_participant=args.jumps,
        frames=args.frames,
        image_size=args.size,
        seed=args.seed,
    )
    index = synthdata.generate_dataset(spec, args.out)
    print(f"wrote {len(index)} samples "
          f"({len(index) * len(datasets.VIEWS)} view files) to {args.out}")
    return 0


def _train_config(args) -> harness.TrainConfig:
    return harness.TrainConfig(epochs=args.epochs, lr=args.lr, batch=args.batch,
                               view=args.view, seed=args.seed) \
        if hasattr(args, "epochs") else \
        harness.TrainConfig(view=getattr(args, "view", "combined"),
                            seed=args.seed)


def cmd_train(args) -> int:
    index = datasets.load_manifest(_manifest_path(args.data))
    cfg = _train_config(args)
    model = fusion.build_fusion_model(cfg.fusion_config(), seed=cfg.seed)
    trace = harness.train(model, index, range(len(index)), cfg)
    fusion.save_fusion_model(args.out, model)
    print(f"final epoch loss {trace[-1]:.6f}; checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    index = datasets.load_manifest(_manifest_path(args.data))
    model = fusion.load_fusion_model(args.model)
    split = datasets.split_folds(index.participants(), k=3, seed=args.seed)
    _, test_pids = split.train_test(args.fold)
    result = harness.evaluate(model, index,
                              index.ids_for_participants(test_pids))
    r_text = f"{result.r:.6f}" if result.r is not None else f"undefined ({result.r_error})"
    print(f"fold {args.fold}: mae={result.mae:.6f} r={r_text}")
    return 0


def cmd_cross_validate(args) -> int:
    index = datasets.load_manifest(_manifest_path(args.data))
    cfg = _train_config(args)
    report, evals = harness.cross_validate(index, cfg, threads=args.threads)
    harness.emit_reports(report, evals, args.report_dir)
    split = datasets.split_folds(index.participants(), k=3, seed=cfg.seed)
    datasets.write_folds(split, os.path.join(args.report_dir, "folds.tsv"))
    print(f"mae {report.mae_mean:.6f} +- {report.mae_std:.6f} | "
          f"r {report.r_mean:.6f} +- {report.r_std:.6f} -> {args.report_dir}")
    return 0


def cmd_ablate(args) -> int:
    index = datasets.load_manifest(_manifest_path(args.data))
    cfg = harness.TrainConfig(seed=args.seed)
    results = harness.ablate(index, cfg, threads=args.threads)
    os.makedirs(args.report_dir, exist_ok=True)
    harness.write_ablation_table(results,
                                 os.path.join(args.report_dir, "ablation.tsv"))
    for view, (report, evals) in results.items():
        harness.emit_reports(report, evals,
                             os.path.join(args.report_dir, view))
        print(f"{view:>9}: mae {report.mae_mean:.4f} +- {report.mae_std:.4f} | "
              f"r {report.r_mean:.4f} +- {report.r_std:.4f}")
    return 0


def cmd_baseline(args) -> int:
    index = datasets.load_manifest(_manifest_path(args.data))
    report = harness.baseline_cross_validate(index, args.method, args.view,
                                             seed=args.seed)
    os.makedirs(args.report_dir, exist_ok=True)
    harness.write_metrics_tsv(report,
                              os.path.join(args.report_dir, "metrics.tsv"))
    print(f"{args.method}/{args.view}: mae {report.mae_mean:.6f} +- "
          f"{report.mae_std:.6f} | r {report.r_mean:.6f} +- {report.r_std:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = checks.run_gradcheck_suite(tolerance=args.tolerance,
                                         seed=args.seed)
    all_ok = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        worst = rep.worst()
        print(f"{rep.fragment:>15}: max_rel_err={rep.max_rel_err:.3e} "
              f"(worst: {worst.name}) tol={rep.tolerance:.0e} {status}")
        all_ok &= rep.passed
    return 0 if all_ok else 2


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        tune_process()
        _announce(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (JumpvelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
