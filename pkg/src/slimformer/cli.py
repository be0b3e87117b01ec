"""Command-line front end: plan, compress, distill, analyze, check.

Model arguments take the path to a .bundle file; commands that need the
architecture (compress, distill) expect the matching .config written by
save_model next to it.  Exit codes: 0 success, 2 infeasible plan or
out-of-range request, 3 numeric failure, 4 I/O or format error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import bias_histogram, bias_matrix, compressed_matrix, \
    histogram_csv
from .budget import load_plan, plan_check, random_search, save_plan, \
    solve_budget
from .errors import BundleFormatError, DivergenceError, \
    InfeasibleBudgetError, InputError, MappingError, NonFiniteError, \
    RangeError, SvdConvergenceError
from .model import load_model, save_model
from .pipeline import one_shot_compress, record_curve, run_pipeline
from .tasks import TaskConfig, generate_task, train_classifier
from .tensor import load_bundle


def _model_base(bundle_path):
    text = str(bundle_path)
    return text[:-len(".bundle")] if text.endswith(".bundle") else text


def _cmd_plan(args):
    bundle = load_bundle(args.bundle)
    if args.search is not None:
        # no task is available at plan time, so the search scores
        # candidates by how close the allocation lands to the target
        def closeness(plan):
            report = plan_check(bundle, plan)
            return -abs(report.achieved_overall - args.target)

        plan = random_search(bundle, args.target, args.search, closeness,
                             seed=args.seed, delta=args.delta)
    else:
        plan = solve_budget(bundle, args.target, args.p_embd, args.p_svd,
                            delta=args.delta)
    save_plan(plan, args.out)
    for line in plan_check(bundle, plan).lines():
        print(line)
    print(f"plan written to {args.out}")
    return 0


def _cmd_compress(args):
    teacher = load_model(_model_base(args.bundle))
    plan = load_plan(args.plan)
    student = one_shot_compress(teacher, plan)
    save_model(student, args.out)
    total = sum(e.size for e in teacher.config.shapes())
    retained = student.retained_count()
    print(f"retained {retained} of {total} params "
          f"({retained / total:.6f})")
    print(f"student written to {args.out}.bundle")
    return 0


def _cmd_distill(args):
    teacher = load_model(_model_base(args.teacher))
    plan = load_plan(args.plan)
    cfg = teacher.config
    task = generate_task(TaskConfig(
        seed=args.task_seed,
        vocab_size=cfg.vocab_size,
        seq_len=cfg.max_seq_len,
        num_classes=cfg.num_classes,
    ))
    if args.teacher_epochs > 0:
        history = train_classifier(teacher, task, args.teacher_epochs,
                                   lr=args.teacher_lr,
                                   batch_size=args.batch_size,
                                   seed=args.seed)
        print(f"teacher val accuracy {history[-1].val_accuracy:.4f} "
              f"after {args.teacher_epochs} epochs")
    result = run_pipeline(teacher, plan, task,
                          epochs_per_iteration=args.epochs,
                          lr=args.lr, batch_size=args.batch_size,
                          seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.student, out / "student")
    (out / "curve.csv").write_text(record_curve(result.records),
                                   encoding="ascii")
    if result.states:
        last = result.states[-1]
        print(f"iterations          {len(result.states)}")
        print(f"retained fraction   {last.retained_fraction:.6f}")
    if result.records:
        print(f"final val accuracy  {result.records[-1].val_accuracy:.4f}")
    print(f"student written to {out / 'student'}.bundle")
    return 0


def _cmd_analyze_bias(args):
    bundle = load_bundle(args.bundle)
    split = None
    if args.prune_fraction is not None:
        split = (args.retain / args.prune_fraction, args.prune_fraction)
    pooled = []
    for name in bundle.names():
        if name.endswith(".mask"):
            continue
        w = bundle.matrix(name)
        if w.rows < 2 or w.cols < 2:
            continue
        compressed = compressed_matrix(w, args.mode, args.retain, split=split)
        pooled.append(bias_matrix(w, compressed).array.ravel())
    if not pooled:
        raise InputError(f"bundle {args.bundle} has no matrices to analyze")
    hist = bias_histogram(np.concatenate(pooled), args.mode, bins=args.bins)
    text = histogram_csv(hist)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="ascii")
        print(f"histogram written to {args.out}")
    return 0


def _cmd_check(args):
    bundle = load_bundle(args.bundle)
    plan = load_plan(args.plan)
    report = plan_check(bundle, plan)
    for line in report.lines():
        print(line)
    return 0 if report.feasible else 2


def _parser():
    parser = argparse.ArgumentParser(
        prog="slimformer",
        description="Compress transformer bundles by factorization, "
                    "pruning and distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="solve group fractions for a target")
    plan.add_argument("--bundle", required=True)
    plan.add_argument("--target", type=float, required=True)
    plan.add_argument("--p-embd", type=float)
    plan.add_argument("--p-svd", type=float)
    plan.add_argument("--search", type=int,
                      help="sample this many fraction pairs instead")
    plan.add_argument("--seed", type=int, default=0)
    plan.add_argument("--delta", type=float, default=0.9)
    plan.add_argument("--out", required=True)
    plan.set_defaults(func=_cmd_plan)

    compress = sub.add_parser("compress",
                              help="apply a plan to a model in one shot")
    compress.add_argument("--bundle", required=True)
    compress.add_argument("--plan", required=True)
    compress.add_argument("--one-shot", action="store_true")
    compress.add_argument("--out", required=True)
    compress.set_defaults(func=_cmd_compress)

    distill = sub.add_parser("distill",
                             help="iterative compression with distillation")
    distill.add_argument("--teacher", required=True)
    distill.add_argument("--plan", required=True)
    distill.add_argument("--task-seed", type=int, required=True)
    distill.add_argument("--out", required=True)
    distill.add_argument("--epochs", type=int, default=2,
                         help="fine-tuning epochs per iteration")
    distill.add_argument("--lr", type=float, default=2e-5)
    distill.add_argument("--batch-size", type=int, default=32)
    distill.add_argument("--seed", type=int, default=0)
    distill.add_argument("--teacher-epochs", type=int, default=0,
                         help="train the loaded teacher on the task first")
    distill.add_argument("--teacher-lr", type=float, default=2e-3)
    distill.set_defaults(func=_cmd_distill)

    analyze = sub.add_parser("analyze", help="compression studies")
    analyze_sub = analyze.add_subparsers(dest="study", required=True)
    bias = analyze_sub.add_parser("bias",
                                  help="bias histogram of one scheme")
    bias.add_argument("--bundle", required=True)
    bias.add_argument("--mode", choices=("prune", "svd", "hybrid"),
                      required=True)
    bias.add_argument("--retain", type=float, required=True)
    bias.add_argument("--prune-fraction", type=float,
                      help="hybrid split; the svd fraction is retain / this")
    bias.add_argument("--bins", type=int, default=101)
    bias.add_argument("--out")
    bias.set_defaults(func=_cmd_analyze_bias)

    check = sub.add_parser("check", help="report a plan against a bundle")
    check.add_argument("--bundle", required=True)
    check.add_argument("--plan", required=True)
    check.set_defaults(func=_cmd_check)

    return parser


def _validate(parser, args):
    if args.command == "plan":
        manual = args.p_embd is not None or args.p_svd is not None
        if args.search is None and not (args.p_embd is not None
                                        and args.p_svd is not None):
            parser.error("plan needs either --p-embd and --p-svd, "
                         "or --search N")
        if args.search is not None and manual:
            parser.error("--search excludes --p-embd/--p-svd")
    if args.command == "compress" and not args.one_shot:
        parser.error("compress supports only --one-shot; "
                     "distill runs the iterative pipeline")


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        return args.func(args)
    except (InfeasibleBudgetError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, DivergenceError, SvdConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BundleFormatError, InputError, MappingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
