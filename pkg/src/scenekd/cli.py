"""Command-line entry points.

    scenekd gen-data --root toy --clips-per-cell 4 --seed 0
    scenekd train --config run.toml --workdir out/teacher
    scenekd export-logits --checkpoint m.dfck --manifest toy/manifest.csv --out m.dflg
    scenekd ensemble-logits --out ens.dflg a.dflg b.dflg c.dflg
    scenekd distill --config run.toml --teacher-logits ens.dflg --workdir out/student
    scenekd evaluate --checkpoint m.dfck --manifest toy/manifest.csv
    scenekd count-complexity --arch cpm --base-channels 32
    scenekd matrix --config matrix.toml --workdir out/matrix
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import augment, matrix as matrix_mod
from .config import apply_table, dg_params, load_config
from .data import SceneDataset, make_toy_dataset
from .distill import LogitStore, ensemble_logits
from .harness import (TrainSettings, evaluate, evaluate_store, export_logits,
                      train_runs)
from .models import (INPUT_SHAPE, BudgetError, ModelConfig, assert_budget,
                     count_complexity, build_model, model_from_checkpoint)


def _print_metrics(report, label):
    unseen = f"{report.unseen_acc:.4f}" if report.unseen_acc is not None else "n/a"
    print(f"{label}: acc={report.overall_acc:.4f} ({report.correct}/{report.n})  "
          f"unseen={unseen} ({report.correct_unseen}/{report.n_unseen})")


def cmd_gen_data(args):
    manifest = make_toy_dataset(args.root, args.clips_per_cell, args.seed)
    n = sum(1 for _ in open(manifest)) - 1
    print(f"wrote {n} clips, manifest at {manifest}")
    if args.with_irs:
        irs = augment.default_ir_bank()
        augment.write_ir_bank(Path(args.root) / "irs", irs)
        print(f"wrote {len(irs)} impulse responses to {Path(args.root) / 'irs'}")


def _train_from_config(args, teacher_logits):
    cfg = load_config(args.config)
    mcfg = apply_table(ModelConfig(), cfg.get("model", {}), "model")
    st = apply_table(TrainSettings(), cfg.get("train", {}), "train")

    acfg = cfg.get("augment", {})
    role = "student" if teacher_logits else "teacher"
    if "preset" in acfg:
        st.alpha_fms, st.p_fms, st.p_dir = dg_params(acfg["preset"], acfg.get("role", role))
    for key in ("alpha_fms", "p_fms", "p_dir"):
        if key in acfg:
            setattr(st, key, acfg[key])

    store = None
    if teacher_logits:
        dcfg = cfg.get("distill", {})
        st.lam = float(dcfg.get("lam", 0.02))
        st.tau = float(dcfg.get("tau", 2.0))
        st.enforce_budget = bool(dcfg.get("enforce_budget", True))
        store = LogitStore.load(teacher_logits)
    else:
        st.lam = 1.0

    if args.epochs:
        st.epochs = args.epochs
    if args.runs:
        st.runs = args.runs
    if args.seed is not None:
        st.seed = args.seed

    manifest = cfg.get("data", {}).get("manifest")
    if args.manifest:
        manifest = args.manifest
    if not manifest:
        sys.exit("no manifest: set [data].manifest in the config or pass --manifest")
    dataset = SceneDataset(manifest)
    mcfg.n_classes = dataset.n_classes

    ir_dir = cfg.get("data", {}).get("ir_dir")
    ir_bank = augment.load_ir_bank(ir_dir) if ir_dir else None

    result = train_runs(mcfg, dataset, st, args.workdir, teacher_store=store,
                        ir_bank=ir_bank, log=print)
    unseen = f"{result.unseen_acc:.4f}" if result.unseen_acc is not None else "n/a"
    print(f"aggregate over {st.runs} run(s) x last {st.keep_last} epochs: "
          f"acc={result.overall_acc:.4f} unseen={unseen}")
    print(f"final checkpoint(s) under {args.workdir}")


def cmd_train(args):
    _train_from_config(args, teacher_logits=None)


def cmd_distill(args):
    _train_from_config(args, teacher_logits=args.teacher_logits)


def cmd_export_logits(args):
    model = model_from_checkpoint(args.checkpoint)
    dataset = SceneDataset(args.manifest)
    entries = dataset.split(args.split) if args.split else None
    store = export_logits(model, dataset, entries)
    store.save(args.out)
    print(f"wrote {len(store)} logit rows ({store.n_classes} classes) to {args.out}")


def cmd_ensemble_logits(args):
    stores = [LogitStore.load(p) for p in args.stores]
    ens = ensemble_logits(stores)
    ens.save(args.out)
    print(f"averaged {len(stores)} stores over {len(ens)} clips into {args.out}")


def cmd_evaluate(args):
    dataset = SceneDataset(args.manifest)
    if args.logits:
        report = evaluate_store(LogitStore.load(args.logits), dataset, args.split)
        _print_metrics(report, f"{args.logits} on {args.split}")
    if args.checkpoint:
        model = model_from_checkpoint(args.checkpoint)
        report = evaluate(model, dataset, args.split)
        _print_metrics(report, f"{args.checkpoint} on {args.split}")
    if not args.logits and not args.checkpoint:
        sys.exit("pass --checkpoint and/or --logits")


def cmd_count_complexity(args):
    mcfg = ModelConfig(arch=args.arch, base_channels=args.base_channels,
                       n_classes=args.n_classes)
    model = build_model(mcfg)
    report = count_complexity(model, INPUT_SHAPE)
    print(report.table())
    if args.check_budget:
        try:
            assert_budget(model)
        except BudgetError as e:
            sys.exit(f"over budget: {e}")
        print(f"within budget ({report.params} <= 128000 params, "
              f"{report.macs} <= 30000000 MACs)")


def cmd_matrix(args):
    cfg = load_config(args.config)
    if args.plan_only:
        jobs = matrix_mod.plan(cfg)
        for t in jobs.teachers:
            print(f"teacher  {t.name}")
        for e in jobs.ensembles:
            print(f"ensemble {e.name}  members={len(e.members)}")
        for s in jobs.students:
            print(f"student  {s.name}  <- {s.ensemble}")
        print(f"{jobs.jobs} jobs total")
        return
    outcome = matrix_mod.run_matrix(cfg, args.workdir, log=print)
    print(f"{outcome.plan.jobs} jobs done; results at {outcome.csv_path}")


def main(argv=None):
    ap = argparse.ArgumentParser(prog="scenekd",
                                 description="Distill compact acoustic scene classifiers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize the toy scene/device corpus")
    p.add_argument("--root", required=True)
    p.add_argument("--clips-per-cell", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-irs", action="store_true",
                   help="also write the synthetic impulse-response bank")
    p.set_defaults(fn=cmd_gen_data)

    for name, fn in (("train", cmd_train), ("distill", cmd_distill)):
        p = sub.add_parser(name, help=f"{name} a model from a TOML config")
        p.add_argument("--config", required=True)
        p.add_argument("--workdir", required=True)
        p.add_argument("--manifest", help="override [data].manifest")
        p.add_argument("--epochs", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--seed", type=int)
        if name == "distill":
            p.add_argument("--teacher-logits", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("export-logits", help="run a checkpoint over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", help="restrict to one split (default: all clips)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_logits)

    p = sub.add_parser("ensemble-logits", help="average logit stores entry-wise")
    p.add_argument("stores", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ensemble_logits)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint or logit store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--logits")
    p.add_argument("--split", default="val")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("count-complexity", help="per-layer parameter/MAC table")
    p.add_argument("--arch", choices=("cpm", "cpr"), required=True)
    p.add_argument("--base-channels", type=int, required=True)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--check-budget", action="store_true")
    p.set_defaults(fn=cmd_count_complexity)

    p = sub.add_parser("matrix", help="run a teacher/ensemble/student matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--plan-only", action="store_true")
    p.set_defaults(fn=cmd_matrix)

    args = ap.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
