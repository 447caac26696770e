"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, ablate. Every command echoes
an effective-config banner (all defaults resolved) that is sufficient to
reproduce the run, emits CSV for anything tabular, and renders matplotlib
figures next to the CSV unless --no-figures is given.

Exit codes: 0 success, 1 internal or check failure, 2 usage/validation.
"""

from __future__ import annotations

import argparse
import os
import sys
from . import config as cfgmod
from . import data as datamod
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DatasetFormatError,
    DimensionError,
    XmemError,
)
from .gradcheck import run_gradcheck
from .model import load_checkpoint
from .retrieval import (
    RetrievalReport,
    evaluate_embeddings,
    evaluate_model,
    embed_pairs,
    read_embeddings,
    write_embeddings,
    write_report,
)
from .trainer import (
    AblationConfig,
    final_checkpoint_path,
    train,
    write_train_log,
)

USAGE_ERRORS = (ConfigError, DatasetFormatError, CheckpointFormatError, DimensionError, FileNotFoundError)

ARM_TOKENS = {"hm": "use_hard_mining", "ma": "use_ma", "r2i": "use_r2i", "i2r": "use_i2r"}


def _banner(lines: list[str]) -> None:
    print("--- effective config ---")
    for line in lines:
        print(line)
    print("--- end config ---")


def _config_banner(hp: cfgmod.HyperParams, extra: dict | None = None) -> None:
    lines = cfgmod.format_config(hp).rstrip("\n").split("\n")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    _banner(lines)


def _resolve_config(args) -> cfgmod.HyperParams:
    hp = cfgmod.HyperParams()
    if getattr(args, "config", None):
        hp = cfgmod.load_config(args.config, hp)
    if getattr(args, "preset", None) == "paper":
        hp = cfgmod.apply_full_scale_preset(hp)
    if getattr(args, "set", None):
        hp = cfgmod.apply_overrides(hp, args.set)
    hp = cfgmod.apply_env(hp)
    hp.validate()
    return hp


def _load_dataset(path) -> datamod.Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    return datamod.load_dataset(path)


# --- gen-data ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = datamod.SyntheticSpec()
    if args.spec:
        if not os.path.exists(args.spec):
            raise FileNotFoundError(f"spec file not found: {args.spec}")
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = datamod.parse_spec_text(fh.read(), spec)
    if args.set:
        spec = datamod.parse_spec_text("\n".join(args.set), spec)
    _banner(datamod.format_spec(spec).rstrip("\n").split("\n") + [f"out = {args.out}"])
    dataset = datamod.generate_dataset(spec, args.out)
    print(f"recipes={len(dataset.recipes)} images={dataset.n_images} classes={dataset.n_classes}")
    return 0


# --- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    hp = _resolve_config(args)
    dataset = _load_dataset(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    extra = {
        "data": args.data,
        "out_dir": args.out_dir,
        "checkpoint_every": args.checkpoint_every,
        "figures": str(args.figures).lower(),
    }
    if args.resume:
        extra["resume"] = args.resume
    _config_banner(hp, extra)

    params, records = train(
        dataset,
        hp,
        resume_from=args.resume,
        out_dir=args.out_dir,
        checkpoint_every=args.checkpoint_every,
        progress=(lambda rec: print(
            f"epoch {rec.epoch:3d}  l_ret {rec.l_ret:.4f}  total {rec.total:.4f}  "
            f"|gap| {rec.wasserstein_est:.4f}  {rec.seconds:.2f}s"
        )) if args.verbose else None,
    )
    config_lines = cfgmod.format_config(hp).rstrip("\n").split("\n")
    log_path = os.path.join(args.out_dir, "train_log.csv")
    write_train_log(records, log_path, config_lines)
    if args.figures and records:
        from .figures import save_training_curves

        save_training_curves(records, os.path.join(args.out_dir, "train_curves.png"))
    print(f"checkpoint: {final_checkpoint_path(args.out_dir)}")
    print(f"train log: {log_path}")
    if records:
        last = records[-1]
        print(f"final: l_ret {last.l_ret!r} total {last.total!r}")
    return 0


# --- eval --------------------------------------------------------------------


def _report_table(reports: list[RetrievalReport]) -> str:
    header = f"{'direction':10s} {'subset_size':>11s} {'medr_mean':>12s} {'medr_std':>12s} " \
             f"{'r_at_1':>8s} {'r_at_5':>8s} {'r_at_10':>8s}"
    rows = [header]
    for rep in reports:
        rows.append(
            f"{rep.direction:10s} {rep.subset_size:>11d} {rep.medr_mean!r:>12s} {rep.medr_std!r:>12s} "
            f"{rep.recall(1)!r:>8s} {rep.recall(5)!r:>8s} {rep.recall(10)!r:>8s}"
        )
    return "\n".join(rows)


def cmd_eval(args) -> int:
    if bool(args.embeddings) == bool(args.checkpoint):
        raise ConfigError("eval needs exactly one of --embeddings or --checkpoint with --data")
    out_path = args.out
    banner_extra = {
        "subset_size": args.subset_size,
        "subsets": args.subsets,
        "seed": args.seed,
    }

    if args.embeddings:
        if not os.path.exists(args.embeddings):
            raise FileNotFoundError(f"embedding file not found: {args.embeddings}")
        banner_extra["embeddings"] = args.embeddings
        _banner([f"{k} = {v}" for k, v in banner_extra.items()])
        ids, img, rcp = read_embeddings(args.embeddings)
        im2rec, rec2im = evaluate_embeddings(img, rcp, args.subset_size, args.subsets, args.seed)
        if out_path is None:
            out_path = "retrieval_report.csv"
    else:
        if not args.data:
            raise ConfigError("--checkpoint also needs --data")
        hp = _resolve_config(args)
        if not os.path.exists(args.checkpoint):
            raise FileNotFoundError(f"checkpoint file not found: {args.checkpoint}")
        params = load_checkpoint(args.checkpoint)
        params.config.normalize_embeddings = hp.normalize_embeddings
        dataset = _load_dataset(args.data)
        banner_extra.update({
            "checkpoint": args.checkpoint,
            "data": args.data,
            "split": args.split,
            "normalize_embeddings": str(hp.normalize_embeddings).lower(),
            "precision": params.precision,
        })
        _banner([f"{k} = {v}" for k, v in banner_extra.items()])
        ids, im2rec, rec2im = evaluate_model(
            params, dataset, args.split, args.subset_size, args.subsets, args.seed
        )
        if args.dump_embeddings:
            records = dataset.split_records(args.split)
            pids, img, rcp = datamod.eval_pairs(dataset, records, params.dtype)
            _, _, v_fin, r_fin = embed_pairs(params, img, rcp)
            write_embeddings(args.dump_embeddings, pids, v_fin, r_fin)
            print(f"embeddings: {args.dump_embeddings}")
        if out_path is None:
            out_path = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "retrieval_report.csv")

    reports = [im2rec, rec2im]
    print(_report_table(reports))
    write_report(reports, out_path)
    print(f"report: {out_path}")
    if args.figures:
        from .figures import save_retrieval_figure

        fig_path = os.path.splitext(out_path)[0] + ".png"
        save_retrieval_figure(reports, fig_path)
        print(f"figure: {fig_path}")
    return 0


# --- gradcheck -----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    _banner([f"seed = {args.seed}", f"coords_per_array = {args.coords}"])
    results = run_gradcheck(args.seed, coords_per_array=args.coords)
    all_ok = True
    for name, report in results:
        status = "PASS" if report.passed else "FAIL"
        all_ok = all_ok and report.passed
        print(f"{status}  {name:32s} max_rel_err={report.max_rel_err:.3e} (tol {report.tol:g})")
    print("gradcheck: " + ("all losses PASS" if all_ok else "FAILURES detected"))
    return 0 if all_ok else 1


# --- ablate ----------------------------------------------------------------------


def parse_arm(token: str) -> AblationConfig:
    token = token.strip().lower()
    if token == "all":
        return AblationConfig(True, True, True, True)
    parts = token.split("+")
    if parts[0] != "tl":
        raise ConfigError(f"unknown ablation arm {token!r}: arms start with 'tl' or are 'all'")
    arm = AblationConfig(False, False, False, False)
    for part in parts[1:]:
        if part not in ARM_TOKENS:
            raise ConfigError(f"unknown ablation arm token {part!r} in {token!r}")
        setattr(arm, ARM_TOKENS[part], True)
    return arm


def cmd_ablate(args) -> int:
    hp = _resolve_config(args)
    dataset = _load_dataset(args.data)
    tokens = [t for t in args.arms.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("--arms is empty")
    arms = [(t.strip(), parse_arm(t)) for t in tokens]
    _config_banner(hp, {
        "data": args.data,
        "arms": args.arms,
        "split": args.split,
        "subset_size": args.subset_size,
        "subsets": args.subsets,
        "eval_seed": args.seed,
        "out": args.out,
    })

    rows = []
    lines = ["arm,direction,subset_size,medr_mean,medr_std,r_at_1,r_at_5,r_at_10"]
    for token, arm in arms:
        params, _ = train(dataset, hp, ablation=arm)
        _, im2rec, rec2im = evaluate_model(
            params, dataset, args.split, args.subset_size, args.subsets, args.seed
        )
        rows.append((token, im2rec))
        for rep in (im2rec, rec2im):
            lines.append(
                f"{token},{rep.direction},{rep.subset_size},{rep.medr_mean!r},{rep.medr_std!r},"
                f"{rep.recall(1)!r},{rep.recall(5)!r},{rep.recall(10)!r}"
            )
        print(
            f"{token:16s} im2rec MedR {im2rec.medr_mean!r} R@1 {im2rec.recall(1)!r} "
            f"rec2im MedR {rec2im.medr_mean!r}"
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"comparison: {args.out}")
    if args.figures:
        from .figures import save_ablation_figure

        fig_path = os.path.splitext(args.out)[0] + ".png"
        save_ablation_figure(rows, fig_path)
        print(f"figure: {fig_path}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xmem",
        description="Cross-modal embedding trainer and retrieval evaluator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--spec", help="spec file (key = value lines)")
    p.add_argument("--out", required=True, help="output dataset path (.jsonl or .jsonl.gz)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="config file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint/log/figures")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--preset", choices=["paper"], help="full-scale settings preset")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="K")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval evaluation")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--embeddings", help="embedding interchange file (eval-only mode)")
    p.add_argument("--subset-size", type=int, default=100, dest="subset_size")
    p.add_argument("--subsets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "heldout", "all"])
    p.add_argument("--config", help="config file (normalization flag etc.)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--dump-embeddings", help="write the embeddings used to this interchange file")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=4, help="coordinates sampled per parameter array")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare ablation arms")
    p.add_argument("--config", help="config file")
    p.add_argument("--data", required=True)
    p.add_argument("--arms", required=True, help="comma list, e.g. tl,tl+hm,tl+hm+ma,all")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--preset", choices=["paper"])
    p.add_argument("--split", default="heldout", choices=["train", "val", "test", "heldout", "all"])
    p.add_argument("--subset-size", type=int, default=100, dest="subset_size")
    p.add_argument("--subsets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="evaluation subset seed")
    p.add_argument("--out", default="ablation.csv")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except XmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
