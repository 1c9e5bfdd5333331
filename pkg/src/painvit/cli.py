"""Command line entry point: ``painvit <subcommand> [options]``.

Exit status: 0 on success, 1 on validation/usage errors, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from . import harness as H
from . import interpret as I
from . import plots
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import PainVitError
from .vit import predict

log = logging.getLogger("painvit")


class UsageError(PainVitError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--manifest", type=Path, help="read frames from this manifest instead of the config source")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="painvit", description="Vision-transformer pain detection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic corpus as manifest + PGM images")
    _common(p)
    p.add_argument("--subjects", type=int)
    p.add_argument("--frames", type=int, help="frames per video")
    p.add_argument("--videos", type=int, help="videos per subject")
    p.add_argument("--signal", type=float, help="signal strength in [0, 1]")
    p.add_argument("--image-size", type=int)
    p.add_argument("--channels", type=int, choices=(1, 3))

    p = sub.add_parser("split", help="build subject-disjoint folds")
    _common(p)
    p.add_argument("--folds", type=int, help="number of folds (default from config: 5)")

    p = sub.add_parser("train", help="cross-validated training of one configuration")
    _common(p)
    p.add_argument("--fold", type=int, help="train only this held-out fold")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the train_seconds column")

    p = sub.add_parser("sweep", help="stage-wise sweep (layers, lr, SAM, Mixup)")
    _common(p)
    p.add_argument("--kinds", default="vit,vivit", help="comma-separated model kinds")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the train_seconds column")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--fold", type=int, help="evaluate on this fold's test subjects (default: every sample)")

    p = sub.add_parser("explain", help="attention maps for one sample")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--sample", default="0", help="row index or sample id")
    p.add_argument("--threshold-lo", type=float, default=0.7)
    p.add_argument("--threshold-hi", type=float, default=1.0)
    return parser


def _config(args) -> H.ExperimentConfig:
    config = H.ExperimentConfig.from_file(args.config) if args.config else H.ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "manifest", None):
        config = replace(config, manifest=str(args.manifest), synthetic=None)
    return config


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_gen_data(args) -> int:
    config = _config(args)
    params = dict(config.synthetic or {})
    params.setdefault("seed", config.seed)
    for key, flag in (("num_subjects", "subjects"), ("frames_per_video", "frames"), ("videos_per_subject", "videos"),
                      ("signal_strength", "signal"), ("image_size", "image_size"), ("channels", "channels")):
        if getattr(args, flag) is not None:
            params[key] = getattr(args, flag)
    corpus = D.synthetic_from_params(D.SyntheticParams(**params))
    manifest = D.export_manifest(corpus, args.out)
    print(f"{len(corpus)} frames, {len(corpus.subjects())} subjects, prevalence {corpus.prevalence():.3f} -> {manifest}")
    return 0


def cmd_split(args) -> int:
    config = _config(args)
    if args.folds is not None:
        config = replace(config, num_folds=args.folds)
    corpus = H.load_corpus(config)
    folds = H.build_folds(config, corpus)
    _write(args.out / "folds.json", folds.to_json())
    counts = dict(corpus.pain_counts())
    for i, members in enumerate(folds.folds()):
        print(f"fold {i}: {len(members)} subjects, {sum(counts[s] for s in members)} pain frames: {' '.join(members)}")
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    corpus = H.load_corpus(config)
    folds = H.build_folds(config, corpus)
    samples = H.model_inputs(config, corpus)
    fold_ids = [args.fold] if args.fold is not None else list(range(folds.k))
    if any(not 0 <= f < folds.k for f in fold_ids):
        raise UsageError(f"--fold must be in [0, {folds.k})")
    runs = []
    for f in fold_ids:
        run = H.train_fold(config, samples, folds, f)
        save_checkpoint(run.model, args.out / f"fold{f}.pvtc", run.optimizer)
        print(f"fold {f}: F1 {run.result.f1:.3f}  AUC {run.result.auc:.3f}  ({run.train_seconds:.1f}s)")
        runs.append(run)
    _write(args.out / "folds.json", folds.to_json())
    _write(args.out / "config.json", json.dumps(config.to_dict(), indent=2))
    _write(args.out / "results.csv", H.fold_csv(config, runs, record_timing=not args.no_timing))
    if len(runs) >= 2:
        rep = H.report(config, runs)
        _write(args.out / "report.json", H.report_json(rep))
        print(f"F1 {rep.f1_mean:.2f} ± {rep.f1_std:.2f}  AUC {rep.auc_mean:.2f} (pooled {rep.auc_pooled:.2f})")
    (args.out / "figures").mkdir(parents=True, exist_ok=True)
    plots.plot_fold_results([r.result for r in runs], args.out / "figures" / "folds.png", config.model_kind.upper())
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    bad = [k for k in kinds if k not in H.MODEL_KINDS]
    if bad:
        raise UsageError(f"unknown model kinds {bad}")
    corpus = H.load_corpus(config)
    entries = H.run_sweep(H.SweepGrid(), config, corpus, kinds, record_timing=not args.no_timing)
    _write(args.out / "sweep.csv", H.sweep_csv(entries))
    _write(args.out / "summary.csv", H.summary_csv(entries))
    figures = args.out / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        plots.plot_sweep(entries, kind, figures / f"sweep_{kind}.png")
        plots.plot_top_folds(entries, kind, figures / f"top_folds_{kind}.png")
        best = next(e for e in entries if e.model_kind == kind and e.selected)
        print(f"{kind}: best config #{best.config_id} F1 {best.f1_mean:.3f} ± {best.f1_std:.3f}")
    return 0


def _eval_rows(config, corpus, folds, fold):
    samples = H.model_inputs(config, corpus)
    if fold is None:
        return samples, np.arange(len(samples))
    if not 0 <= fold < folds.k:
        raise UsageError(f"--fold must be in [0, {folds.k})")
    return samples, samples.indices_for(folds.test_subjects(fold))


def cmd_eval(args) -> int:
    from .metrics import evaluate_fold

    config = _config(args)
    model = load_checkpoint(args.checkpoint)
    corpus = H.load_corpus(config)
    folds = H.build_folds(config, corpus)
    samples, rows = _eval_rows(config, corpus, folds, args.fold)
    probs = H.evaluate(model, samples.images[rows])
    preds = (probs >= 0.5).astype(int)
    result = evaluate_fold(args.fold if args.fold is not None else -1, probs, preds, samples.labels[rows])
    lines = ["sample_id,label,pain_prob,pred"]
    lines += [f"{samples.sample_id(int(i))},{int(samples.labels[i])},{p:.6f},{int(q)}"
              for i, p, q in zip(rows, probs, preds)]
    _write(args.out / "predictions.csv", "\n".join(lines) + "\n")
    _write(args.out / "eval.json", json.dumps(result.to_dict(), indent=2))
    print(f"F1 {result.f1:.3f}  AUC {result.auc:.3f}  precision {result.precision:.3f}  recall {result.recall:.3f}")
    return 0


def _find_sample(samples: D.Corpus, key: str) -> int:
    if key.isdigit():
        i = int(key)
        if not 0 <= i < len(samples):
            raise UsageError(f"sample index {i} out of range (0..{len(samples) - 1})")
        return i
    for i in range(len(samples)):
        if samples.sample_id(i) == key:
            return i
    raise UsageError(f"no sample with id {key!r}")


def cmd_explain(args) -> int:
    config = _config(args)
    model = load_checkpoint(args.checkpoint)
    samples = H.model_inputs(config, H.load_corpus(config))
    i = _find_sample(samples, args.sample)
    sid = samples.sample_id(i)
    image = samples.images[i]
    out = model.forward(image[None], training=False)
    probs, label = predict(out.logits)
    stack = I.sample_stack(out.attentions, 0)
    last = len(stack) - 1
    args.out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.threshold_lo, args.threshold_hi
    written = []
    for h in range(stack[last].shape[0]):
        path = args.out / f"{sid}_head_{last}_{h}.ppm"
        I.render_overlay(I.head_map(stack, last, h), image, path, lo, hi)
        written.append(path)
    path = args.out / f"{sid}_lastmax_{last}.ppm"
    I.render_overlay(I.last_layer_max(stack), image, path, lo, hi)
    written.append(path)
    path = args.out / f"{sid}_rollout.ppm"
    I.render_overlay(I.rollout(stack, "max"), image, path, lo, hi)
    written.append(path)
    print(f"{sid}: label {int(samples.labels[i])}, p(pain) {probs[0, 1]:.3f}, predicted {int(label[0])}")
    for p in written:
        print(f"  {p}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "split": cmd_split, "train": cmd_train, "sweep": cmd_sweep,
            "eval": cmd_eval, "explain": cmd_explain}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"painvit: I/O error: {exc}", file=sys.stderr)
        return 2
    except (PainVitError, ValueError) as exc:
        print(f"painvit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
