"""Command-line entry point: ``cor <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cor.errors import CorError

log = logging.getLogger("cor")

SPLIT_CHOICES = ("train", "test_base", "test_novel")


def _train_config(args):
    from cor.train import TrainConfig

    return TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        disable_rre=args.no_rre,
        disable_avti=args.no_avti,
        disable_lcor=args.no_lcor,
        expr=args.expr,
    )


def cmd_train(args) -> int:
    from cor.dataset import load_manifest
    from cor.train import save_model, train, write_log

    cfg = _train_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(manifest, cfg)
    ckpt = save_model(out / "checkpoint.cor", res.model, cfg)
    write_log(out / "train_log.csv", res.history, contrastive=not cfg.disable_lcor)
    print(f"trained {cfg.epochs} epochs in {res.seconds:.1f}s -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from cor.dataset import load_manifest
    from cor.experiments import baseline_report
    from cor.metrics import format_report, write_report
    from cor.train import evaluate_model, load_model

    manifest = load_manifest(args.manifest)
    if args.method == "baseline":
        name, report = "Baseline", baseline_report(manifest, args.split)
    else:
        if not args.checkpoint:
            raise SystemExit("cor eval --method core needs --checkpoint")
        name, report = "CORE", evaluate_model(load_model(args.checkpoint), manifest, args.split)
    if args.out:
        txt, _ = write_report({name: report}, args.out, stem=f"eval_{args.method}")
        print(f"wrote {txt}")
    print(format_report({name: report}), end="")
    return 0


def cmd_report(args) -> int:
    """Train every ablation variant, evaluate them and the baseline, write one report."""
    from cor.dataset import load_manifest
    from cor.experiments import ABLATIONS, ablation_study, baseline_report
    from cor.metrics import format_report, write_report
    from cor.train import write_log

    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    runs = ablation_study(manifest, _train_config(args), ABLATIONS, args.split)
    rows = {name: run.report for name, run in runs.items()}
    if not args.no_baseline:
        rows["Baseline"] = baseline_report(manifest, args.split)
    write_report(rows, out, stem="report")
    for name, run in runs.items():
        stem = name.replace("/", "").replace(" ", "_").lower()
        write_log(out / f"train_log_{stem}.csv", run.result.history, contrastive=not run.config.disable_lcor)
    print(format_report(rows), end="")
    return 0


def cmd_gradcheck(args) -> int:
    from cor.checks import REGISTRY, format_results, run_checks

    if args.list:
        print("\n".join(REGISTRY))
        return 0
    results = run_checks(args.only or None, tol=args.tol, eps=args.eps, corrupt=args.corrupt or ())
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_synth(args) -> int:
    from cor.dataset import SynthConfig, synth_generate

    cfg = SynthConfig(image_size=args.image_size, n_train=args.n_train, n_test=args.n_test, n_novel=args.n_novel)
    manifest = synth_generate(cfg, args.seed, args.out)
    print(f"wrote {len(manifest.samples)} samples to {Path(args.out) / 'manifest.json'}")
    return 0


def _pipeline_config(args):
    from cor.pipeline import PipelineConfig

    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    return PipelineConfig(**doc)


def cmd_pipeline(args) -> int:
    from cor.pipeline import HttpVlmClient, ScriptedVlm, load_raw, run_pipeline

    raw = load_raw(args.raw)
    vlm = ScriptedVlm.from_json(args.script) if args.script else HttpVlmClient(args.endpoint)
    res = run_pipeline(raw, _pipeline_config(args), vlm, args.out, resume=args.resume)
    counts = {s: r.get("kept") for s, r in sorted(res.audit.summaries().items())}
    print(f"{len(res.manifest.samples)} triplets -> {Path(args.out) / 'manifest.json'}")
    print("kept per step: " + ", ".join(f"{s}:{n}" for s, n in counts.items()))
    return 0


def cmd_stats(args) -> int:
    from cor.dataset import format_summary, load_manifest, split_summary, stats

    manifest = load_manifest(args.manifest)
    table = stats(manifest)
    print(table.to_json() if args.json else table.to_text(), end="")
    if args.histogram:
        print(format_summary(split_summary(manifest)), end="")
    return 0


def _add_train_flags(p) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=6)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--no-rre", action="store_true", help="replace RRE by masked pooling")
    p.add_argument("--no-avti", action="store_true", help="replace AVTI by a plain sum")
    p.add_argument("--no-lcor", action="store_true", help="drop the contrastive loss term")
    p.add_argument("--expr", default="full", choices=("irm", "it", "i", "t", "full"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cor", description="Composed object retrieval toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on the train split")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test_base", choices=SPLIT_CHOICES)
    p.add_argument("--method", default="core", choices=("core", "baseline"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="ablation study plus baseline in one report")
    _add_train_flags(p)
    p.add_argument("--split", default="test_base", choices=SPLIT_CHOICES)
    p.add_argument("--no-baseline", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered gradient")
    p.add_argument("--only", nargs="*", help="run only these checks")
    p.add_argument("--corrupt", nargs="*", help="skew the backward pass of these checks (test hook)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--list", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic shape world")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=60)
    p.add_argument("--n-novel", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="curate triplets from raw instance annotations")
    p.add_argument("--raw", required=True, help="COCO-style annotations JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--script", help="scripted validator replies (JSON); default is the HTTP client")
    p.add_argument("--endpoint", help="validator URL (default: $COR_VLM_ENDPOINT)")
    p.add_argument("--config", help="JSON file of pipeline thresholds")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("stats", help="dataset statistics table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--histogram", action="store_true", help="also print per-category pair counts")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorError, ValueError, OSError) as e:
        print(f"cor {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
