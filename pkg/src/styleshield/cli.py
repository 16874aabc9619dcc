"""Command-line entry points.

Subcommands mirror the library's stages: analyze-layers, protect,
mimic, evaluate run standalone on plain folders; pipeline and
robustness orchestrate full runs over a dataset tree; compare renders
a cross-run table; make-fixtures writes the procedural test dataset.

Configuration comes from an optional YAML file plus flag overrides
(flags win). Set STYLESHIELD_PROVIDER_CACHE to redirect the real
metric provider's model downloads (exported as TORCH_HOME).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .backend import create_backbone
from .evalsuite import evaluate_run, get_provider
from .fixtures import make_fixture_dataset
from .images import load_image, save_image, save_sidecar
from .mimic import MimicryConfig, finetune, generate
from .pipeline import (
    STAGES,
    compare_report,
    ingest,
    run_pipeline,
    runconfig_from_dict,
)
from .probe import ProbeConfig, ProbePrompt, hashed_phrase_descriptor, run_probe
from .protect import ProtectConfig, protect, protection_sidecar
from .select import PRESETS, SelectionPolicy, select

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _csv_list(text: str) -> list:
    return [item.strip() for item in text.split(",") if item.strip()]


def _load_folder(folder: Path, provenance: str = "clean") -> list:
    paths = sorted(p for p in Path(folder).iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise SystemExit(f"no images found in {folder}")
    return [load_image(p, provenance=provenance) for p in paths]


def _probe_battery(contents: list, styles: list) -> list:
    return [
        ProbePrompt(text=f"a {content} in the style of {style}",
                    content_word=content, style_phrase=style)
        for style in styles for content in contents
    ]


# ---------------------------------------------------------------- handlers


def _cmd_analyze_layers(args) -> int:
    backbone = create_backbone(args.backbone)
    timesteps = None
    if args.timesteps:
        timesteps = tuple(int(t) for t in _csv_list(args.timesteps))
    cfg = ProbeConfig(timesteps=timesteps, sample_steps=args.sample_steps,
                      seed=args.seed, mode=args.mode)
    descriptor = None
    if args.mode == "alignment":
        descriptor = hashed_phrase_descriptor(args.seed)
    prompts = _probe_battery(_csv_list(args.contents), _csv_list(args.styles))
    report = run_probe(backbone, prompts, descriptor, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save_csv(out_dir / "scores.csv")
    (out_dir / "meta.json").write_text(json.dumps({
        "backbone": args.backbone,
        "mode": report.mode,
        "evaluations": report.evaluations,
        "timesteps": list(report.timesteps),
        "warnings": report.warnings,
        "span_note": report.span_note,
    }, indent=2, sort_keys=True) + "\n")
    if args.plot:
        _plot_divergences(report, out_dir / "divergence.png")
    for row in report.to_rows():
        print(f"{row['layer']:32s} divergence={row['divergence']:+.6f}")
    print(f"wrote {out_dir / 'scores.csv'}")
    return 0


def _plot_divergences(report, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = report.to_rows()
    names = [r["layer"] for r in rows]
    divs = [r["divergence"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names)), 4))
    ax.bar(range(len(names)), divs, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel(f"style-content divergence ({report.mode})")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    print(f"wrote {path}")


def _resolve_layers(backbone, args) -> frozenset:
    if args.layers and args.preset:
        raise SystemExit("--layers and --preset are mutually exclusive")
    if args.layers:
        return frozenset(backbone.find_layer(n) for n in _csv_list(args.layers))
    if args.preset:
        ranking = [(lid, 0.0) for lid in backbone.layer_ids]
        policy = SelectionPolicy(mode="named_preset", preset=args.preset)
        return frozenset(select(policy, ranking))
    raise SystemExit("protect needs --layers or --preset")


def _cmd_protect(args) -> int:
    backbone = create_backbone(args.backbone)
    backbone.role = "protect"
    layers = _resolve_layers(backbone, args)
    cfg = ProtectConfig(
        budget=args.budget, outer_iters=args.outer_iters,
        inner_finetune_steps=args.inner_steps, prior_weight=args.prior_weight,
        n_class_examples=args.class_examples, selected_layers=layers,
        seed=args.seed)
    images = _load_folder(args.images)
    protected, plog = protect(images, backbone, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(protected):
        path = out_dir / f"protected_{i:02d}.png"
        save_image(img, path)
        save_sidecar(path, protection_sidecar(cfg, plog, img, version=_version()))
    for warning in plog.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"protected {len(protected)} images -> {out_dir} "
          f"(max delta {max(plog.delta_linf):.5f}, {plog.total_s:.1f}s)"
          if plog.delta_linf else f"protected {len(protected)} images -> {out_dir}")
    return 0


def _cmd_mimic(args) -> int:
    handle = create_backbone(args.backbone)
    handle.role = "attacker"
    prompts = None
    if args.prompts_file:
        lines = Path(args.prompts_file).read_text().splitlines()
        prompts = tuple(line.strip() for line in lines if line.strip())
    cfg = MimicryConfig(
        pseudo_token=args.token, finetune_steps=args.steps,
        learning_rate=args.lr, train_scope=args.scope, seed=args.seed,
        n_class_examples=args.class_examples,
        **({"prompts": prompts} if prompts else {}))
    images = _load_folder(args.images)
    finetune(handle, images, cfg)
    generated = generate(handle, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(generated):
        path = out_dir / f"gen_{i:02d}.png"
        save_image(img, path)
        save_sidecar(path, {"prompt": img.meta.get("prompt"),
                            "template": img.meta.get("template")})
    (out_dir / "training_log.json").write_text(
        json.dumps({"loss": handle.training_log}, indent=2) + "\n")
    print(f"fine-tuned {args.steps} steps on {len(images)} images; "
          f"wrote {len(generated)} generations -> {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    provider = get_provider(args.provider)
    clean = _load_folder(args.clean)
    protected = _load_folder(args.protected, provenance="protected")
    gen_clean = _load_folder(args.gen_clean, provenance="generated")
    gen_protected = _load_folder(args.gen_protected, provenance="generated")
    originals = clean if args.originals is None else _load_folder(args.originals)
    clean_rep, prot_rep = evaluate_run(
        clean, protected, gen_clean, gen_protected, originals, provider,
        transform=args.transform)
    rows = [clean_rep.to_dict(), prot_rep.to_dict()]
    text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _pipeline_config(args):
    data = {}
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
    for key, value in (("backbone", args.backbone), ("seed", args.seed),
                       ("provider_id", args.provider)):
        if value is not None:
            data[key] = value
    overrides = {
        "protect": {"budget": args.budget, "outer_iters": args.outer_iters},
        "mimicry": {"finetune_steps": args.mimic_steps},
    }
    if args.preset:
        overrides["selection"] = {"mode": "named_preset", "preset": args.preset}
    elif args.k is not None:
        overrides["selection"] = {"mode": "top_k_divergence", "k": args.k}
    for section, values in overrides.items():
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            data[section] = {**data.get(section, {}), **values}
    return runconfig_from_dict(data, out_dir=Path(args.out_dir))


def _run_stages(args, stages) -> int:
    cfg = _pipeline_config(args)
    manifest = ingest(args.dataset)
    for name, reason in manifest.skipped:
        print(f"skipped {name}: {reason}", file=sys.stderr)
    if not manifest.entries:
        raise SystemExit("no usable artist folders after validation")
    out = run_pipeline(manifest, cfg, stages)
    print(f"run complete -> {out}")
    aggregate = out / "aggregate.csv"
    if aggregate.exists():
        print(aggregate.read_text(), end="")
    return 0


def _cmd_pipeline(args) -> int:
    stages = _csv_list(args.stages) if args.stages else None
    return _run_stages(args, stages)


def _cmd_robustness(args) -> int:
    return _run_stages(args, ["robustness"])


def _cmd_compare(args) -> int:
    table = compare_report([Path(d) for d in args.runs])
    if args.out:
        Path(args.out).write_text(table)
        print(f"wrote {args.out}")
    else:
        print(table, end="")
    return 0


def _cmd_make_fixtures(args) -> int:
    root = make_fixture_dataset(Path(args.out_dir),
                                images_per_artist=args.images_per_artist,
                                size=args.size, seed=args.seed)
    print(f"fixture dataset -> {root}")
    return 0


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("styleshield")
    except Exception:
        return "unknown"


# ------------------------------------------------------------------ parser


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="artist-folder dataset root")
    p.add_argument("--out-dir", required=True, help="run output directory")
    p.add_argument("--config", help="YAML config file (flags override it)")
    p.add_argument("--backbone", help="backbone id, e.g. toy-small, toy-sd15, sd")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--provider", help="metric provider id, e.g. stub-9222")
    p.add_argument("--budget", type=float, help="perturbation L-inf budget")
    p.add_argument("--outer-iters", type=int, help="protection outer iterations")
    p.add_argument("--mimic-steps", type=int, help="attacker fine-tune steps")
    p.add_argument("--k", type=int, help="select top-k layers by divergence")
    p.add_argument("--preset", choices=PRESETS, help="named layer preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleshield",
        description="Protect artwork against style mimicry by fine-tuned "
                    "diffusion models.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log stage progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-layers",
                       help="score cross-attention layers by style sensitivity")
    p.add_argument("--backbone", default="toy-small")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--contents", default="dog,tree",
                   help="comma-separated content words")
    p.add_argument("--styles", default="ClaudeMonet,VincentVanGogh",
                   help="comma-separated style phrases")
    p.add_argument("--mode", choices=("activation", "alignment"),
                   default="activation")
    p.add_argument("--timesteps", help="comma-separated schedule steps "
                                       "(default: schedule midpoint)")
    p.add_argument("--sample-steps", type=int, default=8)
    p.add_argument("--seed", type=int, default=9222)
    p.add_argument("--plot", action="store_true",
                   help="also write a divergence bar chart")
    p.set_defaults(func=_cmd_analyze_layers)

    p = sub.add_parser("protect", help="perturb images within a pixel budget")
    p.add_argument("--backbone", default="toy-small")
    p.add_argument("--images", required=True, help="folder of clean images")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--budget", type=float, default=0.05)
    p.add_argument("--outer-iters", type=int, default=40)
    p.add_argument("--inner-steps", type=int, default=3)
    p.add_argument("--prior-weight", type=float, default=1.0)
    p.add_argument("--class-examples", type=int, default=100)
    p.add_argument("--layers", help="comma-separated layer names to fine-tune")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int, default=9222)
    p.set_defaults(func=_cmd_protect)

    p = sub.add_parser("mimic",
                       help="fine-tune an attacker copy and generate imitations")
    p.add_argument("--backbone", default="toy-small")
    p.add_argument("--images", required=True, help="folder of training images")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--scope", choices=("full", "cross_attention"), default="full")
    p.add_argument("--token", default="sks")
    p.add_argument("--class-examples", type=int, default=100)
    p.add_argument("--prompts-file", help="file with one generation prompt per line")
    p.add_argument("--seed", type=int, default=9222)
    p.set_defaults(func=_cmd_mimic)

    p = sub.add_parser("evaluate", help="score one protected-vs-clean experiment")
    p.add_argument("--clean", required=True)
    p.add_argument("--protected", required=True)
    p.add_argument("--gen-clean", required=True)
    p.add_argument("--gen-protected", required=True)
    p.add_argument("--originals", help="style reference folder (default: --clean)")
    p.add_argument("--provider", default="stub-9222")
    p.add_argument("--transform", default="none",
                   choices=("none", "jpeg75", "blur3"))
    p.add_argument("--out", help="write report JSON here instead of stdout")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run the end-to-end experiment")
    _add_pipeline_flags(p)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("robustness",
                       help="replay attack+evaluation on transformed protected images")
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("compare", help="markdown table across finished runs")
    p.add_argument("runs", nargs="+", help="run directories with aggregate.csv")
    p.add_argument("--out", help="write markdown here instead of stdout")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("make-fixtures", help="write the procedural test dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--images-per-artist", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=9222)
    p.set_defaults(func=_cmd_make_fixtures)

    return parser


def main(argv=None) -> int:
    cache = os.environ.get("STYLESHIELD_PROVIDER_CACHE")
    if cache:
        os.environ.setdefault("TORCH_HOME", cache)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
