"""End-to-end experiment orchestration.

Stage graph: probe -> select -> protect -> mimic -> evaluate, plus a
robustness stage that replays mimic+evaluate on post-processed copies
of the protected images. Every stage persists its outputs and the next
stage reads them back from disk, so a resumed run sees bit-identical
inputs to a fresh one; completed stages are skipped via marker files
keyed on the config hash, the dataset content hash and the seed.

Wall-clock numbers never enter the deterministic artifacts (reports,
aggregate table, summary); they live in timings.json, which is the one
file expected to differ between identical runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter

from PIL import Image, UnidentifiedImageError

from .backend import create_backbone
from .errors import SchemaMismatchError
from .evalsuite import apply_transform, evaluate_run, get_provider
from .images import load_image, save_image, save_sidecar
from .mimic import MimicryConfig, finetune, generate
from .backend.types import CrossAttnLayerId
from .probe import (
    LayerScore,
    ProbeConfig,
    ProbePrompt,
    hashed_phrase_descriptor,
    run_probe,
)
from .protect import (
    ProtectConfig,
    generate_class_examples,
    protect,
    protection_sidecar,
)
from .seeding import derive_seed
from .select import SelectionPolicy, rank_layers, select, selection_manifest

log = logging.getLogger(__name__)

STAGES = ("probe", "select", "protect", "mimic", "evaluate", "robustness")
_DEPENDENCIES = {
    "probe": (),
    "select": ("probe",),
    "protect": ("select",),
    "mimic": ("protect",),
    "evaluate": ("mimic",),
    "robustness": ("evaluate",),
}
ROBUSTNESS_TRANSFORMS = ("jpeg75", "blur3")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

SOURCE_TAGS = ("wikiart_refined", "anita", "custom")


@dataclass(frozen=True)
class ManifestEntry:
    artist_id: str
    image_paths: tuple
    source_tag: str
    image_hashes: tuple

    def __post_init__(self):
        if not 3 <= len(self.image_paths) <= 5:
            raise ValueError(
                f"{self.artist_id}: entries need 3 to 5 images, "
                f"got {len(self.image_paths)}"
            )
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}")


@dataclass
class DatasetManifest:
    root: Path
    entries: list
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "root": str(self.root),
            "entries": [
                {
                    "artist_id": e.artist_id,
                    "image_paths": [str(p) for p in e.image_paths],
                    "source_tag": e.source_tag,
                    "image_hashes": list(e.image_hashes),
                }
                for e in self.entries
            ],
            "skipped": [list(s) for s in self.skipped],
        }

    def content_hash(self) -> str:
        payload = json.dumps(
            [[e.artist_id, list(e.image_hashes)] for e in self.entries],
            sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _tag_for(folder_name: str) -> str:
    if folder_name.startswith("anita_"):
        return "anita"
    if folder_name.startswith("wikiart_"):
        return "wikiart_refined"
    return "custom"


def ingest(root) -> DatasetManifest:
    """Scan a directory-per-artist tree into a validated manifest.

    Folders violating the 3-to-5-image rule, and unreadable image
    files, are reported in `skipped` rather than raising.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    if not folders:
        raise ValueError(f"dataset root {root} contains no artist folders")

    entries, skipped = [], []
    for folder in folders:
        paths = sorted(p for p in folder.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        readable = []
        for p in paths:
            try:
                with Image.open(p) as im:
                    im.verify()
                readable.append(p)
            except (OSError, UnidentifiedImageError) as exc:
                skipped.append((f"{folder.name}/{p.name}", f"unreadable: {exc}"))
        if not 3 <= len(readable) <= 5:
            skipped.append(
                (folder.name,
                 f"{len(readable)} readable images, need 3 to 5"))
            continue
        hashes = tuple(
            hashlib.sha256(p.read_bytes()).hexdigest()[:16] for p in readable)
        entries.append(ManifestEntry(
            artist_id=folder.name,
            image_paths=tuple(readable),
            source_tag=_tag_for(folder.name),
            image_hashes=hashes,
        ))
    return DatasetManifest(root=root, entries=entries, skipped=skipped)


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment run depends on, plus where to put it.

    The global seed fans out to every stage through derived per-stage
    seeds; seeds stored inside the nested configs are ignored by the
    pipeline. config_hash() covers all behavior-relevant fields and
    deliberately excludes the seed and the output directory.
    """

    out_dir: Path
    backbone: str = "toy-small"
    seed: int = 9222
    provider_id: str = "stub-9222"
    probe_contents: tuple = ("dog", "tree")
    probe_styles: tuple = ("ClaudeMonet", "VincentVanGogh")
    probe: ProbeConfig = ProbeConfig()
    selection: SelectionPolicy = SelectionPolicy(mode="top_k_divergence", k=1)
    protect: ProtectConfig = ProtectConfig()
    mimicry: MimicryConfig = MimicryConfig()

    def to_dict(self) -> dict:
        def scrub(value):
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, frozenset):
                return sorted(getattr(v, "canonical_name", str(v)) for v in value)
            if isinstance(value, (list, tuple)):
                return [scrub(v) for v in value]
            if hasattr(value, "__dataclass_fields__"):
                return {k: scrub(getattr(value, k))
                        for k in value.__dataclass_fields__}
            return value

        return {k: scrub(getattr(self, k)) for k in self.__dataclass_fields__}

    def config_hash(self) -> str:
        def strip(node):
            if isinstance(node, dict):
                return {k: strip(v) for k, v in sorted(node.items())
                        if k not in ("seed", "out_dir")}
            if isinstance(node, list):
                return [strip(v) for v in node]
            return node

        payload = json.dumps(strip(self.to_dict()), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _probe_prompts(cfg: RunConfig) -> list:
    prompts = []
    for style in cfg.probe_styles:
        for content in cfg.probe_contents:
            prompts.append(ProbePrompt(
                text=f"a {content} in the style of {style}",
                content_word=content,
                style_phrase=style,
            ))
    return prompts


class _Run:
    """One pipeline invocation's paths, markers and timing sink."""

    def __init__(self, manifest: DatasetManifest, cfg: RunConfig):
        self.manifest = manifest
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "markers").mkdir(exist_ok=True)
        self.stamp = {
            "config_hash": cfg.config_hash(),
            "dataset_hash": manifest.content_hash(),
            "seed": cfg.seed,
        }
        self.timings: dict = {}

    # ------------------------------------------------------------- markers

    def _marker(self, stage: str) -> Path:
        return self.out / "markers" / f"{stage}.json"

    def is_done(self, stage: str) -> bool:
        path = self._marker(stage)
        if not path.exists():
            return False
        try:
            return json.loads(path.read_text()) == {**self.stamp, "stage": stage}
        except json.JSONDecodeError:
            return False

    def mark_done(self, stage: str) -> None:
        self._marker(stage).write_text(
            json.dumps({**self.stamp, "stage": stage}, sort_keys=True) + "\n")

    # --------------------------------------------------------------- paths

    def artist_dir(self, artist_id: str) -> Path:
        path = self.out / "artists" / artist_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def protected_paths(self, artist_id: str, n: int, variant: str = "") -> list:
        sub = "protected" if not variant else f"protected_{variant}"
        base = self.artist_dir(artist_id) / sub
        return [base / f"protected_{i:02d}.png" for i in range(n)]

    def generated_paths(self, artist_id: str, arm: str, n: int) -> list:
        base = self.artist_dir(artist_id) / f"generated_{arm}"
        return [base / f"gen_{i:02d}.png" for i in range(n)]

    # -------------------------------------------------------------- stages

    def stage_probe(self) -> None:
        backbone = create_backbone(self.cfg.backbone)
        pcfg = replace(self.cfg.probe, seed=derive_seed(self.cfg.seed, "probe"))
        descriptor = None
        if pcfg.mode == "alignment":
            descriptor = hashed_phrase_descriptor(
                derive_seed(self.cfg.seed, "probe-descriptor"))
        report = run_probe(backbone, _probe_prompts(self.cfg), descriptor, pcfg)
        probe_dir = self.out / "probe"
        probe_dir.mkdir(exist_ok=True)
        report.save_csv(probe_dir / "scores.csv")
        (probe_dir / "meta.json").write_text(json.dumps({
            **self.stamp,
            "mode": report.mode,
            "evaluations": report.evaluations,
            "timesteps": list(report.timesteps),
            "warnings": report.warnings,
            "span_note": report.span_note,
        }, indent=2, sort_keys=True) + "\n")

    def _load_scores(self) -> list:
        rows = []
        with open(self.out / "probe" / "scores.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(LayerScore(
                    layer=CrossAttnLayerId.parse(row["layer"]),
                    style_mean=float(row["style_mean"]),
                    content_mean=float(row["content_mean"]),
                    divergence=float(row["divergence"]),
                    csd_style_sim=(float(row["csd_style_sim"])
                                   if row["csd_style_sim"] else None),
                    csd_content_sim=(float(row["csd_content_sim"])
                                     if row["csd_content_sim"] else None),
                    mode=row["mode"],
                ))
        return rows

    def stage_select(self) -> None:
        ranking = rank_layers(self._load_scores())
        chosen = select(self.cfg.selection, ranking)
        manifest = selection_manifest(self.cfg.selection, ranking, chosen)
        manifest.update(self.stamp)
        (self.out / "probe" / "selection.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def _selected_layers(self, backbone) -> frozenset:
        data = json.loads((self.out / "probe" / "selection.json").read_text())
        return frozenset(backbone.find_layer(name) for name in data["chosen"])

    def stage_protect(self) -> None:
        backbone = create_backbone(self.cfg.backbone)
        backbone.role = "protect"
        layers = self._selected_layers(backbone)
        class_examples = None
        if self.cfg.protect.prior_weight > 0:
            class_examples = generate_class_examples(
                backbone, self.cfg.protect.prior_prompt,
                self.cfg.protect.n_class_examples,
                seed=derive_seed(self.cfg.seed, "protect-class"),
                sample_steps=self.cfg.protect.class_sample_steps,
                cache_dir=self.out / "cache" / "protect_class")
        for entry in self.manifest.entries:
            clean = [load_image(p) for p in entry.image_paths]
            pcfg = replace(
                self.cfg.protect, selected_layers=layers,
                seed=derive_seed(self.cfg.seed, "protect", entry.artist_id))
            start = perf_counter()
            protected, plog = protect(clean, backbone, pcfg,
                                      class_examples=class_examples)
            elapsed = perf_counter() - start
            self.timings.setdefault("protect_s_per_img", {})[entry.artist_id] = (
                elapsed / len(clean))
            for img, path in zip(protected,
                                 self.protected_paths(entry.artist_id, len(protected))):
                save_image(img, path)
                save_sidecar(path, {
                    **protection_sidecar(pcfg, plog, img, version=_version()),
                    **self.stamp,
                })

    def _mimic_ingredients(self):
        mcfg_base = self.cfg.mimicry
        shared_class = None
        if mcfg_base.prior_weight > 0:
            reference = create_backbone(self.cfg.backbone)
            shared_class = generate_class_examples(
                reference, mcfg_base.prior_prompt, mcfg_base.n_class_examples,
                seed=derive_seed(self.cfg.seed, "mimic-class"),
                sample_steps=mcfg_base.class_sample_steps,
                cache_dir=self.out / "cache" / "mimic_class")
        return mcfg_base, shared_class

    def _run_attacker(self, images: list, mcfg: MimicryConfig,
                      shared_class, artist_id: str, arm: str) -> None:
        handle = create_backbone(self.cfg.backbone)
        handle.role = "attacker"
        start = perf_counter()
        finetune(handle, images, mcfg, class_examples=shared_class)
        generated = generate(handle, mcfg)
        self.timings.setdefault("mimic_s", {})[f"{artist_id}/{arm}"] = (
            perf_counter() - start)
        for img, path in zip(generated,
                             self.generated_paths(artist_id, arm, len(generated))):
            save_image(img, path)
            save_sidecar(path, {
                "prompt": img.meta.get("prompt"),
                "template": img.meta.get("template"),
                "arm": arm,
                **self.stamp,
            })

    def stage_mimic(self) -> None:
        mcfg_base, shared_class = self._mimic_ingredients()
        for entry in self.manifest.entries:
            mcfg = replace(mcfg_base,
                           seed=derive_seed(self.cfg.seed, "mimic", entry.artist_id))
            clean = [load_image(p) for p in entry.image_paths]
            protected = [load_image(p, provenance="protected")
                         for p in self.protected_paths(entry.artist_id,
                                                       len(entry.image_paths))]
            self._run_attacker(clean, mcfg, shared_class, entry.artist_id, "clean")
            self._run_attacker(protected, mcfg, shared_class,
                               entry.artist_id, "protected")

    def _report_rows(self, entry, transform: str, provider) -> list:
        n = len(entry.image_paths)
        n_prompts = len(self.cfg.mimicry.prompts)
        clean = [load_image(p) for p in entry.image_paths]
        if transform == "none":
            candidate_paths = self.protected_paths(entry.artist_id, n)
            arm = "protected"
        else:
            candidate_paths = self.protected_paths(entry.artist_id, n, transform)
            arm = f"protected_{transform}"
        protected = [load_image(p, provenance="protected") for p in candidate_paths]
        gen_clean = [load_image(p, provenance="generated")
                     for p in self.generated_paths(entry.artist_id, "clean", n_prompts)]
        gen_arm = [load_image(p, provenance="generated")
                   for p in self.generated_paths(entry.artist_id, arm, n_prompts)]
        attacker = {
            "finetune_steps": self.cfg.mimicry.finetune_steps,
            "learning_rate": self.cfg.mimicry.learning_rate,
            "train_scope": self.cfg.mimicry.train_scope,
            "pseudo_token": self.cfg.mimicry.pseudo_token,
        }
        clean_rep, prot_rep = evaluate_run(
            clean, protected, gen_clean, gen_arm, clean, provider,
            transform=transform, attacker=attacker)
        rows = []
        if transform == "none":
            rows.append(clean_rep.to_dict())
        rows.append(prot_rep.to_dict())
        for row in rows:
            row["artist_id"] = entry.artist_id
            row.update(self.stamp)
        return rows

    def stage_evaluate(self) -> None:
        provider = get_provider(self.cfg.provider_id)
        for entry in self.manifest.entries:
            rows = self._report_rows(entry, "none", provider)
            (self.artist_dir(entry.artist_id) / "report.json").write_text(
                json.dumps(rows, indent=2, sort_keys=True) + "\n")

    def stage_robustness(self) -> None:
        provider = get_provider(self.cfg.provider_id)
        mcfg_base, shared_class = self._mimic_ingredients()
        for entry in self.manifest.entries:
            n = len(entry.image_paths)
            mcfg = replace(mcfg_base,
                           seed=derive_seed(self.cfg.seed, "mimic", entry.artist_id))
            rows = []
            for transform in ROBUSTNESS_TRANSFORMS:
                protected = [load_image(p, provenance="protected")
                             for p in self.protected_paths(entry.artist_id, n)]
                variant_paths = self.protected_paths(entry.artist_id, n, transform)
                for img, path in zip(protected, variant_paths):
                    save_image(apply_transform(img, transform), path)
                variants = [load_image(p, provenance="protected")
                            for p in variant_paths]
                self._run_attacker(variants, mcfg, shared_class,
                                   entry.artist_id, f"protected_{transform}")
                rows.extend(self._report_rows(entry, transform, provider))
            (self.artist_dir(entry.artist_id) / "robustness.json").write_text(
                json.dumps(rows, indent=2, sort_keys=True) + "\n")

    # ------------------------------------------------------------ rollups

    def collect_rows(self) -> list:
        rows = []
        for entry in self.manifest.entries:
            for name in ("report.json", "robustness.json"):
                path = self.out / "artists" / entry.artist_id / name
                if path.exists():
                    rows.extend(json.loads(path.read_text()))
        rows.sort(key=lambda r: (r["artist_id"], r["arm"], r["transform_tag"]))
        return rows

    def write_aggregate(self) -> None:
        rows = self.collect_rows()
        if not rows:
            return
        columns = ["artist_id", "arm", "transform_tag", "psnr_db", "ssim",
                   "lpips", "artfid", "csd_cos", "runtime_s_per_img",
                   "provider_id", "config_hash"]
        with open(self.out / "aggregate.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([
                    "" if row.get(c) is None else
                    (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in columns
                ])
        self._write_summary(rows)

    def _write_summary(self, rows: list) -> None:
        lines = [
            "# Run summary",
            "",
            f"- backbone: {self.cfg.backbone}",
            f"- config hash: {self.stamp['config_hash']}",
            f"- dataset hash: {self.stamp['dataset_hash']}",
            f"- seed: {self.cfg.seed}",
            "- wall-clock numbers: see timings.json (kept out of this file "
            "so identical runs produce identical bytes)",
            "",
            "| artist | arm | transform | PSNR (dB) | SSIM | LPIPS | ArtFID | CSD cos |",
            "|---|---|---|---|---|---|---|---|",
        ]
        def fmt(v):
            return "-" if v is None else f"{v:.4f}"
        for r in rows:
            lines.append(
                f"| {r['artist_id']} | {r['arm']} | {r['transform_tag']} "
                f"| {fmt(r['psnr_db'])} | {fmt(r['ssim'])} | {fmt(r['lpips'])} "
                f"| {fmt(r['artfid'])} | {fmt(r['csd_cos'])} |")
        (self.out / "summary.md").write_text("\n".join(lines) + "\n")


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("styleshield")
    except Exception:
        return "unknown"


def run_pipeline(manifest: DatasetManifest, cfg: RunConfig,
                 stages=None) -> Path:
    """Execute the requested stages (default: all) and write artifacts.

    Completed stages whose marker matches the current config, dataset
    and seed are skipped, which is what makes mid-run failures
    resumable. Requesting a stage whose dependency has neither run nor
    been cached is an error.
    """
    requested = list(STAGES) if stages is None else [s for s in STAGES if s in set(stages)]
    unknown = (set(stages) - set(STAGES)) if stages is not None else set()
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    if not requested:
        raise ValueError("no stages requested")

    run = _Run(manifest, cfg)
    manifest.save(run.out / "manifest.json")
    (run.out / "config.json").write_text(json.dumps(
        {**cfg.to_dict(), "config_hash": run.stamp["config_hash"]},
        indent=2, sort_keys=True) + "\n")

    total_start = perf_counter()
    executed = []
    for stage in requested:
        for dep in _DEPENDENCIES[stage]:
            if dep not in requested and not run.is_done(dep):
                raise ValueError(
                    f"stage {stage!r} needs {dep!r}, which has neither "
                    f"run nor a matching cached marker")
        if run.is_done(stage):
            log.info("stage %s: cached, skipping", stage)
            continue
        log.info("stage %s: running", stage)
        start = perf_counter()
        getattr(run, f"stage_{stage}")()
        run.timings.setdefault("stage_s", {})[stage] = perf_counter() - start
        run.mark_done(stage)
        executed.append(stage)

    if any(s in requested for s in ("evaluate", "robustness")):
        run.write_aggregate()
    run.timings["total_s"] = perf_counter() - total_start
    run.timings["executed_stages"] = executed
    (run.out / "timings.json").write_text(
        json.dumps(run.timings, indent=2, sort_keys=True) + "\n")
    return run.out


_NESTED_CONFIGS = {
    "probe": ProbeConfig,
    "selection": SelectionPolicy,
    "protect": ProtectConfig,
    "mimicry": MimicryConfig,
}


def runconfig_from_dict(data: dict, out_dir=None) -> RunConfig:
    """Build a RunConfig from a plain mapping (parsed YAML or JSON).

    Unknown keys raise (typos should not silently fall back to
    defaults), lists become tuples, and layer names under
    protect.selected_layers are parsed into layer ids. A stored
    config.json round-trips: its config_hash key is ignored.
    """
    data = dict(data or {})
    data.pop("config_hash", None)
    if out_dir is not None:
        data["out_dir"] = out_dir
    if "out_dir" not in data:
        raise ValueError("out_dir is required")

    kwargs = {}
    for key, value in data.items():
        if key not in RunConfig.__dataclass_fields__:
            raise ValueError(f"unknown config key {key!r}")
        if key in _NESTED_CONFIGS:
            cls = _NESTED_CONFIGS[key]
            sub = dict(value)
            for name in sub:
                if name not in cls.__dataclass_fields__:
                    raise ValueError(f"unknown {key} config key {name!r}")
                if isinstance(sub[name], list):
                    sub[name] = tuple(sub[name])
            if key == "protect" and "selected_layers" in sub:
                sub["selected_layers"] = frozenset(
                    CrossAttnLayerId.parse(n) for n in sub["selected_layers"])
            kwargs[key] = cls(**sub)
        elif key == "out_dir":
            kwargs[key] = Path(value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


# --------------------------------------------------------------- compare

_HIGHER_IS_BETTER = {"psnr_db": True, "ssim": True, "lpips": False,
                     "artfid": True, "csd_cos": False}
_COMPARE_METRICS = ("psnr_db", "ssim", "lpips", "artfid", "csd_cos")


def _load_aggregate(run_dir: Path) -> tuple:
    path = Path(run_dir) / "aggregate.csv"
    if not path.exists():
        raise SchemaMismatchError(f"{run_dir} has no aggregate.csv")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaMismatchError(f"{path} is empty")
        return [dict(r) for r in reader], list(reader.fieldnames)


def _mean_metric(rows: list, metric: str):
    values = [float(r[metric]) for r in rows if r.get(metric)]
    return sum(values) / len(values) if values else None


def compare_report(run_dirs: list) -> str:
    """Markdown table of protected-arm metrics across runs.

    Rows are runs (plus the first run's clean baseline); per metric
    the best method value is bold and the runner-up underlined.
    """
    if not run_dirs:
        raise ValueError("compare_report needs at least one run directory")
    schema = None
    methods = []
    baseline = None
    for run_dir in run_dirs:
        rows, fieldnames = _load_aggregate(Path(run_dir))
        if schema is None:
            schema = fieldnames
        elif fieldnames != schema:
            raise SchemaMismatchError(
                f"{run_dir} aggregate schema {fieldnames} differs from {schema}")
        protected = [r for r in rows
                     if r["arm"] == "protected" and r["transform_tag"] == "none"]
        if not protected:
            raise SchemaMismatchError(f"{run_dir} has no protected/none rows")
        methods.append((Path(run_dir).name,
                        {m: _mean_metric(protected, m) for m in _COMPARE_METRICS}))
        if baseline is None:
            clean = [r for r in rows if r["arm"] == "clean"]
            if clean:
                baseline = {m: _mean_metric(clean, m) for m in _COMPARE_METRICS}

    marks = {}
    for metric in _COMPARE_METRICS:
        scored = [(name, vals[metric]) for name, vals in methods
                  if vals[metric] is not None]
        scored.sort(key=lambda kv: kv[1], reverse=_HIGHER_IS_BETTER[metric])
        if scored:
            marks[(scored[0][0], metric)] = "best"
        if len(scored) > 1:
            marks[(scored[1][0], metric)] = "second"

    def cell(name, value, metric):
        if value is None:
            return "-"
        text = f"{value:.4f}"
        mark = marks.get((name, metric))
        if mark == "best":
            return f"**{text}**"
        if mark == "second":
            return f"<u>{text}</u>"
        return text

    lines = [
        "| method | PSNR (dB) | SSIM | LPIPS | ArtFID | CSD cos |",
        "|---|---|---|---|---|---|",
    ]
    if baseline is not None:
        cells = " | ".join("-" if baseline[m] is None else f"{baseline[m]:.4f}"
                           for m in _COMPARE_METRICS)
        lines.append(f"| unprotected baseline | {cells} |")
    for name, vals in methods:
        cells = " | ".join(cell(name, vals[m], m) for m in _COMPARE_METRICS)
        lines.append(f"| {name} | {cells} |")
    return "\n".join(lines) + "\n"
