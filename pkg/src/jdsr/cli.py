"""``jdsr`` command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import NumericalError
from .autodiff.checkpoint import CheckpointError
from .cfa import PHASES, CfaError, CfaFrame, PairedImage, RgbImage, bicubic_downsample, bicubic_resize, mosaic
from .config import ConfigError, RunConfig
from .demosaic import METHODS, DemosaicMethod
from .imageio import (DataError, list_images, read_cfa, read_rgb, sha256_file, synthetic_image,
                      update_manifest, write_cfa, write_json, write_rgb)
from .metrics import crop_border, pi_score, psnr, read_score_sidecar, ssim
from .models import Generator, super_resolve
from .train import adversarial_train, load_generator, pretrain_generator

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
REPORT_HEADER = ("dataset", "scale", "method", "protocol", "psnr", "ssim", "pi")
EVAL_METHODS = ("model", "bicubic", "hr")


class UsageError(ConfigError):
    pass


# -- helpers -----------------------------------------------------------------------

def _threads() -> int:
    raw = os.environ.get("JDSR_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"JDSR_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def load_training_pairs(cfg: RunConfig) -> list[PairedImage]:
    """Paired (HR, LR CFA) training images from configured paths or synthetic content."""
    s = cfg.network.scale
    images: list[RgbImage] = []
    for entry in cfg.data.train:
        p = Path(entry)
        paths = list_images(p) if p.is_dir() else [p]
        images += [read_rgb(q) for q in paths]
    if cfg.data.synthetic is not None:
        syn = cfg.data.synthetic
        images += [synthetic_image(syn.size, cfg.seed + i, syn.kind) for i in range(syn.count)]
    if not images:
        raise DataError("no training images found")
    pairs = [PairedImage.from_hr(im, s, cfg.data.phase) for im in images]
    too_small = [i for i, pr in enumerate(pairs) if min(pr.cfa.height, pr.cfa.width) < cfg.trainer.patch_size]
    if too_small:
        raise DataError(f"{len(too_small)} training image(s) are smaller than the {cfg.trainer.patch_size} "
                        f"LR patch at scale {s}")
    return pairs


# -- commands ----------------------------------------------------------------------

def cmd_mosaic(args) -> int:
    img = read_rgb(args.input)
    if args.scale:
        img = bicubic_downsample(img, args.scale)
    cfa = mosaic(img, args.phase)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cfa(out, cfa)
    update_manifest(out.parent, out.name, {
        "command": "mosaic", "phase": args.phase, "scale": args.scale or 1,
        "height": cfa.height, "width": cfa.width,
        "input": str(args.input), "input_sha256": sha256_file(args.input),
        "sha256": sha256_file(out)})
    print(f"wrote {out} ({cfa.height}x{cfa.width}, {args.phase})")
    return EXIT_OK


def cmd_demosaic(args) -> int:
    cfa = read_cfa(args.input, args.phase)
    method = DemosaicMethod(args.method, args.iterations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rgb(out, method(cfa).clamped())
    update_manifest(out.parent, out.name, {
        "command": "demosaic", "method": args.method, "iterations": args.iterations, "phase": cfa.phase,
        "input": str(args.input), "input_sha256": sha256_file(args.input), "sha256": sha256_file(out)})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.dry_run:
        gen = Generator(cfg.network, seed=cfg.seed)
        print(f"config ok ({cfg.digest()[:12]}); generator parameters: {gen.num_parameters()}")
        return EXIT_OK
    pairs = load_training_pairs(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    result = pretrain_generator(pairs, cfg, out_dir=out)
    print(f"pretrain: {cfg.trainer.pretrain_steps} steps, last L1 {_last(result.log, 'l1')}")
    if cfg.trainer.adversarial_steps > 0:
        adv = adversarial_train(pairs, cfg, result.checkpoint, out_dir=out)
        print(f"adversarial: {cfg.trainer.adversarial_steps} steps, last L1 {_last(adv.log, 'l1')}")
    print(f"run written to {out}")
    return EXIT_OK


def _last(log, col: str) -> str:
    return f"{log.rows[-1][col]:.6g}" if log.rows else "n/a"


@dataclass
class ReportRow:
    dataset: str
    scale: int
    method: str
    protocol: str
    psnr: float
    ssim: float
    pi: Optional[float] = None

    def cells(self) -> list[str]:
        return [self.dataset, str(self.scale), self.method, self.protocol, f"{self.psnr:.4f}",
                f"{self.ssim:.6f}", "" if self.pi is None else f"{self.pi:.4f}"]


def _reconstruct(method: str, cfa: CfaFrame, hr: RgbImage, scale: int, gen: Optional[Generator],
                 demosaic: DemosaicMethod) -> np.ndarray:
    if method == "hr":
        return hr.pixels
    if method == "bicubic":
        lr = demosaic(cfa)
        return bicubic_resize(lr, scale * cfa.height, scale * cfa.width).pixels
    return super_resolve(gen, cfa, demosaic)


def evaluate_dataset(dataset_dir, scale: int, method: str, gen: Optional[Generator], cfg: RunConfig,
                     threads: int = 1) -> ReportRow:
    """Score one (dataset, scale, method) cell; images are scored in parallel."""
    dataset_dir = Path(dataset_dir)
    paths = list_images(dataset_dir)
    if not paths:
        raise DataError(f"{dataset_dir}: no images")
    demosaic = DemosaicMethod(cfg.demosaic.init_method, cfg.demosaic.iterations)
    border = scale if cfg.metrics.crop_border else 0

    def score(path):
        pair = PairedImage.from_hr(read_rgb(path), scale, "RGGB")
        sr = _reconstruct(method, pair.cfa, pair.hr, scale, gen, demosaic)
        a, b = crop_border(np.clip(sr, 0, 1), border), crop_border(pair.hr.pixels, border)
        return psnr(a, b), ssim(a, b, luminance=cfg.metrics.ssim_luminance)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        scores = list(pool.map(score, paths))
    pi = None
    sidecar = dataset_dir / f"scores_{method}_x{scale}.csv"
    if sidecar.exists():
        table = read_score_sidecar(sidecar)
        ids = [p.stem for p in paths]
        if all(i in table for i in ids):
            pi = float(np.mean([pi_score(*table[i]) for i in ids]))
    protocol = f"{'y' if cfg.metrics.ssim_luminance else 'rgb'}-crop{border}"
    psnrs = [p for p, _ in scores]
    mean_psnr = math.inf if all(math.isinf(p) for p in psnrs) else float(np.mean([p for p in psnrs if math.isfinite(p)]))
    return ReportRow(dataset_dir.name, scale, method, protocol, mean_psnr,
                     float(np.mean([s for _, s in scores])), pi)


def write_report(path, rows: Sequence[ReportRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow(r.cells())


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    methods = args.methods.split(",")
    bad = [m for m in methods if m not in EVAL_METHODS]
    if bad:
        raise UsageError(f"unknown eval method(s) {bad}; expected {EVAL_METHODS}")
    gens: dict[int, Generator] = {}
    for ck in args.checkpoint or []:
        gen, _ = load_generator(ck)
        gens[gen.cfg.scale] = gen
    if "model" in methods and not gens:
        raise UsageError("method 'model' needs --checkpoint")
    threads = _threads()
    rows = []
    for ds in args.data:
        for s in args.scale:
            for m in methods:
                if m == "model" and s not in gens:
                    raise UsageError(f"no checkpoint for scale {s}; loaded scales {sorted(gens)}")
                rows.append(evaluate_dataset(ds, s, m, gens.get(s), cfg, threads))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(out, rows)
    update_manifest(out.parent, out.name, {
        "command": "eval", "config_sha256": cfg.digest(), "seed": cfg.seed, "scales": args.scale,
        "methods": methods, "datasets": [str(d) for d in args.data],
        "checkpoints": {str(c): sha256_file(c) for c in args.checkpoint or []},
        "sha256": sha256_file(out)})
    print(render_table(rows))
    return EXIT_OK


def cmd_infer(args) -> int:
    gen, meta = load_generator(args.checkpoint)
    scale = gen.cfg.scale
    if args.scale is not None and args.scale != scale:
        raise DataError(f"checkpoint was trained for scale {scale}, but scale {args.scale} was requested")
    cfa = read_cfa(args.input, args.phase)
    run = meta.get("run", {})
    trained_phase = run.get("data", {}).get("phase", "RGGB")
    augmented = run.get("trainer", {}).get("augment", True)
    if cfa.phase != trained_phase and not augmented:
        raise DataError(f"input phase {cfa.phase} differs from the checkpoint's training phase "
                        f"{trained_phase}, and it was trained without flip/rotate augmentation")
    d = run.get("demosaic", {})
    method = DemosaicMethod(d.get("init_method", "bilinear"), d.get("iterations", 2))
    img = super_resolve(gen, cfa, method)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rgb(out, img)
    update_manifest(out.parent, out.name, {
        "command": "infer", "scale": scale, "phase": cfa.phase,
        "input": str(args.input), "input_sha256": sha256_file(args.input),
        "checkpoint": str(args.checkpoint), "checkpoint_sha256": sha256_file(args.checkpoint),
        "sha256": sha256_file(out)})
    print(f"wrote {out} ({img.shape[0]}x{img.shape[1]})")
    return EXIT_OK


def read_report(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise DataError(f"{path}: header must be {','.join(REPORT_HEADER)}")
        return list(reader)


def render_table(rows) -> str:
    """Fixed-width text table for report rows (dicts or ReportRow)."""
    cells = [r.cells() if isinstance(r, ReportRow) else [r[c] for c in REPORT_HEADER] for r in rows]
    widths = [max([len(h)] + [len(c[i]) for c in cells]) for i, h in enumerate(REPORT_HEADER)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()
    out = [line(REPORT_HEADER), line(["-" * w for w in widths])]
    out += [line(c) for c in cells]
    return "\n".join(out)


def cmd_report(args) -> int:
    rows = read_report(args.input)
    if args.format == "csv":
        print(Path(args.input).read_text(), end="")
    else:
        print(render_table(rows))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jdsr", description="Joint demosaicing and super-resolution tools.")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mosaic", help="sample an RGB image through a Bayer CFA")
    m.add_argument("input")
    m.add_argument("--out", required=True)
    m.add_argument("--phase", choices=PHASES, default="RGGB")
    m.add_argument("--scale", type=int, choices=(2, 3, 4), default=None,
                   help="bicubic-downsample by this factor before sampling")
    m.set_defaults(func=cmd_mosaic)

    d = sub.add_parser("demosaic", help="model-based demosaic of a CFA file")
    d.add_argument("input")
    d.add_argument("--out", required=True)
    d.add_argument("--phase", choices=PHASES, default=None, help="override the manifest phase tag")
    d.add_argument("--method", choices=METHODS, default="bilinear")
    d.add_argument("--iterations", type=int, default=2)
    d.set_defaults(func=cmd_demosaic)

    t = sub.add_parser("train", help="pretrain (and optionally adversarially fine-tune) a generator")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--dry-run", action="store_true", help="validate the config and print the parameter count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score reconstructions on HR image folders")
    e.add_argument("--data", nargs="+", required=True, help="dataset directories of HR images")
    e.add_argument("--scale", type=int, nargs="+", choices=(2, 3, 4), default=[2, 3, 4])
    e.add_argument("--checkpoint", action="append", help="generator checkpoint (repeat per scale)")
    e.add_argument("--methods", default="model,bicubic", help=f"comma list from {EVAL_METHODS}")
    e.add_argument("--config", default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", default="report.csv")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="super-resolve one CFA file")
    i.add_argument("input")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--phase", choices=PHASES, default=None)
    i.add_argument("--scale", type=int, choices=(2, 3, 4), default=None,
                   help="expected scale; refused if the checkpoint differs")
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("report", help="pretty-print a report CSV")
    r.add_argument("input")
    r.add_argument("--format", choices=("table", "csv"), default="table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CfaError, CheckpointError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
