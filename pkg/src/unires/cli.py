"""Command-line entry point.

Subcommands: degrade | train | restore | search | grid | eval | calibrate.
Progress and diagnostics go to stderr; result data goes to stdout or to
files, so pipelines stay clean.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .combine import WeightVector, format_weights, parse_weights
from .config import (RunConfig, dump_config, load_config, resolve_threads,
                     with_overrides)
from .diffusion import SamplerConfig, make_schedule
from .search import (GridSpec, RestoreContext, enumerate_grid, grid_search,
                     preset_weights, reduced_search, tally_weights, PRESETS)

# torch-backed modules (predictors) are imported inside the subcommands
# that need them, so lightweight commands like `grid` start fast


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return with_overrides(cfg, seed=args.seed,
                          threads=resolve_threads(args.threads))


def _schedule(cfg: RunConfig):
    return make_schedule(cfg.schedule_T, cfg.schedule_beta_start,
                         cfg.schedule_beta_end)


def _sampler(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(ddim_steps=cfg.sampler_ddim_steps,
                         eta=cfg.sampler_eta, seed=cfg.seed)


def _grid_spec(cfg: RunConfig) -> GridSpec:
    return GridSpec(gamma=cfg.grid_gamma, delta=cfg.grid_delta,
                    interval=cfg.grid_interval, slots=tuple(cfg.grid_slots),
                    max_negatives=cfg.grid_max_negatives)


def _context(cfg: RunConfig, model) -> RestoreContext:
    return RestoreContext(model=model, sched=_schedule(cfg),
                          sampler=_sampler(cfg),
                          downlq_factor=cfg.downlq_factor,
                          threads=cfg.threads)


def _resolve_weights(text: str) -> WeightVector:
    if text in PRESETS:
        return preset_weights(text)
    return parse_weights(text)


def cmd_degrade(args) -> int:
    import numpy as np
    from .datasets import make_complex_testset, synth_corpus, write_dataset
    from .degrade import TASKS
    cfg = _build_config(args)
    rng = np.random.default_rng(cfg.seed)
    hq = synth_corpus(args.hq_count, cfg.seed + 1, cfg.working_resolution)
    if args.mode == "complex":
        items = make_complex_testset(hq, args.n, rng)
    else:
        from .degrade import apply_recipe, sample_task_recipe
        items = []
        for task in TASKS:
            for _ in range(args.pairs_per_task):
                img = hq[int(rng.integers(len(hq)))]
                recipe = sample_task_recipe(task, rng)
                items.append((apply_recipe(img, recipe), img, recipe, task))
    manifest = write_dataset(items, args.out)
    _log(f"wrote {len(items)} pairs under {args.out}")
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .datasets import load_pairs
    from .degrade import TASKS
    from .predictors import (TinyCondDenoiser, TrainConfig,
                             save_checkpoint, train)
    cfg = _build_config(args)
    pairs = load_pairs(args.data)
    dataset = {t: [] for t in TASKS}
    for lq, hq, kind in pairs:
        if kind in dataset:
            dataset[kind].append((lq, hq))
    import torch
    torch.manual_seed(cfg.seed)  # weight init must be run-to-run identical
    model = TinyCondDenoiser(working_resolution=cfg.working_resolution)
    tc = TrainConfig(steps=args.steps or cfg.train_steps,
                     batch_size=cfg.train_batch_size, lr=cfg.train_lr,
                     lr_min=cfg.train_lr_min or None,
                     task_probs=tuple(cfg.train_task_probs),
                     drop_lq=cfg.train_drop_lq, drop_task=cfg.train_drop_task,
                     pos_neg_prob=cfg.train_pos_neg_prob, seed=cfg.seed)
    _log(f"training {tc.steps} steps (batch {tc.batch_size}, lr {tc.lr})")
    history = train(model, dataset, _schedule(cfg), tc)
    save_checkpoint(model, args.out, schedule_defaults={
        "T": cfg.schedule_T, "beta_start": cfg.schedule_beta_start,
        "beta_end": cfg.schedule_beta_end})
    if args.loss_log:
        lines = [f"{s}\t{l:.6f}" for s, l in zip(history.steps, history.losses)]
        Path(args.loss_log).write_text("\n".join(lines) + "\n")
    _log(f"final loss {history.losses[-1]:.4f}; checkpoint at {args.out}")
    return 0


def cmd_restore(args) -> int:
    from .datasets import read_manifest
    from .images import load_image, save_image
    from .predictors import load_checkpoint
    cfg = _build_config(args)
    model, _ = load_checkpoint(args.model)
    ctx = _context(cfg, model)
    w = _resolve_weights(args.weights)
    if args.input:
        out = ctx.restore(load_image(args.input), w)
        save_image(out, args.output)
        _log(f"restored {args.input} -> {args.output}")
        return 0
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for e in entries:
        out = ctx.restore(load_image(e.lq_path), w)
        save_image(out, out_dir / f"{e.recipe_id}.png")
    _log(f"restored {len(entries)} images into {out_dir}")
    return 0


def _candidates_from_file(path: str) -> list[WeightVector]:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    return [_resolve_weights(l.strip()) for l in lines]


def cmd_search(args) -> int:
    from .datasets import read_manifest
    from .images import load_image, save_image
    from .predictors import load_checkpoint
    from .quality import make_quality_fn
    cfg = _build_config(args)
    model, _ = load_checkpoint(args.model)
    ctx = _context(cfg, model)
    spec = _grid_spec(cfg)
    candidates = _candidates_from_file(args.candidates) if args.candidates else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.input:
        jobs = [("image", args.input)]
    else:
        jobs = [(e.recipe_id, e.lq_path) for e in read_manifest(args.manifest)]
    records = []
    for name, lq_path in jobs:
        lq = load_image(lq_path)
        quality_fn = make_quality_fn(cfg.quality_metric)
        if candidates is not None:
            res = reduced_search(lq, candidates, quality_fn, ctx,
                                 keep_scores=args.keep_scores)
        else:
            res = grid_search(lq, spec, quality_fn, ctx,
                              keep_scores=args.keep_scores)
        save_image(res.best_image, out_dir / f"{name}.png")
        records.append(f"{name}\t{format_weights(res.best_w)}"
                       f"\t{res.best_score:.6f}\t{res.evaluated}")
        if args.keep_scores:
            table = "\n".join(f"{format_weights(w)}\t{s:.6f}" for w, s in
                              zip(candidates or enumerate_grid(spec),
                                  res.per_candidate_scores))
            (out_dir / f"{name}_scores.tsv").write_text(table + "\n")
        _log(f"{name}: best {format_weights(res.best_w)} "
             f"score {res.best_score:.4f} ({res.evaluated} evaluated)")
    (out_dir / "search_results.tsv").write_text("\n".join(records) + "\n")
    return 0


def cmd_grid(args) -> int:
    cfg = _build_config(args)
    grid = enumerate_grid(_grid_spec(cfg))
    print(len(grid))
    if args.list:
        for w in grid:
            print(format_weights(w))
    return 0


def cmd_eval(args) -> int:
    import numpy as np
    from .datasets import read_manifest
    from .images import load_image
    from .quality import psnr, sharpness_noise_proxy, ssim
    cfg = _build_config(args)
    entries = read_manifest(args.manifest)
    rows = []
    for e in entries:
        hq = load_image(e.hq_path)
        if args.restored:
            img = load_image(Path(args.restored) / f"{e.recipe_id}.png")
        else:
            img = load_image(e.lq_path)
        rows.append((e.recipe_id, e.dominating_kind, psnr(img, hq),
                     ssim(img, hq), sharpness_noise_proxy(img).value))
    header = f"{'id':<10}{'kind':<6}{'psnr':>10}{'ssim':>10}{'proxy':>10}"
    print(header)
    for rid, kind, p, s, q in rows:
        print(f"{rid:<10}{kind:<6}{p:>10.3f}{s:>10.4f}{q:>10.4f}")
    mp = float(np.mean([r[2] for r in rows]))
    ms = float(np.mean([r[3] for r in rows]))
    mq = float(np.mean([r[4] for r in rows]))
    print(f"{'mean':<10}{'':<6}{mp:>10.3f}{ms:>10.4f}{mq:>10.4f}")
    if args.out:
        lines = [f"{rid}\t{kind}\t{p:.6f}\t{s:.6f}\t{q:.6f}"
                 for rid, kind, p, s, q in rows]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def cmd_calibrate(args) -> int:
    from .datasets import read_manifest
    from .images import load_image
    from .predictors import load_checkpoint
    from .quality import make_quality_fn
    cfg = _build_config(args)
    model, _ = load_checkpoint(args.model)
    ctx = _context(cfg, model)
    spec = _grid_spec(cfg)
    results = []
    for e in read_manifest(args.manifest):
        lq = load_image(e.lq_path)
        res = grid_search(lq, spec, make_quality_fn(cfg.quality_metric), ctx)
        results.append(res)
        _log(f"{e.recipe_id}: {format_weights(res.best_w)}")
    top = tally_weights(results, top_k=args.top_k)
    text = "\n".join(format_weights(w) for w in top) + "\n"
    Path(args.out).write_text(text)
    _log(f"wrote top-{len(top)} candidate list to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unires",
                                description="multi-expert diffusion restoration")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective configuration and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("degrade", help="generate LQ/HQ datasets")
    common(sp)
    sp.add_argument("--mode", choices=("train", "complex"), default="train")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=160)
    sp.add_argument("--pairs-per-task", type=int, default=50)
    sp.add_argument("--hq-count", type=int, default=48)
    sp.set_defaults(fn=cmd_degrade)

    sp = sub.add_parser("train", help="train the conditional denoiser")
    common(sp)
    sp.add_argument("--data", required=True, help="training manifest")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--loss-log", default=None)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("restore", help="restore with fixed weights")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--weights", required=True,
                    help="SLOT=v,... or a preset name")
    sp.add_argument("--input", default=None)
    sp.add_argument("--output", default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--out", default=None, help="output dir for manifest mode")
    sp.set_defaults(fn=cmd_restore)

    sp = sub.add_parser("search", help="per-image weight search")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--candidates", default=None,
                    help="file of weight vectors for reduced search")
    sp.add_argument("--keep-scores", action="store_true")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("grid", help="enumerate the search grid")
    common(sp)
    sp.add_argument("--list", action="store_true")
    sp.set_defaults(fn=cmd_grid)

    sp = sub.add_parser("eval", help="metrics over a manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--restored", default=None,
                    help="directory of restored images named by recipe id")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("calibrate", help="tally optimal weights on a split")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--top-k", type=int, default=8)
    sp.set_defaults(fn=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_config:
        cfg = load_config(args.config) if getattr(args, "config", None) \
            else RunConfig()
        print(dump_config(cfg), end="")
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    if args.command == "restore" and not (args.input or args.manifest):
        parser.error("restore needs --input or --manifest")
    if args.command == "search" and not (args.input or args.manifest):
        parser.error("search needs --input or --manifest")
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
