"""
Command-line entry points for local masked reconstruction.

    lomar pretrain    --config f.cfg --set section.key=value ... --out dir
    lomar reconstruct --ckpt c --image p --out dir
    lomar bench       --out dir
    lomar locality    --ckpt c --image p --layer i
    lomar probe       --ckpt c --data dir
    lomar gradcheck
    lomar ablate      --axis mask_ratio|window --config f.cfg --steps n --out dir

Every command writes run.log and its resolved config into the output
directory, and exits 0 only when nothing reported an error.
"""

import argparse
from pathlib import Path
import sys
from typing import Callable, Dict, List, Optional, Sequence

from src.utils.logging_config import get_logger, metrics_collector, setup_logging
from src.utils.error_handling import ContractError, ErrorHandler, ParameterError, exit_codes

# === CONFIG ===
from config.settings import (
    DEFAULT_OUTPUT_DIR, LOG_LEVEL, LOMAR_THREADS, METRICS_FILE_NAME,
    RESOLVED_CONFIG_NAME, RUN_LOG_NAME
)

from src.models.models import Image, TrainConfig, WindowSpec
from src.services.ablation_service import mask_ratio_sweep, window_sweep, write_ablation_csv
from src.services.bench_service import BenchConfig, run_scaling_bench, write_scaling_csv
from src.services.checkpoint_service import load_checkpoint
from src.services.config_service import dump_config, parse_config
from src.services.corpus_service import LabeledImage, images_of, load_directory, synthetic_corpus
from src.services.gradcheck_suite import run_suite
from src.services.locality_service import (
    attention_locality, locality_survey, summarize, uniform_baseline, write_locality_csv
)
from src.services.metrics_service import MetricsStream
from src.services.patchify_service import load_image, patchify
from src.services.probe_service import ProbeConfig, linear_probe
from src.services.render_service import render_reconstruction
from src.services.sampler_service import make_mask_plan, sample_windows
from src.services.trainer_service import Trainer, model_from_checkpoint
from src.models.weights import build_model
from src.core.numerics import precision
from src.utils.seeding import derive_rng

import numpy as np

logger = get_logger(__name__)


# === HELPERS ===

def _prepare_output(args) -> Path:
    out = Path(getattr(args, 'out', None) or DEFAULT_OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, cfg: TrainConfig) -> Path:
    path = out / RESOLVED_CONFIG_NAME
    path.write_text(dump_config(cfg), encoding='utf-8')
    logger.info(f"📝 Resolved config → {path}")
    return path


def _config_from_args(args) -> TrainConfig:
    text = Path(args.config).read_text(encoding='utf-8') if getattr(args, 'config', None) else ""
    return parse_config(text, getattr(args, 'set', None) or [])


def _dataset(cfg: TrainConfig, data_dir: Optional[str]) -> List[LabeledImage]:
    if data_dir:
        items, _ = load_directory(data_dir)
        return items
    data = cfg.data
    return synthetic_corpus(data.corpus_size, data.image_size, data.channels, data.num_classes, cfg.seed)


def _image(cfg: TrainConfig, image_path: Optional[str]) -> Image:
    if image_path:
        return load_image(image_path)
    data = cfg.data
    return synthetic_corpus(1, data.image_size, data.channels, data.num_classes, cfg.seed)[0].image


def _window_and_plan(cfg: TrainConfig, img: Image, window: Optional[str]):
    grid = patchify(img, cfg.data.patch_size, cfg.data.normalize_per_channel)
    rng = derive_rng(cfg.seed, 'windows', 0)
    if window:
        try:
            top, left = (int(v) for v in window.split(','))
        except ValueError:
            raise ParameterError(f"--window expects top,left, got {window!r}")
        spec = WindowSpec(top, left, cfg.sampler.k)
    else:
        spec = sample_windows(grid.grid_h, grid.grid_w, cfg.sampler.k, 1, rng)[0]
    spec.check_fits(grid.grid_h, grid.grid_w)
    plan = make_mask_plan(cfg.sampler.k, cfg.sampler.mask_ratio, derive_rng(cfg.seed, 'masks', 0))
    return grid, spec, plan


# === COMMANDS ===

def cmd_pretrain(args, out: Path) -> int:
    if args.resume:
        if args.set or args.config:
            raise ParameterError("--resume takes its config from the checkpoint; drop --config/--set")
        ckpt = load_checkpoint(args.resume)
        cfg = parse_config(ckpt.config_text)
        _write_resolved(out, cfg)
        items = _dataset(cfg, args.data)
        trainer = Trainer.from_checkpoint(ckpt, images_of(items), threads=args.threads)
    else:
        cfg = _config_from_args(args)
        _write_resolved(out, cfg)
        items = _dataset(cfg, args.data)
        trainer = Trainer(cfg, images_of(items), threads=args.threads)

    with MetricsStream(out / METRICS_FILE_NAME, append=bool(args.resume)) as stream:
        rows = trainer.run(steps=args.steps, metrics=stream, checkpoint_dir=out / "checkpoints")
    if rows:
        print(f"final step {rows[-1][0]}  loss {rows[-1][2]:.6f}")
    return 0


def cmd_reconstruct(args, out: Path) -> int:
    model, cfg = model_from_checkpoint(load_checkpoint(args.ckpt))
    _write_resolved(out, cfg)
    img = _image(cfg, args.image)
    _, spec, plan = _window_and_plan(cfg, img, args.window)
    result = render_reconstruction(model, img, spec, plan, out / "reconstruction.png", cfg.encoder,
                                   cfg.data.patch_size, cfg.data.normalize_per_channel,
                                   visible_copy=args.visible_copy)
    print(f"{result.path} ({result.width}×{result.height}, window {spec.top},{spec.left}, "
          f"{len(plan.masked)} masked)")
    return 0


def cmd_bench(args, out: Path) -> int:
    bench = BenchConfig(
        grid_sides=tuple(args.grids),
        window_side=args.window,
        n_views=args.views,
        repetitions=args.reps,
        parallel=args.parallel,
    )
    report = run_scaling_bench(bench)
    path = write_scaling_csv(report, out / "scaling.csv")
    print(f"{path}: global exponent {report.global_exponent:.2f}, "
          f"local R² over views {report.local_views_r2:.3f}")
    return 0


def cmd_locality(args, out: Path) -> int:
    model, cfg = model_from_checkpoint(load_checkpoint(args.ckpt))
    _write_resolved(out, cfg)
    if args.survey:
        data = cfg.data
        items = synthetic_corpus(args.survey, data.image_size, data.channels, data.num_classes, cfg.seed + 1)
        grids = [patchify(item.image, data.patch_size, data.normalize_per_channel) for item in items]
        fraction, stats = locality_survey(model, grids, cfg.encoder, cfg.sampler.mask_ratio, args.layer, cfg.seed)
        path = write_locality_csv(stats, out / "locality.csv")
        print(f"{path}: {fraction:.1%} of targets beat uniform attention; {summarize(stats)}")
        return 0

    img = _image(cfg, args.image)
    grid, spec, plan = _window_and_plan(cfg, img, args.window)
    if not plan.masked:
        raise ContractError("locality needs a non-zero mask ratio")
    target = args.target if args.target is not None else plan.masked[len(plan.masked) // 2]
    stat = attention_locality(model, grid, spec, plan, target, args.layer, cfg.encoder)
    baseline = uniform_baseline(cfg.encoder.k, target)
    path = write_locality_csv([stat, baseline], out / "locality.csv")
    print(f"{path}: mean distance {stat.mean_distance:.3f} (uniform {baseline.mean_distance:.3f})")
    return 0


def cmd_probe(args, out: Path) -> int:
    if args.ckpt:
        model, cfg = model_from_checkpoint(load_checkpoint(args.ckpt))
    else:
        cfg = _config_from_args(args)
        dtype = np.dtype(cfg.dtype)
        with precision(dtype):
            model = build_model(cfg.encoder.embed_dim, cfg.data.patch_dim, cfg.encoder, cfg.head_hidden,
                                derive_rng(cfg.seed, 'init'), mask_token=cfg.sampler.mask_token, dtype=dtype)
        logger.info("🎲 Probing a randomly initialised encoder")
    _write_resolved(out, cfg)
    items = _dataset(cfg, args.data)
    acc = linear_probe(model, items, cfg, ProbeConfig(epochs=args.epochs, seed=cfg.seed))
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_gradcheck(args, out: Path) -> int:
    result = run_suite(seed=args.seed)
    table = result.table()
    (out / "gradcheck.txt").write_text(table + "\n", encoding='utf-8')
    print(table)
    return 0 if result.passed else 1


def cmd_ablate(args, out: Path) -> int:
    cfg = _config_from_args(args)
    _write_resolved(out, cfg)
    items = _dataset(cfg, args.data)
    if args.axis == 'mask_ratio':
        rows = mask_ratio_sweep(cfg, items, args.steps, threads=args.threads)
    else:
        rows = window_sweep(cfg, items, args.steps, threads=args.threads)
    path = write_ablation_csv(rows, out / f"ablation_{args.axis}.csv")
    print(f"{path}: {len(rows)} runs")
    return 0


COMMANDS: Dict[str, Callable] = {
    'pretrain': cmd_pretrain,
    'reconstruct': cmd_reconstruct,
    'bench': cmd_bench,
    'locality': cmd_locality,
    'probe': cmd_probe,
    'gradcheck': cmd_gradcheck,
    'ablate': cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    codes = ", ".join(f"{code} {name}" for name, code in exit_codes())
    parser = argparse.ArgumentParser(prog="lomar", description="Local masked reconstruction toolkit",
                                     epilog=f"exit codes: 0 ok, 1 other, {codes}")
    parser.add_argument('--log-level', default=LOG_LEVEL)
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, config=True, data=False):
        p.add_argument('--out', default=None, help="output directory")
        if config:
            p.add_argument('--config', default=None, help="run config file")
            p.add_argument('--set', action='append', metavar='SECTION.KEY=VALUE', help="config override")
        if data:
            p.add_argument('--data', default=None, help="<dir>/<class>/*.png|*.lmt (default: synthetic corpus)")
        p.add_argument('--threads', type=int, default=LOMAR_THREADS)

    p = sub.add_parser('pretrain', help="pretrain with local masked reconstruction")
    common(p, data=True)
    p.add_argument('--steps', type=int, default=None, help="total optimizer steps")
    p.add_argument('--resume', default=None, help="checkpoint to continue from")

    p = sub.add_parser('reconstruct', help="render a four-panel reconstruction")
    common(p, config=False)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--image', default=None)
    p.add_argument('--window', default=None, help="top,left on the patch grid")
    p.add_argument('--visible-copy', action='store_true', help="paste visible patches into the reconstruction")

    p = sub.add_parser('bench', help="local vs global attention cost")
    common(p, config=False)
    p.add_argument('--grids', type=int, nargs='+', default=[8, 14, 28])
    p.add_argument('--window', type=int, default=7)
    p.add_argument('--views', type=int, default=4)
    p.add_argument('--reps', type=int, default=5)
    p.add_argument('--parallel', action='store_true', help="run repetitions on separate threads")

    p = sub.add_parser('locality', help="attention locality around masked targets")
    common(p, config=False)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--image', default=None)
    p.add_argument('--layer', type=int, default=0)
    p.add_argument('--window', default=None)
    p.add_argument('--target', type=int, default=None, help="masked window-local index")
    p.add_argument('--survey', type=int, default=0, help="survey this many synthetic images instead")

    p = sub.add_parser('probe', help="frozen-encoder linear probe")
    common(p, data=True)
    p.add_argument('--ckpt', default=None, help="omit to probe a random-init encoder")
    p.add_argument('--epochs', type=int, default=200)

    p = sub.add_parser('gradcheck', help="finite-difference gradient suite")
    common(p, config=False)
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('ablate', help="mask-ratio or window-size sweep")
    common(p, data=True)
    p.add_argument('--axis', choices=['mask_ratio', 'window'], default='mask_ratio')
    p.add_argument('--steps', type=int, default=200)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = _prepare_output(args)
    setup_logging(log_level=args.log_level, log_file=str(out / RUN_LOG_NAME))
    logger.info(f"🚀 lomar {args.command} → {out}", extra={'command': args.command})

    try:
        status = COMMANDS[args.command](args, out)
    except Exception as e:
        status, diagnostic = ErrorHandler.handle_cli_error(e, args.command, {'out': str(out)})
        print(diagnostic, file=sys.stderr)
    finally:
        metrics_collector.log_metrics_summary()
        metrics_collector.reset_metrics()
    return status


if __name__ == "__main__":
    sys.exit(main())
