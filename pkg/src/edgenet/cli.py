"""Command-line entry point: edge augment | train | infer | eval.

Machine-readable results go to stdout, diagnostics to stderr; exit code
is 0 exactly when no error occurred. All commands are deterministic
given the config file and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backbone, datapipe, evalkit
from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, ContractError, DataError, ShapeError
from .tensor import Tensor

_ERRORS = (CheckpointError, ConfigError, ContractError, DataError, ShapeError, OSError)


def _log(msg: str):
    print(msg, file=sys.stderr)


def cmd_augment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    plan = cfg.plan()
    pairs = datapipe.read_manifest(args.manifest)
    if not pairs:
        raise DataError(f"empty manifest: {args.manifest}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emitted = []
    for img_path, gt_path in pairs:
        image = datapipe.load_image(img_path)
        gt = datapipe.load_gt(gt_path)
        if gt.shape != image.shape[1:]:
            raise DataError(f"gt size {gt.shape} != image size {image.shape[1:]} for {img_path.name}")
        sample = datapipe.Sample(image, gt, img_path.stem)
        emitted.extend(datapipe.expand(sample, plan))
    datapipe.write_samples(emitted, out_dir)
    print(f"sources {len(pairs)}")
    print(f"emitted {len(emitted)}")
    return 0


def _load_training_data(data_arg: str):
    path = Path(data_arg)
    manifest = path / "manifest.txt" if path.is_dir() else path
    samples = datapipe.load_dataset(manifest)
    if not samples:
        raise DataError(f"no samples in manifest: {manifest}")
    return samples


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    samples = _load_training_data(args.data)
    if cfg.resume:
        net = backbone.load(cfg.resume, cfg.network())
        _log(f"resumed from {cfg.resume} at step {net.step_count}")
    else:
        net = backbone.build(cfg.network(), cfg.seed)
    _log(f"network with {net.num_parameters()} parameters, backend-ready")
    optimizer = backbone.Adam(
        net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    ckpt_path = Path(args.checkpoint_out)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else ckpt_path.with_suffix(ckpt_path.suffix + ".loss.csv")
    new_log = not log_path.exists()
    first = last = None
    with open(log_path, "a") as log_fh:
        if new_log:
            log_fh.write("step,total," + ",".join(f"s{i}" for i in range(1, 7)) + ",fused\n")
        for i in range(cfg.steps):
            lo = (i * cfg.batch_size) % len(samples)
            batch = [
                (s.image, s.gt)
                for s in (samples[(lo + j) % len(samples)] for j in range(cfg.batch_size))
            ]
            value, terms = backbone.train_step(net, batch, optimizer, collect_terms=True)
            if first is None:
                first = value
            last = value
            if cfg.log_every and net.step_count % cfg.log_every == 0:
                log_fh.write(
                    f"{net.step_count},{value:.6f}," + ",".join(f"{t:.6f}" for t in terms) + "\n"
                )
                log_fh.flush()
                _log(f"step {net.step_count}: loss {value:.4f}")
            if cfg.checkpoint_every and net.step_count % cfg.checkpoint_every == 0:
                backbone.save(net, ckpt_path)
    backbone.save(net, ckpt_path)
    print(f"steps {net.step_count}")
    print(f"first_loss {first:.6f}")
    print(f"final_loss {last:.6f}")
    return 0


def _pad_to_multiple(image: np.ndarray, factor: int):
    _, h, w = image.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph == 0 and pw == 0:
        return image, h, w
    mode = "reflect" if (ph < h and pw < w) else "edge"
    padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode=mode)
    return padded, h, w


def cmd_infer(args) -> int:
    net = backbone.load(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factor = net.config.max_factor
    for image_path in args.images:
        image = datapipe.load_image(image_path)
        padded, h, w = _pad_to_multiple(image, factor)
        if padded.shape[1:] != (h, w):
            _log(f"warning: {Path(image_path).name} is {h}x{w}, padding to "
                 f"{padded.shape[1]}x{padded.shape[2]} for inference and cropping back")
        out = net.forward(Tensor(padded))
        stem = Path(image_path).stem
        datapipe.save_image_png(out.fused.data[0, :h, :w], out_dir / f"{stem}_fused.png")
        if args.side_maps:
            for idx, side in enumerate(out.sides, start=1):
                datapipe.save_image_png(side.data[0, :h, :w], out_dir / f"{stem}_s{idx}.png")
        _log(f"wrote edge map(s) for {stem}")
    return 0


def _strip_suffix(stem: str) -> str:
    return stem[: -len("_fused")] if stem.endswith("_fused") else stem


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    pred_files = sorted(p for p in pred_dir.glob("*.png") if not p.name.endswith(".gt.png"))
    if not pred_files:
        raise DataError(f"no prediction maps in {pred_dir}")
    preds, gts, missing = [], [], []
    for pred_path in pred_files:
        base = _strip_suffix(pred_path.stem)
        gt_path = gt_dir / f"{base}.png"
        if not gt_path.exists():
            gt_path = gt_dir / f"{base}.gt.png"
        if not gt_path.exists():
            missing.append(f"{base}.png")
            continue
        preds.append(datapipe.load_probability(pred_path))
        gts.append(datapipe.load_gt(gt_path))
    if missing:
        raise DataError("missing gt file(s): " + ", ".join(missing))
    report = evalkit.evaluate(preds, gts, cfg.eval_config())
    if args.report:
        evalkit.export_pr(report, args.report)
        _log(f"wrote PR data to {args.report}")
    print(f"ods {report.ods:.6f}")
    print(f"ois {report.ois:.6f}")
    print(f"ap {report.ap:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edge",
        description="Edge-detection pipeline: augmentation, training, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_aug = sub.add_parser("augment", help="expand a manifest of image/gt pairs")
    p_aug.add_argument("--manifest", required=True, help="tab-separated image/gt path pairs")
    p_aug.add_argument("--out-dir", required=True)
    p_aug.add_argument("--config", default=None)
    p_aug.add_argument("--seed", type=int, default=None)
    p_aug.set_defaults(func=cmd_augment)

    p_train = sub.add_parser("train", help="train on an augmented dataset")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--data", required=True, help="manifest file or directory holding manifest.txt")
    p_train.add_argument("--checkpoint-out", required=True)
    p_train.add_argument("--log", default=None, help="loss log CSV (default: <checkpoint>.loss.csv)")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="write edge-map PNGs for input images")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--out-dir", required=True)
    p_infer.add_argument("--side-maps", action="store_true", help="also write the six side maps")
    p_infer.add_argument("images", nargs="+")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--pred-dir", required=True)
    p_eval.add_argument("--gt-dir", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--report", default=None, help="write the PR curve CSV here")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
