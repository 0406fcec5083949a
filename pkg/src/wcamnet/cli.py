"""Command line entry point: ``wcamnet {gen-data,train,infer,eval,ablate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Log verbosity comes from ``WCAMNET_LOG`` (DEBUG, INFO, WARNING; default INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import DESK_PRESET, TrainConfig, read_config_file
from .data import DataError, PRESETS, generate_dataset, load_dataset, read_image, write_image
from .network import DerainNet, NetConfig, count_parameters
from .optim import NonFiniteGradient
from .plotting import plot_ablation, plot_eval, plot_loss_curve
from .tensor import Tensor
from .train import NumericError, evaluate, split, summarize, train
from .wavelet import SUBBANDS

log = logging.getLogger("wcamnet")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
RECORD_COLUMNS = ("name", "psnr", "ssim", "rainy_psnr", "rainy_ssim")
ABLATIONS = [
    ("Ours, w/o attention, w/o fusion", dict(attention_enabled=False, fusion_enabled=False)),
    ("Ours, w/o fusion", dict(fusion_enabled=False)),
    ("Ours, w/o attention", dict(attention_enabled=False)),
    ("Ours", {}),
]
ABLATION_KEYS = {"w/o-attention": "Ours, w/o attention", "w/o-fusion": "Ours, w/o fusion",
                 "w/o-both": "Ours, w/o attention, w/o fusion", "none": "Ours"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config
def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (flags override it)")
    p.add_argument("--desk", action="store_true", help="small CPU preset (c0=8, n_res=1, 32px crops)")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None,
                           type=lambda s: s.lower() in ("1", "true", "yes", "on"))
        else:
            p.add_argument(flag, dest=f.name, default=None)


def build_config(args) -> TrainConfig:
    values = {}
    if args.desk:
        values.update(DESK_PRESET)
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _header(config: dict) -> str:
    return "# config " + json.dumps(config, sort_keys=True)


def write_records(path, rows: list, config: dict) -> None:
    with open(path, "w") as fh:
        fh.write(_header(config) + "\n")
        fh.write("# " + "\t".join(RECORD_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join([r["name"]] + [f"{r[k]:.6f}" for k in RECORD_COLUMNS[1:]]) + "\n")


def format_table(rows: list, label_key: str = "name") -> str:
    width = max([len(label_key)] + [len(str(r[label_key])) for r in rows])
    head = f"{label_key:<{width}}  {'PSNR':>8}  {'SSIM':>7}  {'rain PSNR':>9}  {'rain SSIM':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r[label_key]:<{width}}  {r['psnr']:8.3f}  {r['ssim']:7.4f}  "
                     f"{r['rainy_psnr']:9.3f}  {r['rainy_ssim']:9.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- commands
def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be positive")
    if args.size % 16:
        raise UsageError("--size must be a multiple of 16")
    generate_dataset(args.out, args.count, args.size, args.preset, args.seed, args.clean_dir)
    print(f"wrote {args.count} pairs to {args.out}")
    return 0


def _train_artifacts(cfg: TrainConfig, history: list) -> None:
    base = Path(cfg.checkpoint)
    log_path = base.with_name(base.stem + ".log.tsv")
    cols = ["epoch", "step", "lr", "loss", "l1", "wssim"]
    mode = "a" if log_path.exists() and history and history[0]["step"] > 1 else "w"
    with open(log_path, mode) as fh:
        if mode == "w":
            fh.write(_header(cfg.to_dict()) + "\n# " + "\t".join(cols) + "\n")
        for r in history:
            fh.write("\t".join(str(r[c]) for c in cols) + "\n")
    rows = [dict(zip(cols, line.split("\t"))) for line in log_path.read_text().splitlines()
            if not line.startswith("#")]
    rows = [{k: float(v) for k, v in r.items()} for r in rows]
    if rows:
        plot_loss_curve(rows, base.with_name(base.stem + ".loss.png"))


def cmd_train(args) -> int:
    cfg = build_config(args)
    if args.ablation:
        label = ABLATION_KEYS[args.ablation]
        overrides = dict(ABLATIONS)[label]
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    log.info("config %s", cfg.to_json())
    result = train(cfg, resume=args.resume, max_steps=args.max_steps)
    _train_artifacts(cfg, result.history)
    final = result.history[-1]["loss"] if result.history else float("nan")
    print(f"trained {len(result.history)} steps, final loss {final:.6f}, "
          f"{count_parameters(result.net.params)} parameters -> {cfg.checkpoint}")
    return 0


def _load_net(path) -> DerainNet:
    config, params, _, _ = load_checkpoint(path)
    return DerainNet(config, params=params)


def _collect_inputs(inputs: list) -> list:
    files = []
    for item in inputs:
        p = Path(item)
        files.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not files:
        raise DataError("no input images given")
    return files


def cmd_infer(args) -> int:
    if args.checkpoint:
        net = _load_net(args.checkpoint)
    elif args.identity:
        net = DerainNet(NetConfig(c0=4, n_res=0))
    else:
        raise UsageError("--checkpoint is required unless --identity is given")
    confidence = 1.0 if args.identity else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in _collect_inputs(args.inputs):
        try:
            image = read_image(path)
        except DataError as exc:
            log.error("%s", exc)
            failures += 1
            continue
        write_image(out / f"{path.stem}.png", net.restore(image, confidence))
        if args.confidence_maps and not args.identity:
            _write_confidence_maps(net, image, out / f"{path.stem}_conf")
    print(f"derained {len(_collect_inputs(args.inputs)) - failures} image(s) into {out}")
    return EXIT_DATA if failures else 0


def _write_confidence_maps(net: DerainNet, image: np.ndarray, directory: Path) -> None:
    _, H, W = image.shape
    ph, pw = -H % 16, -W % 16
    padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    maps = net.confidence_maps(Tensor(padded[None].astype(net.config.dtype))).data[0]
    maps = maps[:, : (H + 1) // 2, : (W + 1) // 2]
    lo, hi = float(maps.min()), float(maps.max())
    scale = (maps - lo) / (hi - lo) if hi > lo else np.zeros_like(maps)
    for ch in range(maps.shape[0]):
        name = f"{'RGB'[ch // 4]}_{SUBBANDS[ch % 4]}.png"
        write_image(directory / name, scale[ch])


def cmd_eval(args) -> int:
    samples = load_dataset(args.dataset)
    if args.checkpoint:
        net = _load_net(args.checkpoint)
        provenance = {"checkpoint": str(args.checkpoint), "net": net.config.to_dict()}
    else:
        net = None
        provenance = {"checkpoint": None, "method": "passthrough"}
    rows = evaluate(net, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "eval.tsv", rows, provenance)
    mean = {"name": "mean", **summarize(rows)}
    table = format_table(rows + [mean])
    (out / "eval.txt").write_text(_header(provenance) + "\n" + table + "\n")
    plot_eval(rows, out / "eval_psnr.png")
    print(table)
    return 0


def run_ablation(cfg: TrainConfig, samples: list, max_steps=None) -> list:
    """Train and score the four attention/fusion variants on identical data and seeds."""
    train_set, val_set = split(samples, cfg.val_fraction)
    scored = val_set or train_set
    rows = []
    for label, overrides in ABLATIONS:
        vcfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides, "checkpoint": ""})
        start = time.perf_counter()
        result = train(vcfg, samples, max_steps=max_steps, save=False)
        seconds = time.perf_counter() - start
        summary = summarize(evaluate(result.net, scored))
        rows.append({"label": label, "name": label, **summary,
                     "params": count_parameters(result.net.params),
                     "final_loss": result.history[-1]["loss"], "seconds": seconds, "result": result})
        log.info("%s: psnr %.3f ssim %.4f", label, summary["psnr"], summary["ssim"])
    full = rows[-1]
    for r in rows[:-1]:
        r["deviation"] = r["psnr"] > full["psnr"]
    full["deviation"] = False
    return rows


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    samples = load_dataset(cfg.dataset)
    rows = run_ablation(cfg, samples, args.max_steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.tsv", "w") as fh:
        fh.write(_header(cfg.to_dict()) + "\n")
        fh.write("# label\tpsnr\tssim\tparams\tfinal_loss\tdeviation\n")
        for r in rows:
            fh.write(f"{r['label']}\t{r['psnr']:.6f}\t{r['ssim']:.6f}\t{r['params']}\t"
                     f"{r['final_loss']:.6f}\t{int(r['deviation'])}\n")
    table = format_table(rows, "label")
    notes = [f"note: '{r['label']}' beats the full model on PSNR at this scale"
             for r in rows if r["deviation"]]
    text = "\n".join([table] + notes)
    (out / "ablation.txt").write_text(_header(cfg.to_dict()) + "\n" + text + "\n")
    plot_ablation(rows, out / "ablation.png")
    print(text)
    return 0


# ---------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wcamnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthesize a paired rainy/clean dataset")
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--out", required=True)
    g.add_argument("--preset", choices=sorted(PRESETS), default="default")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64, help="procedural image size (multiple of 16)")
    g.add_argument("--clean-dir", help="use PNGs from this directory instead of procedural images")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    _add_train_flags(t)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--ablation", choices=sorted(ABLATION_KEYS), default=None)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="derain images")
    i.add_argument("inputs", nargs="+", help="PNG files or directories")
    i.add_argument("--checkpoint")
    i.add_argument("--out", required=True)
    i.add_argument("--confidence-maps", action="store_true", help="also write the 12 maps")
    i.add_argument("--identity", action="store_true", help="force all confidence maps to 1")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM on a paired dataset")
    e.add_argument("--checkpoint", help="omit to score the rainy input itself")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train/evaluate the four attention/fusion variants")
    _add_train_flags(a)
    a.add_argument("--out", required=True)
    a.add_argument("--max-steps", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("WCAMNET_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wcamnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"wcamnet: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, NonFiniteGradient) as exc:
        print(f"wcamnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
