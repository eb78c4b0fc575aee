"""Command-line entry points: gen-data, train, eval, inspect, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .audio import load_wav, write_spectrogram_csv, write_spectrogram_pgm
from .config import load_train_config
from .synth import SynthSpec, generate_dataset
from .train import evaluate_checkpoint, load_model, train_model


def _cmd_gen_data(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    manifests = generate_dataset(spec, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    data = Path(args.data)
    val_manifest = data / "val.csv"
    result = train_model(cfg, data / "train.csv",
                         val_manifest if val_manifest.exists() else None,
                         args.out, log_path=args.log)
    print(f"best val top-1: {result.best_val_top1:.2f} (epoch {result.best_epoch})")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.ckpt, Path(args.data) / "val.csv",
                                 batch_size=args.batch_size)
    payload = report.as_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_inspect(args) -> int:
    model = load_model(args.ckpt)
    clip = load_wav(args.wav)
    traces = model.forward_all_passes(clip)
    out_dir = Path(args.dump)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = {"passes": [], "mean_probs": None}
    probs = []
    for trace in traces:
        write_spectrogram_pgm(trace.spec, out_dir / f"spectrogram_pass{trace.pass_index}.pgm")
        write_spectrogram_csv(trace.spec, out_dir / f"spectrogram_pass{trace.pass_index}.csv")
        entry = {"pass": trace.pass_index, "hop_ms": trace.hop_ms,
                 "logits": trace.logits.tolist(),
                 "segments": list(trace.segments.intervals) if trace.segments else None}
        report["passes"].append(entry)
        p = np.exp(trace.logits - trace.logits.max())
        probs.append(p / p.sum())
        if trace.saliency is not None:
            _dump_saliency(trace, model.cfg, out_dir)
    mean_probs = np.mean(probs, axis=0)
    report["mean_probs"] = mean_probs.tolist()
    report["top1"] = int(np.argmax(mean_probs))
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"wrote {out_dir}/report.json and per-pass dumps")
    return 0


def _dump_saliency(trace, cfg, out_dir: Path) -> None:
    from .autodiff import interp_columns
    t_frames = trace.spec.n_frames
    values = interp_columns(trace.saliency.values, t_frames)
    selected = np.zeros(t_frames, dtype=bool)
    frame_s = trace.spec.hop_ms / 1000.0
    for start, end in trace.segments.intervals:
        lo = int(np.floor(start / frame_s))
        hi = min(t_frames, int(np.ceil(end / frame_s)) + 1)
        selected[lo:hi] = True
    lines = ["frame_index,time_s,saliency,selected"]
    for i in range(t_frames):
        lines.append(f"{i},{i * frame_s:.6f},{values[i]:.6f},{int(selected[i])}")
    (out_dir / f"saliency_pass{trace.pass_index}.csv").write_text("\n".join(lines) + "\n")
    seg_lines = ["start_s,end_s"]
    seg_lines += [f"{s:.6f},{e:.6f}" for s, e in trace.segments.intervals]
    (out_dir / f"segments_pass{trace.pass_index}.csv").write_text("\n".join(seg_lines) + "\n")


def _cmd_gradcheck(args) -> int:
    from .gradsuite import full_suite, randomized_primitive_sweep
    start = time.time()
    failed = 0
    for check in full_suite():
        status = "ok" if check.passed else "FAIL"
        print(f"{check.name:<24} max rel err {check.max_rel_err:.3e} "
              f"(tol {check.tolerance:.0e})  {status}")
        failed += 0 if check.passed else 1
    if args.full:
        worst = randomized_primitive_sweep(trials=100)
        status = "ok" if worst < 1e-5 else "FAIL"
        print(f"{'randomized_sweep(100)':<24} max rel err {worst:.3e} (tol 1e-05)  {status}")
        failed += 0 if worst < 1e-5 else 1
    print(f"total {time.time() - start:.1f}s, {failed} failure(s)")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="playback",
        description="Iterative audio classification with saliency-driven replay")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic micro-gap dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a dataset directory")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="dataset directory with train.csv/val.csv")
    p.add_argument("--out", required=True, help="checkpoint output path (.pibk)")
    p.add_argument("--log", default=None, help="metrics CSV path (default: next to checkpoint)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's val split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="dump saliency, segments, logits and spectrograms")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--dump", required=True, help="output directory")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--full", action="store_true",
                   help="also run the 100-trial randomized primitive sweep")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
