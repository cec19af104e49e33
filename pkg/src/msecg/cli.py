"""Command-line entry point: ``msecg {synth,prepare,train,eval,infer,plot,bench-scan}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, data, dsp, metrics, plots
from .config import PROFILES, RunConfig, _parse_value, resolve, set_path
from .model import MSECG, msecg_forward
from .train import CheckpointError, EpochLog, load_checkpoint, save_checkpoint, train

log = logging.getLogger("msecg")

EXPECTED_ERRORS = (data.DataError, dsp.ParameterError, dsp.ConfigurationError, CheckpointError,
                   FileNotFoundError, ValueError)


class CommandError(RuntimeError):
    pass


# -- shared helpers -----------------------------------------------------------

def _out_dir(args) -> Path:
    raw = args.out_dir or os.environ.get("MSECG_OUT_DIR")
    if not raw:
        raise CommandError("--out-dir is required (or set MSECG_OUT_DIR)")
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_config(args) -> RunConfig:
    overrides: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise CommandError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_path(overrides, key, _parse_value(value))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    profile = args.profile or os.environ.get("MSECG_PROFILE") or "desk"
    config_path = args.config or os.environ.get("MSECG_CONFIG")
    return resolve(profile, config_path, overrides)


def _write_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.json").write_text(cfg.to_json() + "\n")


def _noise_bank_for(cfg: RunConfig, lr_rate: float, noise_manifest: str | None):
    if noise_manifest:
        bank = data.load_noise_bank(Path(noise_manifest))
    else:
        bank = {k: [data.synth_noise(k, cfg.seed, cfg.data.noise_duration, cfg.dsp.noise_rate)]
                for k in dsp.NOISE_KINDS}
    return {k: [dsp.resample(s, lr_rate) if s.sample_rate != lr_rate else s for s in v]
            for k, v in bank.items()}


def _select_split(pairs, split: str):
    if split == "all":
        return list(pairs)
    tr, va, te = data.split_folds(pairs)
    return {"train": tr, "val": va, "test": te}[split]


def _load_model(path: str) -> MSECG:
    return load_checkpoint(Path(path)).to_model()


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    n = args.records if args.records is not None else cfg.data.synthetic_records
    recs = data.synth_records(cfg.seed, n, cfg.data.duration, cfg.data.fs, cfg.model.leads)
    manifest = data.save_records(out, recs)
    _write_config(out, cfg)
    print(f"wrote {n} synthetic records to {manifest}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _run_config(args)
    manifest = Path(args.input)
    if not manifest.is_file():
        raise CommandError(f"input manifest not found: {manifest}")
    out = _out_dir(args)
    records = data.load_dataset(manifest)
    if not records:
        raise CommandError(f"no records in {manifest}")
    lr_rate = records[0].signal.sample_rate / cfg.dsp.factor
    bank = _noise_bank_for(cfg, lr_rate, args.noise_manifest) if cfg.dsp.p_noise > 0 else None
    pairs = data.make_pairs(records, cfg.dsp, cfg.seed, noise_bank=bank, threads=cfg.threads)
    data.save_pairs(out, pairs)
    if bank:
        data.save_noise_bank(out / "noise", bank)
    provenance = {
        "input": str(manifest), "seed": cfg.seed, "config": cfg.to_dict(),
        "corruption": {p.record_id: p.corruption.to_dict() for p in pairs},
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    _write_config(out, cfg)
    noisy = sum(not p.corruption.is_clean for p in pairs)
    print(f"prepared {len(pairs)} pairs ({noisy} noisy) in {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    pairs = data.load_pairs(Path(args.data))
    tr, va, _ = data.split_folds(pairs)
    if not tr or not va:
        raise CommandError("training needs non-empty train (folds 1-8) and validation (fold 9) splits")
    out = _out_dir(args)
    _write_config(out, cfg)
    bank = None
    noise_manifest = Path(args.data) / "noise" / "manifest.jsonl"
    if cfg.dsp.p_noise > 0 and noise_manifest.is_file():
        bank = data.load_noise_bank(noise_manifest)
    model = MSECG(cfg.model)
    history: list[EpochLog] = []
    best = train(tr, va, model, cfg.train, noise_bank=bank, dsp_cfg=cfg.dsp, history=history)
    save_checkpoint(out / "best.ckpt", best)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", "lr", "train_loss", "val_mse", "note"])
        for e in history:
            w.writerow([e.epoch, e.stage, repr(e.lr), repr(e.train_loss), repr(e.val_mse), ""])
        row = next(e for e in history if e.stage == best.stage and e.epoch == best.epoch)
        w.writerow([row.epoch, row.stage, repr(row.lr), repr(row.train_loss), repr(row.val_mse), "best"])
    print(f"best: stage {best.stage} epoch {best.epoch} val_mse {best.val_mse:.6g} -> {out / 'best.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    if not args.checkpoint and args.baseline != "li":
        raise CommandError("eval needs --checkpoint or --baseline li")
    pairs = _select_split(data.load_pairs(Path(args.data)), args.split)
    if not pairs:
        raise CommandError(f"split {args.split!r} is empty")
    out = _out_dir(args)
    _write_config(out, cfg)
    reports = []
    ratio = round(pairs[0].hr.sample_rate / pairs[0].lr.sample_rate)
    if args.baseline == "li" or args.checkpoint:
        reports.append(metrics.evaluate(metrics.li_predictor(ratio), pairs, "LI", cfg.threads))
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        reports.append(metrics.evaluate(lambda x: model.predict(x), pairs, "MSECG", cfg.threads))
    for r in reports:
        stem = r.method.lower()
        (out / f"report_{stem}.json").write_text(r.to_json() + "\n")
        (out / f"report_{stem}.csv").write_text(r.to_csv())
    table = metrics.comparison_table(reports)
    (out / "comparison.md").write_text(table)
    print(table, end="")
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    leads = model.config.leads
    raw = Path(args.input)
    if not raw.is_file():
        raise CommandError(f"input raster not found: {raw}")
    size = raw.stat().st_size // data.RASTER_DTYPE.itemsize
    if size % leads:
        raise CommandError(f"{raw} holds {size} floats, not a multiple of {leads} leads")
    lr = dsp.Signal(data.read_raster(raw, leads, size // leads), args.rate)
    hr = msecg_forward(lr, model)
    out = _out_dir(args)
    data.write_raster(out / "recon.f32", hr.data)
    (out / "recon.json").write_text(json.dumps(
        {"leads": hr.channels, "length": hr.length, "sample_rate": hr.sample_rate,
         "input": str(raw), "checkpoint": args.checkpoint}, indent=2) + "\n")
    print(f"wrote {hr.channels}x{hr.length} reconstruction to {out / 'recon.f32'}")
    return 0


def cmd_plot(args) -> int:
    pairs = data.load_pairs(Path(args.data))
    match = [p for p in pairs if p.record_id == args.record] if args.record else pairs[:1]
    if not match:
        raise CommandError(f"record {args.record!r} not in {args.data}")
    pair = match[0]
    ratio = round(pair.hr.sample_rate / pair.lr.sample_rate)
    gt = pair.hr.data
    li = metrics.li_predictor(ratio)(pair.lr.data)
    if args.checkpoint:
        pred, label = _load_model(args.checkpoint).predict(pair.lr.data), "MSECG"
    elif args.oracle:
        pred, label = gt, "GT (oracle)"
    else:
        raise CommandError("plot needs --checkpoint or --oracle")
    lead = args.lead
    if not 0 <= lead < gt.shape[0]:
        raise CommandError(f"lead {lead} out of range")
    fs = pair.hr.sample_rate
    n0 = int(args.start * fs)
    n1 = gt.shape[1] if args.window is None else min(gt.shape[1], n0 + int(args.window * fs))
    sl = slice(n0, n1)
    t = np.arange(gt.shape[1])[sl] / fs
    notes = [f"MAD({label}) = {metrics.mad(pred[lead, sl], gt[lead, sl]):.4g}",
             f"MAD(LI) = {metrics.mad(li[lead, sl], gt[lead, sl]):.4g}"]
    svg = plots.render_svg(t, {"GT": gt[lead, sl], "LI": li[lead, sl], label: pred[lead, sl]},
                           title=f"{pair.record_id} lead {lead}", annotations=notes)
    out = _out_dir(args)
    path = out / f"{pair.record_id}_lead{lead}.svg"
    path.write_text(svg)
    print(f"wrote {path}")
    return 0


def cmd_bench_scan(args) -> int:
    cfg = _run_config(args)
    lengths = [int(v) for v in args.lengths.split(",")]
    rows, worst = bench.bench_scan(lengths, reps=args.reps, d_inner=args.d_inner,
                                   d_state=args.d_state, seed=cfg.seed)
    out = _out_dir(args)
    _write_config(out, cfg)
    with open(out / "bench_scan.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["impl", "length", "median_s", "reps"])
        for r in rows:
            w.writerow([r.impl, r.length, repr(r.median_s), r.reps])
    summary = {"max_abs_diff": worst, "fits": {}}
    for impl in ("sequential", "parallel"):
        sub = [r for r in rows if r.impl == impl]
        if len(sub) >= 2:
            a, b, r2 = bench.linear_fit_r2([r.length for r in sub], [r.median_s for r in sub])
            summary["fits"][impl] = {"slope_s_per_step": a, "intercept_s": b, "r2": r2}
    (out / "bench_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    if worst > 1e-10:
        raise CommandError(f"parallel and sequential scans disagree by {worst:.3g}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (merged over the profile)")
    common.add_argument("--profile", choices=PROFILES, help="named base config (default: desk)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--threads", type=int, help="worker cap for per-segment parallelism")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. model.D=32 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="msecg", description="ECG super-resolution with MSECG")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic 500 Hz records + manifest")
    s.add_argument("--records", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", parents=[common], help="filter, decimate and corrupt records into pairs")
    s.add_argument("--input", required=True, help="record manifest (JSON lines)")
    s.add_argument("--noise-manifest", help="noise recordings labelled with kind BW/MA/EM")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="two-stage training")
    s.add_argument("--data", required=True, help="prepared pair directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics report for a checkpoint or baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--baseline", choices=("li",))
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="reconstruct a raw LR raster")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="channel-major float32 raster")
    s.add_argument("--rate", type=float, default=50.0, help="input sample rate in Hz")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("plot", parents=[common], help="SVG overlay of GT, LI and model output")
    s.add_argument("--data", required=True)
    s.add_argument("--record")
    s.add_argument("--checkpoint")
    s.add_argument("--oracle", action="store_true", help="plot GT in place of a model")
    s.add_argument("--lead", type=int, default=0)
    s.add_argument("--start", type=float, default=0.0, help="window start in s")
    s.add_argument("--window", type=float, default=None, help="window length in s")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("bench-scan", parents=[common], help="time sequential vs parallel scan")
    s.add_argument("--lengths", default=",".join(str(2**k) for k in range(10, 17)))
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--d-inner", type=int, default=8)
    s.add_argument("--d-state", type=int, default=16)
    s.set_defaults(func=cmd_bench_scan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
