"""``stfan`` command-line entry point.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .autograd.ops import ShapeError
from .config import ConfigError, ExperimentConfig, load_config, parse_value

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
REFERENCE_RF = {3: 79, 5: 87, 7: 95, 9: 103}
REFERENCE_PARAMS_M = {3: 4.58, 5: 5.37, 7: 6.56, 9: 8.14}

log = logging.getLogger("stfan")


class UsageError(Exception):
    pass


# ---- argument plumbing -------------------------------------------------------


def _split_overrides(extra: list[str]) -> dict:
    """``--a.b=v`` or ``--a.b v`` pairs; anything else is an unknown flag."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument: {tok}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"override {tok} needs a value")
            key, val = tok[2:], extra[i + 1]
            i += 1
        out[key] = parse_value(val)
        i += 1
    return out


def _config(args, extra: list[str]) -> ExperimentConfig:
    cfg = load_config(args.config, _split_overrides(extra))
    n = getattr(args, "iterations", None)
    if n is not None:
        if n < 1:
            raise ConfigError("train.iterations", f"must be positive, got {n}")
        t = cfg.train
        cfg.train = dataclasses.replace(
            t, iterations=n, checkpoint_interval=min(t.checkpoint_interval, n), eval_interval=min(t.eval_interval, n)
        )
    return cfg


def _machine() -> str:
    import os

    return (
        f"{platform.platform()} | {platform.machine()} | {os.cpu_count()} cpu | "
        f"python {platform.python_version()} | numpy {np.__version__}"
    )


# ---- subcommands ---------------------------------------------------------------


def cmd_train(args, extra) -> int:
    from .model import build_ablation_variant
    from .train import train, training_stream

    cfg = _config(args, extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    model = build_ablation_variant(cfg.model, cfg.model.variant)
    tc = cfg.train

    def progress(it, value):
        if tc.log_interval and (it + 1) % tc.log_interval == 0:
            print(f"iter {it + 1:>6}  loss {value:.6f}", flush=True)

    report = train(model, training_stream(tc), tc, out_dir=out, on_step=progress)
    first = report.mean_loss(first=min(100, len(report.loss_curve)))
    last = report.mean_loss(last=min(100, len(report.loss_curve)))
    final = report.eval_table[-1]
    summary = [
        f"iterations: {tc.iterations}",
        f"parameters: {report.num_parameters}",
        f"train loss (mean of first 100): {first:.6f}",
        f"train loss (mean of last 100): {last:.6f}",
        f"held-out PSNR (measured): {final['mean_psnr']:.3f} dB, blurry input {final['baseline_psnr']:.3f} dB",
        f"held-out SSIM (measured): {final['mean_ssim']:.4f}, blurry input {final['baseline_ssim']:.4f}",
        f"wall time: {report.wall_time_s:.1f} s",
        "deviations:",
        *[f"  - {d}" for d in report.deviations],
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def cmd_infer(args, extra) -> int:
    from .autograd.tensor import no_grad
    from .data.frames import iter_frames, write_frame
    from .train import load_checkpoint

    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    model = load_checkpoint(args.checkpoint)
    d = model.config.divisor
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    n = 0
    with no_grad():
        for index, frame in iter_frames(args.input):
            h, w = frame.shape[:2]
            if h % d or w % d:
                raise UsageError(f"frame extents {(h, w)} are not divisible by {d} (2^num_stages); crop or pad the input")
            B = frame.astype(model.dtype, copy=False)
            if state is None:
                state = model.init_state(B)
            step = model.forward_step(B, state)
            state = step.state
            write_frame(out / f"frame_{index:05d}.png", np.clip(step.R.data, 0.0, 1.0))
            n += 1
    print(f"restored {n} frames -> {out}")
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    from . import fac as fac_mod
    from .verify import format_results, run_all

    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    if args.precision != "float64":
        print(f"note: precision {args.precision} ignored; verification always runs in float64")
    print("precision: float64")
    saved = fac_mod._backward_override
    if args.inject_fac_fault:
        fac_mod._backward_override = _corrupted_fac_backward
    try:
        results = run_all(seed=args.seed, include_model=not args.skip_model)
    finally:
        fac_mod._backward_override = saved
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _corrupted_fac_backward(dout, q, f, k):
    from .fac import fac_backward

    dq, df = fac_backward(dout, q, f, k)
    return dq * 1.01, df


def cmd_ablate(args, extra) -> int:
    from .train import fac_ordering, format_ablation_table, run_ablations, write_ablation_table

    cfg = _config(args, extra)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else cfg.ablate.seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))

    def progress(row):
        print(f"  done {row.name} seed {row.seed}: PSNR {row.mean_psnr:.3f} dB", flush=True)

    rows = run_ablations(cfg.model, cfg.train, seeds=seeds, variants=cfg.ablate.variants, filter_sizes=cfg.ablate.filter_sizes, progress=progress)
    write_ablation_table(rows, out)
    table = format_ablation_table(rows)
    order = fac_ordering(rows, cfg.model.k)
    lines = [table, "full model vs FAC-removal variants (measured, per-seed PSNR wins):"]
    lines += [f"  full > {v}: {o['wins']}/{o['seeds']} seeds" for v, o in order.items()]
    (out / "ablations.txt").write_text("\n".join(lines) + "\n")
    (out / "ordering.json").write_text(json.dumps(order, indent=2))
    print("\n".join(lines))
    return EXIT_OK


def rf_table(cfg: ExperimentConfig, filter_sizes=(3, 5, 7, 9)) -> list[dict]:
    from .model import ModelConfig
    from .receptive_field import measure, probe_extent, rf_model

    rows = []
    for k in filter_sizes:
        mc = ModelConfig(**{**cfg.model.to_dict(), "k": k, "variant": "full"})
        model = rf_model(mc)
        n = probe_extent(model)
        content = measure(model, "content", n)
        full = measure(model, "full", n)
        rows.append(
            {
                "k": k,
                "params": model.num_parameters(),
                "extent": n,
                "analytic_content": content["analytic_width"],
                "measured_content": content["measured_width"],
                "analytic_full": full["analytic_width"],
                "measured_full": full["measured_width"],
                "content_box_match": content["analytic"] == content["measured"],
                "full_box_match": full["analytic"] == full["measured"],
            }
        )
    return rows


def cmd_rf(args, extra) -> int:
    cfg = _config(args, extra)
    t0 = time.perf_counter()
    rows = rf_table(cfg)
    print(f"{'k':>2} {'params':>9} {'analytic':>9} {'measured':>9} {'analytic(full)':>15} {'measured(full)':>15} {'reference (paper) RF':>21}")
    for r in rows:
        print(
            f"{r['k']:>2} {r['params']:>9} {r['analytic_content']:>9} {r['measured_content']:>9} "
            f"{r['analytic_full']:>15} {r['measured_full']:>15} {REFERENCE_RF.get(r['k'], '-'):>21}"
        )
    print("content: filter banks held fixed, so the width reflects the FAC window; full: includes the filter-generation path")
    widths = [r["measured_content"] for r in rows]
    increasing = all(a < b for a, b in zip(widths, widths[1:]))
    params = [r["params"] for r in rows]
    print(f"measured widths strictly increasing in k: {increasing}; parameter count strictly increasing: {all(a < b for a, b in zip(params, params[1:]))}")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rf.json").write_text(json.dumps({"rows": rows, "reference_paper_rf": REFERENCE_RF}, indent=2))
    mismatched = [r["k"] for r in rows if not (r["content_box_match"] and r["full_box_match"])]
    if mismatched:
        print(f"FAILED: analytic and measured receptive fields disagree for k = {mismatched}")
        return EXIT_FAIL
    return EXIT_OK


def bench_fac(h: int, w: int, c: int, k: int, repetitions: int, reference_repetitions: int | None = None, seed: int = 0) -> dict:
    from .fac import fac_backward, fac_forward, fac_reference, fac_reference_backward

    if min(h, w, c, k, repetitions) < 1:
        raise UsageError("extents, k and repetitions must be positive")
    if k % 2 == 0:
        raise UsageError(f"k must be odd, got {k}")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((h, w, c))
    f = rng.standard_normal((h, w, c * k * k))
    g = rng.standard_normal((h, w, c))
    ref_reps = reference_repetitions or max(1, min(repetitions, 3))

    def timed(fn, reps):
        times, out = [], None
        for _ in range(reps):
            t0 = time.perf_counter()
            out = fn()
            times.append(time.perf_counter() - t0)
        return float(np.median(times)), out

    fwd_t, fwd = timed(lambda: fac_forward(q, f, k), repetitions)
    bwd_t, (dq, df) = timed(lambda: fac_backward(g, q, f, k), repetitions)
    rfwd_t, rfwd = timed(lambda: fac_reference(q, f, k), ref_reps)
    rbwd_t, (rdq, rdf) = timed(lambda: fac_reference_backward(g, q, f, k), ref_reps)
    n_out = h * w * c
    return {
        "shape": [h, w, c],
        "k": k,
        "repetitions": repetitions,
        "reference_repetitions": ref_reps,
        "optimized": {"forward_s": fwd_t, "backward_s": bwd_t, "forward_elems_per_s": n_out / fwd_t, "backward_elems_per_s": n_out / bwd_t},
        "reference": {"forward_s": rfwd_t, "backward_s": rbwd_t, "forward_elems_per_s": n_out / rfwd_t, "backward_elems_per_s": n_out / rbwd_t},
        "speedup_forward": rfwd_t / fwd_t,
        "speedup_backward": rbwd_t / bwd_t,
        "max_abs_diff": float(max(np.abs(fwd - rfwd).max(), np.abs(dq - rdq).max(), np.abs(df - rdf).max())),
        "machine": _machine(),
    }


def cmd_bench(args, extra) -> int:
    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    res = bench_fac(args.h, args.w, args.c, args.k, args.repetitions)
    o, r = res["optimized"], res["reference"]
    print(f"FAC benchmark h={args.h} w={args.w} c={args.c} k={args.k} (median of {args.repetitions} / {res['reference_repetitions']} runs)")
    print(f"machine: {res['machine']}")
    print(f"{'path':<10} {'fwd s':>10} {'fwd elem/s':>12} {'bwd s':>10} {'bwd elem/s':>12}")
    print(f"{'optimized':<10} {o['forward_s']:>10.5f} {o['forward_elems_per_s']:>12.3e} {o['backward_s']:>10.5f} {o['backward_elems_per_s']:>12.3e}")
    print(f"{'reference':<10} {r['forward_s']:>10.5f} {r['forward_elems_per_s']:>12.3e} {r['backward_s']:>10.5f} {r['backward_elems_per_s']:>12.3e}")
    print(f"speedup: forward {res['speedup_forward']:.1f}x, backward {res['speedup_backward']:.1f}x; max |optimized - reference| = {res['max_abs_diff']:.2e}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(res, indent=2))
    if res["max_abs_diff"] > 1e-6:
        print("FAILED: optimized and reference FAC disagree")
        return EXIT_FAIL
    return EXIT_OK


def cmd_synth(args, extra) -> int:
    from .data.frames import write_clip
    from .data.synth import random_scene, render_clip

    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    if args.frames < 1 or args.subframes < 1:
        raise UsageError("--frames and --subframes must be positive")
    rng = np.random.default_rng(args.seed)
    scene = random_scene(rng, args.size, args.size, args.frames, max_speed=args.max_speed)
    clip = render_clip(scene, args.frames, args.subframes)
    clip.meta["seed"] = args.seed
    write_clip(args.out, clip)
    print(f"wrote {args.frames} sharp/blurry frame pairs (M={args.subframes}) -> {args.out}")
    return EXIT_OK


# ---- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stfan", description="Filter-adaptive video deblurring toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(sp, iterations=True):
        sp.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
        if iterations:
            sp.add_argument("--iterations", type=int, help="shorthand for --train.iterations")
        sp.epilog = "Any config key can be overridden with --section.key=value, e.g. --train.optimizer.learning_rate=1e-3"

    sp = sub.add_parser("train", help="train on synthetic clips")
    with_config(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="restore a directory of frame_%%05d.png frames")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="input frame directory")
    sp.add_argument("--out", required=True, help="output frame directory")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("gradcheck", help="run oracle and finite-difference suites")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--precision", choices=("float32", "float64"), default="float64", help="ignored: checks always use float64")
    sp.add_argument("--skip-model", action="store_true", help="skip the recurrent-unroll check")
    sp.add_argument("--inject-fac-fault", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="train the variant and filter-size sweeps")
    with_config(sp)
    sp.add_argument("--seeds", help="comma-separated seeds (overrides ablate.seeds)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("rf", help="analytic vs measured receptive field for k = 3, 5, 7, 9")
    with_config(sp, iterations=False)
    sp.add_argument("--out", help="optional directory for rf.json")
    sp.set_defaults(func=cmd_rf)

    sp = sub.add_parser("bench", help="benchmark optimized vs reference FAC")
    sp.add_argument("--h", type=int, default=64)
    sp.add_argument("--w", type=int, default=64)
    sp.add_argument("--c", type=int, default=16)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--repetitions", type=int, default=5)
    sp.add_argument("--out", help="optional JSON report path")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("synth", help="render one synthetic sharp/blurry clip")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", type=int, default=6)
    sp.add_argument("--subframes", type=int, default=8)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--max-speed", type=float, default=6.0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except UsageError as exc:
        print(f"stfan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"stfan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"stfan {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapeError as exc:
        print(f"stfan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 1 with a diagnostic
        print(f"stfan {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
