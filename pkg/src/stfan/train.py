"""Recurrent training, held-out evaluation and ablation runs."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .autograd import ops
from .autograd.checkpoint import load_tensors, save_tensors
from .autograd.optim import Adam, OptimConfig
from .autograd.tensor import Tensor, no_grad
from .data.augment import AugmentConfig, dataset_stream, identity_augment, prefetch
from .data.synth import VideoClip
from .losses import LossConfig, deblur_loss, make_extractor, psnr, ssim, write_metric_rows
from .model import STFAN, ModelConfig, build_ablation_variant, build_model

log = logging.getLogger(__name__)

DEVIATIONS = [
    "perceptual loss uses a fixed seeded random conv stack instead of pretrained VGG-19 conv3-3",
    "trained and evaluated on synthetic box-shutter blurred clips, not the DVD dataset",
]


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, clip_ids):
        super().__init__(f"non-finite loss at iteration {iteration} (clips {clip_ids})")
        self.iteration = iteration
        self.clip_ids = clip_ids


@dataclass
class TrainConfig:
    iterations: int = 2000
    clips_per_batch: int = 1
    clip_length: int = 6
    frame_size: tuple[int, int] = (32, 32)
    subframes: int = 8
    max_speed: float = 6.0
    data_seed: int = 0
    heldout_clips: int = 10
    checkpoint_interval: int = 1000
    eval_interval: int = 1000
    log_interval: int = 100
    prefetch: int = 0
    optimizer: OptimConfig = field(default_factory=lambda: OptimConfig(learning_rate=5e-4, decay_interval=1000))
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        self.frame_size = tuple(self.frame_size)
        for name in ("iterations", "clips_per_batch", "clip_length", "subframes", "heldout_clips", "checkpoint_interval", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.checkpoint_interval > self.iterations:
            raise ValueError(f"checkpoint_interval ({self.checkpoint_interval}) exceeds iterations ({self.iterations})")
        if tuple(self.augment.crop_size) != self.frame_size:
            self.augment.crop_size = self.frame_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalResult:
    rows: list[dict]
    mean_psnr: float
    mean_ssim: float
    baseline_psnr: float
    baseline_ssim: float

    def per_clip(self) -> list[dict]:
        out: dict = {}
        for r in self.rows:
            out.setdefault(r["clip_id"], []).append(r)
        return [
            {
                "clip_id": cid,
                "psnr": _mean(x["psnr"] for x in rs),
                "ssim": _mean(x["ssim"] for x in rs),
                "baseline_psnr": _mean(x["baseline_psnr"] for x in rs),
                "baseline_ssim": _mean(x["baseline_ssim"] for x in rs),
            }
            for cid, rs in out.items()
        ]

    def summary(self) -> dict:
        return {
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "baseline_psnr": self.baseline_psnr,
            "baseline_ssim": self.baseline_ssim,
        }


@dataclass
class RunReport:
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    eval_table: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    deviations: list[str] = field(default_factory=lambda: list(DEVIATIONS))
    num_parameters: int = 0
    wall_time_s: float = 0.0

    def mean_loss(self, first: int | None = None, last: int | None = None) -> float:
        vals = [v for _, v in self.loss_curve]
        if first is not None:
            vals = vals[:first]
        if last is not None:
            vals = vals[-last:]
        return float(np.mean(vals))

    def to_dict(self) -> dict:
        return {
            "loss_curve": [[i, v] for i, v in self.loss_curve],
            "eval_table": self.eval_table,
            "config": self.config,
            "deviations": self.deviations,
            "num_parameters": self.num_parameters,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        # wall time is kept out of report.json so reruns stay byte-identical
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"])
            w.writerows((i, repr(v)) for i, v in self.loss_curve)
        with open(out / "eval.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["iteration", "mean_psnr", "mean_ssim", "baseline_psnr", "baseline_ssim", "checkpoint"]
            w.writerow(cols)
            w.writerows([row[c] for c in cols] for row in self.eval_table)


def _mean(xs: Iterable[float]) -> float:
    return float(np.mean(list(xs)))


def frame_loss_fn(loss_config: LossConfig) -> Callable[[Tensor, np.ndarray], Tensor]:
    extractor = make_extractor(loss_config)

    def fn(R: Tensor, S: np.ndarray) -> Tensor:
        return deblur_loss(R, S, loss_config, extractor)

    return fn


def clip_loss(model: STFAN, clip: VideoClip, loss_fn) -> Tensor:
    """Sum of per-frame losses over one recurrent unroll (cold start at t = 0)."""
    total = None
    for t, step in enumerate(model.run_clip(clip.blurry)):
        term = loss_fn(step.R, clip.sharp[t].astype(model.dtype, copy=False))
        total = term if total is None else ops.add(total, term)
    return total


def restore_clip(model: STFAN, frames: Iterable[np.ndarray]) -> Iterator[np.ndarray]:
    """Recurrent inference; only the current state is kept alive."""
    with no_grad():
        for step in model.run_clip(frames):
            yield step.R.data


def heldout_set(config: TrainConfig, count: int | None = None) -> list[VideoClip]:
    aug = identity_augment(config.frame_size)
    n = config.heldout_clips if count is None else count
    return list(
        dataset_stream(config.data_seed, config.clip_length, n, aug, split="heldout", subframes=config.subframes, max_speed=config.max_speed)
    )


def evaluate(restorer, clips: Iterable[VideoClip]) -> EvalResult:
    """Per-frame PSNR/SSIM of restored-vs-sharp and blurry-vs-sharp.

    ``restorer`` is a model or a callable mapping a blurry frame sequence to
    an iterable of restored frames.  Means average frames within a clip,
    then clips.
    """
    run = (lambda frames: restore_clip(restorer, frames)) if isinstance(restorer, STFAN) else restorer
    rows = []
    for ci, clip in enumerate(clips):
        cid = clip.meta.get("index", ci)
        for t, R in enumerate(run(clip.blurry)):
            S, B = clip.sharp[t], clip.blurry[t]
            rows.append(
                {
                    "clip_id": cid,
                    "frame": t,
                    "psnr": psnr(np.clip(R, 0, 1), S),
                    "ssim": ssim(np.clip(R, 0, 1), S),
                    "baseline_psnr": psnr(B, S),
                    "baseline_ssim": ssim(B, S),
                }
            )
    res = EvalResult(rows, math.nan, math.nan, math.nan, math.nan)
    pc = res.per_clip()
    res.mean_psnr = _mean(c["psnr"] for c in pc)
    res.mean_ssim = _mean(c["ssim"] for c in pc)
    res.baseline_psnr = _mean(c["baseline_psnr"] for c in pc)
    res.baseline_ssim = _mean(c["baseline_ssim"] for c in pc)
    return res


def save_checkpoint(path, model: STFAN, iteration: int | None = None) -> Path:
    extra = {"model_config": model.config.to_dict()}
    if iteration is not None:
        extra["iteration"] = iteration
    return save_tensors(path, model.state_dict(), extra)


def load_checkpoint(path) -> STFAN:
    arrays, manifest = load_tensors(path)
    if "model_config" not in manifest:
        raise ValueError(f"{path}: manifest has no model_config")
    model = build_model(ModelConfig(**manifest["model_config"]))
    model.load_state_dict(arrays)
    return model


def train(
    model: STFAN,
    stream: Iterable[VideoClip],
    config: TrainConfig,
    out_dir=None,
    heldout: list[VideoClip] | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> RunReport:
    """Train in place.  Checkpoints and evaluation happen together so every
    eval row has a matching checkpoint (files only when ``out_dir`` is set)."""
    started = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config={"train": config.to_dict(), "model": model.config.to_dict()}, num_parameters=model.num_parameters())
    params = model.parameters()
    opt = Adam(params, config.optimizer)
    loss_fn = frame_loss_fn(config.loss)
    if heldout is None:
        heldout = heldout_set(config)
    it_stream = iter(prefetch(iter(stream), config.prefetch))

    for it in range(config.iterations):
        clips = [next(it_stream) for _ in range(config.clips_per_batch)]
        opt.zero_grad()
        total = None
        for clip in clips:
            if clip.sharp.shape[1:3] != config.frame_size:
                raise ValueError(f"clip extents {clip.sharp.shape[1:3]} do not match frame_size {config.frame_size}")
            lc = clip_loss(model, clip, loss_fn)
            total = lc if total is None else ops.add(total, lc)
        if len(clips) > 1:
            total = ops.mul(total, 1.0 / len(clips))
        value = float(total.data)
        if not math.isfinite(value):
            raise TrainingDiverged(it, [c.meta.get("index") for c in clips])
        total.backward()
        opt.step()
        report.loss_curve.append((it, value))
        if on_step is not None:
            on_step(it, value)
        if config.log_interval and (it + 1) % config.log_interval == 0:
            log.info("iter %d loss %.5f", it + 1, report.mean_loss(last=config.log_interval))

        done = it + 1
        if done % config.eval_interval == 0 or done % config.checkpoint_interval == 0 or done == config.iterations:
            ckpt = None
            if out is not None:
                ckpt = save_checkpoint(out / f"ckpt_{done:06d}.json", model, done).name
            res = evaluate(model, heldout)
            report.eval_table.append({"iteration": done, **res.summary(), "checkpoint": ckpt})
            log.info("iter %d eval psnr %.3f (blurry %.3f)", done, res.mean_psnr, res.baseline_psnr)
    report.wall_time_s = time.perf_counter() - started
    if out is not None:
        report.save(out)
    return report


def training_stream(config: TrainConfig) -> Iterator[VideoClip]:
    n = config.iterations * config.clips_per_batch
    return dataset_stream(config.data_seed, config.clip_length, n, config.augment, "train", config.subframes, config.max_speed)


# ---- ablations -------------------------------------------------------------

STRUCTURE_VARIANTS = ("no-both-fac", "no-align-fac", "no-deblur-fac", "drop-align-branch", "drop-deblur-branch")
INPUT_VARIANTS = ("pair-input-BB", "pair-input-RB")
FAC_REMOVAL = ("no-align-fac", "no-deblur-fac", "no-both-fac")
FILTER_SIZES = (3, 5, 7, 9)
REFERENCE_FILTER_SWEEP = {3: (79, 4.58), 5: (87, 5.37), 7: (95, 6.56), 9: (103, 8.14)}


@dataclass
class AblationRow:
    name: str
    variant: str
    k: int
    seed: int
    mean_psnr: float
    mean_ssim: float
    baseline_psnr: float
    num_parameters: int
    rf_content: int
    rf_full: int
    final_loss: float


def _run_one(variant: str, k: int, seed: int, model_config: ModelConfig, train_config: TrainConfig, heldout) -> AblationRow:
    from .receptive_field import measured_rf_width

    mc = ModelConfig(**{**model_config.to_dict(), "k": k, "seed": seed, "variant": variant})
    model = build_ablation_variant(mc, variant)
    tc = TrainConfig(**{**_shallow(train_config), "data_seed": train_config.data_seed + 1000 * seed})
    report = train(model, training_stream(tc), tc, heldout=heldout)
    res = evaluate(model, heldout)
    name = variant if k == model_config.k else f"{variant}@k={k}"
    return AblationRow(
        name=name,
        variant=variant,
        k=k,
        seed=seed,
        mean_psnr=res.mean_psnr,
        mean_ssim=res.mean_ssim,
        baseline_psnr=res.baseline_psnr,
        num_parameters=model.num_parameters(),
        rf_content=measured_rf_width(mc, "content") if variant == "full" else -1,
        rf_full=measured_rf_width(mc, "full") if variant == "full" else -1,
        final_loss=report.mean_loss(last=min(100, len(report.loss_curve))),
    )


def _shallow(dc) -> dict:
    return {f: getattr(dc, f) for f in dc.__dataclass_fields__}


def run_ablations(
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds=(0,),
    variants=("full", *STRUCTURE_VARIANTS, *INPUT_VARIANTS),
    filter_sizes=FILTER_SIZES,
    progress: Callable[[AblationRow], None] | None = None,
) -> list[AblationRow]:
    """Train every (variant, seed) at the base k plus the full model for each
    filter size, all on identical data streams and budgets."""
    heldout = heldout_set(train_config)
    jobs = [(v, model_config.k) for v in variants]
    jobs += [("full", k) for k in filter_sizes if k != model_config.k or "full" not in variants]
    rows = []
    for seed in seeds:
        for variant, k in jobs:
            row = _run_one(variant, k, seed, model_config, train_config, heldout)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def fac_ordering(rows: list[AblationRow], base_k: int) -> dict:
    """Per seed, does the full model beat each FAC-removal variant on PSNR?"""
    by = {(r.variant, r.seed): r for r in rows if r.k == base_k}
    seeds = sorted({r.seed for r in rows})
    out = {}
    for v in FAC_REMOVAL:
        wins = [by[("full", s)].mean_psnr > by[(v, s)].mean_psnr for s in seeds if (v, s) in by and ("full", s) in by]
        out[v] = {"wins": int(sum(wins)), "seeds": len(wins)}
    return out


def write_ablation_table(rows: list[AblationRow], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablations.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = list(AblationRow.__dataclass_fields__)
        w.writerow(cols)
        for r in rows:
            w.writerow([getattr(r, c) for c in cols])
    (out / "ablations.json").write_text(json.dumps([asdict(r) for r in rows], indent=2))
    return path


def format_ablation_table(rows: list[AblationRow]) -> str:
    agg: dict = {}
    for r in rows:
        agg.setdefault(r.name, []).append(r)
    lines = [f"{'structure':<22} {'k':>2} {'seeds':>5} {'PSNR':>8} {'SSIM':>7} {'params':>9} {'RF(content)':>11} {'RF(full)':>8}"]
    for name, rs in agg.items():
        r0 = rs[0]
        rf_c = r0.rf_content if r0.rf_content >= 0 else "-"
        rf_f = r0.rf_full if r0.rf_full >= 0 else "-"
        lines.append(
            f"{name:<22} {r0.k:>2} {len(rs):>5} {np.mean([r.mean_psnr for r in rs]):>8.3f} "
            f"{np.mean([r.mean_ssim for r in rs]):>7.4f} {r0.num_parameters:>9} {rf_c:>11} {rf_f:>8}"
        )
    base = rows[0].baseline_psnr if rows else math.nan
    lines.append(f"blurry input baseline PSNR (measured): {base:.3f}")
    lines.append("reference (paper) filter-size sweep: " + ", ".join(f"k={k}: RF {rf}, {p}M params" for k, (rf, p) in REFERENCE_FILTER_SWEEP.items()))
    return "\n".join(lines)


def write_eval_csv(result: EvalResult, path) -> None:
    write_metric_rows(path, [(r["clip_id"], r["frame"], r["psnr"], r["ssim"]) for r in result.rows])
