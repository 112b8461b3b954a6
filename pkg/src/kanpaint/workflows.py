"""Command back-ends: dataset generation, training, inpainting, evaluation,
and the architecture ablation sweep.

Every workflow is a pure function of (config, seed): RNG streams are derived
deterministically, outputs land only under the configured output directory,
and the effective config is copied into each run for provenance.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig
from .data import (PhantomSpec, SliceRecord, generate_phantom, load_dataset,
                   mask_apply, save_dataset)
from .diffusion import DiffusionSchedule, diffusion_loss, make_schedule
from .errors import ConfigError, DataError, IncompatibilityError
from .io import (load_checkpoint_state, read_tensor, save_checkpoint,
                 write_tensor)
from .kan import SplineGrid, count_parameters
from .metrics import EvalReport, masked_mse, summary_table
from .optim import Adam, EmaState
from .repaint import InpaintTask, inpaint
from .tensor import Tensor, backward
from .ukan import Condition, ImageEncoder, InpaintModel, UKanDenoiser, \
    tumor_geometry

__all__ = [
    "build_model", "build_schedule", "load_records", "run_gen_data",
    "run_train", "run_inpaint", "run_evaluate", "run_ablate",
    "TrainResult", "AblateRow",
]


def build_model(config: RunConfig, rng: np.random.Generator) -> InpaintModel:
    m = config.model
    grid = SplineGrid(m.spline_range_min, m.spline_range_max,
                      m.spline_grid_size, m.spline_order)
    denoiser = UKanDenoiser(
        rng, arch=m.arch, base_channels=m.base_channels,
        embed_dim=m.embed_dim, spline_grid=grid, kan_depth=m.kan_depth,
        attention_heads=m.attention_heads,
        num_timesteps=config.schedule.timesteps)
    encoder = ImageEncoder(
        rng, in_channels=1, base_channels=m.encoder_base_channels,
        stages=m.encoder_stages, latent_dim=m.embed_dim)
    return InpaintModel(denoiser, encoder)


def build_schedule(config: RunConfig) -> DiffusionSchedule:
    s = config.schedule
    return make_schedule(s.timesteps, s.beta_start, s.beta_end)


def phantom_records(config: RunConfig) -> list[SliceRecord]:
    d = config.data
    side = min(d.height, d.width)
    radius = (max(2, side // 13), max(3, side // 6))
    return [generate_phantom(PhantomSpec(seed=d.phantom_seed + i,
                                         height=d.height, width=d.width,
                                         mask_radius=radius))
            for i in range(d.phantom_count)]


def load_records(config: RunConfig) -> list[SliceRecord]:
    if config.data.source == "phantom":
        return phantom_records(config)
    if not config.data.dir:
        raise ConfigError("data.source is 'dir' but data.dir is empty")
    return load_dataset(config.data.dir)


def run_gen_data(config: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    records = phantom_records(config)
    save_dataset(out_dir, records)
    return out_dir


@dataclass
class TrainResult:
    checkpoint_dir: Path
    loss_curve_path: Path
    losses: list[float]
    first_epoch_loss: float
    final_loss: float
    parameter_count: int
    seconds: float


def _inpaint_mask(record: SliceRecord, which: str) -> np.ndarray:
    return record.healthy_mask if which == "healthy" else record.tumor_mask


def run_train(config: RunConfig, out_dir=None) -> TrainResult:
    """Train the denoiser with EMA tracking; write checkpoint plus loss curve."""
    config.validate()
    out_dir = Path(out_dir if out_dir is not None else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_records(config)
    if not records:
        raise DataError("training dataset is empty")

    h, w = records[0].image.shape[1:]
    stages = len(config.model.arch)
    if h % 2 ** stages or w % 2 ** stages:
        raise ConfigError(
            f"image size {h}x{w} not divisible by 2^{stages} "
            f"(arch {config.model.arch!r})")

    init_rng = np.random.default_rng(config.seed)
    model = build_model(config, init_rng)
    schedule = build_schedule(config)
    optimizer = Adam(model, lr=config.train.learning_rate)
    ema = EmaState(model, rate=config.train.ema_rate)
    train_rng = np.random.default_rng((config.seed, 1))

    images = np.stack([r.image for r in records])          # [n,1,H,W]
    masks = np.stack([_inpaint_mask(r, config.sample.mask) for r in records])
    masked = images * (1.0 - masks)
    geometries = [tumor_geometry(masks[i, 0]) for i in range(len(records))]

    start = time.perf_counter()
    losses: list[float] = []
    batch = config.train.batch_size
    model.train()
    for _ in range(config.train.steps):
        idx = train_rng.integers(0, len(records), size=batch)
        x0 = images[idx]
        scans = masked[idx]
        latent = model.encoder(Tensor(scans))
        geoms = [geometries[i] for i in idx]
        if config.train.condition_dropout > 0.0:
            drop = train_rng.random(batch) < config.train.condition_dropout
            keep = (~drop).astype(np.float64)[:, None]
            latent = latent * keep
            geoms = [g if k else type(g)() for g, k in zip(geoms, ~drop)]
        cond = Condition(latent, geoms)
        loss = diffusion_loss(model.predict, schedule, x0, scans, cond,
                              train_rng, mode=config.train.target_mode,
                              norm=config.train.loss_norm)
        model.zero_grad()
        backward(loss)
        optimizer.step()
        ema.update(model)
        losses.append(loss.item())
    seconds = time.perf_counter() - start

    curve_path = out_dir / "loss_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, value in enumerate(losses):
            writer.writerow([i, repr(value)])

    checkpoint_dir = out_dir / "checkpoint"
    ema_model = build_model(config, np.random.default_rng(config.seed))
    ema.apply_to(ema_model)
    # EMA shadows cover parameters; running stats come from the live model.
    ema_state = ema_model.state()
    for name, buf in model.named_buffers():
        ema_state["buffer." + name] = buf.copy()
    save_checkpoint(checkpoint_dir, model.state(), ema_state,
                    config.to_text())

    steps_per_epoch = max(1, len(records) // batch)
    first_epoch = float(np.mean(losses[:steps_per_epoch]))
    final = float(np.mean(losses[-steps_per_epoch:]))
    (out_dir / "run_manifest.txt").write_text(
        f"seed = {config.seed}\n"
        f"steps = {config.train.steps}\n"
        f"parameters = {count_parameters(model.denoiser)}\n"
        f"train_seconds = {seconds:.3f}\n"
        f"first_epoch_loss = {first_epoch!r}\n"
        f"final_epoch_loss = {final!r}\n")
    (out_dir / "config.txt").write_text(config.to_text())
    return TrainResult(checkpoint_dir, curve_path, losses, first_epoch,
                       final, count_parameters(model.denoiser), seconds)


def load_checkpoint_model(checkpoint_dir, config: RunConfig | None = None
                          ) -> tuple[InpaintModel, InpaintModel,
                                     DiffusionSchedule, RunConfig]:
    """Rebuild (live model, EMA model, schedule, config) from a checkpoint.

    When a runtime config is supplied, any model/schedule key it sets
    explicitly must agree with the checkpoint's stored values.
    """
    model_state, ema_state, config_text = load_checkpoint_state(checkpoint_dir)
    ck_config = RunConfig.from_text(config_text)
    if config is not None:
        for key in config.explicit_keys:
            if key.split(".", 1)[0] in ("model", "schedule"):
                section, name = key.split(".", 1)
                ours = getattr(getattr(config, section), name)
                theirs = getattr(getattr(ck_config, section), name)
                if ours != theirs:
                    raise IncompatibilityError(
                        f"config sets {key} = {ours!r} but checkpoint was "
                        f"built with {theirs!r}")
    rng = np.random.default_rng(0)
    model = build_model(ck_config, rng)
    model.load_state(model_state)
    ema_model = build_model(ck_config, rng)
    ema_model.load_state(ema_state)
    schedule = build_schedule(ck_config)
    return model, ema_model, schedule, ck_config


def _to_image2d(arr: np.ndarray) -> np.ndarray:
    squeezed = np.squeeze(arr)
    if squeezed.ndim != 2:
        raise DataError(f"expected a 2-D image, got shape {arr.shape}")
    return squeezed


def _write_preview(path, image2d: np.ndarray) -> None:
    data = np.clip(image2d, 0.0, 1.0)
    Image.fromarray((data * 255.0).round().astype(np.uint8), mode="L") \
        .save(path)


def run_inpaint(config: RunConfig, checkpoint_dir, records: list[SliceRecord],
                out_dir) -> list[dict]:
    """Inpaint each record's mask region; emit DKT1 + PNG + JSON per task."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, ema_model, schedule, _ = load_checkpoint_model(checkpoint_dir, config)
    ema_model.eval()
    results = []
    for i, record in enumerate(records):
        mask = _inpaint_mask(record, config.sample.mask)[None]
        image = record.image[None]
        masked_scan = image * (1.0 - mask)
        cond = ema_model.condition(masked_scan, mask)
        task = InpaintTask(image, mask, cond,
                           resample_jumps=config.sample.resample_jumps)
        rng = np.random.default_rng((config.seed, i))
        result = inpaint(
            ema_model.predict, schedule, task, rng,
            noise_free_replacement=config.sample.noise_free_replacement,
            clip_denoised=config.sample.clip_denoised)
        stem = f"{record.subject_id}_s{record.slice_index:03d}"
        out2d = result[0, 0]
        write_tensor(out_dir / f"{stem}.dkt1", out2d)
        _write_preview(out_dir / f"{stem}.png", out2d)
        entry = {
            "id": stem,
            "seed": [config.seed, i],
            "arch": config.model.arch,
            "timesteps": schedule.timesteps,
            "resample_jumps": config.sample.resample_jumps,
            "metrics": {
                "mse": float(np.mean((out2d - record.image[0]) ** 2)),
                "masked_mse": masked_mse(out2d, record.image[0], mask[0, 0])
                if mask.any() else None,
            },
        }
        with open(out_dir / f"{stem}.json", "w") as fh:
            json.dump(entry, fh, indent=2, sort_keys=True)
        results.append(entry)
    return results


def run_evaluate(pred_dir, ref_dir, out_dir, method: str = "kanpaint",
                 include_reference: bool = False) -> EvalReport:
    """Score prediction images against same-named references."""
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.dkt1"))}
    refs = {p.stem: p for p in sorted(ref_dir.glob("*.dkt1"))}
    if not preds:
        raise DataError(f"no .dkt1 predictions found in {pred_dir}")
    unmatched = sorted(set(preds) ^ set(refs))
    if unmatched:
        raise DataError(
            f"prediction/reference ids do not match: {', '.join(unmatched)}")
    report = EvalReport(method)
    for stem in sorted(preds):
        a = _to_image2d(read_tensor(preds[stem]))
        b = _to_image2d(read_tensor(refs[stem]))
        report.add(stem, a, b)
    report.to_csv(out_dir / "report.csv")
    table = summary_table([report], include_reference=include_reference)
    (out_dir / "summary.txt").write_text(table + "\n")
    return report


@dataclass
class AblateRow:
    arch: str
    parameters: int
    mean_psnr: float
    mean_ssim: float
    mean_mse: float
    mean_mae: float
    train_seconds: float


def run_ablate(config: RunConfig, out_dir=None) -> list[AblateRow]:
    """Train and evaluate every listed architecture under one seed."""
    config.validate()
    archs = config.ablate_archs()
    if not archs:
        raise ConfigError("ablate.archs lists no architectures")
    out_dir = Path(out_dir if out_dir is not None else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for arch in archs:
        cfg = config.copy()
        cfg.model.arch = arch
        arch_dir = out_dir / arch
        train_result = run_train(cfg, arch_dir / "train")
        records = load_records(cfg)
        ref_dir = arch_dir / "references"
        ref_dir.mkdir(parents=True, exist_ok=True)
        for record in records:
            stem = f"{record.subject_id}_s{record.slice_index:03d}"
            write_tensor(ref_dir / f"{stem}.dkt1", record.image[0])
        run_inpaint(cfg, train_result.checkpoint_dir, records,
                    arch_dir / "inpainted")
        report = run_evaluate(arch_dir / "inpainted", ref_dir,
                              arch_dir / "eval", method=arch)
        rows.append(AblateRow(arch, train_result.parameter_count,
                              report.mean_psnr, report.mean_ssim,
                              report.mean_mse, report.mean_mae,
                              train_result.seconds))

    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arch", "parameters", "psnr", "ssim", "mse", "mae",
                         "train_seconds"])
        for r in rows:
            writer.writerow([r.arch, r.parameters, repr(r.mean_psnr),
                             repr(r.mean_ssim), repr(r.mean_mse),
                             repr(r.mean_mae), f"{r.train_seconds:.3f}"])
    header = (f"{'setup':<10}{'params':>10}{'PSNR':>10}{'SSIM':>10}"
              f"{'MSE':>10}{'MAE':>10}{'seconds':>10}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.arch:<10}{r.parameters:>10}{r.mean_psnr:>10.4f}"
                     f"{r.mean_ssim:>10.4f}{r.mean_mse:>10.4f}"
                     f"{r.mean_mae:>10.4f}{r.train_seconds:>10.2f}")
    (out_dir / "ablation_table.txt").write_text("\n".join(lines) + "\n")
    return rows
