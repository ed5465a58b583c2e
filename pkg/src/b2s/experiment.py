"""Experiment orchestration: config-driven train/adapt/evaluate with artifacts.

Every CSV starts with a `# config_hash=... seed=...` line; re-running with
the same pair reproduces identical numeric content. Checkpoints land on
segment boundaries, and resuming from one continues the curve bit-for-bit
because the loop RNG state rides along in the checkpoint.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import figures, schedule as sched_mod, training
from .config import ExperimentConfig
from .corpus import CorpusManifest
from .errors import ConfigError, RunError
from .metrics import MetricReport
from .model import Model, ModelConfig
from .schedule import TrainingSchedule


def build_corpus(cfg: ExperimentConfig, seed: int | None = None) -> CorpusManifest:
    c = cfg.corpus
    seed = cfg.seed if seed is None else seed
    common = dict(seed=seed, d_mel=c.d_mel, duration=c.duration,
                  noise_scale=c.noise_scale, text_len=tuple(c.text_len))
    if c.preset == "default":
        lcs = corpus_mod.default_corpus_config(
            t1_n=c.t1_n, t2_n=c.t2_n, t3_n=c.t3_n, target_n=c.target_n, **common)
    elif c.preset == "adaptation-study":
        lcs = corpus_mod.adaptation_study_config(
            t1_n=c.t1_n, t2_n=c.t2_n, t3_n=c.t3_n, target_n=c.target_n, **common)
    elif c.preset == "smoke":
        lcs = corpus_mod.smoke_corpus_config(n=c.t1_n, **common)
    else:
        raise ConfigError(f"unknown corpus preset {c.preset!r}")
    return corpus_mod.build_tiered_corpus(lcs, seed)


def model_from_config(cfg: ExperimentConfig, manifest: CorpusManifest) -> Model:
    m = cfg.model
    speakers = tuple(s for e in manifest.entries for s in e["speakers"])
    mc = ModelConfig(
        languages=tuple(manifest.languages()), speakers=speakers,
        d_mel=cfg.corpus.d_mel, enc_layers=m.enc_layers, dec_layers=m.dec_layers,
        heads=m.heads, d_model=m.d_model, d_ff=m.d_ff,
        postnet_layers=m.postnet_layers, postnet_channels=m.postnet_channels,
        prenet_dropout=m.prenet_dropout, grad_clip=m.grad_clip, dtype=m.dtype,
    )
    return Model(mc, seed=cfg.seed)


def _provenance(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash()} seed={cfg.seed}"


def write_csv(path: Path, cfg: ExperimentConfig, fieldnames: list[str],
              rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_provenance(cfg) + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return path


def _loop_rng(cfg: ExperimentConfig) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(cfg.seed))


def _schedule_for(cfg: ExperimentConfig, manifest: CorpusManifest) -> TrainingSchedule:
    tiers = {e["language_id"]: e["tier"] for e in manifest.entries}
    return cfg.build_schedule(tiers=tiers, counts=manifest.counts())


def _target_language(cfg: ExperimentConfig, manifest: CorpusManifest) -> str:
    if cfg.adapt.target:
        return cfg.adapt.target
    targets = manifest.languages(("TARGET",))
    if not targets:
        raise ConfigError("manifest has no TARGET language")
    return targets[0]


CURVE_FIELDS = ["step", "lr", "frame_loss", "postnet_loss", "stop_loss",
                "total", "active"]


def _max_frames_for(spec) -> int:
    # 8x the longest clean utterance, capped: keeps evals of non-terminating
    # (failed) models from dominating wall time
    return min(400, max(24, 8 * spec.text_len[1] * spec.duration))


def _history_rows(history: list[training.StepRecord]) -> list[dict]:
    return [
        {"step": h.step, "lr": f"{h.lr:.10g}",
         "frame_loss": f"{h.loss.frame_loss:.10g}",
         "postnet_loss": f"{h.loss.postnet_loss:.10g}",
         "stop_loss": f"{h.loss.stop_loss:.10g}",
         "total": f"{h.loss.total:.10g}",
         "active": "|".join(h.active)}
        for h in history
    ]


def run_train(cfg: ExperimentConfig, out_dir: Path,
              manifest: CorpusManifest | None = None,
              resume: Path | None = None) -> dict:
    """Source training: periodic checkpoints, curve CSV, and a curve figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifest or build_corpus(cfg)
    sched = _schedule_for(cfg, manifest)
    if resume is not None:
        model, rng_state = Model.load(resume)
        rng = _loop_rng(cfg)
        if rng_state is not None:
            rng.bit_generator.state = rng_state
    else:
        model = model_from_config(cfg, manifest)
        rng = _loop_rng(cfg)
    total_steps = cfg.train.steps
    interval = max(1, round(total_steps * cfg.train.eval_interval))
    rows: list[dict] = []
    while model.step < total_steps:
        n = min(interval, total_steps - model.step)
        history = training.run_training(
            model, manifest, sched, n, rng,
            alpha=cfg.sampler.alpha, p_target=cfg.sampler.p_target,
            frame_budget=cfg.batch.frame_budget)
        rows += _history_rows(history)
        model.save(out_dir / f"ckpt-{model.step:06d}.b2sm",
                   rng_state=rng.bit_generator.state)
    curve = write_csv(out_dir / "curve.csv", cfg, CURVE_FIELDS, rows)
    fig = figures.save_training_curve(
        [dict(r, step=int(r["step"]), lr=float(r["lr"]),
              frame_loss=float(r["frame_loss"]), postnet_loss=float(r["postnet_loss"]),
              stop_loss=float(r["stop_loss"]), total=float(r["total"])) for r in rows],
        out_dir / "curve.png", reset_steps=sched_mod.reset_points(sched))
    final = out_dir / "final.b2sm"
    model.save(final, rng_state=rng.bit_generator.state)
    return {"checkpoint": final, "curve": curve, "figure": fig, "model": model,
            "manifest": manifest}


ADAPT_FIELDS = ["step", "cer", "cer_ex", "dtw_mse", "n"]


def run_adapt(cfg: ExperimentConfig, source_checkpoint: Path | Model,
              out_dir: Path, manifest: CorpusManifest | None = None) -> dict:
    """Co-training adaptation with periodic held-out target metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifest or build_corpus(cfg)
    if isinstance(source_checkpoint, Model):
        model, rng_state = source_checkpoint, None
    else:
        model, rng_state = Model.load(source_checkpoint)
    rng = _loop_rng(cfg)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    sched = _schedule_for(cfg, manifest)
    if sched.adaptation_step is None:
        sched = replace(sched, adaptation_step=model.step)
    target = _target_language(cfg, manifest)
    if target not in manifest.records:
        raise ConfigError(f"target {target!r} not in corpus")
    spec = manifest.specs[target]
    steps = cfg.adapt.steps
    interval = max(1, round(steps * cfg.train.eval_interval))
    curve_rows: list[dict] = []
    eval_rows: list[dict] = []
    done = 0
    while done < steps:
        n = min(interval, steps - done)
        history = training.run_training(
            model, manifest, sched, n, rng,
            alpha=cfg.sampler.alpha, p_target=cfg.sampler.p_target,
            frame_budget=cfg.batch.frame_budget,
            target_pool=cfg.adapt.n_samples)
        done += n
        curve_rows += _history_rows(history)
        report = training.evaluate_language(
            model, spec, cfg.adapt.eval_texts, seed=cfg.seed + 4242,
            radius=cfg.metrics.radius, max_frames=_max_frames_for(spec),
            include_ex=(done >= steps and cfg.adapt.eval_ex))
        eval_rows.append({"step": model.step, "cer": f"{report.cer:.6f}",
                          "cer_ex": f"{report.cer_ex:.6f}",
                          "dtw_mse": f"{report.dtw_mse:.6f}", "n": report.n})
    write_csv(out_dir / "train_curve.csv", cfg, CURVE_FIELDS, curve_rows)
    curve = write_csv(out_dir / "adapt_curve.csv", cfg, ADAPT_FIELDS, eval_rows)
    fig = figures.save_adaptation_curve(
        [dict(r, step=int(r["step"]), cer=float(r["cer"]),
              dtw_mse=float(r["dtw_mse"])) for r in eval_rows],
        out_dir / "adapt_curve.png")
    final = out_dir / "adapted.b2sm"
    model.save(final, rng_state=rng.bit_generator.state)
    last = eval_rows[-1]
    report = MetricReport(target, int(last["n"]), float(last["cer"]),
                          float(last["cer_ex"]), float(last["dtw_mse"]))
    return {"checkpoint": final, "curve": curve, "figure": fig, "model": model,
            "manifest": manifest, "report": report}


EVAL_FIELDS = ["language", "n", "cer", "cer_ex", "dtw_mse"]


def run_evaluate(model: Model, manifest: CorpusManifest, cfg: ExperimentConfig,
                 out_csv: Path, n: int = 20,
                 languages: list[str] | None = None) -> list[MetricReport]:
    """Per-language held-out metrics CSV plus a bar-chart figure."""
    langs = languages or [l for l in manifest.languages()
                          if l in model.config.languages]
    reports = []
    for lid in langs:
        spec = manifest.specs[lid]
        reports.append(training.evaluate_language(
            model, spec, n, seed=cfg.seed + 4242,
            radius=cfg.metrics.radius, max_frames=_max_frames_for(spec)))
    rows = [{"language": r.language_id, "n": r.n, "cer": f"{r.cer:.6f}",
             "cer_ex": f"{r.cer_ex:.6f}", "dtw_mse": f"{r.dtw_mse:.6f}"}
            for r in reports]
    out_csv = Path(out_csv)
    write_csv(out_csv, cfg, EVAL_FIELDS, rows)
    figures.save_metric_bars(reports, out_csv.with_suffix(".png"))
    return reports
