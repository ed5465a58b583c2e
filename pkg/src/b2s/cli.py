"""Command-line entry point.

Subcommands: corpus generate, train, adapt, evaluate,
analyze saliency|overlap|retrain, suite, tokenize, sampler probs.
Exit codes: 0 success, 1 config error, 2 runtime failure,
3 acceptance-suite failure.
"""

from __future__ import annotations

import os

# tiny desk-scale matrices: BLAS threading is pure overhead, and one thread
# keeps runs deterministic; must be set before numpy loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, config as config_mod, experiment, figures, tokenizer
from .corpus import load_corpus, save_corpus
from .errors import ConfigError, RunError
from .model import Model
from .sampler import compute_distribution


def _load_cfg(args) -> config_mod.ExperimentConfig:
    path = getattr(args, "config", None)
    preset = getattr(args, "preset", None)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["train.steps"] = args.steps
    return config_mod.load_config(path, preset, overrides)


def cmd_corpus_generate(args) -> int:
    cfg = _load_cfg(args)
    manifest = experiment.build_corpus(cfg)
    path = save_corpus(manifest, Path(args.out))
    n = sum(manifest.counts().values())
    print(f"wrote {path} ({len(manifest.entries)} languages, {n} samples)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    manifest = load_corpus(Path(args.corpus_dir)) if args.corpus_dir else None
    result = experiment.run_train(cfg, Path(args.out), manifest=manifest,
                                  resume=Path(args.resume) if args.resume else None)
    print(f"checkpoint: {result['checkpoint']}")
    print(f"curve: {result['curve']}  figure: {result['figure']}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_cfg(args)
    if args.target:
        cfg.adapt.target = args.target
    if args.n_samples is not None:
        cfg.adapt.n_samples = args.n_samples
    manifest = load_corpus(Path(args.corpus_dir)) if args.corpus_dir else None
    result = experiment.run_adapt(cfg, Path(args.checkpoint), Path(args.out),
                                  manifest=manifest)
    rep = result["report"]
    print(f"adapted: {result['checkpoint']}")
    print(f"target {rep.language_id}: cer {rep.cer:.4f} cer_ex {rep.cer_ex:.4f} "
          f"dtw_mse {rep.dtw_mse:.5f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    model, _ = Model.load(Path(args.checkpoint))
    manifest = load_corpus(Path(args.manifest))
    langs = args.languages.split(",") if args.languages else None
    reports = experiment.run_evaluate(model, manifest, cfg, Path(args.out),
                                      n=args.n, languages=langs)
    for r in reports:
        print(f"{r.language_id}: n {r.n} cer {r.cer:.4f} cer_ex {r.cer_ex:.4f} "
              f"dtw_mse {r.dtw_mse:.5f}")
    return 0


def cmd_tokenize(args) -> int:
    text = args.text if args.text is not None else sys.stdin.read().rstrip("\n")
    seq = tokenizer.encode(text)
    print(" ".join(str(t) for t in seq.tokens))
    return 0


def cmd_sampler_probs(args) -> int:
    counts = [int(c) for c in args.counts.split(",") if c]
    named = {f"lang{i}": c for i, c in enumerate(counts)}
    override = None
    if args.target_override:
        idx, _, p = args.target_override.partition(":")
        override = (f"lang{int(idx)}", float(p))
    dist = compute_distribution(named, args.alpha, override)
    print(",".join(f"{dist.prob(f'lang{i}'):.12g}" for i in range(len(counts))))
    return 0


def cmd_analyze_saliency(args) -> int:
    model, _ = Model.load(Path(args.checkpoint))
    manifest = load_corpus(Path(args.manifest))
    samples = analysis._language_samples(manifest, args.language, args.n, args.seed)
    smap = analysis.compute_saliency(model, samples, args.language)
    analysis.save_saliency(smap, Path(args.out))
    print(f"wrote {args.out} ({len(smap.layers)} layers, "
          f"{smap.sample_count} samples, checkpoint {smap.checkpoint_hash})")
    if smap.low_activity:
        print(f"low-activity layers: {','.join(smap.low_activity)}")
    return 0


def cmd_analyze_overlap(args) -> int:
    out = Path(args.out)
    if args.maps:
        maps = [analysis.load_saliency(Path(p)) for p in args.maps]
        langs = [m.language_id for m in maps]
        masks = [analysis.build_mask(m, args.ratio) for m in maps]
        n = len(masks)
        values = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                _, values[i, j] = analysis.overlap(masks[i], masks[j])
                values[j, i] = values[i, j]
        mat = analysis.OverlapMatrix(tuple(langs), values)
    else:
        if not (args.checkpoint and args.manifest and args.languages):
            raise ConfigError("need --maps, or --checkpoint/--manifest/--languages")
        model, _ = Model.load(Path(args.checkpoint))
        manifest = load_corpus(Path(args.manifest))
        layers = args.layers.split(",") if args.layers else None
        mat = analysis.overlap_matrix(model, manifest, args.languages.split(","),
                                      samples_per_language=args.n,
                                      ratio=args.ratio, seed=args.seed,
                                      layers=layers)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(analysis.matrix_to_csv(mat), encoding="utf-8")
    svg = out.with_suffix(".svg")
    figures.save_overlap_heatmap(mat.languages, mat.values, svg)
    print(f"wrote {out} and {svg}")
    if mat.low_activity:
        print(f"low-activity layers: {','.join(mat.low_activity)}")
    return 0


def cmd_analyze_retrain(args) -> int:
    model, _ = Model.load(Path(args.checkpoint))
    manifest = load_corpus(Path(args.manifest))
    report = analysis.prune_and_retrain(
        model, manifest, args.mask_language, args.target,
        n_samples=args.n_samples, steps=args.steps, seed=args.seed,
        ratio=args.ratio)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        "mask_source,target,n,cer,dtw_mse\n"
        f"{args.mask_language},{args.target},{report.n},"
        f"{report.cer:.6f},{report.dtw_mse:.6f}\n", encoding="utf-8")
    print(f"{args.mask_language} -> {args.target}: cer {report.cer:.4f} "
          f"dtw_mse {report.dtw_mse:.5f} (wrote {out})")
    return 0


def cmd_suite(args) -> int:
    from . import suite
    results = suite.run_suite(out_dir=Path(args.out), seeds=args.seeds,
                              workers=args.workers, quick=args.quick)
    failed = [r for r in results if not r.passed]
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="b2s",
                                description="byte-to-spectrogram training framework")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp, with_steps=False):
        sp.add_argument("--config", type=Path, default=None,
                        help="flat key=value config file")
        sp.add_argument("--preset", choices=config_mod.list_presets(), default=None)
        sp.add_argument("--seed", type=int, default=None)
        if with_steps:
            sp.add_argument("--steps", type=int, default=None)

    sp = sub.add_parser("corpus", help="corpus operations")
    corpus_sub = sp.add_subparsers(dest="corpus_command", required=True)
    g = corpus_sub.add_parser("generate", help="generate a synthetic corpus")
    add_cfg(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_corpus_generate)

    t = sub.add_parser("train", help="source training run")
    add_cfg(t, with_steps=True)
    t.add_argument("--out", required=True)
    t.add_argument("--corpus-dir", default=None)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("adapt", help="co-training adaptation to the target")
    add_cfg(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--corpus-dir", default=None)
    a.add_argument("--target", default=None)
    a.add_argument("--n-samples", type=int, default=None)
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("evaluate", help="held-out metrics per language")
    add_cfg(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--n", type=int, default=20)
    e.add_argument("--languages", default=None, help="comma-separated subset")
    e.set_defaults(func=cmd_evaluate)

    an = sub.add_parser("analyze", help="sub-network interpretation suite")
    an_sub = an.add_subparsers(dest="analyze_command", required=True)

    s = an_sub.add_parser("saliency", help="per-neuron saliency map for a language")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--language", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze_saliency)

    o = an_sub.add_parser("overlap", help="pairwise mask overlap matrix")
    o.add_argument("--maps", nargs="*", default=None, help="saved saliency maps")
    o.add_argument("--checkpoint", default=None)
    o.add_argument("--manifest", default=None)
    o.add_argument("--languages", default=None, help="comma-separated list")
    o.add_argument("--n", type=int, default=100)
    o.add_argument("--ratio", type=float, default=0.5)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--layers", default=None,
                   help="restrict to these instrumented layers (comma-separated)")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_analyze_overlap)

    r = an_sub.add_parser("retrain", help="prune by a language's mask and retrain")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--manifest", required=True)
    r.add_argument("--mask-language", required=True,
                   help="language id, or 'random'")
    r.add_argument("--target", required=True)
    r.add_argument("--n-samples", type=int, default=50)
    r.add_argument("--steps", type=int, default=200)
    r.add_argument("--ratio", type=float, default=0.5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_analyze_retrain)

    su = sub.add_parser("suite", help="run the acceptance battery")
    su.add_argument("--out", default="suite-out")
    su.add_argument("--seeds", type=int, default=5)
    su.add_argument("--workers", type=int, default=None)
    su.add_argument("--quick", action="store_true",
                    help="reduced budgets (not the acceptance configuration)")
    su.set_defaults(func=cmd_suite)

    tk = sub.add_parser("tokenize", help="text -> space-separated token IDs")
    tk.add_argument("text", nargs="?", default=None)
    tk.set_defaults(func=cmd_tokenize)

    sm = sub.add_parser("sampler", help="sampler utilities")
    sm_sub = sm.add_subparsers(dest="sampler_command", required=True)
    pr = sm_sub.add_parser("probs", help="print the balanced p-vector as CSV")
    pr.add_argument("--counts", required=True, help="comma-separated N_i")
    pr.add_argument("--alpha", type=float, default=0.2)
    pr.add_argument("--target-override", default=None,
                    help="INDEX:PROB pinning one count to a fixed probability")
    pr.set_defaults(func=cmd_sampler_probs)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
