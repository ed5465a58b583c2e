import json
from pathlib import Path

import numpy as np
import pytest

from b2s import cli, experiment
from b2s.config import from_flat
from b2s.corpus import load_corpus
from b2s.model import Model

TINY_FLAT = {
    "seed": 5,
    "corpus.preset": "adaptation-study",
    "corpus.d_mel": 8, "corpus.t1_n": 20, "corpus.t2_n": 10, "corpus.t3_n": 8,
    "corpus.target_n": 16, "corpus.duration": 2, "corpus.noise_scale": 0.0,
    "corpus.text_len": [3, 5],
    "model.d_model": 16, "model.d_ff": 24, "model.postnet_layers": 0,
    "train.steps": 8, "train.eval_interval": 0.5,
    "adapt.steps": 4, "adapt.eval_texts": 2,
}


def write_cfg(tmp_path, extra=None) -> Path:
    flat = dict(TINY_FLAT)
    if extra:
        flat.update(extra)
    lines = [f"{k} = {json.dumps(v)}" for k, v in flat.items()]
    path = tmp_path / "exp.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_tokenize_command(capsys):
    assert cli.main(["tokenize", "ab"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "257 97 98 258"


def test_sampler_probs_command(capsys):
    assert cli.main(["sampler", "probs", "--counts", "8000,1000,100",
                     "--alpha", "0.2"]) == 0
    vals = [float(x) for x in capsys.readouterr().out.strip().split(",")]
    assert len(vals) == 3
    assert sum(vals) == pytest.approx(1.0, abs=1e-12)
    assert vals[0] == pytest.approx(0.481688477861456, abs=1e-10)


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("corpus.nonsense = 3\n", encoding="utf-8")
    code = cli.main(["corpus", "generate", "--config", str(bad),
                     "--out", str(tmp_path / "c")])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_runtime_error(tmp_path, capsys):
    code = cli.main(["evaluate", "--checkpoint", str(tmp_path / "missing.b2sm"),
                     "--manifest", str(tmp_path), "--out", str(tmp_path / "m.csv")])
    assert code == 2


def test_full_cli_chain(tmp_path, capsys):
    cfg_path = write_cfg(tmp_path)
    corpus_dir = tmp_path / "corpus"
    assert cli.main(["corpus", "generate", "--config", str(cfg_path),
                     "--out", str(corpus_dir)]) == 0
    manifest = load_corpus(corpus_dir)
    assert len(manifest.languages()) == 10

    train_dir = tmp_path / "train"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(train_dir),
                     "--corpus-dir", str(corpus_dir)]) == 0
    assert (train_dir / "final.b2sm").exists()
    assert (train_dir / "curve.csv").exists()
    assert (train_dir / "curve.png").exists()
    first_line = (train_dir / "curve.csv").read_text().splitlines()[0]
    assert first_line.startswith("# config_hash=")

    adapt_cfg = write_cfg(tmp_path, {"schedule.adaptation_step": 8000})
    adapt_dir = tmp_path / "adapt"
    assert cli.main(["adapt", "--config", str(adapt_cfg),
                     "--checkpoint", str(train_dir / "final.b2sm"),
                     "--out", str(adapt_dir), "--corpus-dir", str(corpus_dir),
                     "--n-samples", "4"]) == 0
    assert (adapt_dir / "adapted.b2sm").exists()
    assert (adapt_dir / "adapt_curve.csv").exists()
    assert (adapt_dir / "adapt_curve.png").exists()

    metrics_csv = tmp_path / "metrics.csv"
    assert cli.main(["evaluate", "--config", str(cfg_path),
                     "--checkpoint", str(adapt_dir / "adapted.b2sm"),
                     "--manifest", str(corpus_dir), "--out", str(metrics_csv),
                     "--n", "2", "--languages", "lat-a,mix-t"]) == 0
    lines = metrics_csv.read_text().splitlines()
    assert lines[1] == "language,n,cer,cer_ex,dtw_mse"
    assert len(lines) == 4
    assert metrics_csv.with_suffix(".png").exists()

    map_a = tmp_path / "lat-a.bin"
    assert cli.main(["analyze", "saliency", "--checkpoint",
                     str(train_dir / "final.b2sm"), "--manifest", str(corpus_dir),
                     "--language", "lat-a", "--n", "4", "--out", str(map_a)]) == 0
    map_b = tmp_path / "grk-a.bin"
    assert cli.main(["analyze", "saliency", "--checkpoint",
                     str(train_dir / "final.b2sm"), "--manifest", str(corpus_dir),
                     "--language", "grk-a", "--n", "4", "--out", str(map_b)]) == 0

    matrix_csv = tmp_path / "matrix.csv"
    assert cli.main(["analyze", "overlap", "--maps", str(map_a), str(map_b),
                     "--ratio", "0.5", "--out", str(matrix_csv)]) == 0
    assert matrix_csv.exists()
    assert matrix_csv.with_suffix(".svg").exists()
    header = matrix_csv.read_text().splitlines()[0]
    assert header == "language,lat-a,grk-a"

    matrix2 = tmp_path / "matrix2.csv"
    assert cli.main(["analyze", "overlap", "--checkpoint",
                     str(train_dir / "final.b2sm"), "--manifest", str(corpus_dir),
                     "--languages", "lat-a,lat-b,grk-a", "--n", "4",
                     "--out", str(matrix2)]) == 0
    assert matrix2.with_suffix(".svg").exists()

    retrain_csv = tmp_path / "retrain.csv"
    assert cli.main(["analyze", "retrain", "--checkpoint",
                     str(train_dir / "final.b2sm"), "--manifest", str(corpus_dir),
                     "--mask-language", "random", "--target", "cyr-a",
                     "--n-samples", "4", "--steps", "2",
                     "--out", str(retrain_csv)]) == 0
    assert "mask_source,target" in retrain_csv.read_text()


def test_rerun_reproduces_curve_exactly(tmp_path):
    cfg = from_flat(TINY_FLAT)
    man = experiment.build_corpus(cfg)
    out1 = experiment.run_train(cfg, tmp_path / "r1", manifest=man)
    out2 = experiment.run_train(cfg, tmp_path / "r2", manifest=man)
    assert (tmp_path / "r1" / "curve.csv").read_bytes() == \
        (tmp_path / "r2" / "curve.csv").read_bytes()
    a, _ = Model.load(out1["checkpoint"])
    b, _ = Model.load(out2["checkpoint"])
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_resume_continues_bit_identically(tmp_path):
    cfg = from_flat(TINY_FLAT)
    man = experiment.build_corpus(cfg)
    full = experiment.run_train(cfg, tmp_path / "full", manifest=man)
    mid_ckpt = tmp_path / "full" / "ckpt-000004.b2sm"
    assert mid_ckpt.exists()
    resumed = experiment.run_train(cfg, tmp_path / "resumed", manifest=man,
                                   resume=mid_ckpt)
    a, _ = Model.load(full["checkpoint"])
    b, _ = Model.load(resumed["checkpoint"])
    assert a.step == b.step == cfg.train.steps
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data), name
    # the resumed curve rows equal the tail of the full curve
    full_rows = (tmp_path / "full" / "curve.csv").read_text().splitlines()[2:]
    res_rows = (tmp_path / "resumed" / "curve.csv").read_text().splitlines()[2:]
    assert full_rows[-len(res_rows):] == res_rows


def test_t3d_preset_activates_all_tiers_from_step_zero(tmp_path):
    cfg = from_flat({**TINY_FLAT, "schedule.ablation": "T3D",
                     "train.steps": 2, "train.eval_interval": 1.0})
    man = experiment.build_corpus(cfg)
    result = experiment.run_train(cfg, tmp_path / "t3d", manifest=man)
    rows = (tmp_path / "t3d" / "curve.csv").read_text().splitlines()[2:]
    active = rows[0].split(",")[-1]
    for lang in man.languages(("T1", "T2", "T3")):
        assert lang in active


def test_suite_quick_help_runs():
    # only check the CLI wiring; the real battery runs in test_acceptance
    parser = cli.build_parser()
    args = parser.parse_args(["suite", "--quick", "--seeds", "1"])
    assert args.quick and args.seeds == 1
