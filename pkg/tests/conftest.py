import os

# desk-scale matrices: single-threaded BLAS is both faster and deterministic;
# must be set before numpy initializes
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from b2s import corpus
from b2s.model import Model, ModelConfig


@pytest.fixture(scope="session")
def tiny_manifest():
    cfgs = corpus.adaptation_study_config(
        seed=3, d_mel=8, t1_n=24, t2_n=12, t3_n=8, target_n=16,
        duration=2, noise_scale=0.0, text_len=(3, 5))
    return corpus.build_tiered_corpus(cfgs, seed=3)


@pytest.fixture()
def tiny_model(tiny_manifest):
    speakers = tuple(s for e in tiny_manifest.entries for s in e["speakers"])
    cfg = ModelConfig(languages=tuple(tiny_manifest.languages()),
                      speakers=speakers, d_mel=8, enc_layers=1, dec_layers=1,
                      heads=2, d_model=16, d_ff=24, postnet_layers=2,
                      postnet_channels=8, lang_embed_dim=4, speaker_embed_dim=4,
                      cond_hidden=6, cond_dim=6, prenet_hidden=8)
    return Model(cfg, seed=11)
