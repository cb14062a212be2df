import json
import shutil

import numpy as np
import pytest

from osxray import tensor as T
from osxray.data import make_pairs, select_standard_set, stratified_split
from osxray.layers import EmbeddingNetwork
from osxray.semilive import RetrainPolicy, make_checkpoint
from osxray.service import ServiceConfig
from osxray.siamese import LossConfig, train_epoch
from osxray.synthetic import generate_corpus

TOY_HW = (16, 16)


@pytest.fixture(scope="session")
def toy_assets(tmp_path_factory):
    """A small trained model, its corpus manifest, checkpoint and token table.

    Trained once per session at 16x16 so service/integration tests run fast.
    """
    root = tmp_path_factory.mktemp("toy")
    corpus_dir = root / "corpus"
    manifest = generate_corpus(str(corpus_dir), n_per_category=10, noise_level=0.05,
                               seed=5, hw=TOY_HW)
    manifest = stratified_split(manifest, 0.2, 0.2, seed=6)

    net = EmbeddingNetwork(input_hw=TOY_HW, latent_dim=8, channels=(3, 4, 6),
                           hidden=12, seed=7)
    train_samples = manifest.load_split("train")
    pairs = make_pairs(train_samples, 80, 0.5, seed=8, target_hw=TOY_HW)
    opt = T.Adam(net.parameters(), lr=2e-3)
    rng = np.random.default_rng(9)
    for _ in range(12):
        train_epoch(pairs, net, LossConfig(), opt, batch_size=10, rng=rng)
    net.freeze()

    std, manifest = select_standard_set(manifest, 2, net=net, target_hw=TOY_HW)
    manifest.save(str(corpus_dir / "manifest.tsv"))

    ckpt_path = root / "model.ckpt"
    make_checkpoint(1, net, None, std, meta={"margin": 2.0}).save(str(ckpt_path))

    tokens_path = root / "tokens.json"
    tokens_path.write_text(json.dumps({"dr-token": "doctor", "pt-token": "patient"}))

    return {
        "root": root,
        "corpus_dir": corpus_dir,
        "manifest_path": corpus_dir / "manifest.tsv",
        "checkpoint_path": ckpt_path,
        "tokens_path": tokens_path,
        "hw": TOY_HW,
    }


@pytest.fixture
def make_config(toy_assets, tmp_path):
    """Per-test service config with a private copy of the serving checkpoint."""

    def _make(**retrain_overrides) -> ServiceConfig:
        ckpt = tmp_path / "serving.ckpt"
        shutil.copy(toy_assets["checkpoint_path"], ckpt)
        policy = RetrainPolicy(trigger_threshold=retrain_overrides.pop("trigger_threshold", 50),
                               epochs=retrain_overrides.pop("epochs", 1),
                               n_pairs=retrain_overrides.pop("n_pairs", 40),
                               batch_size=10, learning_rate=1e-4, seed=30,
                               **retrain_overrides)
        return ServiceConfig(checkpoint=str(ckpt),
                             tokens=str(toy_assets["tokens_path"]),
                             data_dir=str(tmp_path / "srv"),
                             manifest=str(toy_assets["manifest_path"]),
                             retrain=policy)

    return _make
