"""Build a small trained serving fixture (corpus, checkpoint, tokens,
config) for the UI integration tests. Usage: make_fixture.py OUT_DIR PORT."""

import json
import os
import sys

import numpy as np

from osxray import tensor as T
from osxray.data import make_pairs, select_standard_set, stratified_split
from osxray.layers import EmbeddingNetwork
from osxray.semilive import make_checkpoint
from osxray.siamese import LossConfig, train_epoch
from osxray.synthetic import generate_corpus

HW = (16, 16)


def main(out_dir: str, port: str) -> None:
    corpus = os.path.join(out_dir, "corpus")
    manifest = generate_corpus(corpus, n_per_category=10, noise_level=0.05,
                               seed=5, hw=HW)
    manifest = stratified_split(manifest, 0.2, 0.2, seed=6)

    net = EmbeddingNetwork(input_hw=HW, latent_dim=8, channels=(3, 4, 6),
                           hidden=12, seed=7)
    pairs = make_pairs(manifest.load_split("train"), 80, 0.5, seed=8, target_hw=HW)
    opt = T.Adam(net.parameters(), lr=2e-3)
    rng = np.random.default_rng(9)
    for _ in range(12):
        train_epoch(pairs, net, LossConfig(), opt, batch_size=10, rng=rng)
    net.freeze()

    std, manifest = select_standard_set(manifest, 2, net=net, target_hw=HW)
    manifest.save(os.path.join(corpus, "manifest.tsv"))
    make_checkpoint(1, net, None, std, meta={"margin": 2.0}).save(
        os.path.join(out_dir, "model.ckpt"))

    with open(os.path.join(out_dir, "tokens.json"), "w") as fh:
        json.dump({"dr-token": "doctor", "pt-token": "patient"}, fh)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({
            "checkpoint": "model.ckpt",
            "tokens": "tokens.json",
            "data_dir": "data",
            "listen": f"127.0.0.1:{port}",
            "manifest": "corpus/manifest.tsv",
            "retrain": {"trigger_threshold": 3, "epochs": 1, "guard_delta": 0.01,
                        "n_pairs": 40, "batch_size": 10, "learning_rate": 1e-4,
                        "seed": 30},
        }, fh)
    print("fixture ready")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
