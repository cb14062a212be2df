import json
import os

import numpy as np
import pytest

from osxray.cli import main
from osxray.data import DatasetManifest


def read_bytes_tree(root):
    out = {}
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isfile(path):
            with open(path, "rb") as fh:
                out[name] = fh.read()
    return out


class TestGenSynthetic:
    def test_counts_and_manifest(self, tmp_path):
        out = tmp_path / "corpus"
        assert main(["gen-synthetic", str(out), "--n-per-category", "10",
                     "--hw", "16", "--test-frac", "0", "--val-frac", "0"]) == 0
        manifest = DatasetManifest.load(str(out / "manifest.tsv"))
        assert len(manifest.records) == 30
        pgms = [n for n in os.listdir(out) if n.endswith(".pgm")]
        assert len(pgms) == 30

    def test_same_seed_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["gen-synthetic", str(out), "--n-per-category", "5", "--hw", "16",
                  "--seed", "3"])
        assert read_bytes_tree(a) == read_bytes_tree(b)

    def test_zero_noise_varies_only_geometry(self, tmp_path):
        out = tmp_path / "quiet"
        main(["gen-synthetic", str(out), "--n-per-category", "4", "--hw", "16",
              "--noise-level", "0", "--categories", "hbar",
              "--test-frac", "0", "--val-frac", "0"])
        manifest = DatasetManifest.load(str(out / "manifest.tsv"))
        imgs = [manifest.load_sample(r).pixels for r in manifest.records]
        for img in imgs:
            assert set(np.unique(img)) <= {30, 220}

    def test_split_fractions_applied(self, tmp_path):
        out = tmp_path / "split"
        main(["gen-synthetic", str(out), "--n-per-category", "10", "--hw", "16",
              "--test-frac", "0.2", "--val-frac", "0.2"])
        manifest = DatasetManifest.load(str(out / "manifest.tsv"))
        for cat in ("hbar", "vbar", "blob"):
            splits = [r.split for r in manifest.records if r.category == cat]
            assert splits.count("test") == 2
            assert splits.count("val") == 2
            assert splits.count("train") == 6


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synthetic -> train-dagan -> augment -> train-siamese, small scale."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    manifest_path = str(corpus / "manifest.tsv")
    dagan_ckpt = str(root / "dagan.ckpt")
    model_ckpt = str(root / "model.ckpt")
    assert main(["gen-synthetic", str(corpus), "--n-per-category", "12",
                 "--hw", "16", "--seed", "1"]) == 0
    assert main(["train-dagan", "--manifest", manifest_path, "--checkpoint",
                 dagan_ckpt, "--steps", "60", "--hw", "16", "--latent-dim", "8",
                 "--batch-size", "6", "--seed", "2", "--log-every", "0"]) == 0
    assert main(["augment", "--manifest", manifest_path, "--checkpoint", dagan_ckpt,
                 "--k-augment", "1", "--seed", "3"]) == 0
    assert main(["train-siamese", "--manifest", manifest_path, "--checkpoint",
                 model_ckpt, "--dagan-checkpoint", dagan_ckpt, "--epochs", "12",
                 "--pairs", "80", "--hw", "16", "--latent-dim", "8",
                 "--batch-size", "10", "--lr", "2e-3", "--std-k", "2",
                 "--seed", "4", "--log-every", "0"]) == 0
    return {"root": root, "manifest": manifest_path, "dagan": dagan_ckpt,
            "model": model_ckpt}


class TestPipelineArtifacts:
    def test_dagan_artifacts(self, pipeline):
        assert os.path.exists(pipeline["dagan"])
        with open(pipeline["dagan"] + ".loss.csv") as fh:
            lines = fh.read().strip().splitlines()
        assert lines[0] == "step,loss,d_loss,g_loss"
        assert len(lines) == 61
        run = json.load(open(pipeline["dagan"] + ".run.json"))
        assert run["seed"] == 2

    def test_augment_updated_manifest(self, pipeline):
        manifest = DatasetManifest.load(pipeline["manifest"])
        generated = [r for r in manifest.records if r.source == "generated"]
        # one variant per real train image (12 per category minus test/val/standard)
        real_train = [r for r in manifest.records
                      if r.source == "real" and r.split in ("train", "standard")]
        assert generated
        assert all(r.split == "train" for r in generated)

    def test_siamese_artifacts_and_standard_split(self, pipeline):
        manifest = DatasetManifest.load(pipeline["manifest"])
        std = [r for r in manifest.records if r.split == "standard"]
        assert len(std) == 6  # 2 per category
        assert all(r.source == "real" for r in std)
        with open(pipeline["model"] + ".loss.csv") as fh:
            lines = fh.read().strip().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == 13

    def test_evaluate_writes_report(self, pipeline, tmp_path, capsys):
        json_out = str(tmp_path / "eval.json")
        code = main(["evaluate", "--manifest", pipeline["manifest"],
                     "--checkpoint", pipeline["model"], "--json-out", json_out])
        assert code == 0
        printed = capsys.readouterr().out
        assert "accuracy:" in printed
        blob = json.load(open(json_out))
        assert blob["n"] == 6  # 2 test images x 3 categories
        assert 0.0 <= blob["accuracy"] <= 1.0
        assert "dissimilarity" in blob

    def test_diagnose_standard_member_self_consistency(self, pipeline, capsys):
        manifest = DatasetManifest.load(pipeline["manifest"])
        member = next(r for r in manifest.records if r.split == "standard")
        code = main(["diagnose", manifest.resolve(member),
                     "--checkpoint", pipeline["model"]])
        assert code == 0
        printed = capsys.readouterr().out
        assert f"predicted category: {member.category}" in printed

    def test_training_is_reproducible(self, tmp_path):
        histories = []
        for name in ("a", "b"):
            corpus = tmp_path / name
            ckpt = str(tmp_path / f"{name}.ckpt")
            assert main(["gen-synthetic", str(corpus), "--n-per-category", "8",
                         "--hw", "16", "--seed", "9"]) == 0
            assert main(["train-siamese", "--manifest", str(corpus / "manifest.tsv"),
                         "--checkpoint", ckpt, "--epochs", "3", "--pairs", "30",
                         "--hw", "16", "--latent-dim", "8", "--std-k", "1",
                         "--seed", "9", "--log-every", "0"]) == 0
            with open(ckpt + ".loss.csv") as fh:
                histories.append(fh.read())
        assert histories[0] == histories[1]


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert main(["no-such-command"]) == 1
        assert main(["train-dagan"]) == 1  # missing required flags

    def test_data_error_is_two(self, tmp_path):
        assert main(["evaluate", "--manifest", str(tmp_path / "nope.tsv"),
                     "--checkpoint", str(tmp_path / "nope.ckpt")]) == 2

    def test_model_error_is_three(self, tmp_path):
        # a checkpoint without generator parameters cannot drive augment
        corpus = tmp_path / "c"
        ckpt = str(tmp_path / "gen-free.ckpt")
        assert main(["gen-synthetic", str(corpus), "--n-per-category", "6",
                     "--hw", "16", "--seed", "11"]) == 0
        assert main(["train-siamese", "--manifest", str(corpus / "manifest.tsv"),
                     "--checkpoint", ckpt, "--epochs", "1", "--pairs", "10",
                     "--hw", "16", "--latent-dim", "8", "--std-k", "1",
                     "--seed", "11", "--log-every", "0"]) == 0
        assert main(["augment", "--manifest", str(corpus / "manifest.tsv"),
                     "--checkpoint", ckpt]) == 3

    def test_double_augment_rejected(self, pipeline):
        assert main(["augment", "--manifest", pipeline["manifest"],
                     "--checkpoint", pipeline["dagan"]]) == 2

    def test_evaluate_uses_only_real_test_samples(self, pipeline):
        manifest = DatasetManifest.load(pipeline["manifest"])
        test = manifest.by_split("test")
        assert test
        assert all(r.source == "real" for r in test)
