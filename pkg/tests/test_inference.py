import numpy as np
import pytest

from osxray.data import ImageSample, StandardSet, normalize_resize
from osxray.errors import DomainError
from osxray.inference import (Diagnosis, class_energies, diagnose,
                              dissimilarity_report, pick_category)
from osxray.layers import EmbeddingNetwork
from osxray.siamese import energy
from osxray.tensor import Tensor


HW = (16, 16)


def tiny_net(seed=0):
    return EmbeddingNetwork(input_hw=HW, latent_dim=6, channels=(2, 3, 4),
                            hidden=8, seed=seed)


def random_query(seed):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, (1, 1, *HW)))


def build_std(net, images: dict[str, list[np.ndarray]]) -> StandardSet:
    members = {}
    for cat, imgs in images.items():
        row = []
        for i, img in enumerate(imgs):
            z = net.forward(Tensor(img.reshape(1, 1, *HW))).data[0].copy()
            row.append((f"{cat}-{i}", z))
        members[cat] = row
    return StandardSet(members)


class TestClassEnergies:
    def test_single_member_mean_is_member_energy(self):
        net = tiny_net()
        rng = np.random.default_rng(1)
        std = build_std(net, {"a": [rng.uniform(0, 1, HW).astype(np.float32)]})
        means, members = class_energies(random_query(2), std, net)
        assert means["a"] == pytest.approx(members["a"][0])

    def test_query_that_is_a_member_scores_zero_for_it(self):
        net = tiny_net()
        img = np.random.default_rng(3).uniform(0, 1, HW).astype(np.float32)
        std = build_std(net, {"a": [img]})
        _, members = class_energies(Tensor(img.reshape(1, 1, *HW)), std, net)
        assert members["a"][0] == pytest.approx(0.0, abs=1e-5)

    def test_matches_brute_force_recomputation(self):
        net = tiny_net(seed=4)
        rng = np.random.default_rng(5)
        imgs = {"a": [rng.uniform(0, 1, HW).astype(np.float32) for _ in range(2)],
                "b": [rng.uniform(0, 1, HW).astype(np.float32) for _ in range(2)]}
        std = build_std(net, imgs)
        query = random_query(6)
        means, _ = class_energies(query, std, net)
        zq = net.forward(query).data[0]
        for cat, cat_imgs in imgs.items():
            brute = np.mean([energy(zq, net.forward(
                Tensor(im.reshape(1, 1, *HW))).data[0]) for im in cat_imgs])
            assert means[cat] == pytest.approx(brute, abs=1e-4)

    def test_empty_standard_set_rejected(self):
        with pytest.raises(DomainError):
            class_energies(random_query(7), StandardSet(), tiny_net())


class TestDiagnose:
    def test_argmin_wins(self):
        assert pick_category({"a": 0.1, "b": 2.0}) == "a"
        assert pick_category({"b": 0.1, "a": 2.0}) == "b"

    def test_tie_breaks_lexicographically(self):
        assert pick_category({"b": 1.0, "a": 1.0}) == "a"
        assert pick_category({"zeta": 0.5, "alpha": 0.5, "mid": 0.5}) == "alpha"

    def test_argmin_invariant_under_monotone_rescaling(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            means = {f"c{i}": float(rng.uniform(0.1, 3)) for i in range(4)}
            base = pick_category(means)
            assert pick_category({c: 2 * v for c, v in means.items()}) == base
            assert pick_category({c: v + 1 for c, v in means.items()}) == base

    def test_diagnosis_fields(self):
        net = tiny_net(seed=9)
        rng = np.random.default_rng(10)
        std = build_std(net, {"a": [rng.uniform(0, 1, HW).astype(np.float32)],
                              "b": [rng.uniform(0, 1, HW).astype(np.float32)]})
        result = diagnose(random_query(11), std, net, checkpoint_version=3)
        assert isinstance(result, Diagnosis)
        assert set(result.per_category_mean_energy) == {"a", "b"}
        assert result.predicted_category == pick_category(result.per_category_mean_energy)
        assert result.checkpoint_version == 3
        assert result.attention_map.shape == HW
        assert np.all((result.attention_map >= 0) & (result.attention_map <= 1))

    def test_deterministic_for_fixed_network(self):
        net = tiny_net(seed=12)
        rng = np.random.default_rng(13)
        std = build_std(net, {"a": [rng.uniform(0, 1, HW).astype(np.float32)],
                              "b": [rng.uniform(0, 1, HW).astype(np.float32)]})
        q = random_query(14)
        first = diagnose(q, std, net, with_attention=False)
        second = diagnose(q, std, net, with_attention=False)
        assert first.per_category_mean_energy == second.per_category_mean_energy
        assert first.predicted_category == second.predicted_category


class TestDissimilarityReport:
    def test_collapsed_network_gives_zero_buckets(self):
        net = tiny_net(seed=15)
        net.fc2.weight.data[:] = 0
        net.fc2.bias.data[:] = 0
        rng = np.random.default_rng(16)
        std = build_std(net, {"a": [rng.uniform(0, 1, HW).astype(np.float32)],
                              "b": [rng.uniform(0, 1, HW).astype(np.float32)]})
        samples = [ImageSample("t0", rng.integers(0, 256, HW, dtype=np.uint8), "a")]
        report = dissimilarity_report(samples, std, net,
                                      lambda s: normalize_resize(s, HW))
        assert report.like.maximum == pytest.approx(0.0, abs=1e-5)
        assert report.unlike.maximum == pytest.approx(0.0, abs=1e-5)

    def test_single_sample_stats_equal_values(self):
        net = tiny_net(seed=17)
        rng = np.random.default_rng(18)
        std = build_std(net, {"a": [rng.uniform(0, 1, HW).astype(np.float32)],
                              "b": [rng.uniform(0, 1, HW).astype(np.float32)]})
        sample = ImageSample("t0", rng.integers(0, 256, HW, dtype=np.uint8), "a")
        report = dissimilarity_report([sample], std, net,
                                      lambda s: normalize_resize(s, HW))
        assert report.like.count == 1
        assert report.unlike.count == 1
        assert report.like.minimum == report.like.maximum == report.like.mean
        means, _ = class_energies(normalize_resize(sample, HW), std, net)
        assert report.like.mean == pytest.approx(means["a"])
        assert report.unlike.mean == pytest.approx(means["b"])

    def test_empty_sample_list_rejected(self):
        with pytest.raises(DomainError):
            dissimilarity_report([], StandardSet({"a": []}), tiny_net(), lambda s: s)


class TestBruteForceEquivalence:
    def test_fifty_random_queries(self):
        net = tiny_net(seed=19)
        rng = np.random.default_rng(20)
        imgs = {c: [rng.uniform(0, 1, HW).astype(np.float32) for _ in range(3)]
                for c in ("a", "b", "c")}
        std = build_std(net, imgs)
        for i in range(50):
            q = random_query(100 + i)
            means, _ = class_energies(q, std, net)
            zq = net.forward(q).data[0]
            for cat, cat_imgs in imgs.items():
                brute = np.mean([energy(zq, net.forward(
                    Tensor(im.reshape(1, 1, *HW))).data[0]) for im in cat_imgs])
                assert abs(means[cat] - brute) <= 1e-4
