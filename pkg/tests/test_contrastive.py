"""
對比學習：批次建構、MICLe 取樣與 NT-Xent 損失
"""

import math
from collections import Counter

import numpy as np
import pytest

from augment import preset_build
from autodiff import Tensor
from autodiff.gradcheck import max_gradient_error
from contrastive import (
    EpochSampler,
    NTXentConfig,
    build_batch_micle,
    build_batch_simclr,
    image_items,
    micle_pair_indices,
    nt_xent_loss,
    nt_xent_oracle,
)
from contrastive.loss import nt_xent_oracle_terms
from corpus import Bag, Split
from errors import ConfigError, ContractError, DimensionError, EndOfEpoch, NumericError


def make_bag(bag_id, m):
    return Bag(bag_id=bag_id, image_refs=tuple(f"{bag_id}_{i}.ppm" for i in range(m)), label=0,
               split=Split.TRAIN)


class TestEpochSampler:
    def test_without_replacement_within_epoch(self):
        sampler = EpochSampler(list(range(10)), 3, global_seed=1, stage_tag="simclr")
        seen = sampler.take() + sampler.take() + sampler.take()
        assert len(set(seen)) == 9
        with pytest.raises(EndOfEpoch):
            sampler.take()

    def test_next_batch_rolls_over(self):
        sampler = EpochSampler(list(range(4)), 3, global_seed=1, stage_tag="simclr")
        assert sampler.next_batch()[0] == 0
        epoch, batch = sampler.next_batch()
        assert epoch == 1 and len(batch) == 3

    def test_same_seed_same_order(self):
        first = EpochSampler(list(range(20)), 5, 3, "micle")
        second = EpochSampler(list(range(20)), 5, 3, "micle")
        assert first.take() == second.take()

    def test_batch_size_checks(self):
        with pytest.raises(ContractError):
            EpochSampler(list(range(10)), 1, 0, "simclr")
        with pytest.raises(ContractError):
            EpochSampler(list(range(3)), 4, 0, "simclr")


class TestBatches:
    def test_simclr_pairs_share_image(self, tiny_corpus):
        items = image_items(tiny_corpus.split(Split.TRAIN))[:4]
        pipeline = preset_build("derm_pretrain", tiny_corpus.image_size)
        batch = build_batch_simclr(items, pipeline, epoch=0, global_seed=5)
        assert batch.views.shape == (8, 3, 16, 16)
        for k in range(batch.num_pairs):
            a, b = batch.pair(k)
            assert (a.bag_id, a.image_index) == (b.bag_id, b.image_index)
            assert a.sample_seed != b.sample_seed

    def test_epoch_changes_draws(self, tiny_corpus):
        items = image_items(tiny_corpus.split(Split.TRAIN))[:2]
        pipeline = preset_build("derm_pretrain", tiny_corpus.image_size)
        first = build_batch_simclr(items, pipeline, 0, 5)
        second = build_batch_simclr(items, pipeline, 1, 5)
        assert not np.array_equal(first.views.data, second.views.data)

    def test_micle_pairs_come_from_distinct_images(self, tiny_corpus):
        bags = [bag for bag in tiny_corpus.split(Split.TRAIN) if bag.M >= 2][:3]
        pipeline = preset_build("derm_pretrain", tiny_corpus.image_size)
        batch = build_batch_micle(bags, pipeline, 0, 5)
        for k in range(batch.num_pairs):
            a, b = batch.pair(k)
            assert a.bag_id == b.bag_id
            assert a.image_index != b.image_index

    def test_single_image_bags_degenerate_to_simclr(self, tiny_corpus):
        bags = [bag for bag in tiny_corpus.split(Split.TRAIN) if bag.M == 1][:2]
        if len(bags) < 2:
            pytest.skip("資料集中單張影像的 bag 不足")
        pipeline = preset_build("derm_pretrain", tiny_corpus.image_size)
        batch = build_batch_micle(bags, pipeline, 0, 5)
        for k in range(batch.num_pairs):
            a, b = batch.pair(k)
            assert a.image_index == b.image_index == 0
            assert a.sample_seed != b.sample_seed

    def test_worker_count_does_not_change_views(self, tiny_corpus):
        from tools.batch_processor import BatchProcessor

        items = image_items(tiny_corpus.split(Split.TRAIN))[:4]
        pipeline = preset_build("derm_pretrain", tiny_corpus.image_size)
        serial = build_batch_simclr(items, pipeline, 0, 5, processor=BatchProcessor(1))
        threaded = build_batch_simclr(items, pipeline, 0, 5, processor=BatchProcessor(4))
        np.testing.assert_array_equal(serial.views.data, threaded.views.data)


class TestMicleSampler:
    def test_single_image(self):
        assert micle_pair_indices(make_bag("p", 1), 0, 0) == (0, 0)

    def test_distinct_indices(self):
        bag = make_bag("p", 3)
        for epoch in range(50):
            first, second = micle_pair_indices(bag, epoch, 0)
            assert first != second

    def test_unordered_pairs_are_uniform(self):
        bag = make_bag("p", 4)
        counts = Counter(frozenset(micle_pair_indices(bag, epoch, 7)) for epoch in range(6000))
        assert len(counts) == 6
        # 6 個無序對，每個期望 1000 次；卡方檢定 5 自由度、p=0.001 門檻 20.5
        chi2 = sum((c - 1000) ** 2 / 1000 for c in counts.values())
        assert chi2 < 20.5


class TestNTXent:
    def test_hand_computed_value(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        cfg = NTXentConfig(temperature=1.0)
        expected = -math.log(math.e / (math.e + 2))
        assert nt_xent_loss(Tensor(z), cfg).item() == pytest.approx(expected, abs=1e-12)
        np.testing.assert_allclose(nt_xent_oracle_terms(z, cfg), expected, atol=1e-12)

    @pytest.mark.parametrize("temperature", [0.05, 0.1, 0.5, 1.0])
    def test_matches_oracle(self, rng, temperature):
        z = rng.standard_normal((8, 5))
        cfg = NTXentConfig(temperature=temperature)
        assert nt_xent_loss(Tensor(z), cfg).item() == pytest.approx(nt_xent_oracle(z, cfg),
                                                                     rel=1e-6)

    def test_pair_permutation_invariance(self, rng):
        z = rng.standard_normal((8, 4))
        cfg = NTXentConfig(temperature=0.2)
        order = rng.permutation(4)
        permuted = np.concatenate([z[2 * k:2 * k + 2] for k in order])
        assert nt_xent_loss(Tensor(permuted), cfg).item() == pytest.approx(
            nt_xent_loss(Tensor(z), cfg).item(), abs=1e-12)

    def test_positive_scale_invariance(self, rng):
        z = rng.standard_normal((6, 3))
        scaled = z * rng.uniform(0.5, 3.0, (6, 1))
        cfg = NTXentConfig()
        assert nt_xent_loss(Tensor(scaled), cfg).item() == pytest.approx(
            nt_xent_loss(Tensor(z), cfg).item(), abs=1e-10)

    def test_perfect_alignment_limit(self):
        z = np.repeat(np.eye(4), 2, axis=0)
        assert nt_xent_loss(Tensor(z), NTXentConfig(temperature=0.1)).item() < 0.01

    def test_gradient(self, rng):
        z = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        cfg = NTXentConfig(temperature=0.3)
        assert max_gradient_error(lambda: nt_xent_loss(z, cfg), [z]) < 1e-4

    def test_invalid_temperature(self):
        with pytest.raises(ConfigError):
            NTXentConfig(temperature=0.0)

    def test_odd_batch(self, rng):
        with pytest.raises(DimensionError):
            nt_xent_loss(Tensor(rng.standard_normal((5, 3))), NTXentConfig())

    def test_nan_input(self):
        z = np.ones((4, 2))
        z[1, 0] = np.nan
        with pytest.raises(NumericError):
            nt_xent_loss(Tensor(z), NTXentConfig())

    def test_no_nan_with_zero_rows(self):
        loss = nt_xent_loss(Tensor(np.zeros((4, 3))), NTXentConfig())
        assert math.isfinite(loss.item())
