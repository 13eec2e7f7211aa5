import numpy as np
import pytest

from routetree.autodiff import Tensor
from routetree.errors import BatchTooSmall, LevelMismatch, MissingLevel
from routetree.objective import (
    LossConfig,
    info_nce,
    l1_penalty,
    level_losses,
    ntvd_pair_matrix,
)


class TestLossOracles:
    def test_disjoint_one_hot_pair(self):
        """B=2 disjoint one-hots: sim matrix [[0,-1],[-1,0]], symmetric terms.

        Each of the four softmax terms is log(1 + e^{-1}); the closed form
        of the total is therefore ln(1 + e^{-1}) ~ 0.31326.
        """
        q = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        c = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss = info_nce(q, c).data.item()
        assert loss == pytest.approx(np.log(1 + np.exp(-1)), abs=1e-5)

    def test_identical_assignments_give_ln_b(self):
        for bsz in (2, 5, 16):
            rows = np.tile(np.full(4, 0.25), (bsz, 1))
            loss = info_nce(Tensor(rows), Tensor(rows)).data.item()
            assert loss == pytest.approx(np.log(bsz), abs=1e-6)

    def test_perfect_alignment_floor(self):
        """All pairs aligned, all negatives at distance 1: the loss floor."""
        bsz = 8
        rows = np.eye(bsz)
        loss = info_nce(Tensor(rows), Tensor(rows)).data.item()
        expected = np.log(1 + (bsz - 1) * np.exp(-1))
        assert loss == pytest.approx(expected, abs=1e-9)


class TestInfoNce:
    def test_batch_too_small(self):
        one = Tensor(np.ones((1, 4)))
        with pytest.raises(BatchTooSmall):
            info_nce(one, one)

    def test_shape_mismatch(self):
        with pytest.raises(LevelMismatch):
            info_nce(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 8))))

    def test_symmetric_in_pair_order(self, rng):
        q = rng.dirichlet(np.ones(8), size=6)
        c = rng.dirichlet(np.ones(8), size=6)
        perm = rng.permutation(6)
        a = info_nce(Tensor(q), Tensor(c)).data.item()
        b = info_nce(Tensor(q[perm]), Tensor(c[perm])).data.item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        q = rng.dirichlet(np.ones(4), size=3)
        c = rng.dirichlet(np.ones(4), size=3)
        qt = Tensor(q.copy(), requires_grad=True)
        ct = Tensor(c.copy(), requires_grad=True)
        info_nce(qt, ct).backward()
        eps = 1e-6
        flat = qt.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = info_nce(Tensor(qt.data), Tensor(c)).data.item()
            flat[i] = orig - eps
            fm = info_nce(Tensor(qt.data), Tensor(c)).data.item()
            flat[i] = orig
            assert qt.grad.reshape(-1)[i] == pytest.approx(
                (fp - fm) / (2 * eps), abs=1e-5)


class TestPairMatrix:
    def test_matches_direct_computation(self, rng):
        q = rng.dirichlet(np.ones(5), size=3)
        c = rng.dirichlet(np.ones(5), size=4)
        got = ntvd_pair_matrix(Tensor(q), Tensor(c)).data
        for i in range(3):
            for j in range(4):
                assert got[i, j] == pytest.approx(
                    -0.5 * np.abs(q[i] - c[j]).sum(), abs=1e-12)


class TestLevelLosses:
    def make_levels(self, rng, depth=3, bsz=4):
        return [Tensor(rng.dirichlet(np.ones(2**h), size=bsz))
                for h in range(depth + 1)]

    def test_single_defaults_to_deepest(self, rng):
        q = self.make_levels(rng)
        c = self.make_levels(rng)
        assert level_losses(q, c, "single").data == \
            info_nce(q[3], c[3]).data

    def test_missing_level(self, rng):
        q = self.make_levels(rng)
        with pytest.raises(MissingLevel):
            level_losses(q, q, "single", 4)

    def test_sum_all_levels(self, rng):
        q = self.make_levels(rng)
        c = self.make_levels(rng)
        total = level_losses(q, c, "sum_all_levels").data
        expected = sum(info_nce(q[h], c[h]).data for h in range(1, 4))
        assert total == pytest.approx(expected, abs=1e-12)


def test_l1_penalty(rng):
    rows = rng.normal(size=(4, 6))
    got = l1_penalty(Tensor(rows), 0.3).data.item()
    assert got == pytest.approx(0.3 * np.abs(rows).sum(axis=1).mean(),
                                abs=1e-12)
    assert l1_penalty(Tensor(rows), 0.0).data == 0.0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(level_mode="bogus")
    with pytest.raises(ValueError):
        LossConfig(l1_weight=-1)
