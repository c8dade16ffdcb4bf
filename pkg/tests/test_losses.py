import math

import numpy as np
import pytest
import torch

from changekit.losses import (
    LossConfig,
    aux_loss,
    hard_mask,
    hard_mask_from_probs,
    main_loss,
    total_loss,
)

from conftest import central_diff_max_rel_err


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def main_loss_loop(logits: np.ndarray, label: np.ndarray, cfg: LossConfig) -> float:
    """Naive per-pixel re-implementation used as the oracle."""
    k, h, w = logits.shape
    ce_sum, n_valid = 0.0, 0
    for y in range(h):
        for x in range(w):
            if label[y, x] == cfg.ignore_index:
                continue
            p = _softmax(logits[:, y, x])
            ce_sum += -math.log(p[label[y, x]])
            n_valid += 1
    ce = ce_sum / n_valid

    present = sorted({int(v) for v in label.ravel() if v != cfg.ignore_index})
    dices = []
    for cls in present:
        inter = denom = 0.0
        for y in range(h):
            for x in range(w):
                if label[y, x] == cfg.ignore_index:
                    continue
                p = _softmax(logits[:, y, x])[cls]
                t = 1.0 if label[y, x] == cls else 0.0
                inter += p * t
                denom += p + t
        dices.append((2 * inter + cfg.dice_smooth) / (denom + cfg.dice_smooth))
    dice = 1.0 - sum(dices) / len(dices)
    return cfg.ce_weight * ce + cfg.dice_weight * dice


def aux_loss_loop(scores, label, mask, cfg) -> float:
    total, count = 0.0, 0
    _, h, w = scores.shape
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or label[y, x] == cfg.ignore_index:
                continue
            p = _softmax(scores[:, y, x])
            total += -math.log(p[label[y, x]])
            count += 1
    return total / (count + cfg.epsilon)


class TestMainLoss:
    def test_perfect_prediction_near_zero(self):
        rng = np.random.default_rng(0)
        label = rng.integers(0, 6, size=(8, 8))
        logits = np.full((6, 8, 8), -10.0)
        for y in range(8):
            for x in range(8):
                logits[label[y, x], y, x] = 10.0  # magnitude 20 separation
        loss = main_loss(torch.from_numpy(logits), torch.from_numpy(label), LossConfig())
        assert loss.item() < 1e-3

    def test_uniform_logits_ce_is_log_k(self):
        cfg = LossConfig(ce_weight=1.0, dice_weight=0.0)
        logits = torch.zeros(6, 8, 8, dtype=torch.float64)
        label = torch.randint(0, 6, (8, 8))
        loss = main_loss(logits, label, cfg)
        assert abs(loss.item() - math.log(6)) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((6, 8, 8)) * 3
        label = rng.integers(0, 6, size=(8, 8))
        label[rng.random((8, 8)) < 0.15] = 255
        got = main_loss(torch.from_numpy(logits), torch.from_numpy(label), LossConfig())
        want = main_loss_loop(logits, label, LossConfig())
        assert abs(got.item() - want) < 1e-6

    def test_all_ignored_returns_zero_with_warning(self):
        logits = torch.randn(6, 4, 4, dtype=torch.float64)
        label = torch.full((4, 4), 255, dtype=torch.long)
        with pytest.warns(UserWarning, match="ignored"):
            loss = main_loss(logits, label, LossConfig())
        assert loss.item() == 0.0

    def test_nonnegative_and_finite(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            logits = torch.from_numpy(rng.standard_normal((6, 6, 6)) * 10)
            label = torch.from_numpy(rng.integers(0, 6, size=(6, 6)))
            loss = main_loss(logits, label, LossConfig())
            assert loss.item() >= 0 and math.isfinite(loss.item())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        label = torch.from_numpy(rng.integers(0, 6, size=(8, 8)))
        logits = torch.from_numpy(rng.standard_normal((6, 8, 8)))
        cfg = LossConfig()
        err = central_diff_max_rel_err(lambda t: main_loss(t, label, cfg), logits,
                                       n_coords=60, h=1e-6)
        assert err < 1e-4


class TestHardMask:
    def test_confident_pixel_not_hard(self):
        probs = torch.tensor([[[0.9]], [[0.1]]])
        label = torch.zeros(1, 1, dtype=torch.long)
        assert not hard_mask_from_probs(probs, label, LossConfig()).any()

    def test_uniform_probs_hard(self):
        probs = torch.full((6, 2, 2), 1.0 / 6.0)
        label = torch.zeros(2, 2, dtype=torch.long)
        assert hard_mask_from_probs(probs, label, LossConfig()).all()

    def test_boundary_exactly_tau_not_hard(self):
        probs = torch.tensor([[[0.80]], [[0.20]]], dtype=torch.float64)
        label = torch.zeros(1, 1, dtype=torch.long)
        assert not hard_mask_from_probs(probs, label, LossConfig(tau=0.80)).any()

    def test_ignored_pixels_never_hard(self):
        logits = torch.zeros(6, 4, 4)  # uniform: every real pixel is hard
        label = torch.full((4, 4), 255, dtype=torch.long)
        label[0, 0] = 1
        mask = hard_mask(logits, label, LossConfig())
        assert mask[0, 0, 0]
        assert mask.sum() == 1

    def test_matches_loop(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((6, 16, 16))
        label = rng.integers(0, 6, size=(16, 16))
        label[rng.random((16, 16)) < 0.1] = 255
        cfg = LossConfig()
        mask = hard_mask(torch.from_numpy(logits), torch.from_numpy(label), cfg)[0].numpy()
        for y in range(16):
            for x in range(16):
                p = _softmax(logits[:, y, x])
                want = (p.max() < cfg.tau) and label[y, x] != 255
                assert mask[y, x] == want


class TestAuxLoss:
    def test_empty_mask_zero(self):
        scores = torch.randn(6, 8, 8)
        label = torch.randint(0, 6, (8, 8))
        mask = torch.zeros(8, 8, dtype=torch.bool)
        assert aux_loss(scores, label, mask, LossConfig()).item() == 0.0

    def test_single_pixel_equals_its_ce(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal((6, 8, 8))
        label = rng.integers(0, 6, size=(8, 8))
        mask = np.zeros((8, 8), dtype=bool)
        mask[3, 4] = True
        got = aux_loss(torch.from_numpy(scores), torch.from_numpy(label),
                       torch.from_numpy(mask), LossConfig())
        pixel_ce = -math.log(_softmax(scores[:, 3, 4])[label[3, 4]])
        assert abs(got.item() - pixel_ce) <= pixel_ce * 2e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal((6, 16, 16)) * 2
        label = rng.integers(0, 6, size=(16, 16))
        label[rng.random((16, 16)) < 0.1] = 255
        mask = rng.random((16, 16)) < 0.4
        cfg = LossConfig()
        got = aux_loss(torch.from_numpy(scores), torch.from_numpy(label),
                       torch.from_numpy(mask & (label != 255)), cfg)
        want = aux_loss_loop(scores, label, mask & (label != 255), cfg)
        assert abs(got.item() - want) < 1e-6

    def test_invariant_to_scores_outside_mask(self):
        rng = np.random.default_rng(4)
        scores = rng.standard_normal((6, 8, 8))
        label = rng.integers(0, 6, size=(8, 8))
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:4, 2:4] = True
        perturbed = scores + rng.standard_normal((6, 8, 8)) * (~mask)
        cfg = LossConfig()
        a = aux_loss(torch.from_numpy(scores), torch.from_numpy(label),
                     torch.from_numpy(mask), cfg)
        b = aux_loss(torch.from_numpy(perturbed), torch.from_numpy(label),
                     torch.from_numpy(mask), cfg)
        assert abs(a.item() - b.item()) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        label = torch.from_numpy(rng.integers(0, 6, size=(8, 8)))
        mask = torch.from_numpy(rng.random((8, 8)) < 0.5)
        scores = torch.from_numpy(rng.standard_normal((6, 8, 8)))
        cfg = LossConfig()
        err = central_diff_max_rel_err(lambda t: aux_loss(t, label, mask, cfg), scores,
                                       n_coords=60, h=1e-6)
        assert err < 1e-4


class TestTotalLoss:
    def test_weighted_sum(self):
        cfg = LossConfig(lambda_aux=0.4)
        got = total_loss(torch.tensor(1.0), torch.tensor(0.5), cfg)
        assert abs(got.item() - 1.2) < 1e-7

    def test_lambda_zero(self):
        cfg = LossConfig(lambda_aux=0.0)
        main = torch.tensor(0.8341)
        assert total_loss(main, torch.tensor(123.0), cfg).item() == main.item()

    def test_zero_aux(self):
        cfg = LossConfig(lambda_aux=0.4)
        main = torch.tensor(0.8341)
        assert total_loss(main, torch.tensor(0.0), cfg).item() == main.item()


class TestConfigValidation:
    def test_tau_range(self):
        with pytest.raises(ValueError):
            LossConfig(tau=1.0)

    def test_lambda_nonnegative(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_aux=-0.1)
