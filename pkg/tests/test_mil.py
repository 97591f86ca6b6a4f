import math
import time

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dapcap.attributes import MultiHotLabel
from dapcap.mil import (
    EPS,
    apnet_forward,
    attribute_prediction_loss,
    bce_loss,
    noisy_or,
    reg_loss,
)
from oracles import noisy_or_product


def make_apnet(d_h, k, seed=0):
    torch.manual_seed(seed)
    head = torch.nn.Linear(d_h, k).double()
    return head


class TestApnetForward:
    def test_zero_weights_give_half(self):
        head = make_apnet(4, 3)
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
        p_raw = apnet_forward(torch.zeros(5, 4, dtype=torch.float64), head)
        assert p_raw.shape == (3, 5)
        assert torch.allclose(p_raw, torch.full((3, 5), 0.5, dtype=torch.float64))

    def test_extreme_logits_clamped(self):
        head = make_apnet(1, 1)
        with torch.no_grad():
            head.weight[:] = 0.0
            head.bias[:] = -1000.0
        p_raw = apnet_forward(torch.zeros(2, 1, dtype=torch.float64), head)
        assert (p_raw >= EPS).all()
        with torch.no_grad():
            head.bias[:] = 1000.0
        p_raw = apnet_forward(torch.zeros(2, 1, dtype=torch.float64), head)
        assert (p_raw <= 1 - EPS).all()

    def test_head_parameter_count(self):
        head = make_apnet(64, 500)
        assert sum(p.numel() for p in head.parameters()) == 500 * 64 + 500

    def test_empty_bag_rejected(self):
        with pytest.raises(ValueError):
            apnet_forward(torch.zeros(0, 4), make_apnet(4, 2))


class TestNoisyOr:
    def test_single_instance_identity(self):
        p_raw = torch.tensor([[0.3], [0.9]], dtype=torch.float64)
        assert torch.allclose(noisy_or(p_raw), p_raw[:, 0])

    def test_half_half(self):
        p = noisy_or(torch.tensor([[0.5, 0.5]], dtype=torch.float64))
        assert p.item() == pytest.approx(0.75, abs=1e-12)

    def test_matches_product_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mat = rng.uniform(EPS, 1 - EPS, size=(3, 4))
            ours = noisy_or(torch.as_tensor(mat)).numpy()
            direct = np.array([noisy_or_product(row) for row in mat])
            assert np.abs(ours - direct).max() < 1e-9

    def test_dominates_each_instance(self):
        rng = np.random.default_rng(1)
        mat = rng.uniform(0.01, 0.99, size=(5, 7))
        p = noisy_or(torch.as_tensor(mat)).numpy()
        assert (p >= mat.max(axis=1) - 1e-12).all()

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_entries(self, seed):
        rng = np.random.default_rng(seed)
        mat = rng.uniform(0.05, 0.9, size=(3, 4))
        base = noisy_or(torch.as_tensor(mat)).numpy()
        k, l = rng.integers(3), rng.integers(4)
        mat[k, l] += 0.05
        bumped = noisy_or(torch.as_tensor(mat)).numpy()
        assert (bumped >= base - 1e-12).all()

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        mat = rng.uniform(0.05, 0.9, size=(4, 6))
        perm = rng.permutation(6)
        assert np.allclose(
            noisy_or(torch.as_tensor(mat)).numpy(),
            noisy_or(torch.as_tensor(mat[:, perm])).numpy(),
        )


class TestBceLoss:
    def test_hand_example_two_ln_two(self):
        loss = bce_loss(
            torch.tensor([0.5, 0.5], dtype=torch.float64),
            MultiHotLabel(bits=np.array([1, 0])),
        )
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_perfect_prediction_near_zero(self):
        k = 6
        bits = np.array([1, 1, 0, 0, 0, 0])
        p = torch.where(torch.as_tensor(bits, dtype=torch.bool),
                        torch.tensor(1.0 - EPS, dtype=torch.float64),
                        torch.tensor(EPS, dtype=torch.float64))
        loss = bce_loss(p, MultiHotLabel(bits=bits))
        assert 0 <= loss.item() <= k * EPS * 2

    def test_duplicating_positives_keeps_value(self):
        p = torch.tensor([0.7, 0.2], dtype=torch.float64)
        single = bce_loss(p, MultiHotLabel(bits=np.array([1, 0])))
        doubled = bce_loss(
            torch.tensor([0.7, 0.7, 0.2, 0.2], dtype=torch.float64),
            MultiHotLabel(bits=np.array([1, 1, 0, 0])),
        )
        assert doubled.item() == pytest.approx(single.item(), rel=1e-12)

    def test_k_pos_zero_contributes_nothing(self):
        loss = bce_loss(
            torch.tensor([0.9, 0.9], dtype=torch.float64),
            MultiHotLabel(bits=np.array([0, 0])),
        )
        assert loss.item() == 0.0


class TestRegLoss:
    def test_hinge_boundary(self):
        p_raw = torch.full((4, 3), 0.5, dtype=torch.float64)
        assert reg_loss(p_raw, k_pos=2, k=4).item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_example(self):
        p_raw = torch.full((10, 2), 0.9, dtype=torch.float64)
        assert reg_loss(p_raw, k_pos=1, k=10).item() == pytest.approx(0.8, abs=1e-9)

    def test_inactive_hinge_zero_gradient(self):
        p_raw = torch.full((4, 2), 0.1, dtype=torch.float64, requires_grad=True)
        loss = reg_loss(p_raw, k_pos=2, k=4)
        assert loss.item() == 0.0
        loss.backward()
        assert p_raw.grad.abs().max().item() == 0.0

    def test_active_hinge_gradient_is_one_over_kl(self):
        k, l = 5, 3
        p_raw = torch.full((k, l), 0.9, dtype=torch.float64, requires_grad=True)
        loss = reg_loss(p_raw, k_pos=1, k=k)
        loss.backward()
        expected = 1.0 / (k * l)
        assert torch.allclose(p_raw.grad, torch.full((k, l), expected, dtype=torch.float64))


class TestAttributePredictionLoss:
    def test_composition_of_hand_examples(self):
        assert 2 * math.log(2) + 0.8 == pytest.approx(2.1863, abs=5e-5)

    def test_loss_at_least_bce(self):
        torch.manual_seed(3)
        head = make_apnet(4, 5, seed=3)
        x = torch.randn(6, 4, dtype=torch.float64)
        bits = np.array([1, 0, 1, 0, 0])
        loss, p = attribute_prediction_loss(x, MultiHotLabel(bits=bits), head)
        only_bce = bce_loss(p, MultiHotLabel(bits=bits))
        assert loss.item() >= only_bce.item() - 1e-12

    def test_k_pos_zero_skips(self):
        head = make_apnet(4, 3)
        x = torch.randn(5, 4, dtype=torch.float64)
        loss, p = attribute_prediction_loss(x, MultiHotLabel(bits=np.zeros(3, int)), head)
        assert loss.item() == 0.0
        assert p.shape == (3,)

    def test_conservative_perfect_prediction_near_zero(self):
        head = make_apnet(2, 2)
        with torch.no_grad():
            head.weight[:] = 0.0
            head.bias[0] = 40.0   # attribute 0 certain
            head.bias[1] = -40.0  # attribute 1 absent
        x = torch.zeros(3, 2, dtype=torch.float64)
        loss, _ = attribute_prediction_loss(x, MultiHotLabel(bits=np.array([1, 0])), head)
        assert loss.item() == pytest.approx(0.0, abs=1e-5)

    def test_finite_difference_gradients(self):
        from dapcap.training import gradient_check

        head = make_apnet(4, 5, seed=11)
        x = torch.randn(6, 4, dtype=torch.float64)
        label = MultiHotLabel(bits=np.array([1, 0, 1, 0, 0]))

        def loss_fn():
            return attribute_prediction_loss(x, label, head)[0]

        report = gradient_check(loss_fn, list(head.named_parameters()), tolerance=1e-4)
        assert report["passed"], report


class TestVanishingGradientReproduction:
    def test_saturated_instance_suppresses_other_gradients(self):
        l = 6
        row = torch.full((1, l), 0.4, dtype=torch.float64)
        row[0, 2] = 1.0 - EPS
        row.requires_grad_(True)
        noisy_or(row).sum().backward()
        grads = row.grad[0].abs()
        others = torch.cat([grads[:2], grads[3:]])
        assert (others <= EPS * l).all()

    def test_regularizer_restores_signal(self):
        k, l = 4, 6
        row = torch.full((k, l), 0.4, dtype=torch.float64)
        row[:, 2] = 1.0 - EPS
        row.requires_grad_(True)
        loss = reg_loss(row, k_pos=1, k=k)
        assert loss.item() > 0
        loss.backward()
        assert (row.grad.abs() >= 1.0 / (k * l) - 1e-15).all()


def test_acceptance_noisy_or_oracle_speed():
    rng = np.random.default_rng(42)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 11))
        l = int(rng.integers(1, 11))
        mat = rng.uniform(EPS, 1 - EPS, size=(k, l))
        ours = noisy_or(torch.as_tensor(mat)).numpy()
        direct = np.array([noisy_or_product(row) for row in mat])
        worst = max(worst, float(np.abs(ours - direct).max()))
    assert worst < 1e-9
    assert time.time() - t0 < 5.0
