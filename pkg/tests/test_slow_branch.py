"""GRU cell, slow trunk, head activations, warm-up packet."""

import numpy as np
import pytest

from slowfast_se.slow_branch import (
    GruLayerWeights,
    SlowState,
    activate_head,
    gru_cell_step,
    init_slow_branch_weights,
    slow_forward,
    warmup_packet,
)


def zero_gru(in_dim, h_dim):
    return GruLayerWeights(
        w_z=np.zeros((in_dim, h_dim)), w_r=np.zeros((in_dim, h_dim)),
        w_n=np.zeros((in_dim, h_dim)), u_z=np.zeros((h_dim, h_dim)),
        u_r=np.zeros((h_dim, h_dim)), u_n=np.zeros((h_dim, h_dim)),
        b_z=np.zeros(h_dim), b_r=np.zeros(h_dim), b_n=np.zeros(h_dim),
    )


class TestGruCell:
    def test_zero_weights_halve_state(self):
        # z = r = 0.5, n = 0 -> h' = 0.5 h, for any input
        rng = np.random.default_rng(0)
        w = zero_gru(3, 5)
        for _ in range(10):
            h = rng.standard_normal(5)
            x = rng.standard_normal(3)
            assert np.allclose(gru_cell_step(x, h, w), 0.5 * h, atol=1e-12)

    def test_saturated_update_gate_freezes_state(self):
        w = zero_gru(3, 4)
        w.b_z[...] = 20.0  # z ~ 1
        h = np.array([1.0, -2.0, 3.0, 0.5])
        x = np.array([5.0, -5.0, 1.0])
        assert np.allclose(gru_cell_step(x, h, w), h, atol=1e-8)

    def test_open_gates_pass_tanh_of_input(self):
        # z ~ 0 and h = 0 -> h' ~ tanh(W_n x)
        w = zero_gru(4, 4)
        w.b_z[...] = -20.0
        w.w_n[...] = np.eye(4)
        x = np.array([0.1, -0.2, 0.05, 0.0])
        got = gru_cell_step(x, np.zeros(4), w)
        assert np.allclose(got, np.tanh(x), atol=1e-8)

    def test_shape_mismatch_rejected(self):
        w = zero_gru(3, 4)
        with pytest.raises(ValueError):
            gru_cell_step(np.zeros(5), np.zeros(4), w)


class TestActivateHead:
    def test_ssmm_zero_raw(self):
        p = activate_head(np.zeros(8), "ssmm")
        assert np.allclose(p.a, 0.5) and np.allclose(p.g, 0.5)

    def test_film_zero_raw_is_identity(self):
        p = activate_head(np.zeros(6), "film")
        assert np.allclose(p.alpha, 1.0) and np.allclose(p.beta, 0.0)

    def test_ec_identity(self):
        raw = np.array([1.0, -2.0, 3.0])
        p = activate_head(raw, "ec")
        assert np.array_equal(p.e, raw)

    def test_ssmm_saturation_stays_below_one(self):
        raw = np.zeros(4)
        raw[0] = 20.0
        p = activate_head(raw, "ssmm")
        assert p.a[0] > 0.999999 and p.a[0] < 1.0

    def test_ssmm_range_property(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = activate_head(rng.standard_normal(16) * 10, "ssmm")
            assert np.all((p.a > 0) & (p.a < 1))
            assert np.all((p.g > 0) & (p.g < 1))

    def test_odd_size_rejected_for_two_halves(self):
        with pytest.raises(ValueError):
            activate_head(np.zeros(5), "ssmm")


class TestSlowForward:
    def test_zero_weights_give_sigmoid_of_head_bias(self):
        w = init_slow_branch_weights(8, 6, 2, "ssmm", 4, np.random.default_rng(0))
        for name in ("fc_in_w", "fc_in_b", "fc_head_w", "fc_head_b"):
            getattr(w, name)[...] = 0.0
        for layer in w.gru:
            for f in ("w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n"):
                getattr(layer, f)[...] = 0.0
        state = SlowState.initial(2, 6)
        packet, _ = slow_forward(np.zeros(8), state, w, "ssmm")
        assert np.allclose(packet.a, 0.5) and np.allclose(packet.g, 0.5)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        w = init_slow_branch_weights(8, 6, 3, "film", 4, rng)
        x = rng.standard_normal(8)
        s0 = SlowState.initial(3, 6)
        p1, s1 = slow_forward(x, s0, w, "film")
        p2, s2 = slow_forward(x, s0, w, "film")
        assert np.array_equal(p1.alpha, p2.alpha) and np.array_equal(p1.beta, p2.beta)
        for a, b in zip(s1.hidden, s2.hidden):
            assert np.array_equal(a, b)

    def test_ssmm_packets_bounded(self):
        rng = np.random.default_rng(2)
        w = init_slow_branch_weights(8, 6, 2, "ssmm", 4, rng)
        state = SlowState.initial(2, 6)
        for _ in range(20):
            packet, state = slow_forward(rng.standard_normal(8) * 5, state, w, "ssmm")
            assert np.all((packet.a > 0) & (packet.a < 1))
            assert np.all((packet.g > 0) & (packet.g < 1))

    def test_sequence_equals_stepwise(self):
        # running ten frames through one state chain = stepping one at a time
        rng = np.random.default_rng(4)
        w = init_slow_branch_weights(8, 6, 4, "ec", 4, rng)
        frames = rng.standard_normal((10, 8))
        state_a = SlowState.initial(4, 6)
        outs_a = []
        for f in frames:
            p, state_a = slow_forward(f, state_a, w, "ec")
            outs_a.append(p.e)
        state_b = SlowState.initial(4, 6)
        outs_b = []
        for f in frames:
            p, state_b = slow_forward(f, state_b, w, "ec")
            outs_b.append(p.e)
        assert all(np.array_equal(a, b) for a, b in zip(outs_a, outs_b))


class TestWarmupPacket:
    def test_zero_raw_ssmm(self):
        w = init_slow_branch_weights(8, 6, 2, "ssmm", 4, np.random.default_rng(0))
        p = warmup_packet(w, "ssmm")
        assert np.allclose(p.a, 0.5) and np.allclose(p.g, 0.5)

    def test_zero_raw_film_identity(self):
        w = init_slow_branch_weights(8, 6, 2, "film", 4, np.random.default_rng(0))
        p = warmup_packet(w, "film")
        assert np.allclose(p.alpha, 1.0) and np.allclose(p.beta, 0.0)

    def test_stable_across_calls(self):
        w = init_slow_branch_weights(8, 6, 2, "ssmm", 4, np.random.default_rng(5))
        w.warmup_packet_raw[...] = np.random.default_rng(6).standard_normal(8)
        p1 = warmup_packet(w, "ssmm")
        p2 = warmup_packet(w, "ssmm")
        assert np.array_equal(p1.a, p2.a) and np.array_equal(p1.g, p2.g)
