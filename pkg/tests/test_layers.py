"""Tests for Feature Random Enhancement, the SE block and channel dropout."""

import numpy as np
import pytest

from fre_seg.autograd import Tensor, backward, gradcheck
from fre_seg.autograd.ops import mul, sum_all
from fre_seg.errors import ConfigError
from fre_seg.layers import (
    EVAL,
    TRAIN,
    SEBlock,
    SelectionState,
    SEWeights,
    channel_dropout,
    fre_forward,
    reselect,
    se_block,
)
from fre_seg.models import FREConfig, FREMode


def features(shape=(2, 3, 4, 4), seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=True, dtype=np.float64)


class TestFREForward:
    """Tests for fre_forward."""

    @pytest.fixture
    def cfg(self):
        return FREConfig(B=1, X=632.0, mode=FREMode.RANDOM)

    def test_selected_channel_is_multiplied(self, cfg):
        """Channels [c0, c1, c2] with {1} selected become [c0, 632 c1, c2]."""
        x = features()
        out = fre_forward(x, cfg, SelectionState(epoch=0, selected=(1,)), TRAIN)
        np.testing.assert_array_equal(out.data[:, 0], x.data[:, 0])
        np.testing.assert_allclose(out.data[:, 1], 632.0 * x.data[:, 1])
        np.testing.assert_array_equal(out.data[:, 2], x.data[:, 2])

    def test_eval_is_identity(self, cfg):
        """The eval phase returns the input bytes unchanged."""
        x = features()
        out = fre_forward(x, cfg, SelectionState(epoch=0, selected=(0, 1)), EVAL)
        assert out.data.tobytes() == x.data.tobytes()

    def test_unit_multiplier(self):
        x = features()
        cfg = FREConfig(B=2, X=1.0, mode=FREMode.RANDOM)
        out = fre_forward(x, cfg, SelectionState(epoch=0, selected=(0, 2)), TRAIN)
        np.testing.assert_array_equal(out.data, x.data)

    def test_off_mode_is_identity(self):
        x = features()
        out = fre_forward(x, FREConfig(mode=FREMode.OFF), SelectionState(), TRAIN)
        assert out is x

    def test_gradient_scaled_by_x(self):
        """The gradient of a selected channel is X times the FRE-free gradient."""
        r = Tensor(np.random.default_rng(5).standard_normal((2, 3, 4, 4)), dtype=np.float64)
        cfg = FREConfig(B=1, X=7.0, mode=FREMode.RANDOM)
        state = SelectionState(epoch=0, selected=(2,))

        with_fre = features()
        backward(sum_all(mul(fre_forward(with_fre, cfg, state, TRAIN), r)))
        without = features()
        backward(sum_all(mul(without, r)))

        np.testing.assert_allclose(with_fre.grad[:, 2], 7.0 * without.grad[:, 2])
        np.testing.assert_array_equal(with_fre.grad[:, :2], without.grad[:, :2])

    def test_gradcheck(self):
        x = features((1, 4, 2, 2), seed=2)
        cfg = FREConfig(B=2, X=3.0, mode=FREMode.RANDOM)
        state = SelectionState(epoch=0, selected=(0, 3))
        r = Tensor(np.random.default_rng(3).standard_normal((1, 4, 2, 2)), dtype=np.float64)
        assert gradcheck(lambda: sum_all(mul(fre_forward(x, cfg, state, TRAIN), r)), [x]) < 1e-6


class TestReselect:
    """Tests for channel selection."""

    def test_exhaustive(self):
        """B equal to the channel count selects every channel."""
        cfg = FREConfig(B=512, mode=FREMode.RANDOM, seed=1)
        assert reselect(SelectionState(), 0, cfg, 512).selected == tuple(range(512))

    def test_deterministic(self):
        cfg = FREConfig(B=162, mode=FREMode.RANDOM, seed=7)
        first = reselect(SelectionState(), 3, cfg, 512)
        second = reselect(SelectionState(), 3, cfg, 512)
        assert first.selected == second.selected
        assert len(set(first.selected)) == 162

    def test_changes_between_epochs(self):
        cfg = FREConfig(B=162, mode=FREMode.RANDOM, seed=7)
        assert reselect(SelectionState(), 1, cfg, 512).selected != reselect(SelectionState(), 2, cfg, 512).selected

    def test_same_epoch_keeps_state(self):
        cfg = FREConfig(B=4, mode=FREMode.RANDOM, seed=0)
        state = reselect(SelectionState(), 5, cfg, 16)
        assert reselect(state, 5, cfg, 16) is state

    def test_per_batch_selection(self):
        cfg = FREConfig(B=4, mode=FREMode.RANDOM, seed=0, per_batch=True)
        a = reselect(SelectionState(), 1, cfg, 512, batch=0)
        b = reselect(a, 1, cfg, 512, batch=1)
        assert a.selected != b.selected
        assert reselect(SelectionState(), 1, cfg, 512, batch=1).selected == b.selected

    def test_fixed_mode(self):
        cfg = FREConfig(B=10, mode=FREMode.FIXED, fixed_channels=(5, 1, 9))
        assert reselect(SelectionState(), 42, cfg, 512).selected == (5, 1, 9)
        assert reselect(SelectionState(), 0, FREConfig(mode=FREMode.FIXED), 512).selected == tuple(range(10))

    def test_uniform_frequency(self):
        """Over 10,000 epochs with B=8 of 512, counts stay within binomial bounds."""
        cfg = FREConfig(B=8, mode=FREMode.RANDOM, seed=0)
        counts = np.zeros(512, dtype=np.int64)
        for epoch in range(10_000):
            counts[list(reselect(SelectionState(), epoch, cfg, 512).selected)] += 1
        p = 8 / 512
        expected = 10_000 * p
        sigma = np.sqrt(10_000 * p * (1 - p))
        deviation = np.abs(counts - expected) / sigma
        assert counts.sum() == 80_000
        assert np.mean(deviation > 3) <= 0.01
        assert deviation.max() < 5

    @pytest.mark.parametrize(
        "cfg",
        [
            FREConfig(B=600, mode=FREMode.RANDOM),
            FREConfig(B=0, mode=FREMode.RANDOM),
            FREConfig(X=0.5, mode=FREMode.RANDOM),
            FREConfig(mode=FREMode.FIXED, fixed_channels=()),
            FREConfig(mode=FREMode.FIXED, fixed_channels=(1, 1)),
            FREConfig(mode=FREMode.FIXED, fixed_channels=(512,)),
        ],
    )
    def test_invalid_config(self, cfg):
        with pytest.raises(ConfigError):
            cfg.validate(512)


class TestSEBlock:
    """Tests for squeeze-and-excitation."""

    def _weights(self, channels, hidden, bias):
        return SEWeights(
            Tensor(np.zeros((channels, hidden))),
            Tensor(np.zeros(hidden)),
            Tensor(np.zeros((hidden, channels))),
            Tensor(np.full(channels, bias)),
        )

    def test_open_gate(self):
        x = features((2, 4, 3, 3))
        out = se_block(x, 2, self._weights(4, 2, 50.0))
        np.testing.assert_allclose(out.data, x.data, rtol=1e-12)

    def test_closed_gate(self):
        x = features((2, 4, 3, 3))
        out = se_block(x, 2, self._weights(4, 2, -50.0))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_open_gate_keeps_argmax(self):
        """A downstream linear classifier predicts the same classes through a saturated gate."""
        x = features((1, 4, 5, 5), seed=9)
        w = np.random.default_rng(10).standard_normal((3, 4))
        out = se_block(x, 2, self._weights(4, 2, 50.0))
        before = np.einsum("kc,nchw->nkhw", w, x.data).argmax(axis=1)
        after = np.einsum("kc,nchw->nkhw", w, out.data).argmax(axis=1)
        np.testing.assert_array_equal(before, after)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 4, 2, 2))
        w1, b1 = rng.standard_normal((4, 2)), rng.standard_normal(2)
        w2, b2 = rng.standard_normal((2, 4)), rng.standard_normal(4)
        weights = SEWeights(*(Tensor(a, dtype=np.float64) for a in (w1, b1, w2, b2)))
        out = se_block(Tensor(x, dtype=np.float64), 2, weights).data

        for c in range(4):
            hidden = [max(0.0, sum(x[0, i].mean() * w1[i, j] for i in range(4)) + b1[j]) for j in range(2)]
            z = sum(hidden[j] * w2[j, c] for j in range(2)) + b2[c]
            gate = 1.0 / (1.0 + np.exp(-z))
            np.testing.assert_allclose(out[0, c], x[0, c] * gate, rtol=1e-12)

    def test_hidden_width(self):
        """The hidden layer has max(1, C // reduction) units."""
        rng = np.random.default_rng(0)
        assert SEBlock(64, 16, rng).w1.shape == (64, 4)
        assert SEBlock(8, 16, rng).w1.shape == (8, 1)

    def test_gradcheck(self):
        block = SEBlock(4, 2, np.random.default_rng(1)).astype(np.float64)
        x = features((2, 4, 3, 3), seed=3)
        params = [block.w1, block.b1, block.w2, block.b2]
        r = Tensor(np.random.default_rng(2).standard_normal((2, 4, 3, 3)), dtype=np.float64)
        assert gradcheck(lambda: sum_all(mul(block(x), r)), [x] + params, eps=1e-5) < 1e-4


class TestChannelDropout:
    """Tests for channel_dropout."""

    def test_zeroed_fraction(self):
        """With rate 162/512 the dropped share of channels is within 3 sigma."""
        rate = 162 / 512
        x = Tensor(np.ones((64, 512, 2, 2)))
        out = channel_dropout(x, rate, TRAIN, seed=0).data
        dropped = np.all(out == 0, axis=(2, 3))
        n = dropped.size
        assert abs(dropped.mean() - rate) < 3 * np.sqrt(rate * (1 - rate) / n)
        np.testing.assert_allclose(out[~dropped][:, 0, 0], 1.0 / (1.0 - rate), rtol=1e-6)

    def test_whole_channels(self):
        """A channel map is either kept entirely or zeroed entirely."""
        x = features((4, 8, 3, 3))
        out = channel_dropout(x, 0.5, TRAIN, seed=1).data
        for n in range(4):
            for c in range(8):
                assert np.all(out[n, c] == 0) or np.allclose(out[n, c], 2 * x.data[n, c])

    @pytest.mark.parametrize("phase", [TRAIN, EVAL])
    def test_zero_rate_is_identity(self, phase):
        x = features()
        assert channel_dropout(x, 0.0, phase, seed=0) is x

    def test_eval_is_identity(self):
        x = features()
        assert channel_dropout(x, 0.7, EVAL, seed=0).data.tobytes() == x.data.tobytes()

    def test_same_seed_same_mask(self):
        x = features((4, 8, 2, 2))
        a = channel_dropout(x, 0.3, TRAIN, seed=5).data
        b = channel_dropout(x, 0.3, TRAIN, seed=5).data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
    def test_invalid_rate(self, rate):
        with pytest.raises(ConfigError):
            channel_dropout(features(), rate, TRAIN, seed=0)
