"""Indirect guidance tests: trivial gates, routing, composed oracle."""

import numpy as np
import pytest

from fusionbank.errors import ConfigurationError, ContractError
from fusionbank.guidance import Guidance, GuidanceGroup, iigm_group
from fusionbank.modules import Conv2d
from fusionbank.tensor import Tensor

from oracles import iigm_group_oracle


def feats(rng, widths=(2, 3, 4), sizes=(8, 4, 2), b=1):
    return [Tensor(rng.uniform(-1, 1, size=(b, c, s, s)))
            for c, s in zip(widths, sizes)]


class TestGroup:
    def test_zero_convs_scale_by_one_point_five(self):
        rng = np.random.default_rng(0)
        lo, mid, hi = feats(rng)
        group = GuidanceGroup(2, 3, 4, None)  # zero parameters
        g_lo, g_hi, gates = group(lo, mid, hi)
        assert np.all(gates.w_high.data == 0.5)
        assert np.all(gates.w_low.data == 0.5)
        np.testing.assert_allclose(g_lo.data, 1.5 * lo.data, atol=1e-15)
        np.testing.assert_allclose(g_hi.data, 1.5 * hi.data, atol=1e-15)

    def test_zero_low_level_stays_zero(self):
        rng = np.random.default_rng(1)
        _, mid, hi = feats(rng)
        lo = Tensor(np.zeros((1, 2, 8, 8)))
        group = GuidanceGroup(2, 3, 4, rng)
        g_lo, _, _ = group(lo, mid, hi)
        assert np.all(g_lo.data == 0.0)

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(2)
        lo, mid, hi = feats(rng)
        group = GuidanceGroup(2, 3, 4, np.random.default_rng(3))
        g_lo, g_hi, _ = group(lo, mid, hi)
        pair = lambda conv: (conv.weights.data, conv.bias.data)
        want_lo, want_hi = iigm_group_oracle(
            lo.data, mid.data, hi.data,
            pair(group.mid_to_lo), pair(group.hi_to_lo),
            pair(group.lo_to_hi), pair(group.mid_to_hi),
        )
        np.testing.assert_allclose(g_lo.data, want_lo, atol=1e-10)
        np.testing.assert_allclose(g_hi.data, want_hi, atol=1e-10)

    def test_gates_strictly_in_unit_interval(self):
        rng = np.random.default_rng(4)
        lo, mid, hi = feats(rng)
        group = GuidanceGroup(2, 3, 4, rng)
        _, _, gates = group(lo, mid, hi)
        for w in (gates.w_high.data, gates.w_low.data):
            assert np.all(w > 0) and np.all(w < 1)

    def test_amplifies_nonnegative_features(self):
        rng = np.random.default_rng(5)
        lo = Tensor(rng.uniform(0, 1, size=(1, 2, 8, 8)))
        mid = Tensor(rng.uniform(-1, 1, size=(1, 3, 4, 4)))
        hi = Tensor(rng.uniform(0, 1, size=(1, 4, 2, 2)))
        group = GuidanceGroup(2, 3, 4, rng)
        g_lo, g_hi, _ = group(lo, mid, hi)
        assert np.all(g_lo.data >= lo.data)
        assert np.all(g_hi.data >= hi.data)

    def test_shapes_preserved(self):
        rng = np.random.default_rng(6)
        lo, mid, hi = feats(rng)
        group = GuidanceGroup(2, 3, 4, rng)
        g_lo, g_hi, _ = group(lo, mid, hi)
        assert g_lo.shape == lo.shape
        assert g_hi.shape == hi.shape

    def test_wrong_conv_mapping_rejected(self):
        rng = np.random.default_rng(7)
        lo, mid, hi = feats(rng)
        with pytest.raises(ConfigurationError):
            iigm_group(lo, mid, hi,
                       Conv2d(3, 3, 3, rng, padding=1),  # should map 3 -> 2
                       Conv2d(4, 2, 3, rng, padding=1),
                       Conv2d(2, 4, 3, rng, padding=1),
                       Conv2d(3, 4, 3, rng, padding=1))


class TestPyramidRouting:
    WIDTHS = {2: 2, 3: 3, 4: 4, 5: 5}

    def fbs(self, rng, b=1):
        sizes = {2: 8, 3: 4, 4: 2, 5: 1}
        return {i: Tensor(rng.uniform(-1, 1, size=(b, self.WIDTHS[i], sizes[i], sizes[i])))
                for i in (2, 3, 4, 5)}

    def test_zero_convs_scale_every_level(self):
        fbs = self.fbs(np.random.default_rng(8))
        guidance = Guidance(self.WIDTHS, None)
        out = guidance(fbs)
        for i in (2, 3, 4, 5):
            np.testing.assert_allclose(out.levels[i].data, 1.5 * fbs[i].data, atol=1e-15)

    def test_each_level_produced_once_with_right_shape(self):
        fbs = self.fbs(np.random.default_rng(9))
        guidance = Guidance(self.WIDTHS, np.random.default_rng(10))
        out = guidance(fbs)
        assert sorted(out.levels) == [2, 3, 4, 5]
        for i in (2, 3, 4, 5):
            assert out.levels[i].shape == fbs[i].shape

    def test_matches_two_group_oracle_routing(self):
        fbs = self.fbs(np.random.default_rng(11))
        guidance = Guidance(self.WIDTHS, np.random.default_rng(12))
        out = guidance(fbs)
        pair = lambda conv: (conv.weights.data, conv.bias.data)
        g = guidance.group_234
        want2, want4 = iigm_group_oracle(
            fbs[2].data, fbs[3].data, fbs[4].data,
            pair(g.mid_to_lo), pair(g.hi_to_lo), pair(g.lo_to_hi), pair(g.mid_to_hi))
        g = guidance.group_345
        want3, want5 = iigm_group_oracle(
            fbs[3].data, fbs[4].data, fbs[5].data,
            pair(g.mid_to_lo), pair(g.hi_to_lo), pair(g.lo_to_hi), pair(g.mid_to_hi))
        np.testing.assert_allclose(out.levels[2].data, want2, atol=1e-10)
        np.testing.assert_allclose(out.levels[3].data, want3, atol=1e-10)
        np.testing.assert_allclose(out.levels[4].data, want4, atol=1e-10)
        np.testing.assert_allclose(out.levels[5].data, want5, atol=1e-10)

    def test_missing_level_rejected(self):
        fbs = self.fbs(np.random.default_rng(13))
        del fbs[4]
        guidance = Guidance(self.WIDTHS, np.random.default_rng(14))
        with pytest.raises(ContractError, match="4"):
            guidance(fbs)
