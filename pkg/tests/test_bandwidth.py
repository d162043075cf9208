from fractions import Fraction

import numpy as np
import pytest

from ipwcate.bandwidth import (GROUP_PRESETS, parity_delta, plan_bandwidths, plan_for_group,
                               rate_conditions)


class TestPresets:
    def test_groups(self):
        assert GROUP_PRESETS["G1"] == {"a": 0.55, "a1": 1.05, "a2": 0.75}
        assert GROUP_PRESETS["G2"] == {"a": 0.55, "a1": 1.05, "a2": 0.69}

    def test_unknown_group(self):
        with pytest.raises(ValueError):
            plan_for_group(500, "G3", r=1)


class TestTableRates:
    def test_h1_for_scalar_active_set(self):
        plan = plan_bandwidths(500, k_tilde=1, a1=1.05)
        np.testing.assert_allclose(plan.h1, 0.1322917, atol=1e-7)
        assert plan.eta1 == Fraction(1, 3)

    def test_h_for_small_active_set(self):
        for kt in (1, 2):
            plan = plan_bandwidths(500, l=1, k_tilde=kt, a=0.55)
            np.testing.assert_allclose(plan.h, 0.27573, atol=5e-6)
            assert plan.eta == Fraction(1, 9)

    def test_h_for_four_active(self):
        plan = plan_bandwidths(500, k_tilde=4)
        assert plan.eta == Fraction(1, 13) and plan.eta1 == Fraction(1, 8)

    def test_reduced_index(self):
        plan = plan_bandwidths(500, r=1, a2=0.75)
        assert plan.delta_r == 1 and plan.s2 == 2 and plan.s == 4
        np.testing.assert_allclose(plan.h2, 0.09449, atol=5e-6)

    def test_even_r(self):
        plan = plan_bandwidths(500, r=2)
        assert parity_delta(2) == 0 and plan.s2 == 2 and plan.s == 4
        assert plan.eta2 == Fraction(1, 4) and plan.eta == Fraction(1, 9)

    @pytest.mark.parametrize("kt,s1", [(1, 2), (2, 2), (4, 4)])
    def test_s1_resolution(self, kt, s1):
        assert plan_bandwidths(1000, k_tilde=kt).s1 == s1

    def test_table_mode_rejects_other_k_tilde(self):
        with pytest.raises(ValueError, match="formula"):
            plan_bandwidths(500, k_tilde=3)
        plan = plan_bandwidths(500, k_tilde=3, mode="formula")
        assert plan.eta1 == Fraction(1, 7)

    def test_needs_a_dimension(self):
        with pytest.raises(ValueError):
            plan_bandwidths(500)

    def test_order_override(self):
        plan = plan_bandwidths(500, r=1, s=2)
        assert plan.s == 2
        with pytest.raises(ValueError):
            plan_bandwidths(500, r=1, s=8)


class TestRates:
    @pytest.mark.parametrize("kw", [dict(r=1), dict(r=2), dict(k_tilde=1), dict(k_tilde=2, r=1),
                                    dict(k_tilde=4, r=2)])
    def test_conditions(self, kw):
        checks = rate_conditions(plan_bandwidths(500, **kw))
        assert checks["nh_l_diverges"] and checks["undersmoothing_boundary"]
        for key, ok in checks.items():
            if key.endswith("bias_negligible"):
                assert ok, key

    def test_monotone_in_n(self):
        a = plan_bandwidths(500, r=1, k_tilde=2)
        b = plan_bandwidths(1000, r=1, k_tilde=2)
        assert b.h < a.h and b.h1 < a.h1 and b.h2 < a.h2

    def test_to_dict_serialises_fractions(self):
        d = plan_bandwidths(500, r=1).to_dict()
        assert d["eta"] == "1/9" and d["eta2"] == "1/3"
