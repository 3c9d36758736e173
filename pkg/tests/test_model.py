import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbconv.errors import PoleError
from cbconv.model import (AnalogSystem, ChainSpec, atf, build_chain, check_stability,
                          dither_feedback_augment, gamma_max,
                          homogeneous_chain_parameters)


def chain_atf_product(beta, rho, omega, upto):
    """Independent oracle: per-stage product beta_l / (i w + rho_l)."""
    g = 1.0 + 0.0j
    for l in range(upto):
        g *= beta[l] / (1j * omega + rho[l])
    return g


class TestBuildChain:
    def test_two_stage_matrices(self):
        spec = ChainSpec(n=2, beta=10.0, rho=0.0, kappa=1.0)
        sys_ = build_chain(spec, readout="last_state")
        assert np.array_equal(sys_.A, [[0.0, 0.0], [10.0, 0.0]])
        assert np.array_equal(sys_.B, [[10.0], [0.0]])
        assert np.array_equal(sys_.Gamma, [[-10.0, 0.0], [0.0, -10.0]])
        assert np.array_equal(sys_.C_T, [[0.0, 1.0]])

    def test_single_stage(self):
        spec = ChainSpec(n=1, beta=3.0, rho=0.5, kappa=2.0)
        sys_ = build_chain(spec)
        assert sys_.A[0, 0] == -0.5
        assert sys_.B[0, 0] == 3.0
        assert sys_.Gamma[0, 0] == -6.0
        assert sys_.C_T[0, 0] == 1.0

    def test_hw_scale_feedback_row(self):
        # five equal stages with equal extra-feedback coefficients beta/(n(n-1))
        spec = ChainSpec(n=5, beta=6250.0, kappa=1.25)
        spec = dither_feedback_augment(spec)
        assert spec.kappa_fb == (312.5,) * 4
        sys_ = build_chain(spec)
        assert np.allclose(sys_.Gamma[0, 1:], -312.5)
        assert sys_.Gamma[0, 0] == -1.25 * 6250.0

    def test_all_states_readout(self):
        sys_ = build_chain(ChainSpec(n=3, beta=1.0), readout="all_states")
        assert np.array_equal(sys_.C_T, np.eye(3))

    def test_deterministic(self):
        spec = ChainSpec(n=4, beta=7.3, rho=0.01, kappa=1.1)
        a = build_chain(spec)
        b = build_chain(spec)
        assert np.array_equal(a.A, b.A) and np.array_equal(a.Gamma, b.Gamma)

    def test_immutability(self):
        sys_ = build_chain(ChainSpec(n=2, beta=1.0))
        with pytest.raises((ValueError, AttributeError)):
            sys_.A[0, 0] = 5.0

    def test_homogeneous_recovery(self):
        sys_ = build_chain(ChainSpec(n=4, beta=9.0, rho=0.2))
        assert homogeneous_chain_parameters(sys_) == (9.0, 0.2, 4)


class TestAtf:
    def test_two_stage_all_states(self):
        # product per stage at omega = beta: beta/(i w) = -i, squared -> -1
        sys_ = build_chain(ChainSpec(n=2, beta=10.0), readout="all_states")
        G = atf(sys_, 10.0)
        assert abs(G[0, 0] - (-1j)) < 1e-14
        assert abs(G[1, 0] - (-1.0)) < 1e-14
        assert abs(np.linalg.norm(G) ** 2 - 2.0) < 1e-12

    def test_dc_gain_first_order_lag(self):
        sys_ = build_chain(ChainSpec(n=1, beta=4.0, rho=0.5))
        G = atf(sys_, 0.0)
        assert abs(G[0, 0] - 8.0) < 1e-12

    def test_five_stage_last_state(self):
        # (1/i)^5 = -i at omega = beta
        sys_ = build_chain(ChainSpec(n=5, beta=10.0))
        G = atf(sys_, 10.0)
        assert abs(G[0, 0] - (-1j)) < 1e-12

    def test_pole_error_at_dc(self):
        sys_ = build_chain(ChainSpec(n=3, beta=10.0, rho=0.0))
        with pytest.raises(PoleError):
            atf(sys_, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 8),
           beta=st.floats(0.1, 1e4),
           rho_rel=st.floats(0.0, 0.2),
           w_rel=st.floats(1e-4, 1e3),
           all_states=st.booleans())
    def test_product_form_property(self, n, beta, rho_rel, w_rel, all_states):
        rho = rho_rel * beta
        omega = w_rel * beta
        spec = ChainSpec(n=n, beta=beta, rho=rho)
        sys_ = build_chain(spec, readout="all_states" if all_states else "last_state")
        G = atf(sys_, omega)
        betas = [beta] * n
        rhos = [rho] * n
        if all_states:
            for k in range(n):
                ref = chain_atf_product(betas, rhos, omega, k + 1)
                assert abs(G[k, 0] - ref) <= 1e-12 * abs(ref)
        else:
            ref = chain_atf_product(betas, rhos, omega, n)
            assert abs(G[0, 0] - ref) <= 1e-12 * abs(ref)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 6), w_rel=st.floats(1e-3, 0.99))
    def test_sum_form_in_band(self, n, w_rel):
        # ||G||^2 = sum of geometric terms for the all-states readout, rho = 0
        beta = 10.0
        omega = w_rel * beta
        sys_ = build_chain(ChainSpec(n=n, beta=beta), readout="all_states")
        G = atf(sys_, omega)
        q = omega**2 / beta**2
        ref = (1.0 - q**n) / (q**n * (1.0 - q))
        val = float(np.linalg.norm(G) ** 2)
        assert abs(val - ref) <= 1e-10 * ref


class TestStability:
    def test_boundary_case(self):
        # gamma = 1/2 admissible exactly at kappa = b
        spec = ChainSpec(n=1, beta=1.0, kappa=1.0)
        assert check_stability(spec, T=0.5, b=1.0).guaranteed

    def test_reference_configuration(self):
        spec = ChainSpec(n=5, beta=10.0, kappa=1.05)
        v = check_stability(spec, T=1.0 / 21.5, b=1.0)
        assert v.guaranteed
        assert all(abs(g - 10.0 / 21.5) < 1e-12 for g in v.gamma)
        assert all(abs(adm - 1.0 / 2.05) < 1e-12 for adm in v.gamma_admissible)

    def test_gamma_max_two_bits(self):
        assert abs(gamma_max(2) - 2.0 / 3.0) < 1e-15

    def test_two_bit_boundary(self):
        spec = ChainSpec(n=1, beta=1.0, kappa=1.0, quantizer_bits=2)
        assert check_stability(spec, T=2.0 / 3.0, b=1.0).guaranteed
        assert not check_stability(spec, T=2.0 / 3.0 + 1e-9, b=1.0).guaranteed

    def test_kappa_below_bound_fails(self):
        spec = ChainSpec(n=2, beta=1.0, kappa=0.5)
        v = check_stability(spec, T=0.1, b=1.0)
        assert not v.guaranteed and v.failing_stages == (1, 2)

    def test_feedback_consumes_margin(self):
        base = ChainSpec(n=5, beta=10.0, kappa=1.05)
        T = 1.0 / 21.5
        assert check_stability(base, T).guaranteed
        # large extra feedback breaks only the first stage
        fb = ChainSpec(n=5, beta=10.0, kappa=1.05, kappa_fb=(2.0, 2.0, 2.0, 2.0))
        v = check_stability(fb, T)
        assert not v.guaranteed and v.failing_stages == (1,)

    def test_hw_feedback_still_guaranteed(self):
        spec = dither_feedback_augment(ChainSpec(n=5, beta=6250.0, kappa=1.25))
        assert check_stability(spec, T=54e-6, b=1.0).guaranteed


class TestDitherFeedbackAugment:
    def test_n5(self):
        spec = dither_feedback_augment(ChainSpec(n=5, beta=6250.0))
        assert spec.kappa_fb == (312.5,) * 4

    def test_n2(self):
        spec = dither_feedback_augment(ChainSpec(n=2, beta=10.0))
        assert spec.kappa_fb == (5.0,)

    def test_n1_rejected(self):
        with pytest.raises(ValueError):
            dither_feedback_augment(ChainSpec(n=1, beta=10.0))

    def test_explicit_coefficients_kept(self):
        spec = ChainSpec(n=3, beta=10.0, kappa_fb=(0.1, 0.2))
        assert dither_feedback_augment(spec).kappa_fb == (0.1, 0.2)


def test_analog_system_dimension_checks():
    from cbconv.errors import DimensionError
    with pytest.raises(DimensionError):
        AnalogSystem(np.zeros((2, 2)), np.zeros((3, 1)), np.zeros((2, 2)),
                     np.zeros((1, 2)))
