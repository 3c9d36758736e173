import numpy as np
import pytest
from scipy.linalg import expm, solve_continuous_are

from cbconv.design import (care_hamiltonian, care_residual, care_solve, design_filter,
                           discretize, parallelize, solve_w)
from cbconv.errors import DesignGateError, ParallelFormError
from cbconv.model import ChainSpec, build_chain
from cbconv.xfer import eta_from_osr

DESK_T = 1.0 / 21.5
DESK_GAMMA = 10.0 / 21.5


def closed_form_two_stage(beta, eta):
    Vf = np.array([[beta * np.sqrt(2 * eta), beta * eta],
                   [beta * eta, beta * eta * np.sqrt(2 * eta)]])
    Vb = np.array([[beta * np.sqrt(2 * eta), -beta * eta],
                   [-beta * eta, beta * eta * np.sqrt(2 * eta)]])
    W = np.array([[1.0 / (2.0 * np.sqrt(2 * eta))], [0.0]])
    return Vf, Vb, W


def desk_chain(n, readout="last_state"):
    return build_chain(ChainSpec(n=n, beta=10.0, kappa=1.05), readout=readout)


class TestCareSolve:
    @pytest.mark.parametrize("beta", [1.0, 10.0, 6250.0])
    @pytest.mark.parametrize("eta", [2.0, 10.21, 100.0])
    def test_two_stage_closed_forms(self, beta, eta):
        sys_ = build_chain(ChainSpec(n=2, beta=beta))
        Vf = care_solve(sys_.A, sys_.B, sys_.C_T, eta * eta, "forward")
        Vb = care_solve(sys_.A, sys_.B, sys_.C_T, eta * eta, "backward")
        W = solve_w(Vf, Vb, sys_.B)
        Vf_ref, Vb_ref, W_ref = closed_form_two_stage(beta, eta)
        assert np.linalg.norm(Vf - Vf_ref) <= 1e-9 * np.linalg.norm(Vf_ref)
        assert np.linalg.norm(Vb - Vb_ref) <= 1e-9 * np.linalg.norm(Vb_ref)
        assert np.linalg.norm(W - W_ref) <= 1e-9 * np.linalg.norm(W_ref)

    def test_single_stage_scalar_root(self):
        sys_ = build_chain(ChainSpec(n=1, beta=4.0))
        eta = 7.0
        Vf = care_solve(sys_.A, sys_.B, sys_.C_T, eta * eta)
        assert abs(Vf[0, 0] - 4.0 * eta) <= 1e-10 * 4.0 * eta

    def test_zero_forcing(self):
        sys_ = build_chain(ChainSpec(n=2, beta=10.0))
        V = care_solve(sys_.A, np.zeros((2, 1)), sys_.C_T, 4.0)
        assert np.all(V == 0)

    @pytest.mark.parametrize("n", range(1, 9))
    def test_residual_gates_and_cross_check(self, n):
        sys_ = desk_chain(n)
        eta = eta_from_osr(DESK_GAMMA, 32.0, n)
        eta2 = eta * eta
        for direction, A_eff in (("forward", sys_.A), ("backward", -sys_.A)):
            V = care_solve(sys_.A, sys_.B, sys_.C_T, eta2, direction)
            _, rn, scale = care_residual(A_eff, sys_.B, sys_.C_T, eta2, V)
            assert rn <= 1e-10 * scale
            if n <= 3:
                # the BB^T-normalized gate is only attainable in binary64
                # while the quadratic term stays moderate (its float64
                # evaluation noise alone reaches ~1e-10 * ||BB^T|| at n = 4)
                assert rn <= 1e-10 * np.linalg.norm(sys_.B @ sys_.B.T, "fro")
            Vh = care_hamiltonian(sys_.A, sys_.B, sys_.C_T, eta2, direction,
                                  scaling=np.sqrt(np.maximum(np.diag(V), 1e-300)))
            assert np.linalg.norm(V - Vh) <= 1e-8 * np.linalg.norm(Vh)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_against_scipy(self, n):
        sys_ = desk_chain(n)
        eta = eta_from_osr(DESK_GAMMA, 32.0, n)
        V = care_solve(sys_.A, sys_.B, sys_.C_T, eta * eta)
        C = sys_.C_T.T
        V_ref = solve_continuous_are(sys_.A.T, C, sys_.B @ sys_.B.T,
                                     eta * eta * np.eye(sys_.m))
        assert np.linalg.norm(V - V_ref) <= 1e-8 * np.linalg.norm(V_ref)

    def test_symmetry(self):
        sys_ = desk_chain(5)
        eta = eta_from_osr(DESK_GAMMA, 32.0, 5)
        V = care_solve(sys_.A, sys_.B, sys_.C_T, eta * eta)
        assert np.array_equal(V, V.T)


class TestDiscretize:
    def test_single_stage_closed_form(self):
        beta, eta, kappa, T = 2.0, 4.0, 1.0, 0.25
        A_cl = np.array([[-beta / eta]])
        Gamma = np.array([[-kappa * beta]])
        Af, Bf = discretize(A_cl, Gamma, T)
        a = np.exp(-beta * T / eta)
        assert abs(Af[0, 0] - a) < 1e-14
        assert abs(Bf[0, 0] - (-kappa * eta * (1.0 - a))) < 1e-14

    def test_zero_input_matrix(self):
        Af, Bd = discretize(np.array([[-1.0, 0.5], [0.0, -2.0]]), np.zeros((2, 2)), 0.1)
        assert np.all(Bd == 0)

    def test_short_step_series(self):
        A_cl = np.array([[0.0, 1.0], [-4.0, -0.5]])
        T = 1e-6
        Af, _ = discretize(A_cl, np.eye(2), T)
        assert np.linalg.norm(Af - np.eye(2) - A_cl * T) <= 2 * np.linalg.norm(A_cl @ A_cl) * T * T

    def test_integral_against_composite_simpson(self):
        # independent quadrature oracle on 2^14 panels
        rng = np.random.default_rng(5)
        A_cl = rng.normal(size=(3, 3))
        A_cl -= 2.0 * np.eye(3)
        Gamma = rng.normal(size=(3, 3))
        T = 0.37
        _, Bd = discretize(A_cl, Gamma, T)
        panels = 1 << 14
        h = T / panels
        Eh = expm(A_cl * (h / 2.0))   # half-step propagator
        # int_0^T e^{A tau} Gamma d tau via Simpson with incremental powers
        acc = np.zeros_like(Gamma)
        P = np.eye(3)                 # e^{A * (j*h)}
        for _ in range(panels):
            f0 = P @ Gamma
            f1 = P @ Eh @ Gamma
            P = P @ Eh @ Eh
            f2 = P @ Gamma
            acc += (h / 6.0) * (f0 + 4.0 * f1 + f2)
        assert np.linalg.norm(Bd - acc) <= 1e-10 * np.linalg.norm(acc)


class TestSolveW:
    def test_two_stage_closed_form(self):
        beta, eta = 10.0, 10.21
        Vf, Vb, W_ref = closed_form_two_stage(beta, eta)
        W = solve_w(Vf, Vb, np.array([[beta], [0.0]]))
        assert np.linalg.norm(W - W_ref) <= 1e-12

    def test_single_stage(self):
        eta, beta = 5.0, 3.0
        W = solve_w(np.array([[beta * eta]]), np.array([[beta * eta]]),
                    np.array([[beta]]))
        assert abs(W[0, 0] - 1.0 / (2 * eta)) < 1e-15

    def test_zero_b(self):
        W = solve_w(np.eye(2), np.eye(2), np.zeros((2, 1)))
        assert np.all(W == 0)

    def test_singular_sum_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            solve_w(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 1)))


class TestDesignFilter:
    @pytest.mark.parametrize("n", range(1, 9))
    def test_spectral_radii_stable(self, n):
        sys_ = desk_chain(n)
        eta = eta_from_osr(DESK_GAMMA, 32.0, n)
        coeffs = design_filter(sys_, eta * eta, DESK_T)
        sf, sb = coeffs.spectral_radii()
        assert sf < 1.0 and sb < 1.0

    def test_vf_vb_symmetric_and_psd(self):
        sys_ = desk_chain(4)
        eta = eta_from_osr(DESK_GAMMA, 32.0, 4)
        coeffs = design_filter(sys_, eta * eta, DESK_T)
        assert np.array_equal(coeffs.Vf, coeffs.Vf.T)
        assert np.linalg.eigvalsh(coeffs.Vf)[0] >= 0
        assert np.linalg.eigvalsh(coeffs.Vb)[0] >= 0

    def test_backward_matrices_signs(self):
        # n = 1 closed forms: Ab = e^{-beta T/eta}, Bb = +kappa eta (1 - Ab)
        spec = ChainSpec(n=1, beta=2.0, kappa=1.0)
        sys_ = build_chain(spec)
        eta = 4.0
        coeffs = design_filter(sys_, eta * eta, 0.25)
        a = np.exp(-2.0 * 0.25 / eta)
        assert abs(coeffs.Af[0, 0] - a) < 1e-12
        assert abs(coeffs.Ab[0, 0] - a) < 1e-12
        assert abs(coeffs.Bf[0, 0] - (-eta * (1 - a))) < 1e-12
        assert abs(coeffs.Bb[0, 0] - (+eta * (1 - a))) < 1e-12
        assert abs(coeffs.W[0, 0] - 1.0 / (2 * eta)) < 1e-12


class TestParallelize:
    def test_diagonal_recursion_matrix(self):
        spec = ChainSpec(n=1, beta=2.0)
        coeffs = design_filter(build_chain(spec), 16.0, 0.25)
        p = parallelize(coeffs)
        assert abs(p.lambda_f[0] - coeffs.Af[0, 0]) < 1e-14

    def test_reconstruction(self):
        sys_ = desk_chain(2)
        eta = eta_from_osr(DESK_GAMMA, 32.0, 2)
        coeffs = design_filter(sys_, eta * eta, DESK_T)
        lf, Qf = np.linalg.eig(coeffs.Af)
        rec = np.real(Qf @ np.diag(lf) @ np.linalg.inv(Qf))
        assert np.linalg.norm(rec - coeffs.Af) <= 1e-10 * np.linalg.norm(coeffs.Af)

    def test_lookup_table_three_stages(self):
        sys_ = desk_chain(3)
        eta = eta_from_osr(DESK_GAMMA, 32.0, 3)
        coeffs = design_filter(sys_, eta * eta, DESK_T)
        p = parallelize(coeffs)
        assert p.table_f.shape == (8, 3)
        # word 0b111 -> s = (+1,+1,+1): entry equals the column sum
        assert np.allclose(p.table_f[7], p.Qf_inv_Bf.sum(axis=1), rtol=0, atol=1e-15)
        # word 0 -> all -1
        assert np.allclose(p.table_f[0], -p.Qf_inv_Bf.sum(axis=1), rtol=0, atol=1e-15)

    def test_condition_gate(self):
        # nearly defective Af (Jordan-like) must be refused
        from cbconv.design import FilterCoefficients
        Af = np.array([[0.5, 1.0], [1e-14, 0.5]])
        coeffs = FilterCoefficients(Af=Af, Bf=np.eye(2), Ab=0.5 * np.eye(2),
                                    Bb=np.eye(2), W=np.ones((2, 1)),
                                    Vf=np.eye(2), Vb=np.eye(2), T_u=1.0, eta2=1.0)
        with pytest.raises(ParallelFormError):
            parallelize(coeffs)
