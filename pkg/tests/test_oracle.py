import numpy as np
import pytest

from convmg import fields
from convmg.loss import LossConfig
from convmg.network import ModelKind, apply_level_operator, build_model
from convmg.oracle import (DenseOperator, OracleError, assemble, error_propagation_matrix,
                           exact_solve, exact_spectral_radius, galerkin_check, spectral_check)
from convmg.problems import PROBLEMS, apply_fine_operator, get_problem
from convmg.training import perturbed_kernels

rng = np.random.default_rng(21)
P5 = get_problem("p5")


def fine_matrix(spec, n):
    return assemble(lambda x: apply_fine_operator(spec, x), (n, n)).entries


def test_assembled_p5_symmetric_unit_diagonal():
    M = fine_matrix(P5, 3)
    np.testing.assert_array_equal(M, M.T)
    np.testing.assert_array_equal(np.diag(M), 1.0)


def test_assembly_linearity():
    k1, k2 = rng.standard_normal((2, 3, 3))
    a, b = 0.3, -1.1
    F = assemble(lambda x: fields.conv_same(x, k1), (7, 7)).entries
    G = assemble(lambda x: fields.conv_same(x, k2), (7, 7)).entries
    H = assemble(lambda x: a * fields.conv_same(x, k1) + b * fields.conv_same(x, k2), (7, 7)).entries
    np.testing.assert_allclose(H, a * F + b * G, atol=1e-15)


def test_rectangular_assembly_and_transpose():
    P = assemble(lambda x: fields.conv_down(x, rng.standard_normal((3, 3))), (7, 7))
    assert P.entries.shape == (9, 49) and P.out_shape == (3, 3)
    assert P.T.shape == (3, 3) and P.T.out_shape == (7, 7)


def test_cap():
    with pytest.raises(OracleError):
        assemble(lambda x: x, (31, 31))


def test_spectral_radius_examples():
    assert exact_spectral_radius(np.diag([3.0, -5.0])) == pytest.approx(5.0)
    t = 0.9
    R = 0.7 * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    assert exact_spectral_radius(R) == pytest.approx(0.7, abs=1e-10)
    with pytest.raises(OracleError):
        exact_spectral_radius(np.ones((2, 3)))


def test_lmg_exact_radius_near_table_value():
    B = error_propagation_matrix(build_model("lmg", 3, P5))
    assert exact_spectral_radius(B) == pytest.approx(0.11, abs=0.02)


def test_exact_solve():
    b = rng.standard_normal((3, 3))
    np.testing.assert_allclose(exact_solve(np.eye(9), b), b)
    A = DenseOperator(fine_matrix(P5, 3), (3, 3))
    x = rng.standard_normal((3, 3))
    np.testing.assert_allclose(exact_solve(A, A.apply(x)), x, rtol=1e-12)
    with pytest.raises(OracleError):
        exact_solve(np.zeros((4, 4)), np.ones(4))


def test_green_function_symmetry():
    A = fine_matrix(get_problem("mixed34"), 7)
    G = np.column_stack([exact_solve(A, e) for e in np.eye(49)])
    np.testing.assert_allclose(G, G.T, atol=1e-12)


def test_galerkin_check_is_exact():
    for name in ("p5", "p9", "mixed34"):
        assert galerkin_check(build_model("lmg", 4, get_problem(name)), 2) <= 1e-12
        assert galerkin_check(build_model("lmg", 4, get_problem(name)), 3) <= 1e-12


@pytest.mark.parametrize("name", list(PROBLEMS))
@pytest.mark.parametrize("J", [2, 3])
def test_lmg_estimate_agrees_with_exact_radius(name, J):
    exact, est = spectral_check("lmg", get_problem(name), J)
    assert abs(exact - est) <= 0.03


def test_symmetric_B_over_many_seeds():
    # two pre- and two post-sweeps with the same symmetric kernel make B self-adjoint in the A inner product
    net = build_model("lmg", 3, P5)
    exact = exact_spectral_radius(error_propagation_matrix(net))
    for seed in range(20):
        _, est = spectral_check("lmg", P5, 3, cfg=LossConfig(seed=seed))
        assert abs(est - exact) <= 0.03


# --- fully dense re-implementation of the cycle ---------------------------

def dense_cycle_error(net):
    """I - N A built only from assembled matrices and textbook two-grid algebra."""
    shapes = [net.level_shape(l) for l in range(1, net.n_levels + 2)]
    A = [fine_matrix(net.problem, shapes[0][0])]
    P = []
    for l, lp in enumerate(net.levels):
        w = net.kernels[lp.restriction]
        P.append(assemble(lambda x: fields.conv_down(x, w), shapes[l]).entries)
        A.append(P[-1] @ A[-1] @ P[-1].T)

    def error(l):
        n = A[l].shape[0]
        if l == net.n_levels:
            return np.zeros((n, n))  # exact coarse solve
        lp = net.levels[l]
        S = assemble(lambda x: fields.conv_same(x, net.kernels[lp.smoothers[0]]), shapes[l]).entries
        if lp.diag_scale is not None:
            S = np.diag(1 / np.diag(A[l])) @ S
        smooth = np.eye(n) - S @ A[l]
        Ec = error(l + 1)
        # coarse error propagation E_c = I - N_c A_c, so N_c = (I - E_c) A_c^{-1}
        Nc = (np.eye(Ec.shape[0]) - Ec) @ np.linalg.inv(A[l + 1])
        cgc = np.eye(n) - P[l].T @ Nc @ P[l] @ A[l]
        return (np.linalg.matrix_power(smooth, net.post_sweeps) @ cgc
                @ np.linalg.matrix_power(smooth, net.pre_sweeps))

    return error(0)


@pytest.mark.parametrize("kind", [ModelKind.LMG, ModelKind.S1MG_S, ModelKind.S3MG_S,
                                  ModelKind.S1MG_RS])
@pytest.mark.parametrize("J", [2, 3])
def test_probed_B_matches_dense_cycle(kind, J):
    kernels = None if kind is ModelKind.LMG else perturbed_kernels(kind, seed=J)
    net = build_model(kind, J, get_problem("mixed34"), kernels)
    np.testing.assert_allclose(error_propagation_matrix(net).entries, dense_cycle_error(net),
                               atol=1e-12)


def test_level_operator_equals_dense_product_level_two():
    net = build_model("lmg", 3, P5)
    A2 = assemble(lambda x: apply_level_operator(net, 2, x), (3, 3)).entries
    P = assemble(lambda x: fields.conv_down(x, net.kernels["restriction"]), (7, 7)).entries
    np.testing.assert_allclose(A2, P @ fine_matrix(P5, 7) @ P.T, atol=1e-15)
