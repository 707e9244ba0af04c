import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symwalks.errors import NegativeTime, PositiveOffDiagonal, Reducible
from symwalks.markov import (StateSpace, boltzmann_kernel, build_generator, expm,
                             feynman_kac_kernel, lattice_laplacian, laplacian_matrix,
                             principal_eig, transition_kernel)

from oracles import expm_series, random_h

TELEGRAPH = np.array([[0.5, -0.5], [-0.5, 0.5]])
SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])

seeds = st.integers(0, 2 ** 32 - 1)


def test_telegraph_generator():
    g = build_generator(TELEGRAPH)
    assert np.array_equal(g.htilde, TELEGRAPH)
    assert np.array_equal(g.hD, [0, 0])
    assert np.allclose(g.L, [[-0.5, 0.5], [0.5, -0.5]])


def test_diagonal_h_has_no_jumps():
    g = build_generator(np.diag([1.0, -2.0, 0.5]))
    assert np.array_equal(g.L, np.zeros((3, 3)))
    assert np.array_equal(g.hD, [-1.0, 2.0, -0.5])


def test_positive_off_diagonal_rejected():
    with pytest.raises(PositiveOffDiagonal):
        build_generator([[0.0, 0.1], [-0.2, 0.0]])


def test_random_htilde_columns(gen):
    g = build_generator(random_h(gen, 3))
    assert np.max(np.abs(g.htilde.sum(axis=0))) < 1e-14


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 4.0])
def test_telegraph_kernel_formula(t):
    P = transition_kernel(build_generator(TELEGRAPH), t).matrix
    labels = [1, -1]
    expected = np.array([[0.5 * (1 + x * y * math.exp(-t)) for y in labels] for x in labels])
    assert np.allclose(P, expected, atol=1e-14)


def test_telegraph_kernel_at_log2():
    P = transition_kernel(build_generator(TELEGRAPH), math.log(2)).matrix
    assert P[0, 0] == pytest.approx(0.75, abs=1e-14)


def test_transition_identity_and_negative_time():
    g = build_generator(TELEGRAPH)
    assert np.array_equal(transition_kernel(g, 0.0).matrix, np.eye(2))
    with pytest.raises(NegativeTime):
        transition_kernel(g, -1.0)


def test_fk_zero_potential_is_transition(gen):
    g = build_generator(random_h(gen, 4))
    assert np.allclose(feynman_kac_kernel(g, 0.0, 1.3).matrix, transition_kernel(g, 1.3).matrix,
                       atol=1e-14)


@pytest.mark.parametrize("a", [-1.0, 0.0, 0.4, 2.0])
def test_fk_telegraph_pauli(a):
    beta = 1.7
    g = build_generator(TELEGRAPH)
    K = feynman_kac_kernel(g, a * np.array([1.0, -1.0]), beta).matrix
    pauli = expm_series(a * SZ - 0.5 * (np.eye(2) - SX), beta)
    # <y| e^{...} |x> with the symmetric matrix
    assert np.allclose(K, pauli.T, atol=1e-13)


def test_single_site_absorbing_fk():
    g = lattice_laplacian(StateSpace.box([(0, 0)]), "absorbing")
    for beta in (0.5, 1.0, 3.0):
        assert feynman_kac_kernel(g, 0.0, beta).matrix[0, 0] == pytest.approx(math.exp(-2 * beta))


def test_confinement_zeroes_outside(gen):
    g = build_generator(random_h(gen, 4))
    K = feynman_kac_kernel(g, 0.0, 1.0, confine=[0, 2]).matrix
    sub = expm_series(g.L[np.ix_([0, 2], [0, 2])], 1.0)
    assert np.allclose(K[np.ix_([0, 2], [0, 2])], sub, atol=1e-13)
    assert np.all(K[1] == 0) and np.all(K[:, 3] == 0)


def test_boltzmann_telegraph_trace():
    for beta in (0.5, 2.0):
        K = boltzmann_kernel(build_generator(TELEGRAPH), beta).matrix
        assert np.trace(K) == pytest.approx(1 + math.exp(-beta), rel=1e-14)


def test_boltzmann_diagonal():
    d = np.array([0.3, -1.0, 2.0])
    K = boltzmann_kernel(build_generator(np.diag(d)), 1.5).matrix
    assert np.allclose(K, np.diag(np.exp(-1.5 * d)), rtol=1e-14)


def test_boltzmann_equals_fk_symmetric(gen):
    for _ in range(10):
        g = build_generator(random_h(gen, 3, symmetric=True))
        assert np.allclose(boltzmann_kernel(g, 0.9).matrix, feynman_kac_kernel(g, g.hD, 0.9).matrix,
                           atol=1e-12, rtol=0)


def test_boltzmann_against_series(gen):
    g = build_generator(random_h(gen, 5))
    assert np.allclose(boltzmann_kernel(g, 1.2).matrix, expm_series(-g.h, 1.2).T, rtol=1e-11)


def test_lattice_laplacians():
    one = StateSpace.box([(0, 0)])
    assert np.array_equal(laplacian_matrix(one, "absorbing"), [[-2.0]])
    two = StateSpace.box([(0, 1)])
    assert np.array_equal(laplacian_matrix(two, "absorbing"), [[-2.0, 1.0], [1.0, -2.0]])
    assert np.array_equal(laplacian_matrix(two, "internal"), [[-1.0, 1.0], [1.0, -1.0]])
    g = lattice_laplacian(two, "internal")
    assert np.array_equal(g.L, laplacian_matrix(two, "internal"))
    assert g.is_conservative


def test_absorbing_generator_killing():
    g = lattice_laplacian(StateSpace.box([(0, 2), (0, 1)]), "absorbing")
    assert np.array_equal(g.L, laplacian_matrix(g.space, "absorbing"))
    # corner sites lose two neighbours, edge sites one
    assert sorted(g.killing.tolist()) == [1.0, 1.0, 2.0, 2.0, 2.0, 2.0]


def test_max_metric_degree():
    sp = StateSpace.box([(0, 2), (0, 2)], metric="max")
    assert sp.lattice_degree == 8
    assert sp.adjacency[sp.index((1, 1))].sum() == 8


def test_principal_eig_examples():
    ep = principal_eig(laplacian_matrix(StateSpace.box([(0, 0)])))
    assert ep.value == -2.0 and np.array_equal(ep.vector, [1.0])
    ep = principal_eig(laplacian_matrix(StateSpace.box([(0, 1)])))
    assert ep.value == pytest.approx(-1.0)
    assert np.allclose(ep.vector, [1 / math.sqrt(2)] * 2)
    for a in (-1.3, 0.0, 0.7):
        ep = principal_eig(a * SZ - 0.5 * (np.eye(2) - SX))
        assert ep.value == pytest.approx(-0.5 + math.sqrt(0.25 + a * a), abs=1e-14)


def test_principal_eig_reducible():
    with pytest.raises(Reducible):
        principal_eig(np.diag([1.0, 2.0]))


def test_rayleigh_quotient_bound(gen):
    sp = StateSpace.box([(0, 3), (0, 2)])
    A = laplacian_matrix(sp) + np.diag(gen.normal(size=sp.n))
    lam = principal_eig(A).value
    v = gen.normal(size=(10_000, sp.n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rq = np.einsum("ij,jk,ik->i", v, A, v)
    assert rq.max() <= lam + 1e-12


@given(seeds, st.sampled_from([0.1, 1.0, 10.0]))
def test_rows_stochastic(seed, t):
    gen = np.random.default_rng(seed)
    g = build_generator(random_h(gen, int(gen.integers(1, 6))))
    P = transition_kernel(g, t).matrix
    assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-10
    assert np.all(P >= 0)


@given(seeds)
def test_htilde_columns_property(seed):
    gen = np.random.default_rng(seed)
    g = build_generator(random_h(gen, int(gen.integers(1, 7))))
    assert np.max(np.abs(g.htilde.sum(axis=0))) < 1e-12
    assert np.max(np.abs(g.L.sum(axis=1))) < 1e-12


@given(seeds)
def test_semigroup(seed):
    gen = np.random.default_rng(seed)
    g = build_generator(random_h(gen, 4))
    s, t = gen.uniform(0.05, 2.0, 2)
    lhs = transition_kernel(g, s).matrix @ transition_kernel(g, t).matrix
    assert np.allclose(lhs, transition_kernel(g, s + t).matrix, atol=1e-10)


@given(seeds)
def test_eigenvalue_convex(seed):
    gen = np.random.default_rng(seed)
    A = laplacian_matrix(StateSpace.box([(0, 4)]))
    f1, f2 = gen.normal(size=(2, 5)) * 2
    th = gen.uniform(0.01, 0.99)
    lam = lambda f: principal_eig(A + np.diag(f)).value
    assert lam(th * f1 + (1 - th) * f2) <= th * lam(f1) + (1 - th) * lam(f2) + 1e-10


@given(seeds)
def test_eigenvalue_gradient(seed):
    gen = np.random.default_rng(seed)
    A = laplacian_matrix(StateSpace.box([(0, 2), (0, 1)]))
    f = gen.normal(size=6)
    v = gen.normal(size=6)
    ep = principal_eig(A + np.diag(f))
    h = 1e-5
    fd = (principal_eig(A + np.diag(f + h * v)).value
          - principal_eig(A + np.diag(f - h * v)).value) / (2 * h)
    assert fd == pytest.approx(float(v @ ep.vector ** 2), abs=1e-6)


def test_expm_routes_agree(gen):
    M = gen.normal(size=(5, 5))
    S = M + M.T
    assert np.allclose(expm(M, 0.7), expm_series(M, 0.7), rtol=1e-12)
    assert np.allclose(expm(S, 0.7), expm_series(S, 0.7), rtol=1e-12)
