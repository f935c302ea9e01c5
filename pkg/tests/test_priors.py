import numpy as np
import pytest

from dccs.data_model import DynamicDataset
from dccs.priors import (
    PriorKind,
    PriorTag,
    nuclear_norm,
    phi_value,
    prox,
    prox_nuclear,
    prox_temporal_fourier,
    prox_temporal_tv,
    soft_threshold,
    temporal_fourier_l1,
    temporal_tv,
)

from conftest import random_dataset


# ---------------------------------------------------------------------------
# independent oracles


def dft_matrix(n):
    """Unitary DFT matrix built from first principles."""
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-2j * np.pi * j * k / n) / np.sqrt(n)


def shrink_scalar(z, tau):
    m = abs(z)
    if m == 0:
        return 0.0 * z
    return z / m * max(m - tau, 0.0)


def prox_tf_oracle(vals, tau):
    """Coefficient-wise shrinkage with an explicit per-pixel DFT."""
    nt, ny, nx = vals.shape
    F = dft_matrix(nt)
    out = np.empty_like(vals)
    for y in range(ny):
        for x in range(nx):
            coeff = F @ vals[:, y, x]
            coeff = np.array([shrink_scalar(c, tau) for c in coeff])
            out[:, y, x] = F.conj().T @ coeff
    return out


def svt_oracle(vals, tau):
    """Singular value shrinkage via eigendecompositions of the Gram matrices."""
    nt = vals.shape[0]
    Q = vals.reshape(nt, -1).T
    ev_v, V = np.linalg.eigh(Q.conj().T @ Q)   # right singular vectors
    order = np.argsort(ev_v)[::-1]
    s = np.sqrt(np.clip(ev_v[order], 0, None))
    V = V[:, order]
    U = np.zeros((Q.shape[0], len(s)), complex)
    for i in range(len(s)):
        if s[i] > 1e-12:
            U[:, i] = (Q @ V[:, i]) / s[i]
    G = (U * np.maximum(s - tau, 0.0)) @ V.conj().T
    return G.T.reshape(vals.shape)


def tv_objective(q, g, tau):
    diff = np.roll(g, -1, axis=0) - g
    return float(np.sum(np.abs(q - g) ** 2) + 2 * tau * np.sum(np.abs(diff)))


def tv_prox_cvx(q, tau):
    """Exact circular 1-D TV prox by convex programming (test oracle)."""
    import cvxpy as cp

    g = cp.Variable(q.shape[0])
    obj = cp.sum_squares(q - g) + 2 * tau * cp.sum(cp.abs(g[np.r_[1:len(q), 0]] - g))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve()
    return g.value, prob.value


# ---------------------------------------------------------------------------
# soft threshold


def test_soft_threshold_basics():
    assert soft_threshold(3.0, 1.0) == pytest.approx(2.0)
    assert soft_threshold(0.5, 1.0) == 0.0
    z = 4.0 * np.exp(1j * np.pi / 4)
    out = soft_threshold(z, 1.0)
    assert abs(out - 3.0 * np.exp(1j * np.pi / 4)) < 1e-12
    assert soft_threshold(0.0, 1.0) == 0.0


def test_soft_threshold_rejects_negative_tau():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


# ---------------------------------------------------------------------------
# temporal Fourier prox


def test_prox_tf_zero_tau_is_identity(rng):
    q = random_dataset(rng, 8, 4, 4)
    out = prox_temporal_fourier(q, 0.0)
    assert np.max(np.abs(out.values - q.values)) < 1e-12


def test_prox_tf_constant_series_shrinks_dc(rng):
    vals = np.broadcast_to(rng.standard_normal((1, 4, 4)) + 2.0, (8, 4, 4)).copy()
    q = DynamicDataset(vals)
    tau = 0.5
    out = prox_temporal_fourier(q, tau).values
    # output stays constant in time
    assert np.max(np.abs(out - out[0])) < 1e-12
    # DC coefficient magnitude sqrt(nt)*|v| reduced by tau
    expect = vals[0] * (1 - tau / (np.sqrt(8) * np.abs(vals[0])))
    assert np.allclose(out[0], expect, atol=1e-12)


def test_prox_tf_matches_coefficientwise_oracle(rng):
    q = random_dataset(rng, 8, 4, 4)
    tau = 0.3
    out = prox_temporal_fourier(q, tau).values
    oracle = prox_tf_oracle(q.values, tau)
    assert np.max(np.abs(out - oracle)) < 1e-10


def test_prox_tf_commutes_with_pixel_permutation(rng):
    q = random_dataset(rng, 6, 4, 5)
    perm = rng.permutation(20)
    flat = q.values.reshape(6, -1)
    q_perm = DynamicDataset(flat[:, perm].reshape(6, 4, 5))
    a = prox_temporal_fourier(q, 0.2).values.reshape(6, -1)[:, perm]
    b = prox_temporal_fourier(q_perm, 0.2).values.reshape(6, -1)
    assert np.max(np.abs(a - b)) < 1e-12


# ---------------------------------------------------------------------------
# nuclear prox


def test_prox_nuclear_diagonal_case():
    # Casorati matrix diag(3, 1) as 2 pixels x 2 frames
    vals = np.zeros((2, 1, 2), complex)  # pixels along x
    vals[0, 0, 0] = 3.0
    vals[1, 0, 1] = 1.0
    out = prox_nuclear(DynamicDataset(vals), 1.0)
    Q = out.values.reshape(2, 2).T
    s = np.linalg.svd(Q, compute_uv=False)
    assert np.allclose(sorted(s, reverse=True), [2.0, 0.0], atol=1e-12)


def test_prox_nuclear_zero_tau_identity(rng):
    q = random_dataset(rng, 5, 3, 2)
    out = prox_nuclear(q, 0.0)
    assert np.max(np.abs(out.values - q.values)) < 1e-10


def test_prox_nuclear_matches_eig_oracle_small(rng):
    q = random_dataset(rng, 5, 2, 3)  # 6 pixels, 5 frames: LAPACK SVD path
    out = prox_nuclear(q, 0.3).values
    oracle = svt_oracle(q.values, 0.3)
    assert np.max(np.abs(out - oracle)) < 1e-9


def test_prox_nuclear_matches_eig_oracle_gram_path(rng):
    q = random_dataset(rng, 5, 5, 5)  # 25 pixels >= 4*5 frames: Gram path
    out = prox_nuclear(q, 0.2).values
    oracle = svt_oracle(q.values, 0.2)
    assert np.max(np.abs(out - oracle)) < 1e-9


# ---------------------------------------------------------------------------
# temporal TV prox


def test_prox_ttv_zero_tau_identity(rng):
    q = random_dataset(rng, 8, 3, 3)
    out = prox_temporal_tv(q, 0.0, temporal_tv())
    assert np.array_equal(out.values, q.values)


def test_prox_ttv_piecewise_constant_fixed_point():
    profile = np.array([1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 1.0])
    vals = np.tile(profile[:, None, None], (1, 2, 2)).astype(complex)
    q = DynamicDataset(vals)
    out = prox_temporal_tv(q, 0.01, temporal_tv(tv_inner_iters=20)).values
    # small tau barely moves an already piecewise-constant profile
    assert np.max(np.abs(out - vals)) < 1e-2
    assert tv_objective(vals[:, 0, 0], out[:, 0, 0], 0.01) <= tv_objective(
        vals[:, 0, 0], vals[:, 0, 0], 0.01) + 1e-12


def test_prox_ttv_objective_near_exact_oracle(rng):
    cvx = pytest.importorskip("cvxpy")  # noqa: F841
    tau = 0.5
    for _ in range(5):
        series = rng.standard_normal(8)
        q = DynamicDataset(series[:, None, None].astype(complex))
        out = prox_temporal_tv(q, tau, temporal_tv()).values[:, 0, 0]
        _, best = tv_prox_cvx(series, tau)
        ours = tv_objective(series, out.real, tau)
        assert ours <= best * 1.005 + 1e-9


# ---------------------------------------------------------------------------
# penalty values


@pytest.mark.parametrize("kind", [temporal_fourier_l1(), temporal_tv(), nuclear_norm()])
def test_phi_zero_dataset(kind):
    g = DynamicDataset(np.zeros((4, 3, 3), complex))
    assert phi_value(g, kind) == 0.0


def test_phi_nuclear_rank_one_equals_frobenius(rng):
    space = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
    t = rng.standard_normal((6, 1, 1))
    g = DynamicDataset(space * t)
    nuc = phi_value(g, nuclear_norm())
    fro = np.linalg.norm(g.values.ravel())
    assert nuc == pytest.approx(fro, rel=1e-10)


def test_phi_tfl1_matches_direct_dft_oracle(rng):
    g = random_dataset(rng, 7, 3, 4)
    F = dft_matrix(7)
    total = 0.0
    for y in range(3):
        for x in range(4):
            total += np.abs(F @ g.values[:, y, x]).sum()
    assert phi_value(g, temporal_fourier_l1()) == pytest.approx(total, rel=1e-10)


# ---------------------------------------------------------------------------
# prox properties


@pytest.mark.parametrize("kind", [temporal_fourier_l1(), nuclear_norm(),
                                  temporal_tv(tv_inner_iters=30)])
def test_prox_nonexpansive(rng, kind):
    tau = 0.4
    for _ in range(10):
        q1 = random_dataset(rng, 6, 4, 4)
        q2 = random_dataset(rng, 6, 4, 4)
        d_in = np.linalg.norm((q1.values - q2.values).ravel())
        d_out = np.linalg.norm((prox(q1, tau, kind).values - prox(q2, tau, kind).values).ravel())
        assert d_out <= d_in * (1 + 1e-6)


@pytest.mark.parametrize("kind", [temporal_fourier_l1(), nuclear_norm(), temporal_tv()])
def test_prox_optimality_beats_trivial_candidate(rng, kind):
    # Phi(prox(q)) + (beta/2)||q - prox(q)||^2 <= Phi(q), with beta = 1/tau
    tau = 0.3
    beta = 1.0 / tau
    for _ in range(10):
        q = random_dataset(rng, 6, 4, 4)
        g = prox(q, tau, kind)
        lhs = phi_value(g, kind) + 0.5 * beta * np.sum(np.abs(q.values - g.values) ** 2)
        assert lhs <= phi_value(q, kind) * (1 + 1e-9) + 1e-12


def test_prox_kind_validation():
    with pytest.raises(Exception):
        PriorKind(PriorTag.TEMPORAL_TV, tv_inner_iters=0)
    with pytest.raises(Exception):
        prox_temporal_tv(DynamicDataset(np.zeros((2, 2, 2), complex)), 0.1, nuclear_norm())
