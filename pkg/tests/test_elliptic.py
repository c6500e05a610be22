import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from scipy.signal import fftconvolve
from scipy.sparse.linalg import spsolve

from rs_kernels.canonical import CanonicalTensor3, GridSpec
from rs_kernels.elliptic import (GridField, PbeConfig, fibonacci_sphere, impulse_field,
                                 interface_samples, modified_rhs, pbe_regularize_rhs,
                                 poisson_eigenvalues, regularized_poisson, short_convolve,
                                 solve_poisson_dirichlet, support_distance)
from rs_kernels.operators import laplacian_1d, laplacian_dense
from rs_kernels.quadrature import build_sinc_rule, newton
from rs_kernels.range_separation import ParticleSystem, short_window, split_kernel


def _dense_negative_laplacian(n, h):
    L = laplacian_1d(n, h)
    I = sp.identity(n)
    return -(sp.kron(sp.kron(L, I), I) + sp.kron(sp.kron(I, L), I) + sp.kron(sp.kron(I, I), L))


def test_dirichlet_solver_matches_sparse_solve(rng):
    g = GridSpec(1.0, 12)
    f = rng.standard_normal(g.shape)
    u = solve_poisson_dirichlet(f, g)
    ref = spsolve(_dense_negative_laplacian(g.n, g.h).tocsc(), f.ravel()).reshape(g.shape)
    assert np.allclose(u, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


@pytest.mark.parametrize("n", [16, 64, 128])
def test_dirichlet_residual(n):
    g = GridSpec(2.0, n)
    f = np.random.default_rng(n).standard_normal(g.shape)
    u = solve_poisson_dirichlet(f, g)
    assert np.linalg.norm(-laplacian_dense(u, g.h) - f) <= 1e-10 * np.linalg.norm(f)


def test_sine_eigenvector_product():
    g = GridSpec(1.0, 10)
    i = np.arange(1, 11)
    v = np.sin(np.pi * i / 11)
    U = np.einsum("i,j,k->ijk", v, v, v)
    lam = 3 * poisson_eigenvalues(10, g.h)[0]
    assert np.allclose(solve_poisson_dirichlet(lam * U, g), U, atol=1e-12)


def _window(M=16, sigma=0.3, n=32, b=1.0):
    g = GridSpec(b, n)
    ref = split_kernel(build_sinc_rule(newton(), M), g.double(), sigma=sigma, delta=1e-4)
    gamma = math.ceil(sigma / g.h)
    return g, ref, short_window(ref.short, gamma)


@pytest.mark.parametrize("method", ["separable", "scatter", "auto"])
def test_short_convolve_matches_dense_convolution(method):
    g, _, kern = _window()
    rng = np.random.default_rng(7)
    f = np.zeros(g.shape)
    idx = rng.integers(0, g.n, size=(12, 3))
    f[tuple(idx.T)] = rng.standard_normal(12)
    got = short_convolve(kern, f, g, method)
    full = fftconvolve(f, kern.dense(), mode="same")
    assert np.allclose(got, full, rtol=0, atol=1e-12 * np.abs(full).max())


def test_short_convolve_impulse_and_support():
    g, _, kern = _window()
    gamma = kern.grid.n // 2
    f = impulse_field(g, [(16, 16, 16)], [1.0])
    u = short_convolve(kern, f, g)
    sl = slice(16 - gamma, 17 + gamma)
    assert np.allclose(u[sl, sl, sl], kern.dense() / g.h ** 3, rtol=1e-13)
    mask = np.ones(g.shape, bool)
    mask[sl, sl, sl] = False
    assert not np.any(u[mask])
    with pytest.raises(ValueError):
        short_convolve(kern, f, GridSpec(2.0, 32))
    with pytest.raises(ValueError):
        short_convolve(kern, f, g, "fft")


def test_support_of_modified_rhs():
    g, ref, kern = _window()
    gamma = kern.grid.n // 2
    f = impulse_field(g, [(10, 12, 20)], [2.0])
    fb = modified_rhs(f, short_convolve(kern, f, g), g)
    nz = np.argwhere(fb != 0)
    assert np.all(np.abs(nz - [10, 12, 20]).max(axis=1) <= gamma + 1)
    # the window spans gamma = ceil(sigma/h) cells and the stencil one more
    assert support_distance(fb, g) >= support_distance(f, g) - (gamma + 1) * g.h - 1e-12
    assert gamma == math.ceil(ref.sigma / g.h)


def test_all_short_kernel_consumes_the_charge():
    # with every term short, fbar = f - delta_h * f; its total mass nearly cancels
    g = GridSpec(4.0, 33)
    ref = split_kernel(build_sinc_rule(newton(), 24), g.double(), R_l=-1)
    f = impulse_field(g, [(16, 16, 16)], [1.0])
    fb = modified_rhs(f, short_convolve(short_window(ref.short, 32), f, g), g)
    s = slice(4, -4)
    assert abs(fb[s, s, s].sum() * g.h ** 3) < 1e-3
    assert np.abs(fb).max() * g.h ** 3 < 0.5


def _gain(n, b, R_l=None, sigma=None):
    g = GridSpec(b, n)
    rule = build_sinc_rule(newton(), 24)
    ref = split_kernel(rule, g.double(), sigma=sigma, delta=1e-4 if sigma else None, R_l=R_l)
    c = n // 2
    f = impulse_field(g, [(c, c, c)], [1.0])
    gamma = min(max(1, math.ceil(ref.sigma / g.h)), n // 2)
    fb = modified_rhs(f, short_convolve(short_window(ref.short, gamma), f, g), g)
    return np.abs(laplacian_dense(fb, g.h)).max() / np.abs(laplacian_dense(f, g.h)).max()


def test_regularity_gain_measured():
    # measured: the projected kernel is not the exact inverse of the stencil,
    # so a third of the impulse survives in fbar
    assert _gain(129, 10.0, sigma=0.9) < 0.5


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="Galerkin kernel vs 7-point stencil leaves O(1) residual; see decision log")
def test_regularity_gain_half_rank():
    assert _gain(129, 10.0, R_l=24) <= 1e-2


def test_regularized_equals_direct():
    g = GridSpec(4.0, 64)
    ref = split_kernel(build_sinc_rule(newton(), 24), g.double(), sigma=0.9, delta=1e-4)
    cells = [(15, 20, 30), (48, 40, 22), (30, 30, 30), (20, 45, 40), (40, 18, 47)]
    f = impulse_field(g, cells, [1.0, -2.0, 0.5, 1.5, -1.0])
    u, rep = regularized_poisson(GridField(g, f), ref)
    assert rep["max_rel_diff_direct"] <= 1e-8
    assert rep["boundary_trace_us"] == 0.0
    assert rep["distance_condition"] and "warning" not in rep
    assert rep["residual"] <= 1e-10


def test_regularized_warns_near_boundary():
    g = GridSpec(1.0, 32)
    ref = split_kernel(build_sinc_rule(newton(), 16), g.double(), sigma=0.3, delta=1e-4)
    f = impulse_field(g, [(0, 16, 16)], [1.0])
    u, rep = regularized_poisson(f, ref, g)
    assert not rep["distance_condition"] and "warning" in rep
    assert rep["max_rel_diff_direct"] <= 1e-8


@given(seed=st.integers(0, 10 ** 6), k=st.integers(1, 6))
def test_scheme_exactness_random(seed, k):
    g = GridSpec(1.0, 16)
    ref = split_kernel(build_sinc_rule(newton(), 12), g.double(), sigma=0.2, delta=1e-3)
    rng = np.random.default_rng(seed)
    f = impulse_field(g, rng.integers(4, 12, size=(k, 3)), rng.standard_normal(k))
    u, rep = regularized_poisson(f, ref, g)
    assert rep["max_rel_diff_direct"] <= 1e-8


def test_grid_field():
    g = GridSpec(1.0, 4)
    t = CanonicalTensor3.random(g, 2, 0)
    assert np.allclose(GridField(g, t).array(), t.dense())
    with pytest.raises(ValueError):
        GridField(g, np.zeros((3, 3, 3)))


def test_fibonacci_and_interface():
    u = fibonacci_sphere(500)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    assert np.abs(u.mean(axis=0)).max() < 1e-2
    cfg = PbeConfig(2.0, 78.5, ParticleSystem([[0, 0, 0], [1.0, 0, 0]], [1, -1]), 1.0)
    pts, nrm = interface_samples(cfg, 400)
    d = np.linalg.norm(pts[:, None, :] - cfg.centers[None], axis=2)
    assert np.all(d.min(axis=1) == pytest.approx(1.0)) and len(pts) < 800


def test_pbe_config_validation():
    ps = ParticleSystem([[0, 0, 0]], [1.0])
    for kw in [dict(eps_m=0.0, eps_s=1.0), dict(eps_m=2.0, eps_s=1.0),
               dict(eps_m=1.0, eps_s=2.0, kappa=-1.0), dict(eps_m=1.0, eps_s=2.0, radius=0.0)]:
        with pytest.raises(ValueError):
            PbeConfig(charges=ps, **kw)


@pytest.fixture(scope="module")
def single_atom():
    cfg = PbeConfig(2.0, 78.5, ParticleSystem([[0.0, 0.0, 0.0]], [1.0]), 1.5)
    g = GridSpec(5.0, 65)
    return cfg, g, pbe_regularize_rhs(cfg, g, M=64, delta=1e-6, eps=1e-5)


def test_pbe_single_atom_support(single_atom):
    cfg, g, (rho, us, rep) = single_atom
    assert rep["support_embedded"] and rep["support_cells_outside"] == 0
    assert rep["interface_ok"]
    assert rep["sigma"] == 1.5


def test_pbe_eps_m_scaling(single_atom):
    cfg, g, (rho, us, rep) = single_atom
    cfg2 = PbeConfig(4.0, 78.5, cfg.charges, 1.5)
    rho2, us2, _ = pbe_regularize_rhs(cfg2, g, M=64, delta=1e-6, eps=1e-5)
    # rho_long = -eps_m A u_long with u_long = P_L / eps_m does not depend on eps_m
    assert np.allclose(rho2.array(), rho.array(), rtol=0, atol=1e-12 * np.abs(rho.array()).max())
    assert np.allclose(us2.array(), 0.5 * us.array(), rtol=1e-14)


def test_pbe_rejects_wide_sigma():
    cfg = PbeConfig(2.0, 78.5, ParticleSystem([[0.0, 0.0, 0.0]], [1.0]), 1.5)
    with pytest.raises(ValueError, match="exceeds"):
        pbe_regularize_rhs(cfg, GridSpec(5.0, 16), sigma=2.0)
    with pytest.raises(ValueError, match="outside"):
        pbe_regularize_rhs(PbeConfig(2.0, 78.5, ParticleSystem([[6.0, 0, 0]], [1.0])), GridSpec(5.0, 16))
