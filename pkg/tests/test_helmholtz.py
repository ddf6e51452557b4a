"""Weighted Helmholtz splitting: algebra, oracle solves, failure modes.

The variable-coefficient path is checked against a dense direct solve of
the discrete potential problem assembled mode by mode on a small grid, so
the iterative solver is never trusted on its own word.
"""

import numpy as np
import pytest

from maxmat import (
    Coefficients,
    FourierWorkspace,
    Grid3,
    apply_B,
    curl,
    weighted_inner,
    weighted_norm,
)
from maxmat.helmholtz import (
    ProjectionSolveError,
    ProjectorConfig,
    constraint_residual,
    project_P,
    project_complement,
    project_complement_state,
)

from .conftest import random_state, smooth_coefficients


def oracle_complement_dense(v, kappa, grid):
    """Direct dense solve of div(kappa grad phi) = div(kappa v).

    Assembles the operator column by column through the same spectral
    div/grad stencils, solves with numpy.linalg.lstsq on the mean-zero
    complement, and returns grad phi. O(n^6) memory, 8^3 only.
    """
    ws = FourierWorkspace(grid)

    def grad(phi):
        ph = np.fft.rfftn(phi)
        return np.stack(
            [np.fft.irfftn(1j * ws.xi[i] * ph, s=grid.shape, axes=(0, 1, 2)) for i in range(3)]
        )

    def div(w):
        wh = np.fft.rfftn(w, axes=(-3, -2, -1))
        return np.fft.irfftn(
            sum(1j * ws.xi[i] * wh[i] for i in range(3)), s=grid.shape, axes=(0, 1, 2)
        )

    size = grid.n**3
    cols = np.empty((size, size))
    for j in range(size):
        e = np.zeros(size)
        e[j] = 1.0
        cols[:, j] = div(kappa * grad(e.reshape(grid.shape))).ravel()
    rhs = div(kappa * v).ravel()
    phi, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
    phi -= phi.mean()
    return grad(phi.reshape(grid.shape))


def test_constant_path_idempotent_and_orthogonal(grid16, ws16, rng):
    co = Coefficients.constant(grid16, 2.0, 0.5)
    u = random_state(rng, grid16)
    pu = project_P(u, co, ws16)
    qu = u - pu
    ppu = project_P(pu, co, ws16)
    assert weighted_norm(ppu - pu, co, grid16) < 1e-12 * weighted_norm(u, co, grid16)
    # the two parts are orthogonal in the weighted inner product
    ip = weighted_inner(pu, qu, co, grid16)
    assert abs(ip) < 1e-12 * weighted_norm(u, co, grid16) ** 2


def test_variable_path_idempotent_and_orthogonal(grid16, ws16, rng):
    co = smooth_coefficients(grid16)
    u = random_state(rng, grid16)
    pu = project_P(u, co, ws16)
    qu = u - pu
    ppu = project_P(pu, co, ws16)
    assert weighted_norm(ppu - pu, co, grid16) < 1e-9 * weighted_norm(u, co, grid16)
    ip = weighted_inner(pu, qu, co, grid16)
    assert abs(ip) < 1e-9 * weighted_norm(u, co, grid16) ** 2


@pytest.mark.parametrize("variable", [False, True])
def test_complement_is_curl_free(grid16, ws16, rng, variable):
    co = smooth_coefficients(grid16) if variable else Coefficients.constant(grid16, 1.0, 3.0)
    v = rng.standard_normal((3,) + grid16.shape)
    g = project_complement(v, co.kappa1, ws16, ProjectorConfig())
    assert np.abs(curl(g, ws16)).max() < 1e-10 * max(np.abs(g).max(), 1e-30)


@pytest.mark.parametrize("variable", [False, True])
def test_remainder_is_weighted_div_free(grid16, ws16, rng, variable):
    co = smooth_coefficients(grid16) if variable else Coefficients.constant(grid16, 1.0, 3.0)
    v = rng.standard_normal((3,) + grid16.shape)
    g = project_complement(v, co.kappa1, ws16, ProjectorConfig())
    w = np.fft.rfftn(co.kappa1 * (v - g), axes=(-3, -2, -1))
    div_hat = sum(1j * ws16.xi[i] * w[i] for i in range(3))
    div = np.fft.irfftn(div_hat, s=grid16.shape, axes=(0, 1, 2))
    # compare against the divergence content of the input
    w0 = np.fft.rfftn(co.kappa1 * v, axes=(-3, -2, -1))
    div0 = np.fft.irfftn(sum(1j * ws16.xi[i] * w0[i] for i in range(3)), s=grid16.shape, axes=(0, 1, 2))
    assert np.abs(div).max() < 1e-9 * np.abs(div0).max()


def test_complement_matches_dense_oracle(grid8, rng):
    grid = grid8
    xx, yy, zz = grid.meshgrid()
    kappa = 1.0 + 0.5 * np.exp(-((xx - 0.5) ** 2 + (yy - 0.5) ** 2 + (zz - 0.5) ** 2) / 0.03)
    v = rng.standard_normal((3,) + grid.shape)
    ws = FourierWorkspace(grid)
    got = project_complement(v, kappa, ws, ProjectorConfig(rtol=1e-13))
    expect = oracle_complement_dense(v, kappa, grid)
    assert np.abs(got - expect).max() < 1e-8 * np.abs(expect).max()


def test_complement_recovers_pure_gradient(grid16, ws16, rng):
    # a curl-free input must be returned unchanged (it is its own complement)
    phi = rng.standard_normal(grid16.shape)
    ph = np.fft.rfftn(phi)
    g = np.stack([np.fft.irfftn(1j * ws16.xi[i] * ph, s=grid16.shape, axes=(0, 1, 2)) for i in range(3)])
    co = smooth_coefficients(grid16)
    out = project_complement(g, co.kappa1, ws16, ProjectorConfig())
    assert np.abs(out - g).max() < 1e-9 * np.abs(g).max()


def test_projector_annihilates_B_range(grid16, ws16, rng):
    # (Id - P) B = 0: the evolution never creates curl-free content
    for co in (Coefficients.constant(grid16, 2.0, 0.5), smooth_coefficients(grid16)):
        u = random_state(rng, grid16)
        bu = apply_B(u, co, ws16)
        qbu = bu - project_P(bu, co, ws16)
        assert weighted_norm(qbu, co, grid16) < 1e-10 * weighted_norm(bu, co, grid16)


def test_projector_keeps_spatial_mean(grid16, ws16, rng):
    co = smooth_coefficients(grid16)
    u = random_state(rng, grid16)
    pu = project_P(u, co, ws16)
    np.testing.assert_allclose(
        pu.mean(axis=(1, 2, 3)), u.mean(axis=(1, 2, 3)), atol=1e-12
    )


def test_constraint_residual_normalization(grid16, ws16, rng):
    co = Coefficients.constant(grid16, 1.0, 1.0)
    zero = np.zeros((6,) + grid16.shape)
    assert constraint_residual(zero, zero, co, ws16, ProjectorConfig()) == 0.0
    u = random_state(rng, grid16)
    r1 = constraint_residual(u, zero, co, ws16, ProjectorConfig())
    r2 = constraint_residual(3.0 * u, zero, co, ws16, ProjectorConfig())
    # scale-invariant in the state
    assert r2 == pytest.approx(r1, rel=1e-10)
    # a projected state has no curl-free content at all
    pu = project_P(u, co, ws16)
    assert constraint_residual(pu, zero, co, ws16, ProjectorConfig()) < 1e-11


def test_complement_state_applies_per_slot(grid16, ws16, rng):
    co = smooth_coefficients(grid16)
    u = random_state(rng, grid16)
    out = project_complement_state(u, co, ws16, ProjectorConfig())
    np.testing.assert_allclose(
        out[0:3],
        project_complement(u[0:3], co.kappa1, ws16, ProjectorConfig()),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        out[3:6],
        project_complement(u[3:6], co.kappa2, ws16, ProjectorConfig()),
        atol=1e-12,
    )


def test_solver_reports_exhaustion(grid16, ws16, rng):
    co = smooth_coefficients(grid16)
    v = rng.standard_normal((3,) + grid16.shape)
    with pytest.raises(ProjectionSolveError):
        project_complement(v, co.kappa1, ws16, ProjectorConfig(rtol=1e-15, max_iter=2))


def test_projector_config_validation():
    with pytest.raises(ValueError):
        ProjectorConfig(rtol=0.0)
    with pytest.raises(ValueError):
        ProjectorConfig(max_iter=0)
