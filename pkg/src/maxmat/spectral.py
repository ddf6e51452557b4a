"""Fourier-side machinery: curl, the skew-adjoint field operator, its
exact free propagator, and the spectral mollifier family.

Everything here uses real-to-complex FFTs batched over the leading
component axis. Transforms are the only O(n^3 log n) operation in the
package; all multipliers are cached per workspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Coefficients, Grid3, require_same_grid


class FourierWorkspace:
    """Cached wavevector tables for one grid.

    Wavevectors follow the numpy fftfreq convention scaled by 2*pi/L, so
    ``ifft(1j * xi * fft(f))`` is the exact spectral derivative of a
    trigonometric polynomial on the box.

    The Nyquist column is zeroed in every odd multiplier. On an even grid
    that frequency is shared between +n/2 and -n/2, so an odd multiplier
    like xi cannot stay Hermitian-symmetric there; keeping it would let
    the inverse transform silently symmetrize the result and break the
    exact operator identities (div curl = 0, adjointness) on fields with
    Nyquist content. Even multipliers are symmetric there, so the radial
    frequency used by scalar filters (``xi_norm_even``) keeps the true
    Nyquist magnitude.
    """

    def __init__(self, grid: Grid3):
        self.grid = grid
        n, d = grid.n, grid.spacing
        kx = 2.0 * np.pi * np.fft.fftfreq(n, d=d)
        kz = 2.0 * np.pi * np.fft.rfftfreq(n, d=d)
        true_sq = (
            kx.reshape(n, 1, 1) ** 2
            + kx.reshape(1, n, 1) ** 2
            + kz.reshape(1, 1, kz.size) ** 2
        )
        self.xi_norm_even = np.sqrt(true_sq)
        kx[n // 2] = 0.0
        kz[-1] = 0.0
        self.xi = (
            kx.reshape(n, 1, 1),
            kx.reshape(1, n, 1),
            kz.reshape(1, 1, kz.size),
        )
        self.xi_sq = self.xi[0] ** 2 + self.xi[1] ** 2 + self.xi[2] ** 2
        self.xi_norm = np.sqrt(self.xi_sq)
        with np.errstate(invalid="ignore", divide="ignore"):
            inv = np.where(self.xi_norm > 0, 1.0 / np.where(self.xi_norm > 0, self.xi_norm, 1.0), 0.0)
        self.khat = np.stack([np.broadcast_to(x, self.xi_sq.shape) * inv for x in self.xi])
        self.spectral_shape = self.xi_sq.shape
        # Parseval weights for the half-spectrum: planes kz=0 and kz=Nyquist
        # carry no conjugate partner in the rfft layout.
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        if n % 2 == 0:
            w[..., -1] = 1.0
        self.mode_weights = w

    def forward(self, fields: np.ndarray) -> np.ndarray:
        """rfftn over the trailing three axes; leading axes are batched."""
        return np.fft.rfftn(fields, axes=(-3, -2, -1))

    def inverse(self, spectra: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(spectra, s=self.grid.shape, axes=(-3, -2, -1))

    def cross_xi(self, vhat: np.ndarray) -> np.ndarray:
        """xi wedge vhat, componentwise on a (3, ...) spectral stack."""
        x0, x1, x2 = self.xi
        return np.stack(
            [
                x1 * vhat[2] - x2 * vhat[1],
                x2 * vhat[0] - x0 * vhat[2],
                x0 * vhat[1] - x1 * vhat[0],
            ]
        )

    def cross_khat(self, vhat: np.ndarray) -> np.ndarray:
        """Unit-wavevector wedge vhat; the zero mode maps to zero."""
        k = self.khat
        return np.stack(
            [
                k[1] * vhat[2] - k[2] * vhat[1],
                k[2] * vhat[0] - k[0] * vhat[2],
                k[0] * vhat[1] - k[1] * vhat[0],
            ]
        )


def curl(v: np.ndarray, ws: FourierWorkspace) -> np.ndarray:
    """Spectral curl of a (3, n, n, n) vector field."""
    if v.shape != (3,) + ws.grid.shape:
        raise ValueError(f"expected a 3-vector field on {ws.grid.shape}, got {v.shape}")
    return ws.inverse(1j * ws.cross_xi(ws.forward(v)))


def apply_B(state: np.ndarray, coeffs: Coefficients, ws: FourierWorkspace) -> np.ndarray:
    """The coupled curl operator B(u1, u2) = (curl u2 / k1, -curl u1 / k2).

    Skew-adjoint in the weighted inner product for any positive, possibly
    space-dependent coefficients.
    """
    require_same_grid(state, coeffs.kappa1)
    out = np.empty_like(state)
    out[0:3] = curl(state[3:6], ws) / coeffs.kappa1
    out[3:6] = -curl(state[0:3], ws) / coeffs.kappa2
    return out


class FreePropagator:
    """Exact evolution exp(-t B) for spatially constant coefficients.

    Per Fourier mode the parallel parts (along the wavevector) are frozen
    and the transverse parts rotate with angular frequency
    |xi| / sqrt(k1 k2):

        u1(t) = u1_par + cos(wt) u1_perp - i sin(wt) sqrt(k2/k1) khat ^ u2
        u2(t) = u2_par + cos(wt) u2_perp + i sin(wt) sqrt(k1/k2) khat ^ u1

    The zero mode is preserved. The map is unitary in the weighted norm.
    """

    def __init__(self, coeffs: Coefficients, ws: FourierWorkspace):
        k1, k2 = coeffs.constant_values()
        self.ws = ws
        self.kappa1 = k1
        self.kappa2 = k2
        self.omega = ws.xi_norm / np.sqrt(k1 * k2)
        self.ratio12 = np.sqrt(k2 / k1)
        self.ratio21 = np.sqrt(k1 / k2)

    def apply_hat(self, state_hat: np.ndarray, t: float) -> np.ndarray:
        """Propagate a (6, ...) spectral stack by exp(-t B)."""
        ws = self.ws
        u1, u2 = state_hat[0:3], state_hat[3:6]
        par1 = ws.khat * np.einsum("c...,c...->...", ws.khat, u1)
        par2 = ws.khat * np.einsum("c...,c...->...", ws.khat, u2)
        c = np.cos(self.omega * t)
        s = np.sin(self.omega * t)
        out = np.empty_like(state_hat)
        out[0:3] = par1 + c * (u1 - par1) - 1j * s * self.ratio12 * ws.cross_khat(u2)
        out[3:6] = par2 + c * (u2 - par2) + 1j * s * self.ratio21 * ws.cross_khat(u1)
        # khat is zero at the zero mode, so (u - par) there would rotate the
        # mean; re-pin it explicitly.
        out[..., 0, 0, 0] = state_hat[..., 0, 0, 0]
        return out

    def apply(self, state: np.ndarray, t: float) -> np.ndarray:
        """Propagate a physical (6, n, n, n) state by exp(-t B)."""
        if state.shape != (6,) + self.ws.grid.shape:
            raise ValueError(f"expected an EM state on {self.ws.grid.shape}, got {state.shape}")
        return self.ws.inverse(self.apply_hat(self.ws.forward(state), t))


@dataclass(frozen=True)
class MollifierSpec:
    """Spectral low-pass of index ``n_mol``.

    The symbol depends only on s = |xi| / (n_mol * 2 pi / L): identically
    one for s <= 1, identically zero for s >= 2, and a C-infinity
    partition-of-unity rolloff in between. Larger index keeps more modes;
    once 2 pi n_mol / L exceeds the grid Nyquist radius the operator is
    the identity on representable fields.
    """

    n_mol: int

    def __post_init__(self):
        if self.n_mol < 1:
            raise ValueError(f"mollifier index must be >= 1, got {self.n_mol}")

    def symbol(self, ws: FourierWorkspace) -> np.ndarray:
        s = ws.xi_norm_even / (self.n_mol * 2.0 * np.pi / ws.grid.box_len)
        return _smooth_cutoff(s)


def _bump(t: np.ndarray) -> np.ndarray:
    """exp(-1/t) for t > 0, zero otherwise; C-infinity on the line."""
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _smooth_cutoff(s: np.ndarray) -> np.ndarray:
    """1 on [0, 1], 0 on [2, inf), smooth monotone transition between."""
    a = _bump(2.0 - s)
    b = _bump(s - 1.0)
    with np.errstate(invalid="ignore"):
        w = np.where(a + b > 0, a / np.where(a + b > 0, a + b, 1.0), 0.0)
    return w


def mollify(fields: np.ndarray, spec: MollifierSpec, ws: FourierWorkspace) -> np.ndarray:
    """Apply the low-pass multiplier to a (..., n, n, n) field stack."""
    return ws.inverse(spec.symbol(ws) * ws.forward(fields))


def spectral_weighted_norm(
    state_hat: np.ndarray, kappa1: float, kappa2: float, ws: FourierWorkspace
) -> float:
    """Weighted norm of an EM state given its half-spectrum (constant weights).

    Parseval for the rfft layout: cell_volume / n^3 times the
    weight-corrected sum of squared mode amplitudes.
    """
    w = ws.mode_weights
    s1 = float(np.sum(w * (state_hat[0:3].real**2 + state_hat[0:3].imag**2)))
    s2 = float(np.sum(w * (state_hat[3:6].real**2 + state_hat[3:6].imag**2)))
    scale = ws.grid.cell_volume / ws.grid.n**3
    return float(np.sqrt(scale * (kappa1 * s1 + kappa2 * s2)))
