"""Matter laws coupled to the field pair.

A matter model owns the pointwise right-hand side F(x, v, u) of the
matter states, the linear map turning matter motion into a field source,
and three structural guarantees the rest of the package leans on:

* F is affine in the field argument,
* v = 0 is a fixed point of the matter law,
* F(x, v, u) . v <= K |v|^2 with a model-declared constant K.

Matter states are (dim, m) arrays over the masked voxels. Field samples
arrive as the full (6, m) restriction; each model picks the slot it
couples to.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product on leading-axis-3 stacks; avoids np.cross axis juggling."""
    return np.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


class MatterModel(ABC):
    """Pointwise matter law and its field coupling."""

    #: matter state dimension per voxel
    dim: int
    #: field slot (1 or 2) whose divergence constraint the matter enters
    em_slot: int
    #: constant K in the one-sided growth bound F . v <= K |v|^2
    growth_bound: float = 0.0

    @abstractmethod
    def eval_F(self, v: np.ndarray, em: np.ndarray) -> np.ndarray:
        """Matter tendency, shape (dim, m); ``em`` is the (6, m) field sample."""

    @abstractmethod
    def source_from_matter(self, w: np.ndarray, kappa_d: np.ndarray) -> np.ndarray:
        """The 3-vector density (1/kappa) l w on the domain voxels.

        Linear in ``w``. Applied to the matter tendency it yields the
        field source; applied to the state it yields the shift appearing
        in the divergence constraint. ``kappa_d`` holds the coupled
        slot's coefficient on the domain voxels.
        """


@dataclass
class LandauLifschitzModel(MatterModel):
    """Magnetization dynamics M' = gyro M ^ H_T - damping M ^ (M ^ H_T).

    The total field H_T adds uniaxial anisotropy aniso (M.axis) axis and a
    constant applied field to the resolved field sample. Both torque terms
    are orthogonal to M, so |M| is conserved pointwise and the growth
    constant is zero. The field source is -M' (the coupled coefficient
    cancels against the coupling weight).
    """

    gyro: float = 1.0
    damping: float = 0.0
    aniso: float = 0.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    h_ext: tuple[float, float, float] = (0.0, 0.0, 0.0)

    dim = 3
    em_slot = 1
    growth_bound = 0.0

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError(f"damping must be nonnegative, got {self.damping}")
        if self.aniso < 0:
            raise ValueError(f"anisotropy must be nonnegative, got {self.aniso}")
        ax = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(ax)
        if self.aniso > 0 and norm == 0:
            raise ValueError("anisotropy axis must be a nonzero vector")
        self.axis_unit = ax / norm if norm > 0 else ax
        self.applied_field = np.asarray(self.h_ext, dtype=float)

    def total_field(self, m_state: np.ndarray, h: np.ndarray) -> np.ndarray:
        ht = h + self.applied_field[:, None]
        if self.aniso > 0:
            ht = ht + self.aniso * self.axis_unit[:, None] * np.einsum(
                "c,cm->m", self.axis_unit, m_state
            )
        return ht

    def eval_F(self, v: np.ndarray, em: np.ndarray) -> np.ndarray:
        ht = self.total_field(v, em[0:3])
        torque = _cross(v, ht)
        out = self.gyro * torque
        if self.damping > 0:
            out = out - self.damping * _cross(v, torque)
        return out

    def source_from_matter(self, w: np.ndarray, kappa_d: np.ndarray) -> np.ndarray:
        return -w


def pack_rho(rho: np.ndarray) -> np.ndarray:
    """Flatten Hermitian (N, N, m) matrices to real (N*N, m) coordinates.

    Layout: N diagonal entries, then sqrt(2) * real and sqrt(2) * imag of
    the strict upper triangle (row-major). The map is an isometry between
    the Frobenius and Euclidean norms.
    """
    n = rho.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    root2 = np.sqrt(2.0)
    parts = [
        rho[np.arange(n), np.arange(n)].real,
        root2 * rho[iu, ju].real,
        root2 * rho[iu, ju].imag,
    ]
    return np.concatenate(parts, axis=0)


def unpack_rho(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`pack_rho`; always returns a Hermitian stack."""
    if v.shape[0] != n * n:
        raise ValueError(f"packed state has {v.shape[0]} rows, expected {n * n}")
    m = v.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    p = iu.size
    rho = np.zeros((n, n, m), dtype=complex)
    rho[np.arange(n), np.arange(n)] = v[:n]
    upper = (v[n : n + p] + 1j * v[n + p :]) / np.sqrt(2.0)
    rho[iu, ju] = upper
    rho[ju, iu] = upper.conj()
    return rho


@dataclass
class BlochModel(MatterModel):
    """N-level density-matrix dynamics driven by the electric slot.

    rho' = -i [H0 - E . D, rho] - relax * offdiag(rho), with H0 the
    diagonal level Hamiltonian and D a 3-vector of Hermitian dipole
    matrices. States travel in the real packed coordinates of
    :func:`pack_rho`. The commutator preserves the Frobenius norm and the
    relaxation only ever shrinks it, so the growth constant is zero. The
    field source is -(1/eps) tr(D rho'), the polarization current with
    the sign that keeps the charge constraint transported.
    """

    levels: tuple[float, ...]
    dipole: np.ndarray  # (3, N, N) complex, each slice Hermitian
    relax: float = 0.0

    em_slot = 2
    growth_bound = 0.0

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        d = np.asarray(self.dipole, dtype=complex)
        n = lv.size
        if n < 2:
            raise ValueError(f"need at least two levels, got {n}")
        if d.shape != (3, n, n):
            raise ValueError(f"dipole must have shape (3, {n}, {n}), got {d.shape}")
        herm_err = max(float(np.abs(d[a] - d[a].conj().T).max()) for a in range(3))
        if herm_err > 1e-12:
            raise ValueError(f"dipole slices must be Hermitian (defect {herm_err:.2e})")
        if self.relax < 0:
            raise ValueError(f"relaxation rate must be nonnegative, got {self.relax}")
        self.n_levels = n
        self.dim = n * n
        self._h0 = np.diag(lv).astype(complex)
        self._dipole = d
        self._offdiag = ~np.eye(n, dtype=bool)

    def eval_F(self, v: np.ndarray, em: np.ndarray) -> np.ndarray:
        rho = unpack_rho(v, self.n_levels)
        e = em[3:6]
        ham = self._h0[:, :, None] - np.einsum("aij,am->ijm", self._dipole, e)
        comm = np.einsum("ikm,kjm->ijm", ham, rho) - np.einsum("ikm,kjm->ijm", rho, ham)
        drho = -1j * comm
        if self.relax > 0:
            drho = drho - self.relax * (rho * self._offdiag[:, :, None])
        return pack_rho(drho)

    def polarization(self, v: np.ndarray) -> np.ndarray:
        """tr(D rho) per voxel, shape (3, m); real for Hermitian input."""
        rho = unpack_rho(v, self.n_levels)
        return np.einsum("aij,jim->am", self._dipole, rho).real

    def source_from_matter(self, w: np.ndarray, kappa_d: np.ndarray) -> np.ndarray:
        return -self.polarization(w) / kappa_d


def check_structure(
    model: MatterModel,
    rng: np.random.Generator,
    n_voxels: int = 64,
    n_samples: int = 8,
) -> dict[str, float]:
    """Probe the three structural guarantees on random data.

    Returns worst-case defects: relative affinity error in the field
    argument, norm of the tendency at v = 0, the signed one-sided growth
    excess F . v - K |v|^2 (nonpositive up to roundoff when honest),
    linearity defect of the source map, and sensitivity to the field slot
    the model is not coupled to (must be zero).
    """
    worst = {
        "affine": 0.0,
        "zero_state": 0.0,
        "growth_excess": -np.inf,
        "source_linear": 0.0,
        "uncoupled_slot": 0.0,
    }
    other = slice(3, 6) if model.em_slot == 1 else slice(0, 3)
    for _ in range(n_samples):
        v = rng.standard_normal((model.dim, n_voxels))
        ua = rng.standard_normal((6, n_voxels))
        ub = rng.standard_normal((6, n_voxels))
        a, b = rng.standard_normal(2)
        f0 = model.eval_F(v, np.zeros_like(ua))
        lhs = model.eval_F(v, a * ua + b * ub)
        rhs = a * model.eval_F(v, ua) + b * model.eval_F(v, ub) + (1.0 - a - b) * f0
        scale = max(float(np.abs(lhs).max()), 1e-30)
        worst["affine"] = max(worst["affine"], float(np.abs(lhs - rhs).max()) / scale)

        fz = model.eval_F(np.zeros_like(v), ua)
        worst["zero_state"] = max(worst["zero_state"], float(np.abs(fz).max()))

        f = model.eval_F(v, ua)
        excess = np.einsum("dm,dm->m", f, v) - model.growth_bound * np.einsum(
            "dm,dm->m", v, v
        )
        worst["growth_excess"] = max(worst["growth_excess"], float(excess.max()))

        perturbed = ua.copy()
        perturbed[other] = rng.standard_normal((3, n_voxels))
        df = model.eval_F(v, perturbed) - f
        fscale = max(float(np.abs(f).max()), 1e-30)
        worst["uncoupled_slot"] = max(worst["uncoupled_slot"], float(np.abs(df).max()) / fscale)

        kd = 1.0 + rng.random(n_voxels)
        wa = rng.standard_normal((model.dim, n_voxels))
        wb = rng.standard_normal((model.dim, n_voxels))
        slhs = model.source_from_matter(a * wa + b * wb, kd)
        srhs = a * model.source_from_matter(wa, kd) + b * model.source_from_matter(wb, kd)
        sscale = max(float(np.abs(slhs).max()), 1e-30)
        worst["source_linear"] = max(worst["source_linear"], float(np.abs(slhs - srhs).max()) / sscale)
    return worst
