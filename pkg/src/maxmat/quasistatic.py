"""The eta-scaled system, its slaved-field limit model, and the decay study.

As eta shrinks, the skew part -(1/eta) B u rotates the divergence-free
field content ever faster while the matter source stays slow, so that
content averages away locally and the field is increasingly enslaved to
the matter: u -> (Id - P)(shift of v). The limit model integrates the
matter law alone with the slaved field closed over it.

The study integrates the scaled system for a decreasing list of eta,
measures the surviving divergence-free field content in a fixed
observation ball, and fits the decay rate against eta on log-log axes.

Torus caveat, by design: the spatial mean of the coupled slot drifts
with the matter and cannot propagate away on a periodic box, so the
measured divergence-free content excludes the zero mode. The mean is the
box's stand-in for radiation that would leave any bounded window in free
space.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import ceil

import numpy as np

from .evolution import (
    IntegratorConfig,
    NumericalAbort,
    SimState,
    SimSystem,
    _lawson_step,
    _rk4_step,
    rhs_full,
)
from .grid import extend_by_zero, matter_l2_norm, restrict_to_domain
from .helmholtz import project_complement


def with_eta(system: SimSystem, eta: float) -> SimSystem:
    """Shallow copy of a system with a different time-scale split.

    Caches (workspace, restricted coefficients) are shared read-only.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    out = copy.copy(system)
    out.eta = float(eta)
    return out


def rhs_eta(system: SimSystem, state: SimState, eta: float):
    """Right-hand side of the scaled system: du = -(1/eta) B u + source."""
    return rhs_full(with_eta(system, eta), state)


def slaved_field(system: SimSystem, v: np.ndarray) -> np.ndarray:
    """Curl-free field enslaved to the matter state, coupled slot only.

    Returns the (3, n, n, n) gradient part of the matter shift; the
    other slot of the limit field is identically zero.
    """
    shift3 = extend_by_zero(
        system.model.source_from_matter(v, system.kappa_d), system.domain
    )
    kappa = system.coeffs.component(system.model.em_slot)
    return project_complement(shift3, kappa, system.ws, system.projector)


def _slaved_sample(system: SimSystem, v: np.ndarray) -> np.ndarray:
    em = np.zeros((6, system.domain.count))
    slot = slice(0, 3) if system.model.em_slot == 1 else slice(3, 6)
    em[slot] = restrict_to_domain(slaved_field(system, v), system.domain)
    return em

def reduced_rhs(system: SimSystem, v: np.ndarray) -> np.ndarray:
    """Matter tendency with the field closed over the matter state."""
    return system.model.eval_F(v, _slaved_sample(system, v))


@dataclass
class ReducedResult:
    times: np.ndarray        # (S,)
    v_samples: np.ndarray    # (S, dim, m)
    state: SimState          # final time, u = slaved field

    @property
    def v_final(self) -> np.ndarray:
        return self.v_samples[-1]


def run_reduced(
    system: SimSystem,
    v_init: np.ndarray,
    cfg: IntegratorConfig,
    sample_stride: int = 1,
) -> ReducedResult:
    """RK4 on the limit model; emits the matter path and the slaved field.

    The scheme field of ``cfg`` is ignored: the limit model has no stiff
    part, classical RK4 is always used.
    """
    v = np.atleast_2d(np.asarray(v_init, dtype=float)).copy()
    if v.shape != (system.model.dim, system.domain.count):
        raise ValueError(
            f"matter state must have shape {(system.model.dim, system.domain.count)}, "
            f"got {v.shape}"
        )
    n_steps = cfg.n_steps
    dt = cfg.dt
    times = [0.0]
    samples = [v.copy()]
    for i in range(1, n_steps + 1):
        k1 = reduced_rhs(system, v)
        k2 = reduced_rhs(system, v + 0.5 * dt * k1)
        k3 = reduced_rhs(system, v + 0.5 * dt * k2)
        k4 = reduced_rhs(system, v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(v).all():
            raise NumericalAbort(f"non-finite matter state at t={i * dt:.6g} (reduced run)")
        if i % sample_stride == 0 or i == n_steps:
            times.append(i * dt)
            samples.append(v.copy())
    u = np.zeros((6,) + system.grid.shape)
    slot = slice(0, 3) if system.model.em_slot == 1 else slice(3, 6)
    u[slot] = slaved_field(system, v)
    final = SimState(t=cfg.t_end, u=u, v=v)
    return ReducedResult(
        times=np.asarray(times), v_samples=np.asarray(samples), state=final
    )


@dataclass(frozen=True)
class EtaStudyConfig:
    eta_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    radius: float = 0.25
    t_obs: float = 1.0
    dt: float = 2e-3
    sample_dt: float = 0.02
    stiff_dt_factor: float = 0.025
    scheme: str = "lawson_exp"
    cfl_factor: float = 0.5
    threads: int = 1

    def __post_init__(self):
        if not self.eta_list:
            raise ValueError("eta_list is empty")
        for eta in self.eta_list:
            if not 0 < eta <= 1:
                raise ValueError(f"eta values must lie in (0, 1], got {eta}")
        if list(self.eta_list) != sorted(self.eta_list, reverse=True):
            raise ValueError("eta_list must be strictly decreasing")
        if self.radius <= 0:
            raise ValueError(f"observation radius must be positive, got {self.radius}")
        if self.scheme not in ("rk4", "lawson_exp"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        k = self.t_obs / self.sample_dt
        if abs(round(k) - k) > 1e-9 or round(k) < 1:
            raise ValueError(
                f"t_obs={self.t_obs} must be a positive multiple of sample_dt={self.sample_dt}"
            )
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass
class EtaStudyResult:
    rows: list[dict]
    slope: float | None
    intercept: float | None
    times: np.ndarray
    v_deviation_curves: dict[float, np.ndarray]


def _observation_mask(system: SimSystem, radius: float) -> np.ndarray:
    xx, yy, zz = system.grid.meshgrid()
    c = 0.5 * system.grid.box_len
    return (xx - c) ** 2 + (yy - c) ** 2 + (zz - c) ** 2 <= radius**2


def _pu_local_norm(system: SimSystem, u: np.ndarray, ball: np.ndarray) -> float:
    """L2 norm over the ball of the divergence-free part, zero mode removed.

    Constant coefficients: the projector is the mode-by-mode transverse
    part for each slot.
    """
    ws = system.ws
    uhat = ws.forward(u)
    for sl in (slice(0, 3), slice(3, 6)):
        par = ws.khat * np.einsum("c...,c...->...", ws.khat, uhat[sl])
        uhat[sl] -= par
        uhat[sl][..., 0, 0, 0] = 0.0
    pu = ws.inverse(uhat)
    sq = np.einsum("cijk,cijk->ijk", pu, pu)
    return float(np.sqrt(np.sum(sq[ball]) * system.grid.cell_volume))


def _eta_run(
    system: SimSystem,
    state0: SimState,
    eta: float,
    cfg: EtaStudyConfig,
    ball: np.ndarray,
):
    """One scaled run; returns (pu_series, v_samples) on the sample grid."""
    sys_eta = with_eta(system, eta)
    if cfg.scheme == "lawson_exp":
        if not system.coeffs.is_constant:
            raise ValueError("lawson_exp study needs constant coefficients")
        dt_wanted = min(cfg.dt, cfg.stiff_dt_factor * eta)
    else:
        dt_wanted = min(cfg.dt, sys_eta.cfl_limit(cfg.cfl_factor))
    n_sub = max(1, ceil(cfg.sample_dt / dt_wanted - 1e-12))
    dt = cfg.sample_dt / n_sub
    prop = sys_eta.free_propagator() if cfg.scheme == "lawson_exp" else None

    n_samples = int(round(cfg.t_obs / cfg.sample_dt))
    state = state0.copy()
    pu = [_pu_local_norm(sys_eta, state.u, ball)]
    v_samples = [state.v.copy()]
    for k in range(1, n_samples + 1):
        for _ in range(n_sub):
            if prop is not None:
                state = _lawson_step(sys_eta, state, dt, prop)
            else:
                state = _rk4_step(sys_eta, state, dt)
        state.t = k * cfg.sample_dt
        if not np.isfinite(state.u).all() or not np.isfinite(state.v).all():
            raise NumericalAbort(f"non-finite state at t={state.t:.6g} (eta={eta})")
        pu.append(_pu_local_norm(sys_eta, state.u, ball))
        v_samples.append(state.v.copy())
    return np.asarray(pu), np.asarray(v_samples), dt


def eta_convergence_study(
    system: SimSystem, state0: SimState, cfg: EtaStudyConfig
) -> EtaStudyResult:
    """Sweep eta, measure field decay and matter convergence, fit the rate.

    All runs start from the same state. The limit path comes from
    :func:`run_reduced` on the shared initial matter state. Failed runs
    (non-finite states) are recorded and excluded from the fit.
    Independent eta runs may execute on a thread pool; results are
    collected by index so the output is identical for any thread count.
    """
    ball = _observation_mask(system, cfg.radius)
    n_samples = int(round(cfg.t_obs / cfg.sample_dt))
    times = cfg.sample_dt * np.arange(n_samples + 1)

    n_sub0 = max(1, ceil(cfg.sample_dt / cfg.dt - 1e-12))
    red_cfg = IntegratorConfig(
        dt=cfg.sample_dt / n_sub0, t_end=cfg.t_obs, scheme="rk4"
    )
    reduced = run_reduced(system, state0.v, red_cfg, sample_stride=n_sub0)

    def task(eta: float):
        try:
            pu_series, v_samples, dt = _eta_run(system, state0, eta, cfg, ball)
        except NumericalAbort as exc:
            return {"eta": eta, "failed": True, "error": str(exc)}, None
        pu_norm = float(np.sqrt(np.trapezoid(pu_series**2, dx=cfg.sample_dt)))
        dev_curve = np.array(
            [
                matter_l2_norm(v_samples[k] - reduced.v_samples[k], system.grid)
                for k in range(n_samples + 1)
            ]
        )
        row = {
            "eta": eta,
            "failed": False,
            "pu_norm": pu_norm,
            "v_deviation": float(dev_curve.max()),
            "dt": dt,
        }
        return row, dev_curve

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(task, cfg.eta_list))
    else:
        outcomes = [task(eta) for eta in cfg.eta_list]

    rows = [row for row, _ in outcomes]
    curves = {
        row["eta"]: curve for (row, curve) in outcomes if curve is not None
    }

    good = [r for r in rows if not r["failed"] and r["pu_norm"] > 0]
    slope = intercept = None
    if len(good) >= 2:
        lx = np.log([r["eta"] for r in good])
        ly = np.log([r["pu_norm"] for r in good])
        slope_f, intercept_f = np.polyfit(lx, ly, 1)
        slope, intercept = float(slope_f), float(intercept_f)
    return EtaStudyResult(
        rows=rows, slope=slope, intercept=intercept, times=times,
        v_deviation_curves=curves,
    )
