"""Time integration of the coupled field-matter system.

The semi-discrete system is

    du/dt = -(1/eta) B u + (extension of the matter source)
    dv/dt = F(v, u restricted to the domain)

with eta = 1 for the plain system. Two steppers: classical RK4 on the
whole right-hand side (CFL-limited), and a Lawson scheme that applies
the exact free propagator to the stiff skew part and RK4 to the rest
(constant coefficients only, no CFL).

The divergence constraint is monitored, never enforced: the curl-free
content of u - shift(v) is a linear functional annihilated by the exact
right-hand side, so any Runge-Kutta step transports it to roundoff. A
drifting residual is an integrator or operator bug, which is precisely
what the monitor is for.

Also here: constraint-consistent initial data, a matter-only integrator
for closed-form cross-checks, and the mollified Picard construction that
rebuilds the solution from the free propagator and time quadrature
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    Coefficients,
    DomainMask,
    Grid3,
    extend_by_zero,
    matter_l2_norm,
    restrict_to_domain,
)
from .helmholtz import (
    ProjectorConfig,
    constraint_residual,
    project_P,
    project_complement_state,
)
from .models import MatterModel
from .spectral import (
    FourierWorkspace,
    FreePropagator,
    MollifierSpec,
    apply_B,
    spectral_weighted_norm,
)


class NumericalAbort(RuntimeError):
    """A state stopped being finite mid-run."""


class FixedPointError(RuntimeError):
    """The Picard iteration failed to converge."""


class ContractionError(FixedPointError):
    """Iterate distances grew; the window is too long for a contraction."""


@dataclass
class SimState:
    t: float
    u: np.ndarray  # (6, n, n, n)
    v: np.ndarray  # (dim, m)

    def copy(self) -> "SimState":
        return SimState(self.t, self.u.copy(), self.v.copy())


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    scheme: str = "rk4"
    renormalize_m: bool = False
    cfl_factor: float = 0.5

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.scheme not in ("rk4", "lawson_exp"):
            raise ValueError(f"unknown scheme {self.scheme!r}; use 'rk4' or 'lawson_exp'")
        if not 0 < self.cfl_factor <= 1:
            raise ValueError(f"cfl_factor out of (0, 1]: {self.cfl_factor}")

    @property
    def n_steps(self) -> int:
        steps = int(round(self.t_end / self.dt))
        if abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        return steps


class SimSystem:
    """Grid, coefficients, domain, matter model, and their cached glue.

    ``eta`` scales the skew part as -(1/eta) B u; eta = 1 recovers the
    plain system. Construction wires the Fourier workspace and the
    restriction of the coupled coefficient to the domain voxels.
    """

    def __init__(
        self,
        grid: Grid3,
        coeffs: Coefficients,
        domain: DomainMask,
        model: MatterModel,
        eta: float = 1.0,
        projector: ProjectorConfig | None = None,
    ):
        if coeffs.kappa1.shape != grid.shape:
            raise ValueError("coefficients do not live on the given grid")
        if domain.grid.shape != grid.shape:
            raise ValueError("domain mask does not live on the given grid")
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")
        self.grid = grid
        self.coeffs = coeffs
        self.domain = domain
        self.model = model
        self.eta = float(eta)
        self.projector = projector or ProjectorConfig()
        self.ws = FourierWorkspace(grid)
        self.kappa_d = coeffs.component(model.em_slot)[domain.mask]
        self._slot = slice(0, 3) if model.em_slot == 1 else slice(3, 6)

    def field_sample(self, u: np.ndarray) -> np.ndarray:
        return restrict_to_domain(u, self.domain)

    def matter_to_field(self, w: np.ndarray) -> np.ndarray:
        """Weighted coupling of a matter-shaped array into an EM-shaped stack.

        Applied to the matter tendency this is the field source; applied
        to the state it is the shift whose curl-free part the constraint
        compares against.
        """
        out = np.zeros((6,) + self.grid.shape)
        out[self._slot] = extend_by_zero(
            self.model.source_from_matter(w, self.kappa_d), self.domain
        )
        return out

    def matter_tendency(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.model.eval_F(v, self.field_sample(u))

    def tendencies(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = self.matter_tendency(u, v)
        du = apply_B(u, self.coeffs, self.ws)
        du *= -1.0 / self.eta
        du[self._slot][:, self.domain.mask] += self.model.source_from_matter(
            f, self.kappa_d
        )
        return du, f

    def constraint_residual(self, state: SimState) -> float:
        return constraint_residual(
            state.u, self.matter_to_field(state.v), self.coeffs, self.ws, self.projector
        )

    def cfl_limit(self, cfl_factor: float) -> float:
        speed_weight = float(np.sqrt((self.coeffs.kappa1 * self.coeffs.kappa2).min()))
        return cfl_factor * self.eta * self.grid.spacing * speed_weight

    def free_propagator(self) -> FreePropagator:
        return FreePropagator(self.coeffs, self.ws)


def rhs_full(system: SimSystem, state: SimState) -> tuple[np.ndarray, np.ndarray]:
    """Full right-hand side (du, dv) at the given state."""
    return system.tendencies(state.u, state.v)


def make_initial(
    system: SimSystem, v_init: np.ndarray, u_free: np.ndarray | None = None
) -> SimState:
    """Constraint-consistent state: divergence-free seed plus matter shift.

    u = P(u_free) + (Id - P)(shift of v_init); any curl-free content of
    the seed is discarded, and the curl-free content demanded by the
    matter is installed, so the constraint residual starts at solver
    tolerance.
    """
    v_init = np.atleast_2d(np.asarray(v_init, dtype=float))
    if v_init.shape != (system.model.dim, system.domain.count):
        raise ValueError(
            f"matter state must have shape {(system.model.dim, system.domain.count)}, "
            f"got {v_init.shape}"
        )
    shift = system.matter_to_field(v_init)
    u = project_complement_state(shift, system.coeffs, system.ws, system.projector)
    if u_free is not None:
        u += project_P(u_free, system.coeffs, system.ws, system.projector)
    return SimState(t=0.0, u=u, v=v_init.copy())


def _rk4_step(system: SimSystem, state: SimState, dt: float) -> SimState:
    u, v = state.u, state.v
    k1u, k1v = system.tendencies(u, v)
    k2u, k2v = system.tendencies(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v)
    k3u, k3v = system.tendencies(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v)
    k4u, k4v = system.tendencies(u + dt * k3u, v + dt * k3v)
    un = u + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    vn = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return SimState(state.t + dt, un, vn)


def _nonlinear(system: SimSystem, u: np.ndarray, v: np.ndarray):
    f = system.matter_tendency(u, v)
    du = system.matter_to_field(f)
    return du, f


def _lawson_step(
    system: SimSystem, state: SimState, dt: float, prop: FreePropagator
) -> SimState:
    """One step of the Lawson(RK4) exponential integrator.

    The free flow is pulled out exactly; RK4 acts on the transformed
    nonlinearity. Matter has no free part, so its stages see the plain
    Runge-Kutta combination.
    """
    h = dt
    half = 0.5 * h / system.eta
    u, v = state.u, state.v

    a = prop.apply(u, half)
    c1u, c1v = _nonlinear(system, u, v)
    e_c1u = prop.apply(c1u, half)
    c2u, c2v = _nonlinear(system, a + 0.5 * h * e_c1u, v + 0.5 * h * c1v)
    c3u, c3v = _nonlinear(system, a + 0.5 * h * c2u, v + 0.5 * h * c2v)
    e_a = prop.apply(a, half)
    e_c3u = prop.apply(c3u, half)
    c4u, c4v = _nonlinear(system, e_a + h * e_c3u, v + h * c3v)

    un = e_a + (h / 6.0) * (
        prop.apply(e_c1u, half) + 2.0 * prop.apply(c2u, half) + 2.0 * e_c3u + c4u
    )
    vn = v + (h / 6.0) * (c1v + 2.0 * c2v + 2.0 * c3v + c4v)
    return SimState(state.t + dt, un, vn)


def step(
    system: SimSystem,
    state: SimState,
    cfg: IntegratorConfig,
    prop: FreePropagator | None = None,
) -> SimState:
    """Advance one step with the configured scheme."""
    if cfg.scheme == "rk4":
        return _rk4_step(system, state, cfg.dt)
    if prop is None:
        prop = system.free_propagator()
    return _lawson_step(system, state, cfg.dt, prop)


def _check_cfl(system: SimSystem, cfg: IntegratorConfig) -> None:
    if cfg.scheme != "rk4":
        return
    limit = system.cfl_limit(cfg.cfl_factor)
    if cfg.dt > limit:
        raise ValueError(
            f"dt={cfg.dt} exceeds the rk4 stability limit {limit:.3e} "
            f"(eta={system.eta}); reduce dt or use scheme='lawson_exp'"
        )


def run(
    system: SimSystem,
    state: SimState,
    cfg: IntegratorConfig,
    monitors: dict | None = None,
    stride: int = 1,
    channels: dict | None = None,
    snapshot_cb=None,
    snapshot_stride: int = 0,
):
    """Integrate to cfg.t_end, sampling monitors along the way.

    ``monitors`` maps column names to callables (system, state) -> float,
    evaluated at t=0, every ``stride`` steps, and at the final time.
    ``channels`` has the same signature but is sampled at every step
    boundary (for time-quadrature of rates). Returns
    (final_state, records, channel_series) where records is a list of
    dicts and channel_series maps names to arrays over all step times.
    """
    monitors = monitors or {}
    channels = channels or {}
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n_steps = cfg.n_steps
    _check_cfl(system, cfg)
    prop = None
    if cfg.scheme == "lawson_exp":
        prop = system.free_propagator()

    if cfg.renormalize_m:
        target_mod = np.sqrt(np.einsum("dm,dm->m", state.v, state.v))

    records: list[dict] = []
    series: dict[str, list[float]] = {name: [] for name in channels}

    def sample_monitors(s: SimState, istep: int) -> None:
        row = {"t": s.t, "step": istep}
        for name, fn in monitors.items():
            row[name] = float(fn(system, s))
        records.append(row)

    def sample_channels(s: SimState) -> None:
        for name, fn in channels.items():
            series[name].append(float(fn(system, s)))

    state = state.copy()
    t0 = state.t
    sample_monitors(state, 0)
    sample_channels(state)
    if snapshot_cb is not None and snapshot_stride > 0:
        snapshot_cb(system, state, 0)

    for i in range(1, n_steps + 1):
        state = step(system, state, cfg, prop)
        state.t = t0 + i * cfg.dt
        if cfg.renormalize_m:
            mod = np.sqrt(np.einsum("dm,dm->m", state.v, state.v))
            scale = np.where(mod > 0, target_mod / np.where(mod > 0, mod, 1.0), 1.0)
            state.v *= scale
        if not np.isfinite(state.u).all() or not np.isfinite(state.v).all():
            raise NumericalAbort(f"non-finite state at t={state.t:.6g} (step {i})")
        sample_channels(state)
        if i % stride == 0 or i == n_steps:
            sample_monitors(state, i)
        if snapshot_cb is not None and snapshot_stride > 0 and (
            i % snapshot_stride == 0 or i == n_steps
        ):
            snapshot_cb(system, state, i)

    channel_arrays = {name: np.asarray(vals) for name, vals in series.items()}
    return state, records, channel_arrays


def integrate_matter(
    model: MatterModel,
    v0: np.ndarray,
    em: np.ndarray,
    t_end: float,
    dt: float,
    sample_stride: int = 1,
):
    """RK4 on the matter law alone, with a frozen field sample.

    Returns (times, values) with values[k] the state at times[k]. Used
    for closed-form cross-checks where the field back-reaction is off.
    """
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    em = np.atleast_2d(np.asarray(em, dtype=float))
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    v = v0.copy()
    times = [0.0]
    values = [v.copy()]
    for i in range(1, n_steps + 1):
        k1 = model.eval_F(v, em)
        k2 = model.eval_F(v + 0.5 * dt * k1, em)
        k3 = model.eval_F(v + 0.5 * dt * k2, em)
        k4 = model.eval_F(v + dt * k3, em)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if i % sample_stride == 0 or i == n_steps:
            times.append(i * dt)
            values.append(v.copy())
    return np.asarray(times), np.asarray(values)


@dataclass(frozen=True)
class FixedPointConfig:
    n_mol: int
    window: float
    n_steps: int
    tol: float = 1e-10
    max_iter: int = 60

    def __post_init__(self):
        if self.n_mol < 1:
            raise ValueError(f"low-pass index must be >= 1, got {self.n_mol}")
        if self.window <= 0:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.n_steps < 2:
            raise ValueError(f"need at least 2 quadrature steps, got {self.n_steps}")
        if not 0 < self.tol < 1:
            raise ValueError(f"tol out of range: {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class FixedPointResult:
    state: SimState
    distances: list[float]
    iterations: int

    @property
    def contraction_ratios(self) -> list[float]:
        return [
            b / a for a, b in zip(self.distances[:-1], self.distances[1:]) if a > 0
        ]


def mollified_fixed_point(
    system: SimSystem, state0: SimState, cfg: FixedPointConfig
) -> FixedPointResult:
    """Picard iteration on the integral form of the system.

    Each sweep maps a trajectory {(u_j, v_j)} on the window to

        u(t) = exp(-tB) u0 + int_0^t exp(-(t-s)B) source(v(s), Ru(s)) ds
        v(t) = v0 + int_0^t F(v(s), Ru(s)|domain) ds

    with R the spectral low-pass of index cfg.n_mol and trapezoidal
    quadrature on the step grid. The field trajectory is kept in Fourier
    space, where the propagator is a phase multiplier and the Duhamel
    integral accumulates in O(1) work per node. Constant coefficients
    required.

    Raises :class:`ContractionError` when iterate distances stop
    shrinking, and :class:`FixedPointError` when max_iter runs out.
    """
    if not system.coeffs.is_constant:
        raise ValueError("the fixed-point construction needs constant coefficients")
    k1, k2 = system.coeffs.constant_values()
    ws = system.ws
    prop = system.free_propagator()
    spec = MollifierSpec(cfg.n_mol)
    symbol = spec.symbol(ws)
    eta = system.eta

    J = cfg.n_steps
    dt = cfg.window / J
    times = dt * np.arange(J + 1)

    u0_hat = ws.forward(state0.u)
    v0 = state0.v.copy()

    # Starting guess: the free flow with frozen matter. When the matter
    # tendency vanishes identically this is already the fixed point.
    traj_hat = np.empty((J + 1,) + u0_hat.shape, dtype=complex)
    for j in range(J + 1):
        traj_hat[j] = prop.apply_hat(u0_hat, times[j] / eta)
    traj_v = np.tile(v0, (J + 1, 1, 1))

    scale = spectral_weighted_norm(u0_hat, k1, k2, ws) + matter_l2_norm(
        v0, system.grid
    )
    scale = max(scale, 1e-30)
    floor = 5e-14 * scale

    def source_hat(v_j: np.ndarray, u_hat_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u_moll = ws.inverse(symbol * u_hat_j)
        f = system.matter_tendency(u_moll, v_j)
        return ws.forward(system.matter_to_field(f)), f

    distances: list[float] = []
    for it in range(1, cfg.max_iter + 1):
        new_hat = np.empty_like(traj_hat)
        new_v = np.empty_like(traj_v)
        new_hat[0] = u0_hat
        new_v[0] = v0

        g_hat, f_prev = source_hat(traj_v[0], traj_hat[0])
        phased_prev = g_hat  # exp(+0 B) g
        s_accum = np.zeros_like(u0_hat)
        dist_u = 0.0
        dist_v = 0.0
        for j in range(1, J + 1):
            g_hat, f_j = source_hat(traj_v[j], traj_hat[j])
            phased = prop.apply_hat(g_hat, -times[j] / eta)
            s_accum += (0.5 * dt) * (phased_prev + phased)
            phased_prev = phased
            new_hat[j] = prop.apply_hat(u0_hat + s_accum, times[j] / eta)
            new_v[j] = new_v[j - 1] + (0.5 * dt) * (f_prev + f_j)
            f_prev = f_j
            dist_u = max(
                dist_u, spectral_weighted_norm(new_hat[j] - traj_hat[j], k1, k2, ws)
            )
            dist_v = max(dist_v, matter_l2_norm(new_v[j] - traj_v[j], system.grid))
        d = dist_u + dist_v
        distances.append(d)
        traj_hat, traj_v = new_hat, new_v

        if d <= cfg.tol * scale:
            final = SimState(
                t=state0.t + cfg.window, u=ws.inverse(traj_hat[J]), v=traj_v[J].copy()
            )
            return FixedPointResult(state=final, distances=distances, iterations=it)
        if len(distances) >= 2 and d >= distances[-2] and d > floor:
            raise ContractionError(
                f"iterate distances grew ({distances[-2]:.3e} -> {d:.3e}); "
                f"the window {cfg.window} is too long for a contraction, reduce it"
            )
    raise FixedPointError(
        f"no convergence to tol={cfg.tol} within {cfg.max_iter} sweeps "
        f"(last distance {distances[-1]:.3e}, scale {scale:.3e})"
    )
