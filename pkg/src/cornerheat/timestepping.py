"""Time integration of the semi-discrete (optionally corrected) heat equation.

Explicit Euler and Heun march the lumped-mass system without linear solves;
Crank-Nicolson solves an SPD system per step. A constant advection velocity is
supported in the explicit schemes only. Dirichlet data is imposed strongly at
the end time of every step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .correction import modified_ritz, total_correction
from .fem import (QuadLayout, TimeSeparableField, assemble_advection,
                  assemble_load, assemble_mass, assemble_stiffness,
                  boundary_values, error_norm, interpolate, lump_mass,
                  quad_layout)
from .mesh import TriMesh
from .solver import max_generalized_eigenvalue, solve_spd

SCHEME_KINDS = ("explicit_euler", "heun", "crank_nicolson")


class InstabilityError(RuntimeError):
    """A run left the stability envelope; carries the offending step."""

    def __init__(self, step: int, t: float, message: str = None):
        super().__init__(message or
                         f"solution blew up at step {step} (t = {t:.6g})")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t_end] into n_steps steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > 0.0:
            raise ValueError("t_end must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("need at least one time step")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    @classmethod
    def from_dt(cls, t_end: float, dt_max: float) -> "TimeGrid":
        """Finest uniform grid whose step does not exceed dt_max."""
        if not dt_max > 0.0:
            raise ValueError("dt_max must be positive")
        n = max(1, math.ceil(t_end / dt_max - 1e-9))
        return cls(t_end, n)


@dataclass(frozen=True)
class SchemeConfig:
    """Stepper selection. mass defaults to lumped for the explicit kinds and
    consistent for Crank-Nicolson."""

    kind: str = "explicit_euler"
    mass: Optional[str] = None
    cfl_safety: float = 0.9

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; "
                             f"pick one of {SCHEME_KINDS}")
        if self.mass is None:
            default = "consistent" if self.kind == "crank_nicolson" else "lumped"
            object.__setattr__(self, "mass", default)
        if self.mass not in ("lumped", "consistent"):
            raise ValueError("mass must be 'lumped' or 'consistent'")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must lie in (0, 1]")


@dataclass(frozen=True)
class ParabolicProblem:
    """u_t + b . grad u - Laplace u = f with Dirichlet data g and start u0.

    f and g are called as field(t, points); both may also be constants, and f
    may be a TimeSeparableField (its per-term loads are assembled once). u0 is
    a callable of points, a nodal array, a constant, or None (zero start).
    correction takes one CorrectionConfig or a sequence of per-corner ones.
    """

    mesh: TriMesh
    f: object = 0.0
    g: object = 0.0
    u0: object = None
    b: Optional[tuple] = None
    correction: object = None
    u0_grad: Optional[Callable] = None

    @property
    def has_advection(self) -> bool:
        return self.b is not None and np.any(np.asarray(self.b, dtype=float))


def _constant_field(value: float):
    def fn(pts):
        return np.full(len(pts), float(value))
    return fn


def _load_series(mesh: TriMesh, f, layout: QuadLayout):
    """Callable t -> full load vector, with separable parts preassembled."""
    if f is None:
        f = 0.0
    if np.isscalar(f):
        if float(f) == 0.0:
            vec = np.zeros(mesh.n_vertices)
        else:
            vec = assemble_load(mesh, _constant_field(f), layout=layout)
        return lambda t: vec
    if isinstance(f, TimeSeparableField):
        parts = [(coef, assemble_load(mesh, profile, layout=layout))
                 for coef, profile in f.terms]

        def combined(t):
            out = np.zeros(mesh.n_vertices)
            for coef, vec in parts:
                out += float(coef(t)) * vec
            return out
        return combined
    return lambda t: assemble_load(mesh, f, t=t, layout=layout)


def _trace_series(mesh: TriMesh, g):
    """Callable t -> boundary lift vector (g on the boundary, zero inside)."""
    if g is None or (np.isscalar(g) and float(g) == 0.0):
        vec = np.zeros(mesh.n_vertices)
        return lambda t: vec
    if np.isscalar(g) or isinstance(g, np.ndarray):
        vec = boundary_values(mesh, g)
        return lambda t: vec
    if isinstance(g, TimeSeparableField):
        parts = [(coef, boundary_values(mesh, profile))
                 for coef, profile in g.terms]

        def combined(t):
            out = np.zeros(mesh.n_vertices)
            for coef, vec in parts:
                out += float(coef(t)) * vec
            return out
        return combined
    return lambda t: boundary_values(mesh, g, t=t)


@dataclass
class Operators:
    """Assembled matrices and load/trace evaluators for one problem."""

    problem: ParabolicProblem
    scheme: SchemeConfig
    stiffness: sparse.csr_matrix      # S - C, symmetric
    stepping: sparse.csr_matrix       # S - C + B (equals stiffness without b)
    mass: sparse.csr_matrix
    m_lumped: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    load_at: Callable
    trace_at: Callable
    solve_tol: float = 1e-10
    _mass_free: sparse.csr_matrix = None
    _cn_cache: dict = field(default_factory=dict)

    def mass_inverse(self, r_free: np.ndarray) -> np.ndarray:
        """M^-1 r on the free dofs (diagonal divide or a CG solve)."""
        if self.scheme.mass == "lumped":
            return r_free / self.m_lumped[self.free]
        if self._mass_free is None:
            self._mass_free = self.mass[self.free][:, self.free].tocsr()
        return solve_spd(self._mass_free, r_free, tol=self.solve_tol)

    def cfl_max_dt(self) -> float:
        """Explicit-Euler stability boundary of the lumped diffusion system."""
        return cfl_max_dt(self.m_lumped[self.free],
                          self.stiffness[self.free][:, self.free].tocsr())

    def cn_matrix(self, dt: float) -> sparse.csr_matrix:
        key = (float(dt), self.scheme.mass)
        if key not in self._cn_cache:
            if self.scheme.mass == "lumped":
                M = sparse.diags(self.m_lumped).tocsr()
            else:
                M = self.mass
            A = (M + 0.5 * dt * self.stiffness).tocsr()
            self._cn_cache[key] = A[self.free][:, self.free].tocsr()
        return self._cn_cache[key]

    def monitor_norm(self, state: np.ndarray) -> float:
        """Norm induced by the lumped mass; the stability monitor."""
        return float(np.sqrt(self.m_lumped @ state ** 2))


def build_operators(problem: ParabolicProblem, scheme: SchemeConfig,
                    quad=None, corner_levels: int = 3,
                    solve_tol: float = 1e-10) -> Operators:
    mesh = problem.mesh
    if scheme.kind == "crank_nicolson" and problem.has_advection:
        raise ValueError("Crank-Nicolson does not support advection "
                         "(nonsymmetric system); use an explicit scheme")
    S = assemble_stiffness(mesh)
    if problem.correction is not None:
        S = (S - total_correction(mesh, problem.correction)).tocsr()
    stepping = S
    if problem.has_advection:
        stepping = (S + assemble_advection(mesh, problem.b)).tocsr()
    M = assemble_mass(mesh)
    layout = quad_layout(mesh, quad, corner_levels)
    free = np.flatnonzero(~mesh.boundary_vertex)
    fixed = np.flatnonzero(mesh.boundary_vertex)
    if len(free) == 0:
        raise ValueError("mesh has no interior vertices; refine it first")
    return Operators(problem=problem, scheme=scheme, stiffness=S,
                     stepping=stepping, mass=M, m_lumped=lump_mass(M),
                     free=free, fixed=fixed,
                     load_at=_load_series(mesh, problem.f, layout),
                     trace_at=_trace_series(mesh, problem.g),
                     solve_tol=solve_tol)


def cfl_max_dt(m_diag: np.ndarray, S_free, tol: float = 1e-4,
               max_iter: int = 500) -> float:
    """2 / lambda_max of the generalized problem S x = lambda M~ x."""
    lam = max_generalized_eigenvalue(S_free, m_diag, tol=tol,
                                     max_iter=max_iter)
    if lam <= 0.0:
        raise ValueError("stiffness is not positive definite on free dofs")
    return 2.0 / lam


# -- single steps --------------------------------------------------------------


def _boundary_rate(ops: Operators, g0: np.ndarray, g1: np.ndarray,
                   dt: float) -> Optional[np.ndarray]:
    """M_fb * dg/dt coupling, skipped for lumped mass (block is zero)."""
    if ops.scheme.mass == "lumped":
        return None
    dg = (g1 - g0) / dt
    if not np.any(dg):
        return None
    return ops.mass @ dg


def step_explicit_euler(state: np.ndarray, t: float, dt: float,
                        ops: Operators) -> np.ndarray:
    g0 = ops.trace_at(t)
    g1 = ops.trace_at(t + dt)
    rhs = ops.load_at(t) - ops.stepping @ state
    coupling = _boundary_rate(ops, g0, g1, dt)
    if coupling is not None:
        rhs = rhs - coupling
    out = state.copy()
    out[ops.free] += dt * ops.mass_inverse(rhs[ops.free])
    out[ops.fixed] = g1[ops.fixed]
    return out


def step_heun(state: np.ndarray, t: float, dt: float,
              ops: Operators) -> np.ndarray:
    g0 = ops.trace_at(t)
    g1 = ops.trace_at(t + dt)
    coupling = _boundary_rate(ops, g0, g1, dt)

    def rate(time, full):
        rhs = ops.load_at(time) - ops.stepping @ full
        if coupling is not None:
            rhs = rhs - coupling
        return ops.mass_inverse(rhs[ops.free])

    k1 = rate(t, state)
    pred = state.copy()
    pred[ops.free] += dt * k1
    pred[ops.fixed] = g1[ops.fixed]
    k2 = rate(t + dt, pred)
    out = state.copy()
    out[ops.free] += 0.5 * dt * (k1 + k2)
    out[ops.fixed] = g1[ops.fixed]
    return out


def step_crank_nicolson(state: np.ndarray, t: float, dt: float,
                        ops: Operators, tol: float = None) -> np.ndarray:
    """Trapezoidal step; solves (M + dt/2 S) on the free dofs by CG."""
    if ops.problem.has_advection:
        raise ValueError("Crank-Nicolson does not support advection")
    g1 = ops.trace_at(t + dt)
    lift = np.zeros_like(state)
    lift[ops.fixed] = g1[ops.fixed]
    if ops.scheme.mass == "lumped":
        m_state = ops.m_lumped * state
        m_lift = ops.m_lumped * lift
    else:
        m_state = ops.mass @ state
        m_lift = ops.mass @ lift
    rhs_full = (m_state - 0.5 * dt * (ops.stiffness @ state)
                + 0.5 * dt * (ops.load_at(t) + ops.load_at(t + dt))
                - m_lift - 0.5 * dt * (ops.stiffness @ lift))
    A = ops.cn_matrix(dt)
    x = solve_spd(A, rhs_full[ops.free], tol=tol or ops.solve_tol,
                  x0=state[ops.free])
    out = lift
    out[ops.free] = x
    return out


_STEPPERS = {
    "explicit_euler": step_explicit_euler,
    "heun": step_heun,
    "crank_nicolson": step_crank_nicolson,
}


# -- full runs -----------------------------------------------------------------


def initial_state(problem: ParabolicProblem, ops: Operators) -> np.ndarray:
    """Start vector: corrected Ritz projection when a correction is active,
    nodal interpolation otherwise; boundary rows take g(0)."""
    mesh = problem.mesh
    trace0 = ops.trace_at(0.0)
    u0 = problem.u0
    if u0 is None or (np.isscalar(u0) and float(u0) == 0.0):
        state = trace0.copy()
    elif isinstance(u0, np.ndarray):
        state = np.array(u0, dtype=float)
    elif np.isscalar(u0):
        state = np.full(mesh.n_vertices, float(u0))
    elif problem.correction is not None:
        state = modified_ritz(mesh, problem.correction, u0, g=u0,
                              u_grad=problem.u0_grad)
    else:
        state = interpolate(mesh, u0)
    mismatch = np.max(np.abs(state[ops.fixed] - trace0[ops.fixed]),
                      initial=0.0)
    if mismatch > 1e-10:
        raise ValueError(f"initial data disagrees with boundary data at "
                         f"t = 0 (nodal mismatch {mismatch:.3e})")
    state[ops.fixed] = trace0[ops.fixed]
    return state


def run(problem: ParabolicProblem, scheme: SchemeConfig, grid: TimeGrid,
        observers=(), operators: Operators = None,
        blowup_factor: float = 1e6) -> np.ndarray:
    """March the scheme over the grid and return the final nodal state.

    Observers are called as observer(n, t_n, state) at n = 0 and after every
    step; they must not mutate the state. The run aborts with
    InstabilityError once the lumped-mass norm exceeds blowup_factor times
    the discrete stability bound (initial norm plus accumulated forcing and
    boundary data), or when the state stops being finite.
    """
    ops = operators if operators is not None else build_operators(
        problem, scheme)
    stepper = _STEPPERS[scheme.kind]
    dt = grid.dt
    state = initial_state(problem, ops)
    for obs in observers:
        obs(0, 0.0, state)

    minv = 1.0 / ops.m_lumped
    budget = ops.monitor_norm(state) + ops.monitor_norm(ops.trace_at(0.0))
    for n in range(grid.n_steps):
        t = n * dt
        load = ops.load_at(t)
        budget += dt * ops.monitor_norm(minv * load)
        state = stepper(state, t, dt, ops)
        t_next = (n + 1) * dt
        budget += ops.monitor_norm(ops.trace_at(t_next))
        if not np.all(np.isfinite(state)):
            raise InstabilityError(n + 1, t_next,
                                   f"state is not finite at step {n + 1} "
                                   f"(t = {t_next:.6g})")
        norm = ops.monitor_norm(state)
        if budget > 0.0 and norm > blowup_factor * budget:
            raise InstabilityError(
                n + 1, t_next,
                f"norm {norm:.3e} exceeds {blowup_factor:.1e} times the "
                f"stability bound {budget:.3e} at step {n + 1}")
        for obs in observers:
            obs(n + 1, t_next, state)
    return state


@dataclass
class TimeSeriesObserver:
    """Collects per-step rows: max nodal value plus optional errors against
    an exact solution. Rows serialize to CSV."""

    mesh: TriMesh
    u_exact: Optional[Callable] = None
    alpha: Optional[float] = None
    corner: int = 0
    every: int = 1
    rows: list = field(default_factory=list)

    def __call__(self, n, t, state):
        if n % self.every != 0:
            return
        row = {"step": n, "t": t, "linf": float(np.max(np.abs(state)))}
        if self.u_exact is not None:
            exact = lambda pts: self.u_exact(t, pts)
            row["l2_err"] = error_norm(self.mesh, state, exact, kind="l2")
            if self.alpha is not None:
                row["weighted_err"] = error_norm(
                    self.mesh, state, exact, kind="weighted_l2",
                    alpha=self.alpha, corner=self.corner)
        self.rows.append(row)

    def write_csv(self, path) -> None:
        columns = ["step", "t", "linf"]
        if self.u_exact is not None:
            columns.append("l2_err")
            if self.alpha is not None:
                columns.append("weighted_err")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in self.rows:
                writer.writerow([row[c] for c in columns])
