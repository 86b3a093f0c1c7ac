"""Corner modes of the Laplacian on wedges, with manufactured problems.

On a wedge of opening theta the harmonic functions separating in polar
coordinates are r^(n*pi/theta) * sin(n*pi/theta * phi). The leading positive
mode carries the non-smooth part of solutions near a re-entrant corner; the
matching negative-exponent mode, tamed by a radial cutoff, is the weight used
to read off the leading coefficient from integrals of the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fem import TimeSeparableField
from .mesh import TriMesh

_TWO_PI = 2.0 * np.pi

# Angular slack for points that sit on a wedge edge up to rounding.
_WEDGE_TOL = 1e-12


@dataclass(frozen=True)
class CutoffEta:
    """Radial cutoff: 1 up to r0, quintic descent, 0 beyond r1. C2 overall."""

    r0: float = 0.25
    r1: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.r0 < self.r1:
            raise ValueError(f"need 0 < r0 < r1, got r0={self.r0}, r1={self.r1}")

    def _rho(self, r):
        return np.clip((np.asarray(r, dtype=float) - self.r0)
                       / (self.r1 - self.r0), 0.0, 1.0)

    def value(self, r):
        rho = self._rho(r)
        return 1.0 - rho ** 3 * (10.0 - 15.0 * rho + 6.0 * rho ** 2)

    def dvalue(self, r):
        rho = self._rho(r)
        return -30.0 * rho ** 2 * (1.0 - rho) ** 2 / (self.r1 - self.r0)

    def d2value(self, r):
        rho = self._rho(r)
        return (-60.0 * rho * (1.0 - rho) * (1.0 - 2.0 * rho)
                / (self.r1 - self.r0) ** 2)


@dataclass(frozen=True)
class SingularFunction:
    """Separable corner mode eta(r) * r^lam_rad * sin(lam_ang * phi).

    phi is measured from the wedge edge at global angle edge_angle, growing
    counterclockwise across the wedge interior up to theta. Positive mode
    index n gives the growing mode (radial exponent +lam_ang), negative n the
    decaying dual (exponent -lam_ang, same angular factor). Without a cutoff
    the mode is harmonic on the whole wedge; with one it is exactly zero
    outside radius eta.r1 and harmonic inside eta.r0.
    """

    origin: tuple
    theta: float
    edge_angle: float = 0.0
    n: int = 1
    eta: Optional[CutoffEta] = None

    def __post_init__(self):
        if self.n == 0:
            raise ValueError("mode index n must be nonzero")
        if not 0.0 < self.theta <= _TWO_PI:
            raise ValueError(f"wedge opening must lie in (0, 2*pi], got {self.theta}")
        ox, oy = self.origin
        object.__setattr__(self, "origin", (float(ox), float(oy)))

    @classmethod
    def at_corner(cls, mesh: TriMesh, corner: int = 0, n: int = 1,
                  eta: Optional[CutoffEta] = None) -> "SingularFunction":
        spec = mesh.corners[corner]
        x, y = mesh.corner_position(corner)
        return cls(origin=(float(x), float(y)), theta=float(spec.theta),
                   edge_angle=float(spec.edge_angle), n=int(n), eta=eta)

    @property
    def lam_ang(self) -> float:
        return abs(self.n) * np.pi / self.theta

    @property
    def lam_rad(self) -> float:
        return self.lam_ang if self.n > 0 else -self.lam_ang

    def _polar(self, pts):
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        dx = pts[:, 0] - self.origin[0]
        dy = pts[:, 1] - self.origin[1]
        r = np.hypot(dx, dy)
        phi = np.mod(np.arctan2(dy, dx) - self.edge_angle, _TWO_PI)
        # Points on the first edge may round to just below 2*pi; fold back.
        phi = np.where(phi >= _TWO_PI - _WEDGE_TOL, 0.0, phi)
        return r, phi, dx, dy, single

    def _active(self, r):
        # With a cutoff the mode vanishes identically beyond r1, so points out
        # there need not lie inside the wedge at all.
        if self.eta is None:
            return np.ones_like(r, dtype=bool)
        return r < self.eta.r1

    def _check_wedge(self, r, phi, active):
        bad = active & (r > 0.0) & (phi > self.theta + _WEDGE_TOL)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"point at r={r[i]:.6g}, phi={phi[i]:.6g} lies outside the "
                f"wedge [0, {self.theta:.6g}]")

    def __call__(self, pts):
        r, phi, _, _, single = self._polar(pts)
        act = self._active(r)
        self._check_wedge(r, phi, act)
        if self.lam_rad < 0.0 and np.any(act & (r == 0.0)):
            raise ValueError("decaying mode is unbounded at the corner")
        out = np.zeros_like(r)
        sel = act & (r > 0.0)
        rs = r[sel]
        vals = rs ** self.lam_rad * np.sin(self.lam_ang * phi[sel])
        if self.eta is not None:
            vals *= self.eta.value(rs)
        out[sel] = vals
        return float(out[0]) if single else out

    def grad(self, pts):
        """Cartesian gradient; rejects the corner point itself."""
        r, phi, dx, dy, single = self._polar(pts)
        act = self._active(r)
        self._check_wedge(r, phi, act)
        if np.any(act & (r == 0.0)):
            raise ValueError("gradient is not defined at the corner")
        out = np.zeros((r.size, 2))
        sel = act
        rs, ps = r[sel], phi[sel]
        la, lr = self.lam_ang, self.lam_rad
        sin_a, cos_a = np.sin(la * ps), np.cos(la * ps)
        if self.eta is None:
            dr = lr * rs ** (lr - 1.0) * sin_a
        else:
            dr = (self.eta.dvalue(rs) * rs ** lr
                  + self.eta.value(rs) * lr * rs ** (lr - 1.0)) * sin_a
        dphi_r = rs ** (lr - 1.0) * la * cos_a
        if self.eta is not None:
            dphi_r = dphi_r * self.eta.value(rs)
        cosg, sing = dx[sel] / rs, dy[sel] / rs
        out[sel, 0] = dr * cosg - dphi_r * sing
        out[sel, 1] = dr * sing + dphi_r * cosg
        return out[0] if single else out

    def laplacian(self, pts):
        """Zero off the cutoff transition ring; zero everywhere without one."""
        r, phi, _, _, single = self._polar(pts)
        act = self._active(r)
        self._check_wedge(r, phi, act)
        out = np.zeros_like(r)
        if self.eta is not None:
            sel = (r > self.eta.r0) & (r < self.eta.r1)
            rs = r[sel]
            ep = self.eta.dvalue(rs)
            epp = self.eta.d2value(rs)
            lr = self.lam_rad
            out[sel] = (2.0 * lr * ep * rs ** (lr - 1.0)
                        + (epp + ep / rs) * rs ** lr) \
                * np.sin(self.lam_ang * phi[sel])
        return float(out[0]) if single else out


@dataclass(frozen=True)
class ManufacturedProblem:
    """A forced heat problem with enough structure to measure against.

    f, and g when callable, take (t, points). u and u_grad are present only
    when the exact solution is known in closed form; k1_exact then gives the
    exact leading corner coefficient as a function of time.
    """

    name: str
    domain: str
    f: TimeSeparableField
    g: object = 0.0
    u0: object = None
    b: Optional[tuple] = None
    u: Optional[TimeSeparableField] = None
    u_grad: Optional[Callable] = None
    k1_exact: Optional[Callable] = None
    modes: tuple = ()


def _build_table1() -> ManufacturedProblem:
    # Purely singular separable solution on the standard 3/2-turn wedge
    # domain: every spatial factor is harmonic, so the source is the plain
    # time derivative and the elliptic part contributes nothing.
    modes = tuple(SingularFunction(origin=(0.0, 0.0), theta=1.5 * np.pi,
                                   edge_angle=0.0, n=k) for k in (1, 2, 3))
    coefs = (lambda t: np.sin(t),
             lambda t: np.sin(2.0 * t),
             lambda t: -np.sin(3.0 * t))
    dcoefs = (lambda t: np.cos(t),
              lambda t: 2.0 * np.cos(2.0 * t),
              lambda t: -3.0 * np.cos(3.0 * t))
    u = TimeSeparableField(tuple(zip(coefs, modes)))
    f = TimeSeparableField(tuple(zip(dcoefs, modes)))

    def u_grad(t, pts):
        out = np.zeros((len(pts), 2))
        for c, s in zip(coefs, modes):
            out += c(t) * s.grad(pts)
        return out

    return ManufacturedProblem(
        name="table1", domain="l_shape", f=f, g=u, u0=None, b=None,
        u=u, u_grad=u_grad, k1_exact=lambda t: float(np.sin(t)), modes=modes)


_QOI_POLE = (2.0, 1.5)


def _qoi_profile(pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d2 = (pts[:, 0] - _QOI_POLE[0]) ** 2 + (pts[:, 1] - _QOI_POLE[1]) ** 2
    if np.any(d2 < 1e-24):
        raise ValueError("evaluation point coincides with the source pole; "
                         "the pole must stay inside the cut-out region")
    return 1.0 / d2


def _build_advection_qoi() -> ManufacturedProblem:
    # Smooth-in-space pulse centered inside the cut-out triangle, transported
    # diagonally. No closed-form solution; studies compare against a
    # fine-level extrapolated functional instead.
    f = TimeSeparableField(((lambda t: np.sin(np.pi * t), _qoi_profile),))
    return ManufacturedProblem(
        name="advection_qoi", domain="notched_rectangle", f=f, g=0.0,
        u0=None, b=(1.0, 1.0))


_MANUFACTURED = {
    "table1": _build_table1,
    "advection_qoi": _build_advection_qoi,
}


def manufactured_solution(name: str) -> ManufacturedProblem:
    """Return a named benchmark problem; see _MANUFACTURED for the menu."""
    try:
        builder = _MANUFACTURED[name]
    except KeyError:
        options = ", ".join(sorted(_MANUFACTURED))
        raise ValueError(f"unknown problem {name!r}; options: {options}") \
            from None
    return builder()
