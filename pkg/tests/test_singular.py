import numpy as np
import pytest
from scipy import integrate as sci_integrate

from cornerheat import (CutoffEta, ManufacturedProblem, SingularFunction,
                        integrate, manufactured_solution)

LSHAPE_THETA = 1.5 * np.pi
LAM = 2.0 / 3.0

# Frozen closed-form integrals of the leading mode over the 3/2-turn domain,
# re-derived below by 1d radial reduction. The package's analytic energy
# routine and the defect tests lean on these.
ENERGY_S1 = 1.836226661875160
L2_SQ_S1 = 1.084455833098485
WEIGHTED_SQ_S1 = 1.0


def lshape_ray_length(phi):
    # distance from the origin to the boundary of (-1,1)^2 along angle phi;
    # valid for phi in (0, 3*pi/2), the wedge interior
    return 1.0 / np.maximum(np.abs(np.cos(phi)), np.abs(np.sin(phi)))


def angular_integral(f):
    # the ray length has kinks at odd multiples of pi/4; integrate piecewise
    total = 0.0
    breaks = np.linspace(0.0, LSHAPE_THETA, 7)
    for a, b in zip(breaks[:-1], breaks[1:]):
        val, err = sci_integrate.quad(f, a, b, limit=100)
        assert err < 1e-11
        total += val
    return total


def radial_reduction(power):
    # int over the domain of r^power * sin^2(LAM*phi), reduced to 1d:
    # int_0^theta sin^2(LAM*phi) * rho(phi)^(power+2) / (power+2) dphi
    def f(phi):
        rho = lshape_ray_length(phi)
        return np.sin(LAM * phi) ** 2 * rho ** (power + 2.0) / (power + 2.0)

    return angular_integral(f)


def test_frozen_energy_value():
    # |grad s1|^2 = LAM^2 r^(2*LAM - 2); the angular factor drops out
    def f(phi):
        rho = lshape_ray_length(phi)
        return LAM ** 2 * rho ** (2.0 * LAM) / (2.0 * LAM)

    assert angular_integral(f) == pytest.approx(ENERGY_S1, abs=1e-12)


def test_frozen_l2_value():
    assert radial_reduction(2.0 * LAM) == pytest.approx(L2_SQ_S1, abs=1e-12)


def test_frozen_weighted_value():
    # weight r^(2*alpha) with alpha = 1 - LAM makes the integrand r^2 sin^2
    assert radial_reduction(2.0) == pytest.approx(WEIGHTED_SQ_S1, abs=1e-12)


def test_leading_mode_values(lshape):
    s1 = SingularFunction.at_corner(lshape, 0, n=1)
    assert s1.lam_ang == pytest.approx(LAM)
    assert s1.lam_rad == pytest.approx(LAM)
    # unit value on the bisector at unit radius
    bis = np.array([np.cos(0.75 * np.pi), np.sin(0.75 * np.pi)])
    assert s1(bis) == pytest.approx(1.0, rel=1e-14)
    # vanishes on both wedge edges and at the corner
    assert s1(np.array([0.5, 0.0])) == pytest.approx(0.0, abs=1e-13)
    assert s1(np.array([0.0, -0.5])) == pytest.approx(0.0, abs=1e-13)
    assert s1(np.array([0.0, 0.0])) == 0.0
    # homogeneity: s1(c x) = c^LAM s1(x)
    x = np.array([-0.3, 0.2])
    assert s1(0.5 * x) == pytest.approx(0.5 ** LAM * s1(x), rel=1e-13)


def test_mode_quadrature_matches_closed_form(lshape3):
    s1 = SingularFunction.at_corner(lshape3, 0, n=1)
    got = integrate(lshape3, lambda p: s1(p) ** 2, corner_levels=10)
    assert got == pytest.approx(L2_SQ_S1, rel=1e-6)

    def grad_sq(p):
        g = s1.grad(p)
        return (g ** 2).sum(axis=1)

    got = integrate(lshape3, grad_sq, corner_levels=28)
    assert got == pytest.approx(ENERGY_S1, rel=1e-4)


def test_gradient_matches_finite_differences(lshape, rng):
    for n in (1, -1, 2):
        mode = SingularFunction.at_corner(lshape, 0, n=n)
        pts = np.array([[-0.4, 0.3], [-0.1, -0.6], [0.35, 0.2], [-0.7, -0.7]])
        g = mode.grad(pts)
        eps = 1e-7
        for d in range(2):
            shift = np.zeros(2)
            shift[d] = eps
            fd = (mode(pts + shift) - mode(pts - shift)) / (2.0 * eps)
            np.testing.assert_allclose(g[:, d], fd, rtol=1e-5, atol=1e-8)


def test_laplacian_matches_finite_differences(lshape):
    mode = SingularFunction.at_corner(lshape, 0, n=-1, eta=CutoffEta())
    pts = np.array([[-0.35, 0.25], [-0.3, -0.3], [0.28, 0.32]])
    lap = mode.laplacian(pts)
    assert np.any(np.abs(lap) > 1e-2)    # transition ring is active here
    eps = 3e-5
    fd = (mode(pts + [eps, 0]) + mode(pts - [eps, 0])
          + mode(pts + [0, eps]) + mode(pts - [0, eps])
          - 4.0 * mode(pts)) / eps ** 2
    np.testing.assert_allclose(lap, fd, rtol=1e-5)


def test_harmonic_off_the_ring(lshape):
    plain = SingularFunction.at_corner(lshape, 0, n=1)
    pts = np.array([[-0.4, 0.5], [0.2, 0.7]])
    np.testing.assert_array_equal(plain.laplacian(pts), 0.0)
    cut = SingularFunction.at_corner(lshape, 0, n=-1, eta=CutoffEta())
    inside = np.array([[-0.1, 0.1], [0.05, 0.15]])     # r < r0
    outside = np.array([[-0.9, 0.9], [0.9, 0.9]])      # r > r1
    np.testing.assert_array_equal(cut.laplacian(inside), 0.0)
    np.testing.assert_array_equal(cut.laplacian(outside), 0.0)
    assert np.all(cut(outside) == 0.0)


def test_cutoff_profile():
    eta = CutoffEta(0.25, 0.75)
    r = np.array([0.0, 0.1, 0.25])
    np.testing.assert_array_equal(eta.value(r), 1.0)
    np.testing.assert_array_equal(eta.dvalue(r), 0.0)
    r = np.array([0.75, 0.9, 2.0])
    np.testing.assert_array_equal(eta.value(r), 0.0)
    np.testing.assert_array_equal(eta.dvalue(r), 0.0)
    mid = eta.value(0.5)
    assert 0.0 < mid < 1.0 and mid == pytest.approx(0.5)
    assert eta.dvalue(0.5) < 0.0
    with pytest.raises(ValueError):
        CutoffEta(0.5, 0.25)
    with pytest.raises(ValueError):
        CutoffEta(0.0, 0.5)


def test_wedge_and_corner_guards(lshape):
    s1 = SingularFunction.at_corner(lshape, 0, n=1)
    with pytest.raises(ValueError, match="outside the wedge"):
        s1(np.array([0.5, -0.5]))    # inside the removed quadrant
    dual = SingularFunction.at_corner(lshape, 0, n=-1)
    with pytest.raises(ValueError, match="unbounded"):
        dual(np.array([0.0, 0.0]))
    with pytest.raises(ValueError, match="not defined"):
        s1.grad(np.array([0.0, 0.0]))
    # with a cutoff, far points outside the wedge are fine (mode is zero)
    cut = SingularFunction.at_corner(lshape, 0, n=-1, eta=CutoffEta())
    assert cut(np.array([0.9, -0.9])) == 0.0
    with pytest.raises(ValueError):
        SingularFunction(origin=(0.0, 0.0), theta=1.5 * np.pi, n=0)
    with pytest.raises(ValueError):
        SingularFunction(origin=(0.0, 0.0), theta=2.5 * np.pi)


def test_higher_modes_vanish_mid_wedge(lshape):
    # sin(2*LAM*phi) = sin(pi) = 0 on the bisector
    s2 = SingularFunction.at_corner(lshape, 0, n=2)
    bis = 0.8 * np.array([np.cos(0.75 * np.pi), np.sin(0.75 * np.pi)])
    assert s2(bis) == pytest.approx(0.0, abs=1e-14)
    assert s2.lam_rad == pytest.approx(4.0 / 3.0)


def test_table1_problem_is_consistent(lshape2):
    prob = manufactured_solution("table1")
    assert isinstance(prob, ManufacturedProblem)
    assert prob.domain == "l_shape"
    assert prob.b is None
    assert prob.k1_exact(0.7) == pytest.approx(np.sin(0.7))
    # every spatial mode is harmonic, so f = du/dt; check by finite difference
    pts = lshape2.vertices[~lshape2.boundary_vertex][:12]
    t, eps = 0.6, 1e-6
    dudt = (prob.u(t + eps, pts) - prob.u(t - eps, pts)) / (2.0 * eps)
    np.testing.assert_allclose(prob.f(t, pts), dudt, rtol=1e-8, atol=1e-9)
    # boundary data is the trace of u
    assert prob.g is prob.u
    # gradient field consistency at a probe point
    g = prob.u_grad(t, pts)
    assert g.shape == (len(pts), 2)
    fd = (prob.u(t, pts + [1e-7, 0.0]) - prob.u(t, pts - [1e-7, 0.0])) / 2e-7
    np.testing.assert_allclose(g[:, 0], fd, rtol=1e-5, atol=1e-8)


def test_advection_problem_shape():
    prob = manufactured_solution("advection_qoi")
    assert prob.domain == "notched_rectangle"
    assert prob.b == (1.0, 1.0)
    assert prob.u is None
    pts = np.array([[0.5, 0.5], [3.5, 2.5]])
    vals = prob.f(0.5, pts)
    assert np.all(np.isfinite(vals)) and np.all(vals > 0.0)
    # forcing switches off at integer times
    np.testing.assert_allclose(prob.f(1.0, pts), 0.0, atol=1e-15)


def test_qoi_pole_is_guarded():
    from cornerheat.singular import _qoi_profile
    with pytest.raises(ValueError, match="pole"):
        _qoi_profile(np.array([[2.0, 1.5]]))


def test_manufactured_solution_dispatch():
    with pytest.raises(ValueError, match="unknown problem"):
        manufactured_solution("nope")
