import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from inextensa import jet as J
from inextensa.constitutive import EnergyFunction, Poly3, ResponseTriple
from inextensa.diffgeo import DeformationMap, Domain, MetricField, constant_metric
from inextensa.errors import InvalidParams
from inextensa.families import FIGURE_PARAMS, closed_form_metric, make_family, random_params
from inextensa.universality import (
    RULES,
    ConstraintReport,
    cauchy_universality_residuals,
    classify_invariants,
    equilibrium_forcing,
    equilibrium_forcing_fd,
    full_equilibrium_residual,
    hyper_universality_residuals,
    passes,
    residual_report,
    solve_tension,
)

Z1 = [2.0, -1.0, 1.5, 1.0, 0.3, 0.0, 0.0, 0.0]
Z2 = [0.25, -1.25, 1.2, 0.4, 1.0, 0.0, 0.0, 0.0]
SHIFTED = Domain((0, 1, 0, 1, 0.5, 1.5), (9, 9, 9))


def diag_metric(f, domain=None):
    return MetricField(lambda X, Y, Z: [[f(X, Y, Z), 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], domain)


def rotated_metric(theta):
    """In-plane block ``R(theta) diag(l1^2, l2^2) R(theta)^T`` with ``l1 = 1 + Z``, ``l2 = 2``."""

    def comps(X, Y, Z):
        t = theta(X, Y, Z)
        c, s = J.cos(t), J.sin(t)
        a, b = (1 + Z) * (1 + Z), 4.0
        return [[c * c * a + s * s * b, (b - a) * c * s, 0.0], [(b - a) * c * s, s * s * a + c * c * b, 0.0], [0.0, 0.0, 1.0]]

    return MetricField(comps)


def sin_fixture(domain=None):
    return DeformationMap(lambda X, Y, Z: (X + 0.1 * J.sin(X), Y, Z), domain)


class TestResidualSuites:
    def test_counts(self):
        m = constant_metric(np.eye(3))
        assert len(cauchy_universality_residuals(m, np.zeros(3))) == 23
        assert len(hyper_universality_residuals(m, np.zeros(3))) == 17

    def test_constant_metric_zero(self, rng):
        C = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.2], [0.1, 0.2, 1.0]])
        pts = rng.random((5, 3))
        for suite in (cauchy_universality_residuals, hyper_universality_residuals):
            assert all(np.max(v) == 0.0 for v in suite(constant_metric(C), pts).values())

    def test_z1_universal(self):
        r = cauchy_universality_residuals(closed_form_metric("z1", Z1), Domain.unit_box(6).grid())
        assert passes(r, 1e-10)

    def test_z2_hyper(self):
        r = hyper_universality_residuals(closed_form_metric("z2", Z2), Domain.unit_box(6).grid())
        assert passes(r, 1e-10)

    def test_x_dependent_negative(self):
        m = diag_metric(lambda X, Y, Z: 1 + X * X)
        p = np.array([1.0, 0.3, 0.4])
        assert cauchy_universality_residuals(m, p)["gradI1_1"] == pytest.approx(2.0, abs=1e-12)
        assert hyper_universality_residuals(m, p)["hyper3_1"] == pytest.approx(2.0, abs=1e-12)

    def test_rotated_form(self):
        pts = Domain.unit_box(5).grid()
        bad = cauchy_universality_residuals(rotated_metric(lambda X, Y, Z: X), pts)
        good = cauchy_universality_residuals(rotated_metric(lambda X, Y, Z: Z), pts)
        assert max(np.max(bad["divC_1"]), np.max(bad["divC_2"])) > 1e-3
        assert max(np.max(good["divC_1"]), np.max(good["divC_2"])) <= 1e-10

    def test_fiber_stretch_flagged(self):
        m = MetricField(lambda X, Y, Z: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.2]])
        assert cauchy_universality_residuals(m, np.zeros(3))["C33"] == pytest.approx(0.2)


class TestClassification:
    def test_z1_case_i(self):
        assert classify_invariants(closed_form_metric("z1", Z1), Domain.unit_box(5)).label == "case_i"

    def test_5z_case_ii(self, rng):
        m = closed_form_metric("5z", random_params("5z", rng))
        c = classify_invariants(m, Domain.wedge(5))
        assert c.label == "case_ii"
        assert set(c.to_json()) == {"label", "max_gradient_norms", "threshold"}

    def test_constant_case_ii(self):
        assert classify_invariants(constant_metric(np.diag([2.0, 3.0, 1.0])), Domain.unit_box(3)).label == "case_ii"


class TestForcing:
    def test_constant_metric(self, rng):
        F = equilibrium_forcing(constant_metric(np.diag([2.0, 1.0, 1.0])), ResponseTriple.random(1), rng.random((4, 3)))
        np.testing.assert_allclose(F, 0.0, atol=1e-14)

    def test_hand_chain_rule(self):
        m = MetricField(lambda X, Y, Z: [[1 + Z * Z, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        r = ResponseTriple(Poly3.monomial(1, 0, 0), Poly3.constant(0.0), Poly3.constant(0.0))
        Z = np.array([0.0, 0.3, 0.8])
        pts = np.stack([0.2 + 0 * Z, 0.1 + 0 * Z, Z], -1)
        np.testing.assert_allclose(equilibrium_forcing(m, r, pts)[:, 2], -2 * Z, atol=1e-14)

    def test_z1_first_two_vanish(self, rng):
        m = closed_form_metric("z1", Z1)
        pts = rng.random((30, 3))
        for seed in range(3):
            F = equilibrium_forcing(m, ResponseTriple.random(seed), pts)
            np.testing.assert_allclose(F[:, :2], 0.0, atol=1e-9)
            np.testing.assert_allclose(F[:, 2], equilibrium_forcing_fd(m, ResponseTriple.random(seed), pts)[:, 2], rtol=1e-6, atol=1e-6)

    def test_energy_material_matches_fd(self, rng):
        m = MetricField(lambda X, Y, Z: [[2 + X * Z, 0.1 * Y, 0.0], [0.1 * Y, 1.5 + Z, 0.0], [0.0, 0.0, 1.0]])
        pts = rng.random((20, 3))
        w = EnergyFunction.random(3)
        F = equilibrium_forcing(m, w, pts)
        np.testing.assert_allclose(F, equilibrium_forcing_fd(m, w, pts), rtol=1e-6, atol=1e-6)


class TestTension:
    def test_constant_stress(self):
        d = Domain.unit_box(5)
        r = ResponseTriple(Poly3.constant(1.0), Poly3.constant(0.0), Poly3.constant(0.0))
        t = solve_tension(closed_form_metric("z1", Z1), r, d, T0=(1.0, 2.0, -1.0, 0.5))
        Xg, Yg = np.meshgrid(*d.axes()[:2], indexing="ij")
        np.testing.assert_allclose(t.values, np.broadcast_to((1 + 2 * Xg - Yg + 0.5 * Xg * Yg)[..., None], t.values.shape), atol=1e-14)

    @pytest.mark.parametrize("rule", RULES)
    def test_z1_against_adaptive_quadrature(self, rule):
        d = Domain.unit_box(11)
        m = closed_form_metric("z1", Z1)
        r = ResponseTriple.random(2)
        t = solve_tension(m, r, d, rule=rule)
        xs, ys, zs = d.axes()
        i, j = 3, 7
        f = lambda z: equilibrium_forcing(m, r, np.array([xs[i], ys[j], z]))[2]
        exact = np.array([quad(f, 0.0, z, epsabs=1e-13, epsrel=1e-13)[0] for z in zs])
        tol = {"chebyshev": 1e-8, "gauss-kronrod": 1e-8, "simpson": 1e-3}[rule]
        np.testing.assert_allclose(t.values[i, j], exact, atol=tol * max(1.0, np.max(np.abs(exact))))

    def test_5z_z_independent(self, rng):
        p = random_params("5z", rng)
        t = solve_tension(closed_form_metric("5z", p), ResponseTriple.random(4), Domain.wedge(7))
        assert t.z_variation() <= 1e-9

    def test_linear_in_base(self):
        d = Domain.unit_box(5)
        m = closed_form_metric("z2", Z2)
        r = ResponseTriple.random(9)
        f, g = (0.5, 1.0, 0.0, 0.0), (0.0, 0.0, -2.0, 3.0)
        fg = tuple(a + b for a, b in zip(f, g))
        T = lambda T0: solve_tension(m, r, d, T0=T0).values
        np.testing.assert_allclose(T(fg), T(f) + T(g) - T(None), atol=1e-12)

    def test_bad_inputs(self):
        d = Domain.unit_box(3)
        with pytest.raises(InvalidParams):
            solve_tension(constant_metric(np.eye(3)), ResponseTriple.random(1), d, T0=(1.0, 2.0))
        with pytest.raises(InvalidParams):
            solve_tension(constant_metric(np.eye(3)), ResponseTriple.random(1), d, rule="trapezoid")


class TestFullEquilibrium:
    def test_z0(self, rng):
        phi = make_family("z0", random_params("z0", rng))
        rep = full_equilibrium_residual(phi, None, Domain.unit_box(7), samples=10)
        assert max(a["max_abs"] for a in rep.aggregates().values()) <= 1e-10

    def test_z2_figure(self):
        rep = full_equilibrium_residual(make_family("z2", FIGURE_PARAMS["z2"]), None, SHIFTED, samples=10)
        assert rep.passed

    def test_material_independent(self):
        rep = full_equilibrium_residual(closed_form_metric("z1", Z1), None, Domain.unit_box(9), samples=25, seed=100)
        assert rep.passed
        assert len(rep.metadata["materials"]) == 25

    def test_sin_fixture_fails(self):
        d = Domain.unit_box(7)
        rep = full_equilibrium_residual(sin_fixture(), ResponseTriple.random(1), d)
        assert rep.aggregates()["equilibrium_1"]["max_abs"] > 1e-3
        assert not rep.passed

    def test_fiber_stretch_rejected(self):
        m = MetricField(lambda X, Y, Z: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1 + 0.1 * Z]])
        with pytest.raises(InvalidParams):
            full_equilibrium_residual(m, None, Domain.unit_box(3))


class TestReport:
    def test_aggregates_and_pass(self):
        pts = np.zeros((3, 3))
        pts[:, 0] = [0, 1, 2]
        rep = ConstraintReport.build(pts, {"a": [1e-12, 3e-11, 0.0], "b": [0.5, 0.1, 0.2]}, 1e-10)
        agg = rep.aggregates()
        assert agg["a"]["pass"] and not agg["b"]["pass"]
        assert agg["b"]["worst_point"] == [0.0, 0.0, 0.0]
        assert agg["a"]["mean_abs"] == pytest.approx(np.mean([1e-12, 3e-11, 0.0]))
        assert not rep.passed
        assert [n for n, _ in rep.failures()] == ["b"]

    def test_residual_report_prefix(self):
        rep = residual_report(constant_metric(np.eye(3)), Domain.unit_box(3), "hyper", prefix="h.")
        assert all(n.startswith("h.") for n in rep.residuals)
        assert rep.to_json()["pass"]


@given(st.integers(0, 1000), st.floats(0.01, 0.5))
def test_cauchy_hyper_verdicts_agree(seed, eps):
    rng = np.random.default_rng(seed)
    kind = ["z1", "z2"][seed % 2]
    p = random_params(kind, rng)
    base = closed_form_metric(kind, p)
    amp = float(eps)
    pert = MetricField(
        lambda X, Y, Z: [
            [c if (i, j) != (0, 0) else c + amp * X * X for j, c in enumerate(row)]
            for i, row in enumerate(base._components(X, Y, Z))
        ]
    )
    pts = Domain.unit_box(4).grid()
    for m in (base, pert):
        assert passes(cauchy_universality_residuals(m, pts), 1e-9) == passes(hyper_universality_residuals(m, pts), 1e-9)
