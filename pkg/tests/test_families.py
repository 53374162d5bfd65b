import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inextensa.diffgeo import Domain, deformation_gradient, identity_map, invariants, right_cauchy_green
from inextensa.errors import DomainConflict, InvalidParams
from inextensa.families import (
    FIGURE_PARAMS,
    KINDS,
    Family5ZParams,
    FamilyZ0Params,
    FamilyZ1Params,
    as_params,
    closed_form_C,
    closed_form_J,
    default_domain,
    fiber_image,
    make_family,
    params_from_json,
    random_params,
)

SHIFTED = Domain((0, 1, 0, 1, 0.5, 1.5), (11, 11, 11))


class TestValidation:
    def test_z0_unit_column(self):
        with pytest.raises(InvalidParams, match="must equal 1"):
            FamilyZ0Params(np.diag([1.0, 1.0, 2.0]))

    def test_z0_positive_determinant(self):
        with pytest.raises(InvalidParams, match="det"):
            FamilyZ0Params(np.diag([-1.0, 1.0, 1.0]))

    @pytest.mark.parametrize("kind, index", [("z1", 0), ("z1", 2), ("z2", 1), ("z2", 2)])
    def test_nonzero_constants(self, kind, index):
        C = [1.0] * 8
        C[index] = 0.0
        with pytest.raises(InvalidParams, match=f"C{index + 1} must be nonzero"):
            as_params(kind, C)

    def test_offset_crossing_domain(self):
        with pytest.raises(DomainConflict):
            make_family("z1", [1, 0, 1, -0.5, 0, 0, 0, 0], Domain.unit_box(5))
        with pytest.raises(DomainConflict):
            make_family("z2", [1, 1, 1, 0, 0, 0, 0, 0], Domain.unit_box(5))

    def test_wedge_needs_positive_x(self):
        with pytest.raises(DomainConflict):
            make_family("5z", [1, 0, 0, 0], Domain((-0.5, 0.5, 0.5, 1, 0, 1), (3, 3, 3)))

    def test_5z_sign(self):
        with pytest.raises(InvalidParams):
            Family5ZParams((1, 0, 0, 0), 2)

    def test_json_unknown_keys(self):
        with pytest.raises(InvalidParams, match="unknown"):
            params_from_json({"family": "z1", "params": {"C1": 1, "C3": 1, "C9": 2}})
        with pytest.raises(InvalidParams, match="unknown"):
            params_from_json({"family": "z1", "params": {"C1": 1, "C3": 1}, "extra": 1})

    @pytest.mark.parametrize("kind", KINDS)
    def test_json_round_trip(self, kind, rng):
        p = random_params(kind, rng)
        q = params_from_json(json.loads(json.dumps(p.to_json())))
        assert q == p


class TestMaps:
    def test_z0_identity(self, rng):
        pts = rng.random((5, 3))
        np.testing.assert_allclose(make_family("z0", np.eye(3))(pts), identity_map()(pts))

    def test_figure_params(self):
        phi = make_family("z1", FIGURE_PARAMS["z1"], SHIFTED)
        x = phi(np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(x, [0.0, 0.0, 1.0], atol=1e-15)
        x = phi(np.array([0.25, 1.0, 1.0]))
        np.testing.assert_allclose(x, [np.sin(0.5), -0.25 + 1.5, np.cos(0.5)], atol=1e-15)
        make_family("z2", FIGURE_PARAMS["z2"], SHIFTED)


class TestClosedForms:
    def test_z1_example(self):
        C = closed_form_C("z1", [2, -1, 1.5, 1, 0, 0, 0, 0], np.zeros(3))
        np.testing.assert_allclose(C, [[5, -1.5, 0], [-1.5, 2.25, 0], [0, 0, 1]])

    def test_z0_identity(self):
        np.testing.assert_allclose(closed_form_C("z0", np.eye(3), np.zeros(3)), np.eye(3))

    def test_5z_isometry(self):
        R = 1.3
        C = closed_form_C("5z", ([1, 0, 0.4, 0.2], 1), np.array([R, 0.0, 0.5]))
        np.testing.assert_allclose(C, np.diag([1, R * R, 1]), atol=1e-15)

    def test_jacobian_examples(self):
        assert closed_form_J("z1", [2, 0, 1.5, 0, 0, 0, 0, 0], np.array([0, 0, 1.0])) == pytest.approx(3.0)
        assert closed_form_J("z2", [0, -1.25, 1.2, 0, 0, 0, 0, 0], np.array([0, 0, 1.0])) == pytest.approx(1.5)

    @pytest.mark.parametrize("kind", KINDS)
    def test_ftf_and_jacobian_random_draws(self, kind):
        rng = np.random.default_rng(123)
        for _ in range(20):
            p = random_params(kind, rng)
            dom = default_domain(kind, 5)
            grid = dom.grid()
            phi = make_family(kind, p, dom)
            C = right_cauchy_green(phi, grid)
            np.testing.assert_allclose(C, closed_form_C(kind, p, grid, cartesian=True), atol=1e-10)
            np.testing.assert_allclose(np.linalg.det(deformation_gradient(phi, grid)), closed_form_J(kind, p, grid), atol=1e-10)
            np.testing.assert_allclose(C[..., 2, 2], 1.0, atol=1e-12)

    def test_5z_unit_jacobian(self, rng):
        for _ in range(5):
            p = random_params("5z", rng)
            grid = Domain.wedge(4).grid()
            np.testing.assert_allclose(np.abs(np.linalg.det(deformation_gradient(make_family("5z", p), grid))), 1.0, atol=1e-12)

    def test_pure_bending_diagonal(self, rng):
        C = closed_form_C("z1", [1.5, 0, 2.0, 1.0, 0, 0, 0, 0], rng.random((10, 3)))
        np.testing.assert_allclose(C[..., 0, 1], 0.0, atol=1e-12)


class TestInvariantStructure:
    @pytest.mark.parametrize("kind", ["z1", "z2"])
    def test_depend_on_z_only(self, kind, rng):
        p = random_params(kind, rng)
        grid = Domain.unit_box(6).grid()
        I = np.stack(invariants(closed_form_C(kind, p, grid)), -1)
        assert np.max(np.ptp(I.reshape(-1, 6, 3), axis=0)) <= 1e-10

    def test_5z_constant(self, rng):
        p = random_params("5z", rng)
        grid = Domain.wedge(6).grid()
        I = np.stack(invariants(closed_form_C("5z", p, grid, cartesian=True)), -1).reshape(-1, 3)
        assert np.max(np.ptp(I, axis=0)) <= 1e-9
        np.testing.assert_allclose(I[:, 2], 1.0, atol=1e-10)


class TestFibers:
    @pytest.mark.parametrize("kind", ["z1", "z2"])
    def test_figure_fibers_straight(self, kind):
        f = fiber_image(kind, FIGURE_PARAMS[kind], (0.3, 0.6), z_range=(0.5, 1.5))
        assert f.straightness_defect <= 1e-10
        assert f.speed_defect <= 1e-10

    def test_z0(self, rng):
        f = fiber_image("z0", random_params("z0", rng), (0.2, 0.9))
        assert f.straightness_defect <= 1e-12
        assert f.speed_defect <= 1e-12

    def test_too_few_samples(self):
        with pytest.raises(InvalidParams):
            fiber_image("z0", np.eye(3), (0, 0), samples=1)


@given(st.integers(0, 2**31 - 1), st.sampled_from(KINDS))
def test_random_params_are_valid(seed, kind):
    p = random_params(kind, np.random.default_rng(seed))
    p.validate(default_domain(kind, 3))
    C = closed_form_C(kind, p, default_domain(kind, 3).grid(), cartesian=True)
    assert np.all(np.linalg.eigvalsh(C) > 0)
