"""Tests for patch maps, pairing, width measurement and crime injection."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchcrime.domains import box_patch, grid_domain, single_patch_domain
from patchcrime.geometry import (
    FaceId,
    FixedWidth,
    GeometryDegeneracyError,
    GeometryMap,
    InterfaceRecord,
    InversionError,
    MultiPatchDomain,
    PowerWidth,
    domain_from_dict,
    domain_to_dict,
    face_dofs,
    inject_crime,
    inverse_map,
    jacobian,
    load_domain,
    map_eval,
    measure_width,
    pair_point,
    save_domain,
)
from patchcrime.splines import KnotVector, TensorProductBasis, greville


def identity_map(p: int = 2, ne: int = 1) -> GeometryMap:
    kv = KnotVector.uniform(p, ne)
    g = greville(kv)
    X, Y = np.meshgrid(g, g)
    return GeometryMap(TensorProductBasis((kv, kv)), np.column_stack([X.ravel(), Y.ravel()]))


def annulus_map() -> GeometryMap:
    """Quadratic polynomial approximation of a quarter annulus (radii 1 and 2)."""
    kv = KnotVector(2, [0, 0, 0, 1, 1, 1])
    arc = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    cp = []
    for r in (1.0, 1.5, 2.0):
        for c in arc:
            cp.append(r * c)
    # first direction (fastest) runs along the arc, second along the radius
    return GeometryMap(TensorProductBasis((kv, kv)), np.array(cp))


def crooked_domain() -> MultiPatchDomain:
    """Two curved patches with a curved matching interface."""

    def deform(P):
        x, y = P[:, 0], P[:, 1]
        return np.column_stack([x + 0.08 * np.sin(math.pi * y), y + 0.05 * np.sin(math.pi * x)])

    return grid_domain(2, 1, deform=deform, analysis_elements=lambda i, j: (4, 4) if i == 0 else (5, 5))


def translated_gap(g: float = 0.01) -> MultiPatchDomain:
    a = box_patch(0.0, 1.0, 0.0, 1.0, analysis_elements=(3, 3))
    b = box_patch(1.0 + g, 2.0 + g, 0.0, 1.0, analysis_elements=(3, 3))
    rec = InterfaceRecord(FaceId(0, "east"), FaceId(1, "west"), "gap", g)
    bnd = [FaceId(0, s) for s in ("west", "south", "north")] + [FaceId(1, s) for s in ("east", "south", "north")]
    return MultiPatchDomain((a, b), (rec,), tuple(bnd))


class TestMap:
    """Evaluation and Jacobians of spline maps."""

    def test_identity(self):
        np.testing.assert_allclose(map_eval(identity_map(), np.array([0.3, 0.7])), [0.3, 0.7], atol=1e-13)

    def test_affine_jacobian(self):
        A = np.array([[2.0, 0.5], [-0.3, 1.5]])
        b = np.array([1.0, -2.0])
        m = identity_map(3, 2)
        affine = GeometryMap(m.basis, m.control_points @ A.T + b)
        pts = np.random.default_rng(0).random((20, 2))
        J, det = jacobian(affine, pts)
        np.testing.assert_allclose(J, np.broadcast_to(A, J.shape), atol=1e-12)
        np.testing.assert_allclose(det, np.linalg.det(A), rtol=1e-12)
        np.testing.assert_allclose(map_eval(affine, pts), pts @ A.T + b, atol=1e-12)

    def test_annulus_det_finite_difference(self):
        m = annulus_map()
        s = np.linspace(0.02, 0.98, 20)
        U, V = np.meshgrid(s, s)
        pts = np.column_stack([U.ravel(), V.ravel()])
        _, det = jacobian(m, pts)
        eps = 1e-6
        du = (map_eval(m, pts + [eps, 0]) - map_eval(m, pts - [eps, 0])) / (2 * eps)
        dv = (map_eval(m, pts + [0, eps]) - map_eval(m, pts - [0, eps])) / (2 * eps)
        fd = du[:, 0] * dv[:, 1] - du[:, 1] * dv[:, 0]
        np.testing.assert_allclose(det, fd, rtol=1e-6)

    def test_degenerate_detected(self):
        m = identity_map()
        cp = m.control_points.copy()
        cp[:, 0] = 1.0 - cp[:, 0]  # mirror image: orientation reversed
        with pytest.raises(GeometryDegeneracyError):
            jacobian(GeometryMap(m.basis, cp), np.array([[0.5, 0.5]]))
        _, det = jacobian(GeometryMap(m.basis, cp), np.array([[0.5, 0.5]]), check=False)
        assert det[0] == pytest.approx(-1.0)


class TestInverse:
    """Newton inversion of patch maps."""

    def test_identity(self):
        np.testing.assert_allclose(inverse_map(identity_map(), np.array([0.25, 0.5])), [0.25, 0.5], atol=1e-13)

    def test_affine(self):
        A = np.array([[2.0, 0.5], [-0.3, 1.5]])
        m = identity_map()
        affine = GeometryMap(m.basis, m.control_points @ A.T + 3.0)
        xs = np.array([0.2, 0.9])
        np.testing.assert_allclose(inverse_map(affine, A @ xs + 3.0), xs, atol=1e-12)

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_round_trip_curved(self, seed):
        m = annulus_map()
        pts = np.random.default_rng(seed).random((100, 2))
        back = inverse_map(m, map_eval(m, pts))
        np.testing.assert_allclose(back, pts, atol=1e-10)

    def test_outside_point_fails(self):
        with pytest.raises(InversionError) as info:
            inverse_map(identity_map(), np.array([3.0, 3.0]))
        assert info.value.args


class TestTopology:
    """Domain construction and serialization."""

    def test_grid_interfaces(self):
        dom = grid_domain(3, 2)
        assert dom.num_patches == 6
        assert len(dom.interfaces) == 7
        assert len(dom.dirichlet) == 10
        assert dom.d_max == 0.0

    def test_matching_faces_coincide(self):
        dom = crooked_domain().refined(1)
        # same geometry knots on both sides: face control points of the maps agree
        for rec in dom.interfaces:
            pa, pb = dom.patches[rec.face_a.patch], dom.patches[rec.face_b.patch]
            ca = pa.map.control_points[face_dofs(pa.map.basis, rec.face_a.side)]
            cb = pb.map.control_points[face_dofs(pb.map.basis, rec.face_b.side)]
            np.testing.assert_allclose(ca, cb, atol=1e-12)

    def test_json_round_trip(self, tmp_path):
        dom = inject_crime(crooked_domain(), 0, "gap", FixedWidth(0.01))
        path = tmp_path / "geo.json"
        save_domain(dom, path)
        back = load_domain(path)
        assert domain_to_dict(back) == domain_to_dict(dom)
        assert back.interfaces[0].kind == "gap"
        assert measure_width(back, 0) == pytest.approx(dom.interfaces[0].width, rel=1e-12)

    def test_dict_rejects_3d(self):
        data = domain_to_dict(grid_domain(1, 1))
        data["dim"] = 3
        with pytest.raises(ValueError):
            domain_from_dict(data)


class TestPairing:
    """Cross-face point pairing."""

    def test_parallel_gap(self):
        dom = translated_gap(0.01)
        t = np.linspace(0, 1, 11)
        tb, y, r = pair_point(dom, 0, t)
        np.testing.assert_allclose(tb, t, atol=1e-12)
        np.testing.assert_allclose(y[:, 0], 1.01, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(r, axis=1), 0.01, atol=1e-12)
        assert measure_width(dom, 0) == pytest.approx(0.01, abs=1e-10)

    def test_matching_identity(self):
        dom = crooked_domain()
        t = np.linspace(0, 1, 17)
        tb, _, r = pair_point(dom, 0, t)
        np.testing.assert_allclose(tb, t, atol=1e-12)
        assert np.abs(r).max() < 1e-12
        assert measure_width(dom, 0) < 1e-12

    @pytest.mark.parametrize("mode", ["gap", "overlap", "mixed"])
    def test_involution(self, mode):
        dom = inject_crime(crooked_domain().refined(1), 0, mode, FixedWidth(0.02))
        rec = dom.interfaces[0]
        t = np.random.default_rng(3).random(64)
        tb, y, r = pair_point(dom, 0, t)
        ta, x, r2 = pair_point(dom, 0, tb, from_face=rec.face_b)
        np.testing.assert_allclose(ta, t, atol=1e-9)
        np.testing.assert_allclose(r2, -r, atol=1e-9 * dom.diameter())

    def test_width_bounds_pairing_distance(self):
        dom = inject_crime(crooked_domain(), 0, "gap", FixedWidth(0.02))
        d = measure_width(dom, 0)
        _, _, r = pair_point(dom, 0, np.linspace(0, 1, 997))
        assert np.linalg.norm(r, axis=1).max() <= d * 1.01 + 1e-9

    def test_width_against_dense_sampling(self):
        dom = inject_crime(crooked_domain(), 0, "overlap", FixedWidth(0.03))
        d = measure_width(dom, 0)
        _, _, r = pair_point(dom, 0, np.linspace(0, 1, 10 * 40 + 1))
        dense = np.linalg.norm(r, axis=1).max()
        assert abs(d - dense) <= 0.01 * dense


def _region_area(dom: MultiPatchDomain, k: int) -> float:
    """Area between the two faces, by the shoelace formula on sampled boundary curves."""
    rec = dom.interfaces[k]
    t = np.linspace(0, 1, 2001)
    a = dom.face_curve(rec.face_a)(t)
    b = dom.face_curve(rec.face_b)(t[::-1])
    poly = np.vstack([a, b])
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


class TestCrimeInjection:
    """Gap, overlap and mixed crimes."""

    def test_power_rule_width(self):
        dom = grid_domain(2, 1, xs=[0, 4, 8], ys=[0, 4], analysis_elements=lambda i, j: (4, 4))
        new = inject_crime(dom, 0, "gap", PowerWidth(1.0), h=0.25)
        assert new.d_max == pytest.approx(0.25, rel=1e-3)
        assert new.interfaces[0].kind == "gap"

    def test_fixed_width(self):
        new = inject_crime(grid_domain(2, 1), 0, "overlap", FixedWidth(0.004))
        assert new.d_max == pytest.approx(0.004, rel=0.05)
        assert new.interfaces[0].kind == "overlap"

    def test_gap_moves_inward_overlap_outward(self):
        dom = grid_domain(2, 1)
        mid = np.array([0.5])
        gap = inject_crime(dom, 0, "gap", FixedWidth(0.05))
        ovl = inject_crime(dom, 0, "overlap", FixedWidth(0.05))
        assert gap.face_curve(FaceId(1, "west"))(mid)[0, 0] > 1.0
        assert ovl.face_curve(FaceId(1, "west"))(mid)[0, 0] < 1.0

    def test_mixed_changes_sign(self):
        dom = inject_crime(grid_domain(2, 1, analysis_elements=lambda i, j: (4, 4)), 0, "mixed", FixedWidth(0.03))
        x = dom.face_curve(FaceId(1, "west"))(np.array([0.25, 0.75]))[:, 0]
        assert (x[0] - 1.0) * (x[1] - 1.0) < 0

    def test_corners_fixed(self):
        dom = grid_domain(2, 1)
        new = inject_crime(dom, 0, "gap", FixedWidth(0.05))
        c = new.face_curve(FaceId(1, "west"))(np.array([0.0, 1.0]))
        np.testing.assert_allclose(c, [[1.0, 0.0], [1.0, 1.0]], atol=1e-14)

    def test_gap_and_overlap_area_symmetric(self):
        dom = grid_domain(2, 1, analysis_elements=lambda i, j: (4, 4))
        a_gap = _region_area(inject_crime(dom, 0, "gap", FixedWidth(0.04)), 0)
        a_ovl = _region_area(inject_crime(dom, 0, "overlap", FixedWidth(0.04)), 0)
        assert a_gap > 0
        assert abs(a_gap - a_ovl) <= 0.1 * a_gap

    def test_width_scales_with_h(self):
        base = grid_domain(2, 1, analysis_elements=lambda i, j: (4, 4))
        hs, ds = [], []
        for level in range(4):
            dom = base.refined(level)
            h = dom.mesh_size
            dom = inject_crime(dom, 0, "gap", PowerWidth(2.0), h=h)
            hs.append(h)
            ds.append(dom.d_max)
        slope = np.polyfit(np.log(hs), np.log(ds), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.05)

    def test_too_wide_inverts(self):
        with pytest.raises(GeometryDegeneracyError):
            inject_crime(grid_domain(2, 1), 0, "gap", FixedWidth(1.5))

    def test_only_matching(self):
        with pytest.raises(ValueError):
            inject_crime(translated_gap(), 0, "gap", FixedWidth(0.01))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            inject_crime(grid_domain(2, 1), 0, "tear", FixedWidth(0.01))

    def test_jacobian_positive_after_crime(self):
        from patchcrime.studies import registry

        ex = registry("ex1-grid")
        dom = ex.domain
        for k, mode in ex.crimes:
            dom = inject_crime(dom, k, mode, PowerWidth(1.0), h=ex.domain.mesh_size)
        for p in dom.patches:
            s = np.linspace(0, 1, 21)
            U, V = np.meshgrid(s, s)
            _, det = jacobian(p.map, np.column_stack([U.ravel(), V.ravel()]))
            assert det.min() > 0

    def test_single_patch_domain(self):
        dom = single_patch_domain(box_patch(0, 1, 0, 1, analysis_elements=(2, 2)))
        assert dom.num_patches == 1 and len(dom.dirichlet) == 4 and not dom.interfaces
