"""Gallery instances: KKT references, invariants, packaged data."""

import numpy as np
import pytest

import penflow as pf
from penflow.gallery import (
    _build_g1,
    _build_g2,
    _build_g3,
    _build_g4,
    instance_from_json,
    instance_to_json,
    load_instance,
    write_gallery_data,
)


class TestSolveReferenceKkt:
    def test_projection_example(self):
        """Phi = 0.5||x-(1,2)||^2 over {x_1 = 0}: z = (0,2)."""
        Q = np.eye(2)
        b = np.array([1.0, 2.0])
        A = np.array([[1.0, 0.0]])
        c = np.array([0.0])
        z, nu = pf.solve_reference_kkt(Q, b, A, c)
        assert np.allclose(z, [0.0, 2.0], atol=1e-12)
        # first-order system: grad Phi(z) + A^T nu = 0
        grad = Q @ z - b
        assert np.allclose(grad, [-1.0, 0.0])
        assert np.linalg.norm(grad + A.T @ nu) <= 1e-12

    def test_symmetry_example(self):
        """Phi = 0.5||x||^2 over {x_1 + x_2 = 2}: z = (1,1) by symmetry."""
        z, nu = pf.solve_reference_kkt(np.eye(2), np.zeros(2),
                                       np.array([[1.0, 1.0]]), np.array([2.0]))
        assert np.allclose(z, [1.0, 1.0], atol=1e-12)

    def test_unconstrained_case(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((3, 3))
        Q = M @ M.T + np.eye(3)
        b = rng.standard_normal(3)
        z, nu = pf.solve_reference_kkt(Q, b)
        assert np.allclose(z, np.linalg.solve(Q, b), atol=1e-12)
        assert nu.size == 0

    def test_singular_kkt_rejected(self):
        # flat objective direction inside the constraint set
        Q = np.diag([2.0, 3.0, 1.0, 4.0, 0.0])
        b = np.array([0.8, -1.2, 1.0, 2.0, 0.0])
        A = np.array([[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0]])
        c = np.array([0.5, -0.5])
        with pytest.raises(ValueError):
            pf.solve_reference_kkt(Q, b, A, c)

    def test_residual_quality_midscale(self, gallery):
        g5 = gallery["G5"]
        G, g = g5.problem.affine_gradient
        z, nu = pf.solve_reference_kkt(G, -g, g5.constraint.matrix,
                                       g5.constraint.rhs)
        kkt_grad = g5.problem.gradient(z) + g5.constraint.matrix.T @ nu
        assert np.linalg.norm(kkt_grad) <= 1e-10
        assert np.linalg.norm(g5.constraint.matrix @ z - g5.constraint.rhs) <= 1e-10
        # committed reference matches an independent recomputation
        assert np.linalg.norm(z - g5.z) <= 1e-8


class TestStandardGallery:
    def test_names_and_tags(self, gallery):
        assert set(gallery) == {"G1", "G2", "G3", "G4", "G5"}
        assert "psi_zero" in gallery["G1"].tags
        assert "strongly_convex" in gallery["G2"].tags
        assert gallery["G3"].mu == 0.0
        assert "degenerate_lg_one" in gallery["G4"].tags
        assert gallery["G5"].dimension == 50

    def test_references_verify(self, gallery):
        for inst in gallery.values():
            pf.verify_reference(inst)
            # -grad Phi(z) lies in the range of the normal cone
            assert np.isfinite(inst.constraint.conjugate_gap(
                -inst.problem.gradient(inst.z)))

    def test_g1_reference(self, gallery):
        assert np.allclose(gallery["G1"].z, 0.0)
        assert gallery["G1"].phi_z == 0.0

    def test_g2_reference(self, gallery):
        g2 = gallery["G2"]
        assert np.allclose(g2.z, [0.0, 2.0], atol=1e-12)
        assert g2.phi_z == pytest.approx(0.5)
        assert g2.mu == pytest.approx(1.0)

    def test_g3_flat_direction(self, gallery):
        g3 = gallery["G3"]
        # the whole line z + s*e5 lies in the solution set
        for s in (-2.0, 1.0, 3.0):
            zs = g3.z.copy()
            zs[4] += s
            assert g3.constraint.argmin_contains(zs, 1e-10)
            assert g3.problem.value(zs) == pytest.approx(g3.phi_z)

    def test_g5_spectrum(self, gallery):
        G, _ = gallery["G5"].problem.affine_gradient
        eigs = np.linalg.eigvalsh(G)
        assert eigs[0] >= 0.1 - 1e-9
        assert eigs[-1] <= 10.0 + 1e-9
        assert gallery["G5"].constraint.matrix.shape == (10, 50)

    def test_committed_data_matches_code(self, gallery):
        for build, name in [(_build_g1, "G1"), (_build_g2, "G2"),
                            (_build_g3, "G3"), (_build_g4, "G4")]:
            built = build()
            loaded = load_instance(name)
            assert np.allclose(built.z, loaded.z, atol=1e-15)
            assert built.phi_z == pytest.approx(loaded.phi_z, rel=1e-15)
            rng = np.random.default_rng(1)
            for _ in range(10):
                x = rng.standard_normal(built.dimension)
                assert built.problem.value(x) == pytest.approx(
                    loaded.problem.value(x), rel=1e-12, abs=1e-12)
                assert built.constraint.base.value(x) == pytest.approx(
                    loaded.constraint.base.value(x), rel=1e-12, abs=1e-12)


class TestInstanceJson:
    def test_roundtrip(self, gallery):
        for inst in gallery.values():
            doc = instance_to_json(inst)
            again = instance_from_json(doc)
            assert again.name == inst.name
            assert np.allclose(again.z, inst.z)
            assert again.tags == inst.tags

    def test_load_by_path(self, tmp_path, gallery):
        import json

        target = tmp_path / "custom.json"
        target.write_text(json.dumps(instance_to_json(gallery["G2"])))
        inst = load_instance(str(target))
        assert inst.name == "G2"

    def test_unknown_name(self):
        with pytest.raises(FileNotFoundError):
            load_instance("G99")

    def test_write_gallery_data(self, tmp_path):
        written = write_gallery_data(tmp_path)
        assert len(written) == 5
        inst = load_instance(str(tmp_path / "G3.json"))
        assert inst.name == "G3"

    def test_corrupted_reference_rejected(self, gallery):
        doc = instance_to_json(gallery["G2"])
        doc["reference"]["z"] = [5.0, 5.0]
        with pytest.raises(ValueError):
            instance_from_json(doc)
