import numpy as np
import pytest

from landmarkgan.shape_model import (RigidParams, align_similarity, compose, decompose,
                                     fit_shape_model, frontalize, load_shape_model,
                                     pose_sweep, save_shape_model)

from conftest import make_shape_family


@pytest.fixture(scope="module")
def fitted():
    shapes = make_shape_family(n=20, count=80, seed=7)
    return shapes, fit_shape_model(shapes, k=4)


class TestFit:
    def test_identical_shapes_give_zero_variance(self):
        shape = make_shape_family(count=1, seed=3)[0]
        model = fit_shape_model([shape.copy() for _ in range(6)], k=2)
        assert np.all(model.variances < 1e-20)
        scale = align_similarity(model.mean, shape).scale
        np.testing.assert_allclose(compose(align_similarity(model.mean, shape),
                                           np.zeros(2), model), shape, atol=1e-8 * scale)

    def test_single_mode_family_recovered(self, rng):
        base = make_shape_family(count=1, seed=5)[0]
        direction = rng.standard_normal(base.shape)
        # a deformation direction: orthogonal to translation/scale/rotation at base
        centered = base - base.mean(axis=0)
        rigid_dirs = np.stack([
            np.tile([1.0, 0.0], base.shape[0]),
            np.tile([0.0, 1.0], base.shape[0]),
            centered.ravel(),
            np.column_stack([-centered[:, 1], centered[:, 0]]).ravel(),
        ])
        rigid_dirs /= np.linalg.norm(rigid_dirs, axis=1, keepdims=True)
        v = direction.ravel()
        v -= rigid_dirs.T @ (rigid_dirs @ v)
        direction = (v / np.linalg.norm(v)).reshape(base.shape)
        shapes = [base + c * direction for c in np.linspace(-3, 3, 13)]
        model = fit_shape_model(shapes, k=1)
        assert abs(model.basis[0] @ direction.ravel()) == pytest.approx(1.0, abs=1e-8)
        for shape in shapes:
            rigid, coeffs = decompose(shape, model)
            np.testing.assert_allclose(compose(rigid, coeffs, model), shape, atol=1e-6)

    def test_orthonormal_basis(self, fitted):
        _, model = fitted
        gram = model.basis @ model.basis.T
        np.testing.assert_allclose(gram, np.eye(model.n_components), atol=1e-6)

    def test_projection_reproduces_in_span_residuals(self, fitted, rng):
        _, model = fitted
        coeffs = rng.standard_normal(model.n_components)
        resid = model.basis.T @ coeffs
        np.testing.assert_allclose(model.basis.T @ (model.basis @ resid), resid, atol=1e-10)

    def test_training_shapes_reconstruct(self, fitted):
        shapes, model = fitted
        errs = []
        for shape in shapes:
            rigid, coeffs = decompose(shape, model)
            errs.append(np.abs(compose(rigid, coeffs, model) - shape).max())
        assert np.mean(errs) < 1e-2  # px, faces span ~60 px

    def test_too_few_shapes_raises(self):
        shapes = make_shape_family(count=3, seed=1)
        with pytest.raises(ValueError):
            fit_shape_model(shapes, k=3)


class TestDecompose:
    def test_mean_shape_is_identity(self, fitted):
        _, model = fitted
        rigid, coeffs = decompose(model.mean, model)
        assert rigid.scale == pytest.approx(1.0, abs=1e-8)
        assert rigid.rotation == pytest.approx(0.0, abs=1e-8)
        assert np.hypot(rigid.tx, rigid.ty) < 1e-8
        np.testing.assert_allclose(coeffs, 0.0, atol=1e-8)

    def test_rotated_mean_recovers_angle(self, fitted):
        _, model = fitted
        angle = np.radians(30.0)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rigid, coeffs = decompose(model.mean @ rot.T, model)
        assert rigid.rotation == pytest.approx(angle, abs=1e-8)
        np.testing.assert_allclose(coeffs, 0.0, atol=1e-8)

    def test_coefficient_roundtrip(self, fitted, rng):
        _, model = fitted
        for _ in range(10):
            coeffs = rng.uniform(-2, 2, model.n_components) * np.sqrt(model.variances)
            rigid = RigidParams(scale=rng.uniform(20, 40), rotation=rng.uniform(-0.5, 0.5),
                                tx=rng.uniform(-20, 20), ty=rng.uniform(-20, 20))
            shape = compose(rigid, coeffs, model)
            _, recovered = decompose(shape, model)
            np.testing.assert_allclose(recovered, coeffs, atol=1e-5)

    def test_wrong_point_count_raises(self, fitted):
        _, model = fitted
        with pytest.raises(ValueError):
            decompose(np.zeros((7, 2)), model)


class TestFrontalize:
    def test_frontal_shape_is_fixed_point(self, fitted, rng):
        _, model = fitted
        coeffs = rng.uniform(-1, 1, model.n_components) * np.sqrt(model.variances)
        coeffs[model.pose_index] = 0.0
        shape = compose(RigidParams(30.0, 0.0, 48.0, 48.0), coeffs, model)
        np.testing.assert_allclose(frontalize(shape, model), shape, atol=1e-6)

    def test_pose_zeroed_expressions_kept(self, fitted, rng):
        _, model = fitted
        coeffs = rng.uniform(-1, 1, model.n_components) * np.sqrt(model.variances)
        coeffs[model.pose_index] = 2.0 * model.component_sigma(model.pose_index)
        shape = compose(RigidParams(30.0, 0.0, 48.0, 48.0), coeffs, model)
        _, out_coeffs = decompose(frontalize(shape, model), model)
        assert abs(out_coeffs[model.pose_index]) < 1e-6
        others = [i for i in range(model.n_components) if i != model.pose_index]
        np.testing.assert_allclose(out_coeffs[others], coeffs[others], atol=1e-6)

    def test_idempotent(self, fitted, shape_family):
        _, model = fitted
        for shape in shape_family[:5]:
            once = frontalize(shape, model)
            np.testing.assert_allclose(frontalize(once, model), once, atol=1e-6)

    def test_removes_rotation(self, fitted):
        _, model = fitted
        angle = np.radians(25.0)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        shape = 30.0 * (model.mean @ rot.T) + 50.0
        rigid, _ = decompose(frontalize(shape, model), model)
        assert abs(rigid.rotation) < 1e-8


class TestPoseSweep:
    def test_zero_value_no_jitter_equals_frontalize(self, fitted, shape_family):
        _, model = fitted
        shape = shape_family[0]
        out = pose_sweep(shape, model, [0.0])
        assert len(out) == 1
        np.testing.assert_allclose(out[0], frontalize(shape, model), atol=1e-8)

    def test_pair_differs_only_along_pose_mode(self, fitted, shape_family):
        _, model = fitted
        sigma = model.component_sigma(model.pose_index)
        lo, hi = pose_sweep(shape_family[1], model, [-2 * sigma, 2 * sigma])
        _, c_lo = decompose(lo, model)
        _, c_hi = decompose(hi, model)
        assert c_lo[model.pose_index] == pytest.approx(-2 * sigma, rel=1e-5)
        assert c_hi[model.pose_index] == pytest.approx(2 * sigma, rel=1e-5)
        others = [i for i in range(model.n_components) if i != model.pose_index]
        np.testing.assert_allclose(c_lo[others], c_hi[others], atol=1e-6)

    def test_seeded_jitter_reproducible(self, fitted, shape_family):
        _, model = fitted
        a = pose_sweep(shape_family[2], model, [0.0, 0.1], 0.3, np.random.default_rng(9))
        b = pose_sweep(shape_family[2], model, [0.0, 0.1], 0.3, np.random.default_rng(9))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_jitter_without_rng_raises(self, fitted, shape_family):
        _, model = fitted
        with pytest.raises(ValueError):
            pose_sweep(shape_family[0], model, [0.0], expression_jitter_scale=0.5)


def test_save_load_roundtrip(tmp_path, fitted):
    _, model = fitted
    path = tmp_path / "model.npz"
    save_shape_model(path, model)
    back = load_shape_model(path)
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.basis, model.basis)
    assert np.array_equal(back.variances, model.variances)
    assert back.pose_index == model.pose_index
