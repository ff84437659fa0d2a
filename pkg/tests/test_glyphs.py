import json

import numpy as np
import pytest

from landmarkgan.data import load_image, load_manifest
from landmarkgan.geometry import read_pts
from landmarkgan.glyphs import (GlyphFaceSpec, deformation_modes, face_template,
                                make_glyph_spec, make_synthetic_dataset,
                                render_glyph_face, sample_face_shape)


@pytest.fixture
def spec20():
    return make_glyph_spec(seed=9, n=20, image_size=64)


def centered_points(n=20, size=64, scale=16.0):
    template, _, _ = face_template(n)
    return template * scale + size / 2.0


class TestTemplate:
    @pytest.mark.parametrize("n", [12, 16, 20, 34, 68])
    def test_mirror_symmetric_with_involution(self, n):
        points, perm, _ = face_template(n)
        assert points.shape == (n, 2)
        assert np.array_equal(perm[perm], np.arange(n))
        mirrored = points.copy()
        mirrored[:, 0] = -mirrored[:, 0]
        np.testing.assert_allclose(mirrored[perm], points, atol=1e-12)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            face_template(8)

    def test_modes_orthogonal_to_similarity(self):
        template, _, groups = face_template(20)
        modes, scales = deformation_modes(template, groups)
        assert modes.shape == (4, 40)
        np.testing.assert_allclose(np.linalg.norm(modes, axis=1), 1.0, atol=1e-12)
        centered = template - template.mean(axis=0)
        for direction in (np.tile([1.0, 0.0], 20), np.tile([0.0, 1.0], 20),
                          centered.ravel(),
                          np.column_stack([-centered[:, 1], centered[:, 0]]).ravel()):
            np.testing.assert_allclose(modes @ direction, 0.0, atol=1e-10)

    def test_sampled_shapes_stay_in_frame(self):
        template, _, groups = face_template(20)
        modes, scales = deformation_modes(template, groups)
        rng = np.random.default_rng(0)
        for _ in range(50):
            shape = sample_face_shape(template, modes, scales, 96, rng)
            assert shape.min() > 4.0 and shape.max() < 92.0


class TestRenderer:
    def test_bitwise_deterministic(self, spec20):
        pts = centered_points()
        a = render_glyph_face(spec20, pts)
        b = render_glyph_face(spec20, pts)
        assert np.array_equal(a, b)

    def test_locality_of_single_landmark_change(self, spec20):
        pts = centered_points()
        moved = pts.copy()
        moved[0] += [3.0, 0.0]
        a = render_glyph_face(spec20, pts)
        b = render_glyph_face(spec20, moved)
        diff = np.abs(a - b).sum(axis=2)
        ys, xs = np.nonzero(diff)
        r = spec20.glyph_radius
        cx = np.array([pts[0, 0], moved[0, 0]])
        cy = np.array([pts[0, 1], moved[0, 1]])
        for y, x in zip(ys, xs):
            near = np.hypot(x - cx, y - cy).min()
            assert near <= r + 1e-9

    def test_peak_pixel_equals_spec_color(self):
        spec = make_glyph_spec(seed=1, n=12, image_size=64)
        # integer landmark positions, spread far apart to avoid glyph overlap
        pts = np.array([[8.0 + 14.0 * (i % 4), 8.0 + 14.0 * (i // 4)] for i in range(12)])
        img = render_glyph_face(spec, pts)
        for j, (x, y) in enumerate(pts.astype(int)):
            np.testing.assert_allclose(img[y, x], spec.colors[j], atol=1e-12)

    def test_spec_dict_roundtrip(self, spec20):
        back = GlyphFaceSpec.from_dict(json.loads(json.dumps(spec20.to_dict())))
        assert back == spec20

    def test_values_in_unit_range(self, spec20):
        img = render_glyph_face(spec20, centered_points())
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestSyntheticDataset:
    def test_counts_contract(self, tmp_path):
        manifest = make_synthetic_dataset(tmp_path / "d", identities=10,
                                          shapes_per_identity=30, quota=100,
                                          seed=3, n=12, image_size=48)
        assert len(manifest.records) == 10 * 100
        images = list((tmp_path / "d" / "images").glob("*.png"))
        assert len(images) == 10 * 30

    def test_byte_identical_under_seed(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        for d in (a_dir, b_dir):
            make_synthetic_dataset(d, identities=2, shapes_per_identity=4, quota=3,
                                   seed=21, n=12, image_size=48)
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        assert a_files == b_files
        for rel in a_files:
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_pts_files_roundtrip_and_match_manifest(self, tmp_path):
        out = tmp_path / "d"
        manifest = make_synthetic_dataset(out, identities=2, shapes_per_identity=3,
                                          quota=2, seed=5, n=12, image_size=48)
        for rec in manifest.records:
            pts_path = out / rec.anchor_image.replace(".png", ".pts")
            assert np.array_equal(read_pts(pts_path), rec.anchor_points)

    def test_manifest_loads_and_images_decode(self, tmp_path):
        out = tmp_path / "d"
        make_synthetic_dataset(out, identities=2, shapes_per_identity=3, quota=2,
                               seed=6, n=12, image_size=48)
        manifest = load_manifest(out / "manifest.json")
        img = load_image(manifest.resolve(manifest.records[0].anchor_image))
        assert img.shape == (48, 48, 3)
        assert set(manifest.glyph_specs) == {"id000", "id001"}

    def test_rendered_truth_available_for_any_shape(self, tmp_path):
        out = tmp_path / "d"
        manifest = make_synthetic_dataset(out, identities=1, shapes_per_identity=3,
                                          quota=1, seed=7, n=12, image_size=48)
        spec = GlyphFaceSpec.from_dict(manifest.glyph_specs["id000"])
        novel = manifest.records[0].anchor_points + 2.0
        img = render_glyph_face(spec, novel)
        assert img.shape == (48, 48, 3)
