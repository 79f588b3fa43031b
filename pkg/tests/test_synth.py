import numpy as np
import pytest
from scipy import ndimage

from maskpipe.synth import (
    GenerationError,
    SceneSpec,
    generate_scene,
    scene_seed,
    write_scene,
)


SMALL = SceneSpec(height=64, width=64, min_instances=2, max_instances=3,
                  min_separation=4)


class TestSceneSpec:
    def test_defaults_valid(self):
        SceneSpec()

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            SceneSpec(height=0)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            SceneSpec(min_instances=5, max_instances=2)

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            SceneSpec(shapes=("triangle",))


class TestGenerateScene:
    def test_deterministic_bitwise(self):
        a = generate_scene(scene_seed(7, 0), SMALL)
        b = generate_scene(scene_seed(7, 0), SMALL)
        assert a.boundary.data.tobytes() == b.boundary.data.tobytes()
        assert np.array_equal(a.semantic.data, b.semantic.data)
        assert np.array_equal(a.labels.data, b.labels.data)
        assert len(a.instances) == len(b.instances)
        for x, y in zip(a.instances.instances, b.instances.instances):
            assert np.array_equal(x.mask.data, y.mask.data)
            assert x.class_id == y.class_id

    def test_different_seeds_differ(self):
        a = generate_scene(scene_seed(7, 0), SMALL)
        b = generate_scene(scene_seed(7, 1), SMALL)
        assert not np.array_equal(a.labels.data, b.labels.data)

    def test_instance_count_in_range(self):
        for i in range(10):
            s = generate_scene(scene_seed(11, i), SMALL)
            assert SMALL.min_instances <= len(s.instances) <= SMALL.max_instances

    def test_masks_disjoint_and_separated(self):
        spec = SMALL
        sep = np.ones((2 * spec.min_separation + 1,) * 2, bool)
        for i in range(5):
            s = generate_scene(scene_seed(3, i), spec)
            masks = [inst.mask.data for inst in s.instances.instances]
            for j, m in enumerate(masks):
                grown = ndimage.binary_dilation(m, structure=sep)
                for k, other in enumerate(masks):
                    if j != k:
                        assert not (grown & other).any()

    def test_labels_match_instances(self):
        s = generate_scene(scene_seed(5, 2), SMALL)
        for lab, inst in enumerate(s.instances.instances, start=1):
            assert np.array_equal(s.labels.data == lab, inst.mask.data)
        union = s.labels.data > 0
        assert np.array_equal(union, s.semantic.data > 0)

    def test_semantic_classes_in_range(self):
        s = generate_scene(scene_seed(5, 3), SMALL)
        for inst in s.instances.instances:
            assert 1 <= inst.class_id <= SMALL.num_classes
            cls = s.semantic.data[inst.mask.data]
            assert (cls == inst.class_id).all()

    def test_unblurred_boundary_is_exact_contour(self):
        spec = SceneSpec(height=64, width=64, min_instances=2, max_instances=2,
                         min_separation=4, blur_sigma=0.0, noise_sigma=0.0)
        s = generate_scene(scene_seed(9, 0), spec)
        cross = ndimage.generate_binary_structure(2, 1)
        contour = np.zeros((64, 64), bool)
        for inst in s.instances.instances:
            m = inst.mask.data
            contour |= m & ~ndimage.binary_erosion(m, structure=cross, border_value=0)
        assert np.array_equal(s.boundary.data > 0, contour)
        assert set(np.unique(s.boundary.data)) <= {0.0, 1.0}

    def test_blurred_peak_normalized(self):
        s = generate_scene(scene_seed(9, 1), SMALL)
        assert s.boundary.data.max() == pytest.approx(1.0, abs=1e-6)
        assert s.boundary.data.min() >= 0.0

    def test_noise_changes_map_but_stays_in_range(self):
        clean_spec = SMALL
        noisy_spec = SceneSpec(height=64, width=64, min_instances=2,
                               max_instances=3, min_separation=4,
                               noise_sigma=0.05)
        clean = generate_scene(scene_seed(21, 0), clean_spec)
        noisy = generate_scene(scene_seed(21, 0), noisy_spec)
        assert np.array_equal(clean.labels.data, noisy.labels.data)
        assert not np.array_equal(clean.boundary.data, noisy.boundary.data)
        assert noisy.boundary.data.min() >= 0.0
        assert noisy.boundary.data.max() <= 1.0

    def test_infeasible_spec_raises(self):
        spec = SceneSpec(height=32, width=32, min_instances=30, max_instances=30,
                         min_separation=8, max_attempts=50)
        with pytest.raises(GenerationError):
            generate_scene(scene_seed(1, 0), spec)


class TestWriteScene:
    def test_files_written_and_rereadable(self, tmp_path):
        from maskpipe.fusion import read_instance_set
        from maskpipe.raster import read_float_raster, read_semantic_png

        s = generate_scene(scene_seed(2, 0), SMALL, image_id="sc0")
        write_scene(s, tmp_path)
        b = read_float_raster(tmp_path / "sc0_boundary.bfr")
        assert b.data.tobytes() == s.boundary.data.tobytes()
        sem = read_semantic_png(tmp_path / "sc0_semantic.png")
        assert np.array_equal(sem.data, s.semantic.data)
        gt = read_instance_set(tmp_path, "sc0")
        assert len(gt) == len(s.instances)

    def test_rerun_byte_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        for d in (d1, d2):
            s = generate_scene(scene_seed(4, 1), SMALL, image_id="x")
            write_scene(s, d)
        for name in ("x_boundary.bfr", "x_semantic.png", "x.png", "x.csv"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
