import numpy as np
import pytest

from maskpipe import mep
from maskpipe.mep import DisjointSet, MepConfig, ccl_label, nms_thin, refine, watershed_flood
from maskpipe.raster import BinaryMask, LabelMap, ProbMap, SemanticMap, ValidationError

from oracles import flood_fill_labels, labelings_equivalent, minimax_watershed, nms_reference


class TestConfig:
    def test_defaults(self):
        cfg = MepConfig()
        assert cfg.boundary_threshold == 0.5
        assert cfg.min_component_area == 16
        assert cfg.closing_radius == 1
        assert cfg.connectivity == 4

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(boundary_threshold=1.5),
            dict(boundary_threshold=-0.1),
            dict(min_component_area=-1),
            dict(closing_radius=-2),
            dict(connectivity=6),
        ],
    )
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ValidationError):
            MepConfig(**kwargs)


class TestDisjointSet:
    def test_find_idempotent_and_union(self):
        ds = DisjointSet(10)
        ds.union(1, 2)
        ds.union(2, 3)
        assert ds.find(1) == ds.find(3)
        assert ds.find(ds.find(3)) == ds.find(3)
        assert ds.find(4) != ds.find(1)

    def test_random_against_set_partition(self):
        rng = np.random.default_rng(5)
        n = 40
        ds = DisjointSet(n)
        groups = {i: {i} for i in range(n)}
        for _ in range(100):
            a, b = int(rng.integers(n)), int(rng.integers(n))
            ds.union(a, b)
            ga = next(g for g in groups.values() if a in g)
            gb = next(g for g in groups.values() if b in g)
            if ga is not gb:
                ga |= gb
                for x in gb:
                    groups[x] = ga
                # keep a representative mapping consistent
                for x in ga:
                    groups[x] = ga
        for a in range(n):
            for b in range(n):
                assert (ds.find(a) == ds.find(b)) == (groups[a] is groups[b])


class TestNms:
    def test_ramp_ridge_keeps_crest_only(self):
        # vertical 3-wide ramp ridge, constant peak 0.9
        p = np.zeros((8, 9), np.float32)
        p[:, 3] = 0.45
        p[:, 4] = 0.9
        p[:, 5] = 0.45
        got = nms_thin(ProbMap(p), 0.5).data
        expect = nms_reference(p.astype(np.float64), 0.5)
        assert np.array_equal(got, expect)
        assert got[:, 4].all()
        assert got.sum() == 8

    def test_all_zero_is_empty(self):
        got = nms_thin(ProbMap(np.zeros((5, 5), np.float32)), 0.5)
        assert not got.data.any()

    def test_uniform_plateau_all_retained(self):
        got = nms_thin(ProbMap(np.full((4, 6), 0.9, np.float32)), 0.5)
        assert got.data.all()

    def test_subset_of_thresholded_set(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = rng.random((12, 12)).astype(np.float32)
            t = float(rng.uniform(0.1, 0.9))
            got = nms_thin(ProbMap(p), t).data
            assert not (got & (p < t)).any()

    def test_horizontal_ridge(self):
        p = np.zeros((9, 8), np.float32)
        p[3, :] = 0.4
        p[4, :] = 0.8
        p[5, :] = 0.4
        got = nms_thin(ProbMap(p), 0.5).data
        assert got[4, :].all() and got.sum() == 8


class TestCcl:
    def test_two_regions_split_by_unset_row(self):
        m = np.ones((5, 4), bool)
        m[2, :] = False
        labels = ccl_label(BinaryMask(m), 4).data
        assert set(np.unique(labels)) == {0, 1, 2}
        assert (labels[:2] == 1).all() and (labels[3:] == 2).all()

    def test_diagonal_chain_connectivity(self):
        m = np.eye(5, dtype=bool)
        assert ccl_label(BinaryMask(m), 4).num_labels == 5
        assert ccl_label(BinaryMask(m), 8).num_labels == 1

    def test_labels_dense_raster_order(self):
        m = np.array([[0, 1, 0, 1], [0, 1, 0, 1], [1, 0, 0, 1]], bool)
        labels = ccl_label(BinaryMask(m), 4).data
        assert labels[0, 1] == 1 and labels[0, 3] == 2 and labels[2, 0] == 3

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_oracle_equivalence_random(self, connectivity):
        rng = np.random.default_rng(17)
        for _ in range(100):
            m = rng.random((32, 32)) < rng.uniform(0.3, 0.7)
            got = ccl_label(BinaryMask(m), connectivity).data
            expect = flood_fill_labels(m, connectivity)
            assert labelings_equivalent(got, expect)
            # dense renumbering in raster order means exact equality too
            assert np.array_equal(got, expect)


class TestWatershed:
    def test_ridge_splits_plain(self):
        cost = np.zeros((6, 7), np.float32)
        cost[:, 3] = 0.9
        markers = np.zeros((6, 7), np.int32)
        markers[3, 0] = 1
        markers[3, 6] = 2
        out = watershed_flood(ProbMap(cost), LabelMap(markers)).data
        expect, ties = minimax_watershed(cost.astype(np.float64), markers)
        free = ~ties & (markers == 0)
        assert np.array_equal(out[free], expect[free])
        assert (out[:, :3] == 1).all() and (out[:, 4:] == 2).all()
        assert (out > 0).all()

    def test_zero_markers_all_zero(self):
        out = watershed_flood(
            ProbMap(np.random.default_rng(0).random((4, 4)).astype(np.float32)),
            LabelMap(np.zeros((4, 4), np.int32)),
        )
        assert not out.data.any()

    def test_single_marker_floods_everything(self):
        rng = np.random.default_rng(3)
        cost = rng.random((6, 6)).astype(np.float32)
        markers = np.zeros((6, 6), np.int32)
        markers[2, 2] = 1
        out = watershed_flood(ProbMap(cost), LabelMap(markers)).data
        assert (out == 1).all()

    def test_marker_preservation(self):
        rng = np.random.default_rng(9)
        cost = rng.random((8, 8)).astype(np.float32)
        markers = np.zeros((8, 8), np.int32)
        markers[1, 1] = 1
        markers[6, 6] = 2
        markers[1, 6] = 3
        out = watershed_flood(ProbMap(cost), LabelMap(markers)).data
        pos = markers > 0
        assert np.array_equal(out[pos], markers[pos])

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            watershed_flood(
                ProbMap(np.zeros((3, 3), np.float32)),
                LabelMap(np.zeros((3, 4), np.int32)),
            )

    def test_minimax_oracle_random(self):
        rng = np.random.default_rng(21)
        for _ in range(40):
            h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            cost = (rng.integers(0, 5, size=(h, w)) / 4.0).astype(np.float32)
            markers = np.zeros((h, w), np.int32)
            for lab in range(1, int(rng.integers(1, 4)) + 1):
                markers[rng.integers(h), rng.integers(w)] = lab
            out = watershed_flood(ProbMap(cost), LabelMap(markers)).data
            expect, ties = minimax_watershed(cost.astype(np.float64), markers)
            free = ~ties & (markers == 0)
            assert np.array_equal(out[free], expect[free])

    def test_tie_pixels_deterministic(self):
        rng = np.random.default_rng(33)
        cost = np.zeros((5, 5), np.float32)
        markers = np.zeros((5, 5), np.int32)
        markers[2, 0] = 1
        markers[2, 4] = 2
        first = watershed_flood(ProbMap(cost), LabelMap(markers)).data
        for _ in range(5):
            again = watershed_flood(ProbMap(cost), LabelMap(markers)).data
            assert np.array_equal(first, again)


class TestRefine:
    def semantic_fg(self, shape, cls=1):
        return SemanticMap(np.full(shape, cls, np.int32))

    def test_closing_fills_interior_hole(self):
        m = np.zeros((7, 7), np.int32)
        m[1:6, 1:6] = 1
        m[3, 3] = 0
        cfg = MepConfig(closing_radius=1, min_component_area=0)
        out = refine(LabelMap(m), self.semantic_fg((7, 7)), cfg)
        assert out.data[3, 3] == 1

    def test_semantic_filter_clears_background_half(self):
        m = np.zeros((4, 6), np.int32)
        m[:, 1:5] = 1
        sem = np.zeros((4, 6), np.int32)
        sem[:, :3] = 1
        cfg = MepConfig(closing_radius=0, min_component_area=0)
        out = refine(LabelMap(m), SemanticMap(sem), cfg)
        assert (out.data[:, 1:3] == 1).all()
        assert not out.data[:, 3:].any()

    def test_small_instance_deleted(self):
        m = np.zeros((6, 6), np.int32)
        m[0, 0:3] = 1
        cfg = MepConfig(closing_radius=0, min_component_area=16)
        out = refine(LabelMap(m), self.semantic_fg((6, 6)), cfg)
        assert not out.data.any()

    def test_lowest_label_wins_conflicts(self):
        # ring (label 1) around a single pixel of label 2; closing the ring
        # fills its hole and claims label 2's only pixel
        m = np.zeros((7, 7), np.int32)
        m[2:5, 2:5] = 1
        m[3, 3] = 2
        cfg = MepConfig(closing_radius=1, min_component_area=0)
        out = refine(LabelMap(m), self.semantic_fg((7, 7)), cfg)
        assert out.data[3, 3] == 1
        assert 2 not in np.unique(out.data)

    def test_labels_dense_after_refine(self):
        m = np.zeros((6, 6), np.int32)
        m[0:3, 0:3] = 1
        m[4:6, 4:6] = 3  # gap in labels on purpose
        cfg = MepConfig(closing_radius=0, min_component_area=1)
        out = refine(LabelMap(m), self.semantic_fg((6, 6)), cfg)
        assert set(np.unique(out.data)) == {0, 1, 2}


class TestExtractMasks:
    def test_two_squares_scene(self):
        from maskpipe import synth

        spec = synth.SceneSpec(
            height=96, width=96, min_instances=2, max_instances=2,
            shapes=("rectangle",), blur_sigma=0.0, noise_sigma=0.0,
            min_radius_frac=0.15, max_radius_frac=0.25,
        )
        scene = synth.generate_scene(4, spec)
        out = mep.extract_masks(scene.boundary, scene.semantic, MepConfig())
        assert out.num_labels == 2
        from maskpipe.metrics import iou

        for gt in scene.instances.instances:
            best = max(
                iou(gt.mask, BinaryMask(out.data == lab))
                for lab in range(1, out.num_labels + 1)
            )
            assert best > 0.9  # up to the 1-px contour band

    def test_all_zero_boundary_all_background_semantic(self):
        b = ProbMap(np.zeros((20, 20), np.float32))
        s = SemanticMap(np.zeros((20, 20), np.int32))
        out = mep.extract_masks(b, s, MepConfig())
        assert out.num_labels == 0

    def test_all_zero_boundary_one_semantic_blob(self):
        b = ProbMap(np.zeros((20, 20), np.float32))
        sem = np.zeros((20, 20), np.int32)
        sem[5:15, 5:15] = 1
        out = mep.extract_masks(b, SemanticMap(sem), MepConfig())
        assert out.num_labels == 1
        assert np.array_equal(out.data > 0, sem > 0)

    def test_determinism(self):
        from maskpipe import synth

        scene = synth.generate_scene(8, synth.SceneSpec(height=64, width=64))
        a = mep.extract_masks(scene.boundary, scene.semantic, MepConfig())
        b = mep.extract_masks(scene.boundary, scene.semantic, MepConfig())
        assert np.array_equal(a.data, b.data)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            mep.extract_masks(
                ProbMap(np.zeros((4, 4), np.float32)),
                SemanticMap(np.zeros((5, 4), np.int32)),
                MepConfig(),
            )
