"""Scene generator contracts and dataset file round-trips."""

import json

import numpy as np
import pytest

from panact.geometry import proximity_matrix, tgiou, validate_boxes
from panact.relation import roi_align
from panact.synthdata import (
    DatasetError,
    SceneSpec,
    distractor_spec,
    generate_dataset,
    generate_scene,
    individual_fill,
    make_distractor_suite,
    read_dataset,
    write_dataset,
)


class TestGenerateScene:
    def test_same_seed_bitwise_identical(self):
        spec = SceneSpec(seed=11, n_individuals=6, n_groups=2, noise=0.3)
        a = generate_scene(spec)
        b = generate_scene(spec)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.boxes, b.boxes)
        assert np.array_equal(a.groups.labels, b.groups.labels)
        assert np.array_equal(a.labels_individual, b.labels_individual)

    def test_noise_does_not_move_boxes(self):
        quiet = generate_scene(SceneSpec(seed=5, noise=0.0))
        loud = generate_scene(SceneSpec(seed=5, noise=0.5))
        assert np.array_equal(quiet.boxes, loud.boxes)
        assert np.array_equal(quiet.groups.labels, loud.groups.labels)

    def test_boxes_valid_and_partition_complete(self):
        for seed in range(20):
            sample = generate_scene(SceneSpec(seed=seed, n_individuals=8, n_groups=3,
                                              distractors=1))
            validate_boxes(sample.boxes)
            labels = sample.groups.labels
            assert labels.shape == (8,)
            assert set(labels.tolist()) == set(range(1, sample.groups.n_groups + 1))

    def test_labels_have_positives_everywhere(self):
        for seed in range(10):
            s = generate_scene(SceneSpec(seed=seed, n_individuals=7, n_groups=3))
            assert np.all(s.labels_individual.sum(axis=1) >= 1)
            assert np.all(s.labels_individual.sum(axis=1) <= 3)
            assert np.all(s.labels_group.sum(axis=1) >= 1)
            assert s.labels_global.sum() >= 1

    def test_gt_relation_is_equivalence(self):
        s = generate_scene(SceneSpec(seed=2, n_individuals=6, n_groups=2))
        rel = s.gt_relation()
        assert np.array_equal(rel, rel.T)
        assert np.array_equal(np.diag(rel), np.ones(6))
        # Transitivity: relation = block structure of a partition.
        n = rel.shape[0]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if rel[i, j] and rel[j, k]:
                        assert rel[i, k]

    def test_noiseless_cropped_features_equal_prototype(self):
        spec = SceneSpec(seed=7, n_individuals=2, n_groups=1, noise=0.0, feat_dim=16)
        s = generate_scene(spec)
        for i in range(2):
            role = 0 if i == 0 else 1  # one leader, one member, archetype unknown
            pooled = s.features[i].astype(np.float64).mean(axis=(0, 2, 3))
            candidates = [individual_fill(a, 2 * a + r, 16)
                          for a in range(4) for r in (0, 1)]
            best = min(np.max(np.abs(pooled - c)) for c in candidates)
            assert best < 1e-6  # float32 storage, exact up to cast

    def test_noiseless_grid_crop_equals_prototype(self):
        spec = SceneSpec(seed=9, n_individuals=2, n_groups=1, noise=0.0,
                         feat_dim=16, flavor="grid")
        s = generate_scene(spec)
        crops = roi_align(s.features.astype(np.float64), s.boxes, 2, 2)
        for i in range(2):
            per_channel = crops[i].transpose(1, 0, 2, 3).reshape(crops[i].shape[1], -1)
            spread = np.max(np.abs(per_channel - per_channel[:, :1]))
            assert spread < 1e-6  # constant across frames and bins: pure prototype

    def test_rendering_cosine_invariant(self):
        # Grid rendering keeps each crop aligned with its prototype at the
        # reference noise level.
        for seed in range(15):
            spec = SceneSpec(seed=seed, n_individuals=6, n_groups=2, noise=0.1,
                             feat_dim=32, flavor="grid")
            generate_scene(spec)  # raises if any cosine drops to 0.9

    def test_overcrowded_scene_rejected(self):
        with pytest.raises(DatasetError, match="overcrowded"):
            generate_scene(SceneSpec(seed=0, n_individuals=12, n_groups=4,
                                     box_width=(0.3, 0.4)))

    def test_bad_group_counts_rejected(self):
        with pytest.raises(DatasetError):
            generate_scene(SceneSpec(n_individuals=3, n_groups=4))
        with pytest.raises(DatasetError):
            generate_scene(SceneSpec(n_individuals=4, n_groups=2, distractors=2))

    def test_unknown_flavor_rejected(self):
        with pytest.raises(DatasetError):
            generate_scene(SceneSpec(flavor="video"))


class TestDistractorFamily:
    def test_distractor_tgiou_below_group_pairs(self):
        for seed in range(20):
            s = generate_scene(distractor_spec(seed, noise=0.0))
            labels = s.groups.labels
            # The distractor is the only singleton group.
            sizes = {g: np.sum(labels == g) for g in range(1, s.groups.n_groups + 1)}
            singleton = [g for g, c in sizes.items() if c == 1]
            assert len(singleton) == 1
            d = int(np.flatnonzero(labels == singleton[0])[0])
            mat = proximity_matrix(s.boxes, "tgiou")
            within = []
            to_distractor = []
            for g, c in sizes.items():
                if c < 2:
                    continue
                members = np.flatnonzero(labels == g)
                for i in members:
                    to_distractor.append(mat[d, i])
                    for j in members:
                        if i < j:
                            within.append(mat[i, j])
            assert max(to_distractor) < min(within)

    def test_frame0_giou_confusable(self):
        # At frame 0 the distractor overlaps a member more than some members
        # overlap each other: spatial-only proximity cannot separate it.
        confused = 0
        for seed in range(20):
            s = generate_scene(distractor_spec(seed, noise=0.0))
            labels = s.groups.labels
            sizes = {g: np.sum(labels == g) for g in range(1, s.groups.n_groups + 1)}
            singleton = [g for g, c in sizes.items() if c == 1][0]
            d = int(np.flatnonzero(labels == singleton)[0])
            mat0 = proximity_matrix(s.boxes, "giou_s")
            within = [mat0[i, j]
                      for g, c in sizes.items() if c >= 2
                      for i in np.flatnonzero(labels == g)
                      for j in np.flatnonzero(labels == g) if i < j]
            if np.max(np.delete(mat0[d], d)) > min(within):
                confused += 1
        assert confused == 20

    def test_suite_determinism(self):
        a = make_distractor_suite(3, noise=0.1, base_seed=0)
        b = make_distractor_suite(3, noise=0.1, base_seed=0)
        for x, y in zip(a, b):
            assert np.array_equal(x.boxes, y.boxes)
            assert np.array_equal(x.features, y.features)


class TestDatasetFiles:
    def _roundtrip(self, tmp_path, samples, spec=None):
        path = tmp_path / "data.jsonl"
        write_dataset(samples, path, spec=spec)
        return read_dataset(path)

    def test_bit_exact_roundtrip(self, tmp_path):
        spec = SceneSpec(seed=1, n_individuals=5, n_groups=2, feat_dim=8)
        samples = generate_dataset(spec, 3)
        loaded, manifest = self._roundtrip(tmp_path, samples, spec)
        assert manifest["count"] == 3
        assert manifest["spec"]["n_individuals"] == 5
        for a, b in zip(samples, loaded):
            assert np.array_equal(a.features, b.features)
            assert a.features.dtype == b.features.dtype == np.float32
            assert np.array_equal(a.boxes, b.boxes)
            assert np.array_equal(a.groups.labels, b.groups.labels)
            assert np.array_equal(a.labels_individual, b.labels_individual)
            assert np.array_equal(a.labels_group, b.labels_group)
            assert np.array_equal(a.labels_global, b.labels_global)

    def test_grid_flavor_roundtrip(self, tmp_path):
        spec = SceneSpec(seed=2, n_individuals=4, n_groups=2, feat_dim=8,
                         flavor="grid", noise=0.05)
        samples = generate_dataset(spec, 2)
        loaded, _ = self._roundtrip(tmp_path, samples, spec)
        assert loaded[0].flavor == "grid"
        assert np.array_equal(samples[0].features, loaded[0].features)

    def test_empty_dataset(self, tmp_path):
        loaded, manifest = self._roundtrip(tmp_path, [])
        assert loaded == [] and manifest["count"] == 0

    def test_truncated_blob_names_sample(self, tmp_path):
        samples = generate_dataset(SceneSpec(seed=3, feat_dim=8), 3)
        path = tmp_path / "data.jsonl"
        write_dataset(samples, path)
        blob = (tmp_path / "data.blob")
        blob.write_bytes(blob.read_bytes()[:-40])
        with pytest.raises(DatasetError, match="bytes"):
            read_dataset(path)
        # A record pointing past the shortened blob is named by index.
        try:
            read_dataset(path)
        except DatasetError as exc:
            assert "blob" in str(exc) or "sample" in str(exc)

    def test_record_overrun_names_index(self, tmp_path):
        samples = generate_dataset(SceneSpec(seed=4, feat_dim=8), 2)
        path = tmp_path / "data.jsonl"
        write_dataset(samples, path)
        lines = path.read_text().splitlines()
        manifest = json.loads(lines[0])
        rec = json.loads(lines[2])
        rec["offset"] += 16  # slide past the end of the blob
        path.write_text("\n".join([lines[0], lines[1], json.dumps(rec)]) + "\n")
        with pytest.raises(DatasetError, match="sample 1"):
            read_dataset(path)

    def test_corrupt_manifest_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text("{not json\n")
        (tmp_path / "data.blob").write_bytes(b"")
        with pytest.raises(DatasetError, match="manifest"):
            read_dataset(path)

    def test_missing_blob_rejected(self, tmp_path):
        samples = generate_dataset(SceneSpec(seed=5, feat_dim=8), 1)
        path = tmp_path / "data.jsonl"
        write_dataset(samples, path)
        (tmp_path / "data.blob").unlink()
        with pytest.raises(DatasetError, match="blob"):
            read_dataset(path)

    def test_mixed_flavors_rejected(self, tmp_path):
        a = generate_scene(SceneSpec(seed=1, feat_dim=8))
        b = generate_scene(SceneSpec(seed=2, feat_dim=8, n_individuals=4,
                                     n_groups=2, flavor="grid", noise=0.05))
        with pytest.raises(DatasetError, match="flavor"):
            write_dataset([a, b], tmp_path / "data.jsonl")

    def test_split_streams_disjoint(self):
        spec = SceneSpec(seed=9, feat_dim=8)
        train = generate_dataset(spec, 2, split_key=0)
        val = generate_dataset(spec, 2, split_key=1)
        assert not np.array_equal(train[0].boxes, val[0].boxes)
