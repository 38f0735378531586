"""Synthetic compositional dataset: spec validation, blueprint, samples."""

import numpy as np
import pytest

from cfa import ConfigError, SyntheticSpec, generate, read_tensor
from cfa.synthetic import DEFAULT_SIGMA_A, blueprint, synthesize_sample


def tiny_spec(**overrides):
    base = dict(classes=5, samples_per_class=4, channels=8, n_true=2,
                height=2, width=2, attribute_vocab=4, sigma_a=0.5,
                novel_classes=1, val_classes=1, rng_seed=7)
    base.update(overrides)
    return SyntheticSpec(**base)


class TestSyntheticSpec:
    def test_defaults_describe_the_stock_benchmark(self):
        spec = SyntheticSpec()
        assert spec.classes == 20
        assert spec.samples_per_class == 40
        assert spec.channels == 32
        assert spec.n_true == 4
        assert (spec.height, spec.width) == (4, 4)
        assert spec.attribute_vocab == 8
        assert spec.sigma_a == DEFAULT_SIGMA_A
        assert spec.location_shuffle is True
        assert spec.novel_classes == 7
        assert spec.val_classes == 0
        assert spec.base_classes == 13
        assert spec.group_dim == 8

    def test_classes_split_in_id_order(self):
        spec = tiny_spec(classes=7, novel_classes=2, val_classes=2)
        splits = [spec.split_of(c) for c in range(7)]
        assert splits == ["base", "base", "base",
                          "validation", "validation",
                          "novel", "novel"]

    @pytest.mark.parametrize("bad", [
        dict(channels=9),                       # n_true must divide channels
        dict(attribute_vocab=1),
        dict(sigma_a=0.0),
        dict(sigma_a=-1.0),
        dict(classes=3, novel_classes=2, val_classes=1),  # no base left
        dict(classes=0),
        dict(height=0),
        dict(classes=17, attribute_vocab=2, n_true=2,
             novel_classes=1, val_classes=1),   # 17 > 2^2 distinct tuples
    ])
    def test_invalid_specs_are_rejected(self, bad):
        with pytest.raises(ConfigError):
            tiny_spec(**bad)

    @pytest.mark.parametrize("tuples", [
        ((0, 1),),                    # wrong count
        ((0, 1, 2),) * 5,             # wrong arity
        ((0, 9),) + ((0, 1),) * 4,    # attribute id out of range
    ])
    def test_malformed_tuple_overrides_are_rejected(self, tuples):
        with pytest.raises(ConfigError):
            tiny_spec(class_tuples=tuples)

    def test_duplicate_tuple_overrides_are_allowed(self):
        # Deliberately degenerate datasets (classes sharing all attributes)
        # are constructible through the override.
        spec = tiny_spec(classes=2, novel_classes=0, val_classes=0,
                         class_tuples=((0, 1), (0, 1)))
        _, tuples = blueprint(spec)
        assert tuples == [(0, 1), (0, 1)]


class TestBlueprint:
    def test_table_shape_and_determinism(self):
        spec = tiny_spec()
        table_a, tuples_a = blueprint(spec)
        table_b, tuples_b = blueprint(spec)
        assert table_a.shape == (2, 4, 4)
        np.testing.assert_array_equal(table_a, table_b)
        assert tuples_a == tuples_b

    def test_different_seeds_give_different_tables(self):
        table_a, _ = blueprint(tiny_spec(rng_seed=0))
        table_b, _ = blueprint(tiny_spec(rng_seed=1))
        assert np.any(table_a != table_b)

    def test_auto_tuples_are_distinct_and_in_range(self):
        spec = SyntheticSpec()
        _, tuples = blueprint(spec)
        assert len(tuples) == spec.classes
        assert len(set(tuples)) == spec.classes
        for t in tuples:
            assert len(t) == spec.n_true
            assert all(0 <= a < spec.attribute_vocab for a in t)

    def test_leading_classes_cover_every_attribute_in_every_group(self):
        spec = SyntheticSpec()  # 20 classes over vocabulary 8
        _, tuples = blueprint(spec)
        head = tuples[:spec.attribute_vocab]
        for g in range(spec.n_true):
            assert {t[g] for t in head} == set(range(spec.attribute_vocab))


class TestSynthesizeSample:
    def test_shape_and_dtype(self):
        spec = tiny_spec()
        table, tuples = blueprint(spec)
        sample = synthesize_sample(spec, table, tuples[0], np.random.default_rng(0))
        assert sample.shape == (8, 2, 2)
        assert sample.dtype == np.float64

    def test_sampling_is_deterministic_in_the_generator(self):
        spec = tiny_spec()
        table, tuples = blueprint(spec)
        a = synthesize_sample(spec, table, tuples[1], np.random.default_rng(3))
        b = synthesize_sample(spec, table, tuples[1], np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_locations_carry_their_group_attribute(self):
        # Without shuffling, location i belongs to group i mod n_true: its
        # group channels hold the attribute vector and the remaining
        # channels hold only noise.
        spec = tiny_spec(sigma_a=1e-9, location_shuffle=False)
        table, tuples = blueprint(spec)
        t = tuples[2]
        flat = synthesize_sample(spec, table, t,
                                 np.random.default_rng(5)).reshape(8, 4)
        d = spec.group_dim
        for i in range(4):
            g = i % spec.n_true
            np.testing.assert_allclose(flat[g * d:(g + 1) * d, i],
                                       table[g, t[g]], atol=1e-7)
            other = 1 - g
            np.testing.assert_allclose(flat[other * d:(other + 1) * d, i],
                                       np.zeros(d), atol=1e-7)

    def test_shuffle_only_permutes_locations(self):
        # The permutation is drawn either way, so the same generator seed
        # yields the same noisy columns, shuffled or not.
        spec_plain = tiny_spec(location_shuffle=False)
        spec_shuffled = tiny_spec(location_shuffle=True)
        table, tuples = blueprint(spec_plain)
        plain = synthesize_sample(spec_plain, table, tuples[0],
                                  np.random.default_rng(9)).reshape(8, 4)
        mixed = synthesize_sample(spec_shuffled, table, tuples[0],
                                  np.random.default_rng(9)).reshape(8, 4)
        plain_cols = sorted(map(tuple, plain.T))
        mixed_cols = sorted(map(tuple, mixed.T))
        assert plain_cols == mixed_cols
        assert np.any(plain != mixed)  # the draw at this seed is not identity


class TestGenerate:
    def test_layout_counts_and_splits(self, tmp_path):
        spec = tiny_spec()
        manifest = generate(spec, tmp_path / "data")
        assert len(manifest.records) == spec.classes * spec.samples_per_class
        assert manifest.channels == spec.channels
        for rec in manifest.records:
            assert rec.path.exists()
            assert rec.split == spec.split_of(rec.class_id)
        by_split = {s: len(manifest.split_records(s))
                    for s in ("base", "validation", "novel")}
        assert by_split == {"base": 12, "validation": 4, "novel": 4}

    def test_manifest_file_is_self_describing(self, tmp_path):
        spec = tiny_spec()
        generate(spec, tmp_path / "data")
        lines = (tmp_path / "data" / "manifest.csv").read_text().splitlines()
        assert lines[0] == "path,class_id,split"
        assert lines[1].startswith("tensors/class_000/sample_000.cfat,0,base")
        assert len(lines) == 1 + spec.classes * spec.samples_per_class

    def test_generation_is_bitwise_reproducible(self, tmp_path):
        spec = tiny_spec()
        m1 = generate(spec, tmp_path / "one")
        m2 = generate(spec, tmp_path / "two")
        probe = spec.samples_per_class + 1  # second sample of class 1
        assert m1.records[probe].path.read_bytes() == \
            m2.records[probe].path.read_bytes()

    def test_stored_tensors_round_trip_through_the_reader(self, tmp_path):
        spec = tiny_spec()
        manifest = generate(spec, tmp_path / "data")
        tensor = read_tensor(manifest.records[0].path)
        assert tensor.shape == (spec.channels, spec.height, spec.width)
        assert np.all(np.isfinite(tensor))

    def test_samples_within_a_class_differ(self, tmp_path):
        spec = tiny_spec()
        manifest = generate(spec, tmp_path / "data")
        first = read_tensor(manifest.records[0].path)
        second = read_tensor(manifest.records[1].path)
        assert manifest.records[0].class_id == manifest.records[1].class_id
        assert np.any(first != second)

    def test_vanishing_noise_collapses_a_class_to_one_point(self, separable_dataset):
        _, manifest = separable_dataset
        by_class = manifest.classes_in_split("base")
        records = next(iter(by_class.values()))
        baseline = read_tensor(records[0].path)
        for rec in records[1:]:
            np.testing.assert_array_equal(read_tensor(rec.path), baseline)
