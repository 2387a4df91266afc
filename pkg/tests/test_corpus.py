"""Corpus data model, file formats, splits and distribution analytics."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subfuse.corpus import (
    BUILTIN_FEATURES,
    FeatureSpec,
    FeatureTable,
    LabelStore,
    SubclassVocabulary,
    VideoRecord,
    cooccurrence_matrix,
    divergence,
    load_annotations,
    load_features,
    load_split,
    load_videos,
    make_split,
    occurrence_rates,
    select_subclasses,
    write_annotations,
    write_features,
    write_split,
    write_videos,
)
from subfuse.errors import ConfigError, DataValidationError, DegenerateLabelsError


def small_table(spec=None, frame_level=False):
    if spec is None:
        level = "frame" if frame_level else "video"
        spec = FeatureSpec("toy", "image", level, 4, "raw")
    if spec.level == "video":
        keys = ("v1", "v2", "v3")
    else:
        keys = (("v1", 0), ("v1", 1), ("v2", 0))
    values = np.arange(12, dtype=float).reshape(3, 4) / 7
    return FeatureTable(spec=spec, keys=keys, values=values)


class TestFeatureFiles:
    def test_write_load_round_trip(self, tmp_path):
        table = small_table()
        path = tmp_path / "toy.tsv"
        write_features(table, path)
        loaded = load_features(path, table.spec)
        assert loaded.keys == table.keys
        np.testing.assert_array_equal(loaded.values, table.values)

    def test_canonical_file_survives_byte_identically(self, tmp_path):
        """write(load(f)) == f for canonically formatted files."""
        table = small_table()
        first = tmp_path / "a.tsv"
        second = tmp_path / "b.tsv"
        write_features(table, first)
        write_features(load_features(first, table.spec), second)
        assert first.read_bytes() == second.read_bytes()

    def test_frame_level_keys(self, tmp_path):
        table = small_table(frame_level=True)
        path = tmp_path / "frames.tsv"
        write_features(table, path)
        loaded = load_features(path, table.spec)
        assert ("v1", 1) in loaded.keys
        assert loaded.frames_of("v1") == (0, 1)

    def test_header_dim_match_accepts(self, tmp_path):
        """A file declaring dim=1024 loads against the g4k_v spec."""
        spec = BUILTIN_FEATURES["g4k_v"]
        path = tmp_path / "g4k.tsv"
        row = " ".join(["0.5"] * spec.dim)
        path.write_text(f"#dim={spec.dim}\nv1\t{row}\n")
        assert len(load_features(path, spec)) == 1

    def test_dimension_mismatch_rejected(self, tmp_path):
        spec = BUILTIN_FEATURES["g4k_v"]
        path = tmp_path / "wrong.tsv"
        path.write_text("#dim=1000\nv1\t" + " ".join(["0.5"] * 1000) + "\n")
        with pytest.raises(DataValidationError, match="dim"):
            load_features(path, spec)

    def test_non_finite_rejected(self, tmp_path):
        spec = FeatureSpec("toy", "image", "video", 2, "raw")
        path = tmp_path / "nan.tsv"
        path.write_text("#dim=2\nv1\t0.5 nan\n")
        with pytest.raises(DataValidationError, match="non-finite"):
            load_features(path, spec)

    def test_duplicate_key_rejected(self, tmp_path):
        spec = FeatureSpec("toy", "image", "video", 1, "raw")
        path = tmp_path / "dup.tsv"
        path.write_text("#dim=1\nv1\t0.5\nv1\t0.25\n")
        with pytest.raises(DataValidationError, match="duplicate"):
            load_features(path, spec)


class TestDomainTypes:
    def test_frame_times_must_increase(self):
        with pytest.raises(DataValidationError):
            VideoRecord(id="v", movie_id="m", split="dev", frame_times=(0.0, 0.0))

    def test_subclasses_imply_violence(self):
        with pytest.raises(DataValidationError):
            LabelStore(violence={"v": False}, subclasses={"v": frozenset({"fight"})})

    def test_vocabulary_names_distinct(self):
        with pytest.raises(DataValidationError):
            SubclassVocabulary(names=("fight", "fight"))

    def test_table_row_dims_checked(self):
        spec = FeatureSpec("toy", "image", "video", 3, "raw")
        with pytest.raises(DataValidationError):
            FeatureTable(spec=spec, keys=("v1",), values=np.zeros((1, 2)))


class TestAnnotationsAndSplitFiles:
    def test_round_trip(self, tmp_path):
        labels = LabelStore(
            violence={"a": True, "b": False, "c": True},
            subclasses={"a": frozenset({"fight", "blood"})},
        )
        path = tmp_path / "annotations.tsv"
        write_annotations(labels, path)
        loaded = load_annotations(path)
        assert loaded.violence == labels.violence
        assert loaded.subclass_set("a") == frozenset({"fight", "blood"})
        assert loaded.subclass_set("c") == frozenset()

    def test_split_file_round_trip(self, tmp_path):
        split = make_split([f"v{i}" for i in range(10)], 0.7, seed=3)
        path = tmp_path / "split.tsv"
        write_split(split, path)
        loaded = load_split(path)
        assert loaded.train_ids == split.train_ids
        assert loaded.val_ids == split.val_ids

    def test_videos_round_trip(self, tmp_path):
        videos = {
            "v1": VideoRecord("v1", "m1", "dev", (0.0, 0.5, 1.0)),
            "v2": VideoRecord("v2", "m1", "test", ()),
        }
        path = tmp_path / "videos.tsv"
        write_videos(videos, path)
        loaded = load_videos(path)
        assert loaded == videos


class TestMakeSplit:
    def test_sizes_and_disjointness(self):
        split = make_split([f"v{i}" for i in range(10)], 0.7, seed=42)
        assert len(split.train_ids) == 7
        assert len(split.val_ids) == 3
        assert not (split.train_ids & split.val_ids)

    def test_deterministic(self):
        ids = [f"clip{i}" for i in range(37)]
        a = make_split(ids, 0.7, seed=9)
        b = make_split(ids, 0.7, seed=9)
        assert a == b

    def test_dev_set_cardinalities(self):
        """6,144 dev clips split 70/30 into 4,301 train and 1,843 val."""
        ids = [f"c{i:05d}" for i in range(6144)]
        split = make_split(ids, 0.7, seed=0)
        assert len(split.train_ids) == 4301
        assert len(split.val_ids) == 1843

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            make_split(["a", "b"], 1.5, seed=0)

    @given(st.integers(0, 1000), st.integers(2, 40))
    def test_pure_function_of_inputs(self, seed, n):
        ids = [f"v{i}" for i in range(n)]
        a = make_split(ids, 0.7, seed)
        b = make_split(list(reversed(ids)), 0.7, seed)
        assert a == b  # input order is irrelevant
        assert a.train_ids | a.val_ids == set(ids)


class TestSelectSubclasses:
    def test_strictly_greater_than_threshold(self):
        vocab = select_subclasses({"a": 21, "b": 20, "c": 100}, threshold=20)
        assert vocab.names == ("c", "a")

    def test_all_zero_counts(self):
        vocab = select_subclasses({"a": 0, "b": 0}, threshold=20)
        assert vocab.names == ()

    def test_realistic_vocabulary_sizes(self):
        """95 candidate concepts thin out to 10 at threshold 20."""
        rng = np.random.default_rng(5)
        counts = {}
        for i in range(95):
            if i < 10:
                counts[f"common{i:02d}"] = int(rng.integers(21, 80))
            else:
                counts[f"rare{i:02d}"] = int(rng.integers(0, 21))
        vocab = select_subclasses(counts, threshold=20)
        assert vocab.size == 10

    def test_tie_order_lexicographic(self):
        vocab = select_subclasses({"z": 30, "a": 30, "m": 40}, threshold=20)
        assert vocab.names == ("m", "a", "z")


def toy_labels():
    vocab = SubclassVocabulary(names=("blood", "death", "fight", "rope", "bind"))
    violence = {}
    subclasses = {}
    # 10 violent videos with known pattern + 10 non-violent
    patterns = [
        {"blood"},
        {"blood", "death"},
        {"fight"},
        {"fight"},
        {"rope", "bind"},
        {"rope", "bind"},
        {"death"},
        {"blood"},
        {"fight", "rope"},
        set(),
    ]
    for i, pat in enumerate(patterns):
        vid = f"viol{i}"
        violence[vid] = True
        if pat:
            subclasses[vid] = frozenset(pat)
    for i in range(10):
        violence[f"calm{i}"] = False
    return vocab, LabelStore(violence=violence, subclasses=subclasses)


class TestOccurrenceRates:
    def test_simple_ratio(self):
        vocab, labels = toy_labels()
        rates = occurrence_rates(labels, vocab, labels.ids())
        assert rates[vocab.index("blood")] == pytest.approx(3 / 10)
        assert rates[vocab.index("fight")] == pytest.approx(3 / 10)

    def test_absent_subclass_rate_zero(self):
        vocab = SubclassVocabulary(names=("blood", "unseen"))
        labels = LabelStore(violence={"v": True}, subclasses={"v": frozenset({"blood"})})
        rates = occurrence_rates(labels, vocab, ["v"])
        assert rates[1] == 0.0

    def test_bounds(self):
        vocab, labels = toy_labels()
        rates = occurrence_rates(labels, vocab, labels.ids())
        assert ((rates >= 0) & (rates <= 1)).all()

    def test_no_violence_videos_rejected(self):
        vocab, labels = toy_labels()
        with pytest.raises(DegenerateLabelsError):
            occurrence_rates(labels, vocab, [f"calm{i}" for i in range(10)])


class TestCooccurrence:
    def reference(self, labels, vocab, ids):
        """Brute-force pairwise intersection over all videos."""
        size = vocab.size
        m = np.zeros((size, size), dtype=np.int64)
        for i, a in enumerate(vocab.names):
            for j, b in enumerate(vocab.names):
                m[i, j] = sum(
                    1
                    for vid in ids
                    if a in labels.subclass_set(vid) and b in labels.subclass_set(vid)
                )
        return m

    def test_single_pair(self):
        vocab = SubclassVocabulary(names=("rope", "bind"))
        labels = LabelStore(violence={"v": True}, subclasses={"v": frozenset({"rope", "bind"})})
        m = cooccurrence_matrix(labels, vocab)
        assert m[0, 1] == m[1, 0] == 1

    def test_never_cooccurring_pair_is_zero(self):
        vocab, labels = toy_labels()
        m = cooccurrence_matrix(labels, vocab)
        assert m[vocab.index("death"), vocab.index("fight")] == 0

    def test_matches_brute_force(self):
        vocab, labels = toy_labels()
        m = cooccurrence_matrix(labels, vocab)
        np.testing.assert_array_equal(m, self.reference(labels, vocab, labels.ids()))

    def test_symmetric_with_dominant_diagonal(self):
        vocab, labels = toy_labels()
        m = cooccurrence_matrix(labels, vocab)
        np.testing.assert_array_equal(m, m.T)
        for i in range(vocab.size):
            assert (m[i, i] >= m[i]).all()


class TestDivergence:
    def test_identical_vectors(self):
        assert divergence([0.1, 0.2], [0.1, 0.2]) == 0.0

    def test_opposite_indicators(self):
        assert divergence([1.0, 0.0], [0.0, 1.0]) == 2.0

    def test_matches_hand_sum(self):
        a = [0.5, 0.25, 0.0]
        b = [0.1, 0.5, 0.2]
        assert divergence(a, b) == pytest.approx(0.4 + 0.25 + 0.2)

    def test_length_mismatch(self):
        with pytest.raises(DataValidationError):
            divergence([0.1], [0.1, 0.2])


class TestBuiltinFeatures:
    def test_fourteen_features(self):
        assert len(BUILTIN_FEATURES) == 14

    def test_published_dims(self):
        dims = {name: spec.dim for name, spec in BUILTIN_FEATURES.items()}
        assert dims["vnet_f"] == 4096
        assert dims["gnet_v"] == 1024
        assert dims["mfcc_b"] == 4096
        assert dims["mfcc_fv"] == 19968
        assert dims["mbh_b"] == 4000
        assert dims["mbh_fv"] == 98304
        assert dims["hog_fv"] == 49152
        assert dims["hof_fv"] == 55296
