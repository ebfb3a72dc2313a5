"""Feature store: binary round trips, corruption handling, synthetic data."""
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from capfew.errors import ConfigError, CorruptionError, FormatError
from capfew.store import (
    FeatureRecord,
    SyntheticSpec,
    gen_synthetic,
    read_store,
    write_store,
)


def make_record(video_id="vid-0", class_id=0, t=2, s=1, c=2, seed=0):
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return FeatureRecord(
        video_id=video_id,
        class_id=class_id,
        visual=g.normal(size=(t, s, c)).astype(np.float32).astype(np.float64),
        text=g.normal(size=(t, c)).astype(np.float32).astype(np.float64),
        captions=[f"caption {i}" for i in range(t)],
    )


def assert_records_equal(a, b):
    assert a.video_id == b.video_id
    assert a.class_id == b.class_id
    assert a.captions == b.captions
    np.testing.assert_array_equal(a.visual, b.visual)
    np.testing.assert_array_equal(a.text, b.text)


class TestRoundTrip:
    def test_write_then_read(self, tmp_path):
        recs = [make_record(f"v{i}", class_id=i % 2, seed=i) for i in range(4)]
        path = tmp_path / "x.capf"
        write_store(recs, path)
        out, header = read_store(path)
        assert header.record_count == 4 and header.class_count == 2
        assert (header.T, header.S, header.C) == (2, 1, 2)
        assert not header.synthetic
        for a, b in zip(recs, out):
            assert_records_equal(a, b)

    def test_synthetic_flag_round_trips(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record()], path, synthetic=True)
        _, header = read_store(path)
        assert header.synthetic

    def test_byte_count_matches_layout(self, tmp_path):
        rec = make_record(video_id="ab", t=2, s=1, c=2)
        path = tmp_path / "x.capf"
        n = write_store([rec], path)
        expect = (
            4 + 7 * 4  # magic + 7 header ints
            + 4 + len(b"ab") + 4  # id + class_id
            + sum(4 + len(cap.encode()) for cap in rec.captions)
            + 4 * (2 * 1 * 2)  # visual
            + 4 * (2 * 2)  # text
        )
        assert n == expect == path.stat().st_size

    @settings(max_examples=25, deadline=None)
    @given(
        t=st.integers(1, 8),
        s=st.integers(1, 9),
        c=st.integers(2, 16),
        n=st.integers(1, 5),
        seed=st.integers(0, 2**16),
    )
    def test_round_trip_property(self, tmp_path_factory, t, s, c, n, seed):
        recs = [
            make_record(f"v{i}", class_id=i % 2 if n > 1 else 0, t=t, s=s, c=c, seed=seed + i)
            for i in range(n)
        ]
        path = tmp_path_factory.mktemp("rt") / "x.capf"
        write_store(recs, path)
        out, header = read_store(path)
        assert (header.T, header.S, header.C) == (t, s, c)
        for a, b in zip(recs, out):
            assert_records_equal(a, b)


class TestWriteValidation:
    def test_empty_list(self, tmp_path):
        with pytest.raises(FormatError, match="empty"):
            write_store([], tmp_path / "x.capf")

    def test_mixed_t(self, tmp_path):
        recs = [make_record("a", t=2), make_record("b", t=3)]
        with pytest.raises(FormatError, match="heterogeneous shapes"):
            write_store(recs, tmp_path / "x.capf")

    def test_caption_count_mismatch(self, tmp_path):
        rec = make_record()
        rec.captions = rec.captions[:-1]
        with pytest.raises(FormatError, match="captions"):
            write_store([rec], tmp_path / "x.capf")


class TestReadValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record()], path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="magic"):
            read_store(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record()], path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="version"):
            read_store(path)

    def test_truncation_reports_offset_and_returns_nothing(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record("a"), make_record("b", class_id=1)], path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(CorruptionError) as exc:
            read_store(path)
        assert exc.value.offset <= len(raw) - 10

    def test_absurd_length_prefix_is_not_trusted(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record()], path)
        raw = bytearray(path.read_bytes())
        raw[32:36] = struct.pack("<I", 2**31)  # id length field
        path.write_bytes(raw)
        with pytest.raises(CorruptionError):
            read_store(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.capf"
        write_store([make_record()], path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptionError):
            read_store(path)


class TestSynthetic:
    def test_deterministic(self, tmp_path):
        spec = SyntheticSpec(num_classes=3, videos_per_class=2, T=2, S=2, C=4, seed=5)
        p1, p2 = tmp_path / "a.capf", tmp_path / "b.capf"
        write_store(gen_synthetic(spec), p1, synthetic=True)
        write_store(gen_synthetic(spec), p2, synthetic=True)
        assert p1.read_bytes() == p2.read_bytes()

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            gen_synthetic(SyntheticSpec(num_classes=1, videos_per_class=2))
        with pytest.raises(ConfigError):
            gen_synthetic(SyntheticSpec(num_classes=2, videos_per_class=1))

    def test_growing_videos_per_class_appends(self):
        small = gen_synthetic(SyntheticSpec(3, 2, T=2, S=2, C=4, seed=9))
        big = gen_synthetic(SyntheticSpec(3, 4, T=2, S=2, C=4, seed=9))
        assert len(big) == 2 * len(small)
        for a, b in zip(small, big):
            assert_records_equal(
                FeatureRecord(a.video_id, a.class_id,
                              a.visual.astype(np.float32).astype(np.float64),
                              a.text.astype(np.float32).astype(np.float64), a.captions),
                FeatureRecord(b.video_id, b.class_id,
                              b.visual.astype(np.float32).astype(np.float64),
                              b.text.astype(np.float32).astype(np.float64), b.captions),
            )

    def test_caption_template(self):
        recs = gen_synthetic(SyntheticSpec(2, 2, T=3, S=1, C=2, seed=1))
        assert recs[0].captions == [f"synthetic class 0 frame {i}" for i in range(3)]

    def test_zero_snr_text_carries_no_class_signal(self):
        # two-sample t-test on per-video mean text features: ~1000 draws
        recs = gen_synthetic(
            SyntheticSpec(num_classes=2, videos_per_class=500, T=2, S=1, C=8,
                          visual_snr=1.0, text_snr=0.0, seed=3)
        )
        by_class = {0: [], 1: []}
        for r in recs:
            by_class[r.class_id].append(r.text.mean())
        t_stat, _ = stats.ttest_ind(by_class[0], by_class[1])
        assert abs(t_stat) < 4.0

    def test_snr_splits_modal_informativeness(self):
        # visual pure noise, text snr 10: nearest-class-mean should read
        # text easily and do chance on visual
        spec = SyntheticSpec(num_classes=5, videos_per_class=120, T=4, S=2, C=16,
                             visual_snr=0.0, text_snr=10.0, seed=11)
        recs = gen_synthetic(spec)

        def nearest_centroid_accuracy(extract):
            train = {c: [] for c in range(5)}
            test = []
            for r in recs:
                vid_idx = int(r.video_id.rsplit("-v", 1)[1])
                if vid_idx < 60:
                    train[r.class_id].append(extract(r))
                else:
                    test.append((extract(r), r.class_id))
            centroids = {c: np.mean(v, axis=0) for c, v in train.items()}
            hits = sum(
                1
                for x, y in test
                if min(centroids, key=lambda c: np.linalg.norm(x - centroids[c])) == y
            )
            return hits / len(test)

        text_acc = nearest_centroid_accuracy(lambda r: r.text.reshape(-1))
        visual_acc = nearest_centroid_accuracy(lambda r: r.visual.reshape(-1))
        assert text_acc > 0.95
        assert 0.15 <= visual_acc <= 0.25
