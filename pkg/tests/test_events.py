import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrack import events
from evtrack.errors import DataError, FormatError


def make_stream(n=100, seed=0, width=346, height=260):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 1_000_000, n).astype(np.uint64))
    x = rng.integers(0, width, n).astype(np.uint16)
    y = rng.integers(0, height, n).astype(np.uint16)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    return events.EventStream.from_arrays(width, height, t, x, y, p)


class TestValidation:
    def test_valid_stream_empty_report(self):
        assert events.validate_stream(make_stream()) == []

    def test_out_of_range_x_cites_index(self):
        s = events.EventStream(346, 260,
                               np.array([0, 1], dtype=np.uint64),
                               np.array([0, 346], dtype=np.uint16),
                               np.array([0, 0], dtype=np.uint16),
                               np.array([1, 1], dtype=np.int8))
        report = events.validate_stream(s)
        assert any("x=346" in r and "index 1" in r for r in report)

    def test_swapped_timestamps_cite_second_index(self):
        t = np.arange(10, dtype=np.uint64)
        t[5], t[6] = t[6], t[5]
        s = events.EventStream(346, 260, t,
                               np.zeros(10, dtype=np.uint16),
                               np.zeros(10, dtype=np.uint16),
                               np.ones(10, dtype=np.int8))
        report = events.validate_stream(s)
        assert any("index 6" in r for r in report)

    def test_bad_polarity_reported(self):
        s = events.EventStream(346, 260, np.array([0], dtype=np.uint64),
                               np.array([0], dtype=np.uint16),
                               np.array([0], dtype=np.uint16),
                               np.array([0], dtype=np.int8))
        assert any("polarity" in r for r in events.validate_stream(s))

    def test_from_arrays_rejects_bad_stream(self):
        with pytest.raises(DataError):
            events.EventStream.from_arrays(346, 260, [0], [400], [0], [1])

    def test_rate_histogram_totals(self):
        s = make_stream(500)
        hist = events.rate_histogram(s, 5000)
        assert hist.sum() == len(s)


class TestBinaryIO:
    def test_round_trip(self, tmp_path):
        s = make_stream(10_000)
        path = tmp_path / "e.evt"
        events.write_events(s, path, "binary")
        r = events.read_events(path, "binary")
        assert (r.width, r.height) == (s.width, s.height)
        for a, b in ((r.t, s.t), (r.x, s.x), (r.y, s.y), (r.p, s.p)):
            np.testing.assert_array_equal(a, b)

    def test_empty_stream_is_16_bytes(self, tmp_path):
        s = events.EventStream.from_arrays(346, 260, [], [], [], [])
        path = tmp_path / "e.evt"
        events.write_events(s, path, "binary")
        assert path.stat().st_size == 16

    def test_one_event_adds_13_bytes(self, tmp_path):
        s = events.EventStream.from_arrays(346, 260, [5], [1], [2], [-1])
        path = tmp_path / "e.evt"
        events.write_events(s, path, "binary")
        assert path.stat().st_size == 16 + 13

    def test_write_read_write_idempotent(self, tmp_path):
        s = make_stream(1000)
        p1, p2 = tmp_path / "a.evt", tmp_path / "b.evt"
        events.write_events(s, p1, "binary")
        events.write_events(events.read_events(p1, "binary"), p2, "binary")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.evt"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError):
            events.read_events(path, "binary")

    def test_truncated_body(self, tmp_path):
        s = make_stream(10)
        path = tmp_path / "e.evt"
        events.write_events(s, path, "binary")
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            events.read_events(path, "binary")


class TestCsvIO:
    def test_round_trip(self, tmp_path):
        s = make_stream(200)
        path = tmp_path / "e.csv"
        events.write_events(s, path, "csv")
        r = events.read_events(path, "csv", width=s.width, height=s.height)
        np.testing.assert_array_equal(r.t, s.t)
        np.testing.assert_array_equal(r.p, s.p)

    def test_empty_body_with_header(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("t_us,x,y,p\n")
        assert len(events.read_events(path, "csv")) == 0

    def test_malformed_record_cites_line(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("t_us,x,y,p\n0,1,2,1\n7,oops,3,1\n")
        with pytest.raises(FormatError, match=":3"):
            events.read_events(path, "csv")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("time,x,y,p\n")
        with pytest.raises(FormatError):
            events.read_events(path, "csv")


class TestLabels:
    def test_round_trip(self, tmp_path):
        track = events.LabelTrack(200.0, np.array([0, 5000], dtype=np.uint64),
                                  np.array([10.25, 11.5]), np.array([20.0, 21.0]),
                                  np.array([True, False]))
        path = tmp_path / "l.csv"
        events.write_labels(track, path)
        r = events.read_labels(path)
        np.testing.assert_array_equal(r.t, track.t)
        np.testing.assert_allclose(r.x, track.x)
        np.testing.assert_array_equal(r.visible, track.visible)

    def test_unsorted_track_rejected(self):
        with pytest.raises(DataError):
            events.LabelTrack(200.0, np.array([5, 0], dtype=np.uint64),
                              np.zeros(2), np.zeros(2), np.ones(2, dtype=bool))


class TestSynth:
    def test_same_seed_bitwise_identical(self):
        params = events.SynthParams(duration_us=100_000)
        s1, t1 = events.synth_eye_sequence(params, 42)
        s2, t2 = events.synth_eye_sequence(params, 42)
        np.testing.assert_array_equal(s1.t, s2.t)
        np.testing.assert_array_equal(s1.x, s2.x)
        np.testing.assert_array_equal(s1.p, s2.p)
        np.testing.assert_array_equal(t1.x, t2.x)

    def test_different_seeds_differ(self):
        params = events.SynthParams(duration_us=100_000)
        s1, _ = events.synth_eye_sequence(params, 1)
        s2, _ = events.synth_eye_sequence(params, 2)
        assert len(s1) != len(s2) or not np.array_equal(s1.t, s2.t)

    def test_stationary_pupil_no_noise_emits_nothing(self):
        params = events.SynthParams(
            duration_us=100_000, noise_rate=0.0, eyelid_rate=0.0,
            waypoints=((0, 100.0, 100.0), (100_000, 100.0, 100.0)))
        stream, _ = events.synth_eye_sequence(params, 0)
        assert len(stream) == 0

    def test_linear_interpolation_label(self):
        # (100,100) -> (200,100) over 1 s; label rate 80 Hz puts a label at
        # exactly t=12500 us, where x = 100 + 0.0125 * 100 = 101.25
        params = events.SynthParams(
            duration_us=1_000_000, label_rate_hz=80,
            waypoints=((0, 100.0, 100.0), (1_000_000, 200.0, 100.0)))
        _, track = events.synth_eye_sequence(params, 0)
        i = int(np.flatnonzero(track.t == 12_500)[0])
        assert track.x[i] == pytest.approx(1.0125 * 100)
        assert track.y[i] == pytest.approx(100.0)

    def test_output_satisfies_invariants(self):
        stream, _ = events.synth_eye_sequence(
            events.SynthParams(duration_us=50_000), 3)
        assert events.validate_stream(stream) == []

    def test_trajectory_out_of_bounds_rejected(self):
        params = events.SynthParams(waypoints=((0, 5.0, 5.0), (1000, 5.0, 5.0)))
        with pytest.raises(DataError):
            events.synth_eye_sequence(params, 0)

    def test_negative_rate_rejected(self):
        with pytest.raises(DataError):
            events.synth_eye_sequence(events.SynthParams(noise_rate=-1.0), 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 345),
                          st.integers(0, 259), st.sampled_from([-1, 1])),
                max_size=50))
def test_binary_round_trip_property(tmp_path_factory, rows):
    rows.sort(key=lambda r: r[0])
    cols = list(zip(*rows)) if rows else ([], [], [], [])
    s = events.EventStream.from_arrays(346, 260, *cols)
    path = tmp_path_factory.mktemp("rt") / "e.evt"
    events.write_events(s, path, "binary")
    r = events.read_events(path, "binary")
    np.testing.assert_array_equal(r.t, s.t)
    np.testing.assert_array_equal(r.x, s.x)
    np.testing.assert_array_equal(r.y, s.y)
    np.testing.assert_array_equal(r.p, s.p)
