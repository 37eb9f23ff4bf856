import numpy as np
import pytest
from numpy.testing import assert_array_equal

from evdeblur.errors import RangeError
from evdeblur.events import EventStream, count_image, interval_edges, partition_intervals, time_surface, window

from conftest import random_stream


class TestEventStream:

    def test_unsorted_timestamps_rejected(self):
        with pytest.raises(ValueError):
            EventStream([3, 1], [0, 0], [0, 0], [1, 1], 2, 2)

    def test_bad_polarity_rejected(self):
        with pytest.raises(ValueError):
            EventStream([0, 1], [0, 0], [0, 0], [1, 0], 2, 2)

    def test_pixel_outside_sensor_rejected(self):
        with pytest.raises(RangeError):
            EventStream([0], [2], [0], [1], 2, 2)

    def test_event_outside_window_rejected(self):
        with pytest.raises(RangeError):
            EventStream([5], [0], [0], [1], 2, 2, t_start=0, t_end=4)

    def test_from_unsorted_is_stable(self):
        stream = EventStream.from_unsorted([5, 1, 5, 1], [0, 1, 2, 3], [0, 0, 0, 0], [1, 1, -1, -1], 4, 1)
        assert_array_equal(stream.t, [1, 1, 5, 5])
        assert_array_equal(stream.x, [1, 3, 0, 2])

    def test_columns_are_read_only(self, ten_events):
        with pytest.raises(ValueError):
            ten_events.t[0] = 4

    def test_iteration_yields_events(self, ten_events):
        events = list(ten_events)
        assert len(events) == 10
        assert events[3].t == 3 and events[3].x == 3 and events[3].y == 1 and events[3].p == -1


class TestWindow:

    def test_full_window_is_identity(self, ten_events):
        assert window(ten_events, ten_events.t_start, ten_events.t_end + 1) == ten_events

    def test_zero_width_window_is_empty(self, ten_events):
        sub = window(ten_events, 4, 4)
        assert len(sub) == 0
        assert sub.shape == ten_events.shape

    def test_half_open_selection(self, ten_events):
        sub = window(ten_events, 3, 7)
        assert_array_equal(sub.t, [3, 4, 5, 6])
        assert (sub.width, sub.height) == (4, 2)

    def test_out_of_range_raises(self, ten_events):
        with pytest.raises(RangeError):
            window(ten_events, 5, 2)
        with pytest.raises(RangeError):
            window(ten_events, 0, 11)

    def test_window_is_idempotent(self, rng):
        stream = random_stream(rng, 200)
        once = window(stream, 100, 600)
        assert window(once, 100, 600) == once


class TestPartition:

    def test_zero_intervals_rejected(self, ten_events):
        with pytest.raises(ValueError):
            partition_intervals(ten_events, 0)

    def test_single_interval_is_identity(self, ten_events):
        assert partition_intervals(ten_events, 1) == [ten_events]

    def test_one_event_per_interval(self):
        t = np.arange(0, 70, 10)
        stream = EventStream(t, np.zeros(7), np.zeros(7), np.ones(7), 1, 1, t_start=0, t_end=70)
        parts = partition_intervals(stream, 7)
        assert [len(part) for part in parts] == [1] * 7
        assert [part.t_start for part in parts] == list(range(0, 70, 10))

    def test_empty_stream(self):
        parts = partition_intervals(EventStream.empty(3, 3, 0, 100), 7)
        assert len(parts) == 7
        assert all(len(part) == 0 for part in parts)

    def test_event_at_window_end_kept(self):
        stream = EventStream([0, 50, 100], [0, 0, 0], [0, 0, 0], [1, 1, 1], 1, 1, t_start=0, t_end=100)
        parts = partition_intervals(stream, 4)
        assert_array_equal(parts[-1].t, [100])

    def test_partition_is_complete(self, rng):
        for m_count in (2, 3, 7):
            stream = random_stream(rng, 300)
            parts = partition_intervals(stream, m_count)
            assert_array_equal(np.concatenate([part.t for part in parts]), stream.t)
            assert_array_equal(np.concatenate([part.x for part in parts]), stream.x)
            assert_array_equal(interval_edges(stream.t_start, stream.t_end, m_count)[:-1], [part.t_start for part in parts])


class TestTimeSurface:

    def test_empty_stream_gives_zeros(self):
        assert_array_equal(time_surface(EventStream.empty(5, 4, 0, 10), 10), np.zeros((4, 5)))

    def test_single_event_with_decay(self):
        stream = EventStream([40], [2], [3], [1], 5, 5, t_start=0, t_end=40)
        surface = time_surface(stream, 40, decay=10.0)
        assert surface[3, 2] == 1.0
        surface[3, 2] = 0
        assert not surface.any()

    def test_last_event_wins(self):
        stream = EventStream([10, 30], [1, 1], [0, 0], [1, -1], 2, 1, t_start=0, t_end=40)
        assert time_surface(stream, 40)[0, 1] == pytest.approx(30 / 40)
        assert time_surface(stream, 20)[0, 1] == pytest.approx(10 / 20)

    def test_values_in_unit_range(self, rng):
        stream = random_stream(rng, 500)
        for decay in (None, 50.0):
            surface = time_surface(stream, 700, decay)
            assert surface.min() >= 0 and surface.max() <= 1

    def test_reference_before_start_raises(self):
        with pytest.raises(RangeError):
            time_surface(EventStream.empty(2, 2, 10, 20), 5)


class TestCountImage:

    def test_empty_stream(self):
        assert not count_image(EventStream.empty(3, 2)).any()

    def test_polarity_cancellation(self):
        stream = EventStream([0, 1], [1, 1], [0, 0], [1, -1], 2, 1)
        assert count_image(stream, signed=True)[0, 1] == 0
        assert count_image(stream)[0, 1] == 2

    def test_matches_histogram(self, rng):
        stream = random_stream(rng, 100)
        expected = np.zeros(stream.shape)
        signed = np.zeros(stream.shape)
        for event in stream:
            expected[event.y, event.x] += 1
            signed[event.y, event.x] += event.p
        assert_array_equal(count_image(stream), expected)
        assert_array_equal(count_image(stream, signed=True), signed)
