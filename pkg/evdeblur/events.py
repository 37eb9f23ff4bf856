""" Event data model, stream slicing and image-like event representations.

Timestamps are integer microseconds. Frames are 2D float64 numpy arrays indexed [row, column], i.e. [y, x].
"""
import logging
from dataclasses import dataclass

import numpy as np

from evdeblur.errors import RangeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    """ A single polarity spike: timestamp t [us], pixel (x, y) and polarity p (+1 or -1). """
    t: int
    x: int
    y: int
    p: int


class EventStream(object):
    """ Time-ordered events from a width x height sensor, bounded by the exposure window [t_start, t_end].

    Events are stored column-wise (t, x, y, p arrays). The arrays are read-only so streams can be shared freely.
    """

    def __init__(self, t, x, y, p, width, height, t_start=None, t_end=None):
        """ Build a stream from column arrays, validating every invariant.

        Args:
            t (array): timestamps [us], non-decreasing
            x (array): column indices
            y (array): row indices
            p (array): polarities, each +1 or -1
            width, height (int): sensor size [pixels]
            t_start, t_end (int, optional): exposure window. Defaults to the first / last timestamp (or 0 for an empty stream).
        """
        t = np.asarray(t, dtype=np.int64).ravel()
        x = np.asarray(x, dtype=np.int64).ravel()
        y = np.asarray(y, dtype=np.int64).ravel()
        p = np.asarray(p, dtype=np.int8).ravel()
        if not (t.size == x.size == y.size == p.size):
            raise ValueError('Event columns must have equal lengths, got t={}, x={}, y={}, p={}.'.format(t.size, x.size, y.size, p.size))
        if width < 1 or height < 1:
            raise ValueError('Sensor size must be positive, got {}x{}.'.format(width, height))

        if t_start is None:
            t_start = int(t[0]) if t.size else 0
        if t_end is None:
            t_end = int(t[-1]) if t.size else int(t_start)
        t_start, t_end = int(t_start), int(t_end)
        if t_start < 0 or t_end < t_start:
            raise RangeError('Exposure window must satisfy 0 <= t_start <= t_end, got [{}, {}].'.format(t_start, t_end))

        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError('Event timestamps must be sorted in non-decreasing order.')
            if t[0] < t_start or t[-1] > t_end:
                raise RangeError('Events span [{}, {}] which lies outside the exposure window [{}, {}].'.format(t[0], t[-1], t_start, t_end))
            if np.any((p != 1) & (p != -1)):
                raise ValueError('Polarities must be +1 or -1.')
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise RangeError('Event pixel coordinates must lie inside the {}x{} sensor.'.format(width, height))

        for column in (t, x, y, p):
            column.flags.writeable = False
        self.t, self.x, self.y, self.p = t, x, y, p
        self.width, self.height = int(width), int(height)
        self.t_start, self.t_end = t_start, t_end

    @classmethod
    def from_unsorted(cls, t, x, y, p, width, height, t_start=None, t_end=None):
        """ Build a stream from events in any order. Events with equal timestamps keep their input order. """
        order = np.argsort(np.asarray(t, dtype=np.int64), kind='stable')
        return cls(np.asarray(t)[order], np.asarray(x)[order], np.asarray(y)[order], np.asarray(p)[order],
                   width, height, t_start, t_end)

    @classmethod
    def empty(cls, width, height, t_start=0, t_end=0):
        """ Return a stream with no events. """
        nothing = np.zeros(0, dtype=np.int64)
        return cls(nothing, nothing, nothing, nothing, width, height, t_start, t_end)

    def __len__(self):
        return int(self.t.size)

    def __iter__(self):
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, p)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.shape == other.shape and self.t_start == other.t_start and self.t_end == other.t_end
                and np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and np.array_equal(self.p, other.p))

    def __repr__(self):
        return 'EventStream({} events, {}x{}, window=[{}, {}])'.format(len(self), self.width, self.height, self.t_start, self.t_end)

    @property
    def shape(self):
        """ Sensor shape as (height, width), matching frame arrays. """
        return (self.height, self.width)

    @property
    def duration(self):
        """ Exposure window length [us]. """
        return self.t_end - self.t_start

    def select(self, mask_or_index, t=None, t_start=None, t_end=None):
        """ Return a sub-stream of the events picked by a boolean mask or index array.

        Args:
            mask_or_index : boolean mask or integer index array into the event columns
            t (array, optional): replacement timestamps for the selected events (must remain sorted)
            t_start, t_end (int, optional): new exposure window, defaults to the current one
        """
        return EventStream(self.t[mask_or_index] if t is None else t,
                           self.x[mask_or_index], self.y[mask_or_index], self.p[mask_or_index],
                           self.width, self.height,
                           self.t_start if t_start is None else t_start,
                           self.t_end if t_end is None else t_end)


def window(stream, t0, t1):
    """ Return the events with t0 <= t < t1 as a new stream with window [t0, min(t1, t_end)].

    Windows are half-open, so t1 may be t_end + 1 to include events stamped exactly at t_end.

    Args:
        stream (EventStream): source stream
        t0, t1 (int): window bounds [us], with t_start <= t0 <= t1 <= t_end + 1
    """
    t0, t1 = int(t0), int(t1)
    if not (stream.t_start <= t0 <= t1 <= stream.t_end + 1):
        raise RangeError('Window [{}, {}) must lie within the stream window [{}, {}].'.format(t0, t1, stream.t_start, stream.t_end))
    i0, i1 = np.searchsorted(stream.t, [t0, t1], side='left')
    return stream.select(slice(i0, i1), t_start=t0, t_end=min(t1, stream.t_end))


def interval_edges(t_start, t_end, m_count):
    """ Return the m_count + 1 integer boundaries splitting [t_start, t_end] into equal-duration intervals. """
    duration = t_end - t_start
    return np.array([t_start + (duration * i) // m_count for i in range(m_count + 1)], dtype=np.int64)


def partition_intervals(stream, m_count):
    """ Split a stream into m_count sub-streams over equal-duration sub-windows of [t_start, t_end].

    All sub-windows are half-open except the last, which is closed on the right, so every event lands in exactly one sub-stream.

    Args:
        stream (EventStream): stream covering the exposure window
        m_count (int): number of intervals, >= 1
    Returns:
        list of EventStream, one per interval
    """
    if m_count < 1:
        raise ValueError('Number of intervals must be at least 1, got {}.'.format(m_count))
    if m_count == 1:
        return [stream]

    edges = interval_edges(stream.t_start, stream.t_end, m_count)
    cuts = np.searchsorted(stream.t, edges[1:-1], side='left')
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [len(stream)]])
    return [stream.select(slice(i0, i1), t_start=edges[m], t_end=edges[m + 1])
            for m, (i0, i1) in enumerate(zip(starts, stops))]


def time_surface(stream, t_ref, decay=None):
    """ Image of how recently each pixel fired, using events with t <= t_ref.

    Without decay, a pixel holds its latest timestamp normalised over [t_start, t_ref]. With a decay
    time constant tau [us], it holds exp(-(t_ref - t_last) / tau). Pixels with no event are 0.

    Args:
        stream (EventStream): source events
        t_ref (int): reference time [us], >= t_start
        decay (float, optional): exponential decay constant [us]
    Returns:
        array (height, width) with values in [0, 1]
    """
    if t_ref < stream.t_start:
        raise RangeError('Reference time {} precedes the stream start {}.'.format(t_ref, stream.t_start))
    if decay is not None and decay <= 0:
        raise ValueError('Decay constant must be positive, got {}.'.format(decay))

    surface = np.zeros(stream.shape)
    n_used = np.searchsorted(stream.t, t_ref, side='right')
    if n_used == 0:
        return surface

    # Latest timestamp per pixel; -1 marks pixels that never fired
    t_last = np.full(stream.width * stream.height, -1, dtype=np.int64)
    pixel = stream.y[:n_used] * stream.width + stream.x[:n_used]
    np.maximum.at(t_last, pixel, stream.t[:n_used])
    t_last = t_last.reshape(stream.shape)
    fired = t_last >= 0

    if decay is None:
        span = t_ref - stream.t_start
        if span == 0:
            surface[fired] = 1.0
        else:
            surface[fired] = (t_last[fired] - stream.t_start) / span
    else:
        surface[fired] = np.exp(-(t_ref - t_last[fired]) / decay)
    return surface


def count_image(stream, signed=False):
    """ Per-pixel event count, or the per-pixel sum of polarities when signed is True. """
    pixel = stream.y * stream.width + stream.x
    weights = stream.p.astype(np.float64) if signed else None
    counts = np.bincount(pixel, weights=weights, minlength=stream.width * stream.height)
    return counts.astype(np.float64).reshape(stream.shape)
