""" Synthetic scenes, event simulation, blur synthesis and sensor noise models.

Events are simulated per pixel from linearly interpolated log-intensity, in the manner of ESIM: one event per
contrast-threshold crossing, with per-pixel threshold variation. Blurry frames are the average of the sharp sequence.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from evdeblur.events import EventStream
from evdeblur.motion import FlowField, PlmModel, warp

log = logging.getLogger(__name__)

#: Smallest per-pixel contrast threshold after adding threshold variation [log intensity]
MIN_THRESHOLD = 0.01

PATTERNS = ('checker', 'ramp', 'texture')


@dataclass(frozen=True)
class SimConfig:
    """ Event simulation settings.

    Args:
        contrast_threshold : mean log-intensity change c that triggers one event
        threshold_sigma : standard deviation of the per-pixel threshold
        log_eps : offset inside log(I + log_eps), so zero intensity stays finite
        rng_seed : seed for the threshold draw
    """
    contrast_threshold: float = 0.2
    threshold_sigma: float = 0.03
    log_eps: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ValueError('Contrast threshold must be positive, got {}.'.format(self.contrast_threshold))
        if not self.threshold_sigma >= 0:
            raise ValueError('Threshold sigma must be non-negative, got {}.'.format(self.threshold_sigma))
        if not self.log_eps > 0:
            raise ValueError('log_eps must be positive, got {}.'.format(self.log_eps))


@dataclass(frozen=True)
class MotionSegment:
    """ Constant scene velocity (vx, vy) [pixels / frame] held for a number of frame steps. """
    frames: int
    vx: float
    vy: float = 0.0


class FrameSequence(object):
    """ Sharp frames with strictly increasing timestamps [us].

    velocities, when known (e.g. from generate_scene), holds the scene velocity [pixels / frame] of the step
    following each frame, shape (N, 2) as (vx, vy).
    """

    def __init__(self, frames, timestamps, velocities=None):
        frames = [np.asarray(frame, dtype=np.float64) for frame in frames]
        if not frames:
            raise ValueError('A frame sequence needs at least one frame.')
        shape = frames[0].shape
        if len(shape) != 2 or any(frame.shape != shape for frame in frames):
            raise ValueError('All frames must be 2D and share the same dimensions.')
        timestamps = np.asarray(timestamps, dtype=np.int64).ravel()
        if timestamps.size != len(frames):
            raise ValueError('Expected one timestamp per frame ({}), got {}.'.format(len(frames), timestamps.size))
        if np.any(np.diff(timestamps) <= 0):
            raise ValueError('Frame timestamps must be strictly increasing.')
        self.frames = np.stack(frames)
        self.frames.flags.writeable = False
        self.timestamps = timestamps
        self.velocities = None if velocities is None else np.asarray(velocities, dtype=np.float64).reshape(len(frames), 2)

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, index):
        return self.frames[index]

    @property
    def shape(self):
        return self.frames.shape[1:]

    @property
    def frame_period(self):
        """ Nominal frame period [us] (mean spacing; 1 for a single frame). """
        if len(self) < 2:
            return 1
        return int(round((self.timestamps[-1] - self.timestamps[0]) / (len(self) - 1)))

    def displacements(self):
        """ Cumulative scene displacement (dx, dy) at each frame, relative to frame 0. """
        if self.velocities is None:
            raise ValueError('Sequence has no motion record; it was not produced by generate_scene.')
        return np.vstack([[0.0, 0.0], np.cumsum(self.velocities[:-1], axis=0)])


####################
# SCENE GENERATION #
####################

def parse_motion(text):
    """ Parse a velocity schedule 'frames:vx,vy;frames:vx,vy' (e.g. '21:0.14,0;28:0.29,0') into MotionSegments. """
    segments = []
    for chunk in filter(None, (part.strip() for part in text.split(';'))):
        try:
            frames, velocity = chunk.split(':')
            components = [float(value) for value in velocity.split(',')]
            segments.append(MotionSegment(int(frames), *components))
        except (TypeError, ValueError):
            raise ValueError("Motion segment '{}' not understood; expected 'frames:vx,vy'.".format(chunk))
    return segments


def step_velocities(motion, n_steps):
    """ Velocity (vx, vy) for each of n_steps frame steps; the last segment is held past the end of the schedule. """
    if not motion:
        raise ValueError('Motion schedule must contain at least one segment.')
    velocities = []
    for segment in motion:
        if segment.frames < 0:
            raise ValueError('Segment lengths must be non-negative, got {}.'.format(segment.frames))
        velocities.extend([(segment.vx, segment.vy)] * segment.frames)
    velocities.extend([(motion[-1].vx, motion[-1].vy)] * max(0, n_steps - len(velocities)))
    return np.array(velocities[:n_steps], dtype=np.float64).reshape(n_steps, 2)


def base_pattern(pattern, shape, square=8, rng_seed=0, low=0.2, high=0.8, edge_sigma=0.0):
    """ Render a still test pattern with intensities in [low, high].

    Args:
        pattern (str): 'checker' (squares of side `square`), 'ramp' (horizontal linear ramp) or 'texture' (smoothed noise)
        shape (tuple): (height, width)
        edge_sigma (float): Gaussian softening of the checker edges [pixels]; 0 keeps them sharp
    """
    height, width = shape
    if edge_sigma < 0:
        raise ValueError('Edge sigma must be non-negative, got {}.'.format(edge_sigma))
    if pattern == 'checker':
        rows, cols = np.mgrid[0:height, 0:width]
        cells = (rows // square + cols // square) % 2
        checker = np.where(cells == 0, low, high).astype(np.float64)
        if edge_sigma > 0:
            checker = ndimage.gaussian_filter(checker, sigma=edge_sigma, mode='nearest')
        return checker
    elif pattern == 'ramp':
        ramp = np.linspace(low, high, width)
        return np.tile(ramp, (height, 1))
    elif pattern == 'texture':
        rng = np.random.default_rng(rng_seed)
        noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=square / 4.0, mode='wrap')
        noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)
        return low + (high - low) * noise
    else:
        raise ValueError("Pattern '{}' not recognised; choose from {}.".format(pattern, ', '.join(PATTERNS)))


def generate_scene(pattern, motion, n_frames, size, frame_interval_us=1000, square=8, rng_seed=0, edge_sigma=0.0):
    """ Render a translating test pattern as a sharp frame sequence.

    Frame k shows the pattern displaced by the integral of the velocity schedule up to k, i.e.
    frame_k(x) = base(x - d_k), sampled bilinearly with clamp-to-edge borders.

    Args:
        pattern (str): 'checker', 'ramp' or 'texture'
        motion (list): MotionSegments [pixels / frame], or a schedule string for parse_motion
        n_frames (int): number of frames, >= 2
        size (int or tuple): square side or (height, width) [pixels]
        frame_interval_us (int): frame period [us]
        square, rng_seed, edge_sigma : passed to base_pattern
    Returns:
        FrameSequence, with its velocity record set
    """
    if isinstance(motion, str):
        motion = parse_motion(motion)
    if n_frames < 2:
        raise ValueError('A scene needs at least 2 frames, got {}.'.format(n_frames))
    shape = (size, size) if np.isscalar(size) else tuple(size)

    base = base_pattern(pattern, shape, square=square, rng_seed=rng_seed, edge_sigma=edge_sigma)
    velocities = step_velocities(motion, n_frames)
    displacement = np.vstack([[0.0, 0.0], np.cumsum(velocities[:-1], axis=0)])
    frames = [warp(base, FlowField.constant(shape, -dx, -dy)) for dx, dy in displacement]
    timestamps = np.arange(n_frames, dtype=np.int64) * int(frame_interval_us)
    log.debug('Rendered %d-frame %s scene, final displacement (%.3f, %.3f) px', n_frames, pattern, *displacement[-1])
    return FrameSequence(frames, timestamps, velocities)


def ground_truth_frames(seq, m_count):
    """ The sharp frames G_m at the start of each of m_count intervals (requires len(seq) divisible by m_count). """
    k = _interval_length(seq, m_count)
    return [seq[m * k] for m in range(m_count)]


def ground_truth_model(seq, m_count):
    """ The PlmModel whose unit flows are the true mean scene motion of each interval, in warp convention. """
    k = _interval_length(seq, m_count)
    if seq.velocities is None:
        raise ValueError('Sequence has no motion record; ground-truth flows are unavailable.')
    flows = []
    for m in range(m_count):
        vx, vy = seq.velocities[m * k:(m + 1) * k].mean(axis=0)
        flows.append(FlowField.constant(seq.shape, -vx, -vy))
    return PlmModel(flows, k)


def _interval_length(seq, m_count):
    if m_count < 1 or len(seq) % m_count:
        raise ValueError('Sequence length {} is not a multiple of the interval count {}.'.format(len(seq), m_count))
    return len(seq) // m_count


####################
# EVENT SIMULATION #
####################

def simulate_events(seq, cfg=SimConfig()):
    """ Simulate the events a DVS pixel array would emit while viewing the sequence.

    Each pixel tracks L = log(I + log_eps), interpolated linearly between frames. Every time L moves a full
    per-pixel threshold away from the pixel's reference level an event is emitted at the interpolated crossing
    time, and the reference moves to the crossed level. Thresholds are c + N(0, sigma^2), drawn once per pixel
    and clamped to MIN_THRESHOLD. No refractory period.

    The stream window is [t_0, t_{N-1} + frame_period]: one frame period per frame.

    Args:
        seq (FrameSequence): sharp frames, >= 2
        cfg (SimConfig): simulation settings
    Returns:
        EventStream sorted by time; equal timestamps are ordered by pixel index (y * width + x), then by emission
        order (frame gap, then crossing number)
    """
    if not isinstance(seq, FrameSequence):
        raise ValueError('Event simulation expects a FrameSequence, got {}.'.format(type(seq).__name__))
    if len(seq) < 2:
        raise ValueError('Event simulation needs at least 2 frames, got {}.'.format(len(seq)))
    height, width = seq.shape
    rng = np.random.default_rng(cfg.rng_seed)
    thresholds = cfg.contrast_threshold + cfg.threshold_sigma * rng.standard_normal(height * width)
    thresholds = np.maximum(thresholds, MIN_THRESHOLD)

    log_frames = np.log(seq.frames.reshape(len(seq), -1) + cfg.log_eps)
    reference = log_frames[0].copy()
    chunks = []
    for gap in range(len(seq) - 1):
        t_a, t_b = seq.timestamps[gap], seq.timestamps[gap + 1]
        start, stop = log_frames[gap], log_frames[gap + 1]
        change = stop - reference
        # Small tolerance so an exact multiple of the threshold still counts as a crossing
        n_cross = np.floor(np.abs(change) / thresholds + 1e-9).astype(np.int64)
        pixels = np.flatnonzero(n_cross)
        if pixels.size == 0:
            continue

        counts = n_cross[pixels]
        pixel = np.repeat(pixels, counts)
        # Crossing number j = 1..n within each pixel
        j = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + 1
        polarity = np.sign(change[pixel]).astype(np.int8)
        level = reference[pixel] + polarity * j * thresholds[pixel]
        span = stop[pixel] - start[pixel]
        fraction = np.divide(level - start[pixel], span, out=np.ones_like(span), where=span != 0)
        times = np.rint(t_a + np.clip(fraction, 0.0, 1.0) * (t_b - t_a)).astype(np.int64)
        chunks.append((times, pixel, polarity))

        reference[pixels] += np.sign(change[pixels]) * counts * thresholds[pixels]

    t_end = int(seq.timestamps[-1] + seq.frame_period)
    if not chunks:
        log.info('Simulated 0 events')
        return EventStream.empty(width, height, int(seq.timestamps[0]), t_end)
    t, pixel, p = (np.concatenate(column) for column in zip(*chunks))
    # Two stable passes give the (t, pixel) order with emission order breaking the remaining ties
    order = np.argsort(pixel, kind='stable')
    order = order[np.argsort(t[order], kind='stable')]
    pixel = pixel[order]
    stream = EventStream(t[order], pixel % width, pixel // width, p[order], width, height, int(seq.timestamps[0]), t_end)
    log.info('Simulated %d events over %d frames (c=%.3g, sigma=%.3g)', len(stream), len(seq), cfg.contrast_threshold, cfg.threshold_sigma)
    return stream


def synthesize_blur(seq):
    """ Blurry frame as the per-pixel mean of all frames in the sequence. """
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float64)
    if len(frames) == 0:
        raise ValueError('Cannot blur an empty sequence.')
    return np.mean(frames, axis=0)


################
# SENSOR NOISE #
################

def inject_spatial_noise(stream, ba_rate, fn_prob, rng_seed=0):
    """ Add background activity and false negatives to a stream.

    Each event is dropped with probability fn_prob. Background events are a homogeneous Poisson process of
    ba_rate events / pixel / second, uniform over pixels and the stream window, with random polarity.

    Args:
        stream (EventStream): clean events
        ba_rate (float): background activity rate [events / pixel / s], >= 0
        fn_prob (float): drop probability, in [0, 1]
        rng_seed (int): seed
    """
    if not 0 <= fn_prob <= 1:
        raise ValueError('False-negative probability must lie in [0, 1], got {}.'.format(fn_prob))
    if ba_rate < 0:
        raise ValueError('Background activity rate must be non-negative, got {}.'.format(ba_rate))
    rng = np.random.default_rng(rng_seed)

    keep = rng.random(len(stream)) >= fn_prob
    expected = ba_rate * stream.duration * 1e-6 * stream.width * stream.height
    n_ba = rng.poisson(expected)
    ba_t = rng.integers(stream.t_start, stream.t_end + 1, size=n_ba)
    ba_x = rng.integers(0, stream.width, size=n_ba)
    ba_y = rng.integers(0, stream.height, size=n_ba)
    ba_p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_ba)
    log.debug('Spatial noise: dropped %d events, added %d background events', np.count_nonzero(~keep), n_ba)

    return EventStream.from_unsorted(np.concatenate([stream.t[keep], ba_t]), np.concatenate([stream.x[keep], ba_x]),
                                     np.concatenate([stream.y[keep], ba_y]), np.concatenate([stream.p[keep], ba_p]),
                                     stream.width, stream.height, stream.t_start, stream.t_end)


def inject_temporal_jitter(stream, max_bandwidth, rng_seed=0, arrival_jitter_us=0.0):
    """ Delay timestamps through a FIFO read-out limited to max_bandwidth events / second.

    Output time of event i is max(a_i, out_{i-1} + 1 / max_bandwidth), where a_i is its timestamp plus an optional
    exponential arrival latency (mean arrival_jitter_us). Count, order and (x, y, p) are preserved.

    Events served after the exposure ends stretch t_end to the last output timestamp. Reading the stream back
    with an explicit t_end (utils.read_events) restores the exposure window and drops the late events.
    """
    if not max_bandwidth > 0:
        raise ValueError('Read-out bandwidth must be positive, got {}.'.format(max_bandwidth))
    if arrival_jitter_us < 0:
        raise ValueError('Arrival jitter must be non-negative, got {}.'.format(arrival_jitter_us))
    if len(stream) == 0:
        return stream

    rng = np.random.default_rng(rng_seed)
    arrival = stream.t.astype(np.float64)
    if arrival_jitter_us > 0:
        arrival = arrival + rng.exponential(arrival_jitter_us, size=len(stream))
    period = 1e6 / max_bandwidth
    # Closed form of the queue recurrence: out_i = i*period + max_{j<=i}(a_j - j*period)
    steps = np.arange(len(stream)) * period
    served = steps + np.maximum.accumulate(arrival - steps)
    t = np.maximum(np.rint(served).astype(np.int64), stream.t)
    t = np.maximum.accumulate(t)
    log.debug('Temporal jitter: max delay %d us', int(np.max(t - stream.t)))
    return stream.select(slice(None), t=t, t_end=max(stream.t_end, int(t[-1])))
