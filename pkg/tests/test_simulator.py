import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from evdeblur.events import EventStream, count_image, window
from evdeblur.simulator import (FrameSequence, MotionSegment, SimConfig, generate_scene, ground_truth_frames,
                                ground_truth_model, inject_spatial_noise, inject_temporal_jitter, parse_motion,
                                simulate_events, step_velocities, synthesize_blur)

from conftest import random_stream


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(contrast_threshold=0)
    with pytest.raises(ValueError):
        SimConfig(threshold_sigma=-0.1)
    with pytest.raises(ValueError):
        SimConfig(log_eps=0)


def test_frame_sequence_requires_increasing_timestamps():
    with pytest.raises(ValueError):
        FrameSequence([np.zeros((2, 2))] * 2, [5, 5])


class TestScene:

    def test_parse_motion(self):
        assert parse_motion('21:0.14,0;28:0.29,0') == [MotionSegment(21, 0.14, 0.0), MotionSegment(28, 0.29, 0.0)]
        with pytest.raises(ValueError):
            parse_motion('21-0.14')

    def test_last_segment_is_held(self):
        assert_array_equal(step_velocities([MotionSegment(2, 1.0, 0.0)], 4), [[1, 0]] * 4)

    def test_zero_velocity_frames_identical(self):
        seq = generate_scene('checker', '10:0,0', 10, 16)
        for frame in seq:
            assert_array_equal(frame, seq[0])

    def test_integer_shift(self):
        seq = generate_scene('checker', '6:1,0', 6, 24, square=4)
        for k in range(1, 6):
            assert_allclose(seq[k][:, k:], seq[0][:, :-k], atol=1e-12)
            assert_allclose(seq[k][:, :k], np.repeat(seq[0][:, :1], k, axis=1), atol=1e-12)

    def test_segment_displacements_add_up(self):
        seq = generate_scene('ramp', '3:1,0;3:0,1', 7, 16)
        displacements = seq.displacements()
        assert_allclose(displacements[3], [3, 0])
        assert_allclose(displacements[6], [3, 3])

    def test_soft_checker_edges(self):
        sharp = generate_scene('checker', '2:0,0', 2, 32)[0]
        soft = generate_scene('checker', '2:0,0', 2, 32, edge_sigma=1.5)[0]
        assert soft.min() >= 0.2 and soft.max() <= 0.8
        assert_allclose(soft[4, 4], sharp[4, 4], atol=0.02)
        # the edge between columns 7 and 8 becomes a ramp spanning several pixels
        assert 0.2 < soft[4, 6] < soft[4, 7] < soft[4, 8] < soft[4, 9] < 0.8
        with pytest.raises(ValueError):
            generate_scene('checker', '2:0,0', 2, 32, edge_sigma=-1)

    def test_unknown_pattern(self):
        with pytest.raises(ValueError):
            generate_scene('stripes', '4:1,0', 4, 8)

    def test_ground_truth_helpers(self):
        seq = generate_scene('checker', '6:0.5,0;6:1,0', 12, 16)
        truth = ground_truth_frames(seq, 3)
        assert len(truth) == 3
        assert_array_equal(truth[1], seq[4])
        model = ground_truth_model(seq, 3)
        assert model.k == 4
        assert_allclose([flow.u[0, 0] for flow in model.flows], [-0.5, -0.75, -1.0])
        with pytest.raises(ValueError):
            ground_truth_frames(seq, 5)


class TestSimulateEvents:

    def test_constant_sequence_gives_no_events(self):
        seq = generate_scene('checker', '8:0,0', 8, 16)
        assert len(simulate_events(seq)) == 0

    def test_exact_threshold_crossings(self):
        c, eps = 0.2, 1e-3
        frames = [np.full((1, 1), 0.2), np.full((1, 1), (0.2 + eps) * np.exp(3 * c) - eps)]
        stream = simulate_events(FrameSequence(frames, [0, 3000]), SimConfig(contrast_threshold=c, threshold_sigma=0.0, log_eps=eps))
        assert_array_equal(stream.t, [1000, 2000, 3000])
        assert_array_equal(stream.p, [1, 1, 1])

    def test_rising_then_falling(self):
        frames = [np.full((1, 1), v) for v in (0.2, 0.6, 0.2)]
        stream = simulate_events(FrameSequence(frames, [0, 1000, 2000]), SimConfig(threshold_sigma=0.0))
        assert len(stream) > 0
        n_positive = np.count_nonzero(stream.p > 0)
        assert n_positive > 0
        assert_array_equal(stream.p[:n_positive], 1)
        assert_array_equal(stream.p[n_positive:], -1)

    def test_equal_timestamps_ordered_by_pixel(self):
        c, eps = 0.2, 1e-3
        base = np.log(0.3 + eps)
        # x=1 crosses at the very end of the first gap, x=0 at the very start of the second; both round to 1000 us
        levels = np.array([[[base, base]], [[base + 0.1999, base + 0.20005]], [[base + 0.5999, base + 0.20005]]])
        seq = FrameSequence(np.exp(levels) - eps, [0, 1000, 2000])
        stream = simulate_events(seq, SimConfig(contrast_threshold=c, threshold_sigma=0.0, log_eps=eps))
        assert_array_equal(stream.t, [1000, 1000, 1500])
        assert_array_equal(stream.x, [0, 1, 0])
        assert_array_equal(stream.p, [1, 1, 1])

    def test_exposure_window(self):
        seq = generate_scene('ramp', '10:1,0', 10, 16, frame_interval_us=500)
        stream = simulate_events(seq)
        assert (stream.t_start, stream.t_end) == (0, 5000)

    def test_reproducible(self):
        seq = generate_scene('texture', '12:0.7,0.3', 12, 24)
        assert simulate_events(seq, SimConfig(rng_seed=5)) == simulate_events(seq, SimConfig(rng_seed=5))

    def test_integration_duality(self):
        """ Summing c * p up to each frame time recovers the log-intensity change to within one threshold. """
        c, eps = 0.05, 1e-3
        seq = generate_scene('ramp', '20:2,0', 20, 32)
        stream = simulate_events(seq, SimConfig(contrast_threshold=c, threshold_sigma=0.0, log_eps=eps))
        assert len(stream) > 0
        log_frames = np.log(seq.frames + eps)
        for frame_log, t in zip(log_frames, seq.timestamps):
            integrated = c * count_image(window(stream, stream.t_start, int(t) + 1), signed=True)
            assert np.max(np.abs(integrated - (frame_log - log_frames[0]))) <= c + 1e-9


class TestBlur:

    def test_identical_frames(self):
        frame = np.arange(12.0).reshape(3, 4) / 12
        assert_array_equal(synthesize_blur(FrameSequence([frame] * 5, range(5))), frame)

    def test_black_and_white(self):
        seq = FrameSequence([np.zeros((3, 3)), np.ones((3, 3))], [0, 1])
        assert_array_equal(synthesize_blur(seq), np.full((3, 3), 0.5))

    def test_matches_mean_and_bounds(self):
        seq = generate_scene('checker', '49:0.142857142857,0', 49, 32)
        blur = synthesize_blur(seq)
        total = np.zeros(seq.shape)
        for frame in seq:
            total += frame
        assert_allclose(blur, total / 49, atol=1e-12)
        assert np.all(blur >= seq.frames.min(axis=0) - 1e-12)
        assert np.all(blur <= seq.frames.max(axis=0) + 1e-12)


class TestNoise:

    def test_spatial_noise_identity(self, rng):
        stream = random_stream(rng, 300)
        assert inject_spatial_noise(stream, 0.0, 0.0, rng_seed=3) == stream

    def test_drop_everything(self, rng):
        stream = random_stream(rng, 300)
        assert len(inject_spatial_noise(stream, 0.0, 1.0)) == 0

    def test_background_rate(self):
        stream = EventStream.empty(32, 32, 0, 100000)
        rate = 20.0
        expected = rate * 0.1 * 32 * 32
        counts = [len(inject_spatial_noise(stream, rate, 0.0, rng_seed=seed)) for seed in range(20)]
        assert all(abs(n - expected) < 4 * np.sqrt(expected) for n in counts)

    def test_noise_parameters_validated(self, rng):
        stream = random_stream(rng, 10)
        with pytest.raises(ValueError):
            inject_spatial_noise(stream, -1.0, 0.0)
        with pytest.raises(ValueError):
            inject_spatial_noise(stream, 0.0, 1.5)
        with pytest.raises(ValueError):
            inject_temporal_jitter(stream, 0.0)

    def test_sparse_stream_unchanged(self):
        t = np.arange(0, 100000, 1000)
        stream = EventStream(t, np.zeros_like(t), np.zeros_like(t), np.ones_like(t), 1, 1)
        assert_array_equal(inject_temporal_jitter(stream, 1e6).t, t)

    def test_saturated_queue(self):
        n = 1000
        stream = EventStream(np.zeros(n), np.arange(n) % 10, np.zeros(n), np.ones(n), 10, 1)
        jittered = inject_temporal_jitter(stream, 1e6)
        assert_array_equal(jittered.t, np.arange(n))

    def test_jitter_contracts(self, rng):
        for seed in range(1000):
            stream = random_stream(rng, int(rng.integers(0, 40)), t_max=200)
            jittered = inject_temporal_jitter(stream, float(rng.uniform(1e4, 1e6)), rng_seed=seed,
                                              arrival_jitter_us=float(rng.choice([0.0, 5.0])))
            assert len(jittered) == len(stream)
            assert_array_equal(jittered.x, stream.x)
            assert_array_equal(jittered.y, stream.y)
            assert_array_equal(jittered.p, stream.p)
            assert np.all(np.diff(jittered.t) >= 0)
            assert np.all(jittered.t >= stream.t)

    def test_jitter_reproducible(self, rng):
        stream = random_stream(rng, 200)
        assert inject_temporal_jitter(stream, 1e5, 7, 3.0) == inject_temporal_jitter(stream, 1e5, 7, 3.0)

    def test_delayed_events_stretch_window(self):
        n = 100
        stream = EventStream(np.full(n, 990), np.zeros(n), np.zeros(n), np.ones(n), 1, 1, t_start=0, t_end=1000)
        jittered = inject_temporal_jitter(stream, 1e4)
        assert jittered.t_start == 0
        assert jittered.t_end == jittered.t[-1] == 990 + 100 * (n - 1)
