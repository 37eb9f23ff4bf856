import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from evdeblur import utils
from evdeblur.deblur import SolverReport
from evdeblur.errors import ParseError
from evdeblur.events import EventStream
from evdeblur.metrics import evaluate
from evdeblur.motion import FlowField

from conftest import random_stream


class TestEventFiles:

    def test_binary_keeps_window(self, rng, tmp_path):
        stream = random_stream(rng, 50)
        path = tmp_path / 'events.bin'
        utils.write_events(str(path), stream)
        assert path.stat().st_size == 36 + 16 * 50
        assert utils.read_events(str(path)) == stream

    def test_text_format(self, tmp_path):
        stream = EventStream([3, 5], [1, 0], [2, 2], [1, -1], 4, 3)
        path = tmp_path / 'events.csv'
        utils.write_events(str(path), stream)
        assert path.read_text() == 't_us,x,y,p\n3,1,2,1\n5,0,2,-1\n'
        loaded = utils.read_events(str(path), width=4, height=3)
        assert loaded == stream

    def test_text_window_override(self, tmp_path):
        stream = EventStream([300, 500, 900], [1, 0, 2], [2, 2, 0], [1, -1, 1], 4, 3, t_start=0, t_end=1000)
        path = tmp_path / 'events.csv'
        utils.write_events(str(path), stream)
        assert (utils.read_events(str(path), 4, 3).t_start, utils.read_events(str(path), 4, 3).t_end) == (300, 900)
        assert utils.read_events(str(path), 4, 3, t_start=0, t_end=1000) == stream

    def test_window_override_drops_outside_events(self, tmp_path):
        path = tmp_path / 'events.bin'
        utils.write_events(str(path), EventStream([0, 400, 1200], [0, 1, 2], [0, 0, 0], [1, 1, -1], 4, 1, 0, 1200))
        loaded = utils.read_events(str(path), t_end=1000)
        assert_array_equal(loaded.t, [0, 400])
        assert (loaded.t_start, loaded.t_end) == (0, 1000)
        with pytest.raises(ValueError):
            utils.read_events(str(path), t_start=600, t_end=500)

    def test_text_infers_sensor_size(self, tmp_path):
        path = tmp_path / 'events.csv'
        path.write_text('t_us,x,y,p\n0,4,1,1\n')
        assert utils.read_events(str(path)).shape == (2, 5)

    def test_text_parse_error_has_line(self, tmp_path):
        path = tmp_path / 'events.csv'
        path.write_text('t_us,x,y,p\n0,1,1,1\n2,1,one,1\n')
        with pytest.raises(ParseError) as error:
            utils.read_events(str(path))
        assert error.value.line == 3
        assert ':3:' in str(error.value)

    def test_text_bad_polarity(self, tmp_path):
        path = tmp_path / 'events.csv'
        path.write_text('t_us,x,y,p\n0,1,1,0\n')
        with pytest.raises(ParseError):
            utils.read_events(str(path))

    def test_truncated_binary(self, rng, tmp_path):
        path = tmp_path / 'events.bin'
        utils.write_events(str(path), random_stream(rng, 10))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ParseError):
            utils.read_events(str(path))


class TestFrameFiles:

    def test_float_frame(self, rng, tmp_path):
        frame = rng.random((5, 7))
        path = str(tmp_path / 'frame.pfg')
        utils.write_frame(path, frame)
        assert open(path, 'rb').read().startswith(b'PF-GRAY\n7 5\n')
        assert_allclose(utils.read_frame(path), frame, atol=1e-7)

    def test_pgm(self, tmp_path):
        frame = np.array([[0.0, 0.5], [1.0, 0.25]])
        path = str(tmp_path / 'frame.pgm')
        utils.write_frame(path, frame)
        assert open(path, 'rb').read() == b'P5\n2 2\n255\n' + bytes([0, 128, 255, 64])
        assert_allclose(utils.read_frame(path), [[0, 128 / 255], [1, 64 / 255]])

    def test_pgm_with_comment(self, tmp_path):
        path = tmp_path / 'frame.pgm'
        path.write_bytes(b'P5\n# made by hand\n3 1\n255\n' + bytes([0, 51, 255]))
        assert_allclose(utils.read_frame(str(path)), [[0, 0.2, 1]])

    def test_wrong_raster_size(self, tmp_path):
        path = tmp_path / 'frame.pgm'
        path.write_bytes(b'P5\n3 3\n255\n' + bytes(4))
        with pytest.raises(ParseError):
            utils.read_frame(str(path))

    def test_unknown_format(self, tmp_path):
        path = tmp_path / 'frame.png'
        path.write_bytes(b'\x89PNG....')
        with pytest.raises(ParseError):
            utils.read_frame(str(path))

    def test_sequence_manifest(self, rng, tmp_path):
        frames = [rng.random((4, 4)) for _ in range(3)]
        manifest = utils.write_sequence(str(tmp_path / 'seq'), frames, [0, 7000, 14000])
        assert open(manifest).read().splitlines()[1:] == ['frame_0000.pfg 0', 'frame_0001.pfg 7000', 'frame_0002.pfg 14000']
        seq = utils.read_sequence(str(tmp_path / 'seq'))
        assert_array_equal(seq.timestamps, [0, 7000, 14000])
        assert_allclose(seq.frames, frames, atol=1e-7)

    def test_manifest_parse_error(self, tmp_path):
        (tmp_path / 'manifest.txt').write_text('# file timestamp_us\nframe_0000.pfg\n')
        with pytest.raises(ParseError) as error:
            utils.read_sequence(str(tmp_path))
        assert error.value.line == 2


class TestFlowFiles:

    def test_flow_file(self, rng, tmp_path):
        flow = FlowField(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        path = str(tmp_path / 'flow.flo')
        utils.write_flow(path, flow)
        data = open(path, 'rb').read()
        assert data[:8] == b'FLO-GRAY' and len(data) == 16 + 3 * 4 * 8
        # interleaved (u, v) pairs
        assert np.frombuffer(data[16:24], dtype='<f4')[1] == np.float32(flow.v[0, 0])
        loaded = utils.read_flow(path)
        assert_allclose(loaded.u, flow.u, rtol=1e-6)
        assert_allclose(loaded.v, flow.v, rtol=1e-6)

    def test_flow_directory(self, tmp_path):
        flows = [FlowField.constant((2, 2), m, -m) for m in range(3)]
        utils.write_flows(str(tmp_path), flows)
        assert utils.read_flows(str(tmp_path)) == flows

    def test_missing_flows(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            utils.read_flows(str(tmp_path))

    def test_bad_flow_header(self, tmp_path):
        path = tmp_path / 'flow.flo'
        path.write_bytes(b'NOT-FLOW' + bytes(8))
        with pytest.raises(ParseError):
            utils.read_flow(str(path))


class TestReports:

    def test_loss_trace(self, tmp_path):
        report = SolverReport([0.5, 0.25], [0.3, 0.2], [0.2, 0.05], 0.2, 0.05, 2)
        path = tmp_path / 'trace.csv'
        utils.write_loss_trace(str(path), report)
        assert path.read_text() == 'iter,total,blur,photo\n1,0.5,0.3,0.2\n2,0.25,0.2,0.05\n'

    def test_eval_report(self, rng, tmp_path):
        frames = [rng.random((12, 12)) for _ in range(7)]
        path = tmp_path / 'eval.csv'
        utils.write_eval_report(str(path), evaluate(frames, frames))
        lines = path.read_text().splitlines()
        assert lines[0] == 'frame,psnr,ssim'
        assert len(lines) == 1 + 7 + 2
        assert lines[-2].startswith('mean,99.000000,')
        assert lines[-1].startswith('single[3],')

    def test_eval_report_without_ssim(self, rng, tmp_path):
        frames = [rng.random((12, 12)) for _ in range(2)]
        path = tmp_path / 'eval.csv'
        utils.write_eval_report(str(path), evaluate(frames, frames), include_ssim=False)
        assert path.read_text().splitlines()[:2] == ['frame,psnr', '0,99.000000']


class TestPreviews:

    def test_png(self, rng, tmp_path):
        path = tmp_path / 'frame.png'
        utils.save_png(str(path), rng.random((8, 8)))
        assert path.read_bytes()[:4] == b'\x89PNG'

    def test_flow_colours(self):
        rgb = utils.flow_to_rgb(FlowField(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])))
        assert_allclose(rgb[0, 0], [1, 0, 0])
        assert_allclose(rgb[0, 1], [0, 0, 0])
