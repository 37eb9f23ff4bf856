""" Command-line interface running the deblurring pipeline from config files and flags.

Usage:
    evdeblur simulate --out run                     [scene, events, blurry frame, ground truth]
    evdeblur deblur --events run/events.bin --blur run/blur.pfg --out run
    evdeblur eval --frames run/deblurred --truth run/truth --out run

Every command is a pure function of its config, input files and seed.
Exit codes: 0 success, 2 argument error, 3 I/O or parse error, 4 numerical error.
"""
import argparse
import logging
import os
import sys
from configparser import ConfigParser
from dataclasses import dataclass

import numpy as np

from evdeblur import utils
from evdeblur.deblur import LossWeights, SolverConfig, reblur, solve
from evdeblur.errors import NumericalError, ParseError
from evdeblur.events import interval_edges, time_surface
from evdeblur.metrics import evaluate
from evdeblur.motion import PlmModel, flows_from_events, lm_model
from evdeblur.simulator import (SimConfig, generate_scene, ground_truth_frames, ground_truth_model, inject_spatial_noise,
                                inject_temporal_jitter, parse_motion, simulate_events, synthesize_blur)

log = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.realpath(__file__)), 'config_default.ini')
SECTION = 'pipeline'

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


#################
# CONFIGURATION #
#################

def load_config(config_path=None, overrides=None):
    """ Read the package defaults, then an optional user config, then explicit overrides.

    A user config without a section header is read as if it were the [pipeline] section.

    Returns:
        configparser.SectionProxy for [pipeline]
    """
    config = ConfigParser()
    config.read(DEFAULT_CONFIG)
    if config_path is not None:
        with open(config_path, 'r') as f:
            text = f.read()
        if not any(line.strip().startswith('[') for line in text.splitlines()):
            text = '[{}]\n{}'.format(SECTION, text)
        config.read_string(text, source=str(config_path))
        if SECTION not in config:
            raise ValueError("Config file {} has no [{}] section.".format(config_path, SECTION))
        unknown = set(config[SECTION]) - set(config.defaults()) - set(_default_keys())
        if unknown:
            raise ValueError('Unknown config keys in {}: {}.'.format(config_path, ', '.join(sorted(unknown))))
    for key, value in (overrides or {}).items():
        config[SECTION][key] = str(value)
    return config[SECTION]


def _default_keys():
    config = ConfigParser()
    config.read(DEFAULT_CONFIG)
    return list(config[SECTION])


def _optional(section, key, cast):
    value = section.get(key, '').strip()
    if not value:
        return None
    try:
        return cast(value)
    except ValueError:
        raise ValueError("Config key '{}' must be {}, got '{}'.".format(key, cast.__name__, value))


def _path(section, key):
    return section.get(key, '').strip() or None


@dataclass
class PipelineConfig:
    """ Fully parsed pipeline settings. Input paths are None when unset. """
    seed: int
    out: str
    png: bool
    pattern: str
    size: int
    square: int
    edge_sigma: float
    n_frames: int
    motion: str
    frame_interval_us: int
    sim: SimConfig
    ba_rate: float
    fn_prob: float
    max_bandwidth: float
    arrival_jitter_us: float
    write_csv: bool
    m_count: int
    k: int
    window_radius: int
    motion_model: str
    solver: SolverConfig
    trace: bool
    events: str
    t_start: int
    t_end: int
    blur: str
    flows: str
    frames: str
    truth: str
    t_ref: int
    decay: float
    psnr: bool
    ssim: bool

    @classmethod
    def from_section(cls, section):
        """ Parse and validate a [pipeline] section. """
        seed = section.getint('seed')
        m_count, k = section.getint('m_count'), section.getint('k')
        if m_count < 1 or k < 1:
            raise ValueError('m_count and k must be positive, got m_count={}, k={}.'.format(m_count, k))
        n_latent = _optional(section, 'n_latent', int)
        if n_latent is not None and n_latent != m_count * k:
            raise ValueError('n_latent={} is inconsistent with m_count * k = {} * {} = {}.'.format(n_latent, m_count, k, m_count * k))
        motion_model = section.get('motion_model').strip().lower()
        if motion_model not in ('plm', 'lm'):
            raise ValueError("motion_model must be 'plm' or 'lm', got '{}'.".format(motion_model))

        weights = LossWeights(alpha=section.getfloat('alpha'), beta=section.getfloat('beta'),
                              gamma=section.getfloat('gamma'), delta=section.getfloat('delta'))
        return cls(
            seed=seed,
            out=section.get('out'),
            png=section.getboolean('png'),
            pattern=section.get('pattern').strip(),
            size=section.getint('size'),
            square=section.getint('square'),
            edge_sigma=section.getfloat('edge_sigma'),
            n_frames=section.getint('n_frames'),
            motion=section.get('motion'),
            frame_interval_us=section.getint('frame_interval_us'),
            sim=SimConfig(contrast_threshold=section.getfloat('contrast_threshold'),
                          threshold_sigma=section.getfloat('threshold_sigma'),
                          log_eps=section.getfloat('log_eps'), rng_seed=seed),
            ba_rate=section.getfloat('ba_rate'),
            fn_prob=section.getfloat('fn_prob'),
            max_bandwidth=section.getfloat('max_bandwidth'),
            arrival_jitter_us=section.getfloat('arrival_jitter_us'),
            write_csv=section.getboolean('write_csv'),
            m_count=m_count,
            k=k,
            window_radius=section.getint('window_radius'),
            motion_model=motion_model,
            solver=SolverConfig(iterations=section.getint('iterations'), step_size=section.getfloat('step_size'),
                                charbonnier_eps=section.getfloat('charbonnier_eps'), weights=weights, rng_seed=seed,
                                photometric=section.get('photometric').strip().lower()),
            trace=section.getboolean('trace'),
            events=_path(section, 'events'),
            t_start=_optional(section, 't_start', int),
            t_end=_optional(section, 't_end', int),
            blur=_path(section, 'blur'),
            flows=_path(section, 'flows'),
            frames=_path(section, 'frames'),
            truth=_path(section, 'truth'),
            t_ref=_optional(section, 't_ref', int),
            decay=_optional(section, 'decay', float),
            psnr=section.getboolean('psnr'),
            ssim=section.getboolean('ssim'),
        )

    def require(self, *keys):
        """ Check that the named input paths are set and exist; returns them in order. """
        paths = []
        for key in keys:
            path = getattr(self, key)
            if path is None:
                raise ValueError("Missing input '{0}': pass --{0} or set it in the config file.".format(key))
            if not os.path.exists(path):
                raise FileNotFoundError("Input '{}' not found: {}".format(key, path))
            paths.append(path)
        return paths if len(paths) > 1 else paths[0]

    def output(self, *parts):
        """ Path inside the output directory (created on demand). """
        utils.ensure_directory(self.out)
        return os.path.join(self.out, *parts)


############
# COMMANDS #
############

def cmd_simulate(cfg):
    """ Render a moving scene, simulate its events (with optional noise) and write events, blur and ground truth. """
    motion = parse_motion(cfg.motion)
    seq = generate_scene(cfg.pattern, motion, cfg.n_frames, (cfg.size, cfg.size), cfg.frame_interval_us,
                         square=cfg.square, rng_seed=cfg.seed, edge_sigma=cfg.edge_sigma)
    stream = simulate_events(seq, cfg.sim)
    if cfg.ba_rate > 0 or cfg.fn_prob > 0:
        stream = inject_spatial_noise(stream, cfg.ba_rate, cfg.fn_prob, rng_seed=cfg.seed)
    if cfg.max_bandwidth > 0:
        stream = inject_temporal_jitter(stream, cfg.max_bandwidth, rng_seed=cfg.seed, arrival_jitter_us=cfg.arrival_jitter_us)

    utils.write_events(cfg.output('events.bin'), stream)
    if cfg.write_csv:
        utils.write_events(cfg.output('events.csv'), stream)
    blur = synthesize_blur(seq)
    utils.write_frame(cfg.output('blur.pfg'), blur)
    utils.write_sequence(cfg.output('frames'), seq.frames, seq.timestamps)

    if cfg.n_frames % cfg.m_count:
        log.warning('n_frames=%d is not a multiple of m_count=%d; ground truth frames and flows not written', cfg.n_frames, cfg.m_count)
    else:
        if cfg.n_frames != cfg.m_count * cfg.k:
            # Flow files hold per-interval displacements, so deblurring with a different K still reads them correctly
            log.info('n_frames=%d differs from m_count * k = %d; ground truth uses K=%d', cfg.n_frames, cfg.m_count * cfg.k,
                     cfg.n_frames // cfg.m_count)
        k = cfg.n_frames // cfg.m_count
        utils.write_sequence(cfg.output('truth'), ground_truth_frames(seq, cfg.m_count), seq.timestamps[::k])
        utils.write_flows(cfg.output('gt_flows'), ground_truth_model(seq, cfg.m_count).interval_flows())
    if cfg.png:
        utils.save_png(cfg.output('blur.png'), blur)
    log.info('simulate: %d frames, %d events written to %s', len(seq), len(stream), cfg.out)
    return EXIT_OK


def cmd_blur(cfg):
    """ Average a frame sequence on disk into one blurry frame. """
    seq = utils.read_sequence(cfg.require('frames'))
    blur = synthesize_blur(seq)
    utils.write_frame(cfg.output('blur.pfg'), blur)
    if cfg.png:
        utils.save_png(cfg.output('blur.png'), blur)
    log.info('blur: averaged %d frames', len(seq))
    return EXIT_OK


def _read_events(cfg, path=None):
    """ Event stream from --events, with the exposure window overridden by t_start / t_end when set. """
    return utils.read_events(path or cfg.require('events'), t_start=cfg.t_start, t_end=cfg.t_end)


def cmd_flow(cfg):
    """ Estimate per-interval flows from an event file. """
    stream = _read_events(cfg)
    flows = flows_from_events(stream, cfg.m_count, cfg.window_radius)
    utils.write_flows(cfg.output('flows'), flows)
    if cfg.png:
        for m, flow in enumerate(flows):
            utils.save_flow_png(cfg.output('flows', 'flow_{:02d}.png'.format(m)), flow)
    return EXIT_OK


def _load_model(cfg, shape, stream=None):
    """ Motion model from --flows files, else estimated from the event stream. """
    if cfg.flows is not None:
        path = cfg.require('flows')
        log.info('flow source: file %s', path)
        interval_flows = utils.read_flows(path)
        if len(interval_flows) != cfg.m_count:
            raise ValueError('Found {} flow files in {} but m_count is {}.'.format(len(interval_flows), path, cfg.m_count))
    elif stream is not None:
        log.info('flow source: estimated from events')
        interval_flows = flows_from_events(stream, cfg.m_count, cfg.window_radius)
    else:
        raise ValueError("Missing input 'flows': pass --flows or set it in the config file.")
    if any(flow.shape != tuple(shape) for flow in interval_flows):
        raise ValueError('Flow shape {} does not match frame shape {}.'.format(interval_flows[0].shape, tuple(shape)))

    model = PlmModel.from_interval_flows(interval_flows, cfg.k)
    if cfg.motion_model == 'lm':
        model = lm_model(model)
    log.info('motion model: %s (%r)', cfg.motion_model, model)
    return model


def _interval_starts(stream, m_count):
    edges = interval_edges(stream.t_start, stream.t_end, m_count)[:-1]
    if np.all(np.diff(edges) > 0):
        return edges
    return stream.t_start + np.arange(m_count)


def cmd_deblur(cfg):
    """ Recover M sharp frames from a blurry frame and its events. """
    events_path, blur_path = cfg.require('events', 'blur')
    stream = _read_events(cfg, events_path)
    observed = utils.read_frame(blur_path)
    if observed.shape != stream.shape:
        raise ValueError('Blurry frame shape {} does not match event sensor shape {}.'.format(observed.shape, stream.shape))

    model = _load_model(cfg, observed.shape, stream)
    frames, report = solve(observed, model, cfg.solver)

    utils.write_sequence(cfg.output('deblurred'), frames, _interval_starts(stream, model.m_count))
    utils.write_flows(cfg.output('deblur_flows'), model.interval_flows())
    if cfg.trace:
        utils.write_loss_trace(cfg.output('loss_trace.csv'), report)
    if cfg.png:
        for m, frame in enumerate(frames):
            utils.save_png(cfg.output('deblurred', 'frame_{:04d}.png'.format(m)), frame)
    log.info('deblur: final blur loss %.6f, photometric loss %.6f', report.blur_loss_final, report.photo_loss_final)
    return EXIT_OK


def cmd_reblur(cfg):
    """ Re-render the blurry frame from sharp frames and interval flows. """
    frames_path, _ = cfg.require('frames', 'flows')
    seq = utils.read_sequence(frames_path)
    if len(seq) != cfg.m_count:
        raise ValueError('Sequence holds {} frames but m_count is {}.'.format(len(seq), cfg.m_count))
    model = _load_model(cfg, seq.shape)
    reblurred = reblur(list(seq.frames), model)
    utils.write_frame(cfg.output('reblurred.pfg'), reblurred)
    if cfg.png:
        utils.save_png(cfg.output('reblurred.png'), reblurred)
    return EXIT_OK


def cmd_timesurface(cfg):
    """ Render the time surface of an event file at t_ref (default: end of the stream window). """
    stream = _read_events(cfg)
    t_ref = stream.t_end if cfg.t_ref is None else cfg.t_ref
    surface = time_surface(stream, t_ref, cfg.decay)
    utils.write_frame(cfg.output('timesurface.pfg'), surface)
    if cfg.png:
        utils.save_png(cfg.output('timesurface.png'), surface, cmap='viridis')
    log.info('timesurface: %d events up to t=%d us', int(np.searchsorted(stream.t, t_ref, side='right')), t_ref)
    return EXIT_OK


def cmd_eval(cfg):
    """ Score a recovered sequence against ground truth, writing eval.csv. """
    frames_path, truth_path = cfg.require('frames', 'truth')
    frames = utils.read_sequence(frames_path)
    truth = utils.read_sequence(truth_path)
    report = evaluate(list(frames.frames), list(truth.frames))
    utils.write_eval_report(cfg.output('eval.csv'), report, include_psnr=cfg.psnr, include_ssim=cfg.ssim)
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'blur': cmd_blur,
    'flow': cmd_flow,
    'deblur': cmd_deblur,
    'reblur': cmd_reblur,
    'timesurface': cmd_timesurface,
    'eval': cmd_eval,
}


##########
# PARSER #
##########

def _add_window_arguments(parser):
    parser.add_argument('--t-start', dest='t_start', type=int, help='exposure window start [us], overrides the event file')
    parser.add_argument('--t-end', dest='t_end', type=int, help='exposure window end [us], overrides the event file')


def build_parser():
    """ Argument parser. Option destinations are config keys; unset options leave the config untouched. """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='config file (keys as in config_default.ini)')
    common.add_argument('--seed', type=int, help='seed for every random draw')
    common.add_argument('--out', help='output directory')
    common.add_argument('--png', action='store_const', const='true', help='also write PNG previews')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--quiet', action='store_true', help='only log warnings and errors')
    verbosity.add_argument('-v', '--verbose', action='store_true', help='log per-iteration detail')

    parser = argparse.ArgumentParser(prog='evdeblur', description='Event-based motion deblurring toolkit.')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    simulate = commands.add_parser('simulate', parents=[common], help='simulate a scene, its events and blur')
    simulate.add_argument('--pattern', choices=['checker', 'ramp', 'texture'])
    simulate.add_argument('--size', type=int, help='frame side [pixels]')
    simulate.add_argument('--edge-sigma', dest='edge_sigma', type=float, help='checker edge softening [pixels]')
    simulate.add_argument('--n-frames', dest='n_frames', type=int)
    simulate.add_argument('--motion', help="velocity schedule 'frames:vx,vy;...' [pixels / frame]")
    simulate.add_argument('--contrast-threshold', dest='contrast_threshold', type=float)
    simulate.add_argument('--threshold-sigma', dest='threshold_sigma', type=float)
    simulate.add_argument('--ba-rate', dest='ba_rate', type=float, help='background activity [events / pixel / s]')
    simulate.add_argument('--fn-prob', dest='fn_prob', type=float, help='event drop probability')
    simulate.add_argument('--max-bandwidth', dest='max_bandwidth', type=float, help='read-out limit [events / s]')
    simulate.add_argument('--m-count', dest='m_count', type=int)
    simulate.add_argument('--csv', dest='write_csv', action='store_const', const='true', help='also write events.csv')

    blur = commands.add_parser('blur', parents=[common], help='average a frame sequence into a blurry frame')
    blur.add_argument('--frames', help='sequence manifest or directory')

    flow = commands.add_parser('flow', parents=[common], help='estimate interval flows from events')
    flow.add_argument('--events')
    _add_window_arguments(flow)
    flow.add_argument('--m-count', dest='m_count', type=int)
    flow.add_argument('--window-radius', dest='window_radius', type=int)

    deblur = commands.add_parser('deblur', parents=[common], help='recover sharp frames from blur and events')
    deblur.add_argument('--events')
    _add_window_arguments(deblur)
    deblur.add_argument('--blur')
    deblur.add_argument('--flows', help='directory of .flo interval flows (skips estimation)')
    deblur.add_argument('--m-count', dest='m_count', type=int)
    deblur.add_argument('--k', type=int, help='latent frames per interval')
    deblur.add_argument('--n-latent', dest='n_latent', type=int)
    deblur.add_argument('--window-radius', dest='window_radius', type=int)
    deblur.add_argument('--motion-model', dest='motion_model', choices=['plm', 'lm'])
    deblur.add_argument('--iterations', type=int)
    deblur.add_argument('--step-size', dest='step_size', type=float)
    deblur.add_argument('--photometric', choices=['forward', 'literal'], help='photometric term the solver descends')

    reblur_parser = commands.add_parser('reblur', parents=[common], help='re-render blur from frames and flows')
    reblur_parser.add_argument('--frames')
    reblur_parser.add_argument('--flows')
    reblur_parser.add_argument('--m-count', dest='m_count', type=int)
    reblur_parser.add_argument('--k', type=int)
    reblur_parser.add_argument('--motion-model', dest='motion_model', choices=['plm', 'lm'])

    surface = commands.add_parser('timesurface', parents=[common], help='render an event time surface')
    surface.add_argument('--events')
    _add_window_arguments(surface)
    surface.add_argument('--t-ref', dest='t_ref', type=int, help='reference time [us]')
    surface.add_argument('--decay', type=float, help='decay constant [us]')

    evaluation = commands.add_parser('eval', parents=[common], help='score frames against ground truth')
    evaluation.add_argument('--frames')
    evaluation.add_argument('--truth')
    evaluation.add_argument('--no-psnr', dest='psnr', action='store_const', const='false')
    evaluation.add_argument('--no-ssim', dest='ssim', action='store_const', const='false')
    return parser


def _configure_logging(args):
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger('evdeblur').setLevel(level)


def main(argv=None):
    """ Run one command; returns the process exit code. """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return error.code if error.code is not None else EXIT_OK
    _configure_logging(args)

    keys = set(_default_keys())
    overrides = {key: value for key, value in vars(args).items() if key in keys and value is not None}
    try:
        cfg = PipelineConfig.from_section(load_config(args.config, overrides))
        return COMMANDS[args.command](cfg)
    except NumericalError as error:
        log.error('numerical error: %s', error)
        return EXIT_NUMERICAL
    except ParseError as error:
        log.error('parse error: %s', error)
        return EXIT_IO
    except OSError as error:
        log.error('I/O error: %s', error)
        return EXIT_IO
    except ValueError as error:
        log.error('argument error: %s', error)
        return EXIT_ARGUMENT


if __name__ == '__main__':
    sys.exit(main())
