""" Utils for reading and writing evdeblur data files, plus PNG previews.

File formats:
    events, text   : header 't_us,x,y,p' then one 't,x,y,p' line per event (decimal integers, p = 1 or -1)
    events, binary : 'EVT1', <u4 width, <u4 height, <u8 t_start, <u8 t_end, <u8 count, then count 16-byte records
                     (<u8 t, <u2 x, <u2 y, i1 p, 3 pad bytes)
    frame, 8-bit   : portable graymap 'P5' (.pgm), maxval 255
    frame, float   : 'PF-GRAY\\n<width> <height>\\n' then <f4 raster, row-major (.pfg)
    flow           : 'FLO-GRAY', <u4 width, <u4 height, then (u, v) <f4 pairs, row-major (.flo)
    sequence       : numbered frame files plus 'manifest.txt' listing '<file> <timestamp_us>' per line
"""
import logging
import os
import struct
from glob import glob

import numpy as np
from matplotlib import colors
from matplotlib import image as mpimg

from evdeblur.errors import ParseError
from evdeblur.events import EventStream
from evdeblur.motion import FlowField
from evdeblur.simulator import FrameSequence

log = logging.getLogger(__name__)

EVENT_TEXT_HEADER = 't_us,x,y,p'
EVENT_MAGIC = b'EVT1'
EVENT_HEADER = struct.Struct('<4sIIQQQ')
EVENT_RECORD = np.dtype({'names': ['t', 'x', 'y', 'p'], 'formats': ['<u8', '<u2', '<u2', 'i1'],
                         'offsets': [0, 8, 10, 12], 'itemsize': 16})

FLOAT_FRAME_MAGIC = 'PF-GRAY'
FLOW_MAGIC = b'FLO-GRAY'
FLOW_HEADER = struct.Struct('<8sII')

MANIFEST_NAME = 'manifest.txt'


def ensure_directory(path):
    """ Create the directory (and parents) if missing; returns the path. """
    os.makedirs(path, exist_ok=True)
    return path


###############
# EVENT FILES #
###############

def write_events(file_path, stream):
    """ Save a stream, as binary for a '.bin' extension and as text otherwise. """
    if str(file_path).endswith('.bin'):
        records = np.zeros(len(stream), dtype=EVENT_RECORD)
        records['t'], records['x'], records['y'], records['p'] = stream.t, stream.x, stream.y, stream.p
        with open(file_path, 'wb') as f:
            f.write(EVENT_HEADER.pack(EVENT_MAGIC, stream.width, stream.height, stream.t_start, stream.t_end, len(stream)))
            f.write(records.tobytes())
    else:
        with open(file_path, 'w', newline='\n') as f:
            f.write(EVENT_TEXT_HEADER + '\n')
            for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
                f.write('{},{},{},{}\n'.format(t, x, y, p))
    log.debug('Wrote %d events to %s', len(stream), file_path)


def read_events(file_path, width=None, height=None, t_start=None, t_end=None):
    """ Load a stream written by write_events (format detected from the file's first bytes).

    Text files carry no exposure window, so it defaults to the first and last timestamps. Passing t_start and/or
    t_end sets the window explicitly for either format; events outside it are dropped.

    Args:
        file_path (str): event file
        width, height (int, optional): sensor size for text files; inferred from the largest coordinates if omitted
        t_start, t_end (int, optional): exposure window override [us]
    """
    with open(file_path, 'rb') as f:
        magic = f.read(len(EVENT_MAGIC))
    if magic == EVENT_MAGIC:
        stream = _read_binary_events(file_path)
    else:
        stream = _read_text_events(file_path, width, height)
    if t_start is None and t_end is None:
        return stream

    t_start = stream.t_start if t_start is None else int(t_start)
    t_end = stream.t_end if t_end is None else int(t_end)
    if t_start < 0 or t_end < t_start:
        raise ValueError('Exposure window must satisfy 0 <= t_start <= t_end, got [{}, {}].'.format(t_start, t_end))
    inside = (stream.t >= t_start) & (stream.t <= t_end)
    if not np.all(inside):
        log.info('Dropped %d of %d events outside the window [%d, %d] us', np.count_nonzero(~inside), len(stream), t_start, t_end)
    return stream.select(inside, t_start=t_start, t_end=t_end)


def _read_binary_events(file_path):
    with open(file_path, 'rb') as f:
        data = f.read()
    if len(data) < EVENT_HEADER.size:
        raise ParseError(file_path, 'truncated header ({} bytes, need {})'.format(len(data), EVENT_HEADER.size))
    _, width, height, t_start, t_end, count = EVENT_HEADER.unpack_from(data)
    expected = EVENT_HEADER.size + count * EVENT_RECORD.itemsize
    if len(data) != expected:
        raise ParseError(file_path, 'header declares {} events ({} bytes) but file holds {} bytes'.format(count, expected, len(data)))
    records = np.frombuffer(data, dtype=EVENT_RECORD, count=count, offset=EVENT_HEADER.size)
    try:
        return EventStream(records['t'].astype(np.int64), records['x'], records['y'], records['p'], width, height, t_start, t_end)
    except ValueError as error:
        raise ParseError(file_path, str(error))


def _read_text_events(file_path, width, height):
    columns = ([], [], [], [])
    with open(file_path, 'r') as f:
        header = f.readline().strip()
        if header != EVENT_TEXT_HEADER:
            raise ParseError(file_path, "expected header '{}', found '{}'".format(EVENT_TEXT_HEADER, header), line=1)
        for line_number, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(',')
            try:
                if len(fields) != 4:
                    raise ValueError
                values = [int(field) for field in fields]
            except ValueError:
                raise ParseError(file_path, "expected 4 integers 't,x,y,p', found '{}'".format(line), line=line_number)
            if values[3] not in (1, -1):
                raise ParseError(file_path, 'polarity must be 1 or -1, found {}'.format(values[3]), line=line_number)
            for column, value in zip(columns, values):
                column.append(value)

    t, x, y, p = (np.array(column, dtype=np.int64) for column in columns)
    width = width if width is not None else (int(x.max()) + 1 if x.size else 1)
    height = height if height is not None else (int(y.max()) + 1 if y.size else 1)
    try:
        return EventStream(t, x, y, p, width, height)
    except ValueError as error:
        raise ParseError(file_path, str(error))


###############
# FRAME FILES #
###############

def write_frame(file_path, frame):
    """ Save a frame as 8-bit PGM ('.pgm') or float32 PF-GRAY (any other extension, conventionally '.pfg'). """
    frame = np.asarray(frame, dtype=np.float64)
    height, width = frame.shape
    if str(file_path).endswith('.pgm'):
        raster = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)
        header = 'P5\n{} {}\n255\n'.format(width, height)
    else:
        raster = frame.astype('<f4')
        header = '{}\n{} {}\n'.format(FLOAT_FRAME_MAGIC, width, height)
    with open(file_path, 'wb') as f:
        f.write(header.encode('ascii'))
        f.write(raster.tobytes())


def read_frame(file_path):
    """ Load a PGM (P5, maxval <= 255) or PF-GRAY frame as float64 in [0, 1] (PGM) or as stored (PF-GRAY). """
    with open(file_path, 'rb') as f:
        data = f.read()
    if data.startswith(FLOAT_FRAME_MAGIC.encode('ascii')):
        tokens, offset = _header_tokens(file_path, data, 3)
        width, height = _positive_ints(file_path, tokens[1:])
        dtype, scale = np.dtype('<f4'), 1.0
    elif data.startswith(b'P5'):
        tokens, offset = _header_tokens(file_path, data, 4)
        width, height, maxval = _positive_ints(file_path, tokens[1:])
        if maxval > 255:
            raise ParseError(file_path, 'only 8-bit graymaps are supported, maxval is {}'.format(maxval))
        dtype, scale = np.dtype('u1'), 1.0 / maxval
    else:
        raise ParseError(file_path, 'unknown frame format (expected P5 or PF-GRAY header)')

    size = width * height * dtype.itemsize
    if len(data) - offset != size:
        raise ParseError(file_path, 'raster holds {} bytes, expected {} for {}x{}'.format(len(data) - offset, size, width, height))
    return np.frombuffer(data, dtype=dtype, offset=offset).astype(np.float64).reshape(height, width) * scale


def _header_tokens(file_path, data, count):
    """ Split the first `count` whitespace-separated header tokens; returns them and the raster offset. """
    tokens, position = [], 0
    while len(tokens) < count:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if data[position:position + 1] == b'#':
            position = data.find(b'\n', position) + 1 or len(data)
            continue
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        if start == position:
            raise ParseError(file_path, 'truncated header')
        tokens.append(data[start:position].decode('ascii', 'replace'))
    # Exactly one whitespace byte separates the header from the raster
    return tokens, position + 1


def _positive_ints(file_path, tokens):
    try:
        values = [int(token) for token in tokens]
    except ValueError:
        raise ParseError(file_path, 'bad header values {}'.format(tokens))
    if any(value < 1 for value in values):
        raise ParseError(file_path, 'header values must be positive, got {}'.format(values))
    return values


def write_sequence(directory, frames, timestamps, extension='.pfg', prefix='frame'):
    """ Save numbered frames and a manifest listing each file with its timestamp [us]. Returns the manifest path. """
    ensure_directory(directory)
    lines = []
    for i, (frame, t) in enumerate(zip(frames, timestamps)):
        name = '{}_{:04d}{}'.format(prefix, i, extension)
        write_frame(os.path.join(directory, name), frame)
        lines.append('{} {}\n'.format(name, int(t)))
    manifest = os.path.join(directory, MANIFEST_NAME)
    with open(manifest, 'w', newline='\n') as f:
        f.write('# file timestamp_us\n')
        f.writelines(lines)
    return manifest


def read_sequence(path):
    """ Load a FrameSequence from a manifest file or a directory containing one. """
    manifest = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
    directory = os.path.dirname(manifest)
    frames, timestamps = [], []
    with open(manifest, 'r') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split()
            try:
                name, t = fields
                timestamps.append(int(t))
            except ValueError:
                raise ParseError(manifest, "expected '<file> <timestamp_us>', found '{}'".format(line), line=line_number)
            frames.append(read_frame(os.path.join(directory, name)))
    if not frames:
        raise ParseError(manifest, 'manifest lists no frames')
    try:
        return FrameSequence(frames, timestamps)
    except ValueError as error:
        raise ParseError(manifest, str(error))


##############
# FLOW FILES #
##############

def write_flow(file_path, flow):
    """ Save a FlowField in FLO-GRAY format. """
    pairs = np.stack([flow.u, flow.v], axis=-1).astype('<f4')
    with open(file_path, 'wb') as f:
        f.write(FLOW_HEADER.pack(FLOW_MAGIC, flow.width, flow.height))
        f.write(pairs.tobytes())


def read_flow(file_path):
    """ Load a FlowField from a FLO-GRAY file. """
    with open(file_path, 'rb') as f:
        data = f.read()
    if len(data) < FLOW_HEADER.size or not data.startswith(FLOW_MAGIC):
        raise ParseError(file_path, 'missing FLO-GRAY header')
    _, width, height = FLOW_HEADER.unpack_from(data)
    expected = FLOW_HEADER.size + width * height * 8
    if len(data) != expected:
        raise ParseError(file_path, 'file holds {} bytes, expected {} for {}x{}'.format(len(data), expected, width, height))
    pairs = np.frombuffer(data, dtype='<f4', offset=FLOW_HEADER.size).astype(np.float64).reshape(height, width, 2)
    try:
        return FlowField(pairs[..., 0], pairs[..., 1])
    except ValueError as error:
        raise ParseError(file_path, str(error))


def write_flows(directory, flows, prefix='flow'):
    """ Save a list of flows as numbered '.flo' files. """
    ensure_directory(directory)
    for i, flow in enumerate(flows):
        write_flow(os.path.join(directory, '{}_{:02d}.flo'.format(prefix, i)), flow)


def read_flows(directory):
    """ Load all '.flo' files of a directory in name order. """
    paths = sorted(glob(os.path.join(directory, '*.flo')))
    if not paths:
        raise FileNotFoundError('No .flo files found in {}'.format(directory))
    return [read_flow(path) for path in paths]


#################
# REPORT FILES  #
#################

def write_loss_trace(file_path, report):
    """ Save a SolverReport trace as CSV 'iter,total,blur,photo'. """
    with open(file_path, 'w', newline='\n') as f:
        f.write('iter,total,blur,photo\n')
        for i, (total, blur, photo) in enumerate(zip(report.loss_trace, report.blur_trace, report.photo_trace), start=1):
            f.write('{},{:.10g},{:.10g},{:.10g}\n'.format(i, total, blur, photo))


def write_eval_report(file_path, report, include_psnr=True, include_ssim=True):
    """ Save an EvalReport as CSV 'frame,psnr,ssim' rows followed by a summary line. """
    names = [name for name, keep in (('psnr', include_psnr), ('ssim', include_ssim)) if keep]
    with open(file_path, 'w', newline='\n') as f:
        f.write(','.join(['frame'] + names) + '\n')
        for i, (p, s) in enumerate(zip(report.per_frame_psnr, report.per_frame_ssim)):
            values = [v for v, keep in ((p, include_psnr), (s, include_ssim)) if keep]
            f.write(','.join([str(i)] + ['{:.6f}'.format(v) for v in values]) + '\n')
        means = [v for v, keep in ((report.mean_psnr, include_psnr), (report.mean_ssim, include_ssim)) if keep]
        singles = [v for v, keep in ((report.single_frame_psnr, include_psnr), (report.single_frame_ssim, include_ssim)) if keep]
        f.write(','.join(['mean'] + ['{:.6f}'.format(v) for v in means]) + '\n')
        f.write(','.join(['single[{}]'.format(report.single_frame_index)] + ['{:.6f}'.format(v) for v in singles]) + '\n')


################
# PNG PREVIEWS #
################

def save_png(file_path, frame, cmap='gray', vmin=0.0, vmax=1.0):
    """ Save a frame as a PNG image through matplotlib. """
    mpimg.imsave(file_path, np.asarray(frame, dtype=np.float64), cmap=cmap, vmin=vmin, vmax=vmax)


def flow_to_rgb(flow, max_magnitude=None):
    """ Colour-code a flow field: hue = direction, value = magnitude (normalised to max_magnitude). """
    magnitude = np.hypot(flow.u, flow.v)
    if max_magnitude is None:
        max_magnitude = max(float(magnitude.max()), 1e-12)
    hue = (np.arctan2(flow.v, flow.u) / (2 * np.pi)) % 1.0
    hsv = np.stack([hue, np.ones_like(hue), np.clip(magnitude / max_magnitude, 0, 1)], axis=-1)
    return colors.hsv_to_rgb(hsv)


def save_flow_png(file_path, flow, max_magnitude=None):
    """ Save a colour-coded flow preview as PNG. """
    mpimg.imsave(file_path, flow_to_rgb(flow, max_magnitude))
