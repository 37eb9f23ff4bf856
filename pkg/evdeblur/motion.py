""" Motion models (linear and piece-wise linear), dense backward warping and event-based flow estimation.

Flow convention (used everywhere in evdeblur): a field u relates two images by backward sampling,
    target(x) = source(x + u(x)),
so a scene translating by +d pixels per step has unit flow -d. Bilinear interpolation with clamp-to-edge borders.
"""
import logging

import numpy as np
from scipy import ndimage

from evdeblur.errors import RangeError
from evdeblur.events import count_image, partition_intervals, window

log = logging.getLogger(__name__)

#: 3x3 binomial pre-smoothing kernel for Lucas-Kanade
BINOMIAL_KERNEL = np.outer([1, 2, 1], [1, 2, 1]) / 16.0

#: Lucas-Kanade structure tensor threshold on the smaller eigenvalue [counts^2]
MIN_EIGENVALUE = 1e-3


class FlowField(object):
    """ Per-pixel 2D displacement field: u along columns (x), v along rows (y), in pixels. """

    def __init__(self, u, v):
        u = np.array(u, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError('Flow components must be 2D arrays of equal shape, got {} and {}.'.format(u.shape, v.shape))
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError('Flow components must be finite.')
        u.flags.writeable = False
        v.flags.writeable = False
        self.u, self.v = u, v

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def constant(cls, shape, u, v):
        """ Field with the same displacement (u, v) at every pixel. """
        return cls(np.full(shape, float(u)), np.full(shape, float(v)))

    @property
    def shape(self):
        return self.u.shape

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def height(self):
        return self.u.shape[0]

    def __add__(self, other):
        return FlowField(self.u + other.u, self.v + other.v)

    def __mul__(self, scale):
        return FlowField(scale * self.u, scale * self.v)

    __rmul__ = __mul__

    def __neg__(self):
        return FlowField(-self.u, -self.v)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    def __repr__(self):
        return 'FlowField({}x{}, mean=({:.3g}, {:.3g}))'.format(self.width, self.height, self.u.mean(), self.v.mean())

    def is_zero(self):
        return not (np.any(self.u) or np.any(self.v))


class PlmModel(object):
    """ Piece-wise linear motion: M per-interval unit flows v_m, each held for k latent sub-steps (N = M * k). """

    def __init__(self, flows, k):
        flows = tuple(flows)
        if len(flows) < 1:
            raise ValueError('A motion model needs at least one interval flow.')
        if int(k) != k or k < 1:
            raise ValueError('Interval length k must be a positive integer, got {}.'.format(k))
        shape = flows[0].shape
        if any(flow.shape != shape for flow in flows):
            raise ValueError('All interval flows must share the same dimensions.')
        self.flows = flows
        self.k = int(k)

    @classmethod
    def from_interval_flows(cls, interval_flows, k):
        """ Build a model from per-interval displacements (e.g. from flows_from_events), dividing each by k. """
        return cls([flow * (1.0 / k) for flow in interval_flows], k)

    @property
    def m_count(self):
        return len(self.flows)

    @property
    def n_latent(self):
        return self.m_count * self.k

    @property
    def shape(self):
        return self.flows[0].shape

    def interval_of(self, n):
        """ Index m of the interval holding latent step n. """
        if not (0 <= n < self.n_latent):
            raise RangeError('Latent index n={} outside [0, {}].'.format(n, self.n_latent - 1))
        return int(n) // self.k

    def interval_flows(self):
        """ Per-interval displacements k * v_m. """
        return [flow * self.k for flow in self.flows]

    def __repr__(self):
        return 'PlmModel(M={}, K={}, {}x{})'.format(self.m_count, self.k, self.shape[1], self.shape[0])


def lm_field(v, n):
    """ Linear motion field u_n = n * v. """
    if n < 0:
        raise ValueError('Latent index must be non-negative, got {}.'.format(n))
    return v * n


def plm_field(model, n):
    """ Piece-wise linear motion field u_n = (n - mK) v_m + K * sum_{j<m} v_j for n in [mK, (m+1)K). """
    m = model.interval_of(n)
    u = model.flows[m].u * (n - m * model.k)
    v = model.flows[m].v * (n - m * model.k)
    if m:
        u = u + model.k * np.sum([flow.u for flow in model.flows[:m]], axis=0)
        v = v + model.k * np.sum([flow.v for flow in model.flows[:m]], axis=0)
    return FlowField(u, v)


def lm_model(model):
    """ Collapse a PLM model into the linear motion model with the same total displacement (mean unit flow in every interval). """
    mean = FlowField(np.mean([flow.u for flow in model.flows], axis=0), np.mean([flow.v for flow in model.flows], axis=0))
    return PlmModel([mean] * model.m_count, model.k)


###########
# WARPING #
###########

def _sample_corners(field):
    """ Clamped integer corners and fractional offsets of the sample points x + field(x). """
    height, width = field.shape
    rows, cols = np.mgrid[0:height, 0:width]
    xs = np.clip(cols + field.u, 0, width - 1)
    ys = np.clip(rows + field.v, 0, height - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    return x0, x1, y0, y1, xs - x0, ys - y0


def warp(img, field):
    """ Backward-warp an image: output(x) = img(x + field(x)), bilinear with clamp-to-edge.

    A zero field reproduces the input exactly, and constant images stay exactly constant.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != field.shape:
        raise ValueError('Image shape {} does not match flow shape {}.'.format(img.shape, field.shape))
    x0, x1, y0, y1, fx, fy = _sample_corners(field)
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bottom = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return top + fy * (bottom - top)


class BilinearStencil(object):
    """ Sparse linear operator of a fixed backward warp, with its adjoint.

    Holds, for every output pixel, the four flat source indices and bilinear weights, so a warp
    can be re-applied to many images and its transpose scattered back for gradients.
    """

    def __init__(self, field):
        x0, x1, y0, y1, fx, fy = _sample_corners(field)
        width = field.width
        self.shape = field.shape
        self.index = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1]).reshape(4, -1)
        self.weight = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]).reshape(4, -1)

    def apply(self, img):
        """ Warp img (same result as warp() up to rounding). """
        flat = np.asarray(img, dtype=np.float64).ravel()
        return np.sum(flat[self.index] * self.weight, axis=0).reshape(self.shape)

    def adjoint(self, grad):
        """ Scatter an output-space array back onto source pixels (transpose of apply). """
        weighted = self.weight * np.asarray(grad, dtype=np.float64).ravel()
        return np.bincount(self.index.ravel(), weights=weighted.ravel(), minlength=self.index.shape[1]).reshape(self.shape)


###################
# FLOW ESTIMATION #
###################

def estimate_flow(prev_counts, next_counts, window_radius=7, min_eigenvalue=MIN_EIGENVALUE):
    """ Dense single-scale Lucas-Kanade flow between two event-count images.

    Solves the 2x2 normal equations over a (2r+1)^2 window per pixel, in the repo convention
    next(x) ~= prev(x + u(x)). Pixels whose structure tensor has smaller eigenvalue below
    min_eigenvalue get zero flow.

    Args:
        prev_counts, next_counts (array): count images of equal shape
        window_radius (int): half-width r of the summation window, >= 1
        min_eigenvalue (float): degeneracy threshold, window-averaged [counts^2]
    Returns:
        FlowField
    """
    prev_counts = np.asarray(prev_counts, dtype=np.float64)
    next_counts = np.asarray(next_counts, dtype=np.float64)
    if prev_counts.shape != next_counts.shape:
        raise ValueError('Count images must share dimensions, got {} and {}.'.format(prev_counts.shape, next_counts.shape))
    if window_radius < 1:
        raise ValueError('Window radius must be at least 1, got {}.'.format(window_radius))

    prev_smooth = ndimage.convolve(prev_counts, BINOMIAL_KERNEL, mode='nearest')
    next_smooth = ndimage.convolve(next_counts, BINOMIAL_KERNEL, mode='nearest')
    grad_y, grad_x = np.gradient(0.5 * (prev_smooth + next_smooth))
    grad_t = next_smooth - prev_smooth

    size = 2 * window_radius + 1
    a = ndimage.uniform_filter(grad_x * grad_x, size=size, mode='constant')
    b = ndimage.uniform_filter(grad_x * grad_y, size=size, mode='constant')
    c = ndimage.uniform_filter(grad_y * grad_y, size=size, mode='constant')
    bx = ndimage.uniform_filter(grad_x * grad_t, size=size, mode='constant')
    by = ndimage.uniform_filter(grad_y * grad_t, size=size, mode='constant')

    # Smaller eigenvalue of [[a, b], [b, c]]
    lambda_min = 0.5 * (a + c) - np.sqrt((0.5 * (a - c))**2 + b**2)
    valid = lambda_min >= min_eigenvalue
    det = np.where(valid, a * c - b * b, 1.0)
    u = np.where(valid, (c * bx - b * by) / det, 0.0)
    v = np.where(valid, (a * by - b * bx) / det, 0.0)
    log.debug('LK flow: %d of %d pixels well-conditioned', np.count_nonzero(valid), valid.size)
    return FlowField(u, v)


def flows_from_events(stream, m_count, window_radius=7):
    """ Per-interval displacement fields estimated from events.

    The stream is split into m_count intervals; within each, unsigned count images of the first and
    second half are compared with estimate_flow and the result doubled, giving the displacement
    over the whole interval.

    Returns:
        list of m_count FlowFields (divide by K, e.g. via PlmModel.from_interval_flows, for unit flows)
    """
    flows = []
    for sub in partition_intervals(stream, m_count):
        if len(sub) == 0 or sub.duration < 2:
            flows.append(FlowField.zeros(stream.shape))
            continue
        mid = sub.t_start + sub.duration // 2
        first = count_image(window(sub, sub.t_start, mid))
        second = count_image(window(sub, mid, sub.t_end + 1))
        flows.append(estimate_flow(first, second, window_radius) * 2.0)
    log.info('Estimated %d interval flows from %d events', len(flows), len(stream))
    return flows
