""" Reblurring, the blur/photometric/reconstruction losses, their gradients and the variational deblurring solver.

Sharp frames I_0..I_{M-1} are arrays of shape (height, width). Latent frames come from warping I_m with the
intra-interval part of the PLM motion field; their average re-renders the blurry frame. Losses are mean absolute
errors (per pixel, then per frame). The solver descends a Charbonnier-smoothed version of the self-supervised
objective gamma * L_blur + delta * L_photo by fixed-step projected gradient descent.

Two photometric terms are available. The literal one compares warp(I_{m+1}, K v_m) with I_m (photo_warp, photo_loss).
The forward one compares warp(I_m, K v_m) with I_{m+1} (propagate, propagation_loss). Latent frames satisfy
L_{(m+1)K} = warp(I_m, K v_m), so the forward term vanishes on the true sequence, while the literal term vanishes
on the time-reversed one. The solver descends the forward term unless told otherwise.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from evdeblur.errors import NumericalError, RangeError
from evdeblur.events import count_image, interval_edges, window
from evdeblur.motion import BilinearStencil, warp

log = logging.getLogger(__name__)

#: Photometric terms the solver can descend
PHOTOMETRIC_TERMS = ('forward', 'literal')


@dataclass(frozen=True)
class LossWeights:
    """ Balancing weights: alpha, beta for the supervised branch, gamma, delta for the self-supervised branch. """
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ('alpha', 'beta', 'gamma', 'delta'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError('Loss weight {} must be finite and non-negative, got {}.'.format(name, value))


@dataclass(frozen=True)
class SolverConfig:
    """ Gradient-descent settings.

    Args:
        iterations : number of descent steps
        step_size : step per pixel; each iteration sets I <- clip(I - step_size * n_pixels * grad, 0, 1), with grad
            the gradient of the mean (per-pixel) objective
        charbonnier_eps : smoothing of |x| as sqrt(x^2 + eps^2) - eps in the descended objective. A fixed step
            descends when step_size * ReblurOperator.curvature_bound(weights, eps) <= 2; the bound scales as 1 / eps.
        weights : loss weights (gamma and delta are used by the solver)
        rng_seed : recorded with the run; the solver itself draws nothing
        photometric : 'forward' descends propagation_loss, 'literal' descends photo_loss
    """
    iterations: int = 500
    step_size: float = 0.25
    charbonnier_eps: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    rng_seed: int = 0
    photometric: str = 'forward'

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError('Solver needs at least 1 iteration, got {}.'.format(self.iterations))
        if not self.step_size > 0:
            raise ValueError('Step size must be positive, got {}.'.format(self.step_size))
        if not self.charbonnier_eps > 0:
            raise ValueError('Charbonnier epsilon must be positive, got {}.'.format(self.charbonnier_eps))
        if self.photometric not in PHOTOMETRIC_TERMS:
            raise ValueError("Photometric term '{}' not recognised; choose from {}.".format(
                self.photometric, ', '.join(PHOTOMETRIC_TERMS)))


@dataclass
class SolverReport:
    """ Convergence record.

    loss_trace holds the descended (smoothed) objective after every iteration. blur_trace and photo_trace hold the
    exact L1 blur loss and the exact L1 value of the photometric term being descended.
    """
    loss_trace: list
    blur_trace: list
    photo_trace: list
    blur_loss_final: float
    photo_loss_final: float
    iterations_run: int


def _check_frames(frames, model):
    if len(frames) != model.m_count:
        raise ValueError('Expected {} frames (one per interval), got {}.'.format(model.m_count, len(frames)))
    for frame in frames:
        if np.shape(frame) != model.shape:
            raise ValueError('Frame shape {} does not match flow shape {}.'.format(np.shape(frame), model.shape))


def _check_pair_index(model, m):
    if not 0 <= m <= model.m_count - 2:
        raise RangeError('Photometric index m={} outside [0, {}].'.format(m, model.m_count - 2))


def _mean_abs(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError('Frame shapes differ: {} vs {}.'.format(a.shape, b.shape))
    return float(np.mean(np.abs(a - b)))


##############
# REBLURRING #
##############

def latent_frame(frames, model, n):
    """ Latent frame L_n = I_m(x + (n - mK) v_m(x)) for n in [mK, (m+1)K). """
    _check_frames(frames, model)
    m = model.interval_of(n)
    return warp(frames[m], model.flows[m] * (n - m * model.k))


def reblur(frames, model):
    """ Re-rendered blurry frame (1/N) * sum_n L_n over all N = M*K latent frames.

    Intervals with zero flow contribute I_m unchanged, so with all flows zero the result is exactly mean(frames).
    """
    _check_frames(frames, model)
    interval_means = []
    for m, flow in enumerate(model.flows):
        if flow.is_zero():
            interval_means.append(np.asarray(frames[m], dtype=np.float64))
        else:
            interval_means.append(np.mean([latent_frame(frames, model, n) for n in range(m * model.k, (m + 1) * model.k)], axis=0))
    return np.mean(interval_means, axis=0)


def photo_warp(frames, model, m):
    """ Warped frame I'_m(x) = I_{m+1}(x + K v_m(x)), i.e. warp(I_{m+1}, K v_m). """
    _check_frames(frames, model)
    _check_pair_index(model, m)
    return warp(frames[m + 1], model.flows[m] * model.k)


def propagate(frames, model, m):
    """ I_m carried across interval m: warp(I_m, K v_m), the PLM prediction of I_{m+1}. """
    _check_frames(frames, model)
    _check_pair_index(model, m)
    return warp(frames[m], model.flows[m] * model.k)


##########
# LOSSES #
##########

def blur_loss(reblurred, observed):
    """ Blur-consistency loss: mean |reblurred - observed|. """
    return _mean_abs(reblurred, observed)


def photo_loss(frames, model):
    """ Photometric-consistency loss: mean over m = 0..M-2 of mean |photo_warp(m) - I_m|. """
    if model.m_count < 2:
        raise ValueError('Photometric loss needs at least 2 frames, got {}.'.format(model.m_count))
    return float(np.mean([_mean_abs(photo_warp(frames, model, m), frames[m]) for m in range(model.m_count - 1)]))


def propagation_loss(frames, model):
    """ Forward photometric loss: mean over m = 0..M-2 of mean |propagate(m) - I_{m+1}|. """
    if model.m_count < 2:
        raise ValueError('Propagation loss needs at least 2 frames, got {}.'.format(model.m_count))
    return float(np.mean([_mean_abs(propagate(frames, model, m), frames[m + 1]) for m in range(model.m_count - 1)]))


def recon_loss(frames, truth):
    """ Reconstruction loss: mean over frames of mean |I_m - G_m|. """
    if len(frames) != len(truth):
        raise ValueError('Frame count {} does not match ground-truth count {}.'.format(len(frames), len(truth)))
    if len(frames) == 0:
        raise ValueError('Reconstruction loss needs at least one frame.')
    return float(np.mean([_mean_abs(frame, gt) for frame, gt in zip(frames, truth)]))


def loss_terms(frames, model, observed, truth=None):
    """ The exact L1 loss components as a dict with keys 'blur', 'photo', 'propagation' and (when truth is given) 'error'.

    The photometric terms are 0 for a single-interval model.
    """
    single = model.m_count < 2
    terms = {'blur': blur_loss(reblur(frames, model), observed),
             'photo': 0.0 if single else photo_loss(frames, model),
             'propagation': 0.0 if single else propagation_loss(frames, model)}
    if truth is not None:
        terms['error'] = recon_loss(frames, truth)
    return terms


def total_loss(frames, model, observed, truth=None, weights=LossWeights()):
    """ Weighted objective: L_error + alpha*L_blur + beta*L_photo with ground truth, else gamma*L_blur + delta*L_photo. """
    terms = loss_terms(frames, model, observed, truth)
    if truth is not None:
        return terms['error'] + weights.alpha * terms['blur'] + weights.beta * terms['photo']
    return weights.gamma * terms['blur'] + weights.delta * terms['photo']


class ReblurOperator(object):
    """ Precomputed warps of a fixed PLM model, for fast repeated reblurring and exact adjoints.

    Stencils for all K latent warps of an interval are stacked, so one gather forms the interval mean and one
    scatter forms its transpose. Intervals (and photometric pairs) with zero flow are treated as identities.

    Photometric pair m has residual warp(I_src, K v_m) - I_dst, with (src, dst) = (m, m+1) for the forward term
    and (m+1, m) for the literal one.
    """

    def __init__(self, model, photometric='literal'):
        if photometric not in PHOTOMETRIC_TERMS:
            raise ValueError("Photometric term '{}' not recognised; choose from {}.".format(photometric, ', '.join(PHOTOMETRIC_TERMS)))
        self.model = model
        self.photometric = photometric
        self.shape = model.shape
        self.n_pixels = int(np.prod(self.shape))
        self._latent = []
        for m, flow in enumerate(model.flows):
            if flow.is_zero():
                self._latent.append(None)
                continue
            stencils = [BilinearStencil(flow * j) for j in range(model.k)]
            self._latent.append((np.concatenate([s.index for s in stencils], axis=1),
                                 np.concatenate([s.weight for s in stencils], axis=1)))
        self._photo = [None if flow.is_zero() else BilinearStencil(flow * model.k) for flow in model.flows[:-1]]
        self._pairs = [(m, m + 1) if photometric == 'forward' else (m + 1, m) for m in range(model.m_count - 1)]

    def interval_mean(self, m, frame):
        """ (1/K) * sum_j warp(I_m, j v_m). """
        if self._latent[m] is None:
            return np.asarray(frame, dtype=np.float64)
        index, weight = self._latent[m]
        gathered = np.sum(np.ravel(frame)[index] * weight, axis=0)
        return gathered.reshape(self.model.k, self.n_pixels).mean(axis=0).reshape(self.shape)

    def interval_mean_adjoint(self, m, grad):
        if self._latent[m] is None:
            return np.asarray(grad, dtype=np.float64)
        index, weight = self._latent[m]
        weighted = weight * np.tile(np.ravel(grad), self.model.k) / self.model.k
        return np.bincount(index.ravel(), weights=weighted.ravel(), minlength=self.n_pixels).reshape(self.shape)

    def reblur(self, frames):
        return np.mean([self.interval_mean(m, frame) for m, frame in enumerate(frames)], axis=0)

    def pair_warp(self, frames, m):
        """ warp(I_src, K v_m) for photometric pair m. """
        source = frames[self._pairs[m][0]]
        if self._photo[m] is None:
            return np.asarray(source, dtype=np.float64)
        return self._photo[m].apply(source)

    def curvature_bound(self, weights, eps):
        """ Upper bound on the curvature of the smoothed objective, in units of the per-pixel step.

        Uses ||W||^2 <= (max column sum) * (max row sum) for every warp and interval mean, with row sums equal to 1.
        A fixed step_size descends the objective whenever step_size * bound <= 2.
        """
        def column_sum(index, weight, scale=1.0):
            return np.bincount(index.ravel(), weights=weight.ravel() * scale, minlength=self.n_pixels).max()

        m_count = self.model.m_count
        blur_norm = max(1.0 if latent is None else column_sum(*latent, scale=1.0 / self.model.k) for latent in self._latent)
        bound = weights.gamma * blur_norm / m_count
        if m_count > 1:
            warp_norm = max(1.0 if s is None else column_sum(s.index, s.weight) for s in self._photo)
            bound += weights.delta * (math.sqrt(warp_norm) + 1.0)**2 / (m_count - 1)
        return float(bound / eps)

    def _residuals(self, frames, observed):
        blur_residual = self.reblur(frames) - observed
        photo_residuals = [self.pair_warp(frames, m) - frames[dst] for m, (_, dst) in enumerate(self._pairs)]
        return blur_residual, photo_residuals

    def losses(self, frames, observed, weights, eps=None):
        """ (total, blur, photo) of the self-supervised objective; exact L1 when eps is None, Charbonnier otherwise. """
        penalty = np.abs if eps is None else (lambda r: np.sqrt(r * r + eps * eps) - eps)
        blur_residual, photo_residuals = self._residuals(frames, observed)
        blur = float(np.mean(penalty(blur_residual)))
        photo = float(np.mean([np.mean(penalty(r)) for r in photo_residuals])) if photo_residuals else 0.0
        return weights.gamma * blur + weights.delta * photo, blur, photo

    def gradient(self, frames, observed, weights, eps):
        """ Gradient of the Charbonnier objective with respect to each frame. """
        blur_residual, photo_residuals = self._residuals(frames, observed)
        blur_grad = weights.gamma * blur_residual / np.sqrt(blur_residual**2 + eps**2) / self.n_pixels
        grads = [self.interval_mean_adjoint(m, blur_grad) / self.model.m_count for m in range(self.model.m_count)]

        for m, residual in enumerate(photo_residuals):
            src, dst = self._pairs[m]
            g = weights.delta / len(photo_residuals) * residual / np.sqrt(residual**2 + eps**2) / self.n_pixels
            grads[src] = grads[src] + (g if self._photo[m] is None else self._photo[m].adjoint(g))
            grads[dst] = grads[dst] - g
        return grads


def charbonnier_objective(frames, model, observed, weights=LossWeights(), eps=1e-6, photometric='literal'):
    """ Smoothed self-supervised objective gamma * mean rho(B_bar - B) + delta * mean_m mean rho(r_m).

    rho(x) = sqrt(x^2 + eps^2) - eps, and r_m is the photometric residual of the chosen term (see ReblurOperator).
    """
    _check_frames(frames, model)
    return ReblurOperator(model, photometric).losses(frames, np.asarray(observed, dtype=np.float64), weights, eps)[0]


def loss_gradient(frames, model, observed, weights=LossWeights(), eps=1e-6, photometric='literal'):
    """ Analytic gradient of charbonnier_objective with respect to each I_m, as a list of M arrays.

    Includes the adjoint of every bilinear warp: I_m feeds K latent warps in the reblur and appears both as
    warp source (term m-1) and direct operand (term m) of the literal photometric loss; the forward term
    swaps the two roles.
    """
    _check_frames(frames, model)
    return ReblurOperator(model, photometric).gradient(frames, np.asarray(observed, dtype=np.float64), weights, eps)


##########
# SOLVER #
##########

def solve(observed, model, cfg=SolverConfig()):
    """ Recover M sharp frames from one blurry frame and a fixed motion model.

    Starts from I_m = observed and runs cfg.iterations steps of projected gradient descent with a fixed step on
    the Charbonnier objective: I_m <- clip(I_m - step_size * n_pixels * dF/dI_m, 0, 1). Deterministic for fixed inputs.

    Returns:
        (frames, SolverReport)
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != model.shape:
        raise ValueError('Observed frame shape {} does not match flow shape {}.'.format(observed.shape, model.shape))
    weights, eps = cfg.weights, cfg.charbonnier_eps
    operator = ReblurOperator(model, cfg.photometric)
    frames = [observed.copy() for _ in range(model.m_count)]
    smoothed = charbonnier_objective(frames, model, observed, weights, eps, cfg.photometric)
    if not math.isfinite(smoothed):
        raise NumericalError(0, 'initial loss is not finite')

    curvature = operator.curvature_bound(weights, eps)
    if cfg.step_size * curvature > 2:
        log.warning('step_size %.3g exceeds the guaranteed-descent limit %.3g for this model; the loss may oscillate',
                    cfg.step_size, 2 / curvature)
    log.info('Solving %r (%s photometric term): initial loss %.6f (seed %d)', model, cfg.photometric, smoothed, cfg.rng_seed)

    step = cfg.step_size * operator.n_pixels
    trace, blur_trace, photo_trace = [], [], []
    for iteration in range(1, cfg.iterations + 1):
        grads = operator.gradient(frames, observed, weights, eps)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericalError(iteration, 'gradient is not finite')
        frames = [np.clip(frame - step * g, 0.0, 1.0) for frame, g in zip(frames, grads)]

        smoothed = operator.losses(frames, observed, weights, eps)[0]
        _, blur, photo = operator.losses(frames, observed, weights)
        if not math.isfinite(smoothed):
            raise NumericalError(iteration, 'loss is not finite')
        trace.append(smoothed)
        blur_trace.append(blur)
        photo_trace.append(photo)
        log.debug('iter %d: smoothed %.6g blur %.6g photo %.6g', iteration, smoothed, blur, photo)

    log.info('Solver finished after %d iterations: smoothed %.6f, blur %.6f, photo %.6f', cfg.iterations, smoothed, blur, photo)
    report = SolverReport(loss_trace=trace, blur_trace=blur_trace, photo_trace=photo_trace,
                          blur_loss_final=blur, photo_loss_final=photo, iterations_run=cfg.iterations)
    return frames, report


############
# BASELINE #
############

def integrate_baseline(observed, stream, c, m_count, log_eps=1e-3):
    """ Event-integration baseline: sharp frames at the start of each of m_count intervals.

    Relative log-intensity E_m is c times the per-pixel polarity sum of events before interval m starts. The
    per-pixel offset is chosen so that the frames average to the observed blurry frame:
        I_m + log_eps = (B + log_eps) * exp(E_m) / mean_j exp(E_j),
    then frames are clamped to [0, 1].
    """
    if not c > 0:
        raise ValueError('Contrast threshold must be positive, got {}.'.format(c))
    if m_count < 1:
        raise ValueError('Number of intervals must be at least 1, got {}.'.format(m_count))
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != stream.shape:
        raise ValueError('Observed frame shape {} does not match sensor shape {}.'.format(observed.shape, stream.shape))

    starts = interval_edges(stream.t_start, stream.t_end, m_count)[:-1]
    gains = np.stack([np.exp(c * count_image(window(stream, stream.t_start, t), signed=True)) for t in starts])
    offset = (observed + log_eps) / gains.mean(axis=0)
    return [np.clip(offset * gain - log_eps, 0.0, 1.0) for gain in gains]
