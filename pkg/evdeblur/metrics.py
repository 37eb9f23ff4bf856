""" Image quality metrics and the single-frame / sequence evaluation protocols. Frames have unit dynamic range. """
import logging
from dataclasses import dataclass

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

log = logging.getLogger(__name__)

#: PSNR reported for identical frames [dB]
PSNR_CAP = 99.0

#: SSIM Gaussian window: sigma 1.5, truncated to 11x11
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError('Frame shapes differ: {} vs {}.'.format(a.shape, b.shape))
    return a, b


def psnr(a, b):
    """ Peak signal-to-noise ratio 10 log10(1 / MSE) [dB], capped at PSNR_CAP for identical frames. """
    a, b = _pair(a, b)
    mse = mean_squared_error(a, b)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(1.0 / mse)))


def ssim(a, b):
    """ Mean structural similarity over all valid 11x11 Gaussian-window placements (C1 = 0.01^2, C2 = 0.03^2). """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError('SSIM needs frames of at least {0}x{0} pixels, got {1}.'.format(SSIM_WINDOW, a.shape))
    return float(structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=SSIM_SIGMA,
                                       use_sample_covariance=False, K1=0.01, K2=0.03))


@dataclass
class EvalReport:
    """ Per-frame scores, their means (sequence protocol) and the middle frame's scores (single-frame protocol). """
    per_frame_psnr: list
    per_frame_ssim: list
    mean_psnr: float
    mean_ssim: float
    single_frame_psnr: float
    single_frame_ssim: float
    single_frame_index: int


def evaluate(frames, truth):
    """ Score recovered frames against ground truth frame by frame.

    The single-frame protocol scores the middle frame, index floor(M / 2).
    """
    if len(frames) != len(truth):
        raise ValueError('Frame count {} does not match ground-truth count {}.'.format(len(frames), len(truth)))
    if len(frames) == 0:
        raise ValueError('Nothing to evaluate: no frames given.')
    psnrs = [psnr(frame, gt) for frame, gt in zip(frames, truth)]
    ssims = [ssim(frame, gt) for frame, gt in zip(frames, truth)]
    middle = len(frames) // 2
    report = EvalReport(per_frame_psnr=psnrs, per_frame_ssim=ssims,
                        mean_psnr=float(np.mean(psnrs)), mean_ssim=float(np.mean(ssims)),
                        single_frame_psnr=psnrs[middle], single_frame_ssim=ssims[middle], single_frame_index=middle)
    log.info('Evaluated %d frames: mean PSNR %.3f dB, mean SSIM %.4f', len(frames), report.mean_psnr, report.mean_ssim)
    return report
