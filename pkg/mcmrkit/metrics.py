"""
Image quality metrics.

Every metric works on magnitudes; complex sequences are compared as ``|x|``.
"""
import logging
import math

import attrs
import numpy as np
import torch
from skimage.metrics import (
    peak_signal_noise_ratio,
    structural_similarity,
)

from .phantom import (
    GroundTruth,
    PhantomSpec,
)

logger = logging.getLogger(__name__)

# PSNR of identical images.
PERFECT = math.inf
SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03

"""
Types.
"""


@attrs.frozen
class Roi:
    """
    Rectangular region of interest, grown by ``offset`` pixels on every side and
    clamped to the image.

    :param x0: First row.
    :param y0: First column.
    :param width: Rows covered.
    :param height: Columns covered.
    :param offset: Border extension.
    """

    x0: int
    y0: int
    width: int = attrs.field(validator=attrs.validators.ge(1))
    height: int = attrs.field(validator=attrs.validators.ge(1))
    offset: int = attrs.field(default=10, validator=attrs.validators.ge(0))

    def bounds(self, shape: tuple[int, int]) -> tuple[slice, slice]:
        nx, ny = shape
        rows = slice(
            max(0, self.x0 - self.offset),
            min(nx, self.x0 + self.width + self.offset),
        )
        cols = slice(
            max(0, self.y0 - self.offset),
            min(ny, self.y0 + self.height + self.offset),
        )
        if rows.start >= rows.stop or cols.start >= cols.stop:
            raise ValueError(f"{self} lies outside a {nx}x{ny} image")
        return rows, cols

    def crop(self, x: torch.Tensor) -> torch.Tensor:
        rows, cols = self.bounds(tuple(x.shape[-2:]))
        return x[..., rows, cols]


@attrs.frozen
class CardiacPhases:
    """
    :param es: End-systolic frame, the smallest ring.
    :param ed: End-diastolic frame, the largest ring.
    :param degenerate: The ring does not move, ES is undefined.
    """

    es: int
    ed: int
    degenerate: bool = False


@attrs.frozen
class PhaseReport:
    frame_psnr: tuple[float, ...]
    phases: CardiacPhases

    @property
    def es_psnr(self) -> float:
        return self.frame_psnr[self.phases.es]

    @property
    def ed_psnr(self) -> float:
        return self.frame_psnr[self.phases.ed]


def phantom_roi(spec: PhantomSpec, offset: int = 10) -> Roi:
    """
    Bounding box of the end-diastolic ring.
    """
    cx, cy = spec.center
    x0 = math.floor(cx - spec.r_outer)
    y0 = math.floor(cy - spec.r_outer)
    size = math.ceil(2 * spec.r_outer) + 1
    return Roi(x0=x0, y0=y0, width=size, height=size, offset=offset)


"""
Metrics.
"""


def _magnitude(x: torch.Tensor, roi: Roi | None) -> np.ndarray:
    if roi is not None:
        x = roi.crop(x)
    return torch.abs(x.detach()).to(torch.float64).cpu().numpy()


def _check_shapes(ref: torch.Tensor, est: torch.Tensor) -> None:
    if ref.shape != est.shape:
        raise ValueError(f"Shapes differ: {tuple(ref.shape)} and {tuple(est.shape)}")


def psnr(
    ref: torch.Tensor,
    est: torch.Tensor,
    peak: float | None = None,
    roi: Roi | None = None,
) -> float:
    """
    Peak signal-to-noise ratio in dB, ``20 log10(peak) - 10 log10(MSE)``.

    The peak defaults to ``max |ref|``, so the metric is not symmetric in its
    arguments.
    Identical inputs give ``PERFECT``.

    :param ref: Reference image or sequence.
    :param est: Estimate of the same shape.
    :param peak: Peak signal value.
    :param roi: Region the metric is restricted to.
    """
    _check_shapes(ref, est)
    a = _magnitude(ref, roi)
    b = _magnitude(est, roi)
    if peak is None:
        peak = float(a.max())
    if np.array_equal(a, b):
        return PERFECT
    return float(peak_signal_noise_ratio(a, b, data_range=peak))


def frame_psnr(
    ref: torch.Tensor,
    est: torch.Tensor,
    peak: float | None = None,
    roi: Roi | None = None,
) -> tuple[float, ...]:
    """
    PSNR of every frame, all against the peak of the whole reference sequence.
    """
    _check_shapes(ref, est)
    if peak is None:
        peak = float(_magnitude(ref, roi).max())
    return tuple(psnr(ref[n], est[n], peak, roi) for n in range(ref.shape[0]))


def ssim(
    ref: torch.Tensor,
    est: torch.Tensor,
    peak: float | None = None,
    roi: Roi | None = None,
) -> float:
    """
    Mean structural similarity with a uniform 7x7 window, averaged over frames.

    :param ref: Reference image ``[X, Y]`` or sequence ``[N, X, Y]``.
    :param est: Estimate of the same shape.
    :param peak: Dynamic range, ``max |ref|`` by default.
    :param roi: Region the metric is restricted to.
    """
    _check_shapes(ref, est)
    a = _magnitude(ref, roi)
    b = _magnitude(est, roi)
    if peak is None:
        peak = float(a.max())
    if a.ndim == 2:
        a, b = a[None], b[None]
    scores = [
        structural_similarity(
            a[n],
            b[n],
            win_size=SSIM_WINDOW,
            K1=SSIM_K1,
            K2=SSIM_K2,
            data_range=peak,
        )
        for n in range(a.shape[0])
    ]
    return float(np.mean(scores))


def yt_plane(x: torch.Tensor, row: int) -> torch.Tensor:
    """
    Temporal profile through one row: magnitudes ``[N, Y]``.
    """
    if not 0 <= row < x.shape[-2]:
        raise ValueError(f"Row {row} outside 0..{x.shape[-2] - 1}")
    return torch.abs(x[:, row, :])


def yt_psnr(
    ref: torch.Tensor,
    est: torch.Tensor,
    row: int,
) -> float:
    return psnr(yt_plane(ref, row), yt_plane(est, row))


def error_map(ref: torch.Tensor, est: torch.Tensor) -> torch.Tensor:
    _check_shapes(ref, est)
    return torch.abs(torch.abs(est) - torch.abs(ref))


"""
Cardiac phases.
"""


def cardiac_phases(spec: PhantomSpec) -> CardiacPhases:
    """
    Pick the end-systolic and end-diastolic frames from the ring scales.
    """
    if spec.contraction_amp == 0.0:
        return CardiacPhases(es=0, ed=0, degenerate=True)
    scales = spec.scales
    ed = max(range(len(scales)), key=lambda n: scales[n])
    es = min(range(len(scales)), key=lambda n: scales[n])
    return CardiacPhases(es=es, ed=ed)


def es_ed_frames(gt: GroundTruth) -> CardiacPhases:
    return cardiac_phases(gt.spec)


def phase_report(
    ref: torch.Tensor,
    est: torch.Tensor,
    phases: CardiacPhases,
    roi: Roi | None = None,
) -> PhaseReport:
    """
    Per-frame PSNR with the ES and ED entries singled out.

    Systole moves the most, so ES is expected to score at most the ED PSNR; a
    higher ES score is logged, not raised.
    """
    report = PhaseReport(frame_psnr=frame_psnr(ref, est, roi=roi), phases=phases)
    if not phases.degenerate and report.es_psnr > report.ed_psnr:
        logger.warning(
            "ES frame %d scores %.2f dB above ED frame %d at %.2f dB",
            phases.es,
            report.es_psnr,
            phases.ed,
            report.ed_psnr,
        )
    return report
