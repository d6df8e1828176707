"""
Dynamic ring phantom with analytic motion.

A smooth myocardium-like ring around a blood pool contracts radially over the
cycle, with systole at mid-sequence, inside a static elliptical chest wall.
Because the motion is a known scaling about the ring center, the flow between any
two frames is available in closed form.
"""
import logging
import math

import attrs
import numpy as np
import torch

from .operators import (
    CoilMaps,
    FlowSet,
    MaskStack,
    apply_mask,
    coil_expand,
    fft2c,
)
from .recon import window_flows
from .types import DType
from .utils import Rng

logger = logging.getLogger(__name__)

BLOOD_LEVEL = 0.5
FEATURE_LEVEL = 0.5
# Feature and noise streams of the phantom seed.
FEATURE_STREAM = 1
NOISE_STREAM = 2

"""
Types.
"""


@attrs.frozen
class PhantomSpec:
    """
    Phantom request.

    :param nx: Image rows X (frequency encoding).
    :param ny: Image columns Y (phase encoding).
    :param n_frames: Cardiac frames N.
    :param n_coils: Receiver coils S.
    :param ring_center: Ring center in pixels, image center when omitted.
    :param r_outer: Outer ring radius at end-diastole.
    :param r_inner: Inner ring radius at end-diastole.
    :param contraction_amp: Peak relative radius reduction, in ``[0, 0.5)``.
    :param n_features: Intensity bumps riding on the ring.
    :param noise_sigma: k-space noise std relative to the peak image magnitude.
    :param seed: Seed of features and noise.
    :param edge_width: Width of the smooth ring edges in pixels.
    :param background_level: Chest-wall intensity, zero to disable it.
    :param dtype: Precision of the generated tensors.
    """

    nx: int = 128
    ny: int = 128
    n_frames: int = attrs.field(default=16, validator=attrs.validators.ge(3))
    n_coils: int = attrs.field(default=4, validator=attrs.validators.ge(1))
    ring_center: tuple[float, float] | None = None
    r_outer: float = 28.0
    r_inner: float = 18.0
    contraction_amp: float = attrs.field(
        default=0.15,
        validator=[attrs.validators.ge(0.0), attrs.validators.lt(0.5)],
    )
    n_features: int = attrs.field(default=6, validator=attrs.validators.ge(0))
    noise_sigma: float = attrs.field(default=0.01, validator=attrs.validators.ge(0.0))
    seed: int = 0
    edge_width: float = attrs.field(default=1.0, validator=attrs.validators.gt(0.0))
    background_level: float = 0.3
    dtype: DType = DType.Complex64

    def __attrs_post_init__(self) -> None:
        if not 0 < self.r_inner < self.r_outer < min(self.nx, self.ny) / 2:
            raise ValueError(
                "Radii must satisfy 0 < r_inner < r_outer < min(X, Y) / 2, "
                f"got {self.r_inner}, {self.r_outer}"
            )

    @property
    def center(self) -> tuple[float, float]:
        if self.ring_center is None:
            return self.nx / 2, self.ny / 2
        return self.ring_center

    @property
    def scales(self) -> tuple[float, ...]:
        """
        Ring scale per frame, ``1 - amp · sin²(πn / N)``.
        """
        return tuple(
            1.0 - self.contraction_amp * math.sin(math.pi * n / self.n_frames) ** 2
            for n in range(self.n_frames)
        )


@attrs.frozen(eq=False)
class GroundTruth:
    """
    Phantom with everything known about it.

    ``flows_gt`` is the all-pairs table ``[N, N, 2, X, Y]``: ``flows_gt[n, j]`` warps
    frame ``n`` onto frame ``j``.
    """

    spec: PhantomSpec
    sequence: torch.Tensor
    flows_gt: torch.Tensor
    coil_maps: CoilMaps
    kspace: torch.Tensor

    @property
    def scales(self) -> tuple[float, ...]:
        return self.spec.scales

    @property
    def ring_areas(self) -> tuple[float, ...]:
        base = math.pi * (self.spec.r_outer**2 - self.spec.r_inner**2)
        return tuple(base * s**2 for s in self.scales)

    def window(self, k_half: int) -> FlowSet:
        """
        Ground-truth flows of the ``2k+1`` cyclic window around every frame.
        """
        return window_flows(self.flows_gt, k_half)


"""
Synthesis.
"""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _grid(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.meshgrid(
        np.arange(spec.nx, dtype=np.float64),
        np.arange(spec.ny, dtype=np.float64),
        indexing="ij",
    )
    return rows, cols


def _feature_angles(spec: PhantomSpec) -> np.ndarray:
    return 2.0 * np.pi * Rng(spec.seed, FEATURE_STREAM).uniform(spec.n_features)


def _heart(
    spec: PhantomSpec,
    dx: np.ndarray,
    dy: np.ndarray,
    angles: np.ndarray,
) -> np.ndarray:
    """
    End-diastolic ring, blood pool and features at offsets from the ring center.
    """
    tau = spec.edge_width
    r = np.hypot(dx, dy)
    inner = _sigmoid((r - spec.r_inner) / tau)
    ring = inner - _sigmoid((r - spec.r_outer) / tau)
    image = ring + BLOOD_LEVEL * (1.0 - inner)

    mid = 0.5 * (spec.r_inner + spec.r_outer)
    width = 0.25 * (spec.r_outer - spec.r_inner)
    for angle in angles:
        fx = dx - mid * np.cos(angle)
        fy = dy - mid * np.sin(angle)
        image += FEATURE_LEVEL * np.exp(-(fx**2 + fy**2) / (2.0 * width**2))
    return image


def _chest_wall(
    spec: PhantomSpec,
    rows: np.ndarray,
    cols: np.ndarray,
) -> np.ndarray:
    if spec.background_level == 0.0:
        return np.zeros_like(rows)
    dx = rows - spec.nx / 2
    dy = cols - spec.ny / 2

    def ellipse(a: float, b: float) -> np.ndarray:
        rho = np.sqrt((dx / a) ** 2 + (dy / b) ** 2)
        return _sigmoid((1.0 - rho) * min(a, b) / spec.edge_width)

    outer = ellipse(0.48 * spec.nx, 0.45 * spec.ny)
    inner = ellipse(0.42 * spec.nx, 0.38 * spec.ny)
    return spec.background_level * (outer - inner)


def motion_support(spec: PhantomSpec, r: np.ndarray) -> np.ndarray:
    """
    Weight of the moving region: one over the heart, fading to zero before the
    chest wall.
    """
    start = spec.r_outer + 8.0 * spec.edge_width
    stop = start + 8.0 * spec.edge_width
    t = np.clip((r - start) / (stop - start), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def analytic_frame(
    spec: PhantomSpec,
    scale: float,
    rows: np.ndarray,
    cols: np.ndarray,
) -> np.ndarray:
    """
    Evaluate the phantom with ring scale ``scale`` at arbitrary positions.
    """
    cx, cy = spec.center
    heart = _heart(spec, (rows - cx) / scale, (cols - cy) / scale, _feature_angles(spec))
    return heart + _chest_wall(spec, rows, cols)


def pairwise_flows(spec: PhantomSpec) -> np.ndarray:
    """
    All-pairs analytic flow table ``[N, N, 2, X, Y]``.

    Inside the moving region frame ``j`` equals frame ``n`` sampled at
    ``c + (p - c) · s_n / s_j``, hence ``u = (p - c)(s_n / s_j - 1)``.
    """
    rows, cols = _grid(spec)
    cx, cy = spec.center
    dx, dy = rows - cx, cols - cy
    support = motion_support(spec, np.hypot(dx, dy))
    scales = np.asarray(spec.scales)
    ratio = scales[:, None] / scales[None, :] - 1.0
    flows = np.empty((spec.n_frames, spec.n_frames, 2, spec.nx, spec.ny))
    flows[:, :, 0] = ratio[:, :, None, None] * (dx * support)
    flows[:, :, 1] = ratio[:, :, None, None] * (dy * support)
    return flows


def synthesize_coil_maps(
    nx: int,
    ny: int,
    n_coils: int,
    dtype: DType = DType.Complex64,
) -> CoilMaps:
    """
    Gaussian-lobed receive profiles placed at equal angles around the image,
    each with its own phase ramp, normalized pointwise.
    """
    rows = torch.arange(nx, dtype=torch.float64).unsqueeze(-1) - nx / 2
    cols = torch.arange(ny, dtype=torch.float64) - ny / 2
    size = min(nx, ny)
    distance = 0.5 * size
    width = 0.4 * size
    profiles = []
    for s in range(n_coils):
        angle = 2.0 * math.pi * s / n_coils
        cx, cy = distance * math.cos(angle), distance * math.sin(angle)
        magnitude = torch.exp(-((rows - cx) ** 2 + (cols - cy) ** 2) / (2 * width**2))
        ramp = rows * math.cos(angle) + cols * math.sin(angle)
        phase = angle + math.pi * ramp / size
        profiles.append(torch.polar(magnitude, phase))
    return CoilMaps.normalized(torch.stack(profiles)).to(dtype.tensor_dtype)


def generate_phantom(spec: PhantomSpec) -> GroundTruth:
    """
    Synthesize images, ground-truth flows, coil maps and noisy full k-space.

    The k-space noise is circular complex Gaussian with standard deviation
    ``noise_sigma · max |x|``, the peak image magnitude of the sequence.
    The centered FFT is orthonormal, so this is also the per-pixel noise std of
    each coil image.

    :param spec: Phantom request.
    """
    rows, cols = _grid(spec)
    frames = np.stack([analytic_frame(spec, s, rows, cols) for s in spec.scales])
    sequence = torch.from_numpy(frames).to(spec.dtype.tensor_dtype)
    flows = torch.from_numpy(pairwise_flows(spec)).to(spec.dtype.real)
    coils = synthesize_coil_maps(spec.nx, spec.ny, spec.n_coils, spec.dtype)

    kspace = fft2c(coil_expand(sequence, coils))
    if spec.noise_sigma > 0.0:
        peak = float(torch.max(torch.abs(sequence)))
        rng = Rng(spec.seed, NOISE_STREAM)
        noise = torch.stack(
            [
                rng.substream(n).complex_normal(
                    spec.n_coils, spec.nx, spec.ny, dtype=spec.dtype
                )
                for n in range(spec.n_frames)
            ]
        )
        kspace = kspace + spec.noise_sigma * peak * noise

    logger.info(
        "Generated %d-frame %dx%d phantom with %d coils (amp %.2f, noise %.3g)",
        spec.n_frames,
        spec.nx,
        spec.ny,
        spec.n_coils,
        spec.contraction_amp,
        spec.noise_sigma,
    )
    return GroundTruth(
        spec=spec,
        sequence=sequence,
        flows_gt=flows,
        coil_maps=coils,
        kspace=kspace,
    )


def simulate_acquisition(
    gt: GroundTruth,
    m: MaskStack,
) -> torch.Tensor:
    """
    Retrospectively undersample the full k-space.

    :return: k-space ``[N, S, X, Y]`` with unsampled lines exactly zero.
    """
    if m.n_frames != gt.spec.n_frames or m.n_pe != gt.spec.ny:
        raise ValueError(
            f"Mask {m.n_frames}x{m.n_pe} does not fit phantom "
            f"{gt.spec.n_frames}x{gt.spec.ny}"
        )
    return apply_mask(gt.kspace, m.lines)
