import logging
import math

import attrs
import numpy as np
import torch

from .operators import MaskStack
from .utils import Rng

logger = logging.getLogger(__name__)

"""
Types.
"""


@attrs.frozen
class MaskSpec:
    """
    Retrospective Cartesian undersampling request.

    :param n_frames: Number of frames N.
    :param n_pe: Number of phase-encode lines Y.
    :param accel: Acceleration rate R.
    :param n_center: Central lines sampled in every frame.
    :param seed: Seed of the pattern.
    :param age_boost: Log-weight gained per frame by a line that was not sampled,
        which spreads the lines over time.
    """

    n_frames: int = attrs.field(validator=attrs.validators.ge(1))
    n_pe: int = attrs.field(validator=attrs.validators.ge(1))
    accel: float = attrs.field(validator=attrs.validators.ge(1.0))
    n_center: int = attrs.field(default=4, validator=attrs.validators.ge(0))
    seed: int = 0
    age_boost: float = attrs.field(default=2.0, validator=attrs.validators.ge(0.0))

    def __attrs_post_init__(self) -> None:
        if self.nominal_lines < 1:
            raise ValueError(
                f"R={self.accel} keeps no line out of {self.n_pe}, "
                f"at most R={self.n_pe / 0.5:g} is possible"
            )
        if self.nominal_lines < self.n_center:
            raise ValueError(
                f"R={self.accel} keeps {self.nominal_lines} lines, "
                f"fewer than the {self.n_center} center lines"
            )

    @property
    def nominal_lines(self) -> int:
        return int(math.floor(self.n_pe / self.accel + 0.5))

    @property
    def lines_per_frame(self) -> int:
        return min(self.n_pe, max(self.n_center, self.nominal_lines))

    @property
    def center_lines(self) -> range:
        start = self.n_pe // 2 - self.n_center // 2
        return range(start, start + self.n_center)


"""
Generation.
"""


def generate_mask(spec: MaskSpec) -> MaskStack:
    """
    Generate a VISTA-style spatio-temporal Cartesian mask.

    Every frame samples exactly ``lines_per_frame`` lines: the central block plus
    lines drawn without replacement with log-weight ``-(d / σ)² + age_boost · age``,
    where ``d`` is the distance to the k-space center, ``σ = Y / 4`` and ``age`` counts
    the frames since the line was last sampled.
    Each frame reads its own substream of the seed, so masks are reproducible.

    :param spec: Mask request.
    """
    n_pe = spec.n_pe
    center = np.zeros(n_pe, dtype=bool)
    center[list(spec.center_lines)] = True
    candidates = np.flatnonzero(~center)
    n_random = spec.lines_per_frame - spec.n_center

    sigma = n_pe / 4.0
    distance = np.abs(candidates - n_pe // 2)
    log_density = -((distance / sigma) ** 2)

    rng = Rng(spec.seed)
    lines = np.zeros((spec.n_frames, n_pe), dtype=np.float32)
    last = np.full(candidates.size, -1)
    for n in range(spec.n_frames):
        lines[n, center] = 1.0
        if n_random == 0:
            continue
        age = n - last
        # Gumbel top-k draws n_random lines without replacement.
        uniform = rng.substream(n).uniform(candidates.size)
        gumbel = -np.log(-np.log(np.clip(uniform, 1e-300, 1.0 - 1e-16)))
        keys = log_density + spec.age_boost * age + gumbel
        chosen = np.argsort(-keys, kind="stable")[:n_random]
        lines[n, candidates[chosen]] = 1.0
        last[chosen] = n

    mask = MaskStack(torch.from_numpy(lines))
    logger.info(
        "Generated %d x %d mask at R=%.2f (effective %.2f)",
        spec.n_frames,
        n_pe,
        spec.accel,
        effective_accel(mask),
    )
    return mask


def effective_accel(m: MaskStack) -> float:
    """
    Ratio of all phase-encode lines to the sampled ones, ``N·Y / Σ lines``.
    """
    return m.n_frames * m.n_pe / float(m.lines.sum())


def coverage(m: MaskStack) -> float:
    """
    Fraction of phase-encode indices sampled in at least one frame.
    """
    return float((m.lines.sum(dim=0) > 0).float().mean())
