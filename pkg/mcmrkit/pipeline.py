import logging
import os
from pathlib import Path
from typing import (
    Mapping,
    Sequence,
    TypeAlias,
)

import attrs
import orjson

from .config import ExperimentConfig
from .metrics import (
    PhaseReport,
    es_ed_frames,
    phantom_roi,
    phase_report,
    psnr,
    ssim,
    yt_psnr,
)
from .motion import (
    LossReport,
    RefineResult,
    estimate_flow_warploss,
    perturb_flows,
    recon_loss,
    refine_flow_recon_driven,
)
from .operators import (
    CoilMaps,
    FlowSet,
    MaskStack,
)
from .phantom import (
    GroundTruth,
    generate_phantom,
    simulate_acquisition,
)
from .recon import (
    CineSequence,
    ReconConfig,
    ReconResult,
    cgsense_init,
    max_k_half,
    mcmr_reconstruct,
)
from .sampling import generate_mask
from .tensorio import (
    load_real,
    load_tensor,
    save_tensor,
)
from .types import FlowSource
from .utils import ensure_finite

logger = logging.getLogger(__name__)

Report: TypeAlias = Mapping[str, float | int | str]

SEQUENCE_FILE = "sequence.mcmr"
FLOWS_GT_FILE = "flows_gt.mcmr"
COILS_FILE = "coils.mcmr"
KSPACE_FILE = "kspace_full.mcmr"

"""
Types.
"""


@attrs.frozen
class Evaluation:
    """
    Quality of a reconstructed sequence against the phantom.
    """

    psnr: float
    ssim: float
    psnr_roi: float
    ssim_roi: float
    psnr_yt: float
    phases: PhaseReport

    def report(self, prefix: str = "") -> dict[str, float | int]:
        return {
            f"{prefix}psnr": self.psnr,
            f"{prefix}ssim": self.ssim,
            f"{prefix}psnr_roi": self.psnr_roi,
            f"{prefix}ssim_roi": self.ssim_roi,
            f"{prefix}psnr_yt": self.psnr_yt,
            f"{prefix}psnr_es": self.phases.es_psnr,
            f"{prefix}psnr_ed": self.phases.ed_psnr,
            f"{prefix}es_frame": self.phases.phases.es,
            f"{prefix}ed_frame": self.phases.phases.ed,
        }


@attrs.frozen
class AblationRow:
    setting: float
    window: int
    evaluation: Evaluation
    histories: tuple[tuple[float, ...], ...]


"""
Files.
"""


def save_ground_truth(gt: GroundTruth, out: str | os.PathLike[str]) -> list[Path]:
    """
    Write the phantom tensors into ``out``, creating it if needed.
    """
    directory = Path(out)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        SEQUENCE_FILE: gt.sequence,
        FLOWS_GT_FILE: gt.flows_gt,
        COILS_FILE: gt.coil_maps.maps,
        KSPACE_FILE: gt.kspace,
    }
    for name, tensor in files.items():
        save_tensor(directory / name, ensure_finite(tensor, name))
    return [directory / name for name in files]


def load_ground_truth(
    data: str | os.PathLike[str],
    config: ExperimentConfig,
) -> GroundTruth:
    """
    Read phantom tensors written by ``save_ground_truth``.

    The phantom parameters come from ``config``, they must match the files.
    """
    directory = Path(data)
    dtype = config.precision.tensor_dtype
    sequence = load_tensor(directory / SEQUENCE_FILE).to(dtype)
    spec = config.phantom
    if tuple(sequence.shape) != (spec.n_frames, spec.nx, spec.ny):
        raise ValueError(
            f"{directory / SEQUENCE_FILE} holds {tuple(sequence.shape)}, the config "
            f"describes {(spec.n_frames, spec.nx, spec.ny)}"
        )
    return GroundTruth(
        spec=spec,
        sequence=sequence,
        flows_gt=load_real(directory / FLOWS_GT_FILE).to(config.precision.real),
        coil_maps=CoilMaps(load_tensor(directory / COILS_FILE).to(dtype)),
        kspace=load_tensor(directory / KSPACE_FILE).to(dtype),
    )


def write_report(path: str | os.PathLike[str], values: Report) -> None:
    """
    Write a ``key = value`` report, one entry per line in insertion order.
    """
    lines = [f"{key} = {value}" for key, value in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path: str | os.PathLike[str], payload: object) -> None:
    Path(path).write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2))


"""
Experiment.
"""


class Experiment:
    def __init__(
        self,
        config: ExperimentConfig,
        gt: GroundTruth,
        mask: MaskStack,
    ) -> None:
        """
        One phantom acquired with one mask, with everything the pipeline stages need.

        This class should be created via the `experiment` function.

        :param config: Experiment settings.
        :param gt: Phantom and its full k-space.
        :param mask: Sampling mask.
        """
        self.config = config
        self.gt = gt
        self.mask = mask
        self.y = simulate_acquisition(gt, mask)
        self.roi = phantom_roi(gt.spec)
        self.phases = es_ed_frames(gt)
        self._x_u: CineSequence | None = None

    @property
    def coils(self) -> CoilMaps:
        return self.gt.coil_maps

    @property
    def x_u(self) -> CineSequence:
        """
        CG-SENSE initialization, computed once.
        """
        if self._x_u is None:
            self._x_u = cgsense_init(
                self.y, self.coils, self.mask, self.config.recon.init_iters
            )
        return self._x_u

    def recon_config(self, **changes: float | int) -> ReconConfig:
        return attrs.evolve(self.config.recon, **changes)

    def flows(
        self,
        source: FlowSource,
        k_half: int,
        perturb: float = 0.0,
    ) -> FlowSet:
        """
        Window flows of the requested origin, optionally with smooth added error.

        :param source: Ground truth, zero, or warping-loss estimates on ``x_u``.
        :param k_half: Neighbors on each side.
        :param perturb: Error RMS at one frame of temporal distance, in pixels.
        """
        spec = self.gt.spec
        match source:
            case FlowSource.GroundTruth:
                flows = self.gt.window(k_half)
            case FlowSource.Zero:
                flows = FlowSet.zeros(
                    spec.n_frames, k_half, (spec.nx, spec.ny), spec.dtype.real
                )
            case FlowSource.Warp:
                flows = estimate_flow_warploss(self.x_u, k_half, self.config.flow)
        if perturb > 0.0:
            flows = perturb_flows(flows, perturb, self.config.flow.seed)
        return flows

    def reconstruct(self, flows: FlowSet, cfg: ReconConfig) -> ReconResult:
        x_u = self.x_u if cfg.lam > 0.0 else None
        result = mcmr_reconstruct(self.y, flows, self.coils, self.mask, cfg, x_u)
        ensure_finite(result.images, "reconstruction")
        return result

    def loss(self, flows: FlowSet, cfg: ReconConfig) -> LossReport:
        x_u = self.x_u if cfg.lam > 0.0 else None
        return recon_loss(
            flows, self.y, self.coils, self.mask, cfg, x_u, self.gt.sequence
        )

    def refine(self, flows: FlowSet, cfg: ReconConfig) -> RefineResult:
        x_u = self.x_u if cfg.lam > 0.0 else None
        return refine_flow_recon_driven(
            flows,
            self.y,
            self.coils,
            self.mask,
            cfg,
            self.config.flow,
            x_u,
            self.gt.sequence,
        )

    def evaluate(self, images: CineSequence) -> Evaluation:
        ref = self.gt.sequence
        row = int(round(self.gt.spec.center[0]))
        return Evaluation(
            psnr=psnr(ref, images),
            ssim=ssim(ref, images),
            psnr_roi=psnr(ref, images, roi=self.roi),
            ssim_roi=ssim(ref, images, roi=self.roi),
            psnr_yt=yt_psnr(ref, images, min(row, self.gt.spec.nx - 1)),
            phases=phase_report(ref, images, self.phases, self.roi),
        )

    def ablate_k(
        self,
        k_halves: Sequence[int],
        source: FlowSource,
        perturb: float = 0.0,
    ) -> list[AblationRow]:
        """
        Sweep the window size with everything else fixed.

        Half-widths beyond the sequence fall back to the widest window.
        """
        rows = []
        for k_half in k_halves:
            if k_half < 0:
                raise ValueError(f"Negative window half-width {k_half}")
            k_half = min(k_half, max_k_half(self.gt.spec.n_frames))
            cfg = self.recon_config(k_half=k_half)
            result = self.reconstruct(self.flows(source, k_half, perturb), cfg)
            rows.append(
                AblationRow(
                    setting=k_half,
                    window=cfg.window,
                    evaluation=self.evaluate(result.images),
                    histories=result.histories,
                )
            )
            logger.info("K=%d: %.2f dB", cfg.window, rows[-1].evaluation.psnr)
        return rows

    def ablate_lambda(
        self,
        lambdas: Sequence[float],
        source: FlowSource,
        perturb: float = 0.0,
    ) -> list[AblationRow]:
        """
        Sweep the weight of the pull towards the initialization at a fixed window.
        """
        k_half = min(self.config.recon.k_half, max_k_half(self.gt.spec.n_frames))
        flows = self.flows(source, k_half, perturb)
        rows = []
        for lam in lambdas:
            cfg = self.recon_config(k_half=k_half, lam=lam)
            result = self.reconstruct(flows, cfg)
            rows.append(
                AblationRow(
                    setting=lam,
                    window=cfg.window,
                    evaluation=self.evaluate(result.images),
                    histories=result.histories,
                )
            )
            logger.info("lambda=%g: %.2f dB", lam, rows[-1].evaluation.psnr)
        return rows


def experiment(
    config: ExperimentConfig,
    *,
    accel: float | None = None,
    data: str | os.PathLike[str] | None = None,
    mask: str | os.PathLike[str] | None = None,
) -> Experiment:
    """
    Set up an experiment.

    :param config: Experiment settings.
    :param accel: Overrides the configured acceleration rate.
    :param data: Directory written by ``save_ground_truth``, the phantom is
        synthesized from the config when omitted.
    :param mask: Mask file, generated from the config when omitted.
    """
    if data is None:
        gt = generate_phantom(config.phantom)
    else:
        gt = load_ground_truth(data, config)
    if mask is None:
        stack = generate_mask(config.mask_spec(accel))
    else:
        stack = MaskStack(load_real(mask))
    return Experiment(config, gt, stack)
