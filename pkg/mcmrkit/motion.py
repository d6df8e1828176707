"""
Motion estimation.

Two ways to get the flows that drive the motion-compensated reconstruction:

* the classical baseline, a pyramidal Gauss-Newton registration that minimizes the
  warping loss between magnitude frames;
* reconstruction-driven refinement, which descends the reconstruction loss itself,
  with gradients taken through the unrolled fixed-iteration CG solve.
"""
import logging
import math

import attrs
import torch
import torch.nn.functional as F

from .exceptions import GradientCheckError
from .operators import (
    CoilMaps,
    FlowSet,
    MaskStack,
    fft2c,
    ifft2c,
    warp_bilinear,
)
from .parallel import map_frames
from .recon import (
    CineSequence,
    KSpaceStack,
    ReconConfig,
    solve_frame,
    window_indices,
)
from .types import (
    GradMode,
    RefineStatus,
)
from .utils import (
    Rng,
    ensure_finite,
)

logger = logging.getLogger(__name__)

# Damping of the registration normal matrix; keeps it invertible, not a prior.
DAMPING = 1e-3
# Largest flow update of one registration step, in pixels.
MAX_UPDATE = 1.0
GRADIENT_TOLERANCE = 1e-4

"""
Types.
"""


@attrs.frozen
class FlowOptConfig:
    """
    Flow estimation and refinement settings.

    :param max_outer_iters: Gradient evaluations of the refinement.
    :param step_size: Initial step, in pixels along the max-normalized gradient.
    :param step_shrink: Step factor after a rejected step.
    :param step_grow: Step factor after an accepted step.
    :param min_step: Refinement stalls below this step.
    :param max_step: Cap of the grown step.
    :param patience: Accepted steps over which the improvement is measured.
    :param min_improvement: Relative improvement below which refinement stops.
    :param grad_mode: Check the unrolled gradient by finite differences first.
    :param fd_probes: Flow components probed by the finite-difference check.
    :param fd_step: Central-difference step of the check.
    :param pyramid_levels: Registration pyramid depth.
    :param pyramid_scale: Size ratio between pyramid levels.
    :param warp_iters_per_level: Gauss-Newton steps per pyramid level.
    :param window: Side of the registration aggregation window.
    :param seed: Seed of the finite-difference probes.
    """

    max_outer_iters: int = attrs.field(default=30, validator=attrs.validators.ge(0))
    step_size: float = attrs.field(default=0.5, validator=attrs.validators.gt(0.0))
    step_shrink: float = attrs.field(
        default=0.5,
        validator=[attrs.validators.gt(0.0), attrs.validators.lt(1.0)],
    )
    step_grow: float = attrs.field(default=1.5, validator=attrs.validators.ge(1.0))
    min_step: float = attrs.field(default=1e-3, validator=attrs.validators.gt(0.0))
    max_step: float = attrs.field(default=2.0, validator=attrs.validators.gt(0.0))
    patience: int = attrs.field(default=5, validator=attrs.validators.ge(1))
    min_improvement: float = 1e-5
    grad_mode: GradMode = GradMode.Unrolled
    fd_probes: int = attrs.field(default=20, validator=attrs.validators.ge(1))
    fd_step: float = attrs.field(default=1e-3, validator=attrs.validators.gt(0.0))
    pyramid_levels: int = attrs.field(default=3, validator=attrs.validators.ge(1))
    pyramid_scale: float = attrs.field(
        default=0.5,
        validator=[attrs.validators.gt(0.0), attrs.validators.lt(1.0)],
    )
    warp_iters_per_level: int = attrs.field(default=5, validator=attrs.validators.ge(1))
    window: int = attrs.field(default=7, validator=attrs.validators.ge(1))
    seed: int = 0


@attrs.frozen
class LossReport:
    """
    :param l_r: Reconstruction loss, squared error per pixel against the reference.
    :param l_w: Warping loss of the flows on the reference.
    """

    l_r: float
    l_w: float
    l_r_frames: tuple[float, ...]
    l_w_frames: tuple[float, ...]


@attrs.frozen(eq=False)
class RefineResult:
    """
    :param flows: Best flows found.
    :param trajectory: Loss at the start and after every accepted step.
    :param status: Why refinement stopped.
    """

    flows: FlowSet
    trajectory: tuple[float, ...]
    status: RefineStatus


"""
Warping loss.
"""


def _neighbor_slots(k_half: int) -> list[int]:
    return [j for j in range(2 * k_half + 1) if j != k_half]


def warping_loss_frames(
    x: CineSequence,
    flows: FlowSet,
) -> tuple[float, ...]:
    """
    Per-frame warping loss, the mean over the frame's neighbors.
    """
    magnitude = torch.abs(x)
    windows = window_indices(x.shape[0], flows.k_half)
    slots = _neighbor_slots(flows.k_half)
    if not slots:
        return tuple(0.0 for _ in range(x.shape[0]))
    losses = []
    for n in range(x.shape[0]):
        frame_flows = flows.flows[n, slots].to(magnitude.dtype)
        warped = warp_bilinear(magnitude[n], frame_flows)
        targets = magnitude[windows[n, slots]]
        losses.append(float(torch.mean((warped - targets) ** 2)))
    return tuple(losses)


def warping_loss(
    x: CineSequence,
    flows: FlowSet,
) -> float:
    """
    Mean squared magnitude difference between every warped frame and its window
    targets, averaged over all (frame, neighbor) pairs.

    :param x: Sequence ``[N, X, Y]``.
    :param flows: Window flows.
    """
    frames = warping_loss_frames(x, flows)
    return sum(frames) / len(frames)


"""
Baseline registration.
"""


def _box(v: torch.Tensor, size: int) -> torch.Tensor:
    lo = (size - 1) // 2
    hi = size - 1 - lo
    padded = F.pad(v.unsqueeze(1), (lo, hi, lo, hi), mode="replicate")
    return F.avg_pool2d(padded, kernel_size=size, stride=1).squeeze(1)


def _resize(v: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(v.shape[-2:]) == size:
        return v
    squeeze = v.dim() == 3
    batch = v.unsqueeze(1) if squeeze else v
    resized = F.interpolate(
        batch,
        size=size,
        mode="bilinear",
        align_corners=False,
        antialias=size[0] < v.shape[-2],
    )
    return resized.squeeze(1) if squeeze else resized


def _gauss_newton_step(
    src: torch.Tensor,
    tgt: torch.Tensor,
    flow: torch.Tensor,
    window: int,
) -> torch.Tensor:
    warped = warp_bilinear(src, flow)
    gx, gy = torch.gradient(warped, dim=(-2, -1))
    gt = warped - tgt
    sxx = _box(gx * gx, window) + DAMPING
    syy = _box(gy * gy, window) + DAMPING
    sxy = _box(gx * gy, window)
    sxt = _box(gx * gt, window)
    syt = _box(gy * gt, window)
    det = sxx * syy - sxy * sxy
    du = -(syy * sxt - sxy * syt) / det
    dv = -(sxx * syt - sxy * sxt) / det
    update = torch.stack([du, dv], dim=-3).clamp(-MAX_UPDATE, MAX_UPDATE)
    return flow + update


def register(
    src: torch.Tensor,
    tgt: torch.Tensor,
    cfg: FlowOptConfig,
) -> torch.Tensor:
    """
    Coarse-to-fine registration of image pairs.

    Finds ``u`` with ``warp_bilinear(src, u) ≈ tgt`` by linearizing brightness
    constancy at every level and solving the damped local normal equations.

    :param src: Source images ``[P, X, Y]``.
    :param tgt: Target images ``[P, X, Y]``.
    :param cfg: Pyramid settings.

    :return: Flows ``[P, 2, X, Y]``.
    """
    nx, ny = src.shape[-2:]
    sizes = []
    for level in range(cfg.pyramid_levels):
        factor = cfg.pyramid_scale**level
        size = (max(1, round(nx * factor)), max(1, round(ny * factor)))
        if min(size) < cfg.window and sizes:
            break
        sizes.append(size)

    flow = torch.zeros(src.shape[0], 2, *sizes[-1], dtype=src.dtype)
    for size in reversed(sizes):
        if tuple(flow.shape[-2:]) != size:
            previous = flow.shape[-2:]
            flow = _resize(flow, size)
            flow[:, 0] *= size[0] / previous[0]
            flow[:, 1] *= size[1] / previous[1]
        src_level = _resize(src, size)
        tgt_level = _resize(tgt, size)
        for _ in range(cfg.warp_iters_per_level):
            flow = _gauss_newton_step(src_level, tgt_level, flow, cfg.window)
        logger.debug("Registered %d pairs at %dx%d", src.shape[0], *size)
    return flow


def estimate_flow_warploss(
    x: CineSequence,
    k_half: int,
    cfg: FlowOptConfig,
) -> FlowSet:
    """
    Baseline flows minimizing the warping loss, one registration per
    (frame, neighbor) pair.

    Complex frames are matched on their magnitude, scaled to a unit peak.

    :param x: Sequence ``[N, X, Y]``.
    :param k_half: Neighbors on each side.
    :param cfg: Registration settings.
    """
    ensure_finite(x, "registration input")
    magnitude = torch.abs(x).to(torch.float64)
    peak = float(torch.max(magnitude))
    if peak > 0.0:
        magnitude = magnitude / peak
    n_frames, nx, ny = magnitude.shape
    windows = window_indices(n_frames, k_half)
    window = windows.shape[1]

    src = magnitude.unsqueeze(1).expand(n_frames, window, nx, ny).reshape(-1, nx, ny)
    tgt = magnitude[windows].reshape(-1, nx, ny)
    flows = register(src, tgt, cfg).reshape(n_frames, window, 2, nx, ny)
    flows[:, k_half] = 0.0
    logger.info("Estimated %d warping-loss flows with K=%d", n_frames * window, window)
    return FlowSet(flows.to(x.real.dtype).contiguous())


def perturb_flows(
    flows: FlowSet,
    amplitude: float,
    seed: int = 0,
) -> FlowSet:
    """
    Add smooth random error to flows, growing with the square of the temporal
    distance between a frame and its neighbor: registration error grows with the
    motion, and the motion between frames grows with their distance.

    :param flows: Flows to perturb.
    :param amplitude: RMS error in pixels at a distance of one frame.
    :param seed: Seed of the error fields.
    """
    shape = tuple(flows.flows.shape)
    nx, ny = shape[-2:]
    noise = torch.from_numpy(Rng(seed).normal(*shape)).to(torch.complex128)
    rows = (torch.arange(nx, dtype=torch.float64) - nx // 2).unsqueeze(-1) / nx
    cols = (torch.arange(ny, dtype=torch.float64) - ny // 2) / ny
    lowpass = torch.exp(-(rows**2 + cols**2) / (2 * 0.05**2))
    field = ifft2c(fft2c(noise) * lowpass).real
    rms = torch.sqrt(torch.mean(field**2, dim=(-2, -1), keepdim=True))
    field = field / rms.clamp_min(1e-12)

    distance = torch.abs(torch.arange(flows.window) - flows.k_half).to(torch.float64)
    error = amplitude * distance.reshape(1, -1, 1, 1, 1) ** 2 * field
    return FlowSet((flows.flows + error.to(flows.flows.dtype)).contiguous())


"""
Reconstruction loss.
"""


def _frame_loss(
    n: int,
    frame_flows: torch.Tensor,
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None,
    x_ref: CineSequence,
) -> torch.Tensor:
    """
    Frame ``n``'s share of the reconstruction loss after exactly ``cfg.cg_iters``
    CG iterations.
    """
    result = solve_frame(n, y, frame_flows, coils, m, cfg, x_u, tol=0.0)
    error = result.solution - x_ref[n]
    return torch.sum(error.real**2 + error.imag**2) / x_ref.numel()


def recon_loss(
    flows: FlowSet,
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None,
    x_ref: CineSequence,
) -> LossReport:
    """
    Reconstruction loss of a flow field.

    Runs the motion-compensated reconstruction with the fixed iteration count and
    measures the squared complex error against the reference, normalized by the
    number of pixels.

    :param flows: Window flows.
    :param y: Undersampled k-space ``[N, S, X, Y]``.
    :param coils: Sensitivity maps.
    :param m: Sampling mask.
    :param cfg: Reconstruction settings.
    :param x_u: Initialization, required when ``cfg.lam > 0``.
    :param x_ref: Reference sequence.
    """
    with torch.no_grad():
        frames = map_frames(
            lambda n: float(
                _frame_loss(n, flows.flows[n], y, coils, m, cfg, x_u, x_ref)
            ),
            y.shape[0],
        )
    l_w_frames = warping_loss_frames(x_ref, flows)
    return LossReport(
        l_r=sum(frames),
        l_w=sum(l_w_frames) / len(l_w_frames),
        l_r_frames=tuple(frames),
        l_w_frames=l_w_frames,
    )


def grad_recon_loss(
    flows: FlowSet,
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None,
    x_ref: CineSequence,
) -> torch.Tensor:
    """
    Gradient of ``recon_loss`` with respect to every flow component.

    Reverse-mode differentiation through the unrolled CG solve; the warp is
    differentiated through its bilinear weights.
    Each frame's loss depends only on that frame's flows, so frames are
    differentiated independently.

    :return: Tensor shaped like ``flows.flows``.
    """

    def frame_grad(n: int) -> torch.Tensor:
        with torch.enable_grad():
            frame_flows = flows.flows[n].detach().clone().requires_grad_(True)
            loss = _frame_loss(n, frame_flows, y, coils, m, cfg, x_u, x_ref)
            if not math.isfinite(float(loss.detach())):
                raise GradientCheckError(f"Non-finite reconstruction loss at frame {n}")
            (grad,) = torch.autograd.grad(loss, frame_flows, allow_unused=True)
        if grad is None:
            return torch.zeros_like(frame_flows)
        return grad

    return torch.stack(map_frames(frame_grad, y.shape[0]))


def finite_difference_check(
    flows: FlowSet,
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None,
    x_ref: CineSequence,
    *,
    n_probes: int = 20,
    h: float = 1e-3,
    seed: int = 0,
) -> float:
    """
    Compare the unrolled gradient with central differences on random components.

    :return: ``‖g_fd - g‖ / ‖g‖`` over the probed components.
    """
    grad = grad_recon_loss(flows, y, coils, m, cfg, x_u, x_ref)
    n_probes = min(n_probes, grad.numel())
    probes = Rng(seed).choice(grad.numel(), n_probes)
    per_frame = grad[0].numel()

    analytic = []
    numeric = []
    with torch.no_grad():
        for index in probes.tolist():
            n, offset = divmod(index, per_frame)
            losses = []
            for sign in (1.0, -1.0):
                shifted = flows.flows[n].clone()
                shifted.view(-1)[offset] += sign * h
                loss = _frame_loss(n, shifted, y, coils, m, cfg, x_u, x_ref)
                losses.append(float(loss))
            numeric.append((losses[0] - losses[1]) / (2.0 * h))
            analytic.append(float(grad.view(-1)[index]))

    a = torch.tensor(analytic, dtype=torch.float64)
    d = torch.tensor(numeric, dtype=torch.float64)
    scale = float(torch.linalg.vector_norm(a))
    difference = float(torch.linalg.vector_norm(d - a))
    error = difference / scale if scale > 0.0 else difference
    logger.info("Finite-difference check over %d components: %.3e", n_probes, error)
    return error


"""
Reconstruction-driven refinement.
"""


def refine_flow_recon_driven(
    flows_init: FlowSet,
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    cfg_recon: ReconConfig,
    cfg_opt: FlowOptConfig,
    x_u: CineSequence | None,
    x_ref: CineSequence,
) -> RefineResult:
    """
    Refine flows by backtracking gradient descent on the reconstruction loss.

    A step along the max-normalized negative gradient is accepted only if it lowers
    the loss; the step then grows, otherwise it shrinks and is retried.
    Refinement stops after ``max_outer_iters`` gradients, once the last
    ``patience`` accepted steps improved the loss by less than ``min_improvement``
    relative, or when no step above ``min_step`` helps.
    No smoothness term is added to the flows.

    :param flows_init: Starting flows, warping-loss estimates or zeros.
    :param y: Undersampled k-space ``[N, S, X, Y]``.
    :param coils: Sensitivity maps.
    :param m: Sampling mask.
    :param cfg_recon: Reconstruction settings.
    :param cfg_opt: Refinement settings.
    :param x_u: Initialization, required when ``cfg_recon.lam > 0``.
    :param x_ref: Reference sequence.
    """
    if cfg_opt.grad_mode is GradMode.FiniteDifferenceCheck:
        error = finite_difference_check(
            flows_init,
            y,
            coils,
            m,
            cfg_recon,
            x_u,
            x_ref,
            n_probes=cfg_opt.fd_probes,
            h=cfg_opt.fd_step,
            seed=cfg_opt.seed,
        )
        if error > GRADIENT_TOLERANCE:
            raise GradientCheckError(f"Unrolled gradient off by {error:.3e}")

    def loss_of(candidate: FlowSet) -> float:
        return recon_loss(candidate, y, coils, m, cfg_recon, x_u, x_ref).l_r

    flows = flows_init
    loss = loss_of(flows)
    trajectory = [loss]
    step = cfg_opt.step_size
    status = RefineStatus.MaxIters
    logger.info("Refinement starts at loss %.6e", loss)

    for outer in range(cfg_opt.max_outer_iters):
        grad = grad_recon_loss(flows, y, coils, m, cfg_recon, x_u, x_ref)
        scale = float(torch.max(torch.abs(grad)))
        if scale == 0.0:
            status = RefineStatus.Converged
            break
        direction = grad / scale

        while True:
            candidate = FlowSet((flows.flows - step * direction).contiguous())
            candidate_loss = loss_of(candidate)
            if candidate_loss < loss:
                flows, loss = candidate, candidate_loss
                trajectory.append(loss)
                logger.debug("Step %d accepted: %.3g px, loss %.6e", outer, step, loss)
                step = min(step * cfg_opt.step_grow, cfg_opt.max_step)
                break
            step *= cfg_opt.step_shrink
            if step < cfg_opt.min_step:
                status = RefineStatus.Stalled
                break
        if status is RefineStatus.Stalled:
            logger.warning("Refinement stalled at loss %.6e", loss)
            break

        if len(trajectory) > cfg_opt.patience:
            before = trajectory[-1 - cfg_opt.patience]
            if before - loss <= cfg_opt.min_improvement * before:
                status = RefineStatus.Converged
                break

    logger.info(
        "Refinement %s after %d accepted steps at loss %.6e",
        status,
        len(trajectory) - 1,
        loss,
    )
    return RefineResult(flows=flows, trajectory=tuple(trajectory), status=status)
