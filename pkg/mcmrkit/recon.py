import logging
import math
from typing import (
    Callable,
    TypeAlias,
)

import attrs
import torch

from .exceptions import SolverDivergedError
from .operator import LinearOperator
from .operators import (
    CoilMaps,
    FlowSet,
    MaskStack,
    adjoint_ah,
    forward_a,
    warp_adjoint,
    warp_bilinear,
)
from .parallel import map_frames
from .utils import vdot

logger = logging.getLogger(__name__)

CineSequence: TypeAlias = torch.Tensor
KSpaceStack: TypeAlias = torch.Tensor
NormalMap: TypeAlias = Callable[[torch.Tensor], torch.Tensor]

# Relative slack on the CG energy before a rise is reported.
ENERGY_SLACK = 1e-6

"""
Types.
"""


@attrs.frozen
class ReconConfig:
    """
    Motion-compensated reconstruction settings.

    :param k_half: Neighbors on each side, the window holds ``K = 2k + 1`` frames.
    :param lam: Weight of the pull towards the initialization ``x_u``.
    :param cg_iters: Fixed CG iteration count I.
    :param cg_tol: Relative residual at which CG stops early.
    :param init_iters: Iteration cap of the CG-SENSE initialization.
    """

    k_half: int = attrs.field(default=4, validator=attrs.validators.ge(0))
    lam: float = attrs.field(default=0.0, validator=attrs.validators.ge(0.0))
    cg_iters: int = attrs.field(default=10, validator=attrs.validators.ge(1))
    cg_tol: float = attrs.field(default=1e-10, validator=attrs.validators.ge(0.0))
    init_iters: int = attrs.field(default=10, validator=attrs.validators.ge(0))

    @property
    def window(self) -> int:
        return 2 * self.k_half + 1


@attrs.frozen(eq=False)
class CgResult:
    """
    :param solution: Final iterate.
    :param history: Relative residual ``‖r_k‖ / ‖b‖`` from ``k = 0``.
    :param energies: Quadratic energy ``½<x, Vx> - Re<b, x>`` of each iterate.
    """

    solution: torch.Tensor
    history: tuple[float, ...]
    energies: tuple[float, ...]

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


@attrs.frozen(eq=False)
class ReconResult:
    images: CineSequence
    histories: tuple[tuple[float, ...], ...]


"""
Windows.
"""


def neighbor_window(
    n: int,
    k_half: int,
    n_frames: int,
) -> list[int]:
    """
    Cyclic window of ``2k + 1`` frames centered on frame ``n``.

    The cardiac cycle is periodic, so the frame before 0 is ``N - 1``.
    """
    if 2 * k_half + 1 > n_frames:
        raise ValueError(f"Window of {2 * k_half + 1} frames exceeds {n_frames} frames")
    if not 0 <= n < n_frames:
        raise ValueError(f"Frame {n} outside 0..{n_frames - 1}")
    return [(n + offset) % n_frames for offset in range(-k_half, k_half + 1)]


def max_k_half(n_frames: int) -> int:
    """
    Half-width of the widest odd window that fits in the sequence.
    """
    return (n_frames - 1) // 2


def window_indices(
    n_frames: int,
    k_half: int,
) -> torch.Tensor:
    """
    ``[N, K]`` table of every frame's window.
    """
    return torch.tensor(
        [neighbor_window(n, k_half, n_frames) for n in range(n_frames)],
        dtype=torch.long,
    )


def window_flows(
    pairwise: torch.Tensor,
    k_half: int,
) -> FlowSet:
    """
    Gather a window FlowSet out of an all-pairs table ``[N, N, 2, X, Y]``.
    """
    n_frames = pairwise.shape[0]
    if pairwise.dim() != 5 or pairwise.shape[1] != n_frames:
        raise ValueError(
            f"Expected an [N, N, 2, X, Y] table, got {tuple(pairwise.shape)}"
        )
    windows = window_indices(n_frames, k_half)
    frames = torch.arange(n_frames).unsqueeze(-1)
    return FlowSet(pairwise[frames, windows].contiguous())


"""
Solver.
"""


def cg_solve(
    apply_normal: NormalMap,
    rhs: torch.Tensor,
    iters: int,
    tol: float = 1e-10,
) -> CgResult:
    """
    Conjugate gradient on ``V x = b`` from a zero initial guess.

    ``V`` must be self-adjoint positive semi-definite.
    Every step is a differentiable composition of operator applications and
    scalar recurrences, so autograd can run through the unrolled iteration.

    :param apply_normal: The map ``x ↦ V x``.
    :param rhs: Right-hand side ``b``.
    :param iters: Iteration cap.
    :param tol: Stop once ``‖r‖ / ‖b‖ < tol``.
    """
    x = torch.zeros_like(rhs)
    rr = vdot(rhs, rhs).real
    b_norm = math.sqrt(float(rr.detach()))
    if b_norm == 0.0:
        return CgResult(solution=x, history=(0.0,), energies=(0.0,))
    if not math.isfinite(b_norm):
        raise SolverDivergedError("Non-finite right-hand side")

    r = rhs
    p = rhs
    history = [1.0]
    energies = [0.0]
    for i in range(iters):
        q = apply_normal(p)
        pq = vdot(p, q).real
        if float(pq.detach()) <= 0.0:
            logger.debug("CG reached the null space of the operator at step %d", i)
            break
        alpha = rr / pq
        x = x + alpha * p
        r = r - alpha * q
        rr_next = vdot(r, r).real

        residual = math.sqrt(float(rr_next.detach())) / b_norm
        if not math.isfinite(residual):
            raise SolverDivergedError(f"CG iterate became non-finite at step {i}")
        energy = -0.5 * float((vdot(rhs, x) + vdot(x, r)).real.detach())
        if energy > energies[-1] + ENERGY_SLACK * abs(energies[-1]):
            logger.warning(
                "CG energy rose at step %d: %g -> %g", i, energies[-1], energy
            )
        history.append(residual)
        energies.append(energy)
        logger.debug("CG step %d: relative residual %.3e", i, residual)
        if residual < tol:
            break

        p = r + (rr_next / rr) * p
        rr = rr_next

    return CgResult(solution=x, history=tuple(history), energies=tuple(energies))


"""
CG-SENSE.
"""


def cgsense_init(
    y: KSpaceStack,
    coils: CoilMaps,
    m: MaskStack,
    init_iters: int = 10,
) -> CineSequence:
    """
    Frame-by-frame CG-SENSE with a capped iteration count.

    Solves ``AᴴA x = Aᴴy`` for every frame separately.
    With ``init_iters = 0`` the zero-filled ``Aᴴy`` is returned as is.

    :param y: Undersampled k-space ``[N, S, X, Y]``.
    :param coils: Sensitivity maps.
    :param m: Sampling mask.
    :param init_iters: CG iteration cap.

    :return: Initialization ``x_u`` ``[N, X, Y]``.
    """
    if y.dim() != 4 or y.shape[0] != m.n_frames:
        raise ValueError(f"k-space {tuple(y.shape)} does not match the mask")

    def solve(n: int) -> torch.Tensor:
        row = m.row(n)
        rhs = adjoint_ah(y[n], coils, row)
        if init_iters == 0:
            return rhs
        result = cg_solve(
            lambda v: adjoint_ah(forward_a(v, coils, row), coils, row),
            rhs,
            init_iters,
        )
        logger.debug("CG-SENSE frame %d: %d iterations", n, result.iterations)
        return result.solution

    return torch.stack(map_frames(solve, m.n_frames))


"""
Motion-compensated encoding.
"""


def frame_forward(
    x: torch.Tensor,
    flows: torch.Tensor,
    coils: CoilMaps,
    rows: torch.Tensor,
) -> torch.Tensor:
    """
    Encode one frame into the k-space of each frame of its window.

    :param x: Frame ``[X, Y]``.
    :param flows: Window flows ``[K, 2, X, Y]`` of the frame.
    :param coils: Sensitivity maps.
    :param rows: Mask rows ``[K, Y]`` of the window frames.

    :return: ``[K, S, X, Y]``.
    """
    return forward_a(warp_bilinear(x, flows), coils, rows)


def frame_adjoint(
    r: torch.Tensor,
    flows: torch.Tensor,
    coils: CoilMaps,
    rows: torch.Tensor,
) -> torch.Tensor:
    return torch.sum(warp_adjoint(adjoint_ah(r, coils, rows), flows), dim=0)


def _check_flows(flows: FlowSet, n_frames: int) -> torch.Tensor:
    if flows.n_frames != n_frames or flows.window > n_frames:
        raise ValueError(
            f"Flows {tuple(flows.flows.shape)} do not fit {n_frames} frames"
        )
    return window_indices(n_frames, flows.k_half)


def mc_forward(
    x: CineSequence,
    flows: FlowSet,
    coils: CoilMaps,
    m: MaskStack,
) -> torch.Tensor:
    """
    Motion-compensated forward model.

    Every frame is warped onto each frame of its window and encoded with that
    frame's mask row.

    :return: Stacked k-space ``[N, K, S, X, Y]``.
    """
    windows = _check_flows(flows, x.shape[0])
    return torch.stack(
        [
            frame_forward(x[n], flows.flows[n], coils, m.rows(windows[n]))
            for n in range(x.shape[0])
        ]
    )


def mc_adjoint(
    r: torch.Tensor,
    flows: FlowSet,
    coils: CoilMaps,
    m: MaskStack,
) -> CineSequence:
    """
    Exact adjoint of ``mc_forward``.

    :param r: Stacked k-space ``[N, K, S, X, Y]``.
    """
    windows = _check_flows(flows, r.shape[0])
    return torch.stack(
        [
            frame_adjoint(r[n], flows.flows[n], coils, m.rows(windows[n]))
            for n in range(r.shape[0])
        ]
    )


class MotionCompensatedEncoding(LinearOperator):
    def __init__(
        self,
        flows: FlowSet,
        coils: CoilMaps,
        m: MaskStack,
    ) -> None:
        nx, ny = coils.shape
        super().__init__(
            (flows.n_frames, nx, ny),
            (flows.n_frames, flows.window, coils.n_coils, nx, ny),
        )
        self.flows = flows
        self.coils = coils
        self.mask = m

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mc_forward(x, self.flows, self.coils, self.mask)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return mc_adjoint(y, self.flows, self.coils, self.mask)


"""
Reconstruction.
"""


def solve_frame(
    n: int,
    y: KSpaceStack,
    frame_flows: torch.Tensor,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None = None,
    *,
    tol: float | None = None,
) -> CgResult:
    """
    Solve ``(UᴴAᴴAU + λI) x = UᴴAᴴy + λx_u`` for frame ``n``.

    Unknown frames do not couple, so each frame is an independent system; the
    window's measurements are indexed out of ``y`` in place.

    :param n: Frame index.
    :param y: Undersampled k-space ``[N, S, X, Y]``.
    :param frame_flows: Window flows ``[K, 2, X, Y]`` of the frame.
    :param coils: Sensitivity maps.
    :param m: Sampling mask.
    :param cfg: Reconstruction settings.
    :param x_u: Initialization, required when ``cfg.lam > 0``.
    :param tol: Overrides ``cfg.cg_tol``.
    """
    window = torch.tensor(neighbor_window(n, cfg.k_half, y.shape[0]))
    rows = m.rows(window)
    rhs = frame_adjoint(y[window], frame_flows, coils, rows)

    def normal(v: torch.Tensor) -> torch.Tensor:
        encoded = frame_forward(v, frame_flows, coils, rows)
        return frame_adjoint(encoded, frame_flows, coils, rows)

    tol = cfg.cg_tol if tol is None else tol
    if cfg.lam > 0.0:
        if x_u is None:
            raise ValueError("`x_u` is required when `lam` > 0")
        rhs = rhs + cfg.lam * x_u[n]

        def regularized(v: torch.Tensor) -> torch.Tensor:
            return normal(v) + cfg.lam * v

        return cg_solve(regularized, rhs, cfg.cg_iters, tol)
    return cg_solve(normal, rhs, cfg.cg_iters, tol)


def mcmr_reconstruct(
    y: KSpaceStack,
    flows: FlowSet,
    coils: CoilMaps,
    m: MaskStack,
    cfg: ReconConfig,
    x_u: CineSequence | None = None,
) -> ReconResult:
    """
    Motion-compensated reconstruction of the whole sequence.

    Each frame is reconstructed from the measurements of its ``K`` neighbors,
    warped by ``flows``, with ``cfg.cg_iters`` CG iterations.

    :param y: Undersampled k-space ``[N, S, X, Y]``.
    :param flows: Window flows with ``K = 2 · cfg.k_half + 1``.
    :param coils: Sensitivity maps.
    :param m: Sampling mask.
    :param cfg: Reconstruction settings.
    :param x_u: Initialization, required when ``cfg.lam > 0``.
    """
    if flows.window != cfg.window:
        raise ValueError(f"Flows carry K={flows.window}, config asks for K={cfg.window}")
    if cfg.lam > 0.0 and x_u is None:
        raise ValueError("`x_u` is required when `lam` > 0")
    _check_flows(flows, y.shape[0])

    results = map_frames(
        lambda n: solve_frame(n, y, flows.flows[n], coils, m, cfg, x_u),
        y.shape[0],
    )
    logger.info(
        "Reconstructed %d frames with K=%d, lambda=%g, I=%d",
        y.shape[0],
        cfg.window,
        cfg.lam,
        cfg.cg_iters,
    )
    return ReconResult(
        images=torch.stack([result.solution for result in results]),
        histories=tuple(result.history for result in results),
    )
