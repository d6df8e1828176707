import pytest
import torch

from mcmrkit.exceptions import SolverDivergedError
from mcmrkit.metrics import psnr
from mcmrkit.operators import (
    Encoding,
    FlowSet,
    MaskStack,
    adjoint_ah,
)
from mcmrkit.phantom import (
    PhantomSpec,
    generate_phantom,
    simulate_acquisition,
    synthesize_coil_maps,
)
from mcmrkit.recon import (
    ReconConfig,
    cg_solve,
    cgsense_init,
    max_k_half,
    mc_forward,
    mcmr_reconstruct,
    neighbor_window,
    window_flows,
    window_indices,
)
from mcmrkit.sampling import (
    MaskSpec,
    generate_mask,
)
from mcmrkit.types import DType
from mcmrkit.utils import Rng

TINY = PhantomSpec(
    nx=32,
    ny=32,
    n_frames=6,
    n_coils=4,
    r_outer=8.0,
    r_inner=4.0,
    background_level=0.0,
    noise_sigma=0.0,
    dtype=DType.Complex128,
)


@pytest.fixture(scope="module")
def tiny():
    gt = generate_phantom(TINY)
    mask = generate_mask(MaskSpec(n_frames=6, n_pe=32, accel=4.0))
    return gt, mask, simulate_acquisition(gt, mask)


def _relative(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.linalg.vector_norm(a - b) / torch.linalg.vector_norm(b))


def test_neighbor_window():
    assert neighbor_window(0, 1, 25) == [24, 0, 1]
    assert neighbor_window(7, 0, 25) == [7]
    assert neighbor_window(24, 2, 25) == [22, 23, 24, 0, 1]


def test_neighbor_window_too_wide():
    with pytest.raises(ValueError):
        neighbor_window(0, 3, 6)
    with pytest.raises(ValueError):
        neighbor_window(6, 1, 6)


def test_max_k_half():
    assert max_k_half(16) == 7
    assert max_k_half(25) == 12
    assert 2 * max_k_half(6) + 1 <= 6


def test_window_flows_gathers_pairs():
    pairwise = torch.from_numpy(Rng(0).normal(5, 5, 2, 4, 4))
    flows = window_flows(pairwise, 1)

    assert flows.window == 3
    windows = window_indices(5, 1)
    for n in range(5):
        for j in range(3):
            assert torch.equal(flows.flows[n, j], pairwise[n, windows[n, j]])


def test_cg_identity():
    rhs = Rng(1).complex_normal(4, 4, dtype=DType.Complex128)
    result = cg_solve(lambda v: v, rhs, iters=10)

    assert result.iterations == 1
    assert torch.allclose(result.solution, rhs)


def test_cg_diagonal():
    diagonal = torch.tensor([2.0, 3.0], dtype=torch.complex128)
    rhs = torch.tensor([2.0, 3.0], dtype=torch.complex128)
    result = cg_solve(lambda v: diagonal * v, rhs, iters=2)

    assert result.iterations <= 2
    assert torch.allclose(result.solution, torch.ones(2, dtype=torch.complex128))


def test_cg_matches_dense_solve():
    nx = ny = 16
    eps = 0.1
    coils = synthesize_coil_maps(nx, ny, 3, DType.Complex128)
    row = (torch.from_numpy(Rng(2).uniform(ny)) < 0.4).to(torch.float64)
    row[ny // 2] = 1.0
    op = Encoding(coils, row)

    def normal(v: torch.Tensor) -> torch.Tensor:
        return op.normal(v) + eps * v

    basis = torch.eye(nx * ny, dtype=torch.complex128).reshape(nx * ny, nx, ny)
    dense = torch.stack([normal(e).reshape(-1) for e in basis], dim=1)
    rhs = Rng(3).complex_normal(nx, ny, dtype=DType.Complex128)
    expected = torch.linalg.solve(dense, rhs.reshape(-1)).reshape(nx, ny)

    result = cg_solve(normal, rhs, iters=300, tol=1e-14)
    assert _relative(result.solution, expected) < 1e-8
    assert all(b <= a + 1e-12 for a, b in zip(result.energies, result.energies[1:]))


def test_cg_zero_rhs():
    rhs = torch.zeros(3, 3, dtype=torch.complex64)
    result = cg_solve(lambda v: 2 * v, rhs, iters=5)

    assert result.iterations == 0
    assert torch.all(result.solution == 0)


def test_cg_rejects_non_finite():
    rhs = torch.full((3, 3), float("nan"), dtype=torch.complex64)

    with pytest.raises(SolverDivergedError):
        cg_solve(lambda v: v, rhs, iters=5)


def test_cgsense_full_sampling(tiny):
    gt, _, _ = tiny
    full = MaskStack.full(TINY.n_frames, TINY.ny)
    x_u = cgsense_init(simulate_acquisition(gt, full), gt.coil_maps, full)

    assert _relative(x_u, gt.sequence) < 1e-4


def test_cgsense_without_iterations(tiny):
    gt, mask, y = tiny
    x_u = cgsense_init(y, gt.coil_maps, mask, init_iters=0)

    for n in range(TINY.n_frames):
        assert torch.equal(x_u[n], adjoint_ah(y[n], gt.coil_maps, mask.row(n)))


def test_cgsense_beats_zero_filling():
    gt = generate_phantom(PhantomSpec())
    mask = generate_mask(MaskSpec(n_frames=16, n_pe=128, accel=8.0))
    y = simulate_acquisition(gt, mask)

    zero_filled = cgsense_init(y, gt.coil_maps, mask, init_iters=0)
    x_u = cgsense_init(y, gt.coil_maps, mask)
    assert psnr(gt.sequence, x_u) >= psnr(gt.sequence, zero_filled) + 1.0


def test_reduces_to_cgsense(tiny):
    gt, mask, y = tiny
    cfg = ReconConfig(k_half=0, lam=0.0, cg_iters=10)
    flows = FlowSet.zeros(TINY.n_frames, 0, (TINY.nx, TINY.ny), torch.float64)
    result = mcmr_reconstruct(y, flows, gt.coil_maps, mask, cfg)

    expected = cgsense_init(y, gt.coil_maps, mask, init_iters=10)
    assert torch.allclose(result.images, expected, atol=1e-10)
    assert len(result.histories) == TINY.n_frames


def test_large_lambda_returns_init(tiny):
    gt, mask, y = tiny
    x_u = cgsense_init(y, gt.coil_maps, mask)
    cfg = ReconConfig(k_half=1, lam=1e6)
    result = mcmr_reconstruct(y, gt.window(1), gt.coil_maps, mask, cfg, x_u)

    assert _relative(result.images, x_u) < 1e-2


def test_lambda_needs_init(tiny):
    gt, mask, y = tiny

    with pytest.raises(ValueError):
        mcmr_reconstruct(y, gt.window(1), gt.coil_maps, mask, ReconConfig(1, lam=0.1))


def test_window_mismatch(tiny):
    gt, mask, y = tiny

    with pytest.raises(ValueError):
        mcmr_reconstruct(y, gt.window(1), gt.coil_maps, mask, ReconConfig(k_half=2))


def test_motion_compensation_helps(tiny):
    gt, mask, y = tiny
    cfg = ReconConfig(k_half=2)
    zero = FlowSet.zeros(TINY.n_frames, 2, (TINY.nx, TINY.ny), torch.float64)

    compensated = mcmr_reconstruct(y, gt.window(2), gt.coil_maps, mask, cfg)
    uncompensated = mcmr_reconstruct(y, zero, gt.coil_maps, mask, cfg)
    assert _relative(compensated.images, gt.sequence) < _relative(
        uncompensated.images, gt.sequence
    )


def test_forward_model_matches_measurements():
    spec = PhantomSpec(noise_sigma=0.0, dtype=DType.Complex128)
    gt = generate_phantom(spec)
    full = MaskStack.full(spec.n_frames, spec.ny)
    k_half = 1

    predicted = mc_forward(gt.sequence, gt.window(k_half), gt.coil_maps, full)
    measured = gt.kspace[window_indices(spec.n_frames, k_half)]
    assert _relative(predicted, measured) < 0.02


def test_error_grows_with_acceleration():
    spec = PhantomSpec(noise_sigma=0.0)
    gt = generate_phantom(spec)
    cfg = ReconConfig(k_half=4)

    errors = []
    for accel in [8.0, 16.0, 20.0]:
        mask = generate_mask(MaskSpec(n_frames=16, n_pe=128, accel=accel))
        y = simulate_acquisition(gt, mask)
        result = mcmr_reconstruct(y, gt.window(4), gt.coil_maps, mask, cfg)
        errors.append(_relative(result.images, gt.sequence))
    assert errors[0] <= errors[1] <= errors[2]
