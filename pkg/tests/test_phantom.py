import numpy as np
import pytest
import torch

from mcmrkit.metrics import psnr
from mcmrkit.motion import warping_loss
from mcmrkit.operators import (
    FlowSet,
    MaskStack,
    coil_combine,
    ifft2c,
    warp_bilinear,
)
from mcmrkit.phantom import (
    PhantomSpec,
    analytic_frame,
    generate_phantom,
    motion_support,
    simulate_acquisition,
)
from mcmrkit.sampling import (
    MaskSpec,
    generate_mask,
)
from mcmrkit.types import DType

SMALL = PhantomSpec(
    nx=64,
    ny=64,
    n_frames=8,
    n_coils=4,
    r_outer=8.0,
    r_inner=4.0,
    noise_sigma=0.0,
    dtype=DType.Complex128,
)


@pytest.fixture(scope="module")
def small():
    return generate_phantom(SMALL)


@pytest.fixture(scope="module")
def default():
    return generate_phantom(PhantomSpec())


def test_shapes(small):
    assert small.sequence.shape == (8, 64, 64)
    assert small.flows_gt.shape == (8, 8, 2, 64, 64)
    assert small.coil_maps.maps.shape == (4, 64, 64)
    assert small.kspace.shape == (8, 4, 64, 64)
    assert small.sequence.dtype == torch.complex128


def test_ring_areas_follow_scales(small):
    scales = small.scales

    assert scales[0] == 1.0
    assert min(range(8), key=lambda n: scales[n]) == 4
    assert small.ring_areas[4] == pytest.approx(
        small.ring_areas[0] * (1 - SMALL.contraction_amp) ** 2
    )


def test_self_flows_are_zero(small):
    for n in range(SMALL.n_frames):
        assert torch.all(small.flows_gt[n, n] == 0)


def test_flows_compose_to_identity(small):
    # Scaling about one center: n -> j -> n brings points back.
    u = small.flows_gt[1, 3]
    v = small.flows_gt[3, 1]
    inner = small.spec.center
    row, col = int(inner[0]) + 5, int(inner[1])

    assert (1 + u[0, row, col] / (row - inner[0])) * (
        1 + v[0, row, col] / (row - inner[0])
    ) == pytest.approx(1.0)


def test_motion_support():
    r = torch.tensor([0.0, SMALL.r_outer, 100.0]).numpy()
    support = motion_support(SMALL, r)

    assert support[0] == 1.0
    assert support[1] == 1.0
    assert support[2] == 0.0


def test_ground_truth_flows_warp_frames(small):
    # Warped frames match away from the fade between heart and chest wall.
    window = small.window(1)

    assert warping_loss(small.sequence, window) < 0.01 * float(
        torch.mean(torch.abs(small.sequence) ** 2)
    )


def test_zero_flows_are_worse(small):
    window = small.window(1)
    zeros = FlowSet.zeros(8, 1, (64, 64), torch.float64)

    assert warping_loss(small.sequence, zeros) > warping_loss(small.sequence, window)


def test_static_phantom():
    spec = PhantomSpec(
        nx=32, ny=32, n_frames=4, r_outer=8.0, r_inner=4.0, contraction_amp=0.0
    )
    gt = generate_phantom(spec)

    assert torch.all(gt.flows_gt == 0)
    assert torch.equal(gt.sequence[0], gt.sequence[3])


def test_noiseless_kspace_is_consistent(small):
    images = coil_combine(ifft2c(small.kspace), small.coil_maps)

    assert torch.allclose(images, small.sequence, atol=1e-10)


def test_noise_level():
    geometry = dict(nx=32, ny=32, n_frames=4, r_outer=8.0, r_inner=4.0)
    sigma = 0.05
    noisy = generate_phantom(PhantomSpec(**geometry, noise_sigma=sigma))
    clean = generate_phantom(PhantomSpec(**geometry, noise_sigma=0.0))
    noise = noisy.kspace - clean.kspace
    peak = float(torch.max(torch.abs(clean.sequence)))

    rms = float(torch.sqrt(torch.mean(torch.abs(noise) ** 2)))
    assert rms == pytest.approx(sigma * peak, rel=0.05)


def test_deterministic():
    spec = PhantomSpec(nx=32, ny=32, n_frames=4, r_outer=8.0, r_inner=4.0, seed=3)

    assert torch.equal(generate_phantom(spec).kspace, generate_phantom(spec).kspace)


def test_analytic_frame_scaling():
    cx, cy = SMALL.center
    mid = 0.5 * (SMALL.r_inner + SMALL.r_outer)
    rows = np.array([cx, cx + mid, cx + 0.9 * mid])
    cols = np.array([cy, cy, cy])

    diastole = analytic_frame(SMALL, 1.0, rows, cols)
    systole = analytic_frame(SMALL, 0.9, rows, cols)
    assert diastole[0] == pytest.approx(systole[0])
    assert systole[2] == pytest.approx(diastole[1], abs=1e-6)


def test_acquisition_zeroes_unsampled_lines(small):
    mask = generate_mask(MaskSpec(n_frames=8, n_pe=64, accel=4.0))
    y = simulate_acquisition(small, mask)

    unsampled = mask.lines == 0
    for n in range(8):
        assert torch.all(y[n][..., unsampled[n]] == 0)
        assert torch.equal(y[n][..., ~unsampled[n]], small.kspace[n][..., ~unsampled[n]])


def test_acquisition_checks_mask(small):
    with pytest.raises(ValueError):
        simulate_acquisition(small, MaskStack.full(8, 32))


def test_invalid_radii():
    with pytest.raises(ValueError):
        PhantomSpec(nx=32, ny=32, r_outer=20.0, r_inner=4.0)
    with pytest.raises(ValueError):
        PhantomSpec(contraction_amp=0.5)


def test_ground_truth_flows_on_default_phantom(default):
    frame = default.sequence[0]

    for n in range(1, default.spec.n_frames):
        warped = warp_bilinear(frame, default.flows_gt[0, n].to(torch.float32))
        target = default.sequence[n]
        error = torch.linalg.vector_norm(warped - target)
        assert float(error / torch.linalg.vector_norm(target)) < 0.02


def test_frame_energy_changes_smoothly(default):
    norms = torch.linalg.vector_norm(default.sequence, dim=(-2, -1))

    change = torch.abs(norms - torch.roll(norms, 1)) / torch.roll(norms, 1)
    assert float(change.max()) < 0.05


def test_default_noise_keeps_images_readable(default):
    images = coil_combine(ifft2c(default.kspace), default.coil_maps)

    assert 35.0 < psnr(default.sequence, images) < 45.0
