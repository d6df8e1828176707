import logging
import math

import pytest
import torch

from mcmrkit.metrics import (
    PERFECT,
    CardiacPhases,
    Roi,
    cardiac_phases,
    error_map,
    es_ed_frames,
    frame_psnr,
    phantom_roi,
    phase_report,
    psnr,
    ssim,
    yt_plane,
    yt_psnr,
)
from mcmrkit.phantom import (
    PhantomSpec,
    generate_phantom,
)
from mcmrkit.types import DType
from mcmrkit.utils import Rng


def _checkerboard(size: int = 16, block: int = 2) -> torch.Tensor:
    rows = torch.arange(size).unsqueeze(-1) // block
    cols = torch.arange(size) // block
    return ((rows + cols) % 2).to(torch.float64)


def test_psnr_of_identical_images():
    x = Rng(0).complex_normal(4, 8, 8, dtype=DType.Complex128)

    assert psnr(x, x) == PERFECT
    assert math.isinf(psnr(x, x.clone()))


def test_psnr_closed_form():
    ref = torch.ones(8, 8, dtype=torch.float64)

    assert psnr(ref, 1.1 * ref) == pytest.approx(20.0)
    assert psnr(ref, 1.1 * ref, peak=10.0) == pytest.approx(40.0)


def test_psnr_compares_magnitudes():
    ref = torch.ones(4, 4, dtype=torch.complex128)

    assert psnr(ref, 1j * ref) == PERFECT


def test_psnr_checks_shapes():
    with pytest.raises(ValueError):
        psnr(torch.ones(4, 4), torch.ones(4, 5))


def test_frame_psnr_shares_peak():
    ref = torch.ones(2, 8, 8, dtype=torch.float64)
    ref[1] *= 0.5
    est = ref + 0.1

    values = frame_psnr(ref, est)
    assert values == pytest.approx((20.0, 20.0))


def test_ssim_of_identical_images():
    x = torch.from_numpy(Rng(1).uniform(3, 16, 16))

    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_of_inverted_pattern():
    board = _checkerboard()

    assert ssim(board, 1.0 - board) < 0.2


def test_ssim_is_scale_free():
    ref = torch.from_numpy(Rng(4).uniform(2, 16, 16))
    est = ref + torch.from_numpy(0.05 * Rng(5).normal(2, 16, 16))

    assert ssim(2.0 * ref, 2.0 * est) == pytest.approx(ssim(ref, est))


def test_full_roi_equals_whole_image():
    ref = torch.from_numpy(Rng(2).uniform(2, 16, 16))
    est = ref + torch.from_numpy(0.05 * Rng(3).normal(2, 16, 16))
    roi = Roi(x0=0, y0=0, width=16, height=16, offset=0)

    assert psnr(ref, est, roi=roi) == pytest.approx(psnr(ref, est))
    assert ssim(ref, est, roi=roi) == pytest.approx(ssim(ref, est))


def test_roi_is_clamped():
    roi = Roi(x0=-5, y0=2, width=4, height=3, offset=2)

    assert roi.bounds((10, 10)) == (slice(0, 1), slice(0, 7))
    assert roi.crop(torch.zeros(3, 10, 10)).shape == (3, 1, 7)


def test_roi_outside_image():
    with pytest.raises(ValueError):
        Roi(x0=20, y0=0, width=4, height=4, offset=0).bounds((10, 10))


def test_phantom_roi():
    roi = phantom_roi(PhantomSpec())

    assert (roi.x0, roi.y0, roi.width, roi.height) == (36, 36, 57, 57)
    assert roi.bounds((128, 128)) == (slice(26, 103), slice(26, 103))


def test_yt_plane():
    x = Rng(4).complex_normal(5, 8, 6, dtype=DType.Complex128)
    plane = yt_plane(x, 3)

    assert plane.shape == (5, 6)
    assert torch.equal(plane, torch.abs(x[:, 3, :]))
    assert yt_psnr(x, x, 3) == PERFECT
    with pytest.raises(ValueError):
        yt_plane(x, 8)


def test_error_map():
    ref = torch.ones(2, 3, dtype=torch.complex128)
    est = torch.full((2, 3), -3.0, dtype=torch.complex128)

    expected = torch.full((2, 3), 2.0, dtype=torch.float64)
    assert torch.allclose(error_map(ref, est), expected)


@pytest.mark.parametrize(
    "n_frames, amp, expected",
    [
        (16, 0.15, CardiacPhases(es=8, ed=0)),
        (20, 0.3, CardiacPhases(es=10, ed=0)),
        (16, 0.0, CardiacPhases(es=0, ed=0, degenerate=True)),
    ],
)
def test_cardiac_phases(n_frames, amp, expected):
    spec = PhantomSpec(n_frames=n_frames, contraction_amp=amp)

    assert cardiac_phases(spec) == expected


def test_phase_report(caplog):
    ref = torch.ones(3, 8, 8, dtype=torch.float64)
    est = ref.clone()
    est[0] += 0.1
    est[1] += 0.01
    phases = CardiacPhases(es=1, ed=0)

    with caplog.at_level(logging.WARNING):
        report = phase_report(ref, est, phases)
    assert report.ed_psnr == pytest.approx(20.0)
    assert report.es_psnr == pytest.approx(40.0)
    assert report.frame_psnr[2] == PERFECT
    assert "ES frame 1" in caplog.text


def test_es_ed_frames_of_phantom():
    spec = PhantomSpec(nx=32, ny=32, n_frames=16, r_outer=8.0, r_inner=4.0)

    assert es_ed_frames(generate_phantom(spec)) == CardiacPhases(es=8, ed=0)
