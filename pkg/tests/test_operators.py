import pytest
import torch

from mcmrkit.operator import (
    FunctionalOperator,
    adjoint_check,
)
from mcmrkit.operators import (
    CoilMaps,
    CoilSensitivity,
    Encoding,
    FlowSet,
    Fourier,
    MaskStack,
    Sampling,
    Warp,
    apply_mask,
    coil_combine,
    coil_expand,
    fft2c,
    ifft2c,
    warp_bilinear,
)
from mcmrkit.phantom import synthesize_coil_maps
from mcmrkit.recon import MotionCompensatedEncoding
from mcmrkit.types import DType
from mcmrkit.utils import (
    Rng,
    norm,
)

NX = 12
NY = 10
N_COILS = 3
N_FRAMES = 5
TOLERANCE = 1e-6
COMPLEX = DType.Complex128


def _coils() -> CoilMaps:
    return synthesize_coil_maps(NX, NY, N_COILS, COMPLEX)


def _row(seed: int = 0) -> torch.Tensor:
    row = torch.from_numpy(Rng(seed).uniform(NY) < 0.5).to(torch.float64)
    row[NY // 2] = 1.0
    return row


def _flow(*lead: int, amplitude: float = 1.5) -> torch.Tensor:
    return amplitude * torch.from_numpy(Rng(3).normal(*lead, 2, NX, NY))


def test_fourier_is_unitary():
    x = Rng(1).complex_normal(NX, NY, dtype=COMPLEX)

    assert norm(fft2c(x)) == pytest.approx(norm(x), rel=1e-12)
    assert torch.allclose(ifft2c(fft2c(x)), x, atol=1e-12)


def test_fourier_center():
    delta = torch.zeros(NX, NY, dtype=torch.complex128)
    delta[NX // 2, NY // 2] = 1.0
    expected = torch.full((NX, NY), (NX * NY) ** -0.5, dtype=torch.complex128)

    assert torch.allclose(fft2c(delta), expected, atol=1e-12)
    constant = torch.ones(NX, NY, dtype=torch.complex128)
    peak = torch.abs(fft2c(constant)).argmax()
    assert divmod(int(peak), NY) == (NX // 2, NY // 2)


def test_fourier_needs_two_dims():
    with pytest.raises(ValueError):
        fft2c(torch.zeros(4, dtype=torch.complex64))


def test_coil_round_trip():
    coils = _coils()
    x = Rng(2).complex_normal(NX, NY, dtype=COMPLEX)

    assert torch.allclose(coil_combine(coil_expand(x, coils), coils), x, atol=1e-12)


def test_coil_maps_must_be_normalized():
    with pytest.raises(ValueError):
        CoilMaps(2.0 * _coils().maps)
    with pytest.raises(ValueError):
        CoilMaps(torch.ones(N_COILS, NX, NY))


def test_apply_mask_zeroes_lines():
    row = _row()
    ksp = Rng(4).complex_normal(N_COILS, NX, NY, dtype=COMPLEX)
    masked = apply_mask(ksp, row)

    assert torch.all(masked[..., row == 0] == 0)
    assert torch.equal(masked[..., row == 1], ksp[..., row == 1])


def test_mask_validation():
    with pytest.raises(ValueError):
        MaskStack(torch.full((2, NY), 0.5))
    with pytest.raises(ValueError):
        MaskStack(torch.zeros(2, NY))


def test_flow_validation():
    with pytest.raises(ValueError):
        FlowSet(torch.zeros(N_FRAMES, 2, 2, NX, NY))
    with pytest.raises(ValueError):
        FlowSet(torch.full((N_FRAMES, 3, 2, NX, NY), float("nan")))


def test_warp_zero_flow_is_identity():
    x = Rng(5).complex_normal(NX, NY, dtype=COMPLEX)

    assert torch.equal(warp_bilinear(x, torch.zeros(2, NX, NY, dtype=torch.float64)), x)


def test_warp_integer_shift():
    x = Rng(6).normal(NX, NY)
    x = torch.from_numpy(x)
    flow = torch.zeros(2, NX, NY, dtype=torch.float64)
    flow[0] = 1.0
    flow[1] = -2.0
    warped = warp_bilinear(x, flow)

    assert torch.allclose(warped[: NX - 1, 2:], x[1:, : NY - 2])
    assert torch.allclose(warped[NX - 1, 2:], x[NX - 1, : NY - 2])


def test_warp_broadcasts_over_flows():
    x = Rng(7).complex_normal(NX, NY, dtype=COMPLEX)
    flows = _flow(4)

    warped = warp_bilinear(x, flows)
    assert warped.shape == (4, NX, NY)
    assert torch.allclose(warped[2], warp_bilinear(x, flows[2]))


@pytest.mark.parametrize(
    "op",
    [
        Fourier((NX, NY)),
        CoilSensitivity(synthesize_coil_maps(NX, NY, N_COILS, COMPLEX)),
        Sampling(_row(), (N_COILS, NX, NY)),
        Encoding(synthesize_coil_maps(NX, NY, N_COILS, COMPLEX), _row()),
        Warp(_flow()),
        Warp(_flow(amplitude=6.0)),
    ],
    ids=["fourier", "coils", "sampling", "encoding", "warp", "warp-large"],
)
def test_adjoint(op):
    assert adjoint_check(op, trials=20) < TOLERANCE


def test_motion_compensated_adjoint():
    k_half = 1
    flows = FlowSet(_flow(N_FRAMES, 2 * k_half + 1))
    lines = torch.stack([_row(seed) for seed in range(N_FRAMES)])
    op = MotionCompensatedEncoding(flows, _coils(), MaskStack(lines))

    assert op.out_shape == (N_FRAMES, 3, N_COILS, NX, NY)
    assert adjoint_check(op, trials=20) < TOLERANCE


def test_adjoint_check_detects_wrong_adjoint():
    op = FunctionalOperator(
        lambda x: 2.0 * x,
        lambda y: y,
        (1, 1),
        (1, 1),
    )

    assert adjoint_check(op, trials=3) == pytest.approx(0.5)


def test_encoding_checks_shapes():
    op = Encoding(_coils(), _row())

    with pytest.raises(ValueError):
        op(torch.zeros(NX + 1, NY, dtype=torch.complex128))
    with pytest.raises(ValueError):
        op.adjoint(torch.zeros(NX, NY, dtype=torch.complex128))
