import torch

from ..operator import (
    LinearOperator,
    Shape,
)

_AXES = (-2, -1)


def _check_spatial(x: torch.Tensor) -> None:
    if x.dim() < 2:
        raise ValueError("Centered FFT needs at least two (spatial) dims")


def fft2c(img: torch.Tensor) -> torch.Tensor:
    """
    Centered orthonormal 2D DFT over the last two dims.

    DC lands at index ``(X // 2, Y // 2)``, and ``‖fft2c(x)‖ = ‖x‖``.

    :param img: Complex tensor ``[..., X, Y]``.
    """
    _check_spatial(img)
    shifted = torch.fft.ifftshift(img, dim=_AXES)
    ksp = torch.fft.fft2(shifted, dim=_AXES, norm="ortho")
    return torch.fft.fftshift(ksp, dim=_AXES)


def ifft2c(ksp: torch.Tensor) -> torch.Tensor:
    """
    Inverse of ``fft2c``, which is also its adjoint.

    :param ksp: Complex tensor ``[..., X, Y]``.
    """
    _check_spatial(ksp)
    shifted = torch.fft.ifftshift(ksp, dim=_AXES)
    img = torch.fft.ifft2(shifted, dim=_AXES, norm="ortho")
    return torch.fft.fftshift(img, dim=_AXES)


class Fourier(LinearOperator):
    def __init__(self, shape: Shape) -> None:
        super().__init__(shape, shape)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return fft2c(x)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return ifft2c(y)
