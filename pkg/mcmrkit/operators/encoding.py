import torch

from ..operator import LinearOperator
from .coils import (
    CoilMaps,
    coil_combine,
    coil_expand,
)
from .fourier import (
    fft2c,
    ifft2c,
)
from .mask import apply_mask


def forward_a(
    x: torch.Tensor,
    coils: CoilMaps,
    row: torch.Tensor,
) -> torch.Tensor:
    """
    Multi-coil Cartesian encoding ``A = D F S``.

    :param x: Image ``[..., X, Y]``.
    :param coils: Sensitivity maps.
    :param row: Mask row(s) matching the leading dims of ``x``.

    :return: k-space ``[..., S, X, Y]``.
    """
    return apply_mask(fft2c(coil_expand(x, coils)), row)


def adjoint_ah(
    y: torch.Tensor,
    coils: CoilMaps,
    row: torch.Tensor,
) -> torch.Tensor:
    """
    ``Aᴴ = Sᴴ Fᴴ D``.

    :param y: k-space ``[..., S, X, Y]``.
    :param coils: Sensitivity maps.
    :param row: Mask row(s) matching the leading dims of ``y``.
    """
    return coil_combine(ifft2c(apply_mask(y, row)), coils)


class Encoding(LinearOperator):
    def __init__(
        self,
        coils: CoilMaps,
        row: torch.Tensor,
    ) -> None:
        """
        Single-frame encoder.

        :param coils: Sensitivity maps.
        :param row: Mask row ``[Y]`` of the frame.
        """
        super().__init__(coils.shape, tuple(coils.maps.shape))
        self.coils = coils
        self.row = row

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_domain(x)
        return forward_a(x, self.coils, self.row)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        self._check_range(y)
        return adjoint_ah(y, self.coils, self.row)
