from typing import Any

import attrs
import torch

from ..operator import LinearOperator

NORMALIZATION_TOLERANCE = 1e-5

"""
Types.
"""


def _validate_maps(_: Any, __: attrs.Attribute, maps: torch.Tensor) -> None:
    if maps.dim() != 3 or not maps.is_complex():
        raise ValueError(f"Coil maps must be complex [S, X, Y], got {tuple(maps.shape)}")
    if not bool(torch.isfinite(maps).all()):
        raise ValueError("Coil maps contain non-finite entries")
    energy = torch.sum(torch.abs(maps) ** 2, dim=0)
    deviation = float(torch.max(torch.abs(energy - 1.0)))
    if deviation > NORMALIZATION_TOLERANCE:
        raise ValueError(f"Coil maps are not normalized (deviation {deviation:.2e})")


@attrs.frozen(eq=False)
class CoilMaps:
    maps: torch.Tensor = attrs.field(validator=_validate_maps)

    @classmethod
    def normalized(cls, profiles: torch.Tensor) -> "CoilMaps":
        """
        Normalize raw coil profiles so that ``Σ_s |s|² = 1`` at every pixel.

        :param profiles: Complex profiles ``[S, X, Y]`` without common zeros.
        """
        energy = torch.sqrt(torch.sum(torch.abs(profiles) ** 2, dim=0, keepdim=True))
        return cls(profiles / energy)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]

    def to(self, dtype: torch.dtype) -> "CoilMaps":
        return CoilMaps(self.maps.to(dtype))


"""
Operators.
"""


def coil_expand(
    x: torch.Tensor,
    coils: CoilMaps,
) -> torch.Tensor:
    """
    Weight an image by every coil sensitivity.

    :param x: Image ``[..., X, Y]``.
    :param coils: Sensitivity maps.

    :return: Coil images ``[..., S, X, Y]``.
    """
    if tuple(x.shape[-2:]) != coils.shape:
        raise ValueError(f"Image {tuple(x.shape)} does not match maps {coils.shape}")
    return x.unsqueeze(-3) * coils.maps


def coil_combine(
    xs: torch.Tensor,
    coils: CoilMaps,
) -> torch.Tensor:
    """
    Adjoint of ``coil_expand``: ``Σ_s conj(s) ⊙ xs[s]``.

    :param xs: Coil images ``[..., S, X, Y]``.
    :param coils: Sensitivity maps.
    """
    if tuple(xs.shape[-3:]) != tuple(coils.maps.shape):
        raise ValueError(f"Coil images {tuple(xs.shape)} do not match maps")
    return torch.sum(torch.conj(coils.maps) * xs, dim=-3)


class CoilSensitivity(LinearOperator):
    def __init__(self, coils: CoilMaps) -> None:
        super().__init__(coils.shape, tuple(coils.maps.shape))
        self.coils = coils

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return coil_expand(x, self.coils)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return coil_combine(y, self.coils)
