from typing import Any

import attrs
import torch

from ..operator import (
    LinearOperator,
    Shape,
)
from ..types import DType

"""
Types.
"""


def _validate_lines(_: Any, __: attrs.Attribute, lines: torch.Tensor) -> None:
    if lines.dim() != 2 or lines.is_complex():
        raise ValueError(f"Mask must be a real [N, Y] matrix, got {tuple(lines.shape)}")
    if not bool(((lines == 0) | (lines == 1)).all()):
        raise ValueError("Mask entries must be 0 or 1")
    if not bool((lines.sum(dim=1) >= 1).all()):
        raise ValueError("Every frame must sample at least one line")


@attrs.frozen(eq=False)
class MaskStack:
    """
    Cartesian sampling pattern, one row of phase-encode lines per frame.

    The frequency-encode axis is fully sampled, so row ``n`` broadcasts over X.
    """

    lines: torch.Tensor = attrs.field(validator=_validate_lines)

    @classmethod
    def full(cls, n_frames: int, n_pe: int) -> "MaskStack":
        return cls(torch.ones(n_frames, n_pe))

    @property
    def n_frames(self) -> int:
        return self.lines.shape[0]

    @property
    def n_pe(self) -> int:
        return self.lines.shape[1]

    def row(self, n: int) -> torch.Tensor:
        return self.lines[n]

    def rows(self, frames: torch.Tensor | list[int]) -> torch.Tensor:
        return self.lines[torch.as_tensor(frames, dtype=torch.long)]


"""
Operators.
"""


def apply_mask(
    ksp: torch.Tensor,
    row: torch.Tensor,
) -> torch.Tensor:
    """
    Zero the unsampled phase-encode lines.

    :param ksp: k-space ``[..., S, X, Y]``.
    :param row: Mask row ``[Y]``, or a stack of rows ``[..., Y]`` aligned with the
        leading dims of ``ksp``.
    """
    if row.shape[-1] != ksp.shape[-1]:
        raise ValueError(f"Mask row of {row.shape[-1]} lines for {ksp.shape[-1]} lines")
    if row.dim() > 1:
        row = row.reshape(*row.shape[:-1], 1, 1, row.shape[-1])
    return ksp * row.to(DType.of(ksp.dtype).real)


class Sampling(LinearOperator):
    def __init__(
        self,
        row: torch.Tensor,
        shape: Shape,
    ) -> None:
        super().__init__(shape, shape)
        self.row = row

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return apply_mask(x, self.row)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return apply_mask(y, self.row)
