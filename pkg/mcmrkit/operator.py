from abc import (
    ABC,
    abstractmethod,
)
from typing import (
    Callable,
    TypeAlias,
)

import torch

from .types import DType
from .utils import (
    Rng,
    vdot,
)

Shape: TypeAlias = tuple[int, ...]
TensorMap: TypeAlias = Callable[[torch.Tensor], torch.Tensor]


class LinearOperator(ABC):
    def __init__(
        self,
        in_shape: Shape,
        out_shape: Shape,
    ) -> None:
        """
        Base linear operator with a matching adjoint.

        Subclasses implement ``forward`` and ``adjoint``; calling the operator applies
        ``forward``.

        :param in_shape: Shape of the operator domain.
        :param out_shape: Shape of the operator range.
        """
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)

    @abstractmethod
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ...

    @abstractmethod
    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        ...

    def normal(self, x: torch.Tensor) -> torch.Tensor:
        """
        Apply ``AᴴA``.
        """
        return self.adjoint(self.forward(x))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)

    def _check_domain(self, x: torch.Tensor) -> None:
        if tuple(x.shape) != self.in_shape:
            raise ValueError(f"Expected input {self.in_shape}, got {tuple(x.shape)}")

    def _check_range(self, y: torch.Tensor) -> None:
        if tuple(y.shape) != self.out_shape:
            raise ValueError(f"Expected data {self.out_shape}, got {tuple(y.shape)}")


class FunctionalOperator(LinearOperator):
    def __init__(
        self,
        forward: TensorMap,
        adjoint: TensorMap,
        in_shape: Shape,
        out_shape: Shape,
    ) -> None:
        """
        Linear operator assembled from a pair of plain functions.
        """
        super().__init__(in_shape, out_shape)
        self._forward = forward
        self._adjoint = adjoint

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._forward(x)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return self._adjoint(y)


def adjoint_check(
    op: LinearOperator,
    trials: int = 20,
    seed: int = 0,
    *,
    dtype: DType = DType.Complex128,
) -> float:
    """
    Dot-product test of an operator against its adjoint.

    Draws random complex ``x`` and ``y`` and measures
    ``|<Ax, y> - <x, Aᴴy>| / (‖Ax‖ ‖y‖)``.

    :param op: Operator under test.
    :param trials: Number of random draws.
    :param seed: Seed of the draws.
    :param dtype: Precision of the draws.

    :return: Largest relative error over the trials.
    """
    rng = Rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.complex_normal(*op.in_shape, dtype=dtype)
        y = rng.complex_normal(*op.out_shape, dtype=dtype)
        ax = op.forward(x)
        lhs = vdot(ax, y)
        rhs = vdot(x, op.adjoint(y))
        scale = float(torch.linalg.vector_norm(ax) * torch.linalg.vector_norm(y))
        if scale == 0.0:
            error = float(abs(lhs - rhs))
        else:
            error = float(abs(lhs - rhs)) / scale
        worst = max(worst, error)
    return worst
