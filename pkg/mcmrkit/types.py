from enum import Enum

import torch


class DType(Enum):
    Complex64 = 0
    Complex128 = 1

    def __int__(self) -> int:
        return self.value

    def __str__(self) -> str:
        return self.name.lower()

    @property
    def tensor_dtype(self) -> torch.dtype:
        match self:
            case DType.Complex64:
                return torch.complex64
            case DType.Complex128:
                return torch.complex128

    @property
    def real(self) -> torch.dtype:
        match self:
            case DType.Complex64:
                return torch.float32
            case DType.Complex128:
                return torch.float64

    @classmethod
    def of(cls, dtype: torch.dtype) -> "DType":
        """
        Map a torch dtype onto the on-disk dtype code.

        Real tensors are stored as complex of the matching width.
        """
        match dtype:
            case torch.complex64 | torch.float32:
                return cls.Complex64
            case torch.complex128 | torch.float64:
                return cls.Complex128
        raise ValueError(f"No MCMR dtype for `{dtype}`")


class GradMode(Enum):
    Unrolled = "unrolled"
    FiniteDifferenceCheck = "finite-difference-check"

    def __str__(self) -> str:
        return self.value


class RefineStatus(Enum):
    Converged = "converged"
    MaxIters = "max-iters"
    Stalled = "stalled"

    def __str__(self) -> str:
        return self.value


class FlowSource(Enum):
    GroundTruth = "gt"
    Zero = "zero"
    Warp = "warp"

    def __str__(self) -> str:
        return self.value
