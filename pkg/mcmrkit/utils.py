import os

import numpy as np
import torch

from .exceptions import NonFiniteError
from .types import DType

THREADS_VARIABLE = "MCMR_THREADS"


class Rng:
    def __init__(
        self,
        seed: int,
        *stream: int,
    ) -> None:
        """
        The one random generator of the toolkit.

        Every mask, phantom and noise draw goes through this class, so equal seeds
        give bit-identical streams on the same build.
        A generator may be keyed by extra integers (``stream``) to derive
        independent, reproducible substreams.

        :param seed: Unsigned 64-bit seed.
        :param stream: Substream key.
        """
        if not 0 <= seed < 2**64:
            raise ValueError("Seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.stream = stream
        sequence = np.random.SeedSequence([seed, *stream])
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def substream(self, *key: int) -> "Rng":
        return Rng(self.seed, *self.stream, *key)

    def uniform(self, *shape: int) -> np.ndarray:
        return self._generator.random(shape)

    def normal(self, *shape: int) -> np.ndarray:
        return self._generator.standard_normal(shape)

    def choice(self, population: int, size: int) -> np.ndarray:
        """
        Draw ``size`` distinct indices out of ``range(population)``.
        """
        return self._generator.choice(population, size=size, replace=False)

    def complex_normal(
        self,
        *shape: int,
        dtype: DType = DType.Complex64,
    ) -> torch.Tensor:
        """
        Draw circular complex Gaussian values with unit total variance.
        """
        pair = self._generator.standard_normal((2, *shape)) / np.sqrt(2.0)
        values = torch.complex(torch.from_numpy(pair[0]), torch.from_numpy(pair[1]))
        return values.to(dtype.tensor_dtype)


def vdot(
    a: torch.Tensor,
    b: torch.Tensor,
) -> torch.Tensor:
    """
    Inner product ``<a, b>`` conjugate-linear in the first argument.
    """
    return torch.sum(torch.conj(a) * b)


def norm(x: torch.Tensor) -> float:
    return float(torch.linalg.vector_norm(x))


def threads() -> int:
    """
    Get the worker count from ``MCMR_THREADS``, zero or unset meaning all cores.
    """
    raw = os.getenv(THREADS_VARIABLE, "0")
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(f"`{THREADS_VARIABLE}` must be an integer, got {raw!r}")
    if count < 0:
        raise ValueError(f"`{THREADS_VARIABLE}` must be non-negative")
    return count or os.cpu_count() or 1


def ensure_finite(
    x: torch.Tensor,
    what: str,
) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"Non-finite values in {what}")
    return x
