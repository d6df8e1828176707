from typing import (
    Mapping,
    Type,
)

import cattrs
from cattrs.gen import (
    make_dict_structure_fn,
    make_dict_unstructure_fn,
    override,
)

from .recon import ReconConfig
from .types import DType

# Config keys that differ from the attribute they fill.
RENAMES: Mapping[Type, Mapping[str, str]] = {
    ReconConfig: {"lam": "lambda"},
}


def _is_pair(cl: Type) -> bool:
    return cl == tuple[float, float]


class Converter(cattrs.GenConverter):
    def __init__(self) -> None:
        super().__init__()

        # Convert "x,y" pairs.
        self.register_structure_hook_func(_is_pair, self._structure_pair)
        self.register_unstructure_hook_func(_is_pair, self._unstructure_pair)
        # Convert dtype names.
        self.register_structure_hook(DType, self._structure_dtype)
        self.register_unstructure_hook(DType, str)
        # Rename reserved words.
        for cls, renames in RENAMES.items():
            overrides = {name: override(rename=key) for name, key in renames.items()}
            self.register_structure_hook(
                cls, make_dict_structure_fn(cls, self, **overrides)
            )
            self.register_unstructure_hook(
                cls, make_dict_unstructure_fn(cls, self, **overrides)
            )

    @staticmethod
    def _structure_pair(
        obj: str | tuple[float, float],
        _: Type[tuple[float, float]],
    ) -> tuple[float, float]:
        parts = obj.split(",") if isinstance(obj, str) else list(obj)
        if len(parts) != 2:
            raise ValueError(f"Expected a pair `x,y`, got {obj!r}")
        return float(parts[0]), float(parts[1])

    @staticmethod
    def _unstructure_pair(obj: tuple[float, float]) -> str:
        return f"{obj[0]},{obj[1]}"

    @staticmethod
    def _structure_dtype(obj: str | int | DType, _: Type[DType]) -> DType:
        if isinstance(obj, DType):
            return obj
        if isinstance(obj, int):
            return DType(obj)
        for dtype in DType:
            if str(dtype) == obj.strip().lower():
                return dtype
        raise ValueError(f"Unknown precision {obj!r}")
