from typing import Any

import attrs
import torch

from ..operator import LinearOperator

"""
Types.
"""


def _validate_flows(_: Any, __: attrs.Attribute, flows: torch.Tensor) -> None:
    if flows.dim() != 5 or flows.shape[2] != 2 or flows.is_complex():
        raise ValueError(f"Flows must be real [N, K, 2, X, Y], got {tuple(flows.shape)}")
    if flows.shape[1] % 2 != 1:
        raise ValueError(f"Window size K={flows.shape[1]} must be odd")
    if not bool(torch.isfinite(flows).all()):
        raise ValueError("Flows contain non-finite entries")


@attrs.frozen(eq=False)
class FlowSet:
    """
    Backward-warping displacements for every (frame, neighbor) pair.

    ``flows[n, j]`` carries frame ``n`` onto the grid of the ``j``-th frame of its
    window: output pixel ``p`` samples frame ``n`` at ``p + u(p)``.
    Channel 0 displaces along X (rows), channel 1 along Y (columns).
    """

    flows: torch.Tensor = attrs.field(validator=_validate_flows)

    @classmethod
    def zeros(
        cls,
        n_frames: int,
        k_half: int,
        shape: tuple[int, int],
        dtype: torch.dtype = torch.float32,
    ) -> "FlowSet":
        return cls(torch.zeros(n_frames, 2 * k_half + 1, 2, *shape, dtype=dtype))

    @property
    def n_frames(self) -> int:
        return self.flows.shape[0]

    @property
    def window(self) -> int:
        return self.flows.shape[1]

    @property
    def k_half(self) -> int:
        return self.window // 2

    def to(self, dtype: torch.dtype) -> "FlowSet":
        return FlowSet(self.flows.to(dtype))


"""
Operators.
"""


def _taps(flow: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """
    Flat source indices and bilinear weights of the four interpolation corners.

    Sample positions are clamped to the image, so border samples repeat the edge
    pixel and carry no gradient with respect to the flow.
    """
    nx, ny = flow.shape[-2:]
    rows = torch.arange(nx, dtype=flow.dtype, device=flow.device).unsqueeze(-1)
    cols = torch.arange(ny, dtype=flow.dtype, device=flow.device)
    qx = torch.clamp(rows + flow[..., 0, :, :], 0, nx - 1)
    qy = torch.clamp(cols + flow[..., 1, :, :], 0, ny - 1)

    x0 = torch.clamp(torch.floor(qx.detach()), max=max(nx - 2, 0))
    y0 = torch.clamp(torch.floor(qy.detach()), max=max(ny - 2, 0))
    wx = qx - x0
    wy = qy - y0
    x0i = x0.long()
    y0i = y0.long()
    x1i = torch.clamp(x0i + 1, max=nx - 1)
    y1i = torch.clamp(y0i + 1, max=ny - 1)

    return [
        (x0i * ny + y0i, (1 - wx) * (1 - wy)),
        (x0i * ny + y1i, (1 - wx) * wy),
        (x1i * ny + y0i, wx * (1 - wy)),
        (x1i * ny + y1i, wx * wy),
    ]


def _leading(image: torch.Tensor, flow: torch.Tensor) -> torch.Size:
    if image.shape[-2:] != flow.shape[-2:] or flow.shape[-3] != 2:
        raise ValueError(
            f"Image {tuple(image.shape)} does not match flow {tuple(flow.shape)}"
        )
    return torch.broadcast_shapes(image.shape[:-2], flow.shape[:-3])


def warp_bilinear(
    src: torch.Tensor,
    flow: torch.Tensor,
) -> torch.Tensor:
    """
    Backward-warp an image: ``out(p) = src(p + u(p))``, bilinear, clamp-to-edge.

    Leading dims of ``src`` and ``flow`` broadcast against each other.
    The result is linear in ``src`` and differentiable in ``flow``.

    :param src: Image ``[..., X, Y]``, real or complex.
    :param flow: Displacement ``[..., 2, X, Y]``.
    """
    lead = _leading(src, flow)
    nx, ny = src.shape[-2:]
    flat = src.expand(*lead, nx, ny).reshape(*lead, nx * ny)
    out = torch.zeros_like(flat)
    for index, weight in _taps(flow):
        index = index.expand(*lead, nx, ny).reshape(*lead, nx * ny)
        weight = weight.expand(*lead, nx, ny).reshape(*lead, nx * ny)
        weight = weight.to(flat.real.dtype)
        out = out + weight * torch.gather(flat, -1, index)
    return out.reshape(*lead, nx, ny)


def warp_adjoint(
    cot: torch.Tensor,
    flow: torch.Tensor,
) -> torch.Tensor:
    """
    Exact transpose of ``warp_bilinear`` for the same flow.

    Each output sample scatters its value back onto the four source pixels it was
    interpolated from, with the same bilinear weights.

    :param cot: Image ``[..., X, Y]`` on the warped grid.
    :param flow: Displacement ``[..., 2, X, Y]``.
    """
    lead = _leading(cot, flow)
    nx, ny = cot.shape[-2:]
    flat = cot.expand(*lead, nx, ny).reshape(*lead, nx * ny)
    out = torch.zeros_like(flat)
    for index, weight in _taps(flow):
        index = index.expand(*lead, nx, ny).reshape(*lead, nx * ny)
        weight = weight.expand(*lead, nx, ny).reshape(*lead, nx * ny)
        weight = weight.to(flat.real.dtype)
        out = torch.scatter_add(out, -1, index, weight * flat)
    return out.reshape(*lead, nx, ny)


class Warp(LinearOperator):
    def __init__(self, flow: torch.Tensor) -> None:
        """
        Warp by a fixed flow ``[2, X, Y]``.
        """
        shape = tuple(flow.shape[-2:])
        super().__init__(shape, shape)
        self.flow = flow

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return warp_bilinear(x, self.flow)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return warp_adjoint(y, self.flow)
