from .coils import (
    CoilMaps,
    CoilSensitivity,
    coil_combine,
    coil_expand,
)
from .encoding import (
    Encoding,
    adjoint_ah,
    forward_a,
)
from .fourier import (
    Fourier,
    fft2c,
    ifft2c,
)
from .mask import (
    MaskStack,
    Sampling,
    apply_mask,
)
from .warp import (
    FlowSet,
    Warp,
    warp_adjoint,
    warp_bilinear,
)
