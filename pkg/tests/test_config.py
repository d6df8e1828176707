import pytest

from mcmrkit.config import (
    ExperimentConfig,
    MaskSettings,
    dump_config,
    load_config,
    parse_config,
)
from mcmrkit.exceptions import ConfigError
from mcmrkit.motion import FlowOptConfig
from mcmrkit.phantom import PhantomSpec
from mcmrkit.recon import ReconConfig
from mcmrkit.types import (
    DType,
    GradMode,
)

CONFIG = """
# Small experiment.
precision = complex128
phantom.n-frames = 20
phantom.n_coils = 6
phantom.ring-center = 60,70
mask.accel = 12   # per frame
recon.k-half = 2
recon.lambda = 0.01
flow.grad-mode = finite-difference-check
"""


def test_defaults():
    assert parse_config("") == ExperimentConfig()
    assert load_config(None) == ExperimentConfig()


def test_parse():
    config = parse_config(CONFIG)

    assert config.precision is DType.Complex128
    assert config.phantom.n_frames == 20
    assert config.phantom.n_coils == 6
    assert config.phantom.ring_center == (60.0, 70.0)
    assert config.phantom.dtype is DType.Complex128
    assert config.mask.accel == 12.0
    assert config.recon == ReconConfig(k_half=2, lam=0.01)
    assert config.flow.grad_mode is GradMode.FiniteDifferenceCheck


def test_mask_spec():
    config = parse_config(CONFIG)
    spec = config.mask_spec()

    assert (spec.n_frames, spec.n_pe, spec.accel) == (20, 128, 12.0)
    assert config.mask_spec(accel=4.0).accel == 4.0


def test_unknown_key():
    with pytest.raises(ConfigError, match="recon.kappa"):
        parse_config("recon.kappa = 1")
    with pytest.raises(ConfigError, match="camera.fps"):
        parse_config("camera.fps = 30")


def test_derived_key_is_rejected():
    with pytest.raises(ConfigError):
        parse_config("phantom.dtype = complex128")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("recon.k-half = 2\nrecon.k_half = 3")


def test_missing_equals():
    with pytest.raises(ConfigError, match="Line 2"):
        parse_config("mask.accel = 4\nrecon.k-half 2")


@pytest.mark.parametrize(
    "line",
    [
        "recon.k-half = -1",
        "recon.k-half = two",
        "mask.accel = 0.5",
        "phantom.ring-center = 1,2,3",
        "precision = complex32",
        "flow.grad-mode = backwards",
    ],
)
def test_invalid_value(line):
    with pytest.raises(ConfigError):
        parse_config(line)


def test_invalid_geometry():
    with pytest.raises(ConfigError):
        parse_config("phantom.r-outer = 10\nphantom.r-inner = 12")


def test_dump_round_trip():
    config = ExperimentConfig(
        phantom=PhantomSpec(ring_center=(60.0, 70.0), dtype=DType.Complex128),
        mask=MaskSettings(accel=20.0, seed=3),
        recon=ReconConfig(k_half=2, lam=0.05),
        flow=FlowOptConfig(max_outer_iters=4, grad_mode=GradMode.FiniteDifferenceCheck),
        precision=DType.Complex128,
    )
    text = dump_config(config)

    assert "recon.lambda = 0.05" in text
    assert "precision = complex128" in text
    assert parse_config(text) == config


def test_load_config(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text(CONFIG)

    assert load_config(path) == parse_config(CONFIG)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.txt")
