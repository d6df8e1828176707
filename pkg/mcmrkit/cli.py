"""
The ``mcmr`` command.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import (
    Callable,
    Sequence,
)

import attrs
import torch

from .config import (
    ExperimentConfig,
    dump_config,
    load_config,
)
from .exceptions import McmrError
from .metrics import (
    cardiac_phases,
    error_map,
    frame_psnr,
    phantom_roi,
    psnr,
    ssim,
)
from .motion import (
    estimate_flow_warploss,
    warping_loss,
)
from .operators import FlowSet
from .phantom import generate_phantom
from .pipeline import (
    SEQUENCE_FILE,
    AblationRow,
    Experiment,
    experiment,
    save_ground_truth,
    write_json,
    write_report,
)
from .sampling import (
    coverage,
    effective_accel,
    generate_mask,
)
from .tensorio import (
    load_real,
    load_tensor,
    save_tensor,
)
from .types import FlowSource
from .utils import (
    THREADS_VARIABLE,
    ensure_finite,
    threads,
)

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, ExperimentConfig], None]

DEFAULT_K_LIST = "1,2,4,6,8,12"
DEFAULT_LAMBDA_LIST = "0,0.01,0.1"

"""
Arguments.
"""


def _ints(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers: {raw}")


def _floats(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers: {raw}")


def _configure(args: argparse.Namespace) -> ExperimentConfig:
    """
    Load the config file and apply the command-line overrides.
    """
    config = load_config(args.config)
    if args.seed is not None:
        config = attrs.evolve(
            config,
            phantom=attrs.evolve(config.phantom, seed=args.seed),
            mask=attrs.evolve(config.mask, seed=args.seed),
            flow=attrs.evolve(config.flow, seed=args.seed),
        )
    changes = {
        "k_half": getattr(args, "k_half", None),
        "lam": getattr(args, "lam", None),
        "cg_iters": getattr(args, "iters", None),
        "init_iters": getattr(args, "init_iters", None),
    }
    changes = {key: value for key, value in changes.items() if value is not None}
    if changes:
        config = attrs.evolve(config, recon=attrs.evolve(config.recon, **changes))
    return config


def _experiment(args: argparse.Namespace, config: ExperimentConfig) -> Experiment:
    return experiment(
        config,
        accel=getattr(args, "accel", None),
        data=args.data,
        mask=getattr(args, "mask", None),
    )


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save(path: Path, tensor: torch.Tensor) -> None:
    save_tensor(path, ensure_finite(tensor, path.name))


def _flows(
    args: argparse.Namespace,
    run: Experiment,
    k_half: int,
) -> FlowSet:
    if args.flows is not None:
        return FlowSet(load_real(args.flows).to(run.gt.spec.dtype.real))
    return run.flows(FlowSource(args.flow_source), k_half, args.perturb)


def _table(rows: list[AblationRow], name: str) -> str:
    lines = [f"{name:>8} {'K':>4} {'PSNR':>8} {'SSIM':>7} {'ES':>8} {'ED':>8}"]
    for row in rows:
        e = row.evaluation
        lines.append(
            f"{row.setting:>8g} {row.window:>4d} {e.psnr:>8.2f} {e.ssim:>7.4f} "
            f"{e.phases.es_psnr:>8.2f} {e.phases.ed_psnr:>8.2f}"
        )
    return "\n".join(lines)


def _ablation_report(rows: list[AblationRow], name: str) -> dict[str, float | int]:
    values: dict[str, float | int] = {}
    for row in rows:
        key = f"{name}_{row.setting:g}"
        values[f"{key}.window"] = row.window
        values.update(row.evaluation.report(prefix=f"{key}."))
    return values


"""
Commands.
"""


def cmd_simulate(args: argparse.Namespace, config: ExperimentConfig) -> None:
    gt = generate_phantom(config.phantom)
    files = save_ground_truth(gt, args.out)
    (Path(args.out) / "config.txt").write_text(dump_config(config))
    spec = config.phantom
    print(
        f"simulated {spec.n_frames} frames {spec.nx}x{spec.ny} with "
        f"{spec.n_coils} coils into {len(files)} files"
    )


def cmd_mask(args: argparse.Namespace, config: ExperimentConfig) -> None:
    mask = generate_mask(config.mask_spec(args.accel))
    _save(_out(args) / "mask.mcmr", mask.lines)
    print(
        f"mask {mask.n_frames}x{mask.n_pe}: effective R={effective_accel(mask):.3f}, "
        f"coverage {coverage(mask):.3f}"
    )


def cmd_recon(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    run = _experiment(args, config)
    cfg = config.recon
    result = run.reconstruct(_flows(args, run, cfg.k_half), cfg)
    initial = run.evaluate(run.x_u)
    final = run.evaluate(result.images)

    _save(out / "recon.mcmr", result.images)
    _save(out / "init.mcmr", run.x_u)
    write_json(out / "histories.json", result.histories)
    write_report(
        out / "recon_report.txt",
        {
            "window": cfg.window,
            "lambda": cfg.lam,
            "iters": cfg.cg_iters,
            "effective_accel": effective_accel(run.mask),
            **initial.report(prefix="init_"),
            **final.report(),
        },
    )
    print(
        f"recon K={cfg.window} lambda={cfg.lam:g}: PSNR {final.psnr:.2f} dB "
        f"(init {initial.psnr:.2f} dB), SSIM {final.ssim:.4f}"
    )


def cmd_motion(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    run = _experiment(args, config)
    k_half = config.recon.k_half
    if args.images is None:
        source = run.x_u
        flows = run.flows(FlowSource.Warp, k_half)
    else:
        source = load_tensor(args.images).to(config.precision.tensor_dtype)
        flows = estimate_flow_warploss(source, k_half, config.flow)
    _save(out / "flows.mcmr", flows.flows)

    gt = run.gt.window(flows.k_half)
    endpoint = torch.linalg.vector_norm(flows.flows - gt.flows, dim=2)
    report = {
        "window": flows.window,
        "l_w": warping_loss(source, flows),
        "l_w_gt": warping_loss(source, gt),
        "median_epe": float(torch.median(endpoint)),
    }
    write_report(out / "motion_report.txt", report)
    print(
        f"motion K={flows.window}: L_w {report['l_w']:.4e} "
        f"(ground truth {report['l_w_gt']:.4e}), median EPE {report['median_epe']:.3f}"
    )


def cmd_refine(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    run = _experiment(args, config)
    cfg = config.recon
    start = _flows(args, run, cfg.k_half)
    refined = run.refine(start, cfg)
    result = run.reconstruct(refined.flows, cfg)
    evaluation = run.evaluate(result.images)

    _save(out / "flows_refined.mcmr", refined.flows.flows)
    _save(out / "recon_refined.mcmr", result.images)
    write_json(out / "trajectory.json", refined.trajectory)
    write_report(
        out / "refine_report.txt",
        {
            "status": str(refined.status),
            "steps": len(refined.trajectory) - 1,
            "l_r_start": refined.trajectory[0],
            "l_r_final": refined.trajectory[-1],
            **evaluation.report(),
        },
    )
    print(
        f"refine {refined.status} after {len(refined.trajectory) - 1} steps: "
        f"L_r {refined.trajectory[0]:.4e} -> {refined.trajectory[-1]:.4e}, "
        f"PSNR {evaluation.psnr:.2f} dB"
    )


def cmd_metrics(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    if args.ref is not None:
        ref = load_tensor(args.ref)
    elif args.data is not None:
        ref = load_tensor(Path(args.data) / SEQUENCE_FILE)
    else:
        ref = generate_phantom(config.phantom).sequence
    est = load_tensor(args.est)
    ensure_finite(est, str(args.est))
    est = est.to(ref.dtype)

    roi = phantom_roi(config.phantom) if args.roi == "phantom" else None
    phases = cardiac_phases(config.phantom)
    frames = frame_psnr(ref, est, roi=roi)
    report: dict[str, float | int] = {
        "psnr": psnr(ref, est, roi=roi),
        "ssim": ssim(ref, est, roi=roi),
        "es_frame": phases.es,
        "ed_frame": phases.ed,
        "psnr_es": frames[phases.es],
        "psnr_ed": frames[phases.ed],
    }
    report.update({f"psnr_frame_{n}": value for n, value in enumerate(frames)})
    write_report(out / "metrics.txt", report)
    if args.error_map:
        _save(out / "error_map.mcmr", error_map(ref, est))

    print(f"{'frame':>6} {'PSNR':>8}")
    for n, value in enumerate(frames):
        marker = " ES" if n == phases.es else " ED" if n == phases.ed else ""
        print(f"{n:>6d} {value:>8.2f}{marker}")
    print(f"PSNR {report['psnr']:.2f} dB, SSIM {report['ssim']:.4f}")


def cmd_ablate_k(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    run = _experiment(args, config)
    rows = run.ablate_k(args.list, FlowSource(args.flow_source), args.perturb)
    write_report(out / "ablate_k.txt", _ablation_report(rows, "k"))
    write_json(
        out / "ablate_k.json", {f"{row.setting:g}": row.histories for row in rows}
    )
    print(_table(rows, "k-half"))


def cmd_ablate_lambda(args: argparse.Namespace, config: ExperimentConfig) -> None:
    out = _out(args)
    run = _experiment(args, config)
    rows = run.ablate_lambda(args.list, FlowSource(args.flow_source), args.perturb)
    write_report(out / "ablate_lambda.txt", _ablation_report(rows, "lambda"))
    write_json(
        out / "ablate_lambda.json", {f"{row.setting:g}": row.histories for row in rows}
    )
    print(_table(rows, "lambda"))


"""
Parser.
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment config file.")
    common.add_argument("--out", type=Path, default=Path("."), help="Output dir.")
    common.add_argument("--seed", type=int, help="Seed of phantom, mask and flows.")
    common.add_argument("--data", type=Path, help="Phantom files from `simulate`.")
    common.add_argument("--verbose", action="store_true", help="Log debug output.")

    acquisition = argparse.ArgumentParser(add_help=False)
    acquisition.add_argument("--accel", type=float, help="Acceleration rate R.")
    acquisition.add_argument("--mask", type=Path, help="Mask file from `mask`.")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--lambda", dest="lam", type=float, help="Prior weight.")
    solver.add_argument("--iters", type=int, help="CG iterations I.")
    solver.add_argument("--init-iters", type=int, help="CG-SENSE iterations.")

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument("--k-half", type=int, help="Neighbors on each side.")

    flows = argparse.ArgumentParser(add_help=False)
    flows.add_argument("--flows", type=Path, help="Window flows file.")
    flows.add_argument(
        "--flow-source",
        choices=[str(source) for source in FlowSource],
        default=str(FlowSource.GroundTruth),
        help="Flows used when no file is given.",
    )
    flows.add_argument(
        "--perturb",
        type=float,
        default=0.0,
        help="Flow error in pixels at one frame of distance, growing quadratically.",
    )

    parser = argparse.ArgumentParser(
        prog="mcmr",
        description="Motion-compensated MR reconstruction on a dynamic phantom.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add(
        name: str,
        handler: Handler,
        parents: list[argparse.ArgumentParser],
        summary: str,
    ) -> argparse.ArgumentParser:
        command = commands.add_parser(name, parents=[common, *parents], help=summary)
        command.set_defaults(handler=handler)
        return command

    add("simulate", cmd_simulate, [], "Synthesize the phantom.")
    mask = add("mask", cmd_mask, [], "Generate a sampling mask.")
    mask.add_argument("--accel", type=float, help="Acceleration rate R.")
    add(
        "recon",
        cmd_recon,
        [acquisition, solver, window, flows],
        "Motion-compensated reconstruction.",
    )
    motion = add(
        "motion",
        cmd_motion,
        [acquisition, window],
        "Estimate flows by the warping loss.",
    )
    motion.add_argument("--init-iters", type=int, help="CG-SENSE iterations.")
    motion.add_argument("--images", type=Path, help="Sequence to register.")
    refine = add(
        "refine",
        cmd_refine,
        [acquisition, solver, window, flows],
        "Refine flows by the reconstruction loss.",
    )
    refine.set_defaults(flow_source=str(FlowSource.Warp))
    metrics = add("metrics", cmd_metrics, [], "Compare a sequence to the phantom.")
    metrics.add_argument("--est", type=Path, required=True, help="Sequence file.")
    metrics.add_argument("--ref", type=Path, help="Reference sequence file.")
    metrics.add_argument("--roi", choices=["full", "phantom"], default="full")
    metrics.add_argument("--error-map", action="store_true", help="Write error map.")
    ablate_k = add(
        "ablate-k",
        cmd_ablate_k,
        [acquisition, solver, flows],
        "Sweep the window size.",
    )
    ablate_k.add_argument("--list", type=_ints, default=_ints(DEFAULT_K_LIST))
    ablate_lambda = add(
        "ablate-lambda",
        cmd_ablate_lambda,
        [acquisition, solver, window, flows],
        "Sweep the prior weight.",
    )
    ablate_lambda.add_argument(
        "--list", type=_floats, default=_floats(DEFAULT_LAMBDA_LIST)
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if os.getenv(THREADS_VARIABLE) is not None:
            torch.set_num_threads(threads())
        config = _configure(args)
        args.handler(args, config)
    except (McmrError, ValueError, OSError) as exc:
        print(f"mcmr: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
