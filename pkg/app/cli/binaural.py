"""
CLI for simulating rooms, rendering BRIRs and producing listening-test stimuli.

Usage:
    python -m app.cli run --config configs/listening_test.json --out output/listening_test
    python -m app.cli simulate --config configs/listening_test.json --environment 1
    python -m app.cli render --synthetic-hrtf 30
    python -m app.cli analyze --config configs/listening_test.json
    python -m app.cli orientations --environment 1 --condition mixed --resolution 1
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from app.core.config import get_settings
from app.core.exceptions import BinauralToolkitException, ValidationException
from app.core.logging import log_event, setup_logging
from app.models.scene_schemas import SceneSpec, load_scene
from app.services.pipeline import orchestrator


def _build_scene(args: argparse.Namespace) -> SceneSpec:
    """Scene from --config (or the built-in defaults) with command-line overrides applied."""
    scene = load_scene(Path(args.config)) if args.config else SceneSpec()
    data = scene.model_dump(mode="json")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["output_dir"] = args.out
    if args.hrtf and args.synthetic_hrtf is not None:
        raise ValidationException("--hrtf and --synthetic-hrtf are mutually exclusive")
    if args.hrtf:
        data["hrtf"] = {"path": args.hrtf, "fit_order": data["hrtf"].get("fit_order")}
    elif args.synthetic_hrtf is not None:
        data["hrtf"] = {**data["hrtf"], "path": None, "synthetic_order": args.synthetic_hrtf}
    if getattr(args, "environment", None) is not None and args.command in ("simulate", "analyze", "render", "run"):
        data["environments"] = [e for e in data["environments"] if e["id"] == args.environment]
        if not data["environments"]:
            raise ValidationException(f"environment {args.environment} is not defined in the scene")
    try:
        return SceneSpec.model_validate(data)
    except ValueError as e:
        raise ValidationException(str(e))


def _print_rows(title: str, rows: List[dict], columns: List[str]) -> None:
    print(f"\n{title}")
    print("=" * (16 * len(columns)))
    print("".join(f"{c:<16}" for c in columns))
    for row in rows:
        cells = []
        for c in columns:
            value = row.get(c, "")
            cells.append(f"{value:<16.4f}" if isinstance(value, float) else f"{str(value):<16}")
        print("".join(cells))


def cmd_simulate(scene: SceneSpec) -> None:
    results = orchestrator.export_sh_rirs(scene)
    _print_rows("SH room impulse responses", results,
                ["environment", "distance_m", "drr_db", "diffuse_drr_db", "t60_s", "direct_file"])


def cmd_render(scene: SceneSpec) -> None:
    paths = orchestrator.render_brirs(scene)
    print(f"\nWrote {len(paths)} BRIR file(s) under {scene.output_dir}")


def cmd_analyze(scene: SceneSpec) -> None:
    report = orchestrator.analyze_scene(scene)
    _print_rows("Acoustic environments", report.environments,
                ["environment", "drr_db", "diffuse_drr_db", "t60_s", "sabine_t60_s", "critical_distance_m"])
    for path in report.paths:
        print(f"  report: {path}")


def cmd_orientations(scene: SceneSpec, args: argparse.Namespace) -> None:
    env_id = args.environment if args.environment is not None else scene.environments[0].id
    condition = args.condition or scene.reference_condition
    paths = orchestrator.render_orientation_bank(scene, env_id, condition, args.resolution)
    print(f"\nWrote {len(paths)} orientation BRIR file(s) for environment {env_id}, condition '{condition}'")


def cmd_run(scene: SceneSpec) -> None:
    manifest = orchestrator.run_pipeline(scene)
    _print_rows("Stimuli", manifest.rows, ["environment", "signal", "condition", "drr_db", "peak_dbfs", "rms_dbfs"])
    print(f"\nTotal: {len(manifest)} stimulus file(s); manifest {manifest.path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app.cli",
        description="Mixed-order binaural rendering toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full stimulus set of the listening test
  python -m app.cli run --config configs/listening_test.json --out output/listening_test

  # Acoustic report (DRR, T60, critical distance, band spectra)
  python -m app.cli analyze --config configs/listening_test.json

  # BRIR bank in 90 degree steps
  python -m app.cli orientations --environment 1 --condition mixed --resolution 90
        """
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Scene JSON file (defaults to the built-in listening-test scene)')
    common.add_argument('--out', help='Output directory')
    common.add_argument('--seed', type=int, help='Seed for noise and synthetic HRTFs')
    common.add_argument('--hrtf', help='HRTF container to fit')
    common.add_argument('--synthetic-hrtf', type=int, metavar='N', help='Use a synthetic HRTF of order N')
    common.add_argument('--environment', type=int, help='Restrict to one environment id')
    common.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')
    subparsers.add_parser('simulate', parents=[common], help='Simulate and export split SH RIRs')
    subparsers.add_parser('render', parents=[common], help='Render the BRIR of every condition')
    subparsers.add_parser('analyze', parents=[common], help='Write the acoustic analysis report')
    orientations_parser = subparsers.add_parser('orientations', parents=[common],
                                                help='Render BRIRs over head azimuth')
    orientations_parser.add_argument('--condition', help='Condition name (default: the reference)')
    orientations_parser.add_argument('--resolution', type=float, help='Azimuth step in degrees')
    subparsers.add_parser('run', parents=[common], help='Generate all stimuli and the manifest')
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, execute the command and return the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1

    settings = get_settings()
    setup_logging(
        log_level=args.log_level or settings.log_level,
        log_dir=settings.log_dir,
        to_files=settings.log_dir is not None,
    )

    try:
        scene = _build_scene(args)
        if args.command == 'simulate':
            cmd_simulate(scene)
        elif args.command == 'render':
            cmd_render(scene)
        elif args.command == 'analyze':
            cmd_analyze(scene)
        elif args.command == 'orientations':
            cmd_orientations(scene, args)
        elif args.command == 'run':
            cmd_run(scene)
    except BinauralToolkitException as e:
        log_event(
            level="ERROR",
            logger="app.cli.binaural",
            function="run_cli",
            operation=args.command,
            event="command_failed",
            message=e.message,
            context={"exit_code": e.exit_code},
        )
        print(f"\nError: {e.message}", file=sys.stderr)
        return e.exit_code
    return 0


def main():
    """Main CLI entry point."""
    sys.exit(run_cli())


if __name__ == '__main__':
    main()
