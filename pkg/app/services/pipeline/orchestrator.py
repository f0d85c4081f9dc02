"""
Pipeline orchestrator - executes the experiment stages sequentially.

For every environment: simulate the SH room impulse response, render one BRIR
per condition, equalize the truncated conditions to the reference, convolve
the source signals, align levels and write stimuli plus a manifest.
"""
import logging
import math
import time
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.core.config import get_settings
from app.core.exceptions import (
    PipelineStageError,
    SampleRateMismatchError,
    ValidationException,
)
from app.core.logging import (
    generate_run_id,
    log_event,
    log_operation_complete,
    log_operation_error,
    log_operation_start,
    set_run_id,
)
from app.models.domain import (
    AnalysisReport,
    BinauralIR,
    EQFilter,
    Geometry,
    HRTFSH,
    MANIFEST_COLUMNS,
    RenderCondition,
    RoomSpec,
    SourceSignal,
    SplitSHImpulseResponse,
    StereoSignal,
    StimulusManifest,
)
from app.models.scene_schemas import EnvironmentModel, SceneSpec, SignalKind
from app.services import audio_service, equalizer, hrtf_service, renderer, room_acoustics, sh_core
from app.services import output_manager

logger = logging.getLogger(__name__)

LOGGER_NAME = "app.services.pipeline.orchestrator"


class PipelineStage(str, Enum):
    """Pipeline stage enumeration."""
    HRTF = "hrtf"
    SIGNALS = "signals"
    SIMULATION = "simulation"
    RENDERING = "rendering"
    EQUALIZATION = "equalization"
    STIMULI = "stimuli"
    MANIFEST = "manifest"
    ANALYSIS = "analysis"
    ORIENTATIONS = "orientations"
    EXPORT = "export"


@contextmanager
def stage(name: PipelineStage, coordinates: Optional[Dict[str, Any]] = None) -> Iterator[None]:
    """Log a stage and wrap any failure in PipelineStageError naming the stage and scene coordinates."""
    start_time = time.time()
    context = dict(coordinates or {})
    log_operation_start(
        logger=LOGGER_NAME,
        function="stage",
        operation=name.value,
        message=f"Executing stage {name.value}",
        context=context,
    )
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        log_operation_error(
            logger=LOGGER_NAME,
            function="stage",
            operation=name.value,
            error=e,
            message=f"Failed stage {name.value}",
            context=dict(context),
        )
        raise PipelineStageError(name.value, context, e) from e
    log_operation_complete(
        logger=LOGGER_NAME,
        function="stage",
        operation=name.value,
        message=f"Completed stage {name.value}",
        context=dict(context),
        duration=time.time() - start_time,
    )


def prepare_hrtf(scene: SceneSpec) -> HRTFSH:
    """SH HRTF for the scene: synthetic truth coefficients, or a least-squares fit of the HRTF file."""
    spec = scene.hrtf
    if spec.synthetic_order is not None:
        grid = sh_core.make_grid(spec.synthetic_order)
        _, truth = hrtf_service.synthetic_hrtf(
            spec.synthetic_order,
            grid,
            seed=spec.synthetic_seed,
            ir_length=spec.ir_length,
            sample_rate=float(scene.sample_rate),
            mirror=spec.mirror,
        )
        return truth

    hrtf_set = hrtf_service.load_hrtf_set(Path(spec.path))
    if hrtf_set.sample_rate != scene.sample_rate:
        raise SampleRateMismatchError(hrtf_set.sample_rate, scene.sample_rate)
    fit_order = spec.fit_order if spec.fit_order is not None else scene.max_order
    return hrtf_service.encode_hrtf_sh(hrtf_set, fit_order)


def load_signals(scene: SceneSpec) -> List[SourceSignal]:
    """Source signals in scene order; pink bursts are seeded with scene.seed + index."""
    signals = []
    for index, spec in enumerate(scene.signals):
        if spec.kind == SignalKind.PINK:
            signal = audio_service.pink_burst(
                burst_length=spec.burst_length,
                fade_length=spec.fade_length,
                pause_length=spec.pause_length,
                repetitions=spec.repetitions,
                seed=scene.seed + index,
                sample_rate=scene.sample_rate,
            )
        else:
            signal = audio_service.read_wav(Path(spec.path))
            if not isinstance(signal, SourceSignal):
                raise ValidationException(f"source signal '{spec.name}' must be mono: {spec.path}")
            if signal.sample_rate != scene.sample_rate:
                raise SampleRateMismatchError(signal.sample_rate, scene.sample_rate)
        signals.append(SourceSignal(signal.samples, signal.sample_rate, label=spec.name))
    return signals


def environment_setup(scene: SceneSpec, env: EnvironmentModel) -> Tuple[RoomSpec, Geometry]:
    """Room and geometry of one scene environment; presets take their positions from build_environment."""
    room = scene.room.to_domain()
    if env.is_preset:
        _, geometry = room_acoustics.build_environment(env.id, scene.listener_facing)
    else:
        geometry = env.to_geometry(scene.listener_facing)
    return room, geometry


def simulate(scene: SceneSpec, env: EnvironmentModel) -> Tuple[RoomSpec, Geometry, SplitSHImpulseResponse]:
    room, geometry = environment_setup(scene, env)
    rir = room_acoustics.simulate_environment(
        room, geometry, scene.sh_order, sample_rate=float(scene.sample_rate), length=scene.rir_length
    )
    return room, geometry, rir


def environment_metrics(room: RoomSpec, geometry: Geometry, rir: SplitSHImpulseResponse) -> Dict[str, float]:
    """DRR (simulated and diffuse-field), measured T60 and the statistical reference values."""
    omni = np.real(rir.direct.data[0] + rir.reverberant.data[0])
    t60 = room_acoustics.analyze_t60(omni, rir.sample_rate)
    reference_t60 = room.target_t60 if room.target_t60 > 0 else t60
    return {
        "distance_m": geometry.source_distance,
        "drr_db": room_acoustics.analyze_drr(rir),
        "diffuse_drr_db": room_acoustics.diffuse_field_drr(room, reference_t60, geometry.source_distance),
        "t60_s": t60,
        "sabine_t60_s": room_acoustics.sabine_t60(room),
        "eyring_t60_s": room_acoustics.eyring_t60(room),
        "critical_distance_m": room_acoustics.critical_distance(room, reference_t60),
    }


def render(rir: SplitSHImpulseResponse, hrtf: HRTFSH, conditions: List[RenderCondition]) -> Dict[str, BinauralIR]:
    return {condition.name: renderer.render_mixed(rir, hrtf, condition) for condition in conditions}


def equalize(brirs: Dict[str, BinauralIR], reference: str) -> Tuple[Dict[str, BinauralIR], Dict[str, EQFilter]]:
    """
    EQ every non-reference BRIR toward the reference BRIR.

    The reference passes through, zero-padded to the equalized length.
    """
    equalized = {}
    filters = {}
    for name, brir in brirs.items():
        if name == reference:
            continue
        eq = equalizer.design_eq(brir, brirs[reference])
        filters[name] = eq
        equalized[name] = equalizer.apply_eq(brir, eq)
    ref = brirs[reference]
    length = max([len(ir) for ir in equalized.values()] + [len(ref)])
    pad = length - len(ref)
    equalized[reference] = BinauralIR(np.pad(ref.left, (0, pad)), np.pad(ref.right, (0, pad)), ref.sample_rate)
    return {name: equalized[name] for name in brirs}, filters


def align_levels(stimuli: Dict[str, StereoSignal], reference: str) -> Dict[str, StereoSignal]:
    """
    Equal RMS across the set, then one common gain placing the reference
    peak at Settings.reference_peak_dbfs (lowered so nothing exceeds full scale).
    """
    names = [reference] + [name for name in stimuli if name != reference]
    normalized = dict(zip(names, audio_service.rms_normalize([stimuli[name] for name in names])))
    target = 10.0 ** (get_settings().reference_peak_dbfs / 20.0)
    gain = target / audio_service.peak(normalized[reference])
    loudest = max(audio_service.peak(sig) for sig in normalized.values())
    if loudest * gain > 1.0:
        log_event(
            level="WARNING",
            logger=LOGGER_NAME,
            function="align_levels",
            operation="level_alignment",
            event="gain_reduced",
            message="Common gain lowered to keep every stimulus within full scale",
            context={"requested_gain": gain, "loudest_peak": loudest},
        )
        gain = 1.0 / loudest
    return {name: audio_service.scale(normalized[name], gain) for name in stimuli}


def run_pipeline(scene: SceneSpec, out_dir: Optional[Path] = None) -> StimulusManifest:
    """
    Produce every stimulus of the scene and the manifest describing them.

    Stage failures raise PipelineStageError with the stage name and the
    environment / signal / condition being processed.
    """
    run_id = generate_run_id()
    set_run_id(run_id)
    pipeline_start = time.time()
    base = output_manager.get_output_base(Path(out_dir or scene.output_dir))
    conditions = scene.render_conditions()
    log_operation_start(
        logger=LOGGER_NAME,
        function="run_pipeline",
        operation="pipeline",
        message="Starting pipeline",
        context={
            "run_id": run_id,
            "out_dir": str(base),
            "environments": [e.id for e in scene.environments],
            "conditions": [c.to_dict() for c in conditions],
            "signals": [s.name for s in scene.signals],
        },
    )

    with stage(PipelineStage.HRTF):
        hrtf = prepare_hrtf(scene)
    with stage(PipelineStage.SIGNALS):
        signals = load_signals(scene)
        headphone = equalizer.load_eq_filter(Path(scene.headphone_eq)) if scene.headphone_eq else None

    rows: List[Dict[str, Any]] = []
    for env in scene.environments:
        coords = {"environment": env.id}
        with stage(PipelineStage.SIMULATION, coords):
            room, geometry, rir = simulate(scene, env)
            metrics = environment_metrics(room, geometry, rir)
        with stage(PipelineStage.RENDERING, coords):
            brirs = render(rir, hrtf, conditions)
            del rir
            for name, brir in brirs.items():
                audio_service.write_wav(output_manager.brir_path(base, env.id, name), brir)
        with stage(PipelineStage.EQUALIZATION, coords):
            if scene.equalize:
                brirs, filters = equalize(brirs, scene.reference_condition)
                for name, eq in filters.items():
                    equalizer.save_eq_filter(
                        eq, output_manager.get_output_path(base, "filters", output_manager.environment_id(env.id), f"{name}.eq")
                    )

        for signal in signals:
            coords = {"environment": env.id, "signal": signal.label}
            with stage(PipelineStage.STIMULI, coords):
                stimuli = {}
                for name, brir in brirs.items():
                    stimulus = renderer.convolve(signal, brir)
                    if headphone is not None:
                        stimulus = equalizer.apply_eq(stimulus, headphone)
                    stimuli[name] = stimulus
                stimuli = align_levels(stimuli, scene.reference_condition)
                for condition in conditions:
                    path = output_manager.stimulus_path(base, env.id, signal.label, condition.name)
                    audio_service.write_wav(path, stimuli[condition.name])
                    written = audio_service.read_wav(path)
                    rows.append({
                        "file": path.relative_to(base).as_posix(),
                        "environment": env.id,
                        "signal": signal.label,
                        "condition": condition.name,
                        "N_d": condition.direct_order,
                        "N_r": condition.reverb_order,
                        "drr_db": metrics["drr_db"],
                        "diffuse_drr_db": metrics["diffuse_drr_db"],
                        "t60_s": metrics["t60_s"],
                        "peak_dbfs": audio_service.peak_dbfs(written),
                        "rms_dbfs": audio_service.rms_dbfs(written),
                    })

    with stage(PipelineStage.MANIFEST):
        manifest_path = output_manager.write_table(
            output_manager.get_output_path(base, "reports", None, "manifest.tsv"), MANIFEST_COLUMNS, rows
        )

    log_operation_complete(
        logger=LOGGER_NAME,
        function="run_pipeline",
        operation="pipeline",
        message="Pipeline completed",
        context={"run_id": run_id, "stimuli": len(rows), "manifest": str(manifest_path)},
        duration=time.time() - pipeline_start,
    )
    return StimulusManifest(rows, manifest_path)


def analyze_scene(scene: SceneSpec, out_dir: Optional[Path] = None) -> AnalysisReport:
    """
    Acoustic report: per environment DRR, T60, critical distance and reverberation
    estimates; per-order SH energy of the RIR; 1/3-octave spectra of every
    condition's BRIR with its spatial-aliasing frequency.
    """
    base = output_manager.get_output_base(Path(out_dir or scene.output_dir))
    hrtf = None
    environments, order_energy, band_energy = [], [], []
    for env in scene.environments:
        coords = {"environment": env.id}
        with stage(PipelineStage.ANALYSIS, coords):
            room, geometry, rir = simulate(scene, env)
            environments.append({"environment": env.id, **environment_metrics(room, geometry, rir)})
            energy = sh_core.per_order_energy(rir.direct + rir.reverberant)
            total = float(np.sum(energy))
            for n, value in enumerate(energy):
                order_energy.append({
                    "environment": env.id,
                    "order": n,
                    "energy": float(value),
                    "fraction": float(value / total) if total > 0 else 0.0,
                })
            if hrtf is None:
                hrtf = prepare_hrtf(scene)
            for condition in scene.render_conditions():
                brir = renderer.render_mixed(rir, hrtf, condition)
                centres, levels = equalizer.third_octave_band_energies(brir)
                alias = renderer.aliasing_frequency(condition.direct_order)
                for centre, level in zip(centres, levels):
                    band_energy.append({
                        "environment": env.id,
                        "condition": condition.name,
                        "centre_hz": float(centre),
                        "energy_db": float(level),
                        "aliasing_hz": alias,
                    })

    reports = output_manager.get_output_dir(base, "reports")
    paths = [
        output_manager.write_table(
            reports / "analysis.tsv",
            ("environment", "distance_m", "drr_db", "diffuse_drr_db", "t60_s", "sabine_t60_s",
             "eyring_t60_s", "critical_distance_m"),
            environments,
        ),
        output_manager.write_table(
            reports / "order_energy.tsv", ("environment", "order", "energy", "fraction"), order_energy
        ),
        output_manager.write_table(
            reports / "band_energy.tsv",
            ("environment", "condition", "centre_hz", "energy_db", "aliasing_hz"),
            band_energy,
        ),
    ]
    return AnalysisReport(environments, order_energy, band_energy, paths)


def orientation_azimuths(resolution_deg: float) -> List[float]:
    """Head azimuths in degrees covering the horizontal plane in steps of resolution_deg."""
    count = int(round(360.0 / resolution_deg))
    if count < 1 or not math.isclose(count * resolution_deg, 360.0, abs_tol=1e-9):
        raise ValidationException(f"resolution {resolution_deg} deg does not divide 360 deg")
    return [step * resolution_deg for step in range(count)]


def render_orientation_bank(
    scene: SceneSpec,
    env_id: int,
    condition_name: str,
    resolution_deg: Optional[float] = None,
    out_dir: Optional[Path] = None,
) -> List[Path]:
    """Write one BRIR per head azimuth for one environment and condition."""
    base = output_manager.get_output_base(Path(out_dir or scene.output_dir))
    resolution_deg = resolution_deg or scene.orientation_resolution_deg
    env = scene.environment(env_id)
    condition = scene.condition(condition_name)
    degrees = orientation_azimuths(resolution_deg)
    coords = {"environment": env_id, "condition": condition_name}

    with stage(PipelineStage.HRTF):
        hrtf = prepare_hrtf(scene)
    with stage(PipelineStage.SIMULATION, coords):
        _, _, rir = simulate(scene, env)
    with stage(PipelineStage.ORIENTATIONS, {**coords, "orientations": len(degrees)}):
        brirs = renderer.render_orientations(rir, hrtf, condition, [math.radians(d) for d in degrees])
        paths = [
            audio_service.write_wav(output_manager.brir_path(base, env_id, condition_name, deg), brir)
            for deg, brir in zip(degrees, brirs)
        ]
    return paths


def export_sh_rirs(scene: SceneSpec, out_dir: Optional[Path] = None) -> List[Dict[str, Any]]:
    """Simulate each environment, write its split SH RIR and return the environment metrics."""
    base = output_manager.get_output_base(Path(out_dir or scene.output_dir))
    results = []
    for env in scene.environments:
        coords = {"environment": env.id}
        with stage(PipelineStage.EXPORT, coords):
            room, geometry, rir = simulate(scene, env)
            stem = output_manager.get_output_path(base, "rirs", output_manager.environment_id(env.id), "sh_rir")
            direct_path, reverberant_path = room_acoustics.save_sh_rir(rir, stem)
            results.append({
                "environment": env.id,
                **environment_metrics(room, geometry, rir),
                "direct_file": direct_path.relative_to(base).as_posix(),
                "reverberant_file": reverberant_path.relative_to(base).as_posix(),
            })
    return results


def render_brirs(scene: SceneSpec, out_dir: Optional[Path] = None) -> List[Path]:
    """Write the BRIR of every condition (before equalization) for every environment."""
    base = output_manager.get_output_base(Path(out_dir or scene.output_dir))
    with stage(PipelineStage.HRTF):
        hrtf = prepare_hrtf(scene)
    paths = []
    for env in scene.environments:
        coords = {"environment": env.id}
        with stage(PipelineStage.SIMULATION, coords):
            _, _, rir = simulate(scene, env)
        with stage(PipelineStage.RENDERING, coords):
            for name, brir in render(rir, hrtf, scene.render_conditions()).items():
                paths.append(audio_service.write_wav(output_manager.brir_path(base, env.id, name), brir))
    return paths
