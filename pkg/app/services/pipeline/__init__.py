"""
Pipeline services package for scene-driven stimulus generation.
"""
from app.services.pipeline.orchestrator import (
    PipelineStage,
    analyze_scene,
    export_sh_rirs,
    render_brirs,
    render_orientation_bank,
    run_pipeline,
)

__all__ = [
    "PipelineStage",
    "analyze_scene",
    "export_sh_rirs",
    "render_brirs",
    "render_orientation_bank",
    "run_pipeline",
]
