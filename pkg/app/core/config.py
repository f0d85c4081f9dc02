"""
Toolkit configuration using Pydantic Settings.
All configuration values can be overridden via environment variables (prefix BINAURAL_) or .env file.
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from pathlib import Path
from typing import Optional, List


class Settings(BaseSettings):
    """Toolkit settings with environment variable support."""

    # Logging
    log_level: str = "INFO"
    log_dir: Optional[Path] = None      # None -> <repo>/logs

    # Paths (relative to repository root)
    output_base_dir: Path = Path("output")

    # Acoustics
    sample_rate: int = 48000
    speed_of_sound: float = 343.0       # m/s, 20 °C
    max_sh_order: int = 30
    fractional_delay_taps: int = 64     # Hann-windowed sinc length
    rir_length_factor: float = 1.5      # RIR length = factor × target T60
    image_chunk_size: int = 4096        # images encoded per sparse product
    listener_facing_deg: float = 180.0  # -x room axis keeps both sources inside
    head_radius: float = 0.0875         # m, used for the aliasing-frequency estimate

    # HRTF
    hrtf_regularization: float = 1e-6
    supported_sample_rates: List[int] = [44100, 48000, 88200, 96000]
    synthetic_hrtf_length: int = 128

    # Equalization
    eq_smoothing_fraction: int = 3      # 1/3 octave
    eq_gain_limit_db: float = 20.0
    eq_taps: int = 16384                # 2.9 Hz bins at 48 kHz
    eq_refinement_iterations: int = 12   # response re-measurements after the first design
    eq_tolerance_db: float = 0.05       # stop once a correction moves no bin further
    eq_low_hold_hz: float = 50.0
    eq_high_hold_hz: float = 18000.0

    # Rendering
    render_channel_block: int = 64      # SH channels transformed per FFT block
    parallel_workers: int = 4           # orientation rendering pool

    # Output
    reference_peak_dbfs: float = -3.0
    output_bit_depth: int = 32          # 16, 24 or 32 (float)

    model_config = SettingsConfigDict(
        env_prefix="BINAURAL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )


# Global settings instance (lazily initialized)
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get the global settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next get_settings() re-reads the environment."""
    global _settings
    _settings = None
