from __future__ import annotations

import os
from dataclasses import dataclass

from dotenv import load_dotenv

# 🔧 Load environment variables
load_dotenv(".env")


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    return float(raw) if raw not in (None, "") else default


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    return int(raw) if raw not in (None, "") else default


# ---------- Settings ----------
@dataclass(frozen=True)
class Settings:
    """Run-wide defaults; scenario files override the simulation ones."""

    dt_plant: float = 5e-6
    ts_ctrl: float = 5e-5
    decimation: int = 10
    divergence_current: float = 10.0
    divergence_vc: float = 10.0
    log_level: str = "WARNING"
    output_dir: str = "outputs"


def load_settings() -> Settings:
    """
    Build Settings from FLATPOWER_* environment variables (and `.env`).

    Returns:
        Settings: defaults with any environment overrides applied
    """
    base = Settings()
    return Settings(
        dt_plant=_env_float("FLATPOWER_DT_PLANT", base.dt_plant),
        ts_ctrl=_env_float("FLATPOWER_TS_CTRL", base.ts_ctrl),
        decimation=_env_int("FLATPOWER_DECIMATION", base.decimation),
        divergence_current=_env_float(
            "FLATPOWER_DIVERGENCE_CURRENT", base.divergence_current
        ),
        divergence_vc=_env_float("FLATPOWER_DIVERGENCE_VC", base.divergence_vc),
        log_level=os.getenv("FLATPOWER_LOG_LEVEL", base.log_level).upper(),
        output_dir=os.getenv("FLATPOWER_OUTPUT_DIR", base.output_dir),
    )


SETTINGS = load_settings()
