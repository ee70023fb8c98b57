"""Machine profile stamped into benchmark reports."""

import os
import platform
from datetime import datetime
from typing import Tuple

import numpy as np
import psutil
from pydantic import BaseModel


class MachineProfile(BaseModel):
    """Where a benchmark ran; wall-clock numbers compare only within one profile."""

    platform: str
    python: str
    numpy: str
    cpu_model: str
    cpu_cores: int
    cpu_threads: int
    cpu_freq_mhz: float = 0.0
    system_ram_gb: float
    available_ram_gb: float
    blas_threads: str = ""
    profile_date: str


def get_cpu_info() -> Tuple[int, int, str, float]:
    """Physical cores, logical threads, model name and max frequency."""
    try:
        cores = psutil.cpu_count(logical=False) or 0
        threads = psutil.cpu_count(logical=True) or 0
    except Exception:
        cores, threads = 0, 0

    model = platform.processor()
    if not model:
        try:
            with open("/proc/cpuinfo", "r") as f:
                for line in f:
                    if line.startswith("model name"):
                        model = line.split(":", 1)[1].strip()
                        break
        except OSError:
            pass

    try:
        freq = psutil.cpu_freq()
        mhz = float(freq.max or freq.current) if freq else 0.0
    except Exception:
        mhz = 0.0
    return cores, threads, model or "Unknown CPU", mhz


def get_memory_info() -> Tuple[float, float]:
    try:
        memory = psutil.virtual_memory()
        return memory.total / (1024**3), memory.available / (1024**3)
    except Exception:
        return 0.0, 0.0


def create_machine_profile() -> MachineProfile:
    cores, threads, model, mhz = get_cpu_info()
    total, available = get_memory_info()
    return MachineProfile(
        platform=f"{platform.system()} {platform.release()} {platform.machine()}",
        python=platform.python_version(),
        numpy=np.__version__,
        cpu_model=model,
        cpu_cores=cores,
        cpu_threads=threads,
        cpu_freq_mhz=mhz,
        system_ram_gb=round(total, 2),
        available_ram_gb=round(available, 2),
        blas_threads=os.environ.get("OMP_NUM_THREADS", ""),
        profile_date=datetime.now().isoformat(),
    )
