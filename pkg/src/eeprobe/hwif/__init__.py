"""Backends: real hardware and the deterministic simulation."""

from .base import Backend, CpuInfo, WakeRecord, preserve_state
from .params import BackendConfig, SimParameters
from .sim import SimBackend


def open_backend(config: BackendConfig | None = None) -> Backend:
    config = config or BackendConfig.from_env()
    if config.kind == "simulation":
        return SimBackend(config)
    from .hardware import HardwareBackend
    return HardwareBackend(config)


__all__ = ["Backend", "BackendConfig", "CpuInfo", "SimBackend", "SimParameters", "WakeRecord",
           "open_backend", "preserve_state"]
