"""Power sample sources: RAPL energy counters and external ``t_ns,watts`` files."""

from __future__ import annotations

import time
from pathlib import Path

from ..core import PowerSample
from ..errors import ParseError, SourceUnavailable


def parse_power_line(line: str) -> PowerSample:
    """Parse one ``t_ns,watts`` record of an external power log."""
    parts = line.strip().split(",")
    if len(parts) != 2:
        raise ParseError(f"expected 't_ns,watts', got {line.strip()!r}")
    try:
        t_ns = int(parts[0])
        watts = float(parts[1])
    except ValueError as exc:
        raise ParseError(f"malformed power record {line.strip()!r}") from exc
    if watts < 0:
        raise ParseError(f"negative power in {line.strip()!r}")
    return PowerSample(t_ns=t_ns, watts=watts, source="external_file")


class FilePowerSource:
    """
    Reads a power meter log that another process appends to.

    Each call returns the next unread record; blank lines and ``#`` comments
    are skipped.
    """

    def __init__(self, path, wait_s: float = 0.0):
        self.path = Path(path)
        self.wait_s = wait_s
        try:
            self._fh = open(self.path, "r")
        except OSError as exc:
            raise SourceUnavailable(f"cannot open power log {self.path}: {exc}") from exc

    def sample(self) -> PowerSample:
        deadline = time.monotonic() + self.wait_s
        while True:
            pos = self._fh.tell()
            line = self._fh.readline()
            if line.endswith("\n") or (line and not self.wait_s):
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                return parse_power_line(line)
            self._fh.seek(pos)
            if time.monotonic() >= deadline:
                raise SourceUnavailable(f"no new power record in {self.path}")
            time.sleep(0.01)

    def close(self):
        self._fh.close()


class RaplPowerSource:
    """
    Average power between consecutive calls from the RAPL ``energy_uj``
    counters of all packages.
    """

    def __init__(self, path_template: str, packages, clock=time.monotonic_ns):
        self.paths = [Path(path_template.format(package=p)) for p in packages]
        self.clock = clock
        self._max = []
        for p in self.paths:
            if not (p / "energy_uj").exists():
                raise SourceUnavailable(f"RAPL counter {p / 'energy_uj'} not found")
            try:
                self._max.append(int((p / "max_energy_range_uj").read_text()))
            except OSError:
                self._max.append(2**32)
        self._last = None

    def _read(self):
        try:
            return [int((p / "energy_uj").read_text()) for p in self.paths]
        except PermissionError as exc:
            raise SourceUnavailable(f"RAPL counters not readable: {exc}") from exc

    def sample(self, settle_s: float = 0.01) -> PowerSample:
        if self._last is None:
            self._last = (self.clock(), self._read())
            time.sleep(settle_s)
        t0, e0 = self._last
        t1, e1 = self.clock(), self._read()
        self._last = (t1, e1)
        joules = 0.0
        for a, b, wrap in zip(e0, e1, self._max):
            delta = b - a if b >= a else b + wrap - a
            joules += delta * 1e-6
        dt = max(t1 - t0, 1) * 1e-9
        return PowerSample(t_ns=t1, watts=joules / dt, source="rapl")

    def close(self):
        pass


def open_power_source(config, packages):
    if config.power_source == "external_file":
        return FilePowerSource(config.power_path)
    if config.power_source == "rapl":
        return RaplPowerSource(config.rapl_path_template, packages)
    return None
