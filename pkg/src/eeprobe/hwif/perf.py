"""Minimal perf_event_open(2) binding for per-CPU raw counters (x86-64 Linux)."""

from __future__ import annotations

import ctypes
import os
import struct

from ..errors import EventUnavailable

_NR_PERF_EVENT_OPEN = 298  # x86_64
PERF_TYPE_RAW = 4
_ATTR_SIZE = 128


class _PerfEventAttr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("_pad", ctypes.c_uint8 * (_ATTR_SIZE - 72)),
    ]


_libc = None


def _syscall():
    global _libc
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
        _libc.syscall.restype = ctypes.c_long
    return _libc.syscall


class RawCounter:
    """A system-wide counter bound to one CPU; counts every task on it."""

    def __init__(self, cpu: int, raw_config: int, name: str = "raw"):
        attr = _PerfEventAttr()
        attr.type = PERF_TYPE_RAW
        attr.size = _ATTR_SIZE
        attr.config = raw_config
        fd = _syscall()(_NR_PERF_EVENT_OPEN, ctypes.byref(attr), -1, cpu, -1, 0)
        if fd < 0:
            err = ctypes.get_errno()
            raise EventUnavailable(f"perf_event_open({name}, cpu={cpu}) failed: {os.strerror(err)}")
        self.fd = fd
        self.name = name

    def read(self) -> int:
        return struct.unpack("<Q", os.read(self.fd, 8))[0]

    def close(self):
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None
