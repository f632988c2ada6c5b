"""Pointer-chase buffers and the per-access latency probe."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .core import LatencyTrace
from .errors import AllocationFailure, EmptyWindow, RangeViolation

CACHE_LINE_BYTES = 64

# num_lines per preset at 64-byte stride; a platform file may override these.
PRESETS = {
    "l1": 256,          # 16 KiB: half the L1D, leaves room for the stack and timer code
    "llc": 405_504,     # 18 slices x 1.375 MiB
    "dram": 1_048_576,  # 64 MiB, well past the LLC
}


@dataclass(frozen=True, eq=False)
class ChaseBuffer:
    num_lines: int
    stride_bytes: int
    permutation: np.ndarray
    seed: int
    _memory: list = field(default_factory=list, repr=False, compare=False)

    @property
    def footprint_bytes(self) -> int:
        return self.num_lines * self.stride_bytes

    def __eq__(self, other):
        if not isinstance(other, ChaseBuffer):
            return NotImplemented
        return (self.num_lines == other.num_lines and self.stride_bytes == other.stride_bytes
                and np.array_equal(self.permutation, other.permutation))

    def __hash__(self):
        return hash((self.num_lines, self.stride_bytes, self.seed))

    def memory(self) -> np.ndarray:
        """
        The chase as laid out in memory: the first word of every slot holds the
        byte offset of the next slot, so each load depends on the previous one.

        Built on first use and touched once, so page faults do not land in a
        timed run.
        """
        if not self._memory:
            words = self.stride_bytes // 8
            try:
                mem = np.zeros(self.num_lines * words, dtype=np.int64)
            except MemoryError as exc:
                raise AllocationFailure(f"cannot allocate {self.footprint_bytes} bytes") from exc
            mem[::words] = self.permutation * self.stride_bytes
            self._memory.append(mem)
        return self._memory[0]

    def traverse(self, start: int = 0, hops: int | None = None) -> list[int]:
        """Slots visited by following the encoded offsets (``hops`` defaults to one lap)."""
        mem = self.memory()
        hops = self.num_lines if hops is None else hops
        out = []
        off = start * self.stride_bytes
        for _ in range(hops):
            off = int(mem[off // 8])
            out.append(off // self.stride_bytes)
        return out


def sattolo_cycle(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation made of a single n-cycle (i -> next[i])."""
    nxt = list(range(n))
    if n > 1:
        # j_i uniform on [0, i) for i = n-1 .. 1, drawn in one batch
        i = np.arange(n - 1, 0, -1)
        js = (rng.random(n - 1) * i).astype(np.int64).tolist()
        for i_, j in zip(range(n - 1, 0, -1), js):
            nxt[i_], nxt[j] = nxt[j], nxt[i_]
    return np.asarray(nxt, dtype=np.int64)


@functools.lru_cache(maxsize=16)
def _cached(num_lines, stride_bytes, seed):
    perm = sattolo_cycle(num_lines, np.random.default_rng(seed))
    perm.setflags(write=False)
    return ChaseBuffer(num_lines, stride_bytes, perm, seed)


def build_chase(num_lines: int, stride_bytes: int = CACHE_LINE_BYTES, seed: int = 0) -> ChaseBuffer:
    if num_lines < 1:
        raise RangeViolation("num_lines must be >= 1")
    if stride_bytes < CACHE_LINE_BYTES or stride_bytes % 8:
        raise RangeViolation(f"stride_bytes must be a multiple of 8 and >= {CACHE_LINE_BYTES}")
    return _cached(int(num_lines), int(stride_bytes), int(seed))


def preset_lines(name: str, platform: dict | None = None) -> int:
    table = dict(PRESETS)
    if platform:
        table.update(platform.get("chase_presets", {}))
    try:
        return int(table[name])
    except KeyError:
        raise RangeViolation(f"unknown chase preset {name!r}; choose from {sorted(table)}") from None


def build_preset(name: str, seed: int = 0, platform: dict | None = None) -> ChaseBuffer:
    return build_chase(preset_lines(name, platform), CACHE_LINE_BYTES, seed)


def is_single_cycle(perm) -> bool:
    perm = np.asarray(perm)
    n = perm.size
    seen = np.zeros(n, dtype=bool)
    i = 0
    for _ in range(n):
        if seen[i]:
            return False
        seen[i] = True
        i = int(perm[i])
    return i == 0 and bool(seen.all())


def run_chase(buffer: ChaseBuffer, num_accesses: int, hw, cpu: int | None = None,
              warmup: bool = True) -> LatencyTrace:
    """
    Time ``num_accesses`` dependent loads on ``cpu`` (default: the CPU the
    caller is pinned to). One untimed lap precedes the run unless ``warmup``
    is false.
    """
    if num_accesses < 0:
        raise RangeViolation("num_accesses must be >= 0")
    cpu = hw.current_cpu() if cpu is None else cpu
    if warmup and num_accesses:
        hw.spin_chase(cpu, buffer, buffer.num_lines)
    return hw.timed_chase(cpu, buffer, num_accesses)


def average_access_cycles(trace: LatencyTrace, from_index: int = 0, to_index: int | None = None) -> float:
    to_index = len(trace) if to_index is None else to_index
    if not 0 <= from_index < to_index <= len(trace):
        raise EmptyWindow(f"window [{from_index}, {to_index}) is empty or outside a trace of "
                          f"{len(trace)} entries")
    return float(np.mean(trace.durations[from_index:to_index]))
