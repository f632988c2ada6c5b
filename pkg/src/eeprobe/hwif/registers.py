"""
Register addresses and bit layouts.

None of these come from measurements; they follow the vendor's register
documentation and are kept in one place so a platform correction touches a
single encode/decode pair.
"""

from ..errors import RangeViolation

MSR_UNCORE_RATIO_LIMIT = 0x620
IA32_CLOCK_MODULATION = 0x19A
IA32_MPERF = 0xE7
IA32_APERF = 0xE8
MSR_PPERF = 0x64E

UNCORE_RATIO_KHZ = 100_000

# perf raw config (umask << 8 | event) for Skylake-SP.
PERF_RAW_EVENTS = {
    "throttle": 0x4028,   # CORE_POWER.THROTTLE
    "license2": 0x2028,   # CORE_POWER.LVL2_TURBO_LICENSE
}

COUNTER_EVENTS = ("throttle", "license2", "aperf", "pperf")

# Extended clock modulation: 4-bit duty field, 1/16 steps.
CLOCK_MOD_ENABLE = 1 << 4
CLOCK_MOD_LEVELS = 16


def encode_uncore_ratio_limit(min_ratio: int, max_ratio: int) -> int:
    """Max ratio in bits 6:0, min ratio in bits 14:8."""
    for r in (min_ratio, max_ratio):
        if not 0 <= r <= 0x7F:
            raise RangeViolation(f"uncore ratio {r} does not fit in 7 bits")
    return (min_ratio << 8) | max_ratio


def decode_uncore_ratio_limit(value: int) -> tuple[int, int]:
    return (value >> 8) & 0x7F, value & 0x7F


def encode_clock_modulation(level: int) -> int:
    """
    Level 0 disables modulation; levels 1..15 request a duty cycle of
    ``level / 16``.
    """
    if not 0 <= level < CLOCK_MOD_LEVELS:
        raise RangeViolation(f"clock modulation level must be in 0..15, got {level}")
    if level == 0:
        return 0
    return CLOCK_MOD_ENABLE | level


def decode_clock_modulation(value: int) -> int:
    if not value & CLOCK_MOD_ENABLE:
        return 0
    return value & 0xF


def nominal_duty(level: int) -> float:
    return 1.0 if level == 0 else level / CLOCK_MOD_LEVELS
