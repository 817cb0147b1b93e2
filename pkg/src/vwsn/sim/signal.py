"""Deterministic synthetic signals and counter-based noise.

Values are pure functions of (seed, sample time): the same topology replays
bit-identically no matter how events interleave. Noise comes from a
splitmix64-style hash of the key material pushed through Box-Muller, not
from stateful RNGs.
"""

from __future__ import annotations

import math
import zlib

from ..model import SignalParams

_MASK = (1 << 64) - 1
TWO_PI = 2.0 * math.pi


def _mix64(x: int) -> int:
    x &= _MASK
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _MASK
    return x ^ (x >> 31)


def _fold(seed: int, *keys) -> int:
    h = _mix64(seed & _MASK ^ 0x9E3779B97F4A7C15)
    for k in keys:
        if isinstance(k, str):
            k = zlib.crc32(k.encode("utf-8"))
        h = _mix64(h ^ (int(k) & _MASK))
    return h


def uniform01(seed: int, *keys) -> float:
    """Uniform in [0, 1) keyed by (seed, *keys)."""
    return _fold(seed, *keys) / float(1 << 64)


def gauss(seed: int, *keys) -> float:
    """Standard normal deviate keyed by (seed, *keys), via Box-Muller."""
    u1 = uniform01(seed, *keys, 0)
    u2 = uniform01(seed, *keys, 1)
    if u1 <= 0.0:
        u1 = 2.0 ** -64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def sample_value(params: SignalParams, t_ms: int) -> float:
    """Signal value at virtual time t: base + A*sin(2*pi*t/T) + noise."""
    v = params.base + params.amplitude * math.sin(TWO_PI * t_ms / params.period_ms)
    if params.noise_sigma > 0.0:
        v += params.noise_sigma * gauss(params.seed, t_ms)
    return v


def delay_jitter_ms(seed: int, node_id: str, counter: int, sigma_ms: float) -> int:
    """Integer-ms jitter applied to command processing delays."""
    if sigma_ms <= 0.0:
        return 0
    return round(sigma_ms * gauss(seed, node_id, counter))
