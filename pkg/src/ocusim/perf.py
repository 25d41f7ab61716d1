"""Analytical throughput and energy model for optical convolution hardware.

Operation counts follow the multiply/accumulate decomposition of a 2-D
convolution; throughput scales them by the modulator symbol rate, and
energy splits into the data-loading (modulation) part and the detection
part.  Everything here is exact scalar arithmetic in SI units: rates in
baud/s, energies in joules, powers in watts.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PerfSpec:
    kernel_size: int = 3          # H
    channels: int = 1             # C
    kernels: int = 1              # q, OCKs per layer
    rate: float = 100e9           # r, modulator symbol rate (baud/s)
    pixels: float = 8e6           # B, symbols/pixels per frame
    bit_depth: int = 8            # D
    energy_per_bit: float = 100e-15   # E_b (J/bit)
    detector_power: float = 100e-3    # P_d (W)

    def __post_init__(self):
        if self.kernel_size < 1 or self.channels < 1 or self.kernels < 1:
            raise ValueError("kernel_size, channels, kernels must be >= 1")
        if not (self.rate > 0):
            raise ValueError("modulator rate must be positive")
        if self.pixels < 0 or self.bit_depth < 1:
            raise ValueError("pixels must be >= 0 and bit_depth >= 1")
        if self.energy_per_bit < 0 or self.detector_power < 0:
            raise ValueError("energy and power constants must be >= 0")


def ops_count(kernel_size: int, channels: int = 1) -> tuple[int, int]:
    """(O_conv, O_kernel): multiplies plus accumulates of one 2-D convolution,
    and the same scaled by the input channel count."""
    if kernel_size < 1 or channels < 1:
        raise ValueError("kernel_size and channels must be >= 1")
    o_conv = 2 * kernel_size * kernel_size - 1
    return o_conv, channels * o_conv


def throughput(spec: PerfSpec) -> tuple[float, float, float]:
    """(S_ocu, S_ock, S_ocl) in operations per second."""
    o_conv, _ = ops_count(spec.kernel_size, spec.channels)
    s_ocu = o_conv * spec.rate
    s_ock = spec.channels * s_ocu
    s_ocl = spec.kernels * s_ock
    return s_ocu, s_ock, s_ocl


def energy(spec: PerfSpec) -> tuple[float, float, float]:
    """(E_mod, E_det, E_ocu) in joules for one frame of B pixels."""
    h2 = spec.kernel_size * spec.kernel_size
    e_mod = h2 * (spec.pixels * spec.bit_depth * spec.channels * spec.energy_per_bit)
    e_det = spec.detector_power * (spec.pixels / spec.rate)
    return e_mod, e_det, e_mod + e_det


def report_rows(spec: PerfSpec) -> list[tuple[str, float, str]]:
    """(name, value, unit) rows for table / CSV emission."""
    o_conv, o_kernel = ops_count(spec.kernel_size, spec.channels)
    s_ocu, s_ock, s_ocl = throughput(spec)
    e_mod, e_det, e_ocu = energy(spec)
    return [
        ("O_conv", float(o_conv), "ops"),
        ("O_kernel", float(o_kernel), "ops"),
        ("S_ocu", s_ocu, "OPS"),
        ("S_ock", s_ock, "OPS"),
        ("S_ocl", s_ocl, "OPS"),
        ("S_ocu_tops", s_ocu / 1e12, "TOPS"),
        ("S_ocl_tops", s_ocl / 1e12, "TOPS"),
        ("E_mod", e_mod, "J"),
        ("E_det", e_det, "J"),
        ("E_ocu", e_ocu, "J"),
    ]
