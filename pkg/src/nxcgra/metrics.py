"""Throughput, energy and area reporting.

Converts executed-operation counts and cycle counts into MOPS and the
derived efficiency figures, using a calibrated technology profile.
Power is a per-kernel calibrated input (it comes from gate-level
analysis of the silicon implementation, not from this model); the
profile defaults reproduce the reference platform: 200 MHz, 0.8 V,
0.178 mm2, and the published per-kernel power draws.

Derived-metric identities, enforced on every report:

    gops_per_mm2      = (mops / 1000) / area_mm2
    tops_per_w        = (mops / 1000) / power_mw
    tops_per_w_per_mm2 = tops_per_w / area_mm2
    utilization_pct   = (ops / cycles) / peak_ops_per_cycle * 100
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "TechProfile", "MetricsReport", "MetricsError",
    "compute_report", "area_breakdown",
    "REFERENCE_KERNEL_METRICS", "KERNEL_NAMES",
]


class MetricsError(Exception):
    pass


KERNEL_NAMES = ("conv", "gemm", "gelu", "norm", "quant", "sftmx")

# Calibration reference points: published MOPS / GOPS/mm2 / TOPS/W /
# TOPS/W/mm2 per kernel on the 0.178 mm2, 200 MHz platform.
REFERENCE_KERNEL_METRICS: dict[str, tuple[float, float, float, float]] = {
    "conv": (1902, 10.68, 1.28, 7.20),
    "gemm": (3040, 17.08, 2.01, 11.29),
    "gelu": (636, 3.57, 0.39, 2.21),
    "norm": (70, 0.39, 0.04, 0.24),
    "quant": (255, 1.43, 0.16, 0.89),
    "sftmx": (1102, 6.19, 0.68, 3.83),
}

_DEFAULT_POWER_MW = {
    "conv": 1.486, "gemm": 1.513, "gelu": 1.631,
    "norm": 1.64, "quant": 1.594, "sftmx": 1.617,
}

# Total cell area breakdown of the subsystem in um^2.
_DEFAULT_AREA_TABLE = {
    "Memory Map": 206,
    "Memory Controller": 164,
    "Context Memory": 13327,
    "NX-Array": 164195,
    "other": 107,
}


@dataclass(frozen=True)
class TechProfile:
    freq_mhz: float = 200.0
    voltage_v: float = 0.8          # metadata
    node: str = "22nm FD-SOI"       # metadata
    area_mm2: float = 0.178
    peak_ops_per_cycle: int = 128   # 64 MACs at 2 ops each
    power_mw: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_POWER_MW))
    area_table: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_AREA_TABLE))

    def __post_init__(self):
        if self.freq_mhz <= 0:
            raise MetricsError("freq_mhz must be > 0")
        if self.area_mm2 <= 0:
            raise MetricsError("area_mm2 must be > 0")
        for k, v in self.power_mw.items():
            if v <= 0:
                raise MetricsError(f"power for {k!r} must be > 0")
        for k, v in self.area_table.items():
            if v <= 0:
                raise MetricsError(f"area of {k!r} must be > 0")

    @property
    def total_area_um2(self) -> float:
        return sum(self.area_table.values())


@dataclass(frozen=True)
class MetricsReport:
    kernel: str
    ops: int
    cycles: int
    mops: float
    gops_per_mm2: float
    tops_per_w: float
    tops_per_w_per_mm2: float
    utilization_pct: float

    def verify_identities(self, profile: "TechProfile") -> None:
        """Recompute every derived field; raise if any stored value differs."""
        gops = self.mops / 1000.0
        power = profile.power_mw[self.kernel] if self.mops else None
        checks = {
            "gops_per_mm2": gops / profile.area_mm2 if self.mops else 0.0,
            "tops_per_w": gops / power if self.mops else 0.0,
            "tops_per_w_per_mm2": (gops / power) / profile.area_mm2 if self.mops else 0.0,
        }
        for name, want in checks.items():
            if getattr(self, name) != want:
                raise MetricsError(f"{name} violates its identity")

    def to_text(self) -> str:
        return (
            f"kernel {self.kernel}\n"
            f"ops {self.ops}\n"
            f"cycles {self.cycles}\n"
            f"mops {self.mops:.6g}\n"
            f"gops_per_mm2 {self.gops_per_mm2:.6g}\n"
            f"tops_per_w {self.tops_per_w:.6g}\n"
            f"tops_per_w_per_mm2 {self.tops_per_w_per_mm2:.6g}\n"
            f"utilization_pct {self.utilization_pct:.6g}\n"
        )

    def row(self) -> str:
        return (f"{self.kernel:<6} {self.mops:>10.1f} {self.gops_per_mm2:>10.2f} "
                f"{self.tops_per_w:>8.2f} {self.tops_per_w_per_mm2:>12.2f} "
                f"{self.utilization_pct:>7.2f} {self.cycles:>10d} {self.ops:>12d}")

    @staticmethod
    def header() -> str:
        return (f"{'kernel':<6} {'MOPS':>10} {'GOPS/mm2':>10} {'TOPS/W':>8} "
                f"{'TOPS/W/mm2':>12} {'util%':>7} {'cycles':>10} {'ops':>12}")


def compute_report(ops: int, cycles: int, profile: TechProfile,
                   kernel: str) -> MetricsReport:
    """Build a report from an op count and a cycle count.

    mops = ops / (cycles / (freq_mhz * 1e6)) / 1e6; the derived fields
    follow the documented identities.  Raises MetricsError on cycles <= 0
    or an unknown kernel (no calibrated power).
    """
    if cycles <= 0:
        raise MetricsError("empty run: cycles must be > 0")
    if kernel not in profile.power_mw:
        raise MetricsError(f"no calibrated power for kernel {kernel!r}")
    if ops == 0:
        return MetricsReport(kernel, 0, cycles, 0.0, 0.0, 0.0, 0.0, 0.0)
    mops = ops * profile.freq_mhz / cycles
    gops = mops / 1000.0
    tops_per_w = gops / profile.power_mw[kernel]
    report = MetricsReport(
        kernel=kernel,
        ops=ops,
        cycles=cycles,
        mops=mops,
        gops_per_mm2=gops / profile.area_mm2,
        tops_per_w=tops_per_w,
        tops_per_w_per_mm2=tops_per_w / profile.area_mm2,
        utilization_pct=ops / cycles / profile.peak_ops_per_cycle * 100.0,
    )
    report.verify_identities(profile)
    return report


def area_breakdown(profile: TechProfile) -> tuple[list[tuple[str, float, float]], float]:
    """Per-component area percentages plus the reported total (um^2)."""
    if not profile.area_table:
        raise MetricsError("area table is empty")
    total = profile.total_area_um2
    rows = [(name, area, area / total * 100.0)
            for name, area in profile.area_table.items()]
    return rows, total
