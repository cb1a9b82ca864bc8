"""Shared machinery for the hand-scheduled kernel microcode.

The kernels run as static, stall-free schedules.  The trick that makes
static timing exact is bank affinity: each lane (a MOB paired with a PE)
keeps its entire working set in its own memory bank, so its requests
never contend and every load is granted the cycle it is issued.

A lane arena is a bank-striped region: word k of lane L lives at byte
`base + 32*k + 4*L`, which maps to bank L for every k.  Tensors are
sharded or replicated into arenas by the host-side loader before a run,
and results are gathered back out of them afterwards; the logical
tensors the oracles see are unchanged by this staging.

Lane topology on the default fabric: lanes 0-3 pair MOB (r, 4) with PE
(r, 3) over the W/E link; lanes 4-7 pair MOB (r, 5) with PE (r, 0) over
the torus wrap.  Softmax uses wide lanes with both MOBs and two PEs of
a row (see build_sftmx).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assembler import assemble
from ..engine import CounterSet, Machine, MachineStatus, run
from ..fabric import ContextImage, Fabric, FabricConfig, load_context
from ..isa import Width
from ..memory import BankedMemory, MemoryConfig

__all__ = [
    "Arena", "LaneLink", "CoreAsm", "KernelProgram", "Phase", "BuildError",
    "lane_link", "idle_sections", "execute_program",
]


class BuildError(Exception):
    pass


class Arena:
    """Per-lane bump allocator over a bank-striped region."""

    def __init__(self, base: int = 0, lanes: int = 8, banks: int = 8,
                 limit_words: int = 8192):
        if base % (4 * banks):
            raise BuildError(f"arena base {base:#x} not stripe-aligned")
        self.base = base
        self.lanes = lanes
        self.banks = banks
        self.limit_words = limit_words
        self._next = [0] * lanes

    def alloc(self, lane: int, n_words: int) -> int:
        """Reserve n consecutive arena words; returns the first word index."""
        start = self._next[lane]
        self._next[lane] += n_words
        if self._next[lane] > self.limit_words:
            raise BuildError(f"lane {lane} arena overflow: "
                             f"{self._next[lane]} words > {self.limit_words}")
        return start

    def addr(self, lane: int, word: int, byte: int = 0) -> int:
        if not 0 <= byte < 4:
            raise BuildError(f"byte offset {byte} outside a word")
        return self.base + 32 * word + 4 * lane + byte

    # -- host-side staging (numpy views over the striped region) ----------

    def _view(self, mem: BankedMemory, word: int, count: int) -> np.ndarray:
        """(count, banks) u32 view: column L holds lane L's arena words."""
        off = self.base + 32 * word
        return np.frombuffer(mem.data, dtype="<u4", count=count * self.banks,
                             offset=off).reshape(count, self.banks)

    def write_words(self, mem: BankedMemory, lane: int, word: int,
                    values) -> None:
        arr = np.asarray(values, dtype=np.int64) & 0xFFFFFFFF
        self._view(mem, word, len(arr))[:, lane] = arr.astype(np.uint32)

    def write_bytes(self, mem: BankedMemory, lane: int, word: int,
                    data: bytes) -> None:
        padded = bytes(data) + b"\0" * (-len(data) % 4)
        self.write_words(mem, lane, word,
                         np.frombuffer(padded, dtype="<u4"))

    def read_words(self, mem: BankedMemory, lane: int, word: int,
                   count: int) -> np.ndarray:
        return self._view(mem, word, count)[:, lane].copy()

    def read_bytes(self, mem: BankedMemory, lane: int, word: int,
                   count: int) -> bytes:
        words = self.read_words(mem, lane, word, (count + 3) // 4)
        return words.astype("<u4").tobytes()[:count]


@dataclass(frozen=True)
class LaneLink:
    """One MOB-PE pairing with the port names each side uses."""

    lane: int
    mob: tuple[int, int]
    pe: tuple[int, int]
    mob_to_pe: str    # move direction name on the MOB
    pe_from_mob: str  # port name the PE reads
    pe_to_mob: str    # move direction name on the PE
    mob_from_pe: str  # port name the MOB reads


def lane_link(lane: int) -> LaneLink:
    if not 0 <= lane < 8:
        raise BuildError(f"lane {lane} out of range")
    if lane < 4:
        return LaneLink(lane, (lane, 4), (lane, 3), "w", "e", "e", "w")
    r = lane - 4
    return LaneLink(lane, (r, 5), (r, 0), "e", "w", "w", "e")


class CoreAsm:
    """Collects one core's directives and words, tracking RF budgets."""

    def __init__(self, coord: tuple[int, int], instr_depth: int = 32,
                 const_depth: int = 16):
        self.coord = coord
        self.instr_depth = instr_depth
        self.const_depth = const_depth
        self._consts: dict[int, int] = {}
        self._agus: list[str] = []
        self._words: list[str] = []
        self._labels_at: dict[str, int] = {}

    def const(self, value: int) -> str:
        value &= 0xFFFFFFFF
        if value not in self._consts:
            if len(self._consts) >= self.const_depth:
                raise BuildError(f"core {self.coord}: constant RF exhausted")
            self._consts[value] = len(self._consts)
        return f"c{self._consts[value]}"

    def agu(self, base: int, stride_inner: int, count_inner: int,
            stride_outer: int = 0, count_outer: int = 1) -> str:
        self._agus.append(
            f".agu {base:#x} {stride_inner} {count_inner}"
            + (f" {stride_outer} {count_outer}"
               if (stride_outer, count_outer) != (0, 1) else ""))
        return f"g{len(self._agus) - 1}"

    def word(self, text: str, label: str | None = None) -> int:
        idx = len(self._words)
        if label is not None:
            if label in self._labels_at:
                raise BuildError(f"core {self.coord}: duplicate label {label}")
            self._labels_at[label] = idx
            text = f"{label}: {text}"
        self._words.append(text)
        if len(self._words) > self.instr_depth:
            raise BuildError(f"core {self.coord}: program exceeds "
                             f"{self.instr_depth} words")
        return idx

    def nops(self, n: int) -> None:
        for _ in range(n):
            self.word("nop")

    @property
    def n_words(self) -> int:
        return len(self._words)

    def source(self) -> str:
        lines = [f".core {self.coord[0]},{self.coord[1]}"]
        for value, idx in self._consts.items():
            lines.append(f".const {value:#x}")
        lines.extend(self._agus)
        lines.extend(self._words)
        lines.append("")
        return "\n".join(lines)


def idle_sections(cfg: FabricConfig, used: set[tuple[int, int]]) -> str:
    """`eoe`-only sections for every core a kernel leaves unused."""
    out = []
    for coord in cfg.coords():
        if coord not in used:
            out.append(f".core {coord[0]},{coord[1]}\neoe\n")
    return "".join(out)


@dataclass
class Phase:
    name: str
    source: str
    image: ContextImage
    stage: object | None = None  # optional callable(mem) run before the phase


@dataclass
class KernelProgram:
    """Everything needed to execute one kernel on the fabric."""

    kernel: str
    stage: object                 # callable(mem): writes all input arenas
    readback: object              # callable(mem, fabric) -> outputs dict
    nominal_ops: int
    merged: Phase | None = None   # single-phase variant, when one exists
    split: list[Phase] = field(default_factory=list)
    max_cycles: int = 2_000_000
    expect_stall_free: bool = True

    def phases_for(self, context_capacity: int) -> list[Phase]:
        """Pick the phase plan the context memory allows."""
        if self.merged is not None and self.merged.image.total_bytes <= context_capacity:
            return [self.merged]
        plan = self.split or ([self.merged] if self.merged else [])
        for ph in plan:
            if ph.image.total_bytes > context_capacity:
                raise BuildError(
                    f"{self.kernel}/{ph.name}: image of {ph.image.total_bytes} bytes "
                    f"exceeds the {context_capacity}-byte context memory")
        if not plan:
            raise BuildError(f"{self.kernel}: no executable phase plan")
        return plan


def build_phase(name: str, cfg: FabricConfig, sources: list[str],
                stage=None) -> Phase:
    src = "".join(sources)
    used = set()
    image = assemble(src, cfg.rf)
    used = {s.coord for s in image.sections}
    src = src + idle_sections(cfg, used)
    image = assemble(src, cfg.rf)
    return Phase(name, src, image, stage)


def execute_program(program: KernelProgram, cfg: FabricConfig,
                    mem_cfg: MemoryConfig, memory: BankedMemory | None = None,
                    trace: bool = False):
    """Stage inputs, run every phase, and gather the outputs.

    Returns (outputs, CounterSet, machines): counters are accumulated over
    phases; `machines` holds the last phase's machine for inspection.
    """
    memory = memory or BankedMemory(mem_cfg)
    program.stage(memory)
    totals = CounterSet()
    fab = Fabric(cfg)
    phases = program.phases_for(mem_cfg.context_bytes)
    last_machine = None
    phase_count = 0
    for ph in phases:
        if ph.stage is not None:
            ph.stage(memory)
        load_context(ph.image, fab, mem_cfg.context_bytes)
        m = Machine(fab, mem_cfg=mem_cfg, memory=memory, trace=trace)
        m, _, ctr = run(m, program.max_cycles)
        if m.status != MachineStatus.DONE:
            raise BuildError(f"{program.kernel}/{ph.name}: machine ended "
                             f"{m.status.value} ({m.fault_msg}) at cycle {m.cycle}")
        if program.expect_stall_free and ctr.mem_stalls:
            raise BuildError(f"{program.kernel}/{ph.name}: {ctr.mem_stalls} "
                             "memory stalls in a schedule built to have none")
        _accumulate(totals, ctr)
        last_machine = m
        phase_count += 1
    outputs = program.readback(memory, last_machine.fabric)
    return outputs, totals, phase_count, last_machine


def _accumulate(total: CounterSet, part: CounterSet) -> None:
    for key, val in part.__dict__.items():
        if key == "unit_instrs":
            for unit, n in val.items():
                total.unit_instrs[unit] = total.unit_instrs.get(unit, 0) + n
        elif key.startswith("max_"):
            setattr(total, key, max(getattr(total, key), val))
        else:
            setattr(total, key, getattr(total, key) + val)
