"""Heterogeneous core array: torus topology, per-core state, context loading.

The default geometry is a 4x6 torus whose four leftmost columns hold the
16 arithmetic cores (PEs) and whose two rightmost columns hold the 8
memory-operation blocks (MOBs).  Neighbor ports are registered: a value
moved at cycle t is readable by the neighbor at t+1, never at t.

Context images carry each core's instruction words, constants and
address-generator descriptors.  Binary section layout (little-endian):

  row u8, col u8, n_instr u16, n_const u16, n_agu u16     (8-byte header)
  n_instr x u64   instruction words
  n_const x u32   constant-RF values
  n_agu   x 20B   AGU descriptor: base u32, stride_inner i32,
                  stride_outer i32, count_inner u32, count_outer u32

A context file (.nxctx) prefixes the sections with the 8-byte magic
"NXCTX1\\0\\0" and a u32 section count.  The hardware footprint used for
the capacity check is the sum of section sizes, excluding that wrapper.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from .isa import (
    CtrlKind, MicrocodeWord, OpKind, Opcode, Operand,
    RegisterFileSpec, Unit, decode_word, encode_word, exec_alu,
    LSU_OPCODES,
)
from .memory import AccessRequest, AGUState

__all__ = [
    "CoreKind", "FabricConfig", "CoreState", "Fabric",
    "ContextSection", "ContextImage",
    "ContextOverflowError", "FabricError",
    "neighbor", "load_context", "step_core", "StepEffects",
]


class FabricError(Exception):
    """Configuration or context-image violation."""


class ContextOverflowError(FabricError):
    """Context image exceeds the context-memory capacity.

    Signals the caller to split the program into phases.
    """


class CoreKind(Enum):
    PE = "pe"
    MOB = "mob"


@dataclass(frozen=True)
class FabricConfig:
    rows: int = 4
    cols: int = 6
    # explicit placement overrides; default: the two rightmost columns are MOBs
    core_kind: dict[tuple[int, int], CoreKind] | None = None
    rf: RegisterFileSpec = field(default_factory=RegisterFileSpec)

    def kind_at(self, coord: tuple[int, int]) -> CoreKind:
        if self.core_kind is not None and coord in self.core_kind:
            return self.core_kind[coord]
        return CoreKind.MOB if coord[1] >= self.cols - 2 else CoreKind.PE

    def coords(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def pe_coords(self) -> list[tuple[int, int]]:
        return [c for c in self.coords() if self.kind_at(c) == CoreKind.PE]

    def mob_coords(self) -> list[tuple[int, int]]:
        return [c for c in self.coords() if self.kind_at(c) == CoreKind.MOB]

    @property
    def n_cores(self) -> int:
        return self.rows * self.cols

    @property
    def total_macs(self) -> int:
        # each PE fuses four 8-bit MACs
        return 4 * len(self.pe_coords())


def neighbor(cfg: FabricConfig, coord: tuple[int, int], direction: int) -> tuple[int, int]:
    """Torus neighbor of `coord` in `direction`; wraps on both axes."""
    r, c = coord
    if not (0 <= r < cfg.rows and 0 <= c < cfg.cols):
        raise FabricError(f"invalid coord {coord} for {cfg.rows}x{cfg.cols} fabric")
    if direction == 0:      # N
        return ((r - 1) % cfg.rows, c)
    if direction == 2:      # S
        return ((r + 1) % cfg.rows, c)
    if direction == 1:      # E
        return (r, (c + 1) % cfg.cols)
    if direction == 3:      # W
        return (r, (c - 1) % cfg.cols)
    raise FabricError(f"invalid direction {direction}")


# ── per-core state ───────────────────────────────────────────────────


class CoreState:
    """Architectural plus simulation state of one core."""

    __slots__ = (
        "coord", "kind", "pc", "instr", "consts", "temps", "out_ports",
        "asleep", "done", "wake_pending", "waiting_barrier", "agus",
    )

    def __init__(self, coord: tuple[int, int], kind: CoreKind, rf: RegisterFileSpec):
        self.coord = coord
        self.kind = kind
        self.pc = 0
        self.instr: list[MicrocodeWord] = [MicrocodeWord()] * rf.instr_depth
        self.consts: list[int] = [0] * rf.const_depth
        self.temps: list[int] = [0] * rf.temp_depth
        self.out_ports: list[int] = [0, 0, 0, 0]
        self.asleep = False
        self.done = False
        self.wake_pending = False
        self.waiting_barrier: int | None = None
        self.agus: list[AGUState] = []


class Fabric:
    """The full core array.  Core index order is row-major."""

    def __init__(self, config: FabricConfig | None = None):
        self.config = config or FabricConfig()
        self.cores: list[CoreState] = [
            CoreState(c, self.config.kind_at(c), self.config.rf)
            for c in self.config.coords()
        ]
        self._index = {core.coord: i for i, core in enumerate(self.cores)}
        # neighbor_ids[i][d] = flat index of the neighbor of core i in direction d
        self.neighbor_ids: list[tuple[int, int, int, int]] = [
            tuple(self._index[neighbor(self.config, core.coord, d)] for d in range(4))
            for core in self.cores
        ]

    def core_at(self, coord: tuple[int, int]) -> CoreState:
        if coord not in self._index:
            raise FabricError(f"invalid coord {coord} for "
                              f"{self.config.rows}x{self.config.cols} fabric")
        return self.cores[self._index[coord]]


# ── context images ───────────────────────────────────────────────────

_SECTION_HDR = struct.Struct("<BBHHH")
_AGU_DESC = struct.Struct("<IiiII")
_CTX_MAGIC = b"NXCTX1\x00\x00"


@dataclass(frozen=True)
class ContextSection:
    coord: tuple[int, int]
    words: tuple[MicrocodeWord, ...] = ()
    consts: tuple[int, ...] = ()
    agus: tuple[AGUState, ...] = ()

    @property
    def n_bytes(self) -> int:
        return _SECTION_HDR.size + 8 * len(self.words) + 4 * len(self.consts) \
            + _AGU_DESC.size * len(self.agus)


@dataclass(frozen=True)
class ContextImage:
    sections: tuple[ContextSection, ...] = ()

    @property
    def total_bytes(self) -> int:
        return sum(s.n_bytes for s in self.sections)

    def to_bytes(self) -> bytes:
        out = [_CTX_MAGIC, struct.pack("<I", len(self.sections))]
        for s in self.sections:
            out.append(_SECTION_HDR.pack(s.coord[0], s.coord[1],
                                         len(s.words), len(s.consts), len(s.agus)))
            for w in s.words:
                out.append(struct.pack("<Q", encode_word(w)))
            for v in s.consts:
                out.append(struct.pack("<I", v & 0xFFFFFFFF))
            for a in s.agus:
                out.append(_AGU_DESC.pack(a.base, a.stride_inner, a.stride_outer,
                                          a.count_inner, a.count_outer))
        return b"".join(out)

    @staticmethod
    def from_bytes(data: bytes) -> "ContextImage":
        if data[:8] != _CTX_MAGIC:
            raise FabricError("not a context image (bad magic)")
        (n_sections,) = struct.unpack_from("<I", data, 8)
        off = 12
        sections = []
        for _ in range(n_sections):
            if off + _SECTION_HDR.size > len(data):
                raise FabricError("unexpected end of section")
            row, col, n_instr, n_const, n_agu = _SECTION_HDR.unpack_from(data, off)
            off += _SECTION_HDR.size
            need = 8 * n_instr + 4 * n_const + _AGU_DESC.size * n_agu
            if off + need > len(data):
                raise FabricError("unexpected end of section")
            words = []
            for k in range(n_instr):
                (bits,) = struct.unpack_from("<Q", data, off)
                try:
                    words.append(decode_word(bits))
                except Exception as exc:
                    raise FabricError(
                        f"undecodable word {k} in core ({row},{col}): {exc}") from exc
                off += 8
            consts = []
            for _k in range(n_const):
                (v,) = struct.unpack_from("<I", data, off)
                consts.append(v)
                off += 4
            agus = []
            for _k in range(n_agu):
                base, si, so, ci, co = _AGU_DESC.unpack_from(data, off)
                agus.append(AGUState(base, stride_inner=si, count_inner=ci,
                                     stride_outer=so, count_outer=co))
                off += _AGU_DESC.size
            sections.append(ContextSection((row, col), tuple(words),
                                           tuple(consts), tuple(agus)))
        return ContextImage(tuple(sections))


def load_context(image: ContextImage, fabric: Fabric,
                 context_capacity: int = 4096) -> Fabric:
    """Distribute a context image onto the fabric.

    Resets every core (PC 0, cleared flags, zeroed RFs) and writes the
    image sections.  Raises ContextOverflowError when the image exceeds
    the context-memory capacity, FabricError for bad coords or RF
    overflow.  Loading the same image twice yields identical state.
    """
    if image.total_bytes > context_capacity:
        raise ContextOverflowError(
            f"context overflow: image needs {image.total_bytes} bytes, "
            f"capacity is {context_capacity}")
    rf = fabric.config.rf
    for s in image.sections:
        if s.coord not in fabric._index:
            raise FabricError(f"invalid coord {s.coord} in context image")
        if len(s.words) > rf.instr_depth:
            raise FabricError(f"RF overflow at core {s.coord}: "
                              f"{len(s.words)} words > instr depth {rf.instr_depth}")
        if len(s.consts) > rf.const_depth:
            raise FabricError(f"RF overflow at core {s.coord}: "
                              f"{len(s.consts)} constants > const depth {rf.const_depth}")
    for core in fabric.cores:
        core.pc = 0
        core.instr = [MicrocodeWord()] * rf.instr_depth
        core.consts = [0] * rf.const_depth
        core.temps = [0] * rf.temp_depth
        core.out_ports = [0, 0, 0, 0]
        core.asleep = False
        core.done = False
        core.wake_pending = False
        core.waiting_barrier = None
        core.agus = []
    for s in image.sections:
        core = fabric.core_at(s.coord)
        for i, w in enumerate(s.words):
            core.instr[i] = w
        for i, v in enumerate(s.consts):
            core.consts[i] = v & 0xFFFFFFFF
        core.agus = [AGUState(a.base, stride_inner=a.stride_inner,
                              count_inner=a.count_inner,
                              stride_outer=a.stride_outer,
                              count_outer=a.count_outer) for a in s.agus]
    return fabric


# ── one-core step ────────────────────────────────────────────────────


class StepEffects:
    """Everything a word execution wants to change, committed only when the
    word retires (not stalled on memory, not blocked on a barrier)."""

    __slots__ = (
        "new_pc", "temp_writes", "moves", "mem", "sleep", "wake_consumed",
        "done", "barrier", "fault", "ops", "op_unit",
    )

    def __init__(self):
        self.new_pc = 0
        self.temp_writes: list[tuple[int, int]] = []
        self.moves: list[tuple[int, int]] = []
        self.mem: AccessRequest | None = None
        self.sleep = False
        self.wake_consumed = False
        self.done = False
        self.barrier: int | None = None
        self.fault: str | None = None
        self.ops = 0
        self.op_unit: Unit | None = None


def _resolve(core: CoreState, sel: Operand, inputs) -> int:
    k = sel.kind
    if k == OpKind.TEMP:
        return core.temps[sel.index]
    if k == OpKind.CONST:
        return core.consts[sel.index]
    if k == OpKind.PORT:
        return inputs[sel.index]
    raise FabricError("AGU selector outside an LSU address operand")


def step_core(core: CoreState, inputs: tuple[int, int, int, int]) -> StepEffects:
    """Execute the word at `core.pc` against the previous-cycle port snapshot.

    Pure with respect to the core: all changes are returned as StepEffects
    and applied by the caller.  `inputs` are indexed N,E,S,W and hold the
    neighbors' latched values from the previous cycle.
    """
    fx = StepEffects()
    if core.pc >= len(core.instr):
        fx.fault = f"core {core.coord}: pc {core.pc} out of range"
        return fx
    word = core.instr[core.pc]
    fx.new_pc = core.pc + 1

    c = word.compute
    if c is not None:
        is_lsu = c.opcode in LSU_OPCODES
        if is_lsu != (core.kind == CoreKind.MOB):
            fx.fault = (f"unit not present: {c.opcode.name} on "
                        f"{core.kind.value} core {core.coord} word {core.pc}")
            return fx
        if is_lsu:
            if c.a.kind == OpKind.AGU:
                stream = c.a.index
                if stream >= len(core.agus):
                    fx.fault = f"core {core.coord}: AGU stream {stream} not configured"
                    return fx
                agu = core.agus[stream]
                if agu.exhausted:
                    fx.fault = f"core {core.coord}: AGU stream {stream} exhausted"
                    return fx
                addr = agu.peek()
                fx.mem = AccessRequest(core.coord, c.opcode == Opcode.STORE, addr,
                                       c.width, signed=c.opcode == Opcode.LOAD_SIGNED,
                                       dst=c.dst, agu_stream=stream)
            else:
                addr = _resolve(core, c.a, inputs)
                fx.mem = AccessRequest(core.coord, c.opcode == Opcode.STORE, addr,
                                       c.width, signed=c.opcode == Opcode.LOAD_SIGNED,
                                       dst=c.dst, agu_stream=None)
            if c.opcode == Opcode.STORE:
                fx.mem.data = _resolve(core, c.b, inputs)
            fx.op_unit = Unit.LSU
            fx.ops = 1
        else:
            a = _resolve(core, c.a, inputs)
            b = _resolve(core, c.b, inputs)
            val = exec_alu(c.opcode, c.width, a, b, core.temps[c.dst])
            fx.temp_writes.append((c.dst, val))
            fx.op_unit = c.unit
            fx.ops = 8 if c.opcode == Opcode.MAC4 else 1

    for m in word.moves:
        fx.moves.append((m.direction, _resolve(core, m.source, inputs)))

    ct = word.control
    kind = ct.kind
    if kind == CtrlKind.JUMP:
        fx.new_pc = ct.target
        if ct.barrier is not None:
            fx.barrier = ct.barrier
    elif kind == CtrlKind.CJUMP:
        if core.temps[ct.cond] != 0:
            fx.new_pc = ct.target
    elif kind == CtrlKind.SLEEP:
        if core.wake_pending:
            fx.wake_consumed = True
        else:
            fx.sleep = True
    elif kind == CtrlKind.EOE:
        fx.done = True
        fx.new_pc = core.pc
    return fx
