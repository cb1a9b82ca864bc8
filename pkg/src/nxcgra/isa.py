"""VLIW instruction set: word layout, operand selectors, and functional-unit semantics.

One microcode word is 64 bits and issues up to six slots in parallel:
one compute operation, up to four MOVE operations (one per direction),
and one control operation.

Word layout (bit 0 = LSB):

  [63]     compute valid
  [62:58]  compute opcode          (5 bits, see Opcode)
  [57:56]  compute width           (0=w8, 1=w16, 2=w32)
  [55:52]  compute dst             (temp-RF index)
  [51:46]  compute operand A       (selector, see below)
  [45:40]  compute operand B       (selector)
  [39:33]  move W  = valid(1) + selector(6)
  [32:26]  move S
  [25:19]  move E
  [18:12]  move N
  [11:9]   control kind            (0=nop 1=jump 2=cjump 3=sleep 4=eoe)
  [8:4]    control target          (instruction-RF index)
  [3:0]    control aux             (jump: barrier_id+1 or 0; cjump: cond temp)

Operand selector (6 bits): kind [5:4] + index [3:0]

  kind 0  temp-RF entry            index 0..15
  kind 1  constant-RF entry        index 0..15
  kind 2  input port               index 0=N 1=E 2=S 3=W
  kind 3  address-generator stream index = stream id (MOB loads/stores only)

The all-NOP word encodes to 0.  Unused fields of an enabled slot must be
zero in their canonical form; decode rejects words whose disabled slots
carry nonzero payload, so encode/decode is a bijection on valid words.

Values are carried as unsigned 32-bit integers (0..2**32-1).  Helpers
`s32`/`u32` convert to and from two's-complement interpretation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

__all__ = [
    "IsaError", "EncodeError", "DecodeError",
    "Unit", "Opcode", "Width", "OpKind", "CtrlKind",
    "Operand", "ComputeOp", "MoveOp", "ControlOp", "MicrocodeWord",
    "RegisterFileSpec",
    "DIR_N", "DIR_E", "DIR_S", "DIR_W", "DIR_NAMES", "OPPOSITE",
    "UNIT_OPCODES", "OPCODE_UNIT", "UNARY_OPCODES", "LSU_OPCODES",
    "encode_word", "decode_word", "validate_word",
    "exec_alu", "exec_mac4",
    "u32", "s32", "sx8", "sx16",
]


class IsaError(Exception):
    """Base error for instruction-set violations."""


class EncodeError(IsaError):
    """A word violates a field range or slot invariant."""


class DecodeError(IsaError):
    """A 64-bit pattern is not a canonical word encoding."""


# ── directions ───────────────────────────────────────────────────────

DIR_N, DIR_E, DIR_S, DIR_W = 0, 1, 2, 3
DIR_NAMES = ("n", "e", "s", "w")
OPPOSITE = (DIR_S, DIR_W, DIR_N, DIR_E)


class Unit(IntEnum):
    ALU32 = 0
    ALU8 = 1
    MUL16 = 2
    DIV32 = 3
    LSU = 4   # present on MOBs only


class Width(IntEnum):
    W8 = 0
    W16 = 1
    W32 = 2


class Opcode(IntEnum):
    # ALU32
    AND = 0
    OR = 1
    XOR = 2
    NOT = 3
    SLL = 4
    SRL = 5
    SRA = 6
    CMP_EQ = 7
    CMP_LT = 8
    CMP_LTU = 9
    ADD = 10
    SUB = 11
    MULS32 = 12
    MASKSUB = 13
    PACK = 14
    UNPACK = 15
    # DIV32
    DIVS32 = 16
    DIVU32 = 17
    # MUL16
    MULU16 = 18
    # ALU8
    MULU8 = 19
    MAC4 = 20
    SAT8 = 21
    DIV8 = 22
    # LSU
    LOAD = 23
    LOAD_SIGNED = 24
    STORE = 25


UNIT_OPCODES: dict[Unit, frozenset[Opcode]] = {
    Unit.ALU32: frozenset({
        Opcode.AND, Opcode.OR, Opcode.XOR, Opcode.NOT, Opcode.SLL,
        Opcode.SRL, Opcode.SRA, Opcode.CMP_EQ, Opcode.CMP_LT,
        Opcode.CMP_LTU, Opcode.ADD, Opcode.SUB, Opcode.MULS32,
        Opcode.MASKSUB, Opcode.PACK, Opcode.UNPACK,
    }),
    Unit.DIV32: frozenset({Opcode.DIVS32, Opcode.DIVU32}),
    Unit.MUL16: frozenset({Opcode.MULU16}),
    Unit.ALU8: frozenset({Opcode.MULU8, Opcode.MAC4, Opcode.SAT8, Opcode.DIV8}),
    Unit.LSU: frozenset({Opcode.LOAD, Opcode.LOAD_SIGNED, Opcode.STORE}),
}

OPCODE_UNIT: dict[Opcode, Unit] = {
    op: unit for unit, ops in UNIT_OPCODES.items() for op in ops
}

# operand B must be the canonical temp[0] selector for these
UNARY_OPCODES = frozenset({Opcode.NOT, Opcode.SAT8})

LSU_OPCODES = UNIT_OPCODES[Unit.LSU]

# widths each opcode accepts (everything else is fixed to one width)
_OPCODE_WIDTHS: dict[Opcode, frozenset[Width]] = {
    Opcode.PACK: frozenset({Width.W8, Width.W16}),
    Opcode.UNPACK: frozenset({Width.W8, Width.W16}),
    Opcode.MASKSUB: frozenset({Width.W8, Width.W16, Width.W32}),
    Opcode.LOAD: frozenset({Width.W8, Width.W16, Width.W32}),
    Opcode.LOAD_SIGNED: frozenset({Width.W8, Width.W16, Width.W32}),
    Opcode.STORE: frozenset({Width.W8, Width.W16, Width.W32}),
}


def opcode_widths(op: Opcode) -> frozenset[Width]:
    """Widths a ComputeOp with this opcode may carry."""
    if op in _OPCODE_WIDTHS:
        return _OPCODE_WIDTHS[op]
    unit = OPCODE_UNIT[op]
    if unit == Unit.ALU8:
        return frozenset({Width.W8})
    if unit == Unit.MUL16:
        return frozenset({Width.W16})
    return frozenset({Width.W32})


class OpKind(IntEnum):
    """Operand selector kinds."""

    TEMP = 0
    CONST = 1
    PORT = 2
    AGU = 3


class CtrlKind(IntEnum):
    NOP = 0
    JUMP = 1
    CJUMP = 2
    SLEEP = 3
    EOE = 4


# ── register files ───────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class RegisterFileSpec:
    """Per-core register-file depths.

    The temporary RF has triple read ports and a single write port; the
    constant RF is written only by context load.
    """

    instr_depth: int = 32
    const_depth: int = 16
    temp_depth: int = 16


# ── word structure ───────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class Operand:
    kind: OpKind
    index: int

    @staticmethod
    def temp(i: int) -> "Operand":
        return Operand(OpKind.TEMP, i)

    @staticmethod
    def const(i: int) -> "Operand":
        return Operand(OpKind.CONST, i)

    @staticmethod
    def port(d: int) -> "Operand":
        return Operand(OpKind.PORT, d)

    @staticmethod
    def agu(stream: int) -> "Operand":
        return Operand(OpKind.AGU, stream)


OPERAND_ZERO = Operand.temp(0)  # canonical filler for unused operand slots


@dataclass(frozen=True, slots=True)
class ComputeOp:
    opcode: Opcode
    dst: int = 0
    a: Operand = OPERAND_ZERO
    b: Operand = OPERAND_ZERO
    width: Width | None = None  # canonical default: w32 where valid, else w8

    def __post_init__(self):
        if self.width is None:
            widths = opcode_widths(self.opcode)
            object.__setattr__(self, "width",
                               Width.W32 if Width.W32 in widths else min(widths))

    @property
    def unit(self) -> Unit:
        return OPCODE_UNIT[self.opcode]


@dataclass(frozen=True, slots=True)
class MoveOp:
    direction: int  # DIR_N..DIR_W
    source: Operand


@dataclass(frozen=True, slots=True)
class ControlOp:
    kind: CtrlKind = CtrlKind.NOP
    target: int = 0
    cond: int = 0            # temp-RF index, CJUMP only
    barrier: int | None = None  # JUMP only in the 64-bit layout

    @staticmethod
    def nop() -> "ControlOp":
        return ControlOp()

    @staticmethod
    def jump(target: int, barrier: int | None = None) -> "ControlOp":
        return ControlOp(CtrlKind.JUMP, target=target, barrier=barrier)

    @staticmethod
    def cjump(cond: int, target: int) -> "ControlOp":
        return ControlOp(CtrlKind.CJUMP, target=target, cond=cond)

    @staticmethod
    def sleep() -> "ControlOp":
        return ControlOp(CtrlKind.SLEEP)

    @staticmethod
    def eoe() -> "ControlOp":
        return ControlOp(CtrlKind.EOE)


@dataclass(frozen=True, slots=True)
class MicrocodeWord:
    compute: ComputeOp | None = None
    moves: tuple[MoveOp, ...] = ()
    control: ControlOp = field(default_factory=ControlOp)

    def __post_init__(self):
        # move slots are keyed by direction; keep them in canonical order
        moves = tuple(self.moves)
        if any(moves[i].direction >= moves[i + 1].direction
               for i in range(len(moves) - 1)):
            moves = tuple(sorted(moves, key=lambda m: m.direction))
        object.__setattr__(self, "moves", moves)


NOP_WORD = MicrocodeWord()


# ── validation ───────────────────────────────────────────────────────


def _check_operand(sel: Operand, rf: RegisterFileSpec, what: str) -> None:
    if sel.kind == OpKind.TEMP:
        hi = rf.temp_depth
    elif sel.kind == OpKind.CONST:
        hi = rf.const_depth
    elif sel.kind == OpKind.PORT:
        hi = 4
    else:
        hi = 16
    if not 0 <= sel.index < min(hi, 16):
        raise EncodeError(f"{what}: selector index {sel.index} out of range for {sel.kind.name}")


def validate_word(w: MicrocodeWord, rf: RegisterFileSpec = RegisterFileSpec()) -> None:
    """Raise EncodeError if the word violates any slot invariant."""
    c = w.compute
    if c is not None:
        if c.opcode not in OPCODE_UNIT:
            raise EncodeError(f"compute: unknown opcode {c.opcode}")
        if c.width not in opcode_widths(c.opcode):
            raise EncodeError(f"compute: width {c.width.name} invalid for {c.opcode.name}")
        if not 0 <= c.dst < rf.temp_depth:
            raise EncodeError(f"compute: dst {c.dst} out of range")
        _check_operand(c.a, rf, "compute operand a")
        _check_operand(c.b, rf, "compute operand b")
        if c.opcode in UNARY_OPCODES and c.b != OPERAND_ZERO:
            raise EncodeError(f"compute: {c.opcode.name} is unary, operand b must be t0")
        if c.a.kind == OpKind.AGU and c.opcode not in LSU_OPCODES:
            raise EncodeError("compute: AGU selector only valid on LSU operations")
        if c.b.kind == OpKind.AGU:
            raise EncodeError("compute: operand b cannot be an AGU stream")
    seen = set()
    for m in w.moves:
        if not 0 <= m.direction <= 3:
            raise EncodeError(f"move: bad direction {m.direction}")
        if m.direction in seen:
            raise EncodeError(f"duplicate move direction '{DIR_NAMES[m.direction]}'")
        seen.add(m.direction)
        _check_operand(m.source, rf, "move source")
        if m.source.kind == OpKind.AGU:
            raise EncodeError("move: AGU selector cannot be a move source")
    ct = w.control
    if ct.kind in (CtrlKind.JUMP, CtrlKind.CJUMP):
        if not 0 <= ct.target < rf.instr_depth:
            raise EncodeError(f"control: target {ct.target} out of range")
    elif ct.target:
        raise EncodeError(f"control: target set on {ct.kind.name}")
    if ct.barrier is not None:
        if ct.kind != CtrlKind.JUMP:
            raise EncodeError("control: barrier id is only encodable on jump")
        if not 0 <= ct.barrier < 15:
            raise EncodeError(f"control: barrier id {ct.barrier} out of range 0..14")
    if ct.cond:
        if ct.kind != CtrlKind.CJUMP:
            raise EncodeError(f"control: cond register set on {ct.kind.name}")
        if not 0 <= ct.cond < rf.temp_depth:
            raise EncodeError(f"control: cond register {ct.cond} out of range")


# ── binary encoding ──────────────────────────────────────────────────


def _enc_operand(sel: Operand) -> int:
    return ((sel.kind & 3) << 4) | (sel.index & 0xF)


def _dec_operand(bits: int) -> Operand:
    return Operand(OpKind((bits >> 4) & 3), bits & 0xF)


def encode_word(w: MicrocodeWord, rf: RegisterFileSpec = RegisterFileSpec()) -> int:
    """Encode a word to its 64-bit value.  Raises EncodeError on invalid fields."""
    validate_word(w, rf)
    bits = 0
    c = w.compute
    if c is not None:
        bits |= 1 << 63
        bits |= (int(c.opcode) & 0x1F) << 58
        bits |= (int(c.width) & 0x3) << 56
        bits |= (c.dst & 0xF) << 52
        bits |= _enc_operand(c.a) << 46
        bits |= _enc_operand(c.b) << 40
    for m in w.moves:
        lo = 12 + 7 * m.direction
        bits |= 1 << (lo + 6)
        bits |= _enc_operand(m.source) << lo
    ct = w.control
    bits |= (int(ct.kind) & 0x7) << 9
    bits |= (ct.target & 0x1F) << 4
    if ct.kind == CtrlKind.JUMP:
        aux = 0 if ct.barrier is None else ct.barrier + 1
    elif ct.kind == CtrlKind.CJUMP:
        aux = ct.cond
    else:
        aux = 0
    bits |= aux & 0xF
    return bits


def decode_word(bits: int) -> MicrocodeWord:
    """Decode a 64-bit value back to a word.  Raises DecodeError on
    non-canonical patterns (disabled slots carrying payload, bad enums)."""
    if not 0 <= bits < 1 << 64:
        raise DecodeError(f"word value {bits:#x} not a 64-bit pattern")
    compute = None
    if bits >> 63:
        opc = (bits >> 58) & 0x1F
        if opc > max(Opcode):
            raise DecodeError(f"unknown compute opcode {opc}")
        wid = (bits >> 56) & 0x3
        if wid > max(Width):
            raise DecodeError(f"bad width field {wid}")
        compute = ComputeOp(
            Opcode(opc),
            dst=(bits >> 52) & 0xF,
            a=_dec_operand((bits >> 46) & 0x3F),
            b=_dec_operand((bits >> 40) & 0x3F),
            width=Width(wid),
        )
    elif bits & (0xFFFFFF << 40):
        raise DecodeError("payload bits set in disabled compute slot")
    moves = []
    for d in range(4):
        lo = 12 + 7 * d
        fld = (bits >> lo) & 0x7F
        if fld >> 6:
            moves.append(MoveOp(d, _dec_operand(fld & 0x3F)))
        elif fld:
            raise DecodeError(f"payload bits set in disabled move slot {DIR_NAMES[d]}")
    kind = (bits >> 9) & 0x7
    if kind > max(CtrlKind):
        raise DecodeError(f"unknown control kind {kind}")
    kind = CtrlKind(kind)
    target = (bits >> 4) & 0x1F
    aux = bits & 0xF
    if kind == CtrlKind.JUMP:
        control = ControlOp(kind, target=target, barrier=None if aux == 0 else aux - 1)
    elif kind == CtrlKind.CJUMP:
        control = ControlOp(kind, target=target, cond=aux)
    else:
        if target or aux:
            raise DecodeError(f"target/aux bits set on {kind.name}")
        control = ControlOp(kind)
    word = MicrocodeWord(compute, tuple(moves), control)
    validate_word(word)
    return word


# ── value helpers ────────────────────────────────────────────────────

_MASK32 = 0xFFFFFFFF
_WIDTH_MASK = (0xFF, 0xFFFF, 0xFFFFFFFF)


def u32(x: int) -> int:
    return x & _MASK32


def s32(x: int) -> int:
    x &= _MASK32
    return x - 0x100000000 if x & 0x80000000 else x


def sx8(x: int) -> int:
    x &= 0xFF
    return x - 0x100 if x & 0x80 else x


def sx16(x: int) -> int:
    x &= 0xFFFF
    return x - 0x10000 if x & 0x8000 else x


# ── functional-unit semantics ────────────────────────────────────────


def exec_alu(op: Opcode, width: Width, a: int, b: int, c: int = 0) -> int:
    """Pure semantics of one compute opcode.

    `a`/`b` are the fetched operands, `c` the third read port (the
    destination's previous value, used by MAC4).  Two's-complement
    wraparound on ADD/SUB/MULS32; shift amounts are taken mod 32;
    divides never trap (see individual cases).
    """
    if op == Opcode.ADD:
        return u32(a + b)
    if op == Opcode.SUB:
        return u32(a - b)
    if op == Opcode.AND:
        return a & b
    if op == Opcode.OR:
        return a | b
    if op == Opcode.XOR:
        return a ^ b
    if op == Opcode.NOT:
        return u32(~a)
    if op == Opcode.SLL:
        return u32(a << (b & 31))
    if op == Opcode.SRL:
        return a >> (b & 31)
    if op == Opcode.SRA:
        return u32(s32(a) >> (b & 31))
    if op == Opcode.CMP_EQ:
        return 1 if a == b else 0
    if op == Opcode.CMP_LT:
        return 1 if s32(a) < s32(b) else 0
    if op == Opcode.CMP_LTU:
        return 1 if a < b else 0
    if op == Opcode.MULS32:
        return u32(s32(a) * s32(b))
    if op == Opcode.DIVS32:
        sa, sb = s32(a), s32(b)
        if sb == 0:
            return _MASK32
        q = abs(sa) // abs(sb)  # truncate toward zero
        return u32(q if (sa < 0) == (sb < 0) else -q)
    if op == Opcode.DIVU32:
        return _MASK32 if b == 0 else a // b
    if op == Opcode.MASKSUB:
        return (a & ~b) & _WIDTH_MASK[width]
    if op == Opcode.PACK:
        if width == Width.W8:
            return ((a & 0xFF) << 8) | (b & 0xFF)
        return ((a & 0xFFFF) << 16) | (b & 0xFFFF)
    if op == Opcode.UNPACK:
        if width == Width.W8:
            return (a >> (8 * (b & 3))) & 0xFF
        return (a >> (16 * (b & 1))) & 0xFFFF
    if op == Opcode.MULU16:
        return (a & 0xFFFF) * (b & 0xFFFF)
    if op == Opcode.MULU8:
        return (a & 0xFF) * (b & 0xFF)
    if op == Opcode.DIV8:
        bb = b & 0xFF
        return 0xFF if bb == 0 else (a & 0xFF) // bb
    if op == Opcode.SAT8:
        v = s32(a)
        return u32(max(-128, min(127, v)))
    if op == Opcode.MAC4:
        return exec_mac4(a, b, c)
    raise IsaError(f"{op.name} has no ALU semantics (LSU opcodes execute in the memory path)")


def exec_mac4(a: int, b: int, acc: int) -> int:
    """Fused 4-lane signed multiply-accumulate over packed int8 sub-words.

    Returns acc + sum(a_i * b_i) with int32 wraparound.  Counts as eight
    operations (4 mul + 4 add) in throughput accounting.
    """
    total = s32(acc)
    for lane in range(4):
        total += sx8(a >> (8 * lane)) * sx8(b >> (8 * lane))
    return u32(total)
