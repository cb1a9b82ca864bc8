"""Text microcode assembler and disassembler.

Grammar (one 64-bit word per line, clauses separated by `|`):

    [label:] [compute] [| move DIR <- SRC]* [| control]

    .core R,C          start the section for core (row, col)
    .const VALUE       append a constant-RF entry (c0, c1, ... in order)
    .agu BASE STRIDE_I COUNT_I [STRIDE_O COUNT_O]
                       append an address-generator descriptor (g0, g1, ...)
    ; comment          anywhere to end of line

Compute clauses: `MN[.w8|.w16|.w32] tD, A[, B]` where operands are
t0..t15 (temp RF), c0..c15 (constant RF), n/e/s/w (input ports) and, for
load/store addresses only, g0.. (AGU streams).  Loads are `ld`/`lds`
(zero-/sign-extending): `ld tD, ADDR`.  Stores are `st DATA, ADDR`.
MAC4 accumulates into its destination: `mac4 tD, A, B` performs
tD += sum(A_i * B_i) over four int8 lanes.

Control clauses: `jump TARGET [bar N]`, `cjump tC, TARGET`, `sleep`,
`eoe`, `nop`.  TARGET is a label or an instruction index.  A bare `nop`
line assembles to the all-zero word.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .fabric import ContextImage, ContextSection
from .isa import (
    ComputeOp, ControlOp, CtrlKind, DIR_NAMES, EncodeError, MicrocodeWord,
    MoveOp, OpKind, Opcode, Operand, RegisterFileSpec, UNARY_OPCODES, Width,
    validate_word,
)
from .memory import AGUState

__all__ = ["AssembleError", "assemble", "disassemble"]


class AssembleError(Exception):
    pass


_COMPUTE_MNEMONICS: dict[str, Opcode] = {
    "and": Opcode.AND, "or": Opcode.OR, "xor": Opcode.XOR, "not": Opcode.NOT,
    "sll": Opcode.SLL, "srl": Opcode.SRL, "sra": Opcode.SRA,
    "cmpeq": Opcode.CMP_EQ, "cmplt": Opcode.CMP_LT, "cmpltu": Opcode.CMP_LTU,
    "add": Opcode.ADD, "sub": Opcode.SUB, "muls32": Opcode.MULS32,
    "masksub": Opcode.MASKSUB, "pack": Opcode.PACK, "unpack": Opcode.UNPACK,
    "divs32": Opcode.DIVS32, "divu32": Opcode.DIVU32, "mulu16": Opcode.MULU16,
    "mulu8": Opcode.MULU8, "mac4": Opcode.MAC4, "sat8": Opcode.SAT8,
    "div8": Opcode.DIV8, "ld": Opcode.LOAD, "lds": Opcode.LOAD_SIGNED,
    "st": Opcode.STORE,
}
_OPCODE_MNEMONIC = {v: k for k, v in _COMPUTE_MNEMONICS.items()}
_CONTROL_MNEMONICS = {"nop", "jump", "cjump", "sleep", "eoe"}
_WIDTH_SUFFIX = {"w8": Width.W8, "w16": Width.W16, "w32": Width.W32}
_MULTI_WIDTH = {Opcode.PACK, Opcode.UNPACK, Opcode.MASKSUB,
                Opcode.LOAD, Opcode.LOAD_SIGNED, Opcode.STORE}


def _parse_int(tok: str, ln: int, what: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AssembleError(f"bad {what} {tok!r} at line {ln}") from None


def _parse_operand(tok: str, ln: int) -> Operand:
    tok = tok.strip()
    if tok in DIR_NAMES:
        return Operand.port(DIR_NAMES.index(tok))
    if len(tok) >= 2 and tok[0] in "tcg" and tok[1:].isdigit():
        idx = int(tok[1:])
        kind = {"t": OpKind.TEMP, "c": OpKind.CONST, "g": OpKind.AGU}[tok[0]]
        return Operand(kind, idx)
    raise AssembleError(f"bad operand {tok!r} at line {ln}")


def _parse_temp(tok: str, ln: int) -> int:
    tok = tok.strip()
    if tok.startswith("t") and tok[1:].isdigit():
        return int(tok[1:])
    raise AssembleError(f"expected temp register, got {tok!r} at line {ln}")


@dataclass
class _PendingWord:
    line: int
    compute: ComputeOp | None = None
    moves: list[MoveOp] = field(default_factory=list)
    ctrl_kind: CtrlKind = CtrlKind.NOP
    ctrl_target: str | None = None  # label or number, resolved later
    ctrl_cond: int = 0
    ctrl_barrier: int | None = None


@dataclass
class _Section:
    coord: tuple[int, int]
    start_line: int
    words: list[_PendingWord] = field(default_factory=list)
    consts: list[int] = field(default_factory=list)
    agus: list[AGUState] = field(default_factory=list)
    labels: dict[str, int] = field(default_factory=dict)


def _parse_compute(tokens: list[str], ln: int) -> ComputeOp:
    head = tokens[0]
    mn, _, sfx = head.partition(".")
    opcode = _COMPUTE_MNEMONICS.get(mn)
    if opcode is None:
        raise AssembleError(f"unknown mnemonic {mn!r} at line {ln}")
    width = None
    if sfx:
        if sfx not in _WIDTH_SUFFIX:
            raise AssembleError(f"bad width suffix {sfx!r} at line {ln}")
        width = _WIDTH_SUFFIX[sfx]
    args = [a.strip() for a in " ".join(tokens[1:]).split(",") if a.strip()]
    if opcode == Opcode.STORE:
        if len(args) != 2:
            raise AssembleError(f"st takes DATA, ADDR at line {ln}")
        return ComputeOp(opcode, dst=0, a=_parse_operand(args[1], ln),
                         b=_parse_operand(args[0], ln), width=width)
    if opcode in (Opcode.LOAD, Opcode.LOAD_SIGNED):
        if len(args) != 2:
            raise AssembleError(f"{mn} takes tD, ADDR at line {ln}")
        return ComputeOp(opcode, dst=_parse_temp(args[0], ln),
                         a=_parse_operand(args[1], ln), width=width)
    if opcode in UNARY_OPCODES:
        if len(args) != 2:
            raise AssembleError(f"{mn} takes tD, A at line {ln}")
        return ComputeOp(opcode, dst=_parse_temp(args[0], ln),
                         a=_parse_operand(args[1], ln), width=width)
    if len(args) != 3:
        raise AssembleError(f"{mn} takes tD, A, B at line {ln}")
    return ComputeOp(opcode, dst=_parse_temp(args[0], ln),
                     a=_parse_operand(args[1], ln),
                     b=_parse_operand(args[2], ln), width=width)


def _parse_line(body: str, ln: int) -> _PendingWord:
    word = _PendingWord(ln)
    for clause in (c.strip() for c in body.split("|")):
        if not clause:
            raise AssembleError(f"empty clause at line {ln}")
        tokens = clause.split()
        head = tokens[0]
        if head == "move":
            # move DIR <- SRC
            rest = clause[4:].replace("<-", " ").split()
            if len(rest) != 2 or rest[0] not in DIR_NAMES:
                raise AssembleError(f"bad move clause {clause!r} at line {ln}")
            d = DIR_NAMES.index(rest[0])
            if any(m.direction == d for m in word.moves):
                raise AssembleError(f"duplicate move direction {rest[0]!r} at line {ln}")
            word.moves.append(MoveOp(d, _parse_operand(rest[1], ln)))
        elif head in _CONTROL_MNEMONICS:
            if word.ctrl_kind != CtrlKind.NOP or word.ctrl_target is not None:
                raise AssembleError(f"multiple control clauses at line {ln}")
            if head == "nop":
                pass
            elif head == "sleep":
                word.ctrl_kind = CtrlKind.SLEEP
            elif head == "eoe":
                word.ctrl_kind = CtrlKind.EOE
            elif head == "jump":
                word.ctrl_kind = CtrlKind.JUMP
                if len(tokens) == 2:
                    word.ctrl_target = tokens[1]
                elif len(tokens) == 4 and tokens[2] == "bar":
                    word.ctrl_target = tokens[1]
                    word.ctrl_barrier = _parse_int(tokens[3], ln, "barrier id")
                else:
                    raise AssembleError(f"jump takes TARGET [bar N] at line {ln}")
            else:  # cjump
                args = [a.strip() for a in " ".join(tokens[1:]).split(",") if a.strip()]
                if len(args) != 2:
                    raise AssembleError(f"cjump takes tC, TARGET at line {ln}")
                word.ctrl_kind = CtrlKind.CJUMP
                word.ctrl_cond = _parse_temp(args[0], ln)
                word.ctrl_target = args[1]
        else:
            if word.compute is not None:
                raise AssembleError(f"multiple compute clauses at line {ln}")
            if word.moves or word.ctrl_kind != CtrlKind.NOP:
                raise AssembleError(f"compute clause must come first at line {ln}")
            word.compute = _parse_compute(tokens, ln)
    return word


def assemble(text: str, rf: RegisterFileSpec = RegisterFileSpec()) -> ContextImage:
    """Assemble `.nxasm` source into a context image."""
    sections: list[_Section] = []
    cur: _Section | None = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith(".core"):
            args = line[5:].replace(",", " ").split()
            if len(args) != 2:
                raise AssembleError(f".core takes ROW, COL at line {ln}")
            coord = (_parse_int(args[0], ln, "row"), _parse_int(args[1], ln, "col"))
            if any(s.coord == coord for s in sections):
                raise AssembleError(f"duplicate .core {coord} at line {ln}")
            cur = _Section(coord, ln)
            sections.append(cur)
            continue
        if cur is None:
            raise AssembleError(f"statement before any .core at line {ln}")
        if line.startswith(".const"):
            cur.consts.append(_parse_int(line[6:].strip(), ln, "constant") & 0xFFFFFFFF)
            continue
        if line.startswith(".agu"):
            args = line[4:].split()
            if len(args) not in (3, 5):
                raise AssembleError(
                    f".agu takes BASE STRIDE_I COUNT_I [STRIDE_O COUNT_O] at line {ln}")
            vals = [_parse_int(a, ln, "agu field") for a in args]
            if len(vals) == 3:
                cur.agus.append(AGUState(vals[0], vals[1], vals[2]))
            else:
                cur.agus.append(AGUState(vals[0], vals[1], vals[2], vals[3], vals[4]))
            continue
        if line.startswith("."):
            raise AssembleError(f"unknown directive {line.split()[0]!r} at line {ln}")
        # optional label prefix
        head = line.split(None, 1)[0]
        if head.endswith(":"):
            label = head[:-1]
            if not label.isidentifier():
                raise AssembleError(f"bad label {label!r} at line {ln}")
            if label in cur.labels:
                raise AssembleError(f"duplicate label {label!r} at line {ln}")
            cur.labels[label] = len(cur.words)
            line = line[len(head):].strip()
            if not line:
                raise AssembleError(f"label without a word at line {ln}")
        cur.words.append(_parse_line(line, ln))

    out_sections = []
    for sec in sections:
        if len(sec.words) > rf.instr_depth:
            raise AssembleError(
                f"RF overflow in core {sec.coord}: {len(sec.words)} words exceed "
                f"instruction depth {rf.instr_depth} (section at line {sec.start_line})")
        if len(sec.consts) > rf.const_depth:
            raise AssembleError(
                f"RF overflow in core {sec.coord}: {len(sec.consts)} constants exceed "
                f"depth {rf.const_depth} (section at line {sec.start_line})")
        words = []
        for pw in sec.words:
            target = 0
            if pw.ctrl_target is not None:
                t = pw.ctrl_target
                if t in sec.labels:
                    target = sec.labels[t]
                elif t.lstrip("-").isdigit():
                    # numeric targets may point anywhere in the (NOP-padded)
                    # instruction RF, not only at written words
                    target = int(t)
                else:
                    raise AssembleError(f"unresolved target {t!r} at line {pw.line}")
                if not 0 <= target < rf.instr_depth:
                    raise AssembleError(
                        f"target {target} outside the instruction RF at line {pw.line}")
            if pw.ctrl_kind == CtrlKind.CJUMP:
                ctrl = ControlOp(CtrlKind.CJUMP, target=target, cond=pw.ctrl_cond)
            elif pw.ctrl_kind == CtrlKind.JUMP:
                ctrl = ControlOp(CtrlKind.JUMP, target=target, barrier=pw.ctrl_barrier)
            else:
                ctrl = ControlOp(pw.ctrl_kind)
            w = MicrocodeWord(pw.compute, tuple(pw.moves), ctrl)
            try:
                validate_word(w, rf)
            except EncodeError as exc:
                raise AssembleError(f"{exc} at line {pw.line}") from exc
            words.append(w)
        out_sections.append(ContextSection(sec.coord, tuple(words),
                                           tuple(sec.consts), tuple(sec.agus)))
    return ContextImage(tuple(out_sections))


# ── disassembly ──────────────────────────────────────────────────────


def _fmt_operand(sel: Operand) -> str:
    if sel.kind == OpKind.TEMP:
        return f"t{sel.index}"
    if sel.kind == OpKind.CONST:
        return f"c{sel.index}"
    if sel.kind == OpKind.PORT:
        return DIR_NAMES[sel.index]
    return f"g{sel.index}"


def _fmt_compute(c: ComputeOp) -> str:
    mn = _OPCODE_MNEMONIC[c.opcode]
    if c.opcode in _MULTI_WIDTH:
        mn += "." + ("w8", "w16", "w32")[int(c.width)]
    if c.opcode == Opcode.STORE:
        return f"{mn} {_fmt_operand(c.b)}, {_fmt_operand(c.a)}"
    if c.opcode in (Opcode.LOAD, Opcode.LOAD_SIGNED):
        return f"{mn} t{c.dst}, {_fmt_operand(c.a)}"
    if c.opcode in UNARY_OPCODES:
        return f"{mn} t{c.dst}, {_fmt_operand(c.a)}"
    return f"{mn} t{c.dst}, {_fmt_operand(c.a)}, {_fmt_operand(c.b)}"


def _fmt_word(w: MicrocodeWord) -> str:
    clauses = []
    if w.compute is not None:
        clauses.append(_fmt_compute(w.compute))
    for m in sorted(w.moves, key=lambda m: m.direction):
        clauses.append(f"move {DIR_NAMES[m.direction]} <- {_fmt_operand(m.source)}")
    ct = w.control
    if ct.kind == CtrlKind.JUMP:
        clauses.append(f"jump {ct.target}" +
                       (f" bar {ct.barrier}" if ct.barrier is not None else ""))
    elif ct.kind == CtrlKind.CJUMP:
        clauses.append(f"cjump t{ct.cond}, {ct.target}")
    elif ct.kind == CtrlKind.SLEEP:
        clauses.append("sleep")
    elif ct.kind == CtrlKind.EOE:
        clauses.append("eoe")
    if not clauses:
        return "nop"
    return " | ".join(clauses)


def disassemble(image: ContextImage) -> str:
    """Render an image as canonical source; assembling it reproduces the
    image byte for byte."""
    lines = []
    for sec in image.sections:
        lines.append(f".core {sec.coord[0]},{sec.coord[1]}")
        for v in sec.consts:
            lines.append(f".const {v:#x}")
        for a in sec.agus:
            if a.stride_outer == 0 and a.count_outer == 1:
                lines.append(f".agu {a.base:#x} {a.stride_inner} {a.count_inner}")
            else:
                lines.append(f".agu {a.base:#x} {a.stride_inner} {a.count_inner} "
                             f"{a.stride_outer} {a.count_outer}")
        for w in sec.words:
            lines.append(_fmt_word(w))
        lines.append("")
    return "\n".join(lines)
