import random

import pytest

from nxcgra.assembler import assemble
from nxcgra.engine import Machine
from nxcgra.fabric import ContextImage, ContextSection, Fabric, FabricConfig, load_context
from nxcgra.isa import (
    ComputeOp, ControlOp, CtrlKind, LSU_OPCODES, MicrocodeWord, MoveOp,
    OPERAND_ZERO, OpKind, Opcode, Operand, RegisterFileSpec, UNARY_OPCODES,
    Width, opcode_widths,
)

RF = RegisterFileSpec()


def random_operand(rng, allow_agu=False):
    kinds = [OpKind.TEMP, OpKind.CONST, OpKind.PORT]
    if allow_agu:
        kinds.append(OpKind.AGU)
    k = rng.choice(kinds)
    if k == OpKind.PORT:
        return Operand(k, rng.randrange(4))
    return Operand(k, rng.randrange(16))


def random_compute(rng):
    opcode = rng.choice(list(Opcode))
    width = rng.choice(sorted(opcode_widths(opcode)))
    dst = rng.randrange(RF.temp_depth)
    if opcode in LSU_OPCODES:
        a = random_operand(rng, allow_agu=True)
        b = random_operand(rng) if opcode == Opcode.STORE else OPERAND_ZERO
        if opcode != Opcode.STORE:
            return ComputeOp(opcode, dst=dst, a=a, width=width)
        return ComputeOp(opcode, dst=0, a=a, b=b, width=width)
    a = random_operand(rng)
    b = OPERAND_ZERO if opcode in UNARY_OPCODES else random_operand(rng)
    return ComputeOp(opcode, dst=dst, a=a, b=b, width=width)


def random_control(rng):
    kind = rng.choice(list(CtrlKind))
    if kind == CtrlKind.JUMP:
        barrier = rng.randrange(15) if rng.random() < 0.3 else None
        return ControlOp.jump(rng.randrange(RF.instr_depth), barrier)
    if kind == CtrlKind.CJUMP:
        return ControlOp.cjump(rng.randrange(RF.temp_depth), rng.randrange(RF.instr_depth))
    return ControlOp(kind)


def random_word(rng) -> MicrocodeWord:
    compute = random_compute(rng) if rng.random() < 0.7 else None
    moves = tuple(MoveOp(d, random_operand(rng))
                  for d in rng.sample(range(4), rng.randrange(5)))
    return MicrocodeWord(compute, moves, random_control(rng))


def machine_from_asm(src: str, fill_eoe: bool = True, trace: bool = False,
                     capacity: int = 1 << 20, config: FabricConfig | None = None,
                     mem_cfg=None) -> Machine:
    """Assemble a program and build a ready-to-run machine.  Cores the source
    does not mention get a bare `eoe` so the run can finish."""
    cfg = config or FabricConfig()
    image = assemble(src, cfg.rf)
    if fill_eoe:
        named = {s.coord for s in image.sections}
        extra = [ContextSection(c, (MicrocodeWord(control=ControlOp.eoe()),))
                 for c in cfg.coords() if c not in named]
        image = ContextImage(image.sections + tuple(extra))
    fab = Fabric(cfg)
    load_context(image, fab, capacity)
    return Machine(fab, mem_cfg=mem_cfg, trace=trace)


@pytest.fixture
def rng():
    return random.Random(0xC6A)
