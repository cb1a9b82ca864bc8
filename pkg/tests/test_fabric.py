import pytest

from nxcgra.fabric import (
    ContextImage, ContextSection, ContextOverflowError, CoreKind, Fabric,
    FabricConfig, FabricError, load_context, neighbor, step_core,
)
from nxcgra.isa import (
    ComputeOp, ControlOp, MicrocodeWord, MoveOp, OPPOSITE, Opcode, Operand,
)
from nxcgra.memory import AGUState

from conftest import random_word

CFG = FabricConfig()


def test_default_geometry():
    assert CFG.n_cores == 24
    assert len(CFG.pe_coords()) == 16
    assert len(CFG.mob_coords()) == 8
    assert CFG.total_macs == 64
    assert CFG.kind_at((0, 0)) == CoreKind.PE
    assert CFG.kind_at((3, 5)) == CoreKind.MOB


def test_neighbor_wraps():
    assert neighbor(CFG, (0, 0), 3) == (0, 5)   # W wraps the column
    assert neighbor(CFG, (3, 2), 2) == (0, 2)   # S wraps the row
    assert neighbor(CFG, (0, 0), 0) == (3, 0)
    assert neighbor(CFG, (0, 5), 1) == (0, 0)


def test_neighbor_inverse_property():
    for r in range(CFG.rows):
        for c in range(CFG.cols):
            for d in range(4):
                assert neighbor(CFG, neighbor(CFG, (r, c), d), OPPOSITE[d]) == (r, c)


def test_neighbor_rejects_bad_coord():
    with pytest.raises(FabricError, match="invalid coord"):
        neighbor(CFG, (5, 0), 0)


# ── context loading ──────────────────────────────────────────────────

def test_empty_image_loads():
    fab = Fabric()
    load_context(ContextImage(), fab)
    assert all(w == MicrocodeWord() for w in fab.core_at((1, 1)).instr)


def test_load_is_idempotent(rng):
    words = tuple(random_word(rng) for _ in range(5))
    img = ContextImage((ContextSection((2, 3), words, (7, 8), (AGUState(0, 4, 3),)),))
    fab = Fabric()
    load_context(img, fab)
    snap1 = [(c.pc, list(c.temps), list(c.consts), c.done) for c in fab.cores]
    load_context(img, fab)
    snap2 = [(c.pc, list(c.temps), list(c.consts), c.done) for c in fab.cores]
    assert snap1 == snap2
    assert fab.core_at((2, 3)).consts[:2] == [7, 8]
    assert len(fab.core_at((2, 3)).agus) == 1


def test_context_overflow():
    words = tuple(MicrocodeWord() for _ in range(32))
    sections = tuple(ContextSection(c, words, tuple(range(16)))
                     for c in CFG.coords())
    img = ContextImage(sections)
    assert img.total_bytes > 4096
    with pytest.raises(ContextOverflowError, match="context overflow"):
        load_context(img, Fabric(), 4096)


def test_invalid_coord_rejected():
    img = ContextImage((ContextSection((5, 0), ()),))
    with pytest.raises(FabricError, match="invalid coord"):
        load_context(img, Fabric(), 4096)


def test_rf_overflow_names_core():
    words = tuple(MicrocodeWord() for _ in range(33))
    img = ContextImage((ContextSection((1, 2), words),))
    fab = Fabric()
    with pytest.raises(FabricError, match=r"RF overflow at core \(1, 2\)"):
        load_context(img, fab, 1 << 20)


def test_image_bytes_roundtrip(rng):
    sections = []
    for c in [(0, 0), (1, 4)]:
        words = tuple(random_word(rng) for _ in range(6))
        sections.append(ContextSection(c, words, (1, 2, 3), (AGUState(64, 4, 8, 32, 2),)))
    img = ContextImage(tuple(sections))
    blob = img.to_bytes()
    img2 = ContextImage.from_bytes(blob)
    assert img2.to_bytes() == blob
    assert img2.total_bytes == img.total_bytes


def test_truncated_image():
    blob = ContextImage((ContextSection((0, 0), (MicrocodeWord(),)),)).to_bytes()
    with pytest.raises(FabricError, match="unexpected end of section"):
        ContextImage.from_bytes(blob[:-3])


# ── single-core stepping ─────────────────────────────────────────────

def make_core(words, kind=CoreKind.PE, consts=(), coord=(0, 0)):
    fab = Fabric()
    core = fab.core_at(coord)
    core.kind = kind
    for i, w in enumerate(words):
        core.instr[i] = w
    for i, v in enumerate(consts):
        core.consts[i] = v
    return core


def test_nop_advances_pc_only():
    core = make_core([MicrocodeWord()])
    fx = step_core(core, (0, 0, 0, 0))
    assert fx.new_pc == 1
    assert not fx.temp_writes and not fx.moves and fx.mem is None


def test_move_latches_for_next_cycle():
    w = MicrocodeWord(moves=(MoveOp(1, Operand.temp(3)),))
    core = make_core([w])
    core.temps[3] = 0xDEAD
    fx = step_core(core, (0, 0, 0, 0))
    assert fx.moves == [(1, 0xDEAD)]
    # ports only change when the engine commits the effects
    assert core.out_ports == [0, 0, 0, 0]


def test_eoe_freezes_pc():
    core = make_core([MicrocodeWord(control=ControlOp.eoe())])
    fx = step_core(core, (0, 0, 0, 0))
    assert fx.done and fx.new_pc == 0


def test_unit_not_present_faults():
    lsu = MicrocodeWord(ComputeOp(Opcode.LOAD, dst=0, a=Operand.const(0)))
    core = make_core([lsu], kind=CoreKind.PE)
    fx = step_core(core, (0, 0, 0, 0))
    assert fx.fault and "unit not present" in fx.fault

    alu = MicrocodeWord(ComputeOp(Opcode.ADD, dst=0))
    mob = make_core([alu], kind=CoreKind.MOB, coord=(0, 4))
    fx = step_core(mob, (0, 0, 0, 0))
    assert fx.fault and "unit not present" in fx.fault


def test_mac4_reads_accumulator_from_dst():
    w = MicrocodeWord(ComputeOp(Opcode.MAC4, dst=2, a=Operand.temp(0), b=Operand.temp(1)))
    core = make_core([w])
    core.temps[0] = 0x01010101
    core.temps[1] = 0x02020202
    core.temps[2] = 100
    fx = step_core(core, (0, 0, 0, 0))
    assert fx.temp_writes == [(2, 108)]
    assert fx.ops == 8
