"""Microcode builder for the general matrix multiply benchmark.

Eight lanes each own four rows of C.  A lane's MOB streams an interleaved
sequence of packed operand words -- a column group of B (four k-values of
one column, prepared column-major by the loader) alternating with the
matching row group of A -- and the PE folds each pair with one fused MAC.
The outer iteration o = 0..127 walks (column j = o>>2, row 4L + (o&3));
each output takes 16 MAC4s over the 64-deep inner dimension.

Everything is statically timed: the PE consumes operands off its input
port on the exact cycles the MOB latches them (43-cycle blocks, four
values per five cycles), and all of a lane's traffic stays in its own
bank, so no request ever stalls.  The MOB pipeline is primed with four
loads and runs four values ahead of its moves throughout.
"""

from __future__ import annotations

import numpy as np

from ..fabric import FabricConfig
from .lanes import Arena, BuildError, CoreAsm, KernelProgram, build_phase, lane_link

__all__ = ["build_gemm", "GEMM_NOMINAL_OPS"]

GEMM_NOMINAL_OPS = 2 * 32 * 64 * 32  # one MAC counts as two operations

_OUTPUTS_PER_LANE = 128  # 4 rows x 32 columns
_STREAM_WORDS = 32 * _OUTPUTS_PER_LANE  # (bt, a) pairs, 16 k-groups each
_PRIME = 4              # MOB runs four loads ahead of its moves


def _pack_rows(mat8: np.ndarray) -> np.ndarray:
    """Pack int8 rows into little-endian 4-lane words: out[r, kw]."""
    rows, cols = mat8.shape
    u = np.ascontiguousarray(mat8, dtype=np.int8).view(np.uint8)
    u = u.reshape(rows, cols // 4, 4).astype(np.uint32)
    return u[:, :, 0] | (u[:, :, 1] << 8) | (u[:, :, 2] << 16) | (u[:, :, 3] << 24)


def build_gemm(a: np.ndarray, b: np.ndarray,
               cfg: FabricConfig | None = None) -> KernelProgram:
    cfg = cfg or FabricConfig()
    arena = Arena(base=0)

    # per-lane arena regions (identical layout in every lane's bank)
    w_stream = arena.alloc(0, _STREAM_WORDS + _PRIME)
    w_ctr_outer = arena.alloc(0, _OUTPUTS_PER_LANE)
    w_ctr_inner = arena.alloc(0, 4 * _OUTPUTS_PER_LANE)
    w_c = arena.alloc(0, 1 + _OUTPUTS_PER_LANE)  # scratch word, then outputs
    for lane in range(1, 8):
        for region, size in ((w_stream, _STREAM_WORDS + _PRIME),
                             (w_ctr_outer, _OUTPUTS_PER_LANE),
                             (w_ctr_inner, 4 * _OUTPUTS_PER_LANE),
                             (w_c, 1 + _OUTPUTS_PER_LANE)):
            if arena.alloc(lane, size) != region:
                raise BuildError("lane arena layouts diverged")

    sources = []
    for lane in range(8):
        link = lane_link(lane)

        pe = CoreAsm(link.pe, cfg.rf.instr_depth, cfg.rf.const_depth)
        p = link.pe_from_mob
        cjc = pe.const(_OUTPUTS_PER_LANE - 1)
        ckc = pe.const(7)
        c1 = pe.const(1)
        pe.word(f"or t15, {cjc}, {cjc}")          # outer counter, cycle 0
        pe.nops(4)                                # loop starts at cycle 5
        pe.word("xor t0, t0, t0", label="outer")  # accumulator
        pe.word(f"or t14, {ckc}, {ckc}")          # inner counter: 8 pair-steps
        pe.word(f"or t1, {p}, {p}", label="inner")      # B group
        pe.word(f"mac4 t0, {p}, t1")                    # A group folds in
        pe.word(f"or t2, {p}, {p}")
        pe.word(f"mac4 t0, {p}, t2")
        pe.word(f"sub t14, t14, {c1} | cjump t14, inner")
        pe.word(f"sub t15, t15, {c1} | move {link.pe_to_mob} <- t0 "
                f"| cjump t15, outer")
        pe.word("eoe")

        mob = CoreAsm(link.mob, cfg.rf.instr_depth, cfg.rf.const_depth)
        g0 = mob.agu(arena.addr(lane, w_stream), 32, _STREAM_WORDS + _PRIME)
        g1 = mob.agu(arena.addr(lane, w_ctr_outer), 32, _OUTPUTS_PER_LANE)
        g2 = mob.agu(arena.addr(lane, w_c), 32, 1 + _OUTPUTS_PER_LANE)
        g3 = mob.agu(arena.addr(lane, w_ctr_inner), 32, 4 * _OUTPUTS_PER_LANE)
        d = link.mob_to_pe
        q = link.mob_from_pe
        for t in (4, 5, 6, 7):                    # prime the move pipeline
            mob.word(f"ld t{t}, {g0}")
        mob.word(f"ld t9, {g1}", label="loop")    # outer countdown
        mob.word(f"st.w32 {q}, {g2}")             # previous output (scratch first)
        mob.word(f"ld t0, {g0} | move {d} <- t4", label="iloop")
        mob.word(f"ld t1, {g0} | move {d} <- t5")
        mob.word(f"ld t2, {g0} | move {d} <- t6")
        mob.word(f"ld t3, {g0} | move {d} <- t7")
        mob.word(f"ld t8, {g3}")                  # inner countdown
        mob.word(f"ld t4, {g0} | move {d} <- t0")
        mob.word(f"ld t5, {g0} | move {d} <- t1")
        mob.word(f"ld t6, {g0} | move {d} <- t2")
        mob.word(f"ld t7, {g0} | move {d} <- t3")
        mob.word("cjump t8, iloop")
        mob.word("cjump t9, loop")
        mob.word("nop")
        mob.word(f"st.w32 {q}, {g2}")             # final output
        mob.word("eoe")

        sources.append(pe.source())
        sources.append(mob.source())

    phase = build_phase("gemm", cfg, sources)

    a_np = np.asarray(a, dtype=np.int8)
    b_np = np.asarray(b, dtype=np.int8)

    def stage(mem):
        a_words = _pack_rows(a_np)           # [32 rows][16 kw]
        bt_words = _pack_rows(b_np.T.copy()) # [32 cols][16 kw]
        ctr_outer = np.arange(_OUTPUTS_PER_LANE - 1, -1, -1)
        ctr_inner = np.tile(np.arange(3, -1, -1), _OUTPUTS_PER_LANE)
        for lane in range(8):
            stream = np.zeros(_STREAM_WORDS + _PRIME, dtype=np.uint32)
            for o in range(_OUTPUTS_PER_LANE):
                j = o >> 2
                row = 4 * lane + (o & 3)
                seg = stream[32 * o:32 * o + 32]
                seg[0::2] = bt_words[j]
                seg[1::2] = a_words[row]
            arena.write_words(mem, lane, w_stream, stream)
            arena.write_words(mem, lane, w_ctr_outer, ctr_outer)
            arena.write_words(mem, lane, w_ctr_inner, ctr_inner)

    def readback(mem, fabric):
        c = np.zeros((32, 32), dtype=np.int32)
        for lane in range(8):
            words = arena.read_words(mem, lane, w_c + 1, _OUTPUTS_PER_LANE)
            vals = words.astype(np.uint32).astype(np.int64)
            vals[vals >= 1 << 31] -= 1 << 32
            for o in range(_OUTPUTS_PER_LANE):
                c[4 * lane + (o & 3), o >> 2] = vals[o]
        return {"out": c}

    return KernelProgram("gemm", stage, readback, GEMM_NOMINAL_OPS,
                         merged=phase, max_cycles=20_000)
