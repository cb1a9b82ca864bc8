import pytest

from nxcgra.engine import EngineError, Machine, MachineStatus, barrier_status, run, step
from nxcgra.isa import Width

from conftest import machine_from_asm


def test_all_eoe_completes_at_cycle_1():
    m = machine_from_asm(".core 0,0\neoe\n")
    m, trace, ctr = run(m, 10)
    assert m.status == MachineStatus.DONE
    assert m.cycle == 1
    assert ctr.ops_total == 0


def test_three_hop_relay_arrives_after_exactly_three_cycles():
    # (0,0) emits at cycle 1; hops (0,1), (0,2) relay; (0,3) can read the
    # value at cycle 4 = emission + 3 hops, and not one cycle earlier.
    src = """
.core 0,0
.const 0x1234
or t1, c0, c0          ; cycle 0
move e <- t1           ; cycle 1: emission
eoe
.core 0,1
nop
nop
move e <- w            ; cycle 2: hop 2
eoe
.core 0,2
nop
nop
nop
move e <- w            ; cycle 3: hop 3
eoe
.core 0,3
nop
nop
nop
or t5, w, w            ; cycle 3: too early, must still read 0
or t6, w, w            ; cycle 4: arrival
eoe
"""
    m = machine_from_asm(src)
    m, _, _ = run(m, 20)
    assert m.status == MachineStatus.DONE
    sink = m.fabric.core_at((0, 3))
    assert sink.temps[5] == 0
    assert sink.temps[6] == 0x1234


def test_barrier_releases_all_on_last_arrival():
    # one core reaches the barrier at cycle 2, the other at cycle 6;
    # both release at cycle 6 and execute their next word at cycle 7.
    src = """
.core 0,0
nop
nop
jump 3 bar 7
or t1, c0, c0
eoe
.const 1
.core 1,0
nop
nop
nop
nop
nop
nop
jump 7 bar 7
or t1, c0, c0
eoe
.const 1
"""
    m = machine_from_asm(src, trace=True)
    m, trace, _ = run(m, 50)
    assert m.status == MachineStatus.DONE
    releases = [e for e in trace if e.kind == "barrier_release"]
    assert {e.coord for e in releases} == {(0, 0), (1, 0)}
    assert {e.cycle for e in releases} == {6}
    waits = [e for e in trace if e.kind == "barrier_wait"]
    assert {e.cycle for e in waits} == {2, 3, 4, 5}
    # barrier safety: the post-barrier word never executes before cycle 7
    for e in trace:
        if e.coord == (0, 0) and e.kind == "exec" and e.detail == "pc=3":
            assert e.cycle == 7


def test_barrier_status_inspection():
    src = """
.core 0,0
jump 1 bar 3
eoe
.core 0,1
nop
nop
jump 3 bar 3
eoe
.core 0,2
nop
nop
nop
nop
jump 5 bar 3
eoe
"""
    m = machine_from_asm(src)
    state, waiting = barrier_status(m, 3)
    assert state == "incomplete" and waiting == set()
    step(m)  # cycle 0: first core arrives
    state, waiting = barrier_status(m, 3)
    assert state == "incomplete" and waiting == {(0, 0)}
    for _ in range(2):
        step(m)
    state, waiting = barrier_status(m, 3)
    assert state == "incomplete" and waiting == {(0, 0), (0, 1)}
    for _ in range(2):
        step(m)
    state, waiting = barrier_status(m, 3)
    assert state == "released" and waiting == set()
    with pytest.raises(EngineError, match="never referenced"):
        barrier_status(m, 9)


def test_unsatisfiable_cjump_spin_deadlocks():
    src = """
.core 0,0
spin: cjump t0, 0
jump 0
"""
    # t0 stays 0 so the fall-through jumps back forever
    src = """
.core 0,0
spin: nop
jump spin
"""
    m = machine_from_asm(src)
    m, _, _ = run(m, 200)
    assert m.status == MachineStatus.DEADLOCKED
    assert m.cycle == 200


def test_cjump_loops_while_nonzero():
    src = """
.core 0,0
.const 3
.const 1
or t1, c0, c0          ; t1 = 3
loop: sub t1, t1, c1 | cjump t1, 1
eoe
"""
    m = machine_from_asm(src)
    m, _, ctr = run(m, 100)
    assert m.status == MachineStatus.DONE
    # the condition reads the pre-decrement value, so a counter seeded with
    # N-1 runs the body N times and exits at -1 (builders rely on this)
    assert m.fabric.core_at((0, 0)).temps[1] == 0xFFFFFFFF
    assert ctr.unit_instrs["alu32"] == 1 + 4


def test_memory_stall_replays_whole_word():
    # both MOBs load from bank 0 in the same cycle; the row-1 MOB stalls
    # once, and its move slot replays with the word
    src = """
.core 0,4
.const 0x0
ld t1, c0
eoe
.core 1,4
.const 0x20
ld t2, c0 | move w <- c0
eoe
"""
    m = machine_from_asm(src)
    m.memory.write(0x0, Width.W32, 111)
    m.memory.write(0x20, Width.W32, 222)
    m, _, ctr = run(m, 50)
    assert m.status == MachineStatus.DONE
    assert ctr.mem_stalls == 1
    assert ctr.mem_grants == 2
    assert m.fabric.core_at((0, 4)).temps[1] == 111
    assert m.fabric.core_at((1, 4)).temps[2] == 222


def test_load_latency_two_cycles():
    src = """
.core 0,4
.const 0x40
ld t1, c0              ; granted cycle 0, readable cycle 2
nop
nop
eoe
"""
    m = machine_from_asm(src)
    m.memory.write(0x40, Width.W32, 77)
    core = m.fabric.core_at((0, 4))
    step(m)                      # cycle 0: grant
    assert core.temps[1] == 0
    step(m)                      # cycle 1: reply lands at end of cycle
    assert core.temps[1] == 77   # readable from cycle 2 on


def test_sleep_wakes_on_arriving_move():
    src = """
.core 0,0
nop
nop
nop
move e <- c0
eoe
.const 5
.core 0,1
sleep                  ; cycle 0: parks
or t1, w, w            ; resumes the cycle after the wake
eoe
"""
    m = machine_from_asm(src, trace=True)
    m, trace, ctr = run(m, 30)
    assert m.status == MachineStatus.DONE
    assert m.fabric.core_at((0, 1)).temps[1] == 5
    wakes = [e for e in trace if e.kind == "wake"]
    assert wakes and wakes[0].coord == (0, 1)
    assert ctr.sleep_cycles >= 2


def test_wake_pending_prevents_lost_wakeup():
    # the move lands the same cycle the receiver would sleep; the sleep
    # consumes the pending wake instead of parking forever
    src = """
.core 0,0
move e <- c0
eoe
.const 9
.core 0,1
sleep
or t1, w, w
eoe
"""
    m = machine_from_asm(src)
    m, _, _ = run(m, 30)
    assert m.status == MachineStatus.DONE
    assert m.fabric.core_at((0, 1)).temps[1] == 9


def test_fault_reports_offender():
    src = """
.core 0,0
ld t0, c0
eoe
"""
    m = machine_from_asm(src)
    m, _, _ = run(m, 10)
    assert m.status == MachineStatus.FAULTED
    assert "unit not present" in m.fault_msg


def test_determinism_byte_identical_traces():
    src = """
.core 0,0
.const 10
.const 1
or t1, c0, c0
loop: sub t1, t1, c1 | move e <- t1 | cjump t1, 1
eoe
.core 0,1
nop
nop
or t2, w, w
or t3, w, w
eoe
.core 1,4
.const 0x80
ld t1, c0
st.w32 t1, c0
eoe
"""
    lines = []
    for _ in range(2):
        m = machine_from_asm(src, trace=True)
        m, trace, _ = run(m, 100)
        lines.append("\n".join(e.line() for e in trace))
    assert lines[0] == lines[1]


def test_ops_per_cycle_ceiling_is_reachable_not_exceedable():
    # every PE issues a MAC4 in the same cycle: 16 x 8 = 128 ops
    parts = []
    for r in range(4):
        for c in range(4):
            parts.append(f".core {r},{c}\nmac4 t1, t2, t3\neoe\n")
    m = machine_from_asm("".join(parts))
    m, _, ctr = run(m, 10)
    assert m.status == MachineStatus.DONE
    assert ctr.max_ops_cycle == 128
    assert ctr.max_compute_slots_cycle == 16
    assert ctr.ops_total == 128


def test_counters_export_roundtrip():
    m = machine_from_asm(".core 0,0\nadd t1, t2, t3\neoe\n")
    m, _, ctr = run(m, 10)
    text = ctr.to_text()
    parsed = ctr.from_text(text)
    assert parsed["ops_total"] == 1
    assert parsed["cycles"] == m.cycle
