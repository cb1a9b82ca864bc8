"""Global cycle-level execution loop.

Each step advances every core by one word in lockstep:

  1. step every awake, unfinished core against the previous cycle's
     port latches (out-ports mutate only at commit, so reads are stable);
  2. register barrier arrivals and release barriers whose full
     participant set has arrived (same-cycle release);
  3. arbitrate memory requests (one grant per bank, row-major priority);
  4. commit effects of retiring cores -- a core blocked on a barrier or
     stalled on memory commits nothing and re-executes the same word
     next cycle (whole-word replay);
  5. latch moves, wake sleeping receivers, deliver due load replies.

Barrier participation is static: every core whose program references a
barrier id participates in it, computed when the machine is built.
Loads sample memory at the end of their grant cycle and land in the
destination register so the value is readable `load_latency_cycles`
cycles after the grant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .fabric import CoreKind, Fabric, step_core
from .isa import CtrlKind, DIR_NAMES, OPPOSITE, Unit
from .memory import BankedMemory, MemoryAccessError, MemoryConfig, arbitrate

__all__ = [
    "Machine", "MachineStatus", "CounterSet", "TraceEvent", "EngineError",
    "step", "run", "barrier_status",
]


class EngineError(Exception):
    pass


class MachineStatus(Enum):
    RUNNING = "running"
    DONE = "done"
    DEADLOCKED = "deadlocked"
    FAULTED = "faulted"


@dataclass(frozen=True, slots=True)
class TraceEvent:
    cycle: int
    coord: tuple[int, int]
    kind: str
    detail: str = ""

    def line(self) -> str:
        return f"{self.cycle}\t{self.coord[0]},{self.coord[1]}\t{self.kind}\t{self.detail}"


@dataclass
class CounterSet:
    cycles: int = 0
    ops_total: int = 0            # weighted PE compute ops (MAC4 counts as 8)
    mac4_instrs: int = 0
    moves: int = 0
    mem_grants: int = 0
    mem_stalls: int = 0
    mem_loads: int = 0
    mem_stores: int = 0
    idle_cycles: int = 0          # asleep or finished core-cycles
    sleep_cycles: int = 0
    barrier_waits: int = 0
    max_ops_cycle: int = 0
    max_compute_slots_cycle: int = 0
    unit_instrs: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        items = {k: v for k, v in self.__dict__.items() if k != "unit_instrs"}
        for unit, n in self.unit_instrs.items():
            items[f"unit_{unit}"] = n
        return "".join(f"{k} {v}\n" for k, v in sorted(items.items()))

    @staticmethod
    def from_text(text: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                key, val = line.split()
                out[key] = int(val)
            except ValueError as exc:
                raise EngineError(f"bad counter line {ln}: {line!r}") from exc
        return out


class Machine:
    """One simulated accelerator instance: fabric + memory + control state."""

    def __init__(self, fabric: Fabric, mem_cfg: MemoryConfig | None = None,
                 memory: BankedMemory | None = None, trace: bool = False):
        self.fabric = fabric
        self.mem_cfg = mem_cfg or MemoryConfig()
        self.memory = memory or BankedMemory(self.mem_cfg)
        self.cycle = 0
        self.status = MachineStatus.RUNNING
        self.fault_msg: str | None = None
        self.counters = CounterSet()
        self.trace: list[TraceEvent] | None = [] if trace else None
        self._pending_loads: list[tuple[int, int, int, int]] = []  # due, core, dst, value
        self._pending_stores: list[tuple[int, int, object, int]] = []  # due, addr, width, value
        # static barrier participation: every core whose program names the id
        self.barrier_participants: dict[int, frozenset[tuple[int, int]]] = {}
        by_id: dict[int, set] = {}
        for core in fabric.cores:
            for w in core.instr:
                if w.control.kind == CtrlKind.JUMP and w.control.barrier is not None:
                    by_id.setdefault(w.control.barrier, set()).add(core.coord)
        self.barrier_participants = {k: frozenset(v) for k, v in by_id.items()}
        self.barrier_arrived: dict[int, set] = {k: set() for k in by_id}
        self.barrier_released: set[int] = set()

    # -- helpers ------------------------------------------------------

    def _emit(self, events: list[TraceEvent]) -> None:
        if self.trace is not None and events:
            events.sort(key=lambda e: (e.coord, e.kind, e.detail))
            self.trace.extend(events)

    def all_done(self) -> bool:
        return all(c.done for c in self.fabric.cores)


def step(m: Machine) -> Machine:
    """Advance the machine by exactly one global cycle."""
    if m.status != MachineStatus.RUNNING:
        raise EngineError(f"cannot step a machine in status {m.status.value}")
    fab = m.fabric
    cores = fab.cores
    neighbor_ids = fab.neighbor_ids
    cyc = m.cycle
    ctr = m.counters
    events: list[TraceEvent] = [] if m.trace is not None else None

    # phase A: execute every eligible core against stable port latches
    stepped: list[tuple[int, object]] = []
    for i, core in enumerate(cores):
        if core.done or core.asleep:
            ctr.idle_cycles += 1
            if core.asleep:
                ctr.sleep_cycles += 1
            continue
        nb = neighbor_ids[i]
        inputs = (
            cores[nb[0]].out_ports[2],   # from the north neighbor's S latch
            cores[nb[1]].out_ports[3],   # from the east neighbor's W latch
            cores[nb[2]].out_ports[0],
            cores[nb[3]].out_ports[1],
        )
        fx = step_core(core, inputs)
        if fx.fault:
            m.status = MachineStatus.FAULTED
            m.fault_msg = fx.fault
            if events is not None:
                events.append(TraceEvent(cyc, core.coord, "fault", fx.fault))
                m._emit(events)
            m.cycle += 1
            ctr.cycles += 1
            return m
        stepped.append((i, fx))

    # phase B: barrier arrivals, then same-cycle release
    for i, fx in stepped:
        if fx.barrier is not None:
            bid = fx.barrier
            if bid not in m.barrier_participants:
                m.barrier_participants[bid] = frozenset({cores[i].coord})
                m.barrier_arrived[bid] = set()
            m.barrier_arrived[bid].add(cores[i].coord)
    for bid, arrived in m.barrier_arrived.items():
        if bid not in m.barrier_released and arrived >= m.barrier_participants[bid]:
            m.barrier_released.add(bid)

    blocked: set[int] = set()
    for i, fx in stepped:
        if fx.barrier is not None and fx.barrier not in m.barrier_released:
            blocked.add(i)
            cores[i].waiting_barrier = fx.barrier
            ctr.barrier_waits += 1
            if events is not None:
                events.append(TraceEvent(cyc, cores[i].coord, "barrier_wait", f"id={fx.barrier}"))

    # phase C: arbitration among unblocked requesters
    reqs = [fx.mem for i, fx in stepped if fx.mem is not None and i not in blocked]
    stalled_coords: set = set()
    if reqs:
        try:
            grants, stalled = arbitrate(reqs, m.mem_cfg)
        except MemoryAccessError as exc:
            m.status = MachineStatus.FAULTED
            m.fault_msg = str(exc)
            if events is not None:
                events.append(TraceEvent(cyc, (-1, -1), "fault", str(exc)))
                m._emit(events)
            m.cycle += 1
            ctr.cycles += 1
            return m
        stalled_coords = {r.core for r in stalled}
        ctr.mem_grants += len(grants)
        ctr.mem_stalls += len(stalled)
        if events is not None:
            for r in grants:
                events.append(TraceEvent(cyc, r.core, "mem_grant", f"{r.kind} {r.addr:#x}"))
            for r in stalled:
                events.append(TraceEvent(cyc, r.core, "mem_stall", f"{r.kind} {r.addr:#x}"))

    # phase D: commit effects of retiring cores
    ops_cycle = 0
    slots_cycle = 0
    move_list: list[tuple[int, int, int]] = []
    load_samples: list[tuple[int, object]] = []
    for i, fx in stepped:
        core = cores[i]
        if i in blocked or core.coord in stalled_coords:
            continue
        core.waiting_barrier = None
        if fx.barrier is not None and events is not None:
            events.append(TraceEvent(cyc, core.coord, "barrier_release", f"id={fx.barrier}"))
        executed_pc = core.pc
        for dst, val in fx.temp_writes:
            core.temps[dst] = val
        core.pc = fx.new_pc
        if fx.sleep:
            core.asleep = True
            if events is not None:
                events.append(TraceEvent(cyc, core.coord, "sleep"))
        if fx.wake_consumed:
            core.wake_pending = False
        if fx.done:
            core.done = True
            if events is not None:
                events.append(TraceEvent(cyc, core.coord, "eoe"))
        if fx.op_unit is not None:
            name = fx.op_unit.name.lower()
            ctr.unit_instrs[name] = ctr.unit_instrs.get(name, 0) + 1
            if fx.op_unit != Unit.LSU:
                ctr.ops_total += fx.ops
                ops_cycle += fx.ops
                slots_cycle += 1
                if fx.ops == 8:
                    ctr.mac4_instrs += 1
        if fx.mem is not None:
            r = fx.mem
            if r.agu_stream is not None:
                core.agus[r.agu_stream].advance()
            if r.store:
                ctr.mem_stores += 1
                due = cyc + m.mem_cfg.store_latency_cycles - 1
                m._pending_stores.append((due, r.addr, r.width, r.data))
            else:
                ctr.mem_loads += 1
                load_samples.append((i, r))
        for d, val in fx.moves:
            move_list.append((i, d, val))
        if events is not None:
            events.append(TraceEvent(cyc, core.coord, "exec", f"pc={executed_pc}"))

    ctr.max_ops_cycle = max(ctr.max_ops_cycle, ops_cycle)
    ctr.max_compute_slots_cycle = max(ctr.max_compute_slots_cycle, slots_cycle)

    # stores due this cycle commit before loads sample memory
    if m._pending_stores:
        keep = []
        for due, addr, width, value in m._pending_stores:
            if due <= cyc:
                m.memory.write(addr, width, value)
            else:
                keep.append((due, addr, width, value))
        m._pending_stores = keep

    for i, r in load_samples:
        value = m.memory.read(r.addr, r.width, r.signed)
        due = cyc + m.mem_cfg.load_latency_cycles - 1
        m._pending_loads.append((due, i, r.dst, value))

    # moves latch now; receivers see them next cycle
    for i, d, val in move_list:
        core = cores[i]
        core.out_ports[d] = val
        ctr.moves += 1
        tgt = cores[neighbor_ids[i][d]]
        if tgt.done:
            continue
        if tgt.asleep:
            tgt.asleep = False
            if events is not None:
                events.append(TraceEvent(cyc, tgt.coord, "wake", f"from={core.coord}"))
        else:
            tgt.wake_pending = True
        if events is not None:
            events.append(TraceEvent(cyc, core.coord, "move",
                                     f"{DIR_NAMES[d]}={val:#x}"))

    # deliver load replies falling due this cycle (readable next cycle)
    if m._pending_loads:
        keep = []
        for due, i, dst, value in m._pending_loads:
            if due <= cyc:
                cores[i].temps[dst] = value
            else:
                keep.append((due, i, dst, value))
        m._pending_loads = keep

    if events is not None:
        m._emit(events)
    ctr.cycles += 1
    m.cycle += 1
    if m.all_done():
        m.status = MachineStatus.DONE
    return m


def run(m: Machine, max_cycles: int = 1_000_000
        ) -> tuple[Machine, list[TraceEvent], CounterSet]:
    """Step until done or faulted, else flag a deadlock at max_cycles."""
    while m.status == MachineStatus.RUNNING and m.cycle < max_cycles:
        step(m)
    if m.status == MachineStatus.RUNNING:
        m.status = MachineStatus.DEADLOCKED
    return m, (m.trace if m.trace is not None else []), m.counters


def barrier_status(m: Machine, barrier_id: int):
    """Inspect one barrier: ('released', set()) or ('incomplete', arrived set)."""
    if barrier_id not in m.barrier_participants:
        raise EngineError(f"barrier never referenced: id={barrier_id}")
    if barrier_id in m.barrier_released:
        return ("released", set())
    return ("incomplete", set(m.barrier_arrived[barrier_id]))
