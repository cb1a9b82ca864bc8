"""Baseline static placer/scheduler for dataflow graphs.

Turns a dataflow graph into per-core microcode with explicit per-hop MOVE
routing on the torus, plus an independent schedule validator and a direct
graph interpreter used as the execution oracle.

Strategy (a deliberately simple, always-valid baseline):

  * list scheduling in topological order, greedy placement of compute
    nodes on the PE that minimizes operand arrival time (Manhattan
    distance on the torus), no backtracking;
  * every memory node runs on a single MOB, so its requests never
    contend for a bank and the static schedule holds exactly;
  * every cross-core edge is routed as a chain of single-hop MOVEs and
    landed into a temp register by a copy at its arrival cycle; a value
    fanning out to several consumers travels once per tree edge
    (consumers branch off the existing route tree);
  * values park in port latches between hops; the booking model keeps a
    latch occupied from its move until its last reader.

Graph file format (line-oriented text, `#` comments):

    node <id> <op>[.w8|.w16|.w32]      compute node (non-memory opcodes)
    const <id> <value>                 compile-time constant
    load <id> <addr>                   32-bit load from a fixed address
    store <id> <addr>                  32-bit store of the slot-a input
    edge <src> <dst> <slot>            slot in {a, b, c}; c only on mac4
    backedge <src> <dst> <slot>        marked loop edge (not mapped)

Sink values (non-store nodes without consumers) stay pinned in their temp
registers; MappingResult.outputs records (core, temp index) per sink so a
run's results are observable from machine state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .fabric import ContextImage, ContextSection, CoreKind, FabricConfig, neighbor
from .isa import (
    ComputeOp, ControlOp, MicrocodeWord, MoveOp, OPPOSITE, OpKind, Opcode,
    Operand, UNARY_OPCODES, Width, exec_alu,
)
from .assembler import _COMPUTE_MNEMONICS, disassemble

__all__ = [
    "MapError", "GraphError", "DataflowGraph", "GraphNode", "MappingResult",
    "parse_graph", "map_graph", "validate", "interpret_graph",
]

_MEM_OPS = {"load", "store"}
_WIDTH_SUFFIX = {"w8": Width.W8, "w16": Width.W16, "w32": Width.W32}


class GraphError(Exception):
    pass


class MapError(Exception):
    pass


@dataclass(frozen=True)
class GraphNode:
    id: str
    op: str                      # mnemonic, "const", "load" or "store"
    width: Width | None = None
    value: int = 0               # const value or memory address


@dataclass
class DataflowGraph:
    nodes: dict[str, GraphNode] = field(default_factory=dict)
    edges: list[tuple[str, str, str]] = field(default_factory=list)  # src, dst, slot
    backedges: list[tuple[str, str, str]] = field(default_factory=list)

    def consumers(self, nid: str) -> list[tuple[str, str]]:
        return [(d, s) for (src, d, s) in self.edges if src == nid]

    def inputs(self, nid: str) -> dict[str, str]:
        return {slot: src for (src, d, slot) in self.edges if d == nid}


def parse_graph(text: str) -> DataflowGraph:
    g = DataflowGraph()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "node":
            if len(tok) != 3:
                raise GraphError(f"node takes ID OP at line {ln}")
            op, _, sfx = tok[2].partition(".")
            if op not in _COMPUTE_MNEMONICS or op in ("ld", "lds", "st"):
                raise GraphError(f"unknown compute op {tok[2]!r} at line {ln}")
            width = _WIDTH_SUFFIX.get(sfx) if sfx else None
            if sfx and width is None:
                raise GraphError(f"bad width suffix {sfx!r} at line {ln}")
            _add_node(g, GraphNode(tok[1], op, width), ln)
        elif kind == "const":
            if len(tok) != 3:
                raise GraphError(f"const takes ID VALUE at line {ln}")
            _add_node(g, GraphNode(tok[1], "const", value=int(tok[2], 0) & 0xFFFFFFFF), ln)
        elif kind in _MEM_OPS:
            if len(tok) != 3:
                raise GraphError(f"{kind} takes ID ADDR at line {ln}")
            addr = int(tok[2], 0)
            if addr % 4:
                raise GraphError(f"{kind} address {addr:#x} not word-aligned at line {ln}")
            _add_node(g, GraphNode(tok[1], kind, value=addr), ln)
        elif kind in ("edge", "backedge"):
            if len(tok) != 4 or tok[3] not in ("a", "b", "c"):
                raise GraphError(f"{kind} takes SRC DST SLOT(a|b|c) at line {ln}")
            (g.backedges if kind == "backedge" else g.edges).append((tok[1], tok[2], tok[3]))
        else:
            raise GraphError(f"unknown statement {kind!r} at line {ln}")
    _check_graph(g)
    return g


def _add_node(g: DataflowGraph, node: GraphNode, ln: int):
    if node.id in g.nodes:
        raise GraphError(f"duplicate node id {node.id!r} at line {ln}")
    g.nodes[node.id] = node


def _check_graph(g: DataflowGraph) -> None:
    for src, dst, slot in g.edges + g.backedges:
        if src not in g.nodes:
            raise GraphError(f"edge references unknown node {src!r}")
        if dst not in g.nodes:
            raise GraphError(f"edge references unknown node {dst!r}")
        if slot == "c" and g.nodes[dst].op != "mac4":
            raise GraphError(f"slot c only valid on mac4, found on {dst!r}")
    for nid, node in g.nodes.items():
        ins = {}
        for src, dst, slot in g.edges:
            if dst == nid:
                if slot in ins:
                    raise GraphError(f"duplicate input slot {slot!r} on {nid!r}")
                ins[slot] = src
        if node.op in ("const", "load"):
            if ins:
                raise GraphError(f"{node.op} node {nid!r} cannot have inputs")
        elif node.op == "store":
            if set(ins) != {"a"}:
                raise GraphError(f"store node {nid!r} needs exactly input slot a")
        elif node.op in ("not", "sat8"):
            if set(ins) != {"a"}:
                raise GraphError(f"unary node {nid!r} needs exactly input slot a")
        elif node.op == "mac4":
            if not {"a", "b"} <= set(ins) or not set(ins) <= {"a", "b", "c"}:
                raise GraphError(f"mac4 node {nid!r} needs slots a and b (optional c)")
        else:
            if set(ins) != {"a", "b"}:
                raise GraphError(f"node {nid!r} needs input slots a and b")
    # acyclicity over forward edges
    order = _topo_order(g)
    if order is None:
        raise GraphError("graph has a cycle not marked as backedge")


def _topo_order(g: DataflowGraph) -> list[str] | None:
    indeg = {nid: 0 for nid in g.nodes}
    for src, dst, _ in g.edges:
        indeg[dst] += 1
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        changed = False
        for src, dst, _ in g.edges:
            if src == nid:
                indeg[dst] -= 1
                if indeg[dst] == 0:
                    ready.append(dst)
                    changed = True
        if changed:
            ready.sort()
    return order if len(order) == len(g.nodes) else None


def critical_path_lower_bound(g: DataflowGraph) -> int:
    """Minimum feasible makespan: a consumer issues at least one cycle after
    its producer (two after a load, whose reply takes an extra cycle)."""
    order = _topo_order(g)
    depth: dict[str, int] = {}
    for nid in order:
        node = g.nodes[nid]
        if node.op == "const":
            depth[nid] = 0
            continue
        best = 1
        for slot, src in g.inputs(nid).items():
            srcn = g.nodes[src]
            if srcn.op == "const":
                continue
            best = max(best, depth[src] + (2 if srcn.op == "load" else 1))
        depth[nid] = best
    return max(depth.values(), default=0)


# ── torus helpers ────────────────────────────────────────────────────


def _torus_delta(cfg: FabricConfig, a: int, b: int, size: int) -> int:
    d = (b - a) % size
    return d if d <= size - d else d - size


def torus_distance(cfg: FabricConfig, p: tuple[int, int], q: tuple[int, int]) -> int:
    dr = abs(_torus_delta(cfg, p[0], q[0], cfg.rows))
    dc = abs(_torus_delta(cfg, p[1], q[1], cfg.cols))
    return dr + dc


def _torus_path(cfg: FabricConfig, src: tuple[int, int], dst: tuple[int, int],
                col_first: bool) -> list[int]:
    """Directions of a shortest path, rows-then-cols or cols-then-rows."""
    dr = _torus_delta(cfg, src[0], dst[0], cfg.rows)
    dc = _torus_delta(cfg, src[1], dst[1], cfg.cols)
    rows = [2 if dr > 0 else 0] * abs(dr)   # S if positive else N
    cols = [1 if dc > 0 else 3] * abs(dc)   # E if positive else W
    return cols + rows if col_first else rows + cols


# ── booking model ────────────────────────────────────────────────────


class _Booking:
    """Tracks compute slots, move slots and latch-hold intervals."""

    def __init__(self):
        self.compute: dict[tuple, set[int]] = {}
        # (core, dir) -> list of [move_cycle, hold_until] sorted by move_cycle
        self.latch: dict[tuple, list[list[int]]] = {}
        self.log: list[tuple] = []

    def mark(self):
        return len(self.log)

    def rollback(self, mark: int):
        while len(self.log) > mark:
            kind, key, payload = self.log.pop()
            if kind == "compute":
                self.compute[key].discard(payload)
            elif kind == "latch":
                self.latch[key].remove(payload)
            else:  # hold extension
                payload[0][1] = payload[1]

    def book_compute(self, core, cycle) -> bool:
        slots = self.compute.setdefault(core, set())
        if cycle in slots:
            return False
        slots.add(cycle)
        self.log.append(("compute", core, cycle))
        return True

    def book_latch(self, core, direction, move_cycle, hold_until) -> bool:
        """Occupy a port latch from its move until its last reader."""
        iv = self.latch.setdefault((core, direction), [])
        for existing in iv:
            m, h = existing
            if m == move_cycle:
                return False
            if m < move_cycle < h:
                return False
            if move_cycle < m < hold_until:
                return False
        entry = [move_cycle, hold_until]
        iv.append(entry)
        iv.sort()
        self.log.append(("latch", (core, direction), entry))
        return True

    def extend_hold(self, core, direction, move_cycle, new_hold) -> bool:
        iv = self.latch.get((core, direction), [])
        for k, entry in enumerate(iv):
            if entry[0] == move_cycle:
                if new_hold <= entry[1]:
                    return True
                for other in iv[k + 1:]:
                    if other[0] < new_hold:
                        return False
                self.log.append(("hold", (core, direction), (entry, entry[1])))
                entry[1] = new_hold
                return True
        return False


@dataclass
class _RouteTree:
    """Where a produced value is reachable.  Entries: core -> (arrival cycle,
    predecessor core, predecessor direction) -- the root maps to itself."""

    root: tuple[int, int]
    def_cycle: int  # first cycle the value is readable at the root temp
    at: dict = field(default_factory=dict)

    def __post_init__(self):
        self.at[self.root] = (self.def_cycle, None, None)


@dataclass
class EdgePlan:
    """How one graph edge is realized."""

    hops: list[tuple[tuple[int, int], int, int]]  # (core, direction, cycle)
    copy_cycle: int | None    # consumer-side landing copy, None if same-core
    arrival: int              # first cycle the value is readable at the consumer


@dataclass
class MappingResult:
    placement: dict[str, tuple[int, int]]
    schedule: dict[str, int]
    edge_plans: dict[tuple[str, str, str], EdgePlan]
    seeds: dict[str, int]               # mac4 accumulator-seed cycles
    outputs: dict[str, tuple[tuple[int, int], int]]  # sink -> (core, temp index)
    makespan: int
    critical_path: int
    image: ContextImage
    source: str


# ── the mapper ───────────────────────────────────────────────────────


class _Mapper:
    def __init__(self, g: DataflowGraph, cfg: FabricConfig):
        self.g = g
        self.cfg = cfg
        self.pes = cfg.pe_coords()
        mobs = cfg.mob_coords()
        if not self.pes or not mobs:
            raise MapError("fabric exhausted: need at least one PE and one MOB")
        self.mob = mobs[0]   # single memory core: a lone requester never stalls
        self.book = _Booking()
        self.placement: dict[str, tuple] = {}
        self.schedule: dict[str, int] = {}
        self.ready: dict[str, int] = {}        # node -> first cycle value is readable
        self.trees: dict[str, _RouteTree] = {}
        self.edge_plans: dict[tuple, EdgePlan] = {}
        self.seeds: dict[str, int] = {}
        self.horizon = cfg.rf.instr_depth - 2  # leave room for the closing eoe
        # program assembly state
        self.ops_at: dict[tuple, dict[int, ComputeOp]] = {}
        self.moves_at: dict[tuple, dict[int, dict[int, Operand]]] = {}
        self.temp_of: dict[tuple[str, tuple], int] = {}  # (node, core) -> temp index
        self.temp_live: dict[tuple, dict[int, int]] = {}  # core -> temp -> last-read cycle
        self.consts: dict[tuple, dict[int, int]] = {}     # core -> value -> index
        # temp reuse: a value's temps are released once every consumer edge
        # (plus its sink store, if any) has been realized
        self.uses_left: dict[str, int] = {}
        self.last_read: dict[str, int] = {}
        self.temps_of_value: dict[str, list[tuple[tuple, int]]] = {}

    # -- resource helpers ---------------------------------------------

    def _const_index(self, core, value) -> int:
        pool = self.consts.setdefault(core, {})
        if value in pool:
            return pool[value]
        if len(pool) >= self.cfg.rf.const_depth:
            raise MapError(f"register pressure: constant RF of core {core} exhausted")
        pool[value] = len(pool)
        return pool[value]

    def _alloc_temp(self, core, node, from_cycle) -> int:
        # a temp whose old value was last read at cycle r can be rewritten at
        # r itself: operands are fetched before the cycle's write commits
        live = self.temp_live.setdefault(core, {})
        for t in range(self.cfg.rf.temp_depth):
            if t not in live or live[t] <= from_cycle:
                live[t] = self.horizon + 1  # pinned until all uses realized
                self.temp_of[(node, core)] = t
                self.temps_of_value.setdefault(node, []).append((core, t))
                return t
        raise MapError(f"register pressure: temp RF of core {core} exhausted "
                       f"at cycle {from_cycle}")

    def _note_use(self, src_id: str, read_cycle: int) -> None:
        """Record one realized consumer edge; release temps after the last."""
        if self.g.nodes[src_id].op == "const":
            return
        self.last_read[src_id] = max(self.last_read.get(src_id, 0), read_cycle)
        self.uses_left[src_id] -= 1
        if self.uses_left[src_id] == 0:
            for core, t in self.temps_of_value.get(src_id, []):
                self.temp_live[core][t] = self.last_read[src_id]

    def _add_op(self, core, cycle, op: ComputeOp):
        self.ops_at.setdefault(core, {})[cycle] = op

    def _add_move(self, core, cycle, direction, source: Operand):
        self.moves_at.setdefault(core, {}).setdefault(cycle, {})[direction] = source

    # -- routing -------------------------------------------------------

    def _route_to(self, src_node: str, dst_core, read_cycle: int,
                  land: bool = True) -> tuple[Operand, EdgePlan | None]:
        """Make src_node's value readable at dst_core at read_cycle.

        With `land` the value is copied into a consumer temp at arrival
        (the copy needs an ALU, so PEs only); without it the consumer
        reads the incoming port directly at read_cycle (used on MOBs).
        Returns the operand to read plus the realized edge plan.  Raises
        _Retry if the booking cannot be met at this read cycle.
        """
        tree = self.trees[src_node]
        src_core = tree.root
        if dst_core == src_core:
            if read_cycle < tree.def_cycle:
                raise _Retry
            return (Operand.temp(self.temp_of[(src_node, src_core)]),
                    EdgePlan([], None, tree.def_cycle))
        if land and (src_node, dst_core) in self.temp_of:
            # already landed at this consumer core by an earlier edge
            plan = self._landed[(src_node, dst_core)]
            if read_cycle >= plan.copy_cycle + 1:
                return (Operand.temp(self.temp_of[(src_node, dst_core)]), plan)
            raise _Retry
        if dst_core in tree.at:
            # the value already flows through this core: grab it off the
            # incoming port by holding the predecessor latch a bit longer
            arr, pred, pdir = tree.at[dst_core]
            port = Operand.port(_incoming_port(pdir))
            if land:
                for cc in range(arr, read_cycle):
                    mark = self.book.mark()
                    if (self.book.book_compute(dst_core, cc)
                            and self.book.extend_hold(pred, pdir, arr - 1, cc)):
                        tmp = self._alloc_temp(dst_core, src_node, cc)
                        self._add_op(dst_core, cc,
                                     ComputeOp(Opcode.OR, dst=tmp, a=port, b=port))
                        plan = EdgePlan([], cc, cc + 1)
                        self._landed[(src_node, dst_core)] = plan
                        return (Operand.temp(tmp), plan)
                    self.book.rollback(mark)
            else:
                if read_cycle >= arr and self.book.extend_hold(pred, pdir,
                                                               arr - 1, read_cycle):
                    return (port, EdgePlan([], None, read_cycle))
            # cannot hold the incoming latch long enough: route around,
            # arriving on a different port
        # branch from tree cores in nearest-first order; congestion on the
        # closest one must not doom the edge
        candidates = sorted(
            ((torus_distance(self.cfg, core, dst_core), arr, core)
             for core, (arr, _, _) in tree.at.items() if core != dst_core))
        mark = self.book.mark()
        for dist, s_arr, start in candidates:
            if land:
                # land as early as possible: the sooner the copy runs, the
                # sooner the shared latches along the path are free again
                for copy_cycle in range(s_arr + dist, read_cycle):
                    for col_first in (False, True):
                        ok = self._try_route(src_node, tree, start, dst_core,
                                             copy_cycle - dist, copy_cycle,
                                             read_cycle, col_first)
                        if ok is not None:
                            return ok
                        self.book.rollback(mark)
            else:
                # a port-direct read consumes the last hop's latch at read_cycle
                first_move = read_cycle - dist
                if first_move >= s_arr:
                    for col_first in (False, True):
                        ok = self._try_route(src_node, tree, start, dst_core,
                                             first_move, None, read_cycle, col_first)
                        if ok is not None:
                            return ok
                        self.book.rollback(mark)
        raise _Retry

    def _try_route(self, src_node, tree, start, dst_core, first_move,
                   copy_cycle, read_cycle, col_first):
        dirs = _torus_path(self.cfg, start, dst_core, col_first)
        if copy_cycle is not None and not self.book.book_compute(dst_core, copy_cycle):
            return None
        hops = []
        core = start
        cycle = first_move
        last = first_move + len(dirs) - 1
        for d in dirs:
            # intermediate latches are read by the next mover at cycle+1; the
            # final latch is read by the landing copy or the consumer itself
            hold = cycle + 1 if cycle != last else (copy_cycle if copy_cycle is not None
                                                    else read_cycle)
            if not self.book.book_latch(core, d, cycle, hold):
                return None
            hops.append((core, d, cycle))
            core = neighbor(self.cfg, core, d)
            cycle += 1
        # extend the source-side availability: the branch move reads its
        # predecessor latch, so that latch must still hold the value
        arr, pred, pdir = tree.at[start]
        if pred is not None:
            if not self.book.extend_hold(pred, pdir, arr - 1, first_move):
                return None
        # record tree growth and emit the program artifacts
        for (hop_core, d, hop_cycle) in hops:
            if hop_core == tree.root:
                src = Operand.temp(self.temp_of[(src_node, tree.root)])
            else:
                _, p, pd = tree.at[hop_core]
                # arriving direction as seen by the hop core: opposite port
                src = Operand.port(_incoming_port(pd))
            self._add_move(hop_core, hop_cycle, d, src)
            nxt = neighbor(self.cfg, hop_core, d)
            if nxt not in tree.at or tree.at[nxt][0] > hop_cycle + 1:
                tree.at[nxt] = (hop_cycle + 1, hop_core, d)
        last_core, last_dir, last_cycle = hops[-1]
        port = _incoming_port(last_dir)
        if copy_cycle is None:
            return (Operand.port(port), EdgePlan(hops, None, read_cycle))
        tmp = self._alloc_temp(dst_core, src_node, copy_cycle)
        self._add_op(dst_core, copy_cycle,
                     ComputeOp(Opcode.OR, dst=tmp, a=Operand.port(port),
                               b=Operand.port(port)))
        plan = EdgePlan(hops, copy_cycle, copy_cycle + 1)
        self._landed[(src_node, dst_core)] = plan
        return (Operand.temp(tmp), plan)

    # -- main ----------------------------------------------------------

    def run(self) -> MappingResult:
        g = self.g
        if g.backedges:
            raise MapError("loop back-edges are not supported by the baseline mapper")
        order = _topo_order(g)
        self._landed: dict[tuple, EdgePlan] = {}
        sinks = [nid for nid in sorted(g.nodes)
                 if g.nodes[nid].op not in ("store", "const") and not g.consumers(nid)]
        for nid in g.nodes:
            # the extra use on sinks is never realized: it pins their temps
            # so the result stays observable after the run
            self.uses_left[nid] = len(g.consumers(nid)) + (1 if nid in sinks else 0)
        for nid in order:
            node = g.nodes[nid]
            if node.op == "const":
                continue
            if node.op in _MEM_OPS:
                self._schedule_mem(node)
            else:
                self._schedule_compute(node)
        outputs = {nid: (self.trees[nid].root,
                         self.temp_of[(nid, self.trees[nid].root)])
                   for nid in sinks}
        image, source = self._emit()
        makespan = max(self.schedule.values(), default=0) + 1
        return MappingResult(
            placement=dict(self.placement), schedule=dict(self.schedule),
            edge_plans=dict(self.edge_plans), seeds=dict(self.seeds),
            outputs=outputs, makespan=makespan,
            critical_path=critical_path_lower_bound(g),
            image=image, source=source)

    def _operand(self, core, src_id, read_cycle, land=True):
        node = self.g.nodes[src_id]
        if node.op == "const":
            return Operand.const(self._const_index(core, node.value)), None
        return self._route_to(src_id, core, read_cycle, land)

    def _earliest_start(self, nid, core) -> int:
        bound = 0
        for slot, src in self.g.inputs(nid).items():
            srcn = self.g.nodes[src]
            if srcn.op == "const":
                continue
            tree = self.trees[src]
            dist = 0 if tree.root == core else torus_distance(self.cfg, tree.root, core)
            # def + hops + landing copy + 1 to read the temp
            bound = max(bound, tree.def_cycle + (dist + 2 if dist else 0))
        return bound

    def _schedule_compute(self, node: GraphNode):
        nid = node.id
        # greedy placement: PE with the earliest actually-free issue slot
        # after its operands can arrive, then load balance
        scored = []
        for pe in self.pes:
            est = self._earliest_start(nid, pe)
            booked = self.book.compute.get(pe, set())
            slot = est
            while slot in booked:
                slot += 1
            busy = len(self.ops_at.get(pe, {}))
            scored.append((slot, busy, pe))
        scored.sort()
        core = scored[0][2]
        self.placement[nid] = core
        opcode = _COMPUTE_MNEMONICS[node.op]
        start = max(scored[0][0], 1 if opcode == Opcode.MAC4 else 0)
        for cycle in range(start, self.horizon):
            mark = self.book.mark()
            saved = _SavedState(self)
            try:
                if not self.book.book_compute(core, cycle):
                    raise _Retry
                ins = self.g.inputs(nid)
                plans: dict[str, EdgePlan | None] = {}
                if opcode == Opcode.MAC4:
                    # the accumulator seed writes the destination temp before
                    # the MAC itself, so the temp is live from the seed on
                    seed_cycle = self._free_slot_before(core, cycle)
                    dst = self._alloc_temp(core, nid, seed_cycle)
                    cplan = self._emit_seed(core, dst, seed_cycle, ins.get("c"))
                    self.seeds[nid] = seed_cycle
                    if "c" in ins:
                        plans["c"] = cplan
                else:
                    dst = self._alloc_temp(core, nid, cycle)
                a_op, plans["a"] = self._operand(core, ins["a"], cycle)
                if node.op in ("not", "sat8"):
                    b_op = Operand.temp(0)
                else:
                    b_op, plans["b"] = self._operand(core, ins["b"], cycle)
                self._add_op(core, cycle,
                             ComputeOp(opcode, dst=dst, a=a_op, b=b_op,
                                       width=node.width))
                self.schedule[nid] = cycle
                self.trees[nid] = _RouteTree(core, cycle + 1)
                for slot, plan in plans.items():
                    if plan is not None:
                        self.edge_plans[(ins[slot], nid, slot)] = plan
                for slot, src in ins.items():
                    self._note_use(src, cycle)
                return
            except _Retry:
                self.book.rollback(mark)
                saved.restore(self)
        raise MapError(f"fabric exhausted: cannot schedule node {nid!r} within "
                       f"{self.horizon} words")

    def _free_slot_before(self, core, cycle) -> int:
        for c in range(cycle - 1, -1, -1):
            if self.book.book_compute(core, c):
                return c
        raise _Retry

    def _emit_seed(self, core, dst, cycle, c_src):
        if c_src is None:
            self._add_op(core, cycle,
                         ComputeOp(Opcode.XOR, dst=dst, a=Operand.temp(dst),
                                   b=Operand.temp(dst)))
            return None
        src, plan = self._operand(core, c_src, cycle)
        self._add_op(core, cycle, ComputeOp(Opcode.OR, dst=dst, a=src, b=src))
        return plan

    def _schedule_mem(self, node: GraphNode):
        nid = node.id
        core = self.mob
        self.placement[nid] = core
        addr_const = self._const_index(core, node.value)
        if node.op == "load":
            for cycle in range(0, self.horizon - 2):
                if not self.book.book_compute(core, cycle):
                    continue
                dst = self._alloc_temp(core, nid, cycle)
                self._add_op(core, cycle,
                             ComputeOp(Opcode.LOAD, dst=dst,
                                       a=Operand.const(addr_const),
                                       width=Width.W32))
                self.schedule[nid] = cycle
                # reply lands at end of cycle+1, readable from cycle+2
                self.trees[nid] = _RouteTree(core, cycle + 2)
                return
            raise MapError(f"fabric exhausted: cannot schedule load {nid!r}")
        # store: input value must reach the MOB first
        src = self.g.inputs(nid)["a"]
        self._schedule_store_value(src, node.value, nid)

    def _schedule_store_value(self, src_id: str, addr: int, nid: str):
        core = self.mob
        self.placement[nid] = core
        addr_const = self._const_index(core, addr)
        start = 0
        srcn = self.g.nodes[src_id]
        if srcn.op != "const":
            tree = self.trees[src_id]
            dist = 0 if tree.root == core else torus_distance(self.cfg, tree.root, core)
            start = tree.def_cycle + (dist if dist else 0)
        for cycle in range(start, self.horizon):
            mark = self.book.mark()
            saved = _SavedState(self)
            try:
                if not self.book.book_compute(core, cycle):
                    raise _Retry
                # MOBs have no ALU for a landing copy: read the port directly
                data, plan = self._operand(core, src_id, cycle, land=False)
                self._add_op(core, cycle,
                             ComputeOp(Opcode.STORE, dst=0,
                                       a=Operand.const(addr_const), b=data,
                                       width=Width.W32))
                self.schedule[nid] = cycle
                if plan is not None:
                    self.edge_plans[(src_id, nid, "a")] = plan
                self._note_use(src_id, cycle)
                return
            except _Retry:
                self.book.rollback(mark)
                saved.restore(self)
        raise MapError(f"fabric exhausted: cannot schedule store {nid!r}")

    # -- emission ------------------------------------------------------

    def _emit(self) -> tuple[ContextImage, str]:
        sections = []
        for coord in self.cfg.coords():
            ops = self.ops_at.get(coord, {})
            moves = self.moves_at.get(coord, {})
            last = max(list(ops.keys()) + list(moves.keys()), default=-1)
            words = []
            for cycle in range(last + 1):
                mv = tuple(MoveOp(d, s) for d, s in sorted(moves.get(cycle, {}).items()))
                words.append(MicrocodeWord(ops.get(cycle), mv, ControlOp.nop()))
            words.append(MicrocodeWord(control=ControlOp.eoe()))
            consts = [0] * len(self.consts.get(coord, {}))
            for value, idx in self.consts.get(coord, {}).items():
                consts[idx] = value
            sections.append(ContextSection(coord, tuple(words), tuple(consts)))
        image = ContextImage(tuple(sections))
        return image, disassemble(image)


class _Retry(Exception):
    pass


class _SavedState:
    """Snapshot of the mutable mapper state touched inside a retry attempt."""

    def __init__(self, m: _Mapper):
        self.ops = {k: dict(v) for k, v in m.ops_at.items()}
        self.moves = {k: {c: dict(d) for c, d in v.items()} for k, v in m.moves_at.items()}
        self.temp_of = dict(m.temp_of)
        self.temp_live = {k: dict(v) for k, v in m.temp_live.items()}
        self.consts = {k: dict(v) for k, v in m.consts.items()}
        self.landed = dict(m._landed)
        self.trees = {k: (_RouteTree(t.root, t.def_cycle, dict(t.at)))
                      for k, t in m.trees.items()}
        self.seeds = dict(m.seeds)
        self.uses_left = dict(m.uses_left)
        self.last_read = dict(m.last_read)
        self.temps_of_value = {k: list(v) for k, v in m.temps_of_value.items()}

    def restore(self, m: _Mapper):
        m.ops_at = self.ops
        m.moves_at = self.moves
        m.temp_of = self.temp_of
        m.temp_live = self.temp_live
        m.consts = self.consts
        m._landed = self.landed
        m.trees = self.trees
        m.seeds = self.seeds
        m.uses_left = self.uses_left
        m.last_read = self.last_read
        m.temps_of_value = self.temps_of_value


def _incoming_port(send_direction: int) -> int:
    """Port on which the receiver sees a move sent in `send_direction`."""
    return OPPOSITE[send_direction]


def map_graph(g: DataflowGraph, cfg: FabricConfig | None = None) -> MappingResult:
    """Place, schedule and route a dataflow graph.  The result always
    passes `validate`; infeasible graphs raise MapError."""
    return _Mapper(g, cfg or FabricConfig()).run()


# ── independent validator ────────────────────────────────────────────


def validate(g: DataflowGraph, cfg: FabricConfig, r: MappingResult) -> list[str]:
    """Recheck a mapping from scratch; returns a list of violations (empty
    means ok).  Deliberately independent of the mapper's booking code."""
    v: list[str] = []
    for nid, coord in r.placement.items():
        kind = cfg.kind_at(coord)
        node = g.nodes.get(nid)
        if node is None:
            continue
        if node.op in _MEM_OPS and kind != CoreKind.MOB:
            v.append(f"memory node {nid} placed on non-MOB core {coord}")
        if node.op not in _MEM_OPS and node.op != "const" and kind != CoreKind.PE:
            v.append(f"compute node {nid} placed on non-PE core {coord}")
    # route legality
    for (src, dst, slot), plan in r.edge_plans.items():
        if not plan.hops:
            continue
        prev_lands, prev_cycle = None, None
        for core, d, cycle in plan.hops:
            nxt = neighbor(cfg, core, d)
            if prev_lands is not None:
                if core != prev_lands:
                    v.append(f"route {src}->{dst}: route hop not adjacent "
                             f"(expected {prev_lands}, got {core})")
                if cycle <= prev_cycle:
                    v.append(f"route {src}->{dst}: hop cycles not strictly increasing")
            prev_lands, prev_cycle = nxt, cycle
        first_core = plan.hops[0][0]
        prod_cycle = r.schedule.get(src)
        if prod_cycle is not None:
            ready = prod_cycle + (2 if g.nodes[src].op == "load" else 1)
            if plan.hops[0][2] < ready and first_core == r.placement.get(src):
                v.append(f"route {src}->{dst}: first move at {plan.hops[0][2]} "
                         f"before value ready at {ready}")
        if plan.copy_cycle is not None and plan.hops:
            if plan.copy_cycle != plan.hops[-1][2] + 1:
                v.append(f"route {src}->{dst}: landing copy at {plan.copy_cycle} "
                         f"does not follow last hop at {plan.hops[-1][2]}")
    # arrival-before-use and per-slot conflicts, straight from the programs
    compute_busy: dict[tuple, set[int]] = {}
    for nid, cycle in r.schedule.items():
        node = g.nodes.get(nid)
        if node is None or node.op == "const":
            continue
        core = r.placement[nid]
        for slot, src in g.inputs(nid).items():
            srcn = g.nodes[src]
            if srcn.op == "const":
                continue
            plan = r.edge_plans.get((src, nid, slot))
            src_core = r.placement[src]
            if src_core == core and (plan is None or not plan.hops):
                ready = r.schedule[src] + (2 if srcn.op == "load" else 1)
                read_at = r.seeds.get(nid, cycle) if slot == "c" else cycle
                if read_at < ready:
                    v.append(f"node {nid} reads {src} at {read_at} before ready {ready}")
            elif plan is None:
                v.append(f"edge {src}->{nid} slot {slot} has no route")
            else:
                read_at = r.seeds.get(nid, cycle) if slot == "c" else cycle
                if plan.arrival > read_at:
                    v.append(f"node {nid} reads {src} at {read_at} before "
                             f"arrival {plan.arrival}")
                if src_core != core:
                    hops = len(plan.hops)
                    if cycle < r.schedule[src] + 1 + hops:
                        v.append(f"node {nid} issues at {cycle}, needs >= "
                                 f"producer {r.schedule[src]} + 1 + {hops} hops")
    # slot conflicts from the emitted image
    for sec in r.image.sections:
        for idx, w in enumerate(sec.words):
            if w.compute is not None:
                busy = compute_busy.setdefault(sec.coord, set())
                if idx in busy:
                    v.append(f"compute slot conflict on {sec.coord} cycle {idx}")
                busy.add(idx)
            dirs = set()
            for m in w.moves:
                if m.direction in dirs:
                    v.append(f"duplicate move direction on {sec.coord} cycle {idx}")
                dirs.add(m.direction)
        if len(sec.words) > cfg.rf.instr_depth:
            v.append(f"instruction RF overflow on {sec.coord}")
        if len(sec.consts) > cfg.rf.const_depth:
            v.append(f"constant RF overflow on {sec.coord}")
    if r.makespan < r.critical_path:
        v.append(f"makespan {r.makespan} below critical-path bound {r.critical_path}")
    return v


# ── direct interpreter (execution oracle) ───────────────────────────


def interpret_graph(g: DataflowGraph, memory: dict[int, int] | None = None
                    ) -> tuple[dict[str, int], dict[int, int]]:
    """Evaluate the graph directly: returns (node values, stored words).

    `memory` maps word-aligned addresses to 32-bit values for loads.
    """
    memory = dict(memory or {})
    values: dict[str, int] = {}
    order = _topo_order(g)
    stores: dict[int, int] = {}
    for nid in order:
        node = g.nodes[nid]
        if node.op == "const":
            values[nid] = node.value
        elif node.op == "load":
            values[nid] = memory.get(node.value, 0) & 0xFFFFFFFF
        elif node.op == "store":
            src = g.inputs(nid)["a"]
            stores[node.value] = values[src]
        else:
            ins = g.inputs(nid)
            a = values[ins["a"]] if "a" in ins else 0
            b = values[ins["b"]] if "b" in ins else 0
            opcode = _COMPUTE_MNEMONICS[node.op]
            width = node.width if node.width is not None else \
                ComputeOp(opcode).width
            c = values[ins["c"]] if "c" in ins else 0
            values[nid] = exec_alu(opcode, width, a, b, c)
    return values, stores
