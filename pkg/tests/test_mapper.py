import random

import pytest

from nxcgra.engine import Machine, MachineStatus, run
from nxcgra.fabric import Fabric, FabricConfig, load_context
from nxcgra.isa import Width
from nxcgra.mapper import (
    DataflowGraph, GraphError, MapError, MappingResult, interpret_graph,
    map_graph, parse_graph, validate,
)

CFG = FabricConfig()

BIN_OPS = ["add", "sub", "xor", "and", "or", "muls32", "cmpeq", "cmplt",
           "cmpltu", "sll", "srl", "sra", "mulu16", "mulu8"]
UN_OPS = ["not", "sat8"]


def random_dag(rng: random.Random, max_nodes: int = 40) -> str:
    """Layered chains with bounded depth, shaped so a straight-line schedule
    fits the 32-word instruction RF."""
    n_chains = rng.randint(1, 3)
    length = rng.randint(2, 6)
    lines, sources, heads = [], [], []
    for i in range(rng.randint(0, 2)):
        lines.append(f"load L{i} {0x400 + 4 * i:#x}")
        sources.append(f"L{i}")
    for i in range(rng.randint(1, 3)):
        lines.append(f"const K{i} {rng.randint(0, 2 ** 31)}")
        sources.append(f"K{i}")
    k = 0
    for _ in range(n_chains):
        prev = None
        for _ in range(length):
            if k + 2 > max_nodes:
                break
            op = rng.choice(BIN_OPS) if rng.random() < 0.85 else rng.choice(UN_OPS)
            nid = f"N{k}"
            k += 1
            lines.append(f"node {nid} {op}")
            lines.append(f"edge {prev or rng.choice(sources)} {nid} a")
            if op not in UN_OPS:
                b = rng.choice(sources + heads) if rng.random() < 0.7 else prev or rng.choice(sources)
                lines.append(f"edge {b} {nid} b")
            prev = nid
        if prev:
            heads.append(prev)
    if len(heads) >= 2 and rng.random() < 0.5 and k < max_nodes:
        nid = f"N{k}"
        lines.append(f"node {nid} mac4")
        lines.append(f"edge {heads[0]} {nid} a")
        lines.append(f"edge {heads[1]} {nid} b")
        if rng.random() < 0.5:
            lines.append(f"edge {rng.choice(sources)} {nid} c")
    if rng.random() < 0.3 and heads:
        lines.append("store S0 0x800")
        lines.append(f"edge {heads[-1]} S0 a")
    return "\n".join(lines)


def execute_mapping(r: MappingResult, mem_words: dict[int, int]) -> Machine:
    fab = Fabric(CFG)
    load_context(r.image, fab, 1 << 20)
    m = Machine(fab)
    for addr, val in mem_words.items():
        m.memory.write(addr, Width.W32, val)
    m, _, _ = run(m, 5000)
    return m


def sink_value(m: Machine, r: MappingResult, nid: str) -> int:
    coord, temp = r.outputs[nid]
    return m.fabric.core_at(coord).temps[temp]


# ── parsing ──────────────────────────────────────────────────────────

def test_parse_rejects_cycles():
    bad = """
node a add
node b add
const k 1
edge a b a
edge b a a
edge k a b
edge k b b
"""
    with pytest.raises(GraphError, match="cycle"):
        parse_graph(bad)


def test_parse_accepts_marked_backedge_but_mapper_rejects():
    src = """
const k 1
node a add
edge k a a
edge k a b
backedge a a a
"""
    g = parse_graph(src)
    assert g.backedges
    with pytest.raises(MapError, match="back-edge"):
        map_graph(g)


def test_parse_arity_errors():
    with pytest.raises(GraphError, match="slots a and b"):
        parse_graph("const k 1\nnode a add\nedge k a a\n")
    with pytest.raises(GraphError, match="slot c only valid on mac4"):
        parse_graph("const k 1\nnode a add\nedge k a a\nedge k a b\nedge k a c\n")


# ── small mappings ───────────────────────────────────────────────────

def test_single_add_node():
    g = parse_graph("const k1 3\nconst k2 4\nnode n add\nedge k1 n a\nedge k2 n b\n")
    r = map_graph(g)
    assert validate(g, CFG, r) == []
    assert CFG.kind_at(r.placement["n"]) .value == "pe"
    assert r.makespan >= 1
    pe_section = next(s for s in r.image.sections if s.coord == r.placement["n"])
    assert len(pe_section.words) <= 3
    m = execute_mapping(r, {})
    assert m.status == MachineStatus.DONE
    assert sink_value(m, r, "n") == 7


def test_chain_issue_distance_bound():
    g = parse_graph("""
const k 1
node a add
edge k a a
edge k a b
node b add
edge a b a
edge k b b
""")
    r = map_graph(g)
    assert validate(g, CFG, r) == []
    pa, pb = r.placement["a"], r.placement["b"]
    if pa == pb:
        assert r.schedule["b"] >= r.schedule["a"] + 1
    else:
        hops = len(r.edge_plans[("a", "b", "a")].hops)
        assert r.schedule["b"] >= r.schedule["a"] + 1 + hops


def test_seventeen_concurrent_nodes_serialize_legally():
    lines = ["const k 7"]
    for i in range(17):
        lines += [f"node n{i} add", f"edge k n{i} a", f"edge k n{i} b"]
    g = parse_graph("\n".join(lines))
    try:
        r = map_graph(g)
    except MapError:
        return  # "fabric exhausted" is an acceptable outcome
    assert validate(g, CFG, r) == []
    vals, _ = interpret_graph(g)
    m = execute_mapping(r, {})
    for nid in r.outputs:
        assert sink_value(m, r, nid) == vals[nid]


def test_mac4_with_accumulator_edge():
    g = parse_graph("""
const a 0x01020304
const b 0x01010101
const acc 1000
node m mac4
edge a m a
edge b m b
edge acc m c
""")
    r = map_graph(g)
    assert validate(g, CFG, r) == []
    vals, _ = interpret_graph(g)
    assert vals["m"] == 1000 + 1 + 2 + 3 + 4
    m = execute_mapping(r, {})
    assert sink_value(m, r, "m") == vals["m"]


# ── validator independence ───────────────────────────────────────────

def test_validator_flags_corrupt_route():
    g = parse_graph("const k 1\nload x 0x400\nnode n add\nedge k n a\nedge x n b\n")
    r = map_graph(g)
    assert validate(g, CFG, r) == []
    target = next(k for k, p in r.edge_plans.items() if p.hops)
    plan = r.edge_plans[target]
    bad_hops = [((0, 0), 0, plan.hops[0][2])] + plan.hops[1:]
    if len(bad_hops) < 2:
        bad_hops.append(((2, 2), 1, plan.hops[0][2] + 1))
    r.edge_plans[target] = type(plan)(bad_hops, plan.copy_cycle, plan.arrival)
    violations = validate(g, CFG, r)
    assert any("not adjacent" in v for v in violations)


def test_validator_flags_compute_slot_conflict():
    g = parse_graph("const k 1\nnode n add\nedge k n a\nedge k n b\n")
    r = map_graph(g)
    sec = next(s for s in r.image.sections if s.coord == r.placement["n"])
    doubled = type(sec)(sec.coord, sec.words + sec.words[:1], sec.consts, sec.agus)
    # two compute words is fine; the conflict check looks at one word per
    # cycle, so fabricate a second section claiming the same core instead
    image = type(r.image)(tuple(doubled if s.coord == sec.coord else s
                                for s in r.image.sections))
    r2 = MappingResult(r.placement, r.schedule, r.edge_plans, r.seeds,
                       r.outputs, r.makespan, r.critical_path, image, r.source)
    # direct duplicate-direction corruption
    from nxcgra.isa import MicrocodeWord, MoveOp, Operand
    w = MicrocodeWord(moves=(MoveOp(1, Operand.temp(0)),))
    # bypass encode validation by testing the validator's own scan
    object.__setattr__(w, "moves", (MoveOp(1, Operand.temp(0)), MoveOp(1, Operand.temp(1))))
    bad_sec = type(sec)((3, 3), (w,), (), ())
    image = type(r.image)(r.image.sections + (bad_sec,))
    r3 = MappingResult(r.placement, r.schedule, r.edge_plans, r.seeds,
                       r.outputs, r.makespan, r.critical_path, image, r.source)
    violations = validate(g, CFG, r3)
    assert any("duplicate move direction" in v for v in violations)


def test_makespan_respects_critical_path():
    rng = random.Random(7)
    for _ in range(30):
        g = parse_graph(random_dag(rng))
        try:
            r = map_graph(g)
        except MapError:
            continue
        assert r.makespan >= r.critical_path
        assert validate(g, CFG, r) == []


# ── soundness fuzz (the acceptance suite runs the full 1000) ─────────

def test_fuzz_mappings_validate_and_execute(rng):
    checked = 0
    for trial in range(120):
        text = random_dag(rng)
        g = parse_graph(text)
        mem = {0x400 + 4 * i: rng.randrange(1 << 32) for i in range(4)}
        vals, stores = interpret_graph(g, mem)
        try:
            r = map_graph(g)
        except MapError:
            continue
        assert validate(g, CFG, r) == [], text
        if trial % 3 == 0:
            m = execute_mapping(r, mem)
            assert m.status == MachineStatus.DONE, (m.fault_msg, text)
            for nid in r.outputs:
                assert sink_value(m, r, nid) == vals[nid], (nid, text)
            for addr, val in stores.items():
                assert m.memory.read(addr, Width.W32) == val
            checked += 1
    assert checked >= 10
