"""Shared banked L1 data memory, logarithmic-interconnect arbitration, and
MOB address generation.

The data space is word-interleaved across banks: bank = (addr >> 2) mod
banks, so eight consecutive word addresses land in eight distinct banks
and the interconnect can grant up to one access per bank per cycle.
Conflicting requesters are resolved by fixed row-major core priority and
retry unchanged the next cycle.  All multi-byte values are little-endian.

Loads return data `load_latency_cycles` after the grant cycle; stores
commit after `store_latency_cycles`.  The execution engine owns that
scheduling; this module provides the storage, the arbiter, and the
address generators.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .isa import Width, sx8, sx16, u32

__all__ = [
    "MemoryConfig", "AccessRequest", "AGUState", "BankedMemory",
    "MemoryAccessError", "AGUExhausted",
    "bank_of", "check_alignment", "arbitrate", "agu_next",
    "save_memory_image", "load_memory_image", "to_hexdump", "from_hexdump",
]


class MemoryAccessError(Exception):
    """Out-of-range or misaligned access."""


class AGUExhausted(Exception):
    """Address stream has emitted all count_inner * count_outer addresses."""


@dataclass(frozen=True)
class MemoryConfig:
    banks: int = 8
    bank_kib: int = 32
    context_kib: int = 4
    load_latency_cycles: int = 2
    store_latency_cycles: int = 1

    @property
    def total_bytes(self) -> int:
        return self.banks * self.bank_kib * 1024

    @property
    def context_bytes(self) -> int:
        return self.context_kib * 1024


class AccessRequest:
    """One LSU access.  `signed`/`dst`/`agu_stream` ride along so the engine
    can deliver the reply and advance the right address stream on grant."""

    __slots__ = ("core", "store", "addr", "width", "data", "signed", "dst", "agu_stream")

    def __init__(self, core, store, addr, width, data=0, signed=False,
                 dst=0, agu_stream=None):
        self.core = core
        self.store = store
        self.addr = addr
        self.width = width
        self.data = data
        self.signed = signed
        self.dst = dst
        self.agu_stream = agu_stream

    @property
    def kind(self) -> str:
        return "store" if self.store else "load"


_WIDTH_BYTES = {Width.W8: 1, Width.W16: 2, Width.W32: 4}


def check_alignment(addr: int, width: Width) -> None:
    size = _WIDTH_BYTES[width]
    if addr % size:
        raise MemoryAccessError(f"misaligned {size}-byte access at {addr:#x}")


def bank_of(addr: int, cfg: MemoryConfig) -> int:
    """Word-interleaved bank index of a byte address."""
    if not 0 <= addr < cfg.total_bytes:
        raise MemoryAccessError(f"address out of bounds: {addr:#x}")
    return (addr >> 2) % cfg.banks


def arbitrate(reqs: list[AccessRequest], cfg: MemoryConfig
              ) -> tuple[list[AccessRequest], list[AccessRequest]]:
    """Grant at most one request per bank per cycle.

    Among requests conflicting on a bank, the lowest core coordinate in
    row-major order wins; everyone else is stalled and retries unchanged.
    Raises MemoryAccessError for misaligned or out-of-range requests
    (identifying the core) before any grant decision.
    """
    for r in reqs:
        size = _WIDTH_BYTES[r.width]
        if r.addr % size:
            raise MemoryAccessError(
                f"misaligned {size}-byte access at {r.addr:#x} from core {r.core}")
        if not 0 <= r.addr < cfg.total_bytes:
            raise MemoryAccessError(
                f"address out of bounds: {r.addr:#x} from core {r.core}")
    grants: dict[int, AccessRequest] = {}
    stalled: list[AccessRequest] = []
    for r in sorted(reqs, key=lambda r: r.core):
        b = (r.addr >> 2) % cfg.banks
        if b in grants:
            stalled.append(r)
        else:
            grants[b] = r
    return list(grants.values()), stalled


# ── address generation ───────────────────────────────────────────────


@dataclass
class AGUState:
    """Two-level affine address stream.

    Emits base + j*stride_outer + i*stride_inner for i in [0, count_inner)
    nested inside j in [0, count_outer).
    """

    base: int
    stride_inner: int
    count_inner: int
    stride_outer: int = 0
    count_outer: int = 1
    i: int = 0
    j: int = 0

    @property
    def exhausted(self) -> bool:
        return self.j >= self.count_outer or self.count_inner <= 0

    def peek(self) -> int:
        if self.exhausted:
            raise AGUExhausted("AGU stream exhausted")
        return self.base + self.j * self.stride_outer + self.i * self.stride_inner

    def advance(self) -> None:
        if self.exhausted:
            raise AGUExhausted("AGU stream exhausted")
        self.i += 1
        if self.i >= self.count_inner:
            self.i = 0
            self.j += 1


def agu_next(s: AGUState) -> tuple[int, AGUState]:
    """Emit the current address and return the advanced stream state."""
    addr = s.peek()
    out = AGUState(s.base, s.stride_inner, s.count_inner,
                   s.stride_outer, s.count_outer, s.i, s.j)
    out.advance()
    return addr, out


# ── backing store ────────────────────────────────────────────────────


class BankedMemory:
    """Byte-addressed backing store for the interleaved bank array."""

    def __init__(self, cfg: MemoryConfig | None = None):
        self.cfg = cfg or MemoryConfig()
        self.data = bytearray(self.cfg.total_bytes)

    def read(self, addr: int, width: Width, signed: bool = False) -> int:
        size = _WIDTH_BYTES[width]
        check_alignment(addr, width)
        if not 0 <= addr <= self.cfg.total_bytes - size:
            raise MemoryAccessError(f"address out of bounds: {addr:#x}")
        raw = int.from_bytes(self.data[addr:addr + size], "little")
        if signed:
            if width == Width.W8:
                return u32(sx8(raw))
            if width == Width.W16:
                return u32(sx16(raw))
        return raw

    def write(self, addr: int, width: Width, value: int) -> None:
        size = _WIDTH_BYTES[width]
        check_alignment(addr, width)
        if not 0 <= addr <= self.cfg.total_bytes - size:
            raise MemoryAccessError(f"address out of bounds: {addr:#x}")
        self.data[addr:addr + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def write_block(self, addr: int, payload: bytes) -> None:
        if not 0 <= addr <= self.cfg.total_bytes - len(payload):
            raise MemoryAccessError(f"block [{addr:#x}, +{len(payload)}) out of bounds")
        self.data[addr:addr + len(payload)] = payload

    def read_block(self, addr: int, length: int) -> bytes:
        if not 0 <= addr <= self.cfg.total_bytes - length:
            raise MemoryAccessError(f"block [{addr:#x}, +{length}) out of bounds")
        return bytes(self.data[addr:addr + length])


# ── memory image files ───────────────────────────────────────────────

_MEM_MAGIC = b"NXMEM1\x00\x00"


def save_memory_image(base: int, payload: bytes) -> bytes:
    """Flat binary image: magic, base address, length, payload."""
    return _MEM_MAGIC + struct.pack("<II", base, len(payload)) + payload


def load_memory_image(blob: bytes) -> tuple[int, bytes]:
    if blob[:8] != _MEM_MAGIC:
        raise MemoryAccessError("not a memory image (bad magic)")
    base, length = struct.unpack_from("<II", blob, 8)
    payload = blob[16:16 + length]
    if len(payload) != length:
        raise MemoryAccessError("truncated memory image")
    return base, payload


def to_hexdump(base: int, payload: bytes) -> str:
    """Sixteen bytes per line: `ADDRESS: BB BB ...`."""
    lines = []
    for off in range(0, len(payload), 16):
        chunk = payload[off:off + 16]
        lines.append(f"{base + off:08x}: " + " ".join(f"{b:02x}" for b in chunk))
    return "\n".join(lines) + ("\n" if lines else "")


def from_hexdump(text: str) -> tuple[int, bytes]:
    base = None
    chunks: list[tuple[int, bytes]] = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            addr_s, rest = line.split(":", 1)
            addr = int(addr_s, 16)
            data = bytes(int(tok, 16) for tok in rest.split())
        except ValueError as exc:
            raise MemoryAccessError(f"bad hexdump line {ln}: {line!r}") from exc
        if base is None:
            base = addr
        chunks.append((addr, data))
    if base is None:
        return 0, b""
    end = max(a + len(d) for a, d in chunks)
    buf = bytearray(end - base)
    for a, d in chunks:
        buf[a - base:a - base + len(d)] = d
    return base, bytes(buf)
