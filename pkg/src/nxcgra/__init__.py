"""Cycle-level model and toolchain for a heterogeneous CGRA edge accelerator.

Subpackages and modules:

  isa        VLIW word layout, encoding, functional-unit semantics
  fabric     core array, torus topology, context images
  memory     banked L1, arbitration, address generators
  engine     lockstep cycle simulator (barriers, latency, counters)
  assembler  .nxasm text <-> context images
  mapper     baseline dataflow-graph placer/scheduler + validator
  kernels    benchmark suite, golden integer oracles, microcode builders
  metrics    throughput/energy/area reporting
  cli        command-line driver
"""

__version__ = "0.1.0"
