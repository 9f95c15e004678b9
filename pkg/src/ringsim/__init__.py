"""ringsim: numerically exact engine and interconnect timing simulator for
ring-based sequence-parallel attention schedules.

The package splits into five layers:

* :mod:`ringsim.core` - blockwise attention, the log-sum-exp merge rule, and
  a dense single-pass oracle for verification;
* :mod:`ringsim.partition` - contiguous and zigzag token partitioning plus
  causal work accounting;
* :mod:`ringsim.engine` - explicit per-step schedules (ring, token ring,
  zigzag token ring, hybrid multi-node) and a deterministic executor;
* :mod:`ringsim.netsim` - topology models and per-step timing with
  compute/communication overlap, plus a Chrome trace emitter;
* :mod:`ringsim.cli` - the ``ringsim`` command (verify / simulate / compare /
  volume).

Numeric kernels run on a compiled Cython backend when built, with a pure
numpy fallback selected at import (see :mod:`ringsim.kernels`).
"""

from .core import (MaskKind, MaskSpec, Partial, block_attention,
                   dense_attention_oracle, max_relative_error, merge_partial)
from .engine import (MessageTrace, MsgKind, Schedule, build_hybrid,
                     build_ring_attention, build_token_ring,
                     build_zigzag_token_ring, comm_volume, execute,
                     trace_from_schedule)
from .errors import (ConfigError, DimensionError, InputError, RingsimError,
                     ScheduleError, TopologyError)
from .kernels import BACKEND as KERNEL_BACKEND
from .netsim import (TimingModel, Timeline, Topology, emit_chrome_trace,
                     load_matrix, make_full_mesh, make_ring, make_switch,
                     simulate)
from .partition import (Partition, causal_work_count, gather_local,
                        global_reorder, split_contiguous, split_zigzag)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "InputError", "KERNEL_BACKEND",
    "MaskKind", "MaskSpec", "MessageTrace", "MsgKind", "Partial", "Partition",
    "RingsimError", "Schedule", "ScheduleError", "TimingModel", "Timeline",
    "Topology", "TopologyError", "block_attention", "build_hybrid",
    "build_ring_attention", "build_token_ring", "build_zigzag_token_ring",
    "causal_work_count", "comm_volume", "dense_attention_oracle",
    "emit_chrome_trace", "execute", "gather_local", "global_reorder",
    "load_matrix", "make_full_mesh", "make_ring", "make_switch",
    "max_relative_error", "merge_partial", "simulate", "split_contiguous",
    "split_zigzag", "trace_from_schedule",
]
