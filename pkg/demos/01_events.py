"""Loading an event stream and turning it into interval counts.

Run from the repository root::

    python3 demos/01_events.py
"""
from pathlib import Path

import numpy as np

from latentrem.events import discretize, load_events

DATA = Path(__file__).parent / "data" / "toy_events.tsv"

registry, events, n_loops = load_events(DATA)
print(f"{events.n} events among {registry.p} nodes on [0, {events.horizon:.3f}], {n_loops} self-loops dropped")
print("first node ids:", [registry.id(i) for i in range(4)])

# Twenty equal intervals. Only nonzero cells are stored.
counts = discretize(events, 20)
print(f"{counts.n_positive} nonzero cells out of {counts.n_cells}, total count {counts.total}")
assert counts.total == events.n

# Boundaries can also be given explicitly, for instance finer at the start.
edges = np.concatenate([[0.0], np.geomspace(0.05, events.horizon, 8)])
uneven = discretize(events, boundaries=edges)
print("interval widths:", np.round(uneven.widths, 3))

# Restricting to a node subset keeps only the events inside it, reindexed.
inner = events.restrict(np.arange(8))
print(f"{inner.n} events among the first 8 nodes")
