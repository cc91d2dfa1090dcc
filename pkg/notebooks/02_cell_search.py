# %% [markdown]
# # Covering a top subgroup with cells
#
# Given a membership vector for a top subgroup, the lattice of small
# conjunctions is scored by TP - FP and a randomized greedy search builds a
# cover. Repeating the search and aggregating sub-cell hits gives a
# stability score per cell.

# %%
import numpy as np

from hte_cells._rng import derive_rng
from hte_cells.cellsearch import cell_search, enumerate_cells, stabilized_cell_search

rng = np.random.default_rng(0)
X = rng.integers(0, 2, (3000, 8))
names = [f"x{j}" for j in range(8)]
signal = ((X[:, 0] == 1) & (X[:, 1] == 1)) | ((X[:, 5] == 0) & (X[:, 6] == 1) & (X[:, 7] == 1))
top = np.where(signal, rng.random(3000) < 0.9, rng.random(3000) < 0.05)
lattice = enumerate_cells(X, names, m=3)
print(len(lattice.cells), "cells in the lattice")

# %%
runs = {}
for q in (0.2, 0.3):
    runs[q] = [cell_search(lattice, top, derive_rng(0, "demo", q, r), max_iter=3)
               for r in range(5)]
for r in runs[0.2]:
    print([str(c) for c in r.cells])

# %% [markdown]
# Stability uses each cell's size over the whole population.

# %%
sizes = {c: int(lattice.members(i).sum()) for i, c in enumerate(lattice.cells)}
table = stabilized_cell_search(runs, sizes)
print(table.to_csv())
