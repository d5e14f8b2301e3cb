"""Hanging nodes and conforming P1 functions.

Refining the same corner twice leaves coarse edges carrying two or three
hanging vertices. Their values are fixed by the edge endpoints, so any
coefficient vector yields a continuous function. Run with
``python demos/hanging_nodes.py``.
"""

# %%
import numpy as np

from sscmg.multigrid import HierarchyConfig, build_hierarchy
from sscmg.space import evaluate_points, nodal_values

# %%
h = build_hierarchy(HierarchyConfig(application="local_nested", J=3))
top = h.levels[-1]
print(f"{top.mesh.n_triangles} triangles, {len(top.mesh.hanging)} hanging vertices, {top.dim} DoFs")
for rec in top.mesh.hanging:
    print(f"  vertex {rec.hanging_vertex} at {top.mesh.vertices[rec.hanging_vertex]} "
          f"hangs on edge {rec.edge}")

# %% [markdown]
# A hanging vertex takes the mean of its edge endpoints, which may
# themselves be hanging. The interpolated value along the constrained
# edge is therefore linear.

# %%
v = nodal_values(top.space, np.random.default_rng(0).standard_normal(top.dim))
for rec in top.mesh.hanging:
    a, b = rec.edge
    print(f"  u({rec.hanging_vertex}) = {v[rec.hanging_vertex]: .6f}, "
          f"mean of endpoints = {0.5 * (v[a] + v[b]): .6f}")

# %% [markdown]
# Sampling across the line x = 0.5 from both sides shows no jump.

# %%
ys = np.linspace(0.05, 0.45, 9)
c = np.random.default_rng(1).standard_normal(top.dim)
left = evaluate_points(top.space, c, np.column_stack([np.full_like(ys, 0.5 - 1e-13), ys]))
right = evaluate_points(top.space, c, np.column_stack([np.full_like(ys, 0.5 + 1e-13), ys]))
print("largest jump across x = 0.5:", float(np.abs(left - right).max()))
