"""Prognostic performance and index scoring.

Repeated 4/5 training splits on a clustered design give the C-index,
D-index and integrated prediction error of the SCAD-selected model.  The
second part scores donors with the bundled coefficient table, where the
reference donor has index exactly 1.

Run with ``python3 demos/03_prognostic_performance.py``.
"""

import numpy as np

from mcpsh.prognostics import load_coefficient_table, score_prognostic_index, split_eval
from mcpsh.simulate import generate, named_scenario, replication_rng

sc = named_scenario("table4", K=20, center_size=25, model="stratified-regular")
ds = generate(sc, replication_rng(seed=3, rep=0))
print(f"n={ds.n} in {ds.K} centers")

for model in ("stratified-regular", "pooled"):
    rep = split_eval(ds, model, "scad", splits=10, seed=1)
    s = rep.summary()
    line = "  ".join(f"{k} {v['mean']:.3f} (sd {v['se']:.3f})" for k, v in s.items())
    print(f"{model:<20}{line}")

table = load_coefficient_table()
ref = table["reference"]
donors = {
    "reference": ref,
    "age 50": {**ref, "age": 50},
    "age 65, hypertensive": {**ref, "age": 65, "hypertension": 1},
    "age 30, creatinine 2.0": {**ref, "age": 30, "creatinine": 2.0},
}
print(f"\n{'donor':<26}{'PI':>8}{'index':>8}")
for name, x in donors.items():
    pi, idx = score_prognostic_index(table, x)
    print(f"{name:<26}{pi:8.3f}{idx:8.3f}")
