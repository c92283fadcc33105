import os
import random
rng = random.Random(20240607)
N_BUS, N_MG, TOTAL_KW, TOTAL_HH, HMIN, HMAX = 124, 54, 6407.0, 7091, 16, 506
# household counts: fixed extremes, the rest log-uniform, then nudged to the total
hh = [HMIN, HMAX] + [int(round(10 ** rng.uniform(1.3, 2.4))) for _ in range(N_MG - 2)]
while sum(hh) != TOTAL_HH:
    k = rng.randrange(2, N_MG)
    step = 1 if sum(hh) < TOTAL_HH else -1
    if HMIN < hh[k] + step < HMAX:
        hh[k] += step
rng.shuffle(hh)
while True:
    resid = [rng.random() for _ in range(N_MG)]
    scale = (TOTAL_KW - 0.9 * TOTAL_HH) / sum(resid)
    if max(resid) * scale < 0.85:
        break
loads = [round(0.9 * h + r * scale, 3) for h, r in zip(hh, resid)]
loads[-1] = round(TOTAL_KW - sum(loads[:-1]), 3)
assert all(int(l / 0.9 + 1e-9) == h for l, h in zip(loads, hh)), "residual spilled over"
# radial tree: six feeders leaving the substation, then random attachment
parent = {1: None}
for b in range(2, 8):
    parent[b] = 1
for b in range(8, N_BUS + 1):
    parent[b] = rng.choice([p for p in parent if p != 1 and (p >= b - 25)])
buses = list(range(2, N_BUS + 1))
mg_buses = sorted(rng.sample(buses, N_MG))
load = {b: 0.0 for b in range(1, N_BUS + 1)}
for b, l in zip(mg_buses, loads):
    load[b] = l
down = dict(load)
for b in range(N_BUS, 1, -1):
    down[parent[b]] += down[b]
out = ["# Synthetic radial medium-voltage feeder: 124 buses, 54 microgrids, 6407 kW.", "baseMVA 10", "bus", "# id type Pd_kW"]
for b in range(1, N_BUS + 1):
    ty = 3 if b == 1 else (1 if b in mg_buses else 0)
    out.append(f"{b} {ty} {load[b]:g}")
out += ["branch", "# from to x_pu rate_kW"]
for b in range(2, N_BUS + 1):
    x = round(rng.uniform(0.005, 0.08), 4)
    rate = max(200, int(round(1.5 * down[b] / 10.0)) * 10)
    out.append(f"{parent[b]} {b} {x:g} {rate}")
out += ["end", ""]
open(os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data", "grids", "caseNW.case"), "w").write("\n".join(out))
print(sum(loads), sum(hh), min(hh), max(hh), len(mg_buses))
