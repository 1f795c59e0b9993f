import time

import numpy as np

from kgat.data import SynthConfig, generate_biased, link_dataset, load_demo_graph
from kgat.fairness import AuditRecord, demographic_parity
from kgat.graph import empty_graph, link_entities
from kgat.trainer import TrainerConfig, evaluate, train
from kgat.data import train_test_split

t0 = time.time()
g = load_demo_graph()
for kg_on in (True, False):
    graph = g if kg_on else None
    for seed in range(5):
        data = generate_biased(SynthConfig(n=5000, beta=0.8, seed=seed))
        if kg_on:
            data = link_dataset(data, g)
        row = {}
        for lam in (0.0, 1.0):
            cfg = TrainerConfig(learning_rate=1e-2, epochs=10, lam=lam, seed=seed)
            t1 = time.time()
            model, hist = train(data, graph, cfg)
            _, holdout = train_test_split(data, seed)
            ev = evaluate(model, holdout)
            acc = float(np.mean([e.y_pred == e.y_true for e in ev]))
            gap = demographic_parity([AuditRecord(e.y_true, e.y_pred, e.attribute) for e in ev]).gap
            row[lam] = (acc, gap, time.time() - t1)
        (a0, g0, t_0), (a1, g1, t_1) = row[0.0], row[1.0]
        red = (g0 - g1) / g0 if g0 > 0 else float("nan")
        print(f"kg={kg_on} seed={seed} | lam0 acc={a0:.3f} gap={g0:.3f} ({t_0:.1f}s)"
              f" | lam1 acc={a1:.3f} gap={g1:.3f} ({t_1:.1f}s) | red={red:.2%} accdrop={a0-a1:.3f}")
print(f"TOTAL {time.time()-t0:.1f}s")
