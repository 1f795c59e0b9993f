import sys
import numpy as np

from kgat.data import SynthConfig, VocabSpec, generate_biased, link_dataset, load_demo_graph, train_test_split
from kgat.fairness import AuditRecord, demographic_parity
from kgat.trainer import TrainerConfig, evaluate, train

g = load_demo_graph()

def run(seed, lam, adv_scale, noise, mprob, epochs, hidden):
    vocab = VocabSpec(marker_prob=mprob, content_noise=noise)
    data = link_dataset(generate_biased(SynthConfig(n=5000, beta=0.8, seed=seed, vocab=vocab)), g)
    cfg = TrainerConfig(learning_rate=1e-2, epochs=epochs, lam=lam, seed=seed,
                        adversary_lr_scale=adv_scale, adversary_hidden=hidden)
    model, hist = train(data, g, cfg)
    _, holdout = train_test_split(data, seed)
    ev = evaluate(model, holdout)
    acc = float(np.mean([e.y_pred == e.y_true for e in ev]))
    gap = demographic_parity([AuditRecord(e.y_true, e.y_pred, e.attribute) for e in ev]).gap
    return acc, gap, hist

cells = [
    (20, 2.0, 16),
    (20, 3.0, 16),
    (20, 2.0, 32),
    (10, 2.0, 32),
]
for epochs, scale, hidden in cells:
    wins = 0
    lines = []
    for seed in range(5):
        a0, g0, _ = run(seed, 0.0, scale, 0.2, 1.0, epochs, hidden)
        a1, g1, h1 = run(seed, 1.0, scale, 0.2, 1.0, epochs, hidden)
        red = (g0 - g1) / g0 if g0 > 0 else float("nan")
        ok = red >= 0.30 and (a0 - a1) <= 0.10
        wins += ok
        tail = [round(s.parity_gap, 2) for s in h1[-6:]]
        lines.append(f"    seed={seed} red={red:.2%} drop={a0-a1:+.3f} "
                     f"(lam0 {a0:.3f}/{g0:.3f} lam1 {a1:.3f}/{g1:.3f}) "
                     f"gaptail={tail} {'OK' if ok else 'FAIL'}")
    print(f"epochs={epochs} scale={scale} hidden={hidden}: {wins}/5")
    for ln in lines:
        print(ln)
    sys.stdout.flush()
