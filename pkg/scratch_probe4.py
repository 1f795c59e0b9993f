import sys
import numpy as np

from kgat.data import SynthConfig, VocabSpec, generate_biased, link_dataset, load_demo_graph, train_test_split
from kgat.fairness import AuditRecord, demographic_parity
from kgat.trainer import TrainerConfig, evaluate, train

g = load_demo_graph()

def run(seed, lam, lr, adv_scale, hidden=16, noise=0.2, epochs=10):
    vocab = VocabSpec(marker_prob=1.0, content_noise=noise)
    data = link_dataset(generate_biased(SynthConfig(n=5000, beta=0.8, seed=seed, vocab=vocab)), g)
    cfg = TrainerConfig(learning_rate=lr, epochs=epochs, lam=lam, seed=seed,
                        adversary_lr_scale=adv_scale, adversary_hidden=hidden)
    model, hist = train(data, g, cfg)
    _, holdout = train_test_split(data, seed)
    ev = evaluate(model, holdout)
    acc = float(np.mean([e.y_pred == e.y_true for e in ev]))
    gap = demographic_parity([AuditRecord(e.y_true, e.y_pred, e.attribute) for e in ev]).gap
    return acc, gap, hist

for lr in (5e-3, 1e-2):
    for scale in (2.0, 3.0, 4.0):
        wins = 0
        worst = []
        for seed in range(5):
            a0, g0, _ = run(seed, 0.0, lr, scale)
            a1, g1, h1 = run(seed, 1.0, lr, scale)
            red = (g0 - g1) / g0 if g0 > 0 else float("nan")
            ok = red >= 0.30 and (a0 - a1) <= 0.10
            wins += ok
            worst.append(f"s{seed}:{red:.0%}/{a0-a1:+.2f}{'' if ok else '!'}")
        print(f"lr={lr} scale={scale}: {wins}/5   " + "  ".join(worst))
        sys.stdout.flush()
