import numpy as np

from kgat.data import SynthConfig, VocabSpec, generate_biased, link_dataset, load_demo_graph, train_test_split
from kgat.fairness import AuditRecord, demographic_parity
from kgat.trainer import TrainerConfig, evaluate, train

g = load_demo_graph()

def run(seed, lam, adv_scale, noise, mprob):
    vocab = VocabSpec(marker_prob=mprob, content_noise=noise)
    data = link_dataset(generate_biased(SynthConfig(n=5000, beta=0.8, seed=seed, vocab=vocab)), g)
    cfg = TrainerConfig(learning_rate=1e-2, epochs=10, lam=lam, seed=seed,
                        adversary_lr_scale=adv_scale)
    model, hist = train(data, g, cfg)
    _, holdout = train_test_split(data, seed)
    ev = evaluate(model, holdout)
    acc = float(np.mean([e.y_pred == e.y_true for e in ev]))
    gap = demographic_parity([AuditRecord(e.y_true, e.y_pred, e.attribute) for e in ev]).gap
    return acc, gap

for noise in (0.15, 0.2):
    for scale in (2.0, 3.0, 5.0):
        wins = 0
        lines = []
        for seed in range(5):
            a0, g0 = run(seed, 0.0, scale, noise, 1.0)
            a1, g1 = run(seed, 1.0, scale, noise, 1.0)
            red = (g0 - g1) / g0 if g0 > 0 else float("nan")
            ok = red >= 0.30 and (a0 - a1) <= 0.10
            wins += ok
            lines.append(f"    seed={seed} red={red:.2%} drop={a0-a1:+.3f} "
                         f"(lam0 {a0:.3f}/{g0:.3f} lam1 {a1:.3f}/{g1:.3f}) {'OK' if ok else 'fail'}")
        print(f"noise={noise} scale={scale}: {wins}/5 seeds pass")
        for ln in lines:
            print(ln)
