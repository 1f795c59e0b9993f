import numpy as np

from kgat.data import SynthConfig, VocabSpec, generate_biased, link_dataset, load_demo_graph, train_test_split
from kgat.fairness import AuditRecord, demographic_parity
from kgat.trainer import TrainerConfig, evaluate, train

g = load_demo_graph()

def run(seed, lam, adv_scale=1.0, noise=0.1, mprob=0.95, epochs=10, hidden=16, lr=1e-2):
    vocab = VocabSpec(marker_prob=mprob, content_noise=noise)
    data = link_dataset(generate_biased(SynthConfig(n=5000, beta=0.8, seed=seed, vocab=vocab)), g)
    cfg = TrainerConfig(learning_rate=lr, epochs=epochs, lam=lam, seed=seed,
                        adversary_hidden=hidden, adversary_lr_scale=adv_scale)
    model, hist = train(data, g, cfg)
    _, holdout = train_test_split(data, seed)
    ev = evaluate(model, holdout)
    acc = float(np.mean([e.y_pred == e.y_true for e in ev]))
    gap = demographic_parity([AuditRecord(e.y_true, e.y_pred, e.attribute) for e in ev]).gap
    return acc, gap, hist

for adv_scale in (1.0, 5.0, 20.0):
    a0, g0, h0 = run(0, 0.0, adv_scale)
    a1, g1, h1 = run(0, 1.0, adv_scale)
    print(f"scale={adv_scale}: lam0 acc={a0:.3f} gap={g0:.3f} | lam1 acc={a1:.3f} gap={g1:.3f} "
          f"| red={(g0-g1)/g0:.2%} drop={a0-a1:.3f}")
    print("   lam1 L_adv per epoch:", [round(s.loss_adversary, 3) for s in h1])
    print("   lam1 gap per epoch:  ", [round(s.parity_gap, 3) for s in h1])
