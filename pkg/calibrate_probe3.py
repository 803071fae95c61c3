"""Probe 3: small-scale (19x60d, anomaly 0.25) trend feasibility.

Checks whether both models learn at the reduced scale used by the ordering
criteria, and whether the five-way training-attack ordering emerges for the
LSTM on one seed.
"""
import sys
import time

from fedmeter.attacks import AttackSpec
from fedmeter.evaluation import classify, compute_metrics
from fedmeter.experiment import (_make_state, _pick_malicious, build_client_data,
                                 config_from_dict, pooled)
from fedmeter.federation import global_model, run_federation
from fedmeter.models import TrainConfig

ALPHA = float(sys.argv[1]) if len(sys.argv) > 1 else 0.75
TLR = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3

cfg = config_from_dict({
    "master_seed": 42,
    "data": {"households": 19, "days": 60, "anomaly_fraction": 0.25},
    "federation": {"rounds": 12, "malicious_count": 9, "poison_fraction": 0.3},
})
clients = build_client_data(cfg)
x_test, y_test, _ = pooled([c.test for c in clients])
print(f"test size {len(x_test)}, anomaly share {y_test.mean():.3f}", flush=True)

ATTACKS = {
    "none": AttackSpec(),
    "awgn": AttackSpec(family="awgn", awgn_variance=0.1),
    "label_flip": AttackSpec(family="label_flip", flip_fraction=1.0),
    "fgsm": AttackSpec(family="fgsm", epsilon=0.5),
    "pgd": AttackSpec(family="pgd", epsilon=0.5, pgd_iters=10),
}

for model_name, lr, rounds in (("lstm", 0.01, 12), ("transformer", TLR, 12)):
    tc = TrainConfig(base_lr=lr, focal_alpha=ALPHA, seed=0)
    accs = {}
    for name, spec in ATTACKS.items():
        t0 = time.time()
        malicious = frozenset() if name == "none" else _pick_malicious(cfg, clients, 9)
        state = _make_state(cfg, clients, malicious, spec)
        run_federation(state, model_name, tc, rounds, eval_every=10**9)
        m = compute_metrics(classify(global_model(state, model_name), x_test), y_test)
        accs[name] = m.accuracy
        print(f"{model_name} {name}: acc {m.accuracy:.3f} f1 {m.f1:.3f} "
              f"({time.time()-t0:.0f}s)", flush=True)
    order = (accs["pgd"] < accs["fgsm"] < accs["label_flip"] < accs["awgn"]
             <= accs["none"])
    print(f"{model_name} ordering pgd<fgsm<lf<awgn<=none: {order}  {accs}", flush=True)
