"""Probe 2: transformer (alpha, lr) grid centrally; LSTM federated round count."""
import time

from fedmeter.evaluation import classify, compute_metrics
from fedmeter.experiment import _make_state, build_client_data, config_from_dict, pooled
from fedmeter.federation import global_model, run_centralized, run_federation
from fedmeter.models import TrainConfig

cfg = config_from_dict({"master_seed": 0, "data": {"households": 19, "days": 365}})
clients = build_client_data(cfg)
x_test, y_test, _ = pooled([c.test for c in clients])
x_train, y_train, _ = pooled([c.train for c in clients])

print("== transformer central grid", flush=True)
for alpha in (0.75, 0.25):
    for lr in (1e-3, 3e-4):
        t0 = time.time()
        tc = TrainConfig(base_lr=lr, focal_alpha=alpha, seed=0)
        model, hist = run_centralized(x_train, y_train, "transformer", tc,
                                      epochs=4, seed=0)
        m = compute_metrics(classify(model, x_test), y_test)
        print(f"transformer central alpha={alpha} lr={lr}: loss {hist[-1]:.4f} "
              f"acc {m.accuracy:.3f} f1 {m.f1:.3f} ({time.time()-t0:.0f}s)", flush=True)

print("== lstm federated round scaling", flush=True)
for alpha in (0.25, 0.75):
    tc = TrainConfig(focal_alpha=alpha, seed=0)
    state = _make_state(cfg, clients, frozenset())
    t0 = time.time()
    done = 0
    for rounds in (20, 40, 60):
        run_federation(state, "lstm", tc, rounds - done, eval_every=10**9)
        done = rounds
        m = compute_metrics(classify(global_model(state, "lstm"), x_test), y_test)
        print(f"lstm federated alpha={alpha} r={rounds}: acc {m.accuracy:.3f} "
              f"f1 {m.f1:.3f} ({time.time()-t0:.0f}s)", flush=True)
