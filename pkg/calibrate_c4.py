"""Calibration: clean-baseline competence at full desk scale (19x365)."""
import time

import numpy as np

from fedmeter.evaluation import classify, compute_metrics
from fedmeter.experiment import (ExperimentConfig, build_client_data, pooled,
                                 recommended_train_config, config_from_dict)
from fedmeter.federation import global_model, run_centralized, run_federation
from fedmeter.experiment import _make_state
from fedmeter.seeding import derive_seed

cfg = config_from_dict({"master_seed": 0, "data": {"households": 19, "days": 365}})
t0 = time.time()
clients = build_client_data(cfg)
x_test, y_test, _ = pooled([c.test for c in clients])
x_train, y_train, _ = pooled([c.train for c in clients])
print(f"data built in {time.time()-t0:.0f}s: train {len(x_train)}, test {len(x_test)}, "
      f"anomaly share {y_test.mean():.4f}")

for model_name, epochs_list in (("lstm", [6, 12]), ("transformer", [4, 8])):
    tc = recommended_train_config(model_name, seed=0)
    # central
    t0 = time.time()
    from fedmeter.models import make_model, train_local, RmsProp
    model = make_model(model_name, seed=derive_seed(0, "central-init"))
    opt = RmsProp(tc.rho, tc.eps_opt)
    done = 0
    for epochs in epochs_list:
        train_local(model, x_train, y_train, tc, seed=0, epochs=epochs - done,
                    epoch_offset=done, optimizer=opt)
        done = epochs
        m = compute_metrics(classify(model, x_test), y_test)
        print(f"{model_name} central e={epochs}: acc {m.accuracy:.4f} f1 {m.f1:.4f} "
              f"({time.time()-t0:.0f}s)")

    # federated
    t0 = time.time()
    state = _make_state(cfg if model_name == "lstm" else
                        config_from_dict({"master_seed": 0, "model": "transformer",
                                          "data": {"households": 19, "days": 365}}),
                        clients, frozenset())
    done = 0
    for rounds in epochs_list:
        run_federation(state, model_name, tc, rounds - done, eval_every=10**9)
        done = rounds
        gm = global_model(state, model_name)
        m = compute_metrics(classify(gm, x_test), y_test)
        print(f"{model_name} federated r={rounds}: acc {m.accuracy:.4f} f1 {m.f1:.4f} "
              f"({time.time()-t0:.0f}s)")
