"""Diagnose majority-class collapse: alpha/lr grid on one household."""
import time

import numpy as np

from fedmeter import data as dp
from fedmeter.evaluation import classify, compute_metrics
from fedmeter.models import LstmClassifier, TrainConfig, train_local

profiles = dp.segment_daily(dp.synthesize_household(days=200, seed=3))
windows = dp.detect_usage_windows(profiles)
dataset = dp.build_dataset(profiles, windows, dp.AnomalyConfig(0.15, seed=3))
normalized, _ = dp.normalize(dataset)
train, test = dp.split(normalized, 0.8, seed=3)
x, y = train.profiles, train.labels.astype(float)

for alpha in (0.25, 0.75):
    for lr in (0.01, 0.003, 0.001):
        t0 = time.time()
        model = LstmClassifier(seed=0)
        cfg = TrainConfig(epochs=40, base_lr=lr, focal_alpha=alpha, seed=0)
        hist = train_local(model, x, y, cfg)
        m = compute_metrics(classify(model, test.profiles), test.labels)
        print(f"alpha={alpha} lr={lr}: loss {hist[-1]:.4f} acc {m.accuracy:.3f} "
              f"rec {m.recall:.3f} f1 {m.f1:.3f} ({time.time()-t0:.0f}s)", flush=True)
