"""Train a small LSTM on one household and attack it at inference time.

Shows the signed-gradient mechanics: FGSM moves every input coordinate by
exactly epsilon, PGD compounds the effect over 10 iterations, and AWGNmostly
bounces off.  Finishes by dumping the adversarial samples in the export
schema.

Run:  python3 demos/02_attacks_on_a_trained_model.py
"""

import numpy as np

from fedmeter import data as dp
from fedmeter.attacks import awgn, dump_adversarial_csv, fgsm, pgd
from fedmeter.evaluation import asr_inference, classify, compute_metrics
from fedmeter.models import LstmClassifier, TrainConfig, train_local
from fedmeter.seeding import rng_for

# one household -> labeled, normalized, split
profiles = dp.segment_daily(dp.synthesize_household(days=200, seed=3))
windows = dp.detect_usage_windows(profiles)
dataset = dp.build_dataset(profiles, windows, dp.AnomalyConfig(0.15, seed=3))
normalized, _ = dp.normalize(dataset)
train, test = dp.split(normalized, 0.8, seed=3)

model = LstmClassifier(seed=0)
cfg = TrainConfig(epochs=30, seed=0)
train_local(model, train.profiles, train.labels.astype(float), cfg)

x, y = test.profiles, test.labels
clean = compute_metrics(classify(model, x), y)
print(f"clean test accuracy {clean.accuracy:.3f}, f1 {clean.f1:.3f}")

for name, adv in [
        ("AWGN s2=0.1", awgn(x, 0.1, rng_for(0, "demo-awgn"))),
        ("FGSM  e=0.5", fgsm(model, x, y, 0.5)),
        ("PGD   e=0.5", pgd(model, x, y, 0.5, iters=10))]:
    metrics = compute_metrics(classify(model, adv), y)
    report = asr_inference(model, x, adv)
    shift = np.abs(adv - x).max()
    print(f"{name}: accuracy {metrics.accuracy:.3f}, ASR {report.asr:.3f}, "
          f"max |delta| {shift:.2f}")

x_adv = fgsm(model, x, y, 0.5)
dump_adversarial_csv(x_adv, y, list(test.kinds), "fgsm", 0.5,
                     "demo_adversarial_test.csv")
print("wrote demo_adversarial_test.csv (export schema + attack columns)")
