"""Declarative experiment runner.

A single JSON config describes data source, model, training setting
(central or federated), attack, protocol, and seeds; ``run_experiment``
executes the full pipeline and writes a metrics CSV, per-round logs,
tidy plot data for the sweep figures, a config snapshot, and a manifest
of every derived seed.  Repeating a run with the same master seed
reproduces the metrics files byte for byte on one platform.

Protocols
---------
baseline          train clean, evaluate on the clean test set
inference_attack  train clean, evaluate on a fully perturbed test set
training_attack   train under data poisoning, evaluate on the clean test set
sweep_epsilon     training_attack at each epsilon for FGSM and PGD (federated)
sweep_malicious   training_attack at each malicious-client fraction, PGD (federated)
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data as dp
from .attacks import (ATTACK_FAMILIES, AttackSpec, awgn, dump_adversarial_csv, fgsm,
                      label_flip, pgd)
from .evaluation import (AsrReport, asr_inference, asr_training, classify,
                         compute_metrics, metrics_row, write_metrics_csv)
from .federation import (ClientNode, global_model, init_state, run_centralized,
                         run_federation)
from .models import TrainConfig, save_weights
from .seeding import derive_seed, rng_for

OUTPUT_ROOT_ENV = "FEDMETER_OUTPUT_ROOT"

PROTOCOLS = ("baseline", "inference_attack", "training_attack",
             "sweep_epsilon", "sweep_malicious")

DEFAULT_EPSILON_LIST = (0.1, 0.2, 0.4, 0.5, 0.8)
DEFAULT_MALICIOUS_FRACTION_LIST = (0.1, 0.2, 0.3, 0.5)


class ConfigError(ValueError):
    """Invalid or contradictory experiment configuration."""


@dataclass
class DataConfig:
    source: str = "synthetic"      # synthetic | csv
    csv_path: str | None = None
    households: int = 19
    days: int = 365
    anomaly_fraction: float = 0.10
    r_range: tuple[float, float] = (0.5, 1.5)
    kind_weights: dict[str, float] | None = None  # None: uniform over the kinds
    train_fraction: float = 0.8


@dataclass
class FederationConfig:
    rounds: int = 100
    clients_per_round: int | None = None  # None: every client, every round
    local_epochs: int = 1
    malicious_count: int = 0
    poison_fraction: float = 0.3


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: str = "lstm"
    setting: str = "federated"     # central | federated
    protocol: str = "baseline"
    master_seed: int = 0
    threshold: float = 0.5
    output_dir: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    epsilon_list: tuple[float, ...] = DEFAULT_EPSILON_LIST
    malicious_fraction_list: tuple[float, ...] = DEFAULT_MALICIOUS_FRACTION_LIST


def recommended_train_config(model_name: str, **overrides) -> TrainConfig:
    """Desk-scale training defaults.

    The LSTM takes the reference schedule as-is.  The from-scratch
    transformer collapses to a constant predictor at the reference 0.01
    learning rate, so its desk preset starts at 1e-3.
    """
    base = {"base_lr": 1e-3} if model_name == "transformer" else {}
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# config (de)serialization and validation

def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["epsilon_list"] = list(cfg.epsilon_list)
    out["malicious_fraction_list"] = list(cfg.malicious_fraction_list)
    out["data"]["r_range"] = list(cfg.data.r_range)
    out["train"]["lr_milestones"] = list(cfg.train.lr_milestones)
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    sections = {}
    for key, cls in (("data", DataConfig), ("federation", FederationConfig),
                     ("attack", AttackSpec), ("train", TrainConfig)):
        body = dict(raw.pop(key, {}))
        if key == "data" and "r_range" in body:
            body["r_range"] = tuple(body["r_range"])
        if key == "train" and "lr_milestones" in body:
            body["lr_milestones"] = tuple(body["lr_milestones"])
        try:
            sections[key] = cls(**body)
        except TypeError as exc:
            raise ConfigError(f"bad '{key}' section: {exc}") from None
    for listy in ("epsilon_list", "malicious_fraction_list"):
        if listy in raw:
            raw[listy] = tuple(raw[listy])
    try:
        return ExperimentConfig(**raw, **sections)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def apply_override(cfg_dict: dict, dotted: str, value: str) -> None:
    """Apply one ``section.key=value`` command-line override in place."""
    keys = dotted.split(".")
    node = cfg_dict
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    try:
        node[keys[-1]] = json.loads(value)
    except json.JSONDecodeError:
        node[keys[-1]] = value


def validate_config(cfg: ExperimentConfig) -> tuple[ExperimentConfig, dict[str, int]]:
    """Check the config, fill derived values, and list every derived seed.

    All violations are collected and reported together.
    """
    problems = []
    if cfg.model not in ("lstm", "transformer"):
        problems.append(f"unknown model {cfg.model!r}")
    if cfg.setting not in ("central", "federated"):
        problems.append(f"unknown setting {cfg.setting!r}")
    if cfg.protocol not in PROTOCOLS:
        problems.append(f"unknown protocol {cfg.protocol!r}")
    if cfg.attack.family not in ATTACK_FAMILIES:
        problems.append(f"unknown attack family {cfg.attack.family!r}")
    if not (0.0 < cfg.threshold < 1.0):
        problems.append(f"threshold must be in (0,1), got {cfg.threshold}")
    if not (0.0 < cfg.data.train_fraction < 1.0):
        problems.append("data.train_fraction must be in (0,1)")
    if cfg.data.source not in ("synthetic", "csv"):
        problems.append(f"unknown data source {cfg.data.source!r}")
    if cfg.data.source == "csv" and not cfg.data.csv_path:
        problems.append("data.source is csv but data.csv_path is missing")
    if cfg.data.source == "synthetic":
        if cfg.data.households < 1:
            problems.append("data.households must be >= 1")
        if cfg.data.days < 2:
            problems.append("data.days must be >= 2")
    if cfg.federation.malicious_count > cfg.data.households:
        problems.append(f"malicious_count {cfg.federation.malicious_count} exceeds "
                        f"households {cfg.data.households}")
    if cfg.federation.malicious_count < 0:
        problems.append("malicious_count must be >= 0")
    if not (0.0 <= cfg.federation.poison_fraction <= 1.0):
        problems.append("poison_fraction must be in [0,1]")
    if cfg.setting == "central":
        if cfg.federation.malicious_count > 0:
            problems.append("central setting contradicts malicious_count > 0")
        if cfg.federation.clients_per_round is not None:
            problems.append("central setting contradicts clients_per_round")
    else:
        n = cfg.federation.clients_per_round
        if n is not None and not (1 <= n <= cfg.data.households):
            problems.append(f"clients_per_round {n} outside [1, households]")
    if cfg.protocol in ("inference_attack", "training_attack") \
            and cfg.attack.family == "none":
        problems.append(f"{cfg.protocol} requires an attack family")
    if cfg.protocol == "baseline" and cfg.attack.family != "none":
        problems.append("baseline protocol contradicts a configured attack")
    if cfg.protocol in ("sweep_epsilon", "sweep_malicious") and cfg.setting != "federated":
        problems.append(f"{cfg.protocol} runs in the federated setting only")
    if cfg.protocol == "sweep_epsilon" and not cfg.epsilon_list:
        problems.append("sweep_epsilon needs a non-empty epsilon_list")
    if cfg.protocol == "sweep_malicious":
        if not cfg.malicious_fraction_list:
            problems.append("sweep_malicious needs a non-empty malicious_fraction_list")
        elif any(not (0.0 < f <= 1.0) for f in cfg.malicious_fraction_list):
            problems.append("malicious fractions must be in (0,1]")
    if problems:
        raise ConfigError("invalid config:\n  - " + "\n  - ".join(problems))

    seeds = {
        "master": cfg.master_seed,
        "data": derive_seed(cfg.master_seed, "data"),
        "inject": derive_seed(cfg.master_seed, "inject"),
        "split": derive_seed(cfg.master_seed, "split"),
        "malicious-assignment": derive_seed(cfg.master_seed, "malicious"),
        "federation": derive_seed(cfg.master_seed, "federation"),
        "central": derive_seed(cfg.master_seed, "central"),
        "attack-eval": derive_seed(cfg.master_seed, "attack-eval"),
    }
    return cfg, seeds


# ---------------------------------------------------------------------------
# data assembly

@dataclass
class ClientData:
    client_id: str
    train: dp.LabeledDataset
    test: dp.LabeledDataset
    windows: dp.UsageWindows
    scaling: dp.ScalingRecord


def build_client_data(cfg: ExperimentConfig) -> list[ClientData]:
    """Per-household pipeline: series -> profiles -> windows -> labeled,
    normalized, split datasets."""
    dcfg = cfg.data
    if dcfg.source == "csv":
        series_by_household = dp.ingest_csv(dcfg.csv_path)
        items = sorted(series_by_household.items())
    else:
        items = []
        for h in range(dcfg.households):
            hid = f"h{h:02d}"
            items.append((hid, dp.synthesize_household(
                dcfg.days, seed=derive_seed(cfg.master_seed, "data", h),
                household_id=hid)))

    clients = []
    for ordinal, (hid, series) in enumerate(items):
        profiles = dp.segment_daily(series)
        windows = dp.detect_usage_windows(profiles)
        anomaly_cfg = dp.AnomalyConfig(
            anomaly_fraction=dcfg.anomaly_fraction,
            kind_weights=(dcfg.kind_weights or
                          {k: 1.0 / len(dp.ANOMALY_KINDS) for k in dp.ANOMALY_KINDS}),
            r_range=dcfg.r_range,
            seed=derive_seed(cfg.master_seed, "inject", ordinal))
        labeled = dp.build_dataset(profiles, windows, anomaly_cfg)
        normalized, scaling = dp.normalize(labeled)
        train, test = dp.split(normalized, dcfg.train_fraction,
                               seed=derive_seed(cfg.master_seed, "split", ordinal))
        clients.append(ClientData(hid, train, test, windows, scaling))
    return clients


def pooled(datasets: list[dp.LabeledDataset]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    x = np.vstack([d.profiles for d in datasets])
    y = np.concatenate([d.labels for d in datasets])
    kinds = [k for d in datasets for k in d.kinds]
    return x, y, kinds


# ---------------------------------------------------------------------------
# experiment execution

@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[list[str]]          # metrics.csv rows
    sweep_points: list[dict]       # per-point records for plot export
    output_dir: str
    files: list[str]


def _resolve_output_dir(cfg: ExperimentConfig) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    out = cfg.output_dir
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    return out


def _setting_label(cfg: ExperimentConfig) -> str:
    arch = "LSTM" if cfg.model == "lstm" else "Transformer"
    return f"{arch} ({'Central' if cfg.setting == 'central' else 'FL'})"


def _attack_label(spec: AttackSpec) -> str:
    return {"none": "No Attack", "fgsm": "FGSM", "pgd": "PGD", "awgn": "AWGN",
            "label_flip": "Label Flip"}[spec.family]


def _train_clean(cfg: ExperimentConfig, clients: list[ClientData], out_dir: str,
                 label: str):
    """Clean training in the configured setting; returns the trained model."""
    if cfg.setting == "central":
        x, y, _ = pooled([c.train for c in clients])
        model, _ = run_centralized(x, y, cfg.model, cfg.train,
                                   epochs=cfg.train.epochs,
                                   seed=derive_seed(cfg.master_seed, "central"))
        return model
    state = _make_state(cfg, clients, malicious_ids=frozenset())
    x_test, y_test, _ = pooled([c.test for c in clients])
    run_federation(state, cfg.model, cfg.train, cfg.federation.rounds,
                   eval_x=x_test, eval_y=y_test,
                   eval_every=max(1, cfg.federation.rounds // 10),
                   threshold=cfg.threshold,
                   log_path=os.path.join(out_dir, f"rounds_{label}.jsonl"))
    return global_model(state, cfg.model)


def _make_state(cfg: ExperimentConfig, clients: list[ClientData],
                malicious_ids: frozenset[str], attack: AttackSpec | None = None):
    nodes = []
    for c in clients:
        mal = c.client_id in malicious_ids
        nodes.append(ClientNode(
            c.client_id, c.train.profiles, c.train.labels.astype(np.float64),
            malicious=mal,
            attack=(attack if mal and attack is not None else AttackSpec()),
            poison_fraction=cfg.federation.poison_fraction))
    return init_state(cfg.model, nodes,
                      clients_per_round=cfg.federation.clients_per_round,
                      local_epochs=cfg.federation.local_epochs,
                      seed=derive_seed(cfg.master_seed, "federation"))


def _pick_malicious(cfg: ExperimentConfig, clients: list[ClientData],
                    count: int) -> frozenset[str]:
    rng = rng_for(cfg.master_seed, "malicious")
    idx = rng.choice(len(clients), size=count, replace=False)
    return frozenset(clients[i].client_id for i in sorted(idx))


def _train_attacked(cfg: ExperimentConfig, clients: list[ClientData], out_dir: str,
                    label: str, attack: AttackSpec, malicious_count: int):
    if cfg.setting == "central":
        x, y, _ = pooled([c.train for c in clients])
        model, _ = run_centralized(
            x, y, cfg.model, cfg.train, attack=attack,
            poison_fraction=cfg.federation.poison_fraction,
            epochs=cfg.train.epochs,
            seed=derive_seed(cfg.master_seed, "central"))
        return model
    malicious_ids = _pick_malicious(cfg, clients, malicious_count)
    state = _make_state(cfg, clients, malicious_ids, attack)
    x_test, y_test, _ = pooled([c.test for c in clients])
    run_federation(state, cfg.model, cfg.train, cfg.federation.rounds,
                   eval_x=x_test, eval_y=y_test,
                   eval_every=max(1, cfg.federation.rounds // 10),
                   threshold=cfg.threshold,
                   log_path=os.path.join(out_dir, f"rounds_{label}.jsonl"))
    return global_model(state, cfg.model)


def _perturb_test_set(cfg: ExperimentConfig, model, x: np.ndarray,
                      y: np.ndarray) -> np.ndarray:
    spec = cfg.attack
    if spec.family == "fgsm":
        return fgsm(model, x, y, spec.epsilon,
                    alpha=cfg.train.focal_alpha, gamma=cfg.train.focal_gamma)
    if spec.family == "pgd":
        return pgd(model, x, y, spec.epsilon, spec.pgd_iters,
                   project=spec.project_linf, eps_ball=spec.eps_ball,
                   alpha=cfg.train.focal_alpha, gamma=cfg.train.focal_gamma)
    if spec.family == "awgn":
        return awgn(x, spec.awgn_variance, rng_for(cfg.master_seed, "attack-eval"))
    if spec.family == "label_flip":
        raise ConfigError("label_flip is a training-time attack; it has no "
                          "inference-time variant")
    raise ConfigError(f"no inference-time perturbation for {spec.family!r}")


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    cfg, seeds = validate_config(cfg)
    out_dir = _resolve_output_dir(cfg)
    clients = build_client_data(cfg)
    x_test, y_test, kinds_test = pooled([c.test for c in clients])
    label_setting = _setting_label(cfg)
    rows: list[list[str]] = []
    sweep_points: list[dict] = []
    files: list[str] = []

    def emit(path_name: str, writer) -> str:
        path = os.path.join(out_dir, path_name)
        writer(path)
        files.append(path)
        return path

    if cfg.protocol == "baseline":
        model = _train_clean(cfg, clients, out_dir, "clean")
        metrics = compute_metrics(classify(model, x_test, cfg.threshold), y_test)
        rows.append(metrics_row(label_setting, "No Attack", metrics, None))
        emit("final_clean.ckpt", lambda p: save_weights(model.get_weights(), p))

    elif cfg.protocol == "inference_attack":
        model = _train_clean(cfg, clients, out_dir, "clean")
        x_adv = _perturb_test_set(cfg, model, x_test, y_test)
        metrics = compute_metrics(classify(model, x_adv, cfg.threshold), y_test)
        report = asr_inference(model, x_test, x_adv, cfg.threshold)
        rows.append(metrics_row(label_setting, _attack_label(cfg.attack), metrics, report))
        emit("adversarial_test.csv",
             lambda p: dump_adversarial_csv(x_adv, y_test, kinds_test,
                                            cfg.attack.family, cfg.attack.epsilon, p))
        emit("final_clean.ckpt", lambda p: save_weights(model.get_weights(), p))

    elif cfg.protocol == "training_attack":
        clean = _train_clean(cfg, clients, out_dir, "clean")
        attacked = _train_attacked(cfg, clients, out_dir, f"attacked_{cfg.attack.family}",
                                   cfg.attack, cfg.federation.malicious_count)
        clean_metrics = compute_metrics(classify(clean, x_test, cfg.threshold), y_test)
        rows.append(metrics_row(label_setting, "No Attack", clean_metrics, None))
        metrics = compute_metrics(classify(attacked, x_test, cfg.threshold), y_test)
        report = asr_training(clean, attacked, x_test, cfg.threshold)
        rows.append(metrics_row(label_setting, _attack_label(cfg.attack), metrics, report))
        emit("final_clean.ckpt", lambda p: save_weights(clean.get_weights(), p))
        emit(f"final_{cfg.attack.family}.ckpt",
             lambda p: save_weights(attacked.get_weights(), p))

    elif cfg.protocol == "sweep_epsilon":
        for family in ("fgsm", "pgd"):
            for eps in cfg.epsilon_list:
                spec = replace(cfg.attack, family=family, epsilon=eps)
                point_cfg = replace(
                    cfg, attack=spec,
                    master_seed=derive_seed(cfg.master_seed, "sweep-eps", family,
                                            f"{eps:.6g}"))
                label = f"eps{eps:g}_{family}"
                model = _train_attacked(point_cfg, clients, out_dir, label, spec,
                                        cfg.federation.malicious_count)
                metrics = compute_metrics(classify(model, x_test, cfg.threshold), y_test)
                rows.append(metrics_row(label_setting, f"{_attack_label(spec)} "
                                        f"eps={eps:g}", metrics, None))
                sweep_points.append({"figure": "fig5b", "epsilon": eps,
                                     "attack": family, "accuracy": metrics.accuracy})

    elif cfg.protocol == "sweep_malicious":
        for frac in cfg.malicious_fraction_list:
            count = max(1, int(round(frac * len(clients))))
            spec = replace(cfg.attack, family=cfg.attack.family
                           if cfg.attack.family != "none" else "pgd")
            point_cfg = replace(
                cfg, attack=spec,
                master_seed=derive_seed(cfg.master_seed, "sweep-mal", f"{frac:.6g}"))
            label = f"mal{frac:g}"
            model = _train_attacked(point_cfg, clients, out_dir, label, spec, count)
            metrics = compute_metrics(classify(model, x_test, cfg.threshold), y_test)
            rows.append(metrics_row(label_setting,
                                    f"{_attack_label(spec)} malicious={frac:g}",
                                    metrics, None))
            sweep_points.append({"figure": "fig5a", "malicious_fraction": frac,
                                 "attack": spec.family, "accuracy": metrics.accuracy})

    emit("metrics.csv", lambda p: write_metrics_csv(rows, p))
    result = RunResult(cfg, rows, sweep_points, out_dir, files)
    if sweep_points:
        for path in emit_plot_data(result):
            files.append(path)
    _write_snapshot_and_manifest(cfg, seeds, out_dir, files)
    return result


def emit_plot_data(result: RunResult) -> list[str]:
    """One tidy CSV per figure: (x, series, value)."""
    by_figure: dict[str, list[dict]] = {}
    for point in result.sweep_points:
        by_figure.setdefault(point["figure"], []).append(point)
    paths = []
    for figure, points in sorted(by_figure.items()):
        x_key = "epsilon" if figure == "fig5b" else "malicious_fraction"
        path = os.path.join(result.output_dir, f"{figure}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([x_key, "attack", "accuracy"])
            for p in points:
                writer.writerow([f"{p[x_key]:g}", p["attack"], f"{p['accuracy']:.6f}"])
        paths.append(path)
    return paths


def _write_snapshot_and_manifest(cfg: ExperimentConfig, seeds: dict, out_dir: str,
                                 files: list[str]) -> None:
    snapshot = config_to_dict(cfg)
    canonical = json.dumps(snapshot, sort_keys=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seeds": seeds,
        "outputs": sorted(os.path.relpath(f, out_dir) for f in files),
        "platform": platform.platform(),
        "numpy": np.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
