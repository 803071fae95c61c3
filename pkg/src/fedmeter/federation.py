"""Round-based FedAVG federation with optional malicious clients, plus a
centralized training mode for comparison.

Each round: the server broadcasts the global weights (serialized through the
checkpoint wire format to keep the boundary honest), every selected client
trains locally for ``local_epochs`` epochs, and the server replaces the
global weights with the unweighted average of the returned weight maps.
Malicious clients regenerate adversarial data every round from the freshly
received weights, perturbing a fresh random fraction of their local samples;
honest clients' stored data is never touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, poison_batch
from .evaluation import DEFAULT_THRESHOLD, classify, compute_metrics
from .models import (RmsProp, TrainConfig, make_model, save_weights, train_local,
                     weights_from_bytes, weights_to_bytes)
from .seeding import derive_seed, rng_for


@dataclass
class ClientNode:
    client_id: str
    x_train: np.ndarray
    y_train: np.ndarray
    malicious: bool = False
    attack: AttackSpec = field(default_factory=AttackSpec)
    poison_fraction: float = 0.3

    def __post_init__(self):
        if not self.malicious and self.attack.family != "none":
            raise ValueError(f"client {self.client_id}: honest clients cannot "
                             f"carry an attack spec")
        if not (0.0 <= self.poison_fraction <= 1.0):
            raise ValueError("poison_fraction must be in [0, 1]")


@dataclass
class FederationState:
    global_weights: dict[str, np.ndarray]
    clients: list[ClientNode]
    clients_per_round: int
    local_epochs: int = 1
    seed: int = 0
    round: int = 0  # rounds completed

    def __post_init__(self):
        if not (1 <= self.clients_per_round <= len(self.clients)):
            raise ValueError(f"clients_per_round must be in [1, {len(self.clients)}], "
                             f"got {self.clients_per_round}")


@dataclass
class RoundRecord:
    round: int
    selected: list[str]
    malicious_count: int
    mean_local_loss: float
    global_test_accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round,
            "selected": self.selected,
            "malicious_count": self.malicious_count,
            "mean_local_loss": self.mean_local_loss,
            "global_test_accuracy": self.global_test_accuracy,
        }, sort_keys=True)


def select_clients(state: FederationState, round_index: int) -> list[int]:
    """Uniform sample of client indices without replacement, seeded per round."""
    n = len(state.clients)
    if state.clients_per_round > n:
        raise ValueError("cannot select more clients than exist")
    rng = rng_for(state.seed, "select", round_index)
    picked = rng.choice(n, size=state.clients_per_round, replace=False)
    return sorted(int(i) for i in picked)


def fedavg(weight_maps: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Unweighted elementwise mean of client weight maps."""
    if not weight_maps:
        raise ValueError("fedavg needs at least one weight map")
    names = set(weight_maps[0])
    for m in weight_maps[1:]:
        if set(m) != names:
            raise ValueError("weight maps disagree on tensor names")
    out = {}
    for name in names:
        shapes = {m[name].shape for m in weight_maps}
        if len(shapes) > 1:
            raise ValueError(f"weight {name}: inconsistent shapes {sorted(shapes)}")
        out[name] = np.mean([m[name] for m in weight_maps], axis=0)
    return out


def poisoned_training_set(model, client: ClientNode, round_index: int,
                          fed_seed: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fresh adversarial copy of the client's data for this round.

    A new random ``poison_fraction`` subset is drawn each round and perturbed
    using gradients of the just-received model; the client's stored arrays
    are never modified.
    """
    rng = rng_for(fed_seed, "poison", client.client_id, round_index)
    x = client.x_train.copy()
    y = client.y_train.copy()
    k = int(np.floor(client.poison_fraction * len(x)))
    if k == 0 or client.attack.family == "none":
        return x, y
    idx = np.sort(rng.choice(len(x), size=k, replace=False))
    x_adv, y_adv = poison_batch(model, x[idx], y[idx], client.attack, rng,
                                alpha=cfg.focal_alpha, gamma=cfg.focal_gamma)
    x[idx] = x_adv
    y[idx] = y_adv
    return x, y


def run_round(state: FederationState, model_name: str, cfg: TrainConfig) -> RoundRecord:
    """Execute one federation round, replacing the global weights in place."""
    round_index = state.round + 1
    selected = select_clients(state, round_index)
    wire = weights_to_bytes(state.global_weights)
    returned = []
    losses = []
    malicious_count = 0
    for idx in selected:
        client = state.clients[idx]
        model = make_model(model_name, seed=0)
        model.set_weights(weights_from_bytes(wire))
        if client.malicious and client.attack.family != "none":
            malicious_count += 1
            x, y = poisoned_training_set(model, client, round_index, state.seed, cfg)
        else:
            x, y = client.x_train, client.y_train
        history = train_local(
            model, x, y, cfg,
            seed=derive_seed(state.seed, "train", client.client_id, round_index),
            epochs=state.local_epochs,
            epoch_offset=(round_index - 1) * state.local_epochs)
        returned.append(model.get_weights())
        losses.append(history[-1])
    state.global_weights = fedavg(returned)
    state.round = round_index
    return RoundRecord(round_index, [state.clients[i].client_id for i in selected],
                       malicious_count, float(np.mean(losses)))


def run_federation(state: FederationState, model_name: str, cfg: TrainConfig,
                   t_rounds: int, *, eval_x: np.ndarray | None = None,
                   eval_y: np.ndarray | None = None,
                   threshold: float = DEFAULT_THRESHOLD, eval_every: int = 1,
                   log_path=None, checkpoint_dir=None,
                   checkpoint_every: int | None = None) -> list[RoundRecord]:
    """Run ``t_rounds`` rounds; optionally log per-round records as JSON lines
    and checkpoint the global weights at fixed intervals."""
    if t_rounds < 1:
        raise ValueError("need at least one round")
    records = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for _ in range(t_rounds):
            record = run_round(state, model_name, cfg)
            if eval_x is not None and (state.round % eval_every == 0
                                       or state.round == t_rounds):
                model = global_model(state, model_name)
                pred = classify(model, eval_x, threshold)
                record.global_test_accuracy = compute_metrics(pred, eval_y).accuracy
            records.append(record)
            if log_fh is not None:
                log_fh.write(record.to_json() + "\n")
            if checkpoint_dir is not None and checkpoint_every is not None \
                    and state.round % checkpoint_every == 0:
                save_weights(state.global_weights,
                             f"{checkpoint_dir}/round_{state.round:04d}.ckpt")
    finally:
        if log_fh is not None:
            log_fh.close()
    return records


def global_model(state: FederationState, model_name: str):
    """Materialize the current global weights as a model instance."""
    model = make_model(model_name, seed=0)
    model.set_weights(state.global_weights)
    return model


def init_state(model_name: str, clients: list[ClientNode], *,
               clients_per_round: int | None = None, local_epochs: int = 1,
               seed: int = 0, init_seed: int | None = None) -> FederationState:
    """Server-side initialization: random global weights, round counter at 0."""
    init_seed = derive_seed(seed, "global-init") if init_seed is None else init_seed
    weights = make_model(model_name, seed=init_seed).get_weights()
    n_round = len(clients) if clients_per_round is None else clients_per_round
    return FederationState(weights, clients, n_round, local_epochs, seed)


def run_centralized(x: np.ndarray, y: np.ndarray, model_name: str, cfg: TrainConfig, *,
                    attack: AttackSpec | None = None, poison_fraction: float = 0.0,
                    epochs: int | None = None, seed: int | None = None):
    """Single-model training on pooled data, optionally poisoned per epoch.

    With an active attack, a fresh ``poison_fraction`` subset of the pooled
    training data is perturbed each epoch using the current model.  Returns
    (model, per-epoch loss history).
    """
    attack = AttackSpec() if attack is None else attack
    seed = cfg.seed if seed is None else seed
    epochs = cfg.epochs if epochs is None else epochs
    model = make_model(model_name, seed=derive_seed(seed, "central-init"))
    optimizer = RmsProp(cfg.rho, cfg.eps_opt)
    history = []
    attacking = attack.family != "none" and poison_fraction > 0.0
    for epoch in range(1, epochs + 1):
        xe, ye = x, y
        if attacking:
            rng = rng_for(seed, "central-poison", epoch)
            k = int(np.floor(poison_fraction * len(x)))
            if k:
                idx = np.sort(rng.choice(len(x), size=k, replace=False))
                xe, ye = x.copy(), y.copy()
                x_adv, y_adv = poison_batch(model, xe[idx], ye[idx], attack, rng,
                                            alpha=cfg.focal_alpha, gamma=cfg.focal_gamma)
                xe[idx] = x_adv
                ye[idx] = y_adv
        history.extend(train_local(model, xe, ye, cfg, seed=seed, epochs=1,
                                   epoch_offset=epoch - 1, optimizer=optimizer))
    return model, history
