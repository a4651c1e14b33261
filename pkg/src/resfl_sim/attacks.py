"""Attack harnesses: membership inference, attribute inference,
Byzantine perturbation, and fairness-targeted data poisoning.

Each harness is a measurement: it runs the relevant (paired) training
procedure and returns a report with the attack's headline score.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adversarial import local_train_step
from .datasets import poison, stack
from .evidential import evidence_batch
from .federation import ByzantineSpec, FederationConfig, run_experiment
from .metrics import confusion_by_group, eod
from .network import NetworkSpec, ParameterSet, forward_batch, init_params


@dataclass(frozen=True)
class AttackReport:
    attack_kind: str
    score: float
    auxiliary: dict[str, float]


def _confidences(params: ParameterSet, samples) -> np.ndarray:
    """Max Dirichlet-mean probability per sample."""
    X, _, _ = stack(samples)
    _, _, _, Zt, _ = forward_batch(params, X)
    A = evidence_batch(Zt)
    return (A / A.sum(axis=1, keepdims=True)).max(axis=1)


def train_centralized(samples, network: NetworkSpec, steps: int, batch_size: int,
                      eta: float, seed: int, lambda1: float = 0.1) -> ParameterSet:
    """Plain centralized evidential SGD (no adversary), for shadow/overfit models."""
    rng = np.random.default_rng([int(seed), 0xCE27])
    params = init_params(network, rng)
    X, y, s = stack(samples)
    for _ in range(steps):
        idx = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
        params, _ = local_train_step(params, X[idx], y[idx], s[idx],
                                     eta, None, lambda1, 0.0)
    return params


def _best_threshold(member_conf: np.ndarray, nonmember_conf: np.ndarray) -> float:
    """Threshold maximizing balanced accuracy of rule conf >= tau."""
    candidates = np.unique(np.concatenate([member_conf, nonmember_conf]))
    mids = (candidates[:-1] + candidates[1:]) / 2.0
    candidates = np.concatenate([[candidates[0] - 1e-9], mids, [candidates[-1] + 1e-9]])
    best_tau, best_bal = candidates[0], -1.0
    for tau in candidates:
        tpr = float(np.mean(member_conf >= tau))
        tnr = float(np.mean(nonmember_conf < tau))
        bal = 0.5 * (tpr + tnr)
        if bal > best_bal:
            best_bal, best_tau = bal, float(tau)
    return best_tau


def mia_run(target_params: ParameterSet, member_pool, nonmember_pool,
            shadow_pool, seed: int, shadow_size: int | None = None,
            shadow_steps: int = 3000, shadow_eta: float = 0.1) -> AttackReport:
    """Shadow-model membership inference.

    A shadow model is trained on a slice of the shadow pool, by default
    matching the target's training-set size so its member/non-member
    confidence gap mimics the target's. The confidence threshold is fit
    on the shadow model's confidences only, then applied to the target's
    confidences on the true pools.
    """
    if not member_pool or not nonmember_pool or len(shadow_pool) < 4:
        raise ValueError("pools must be non-empty (shadow pool >= 4 samples)")
    if shadow_size is None:
        shadow_size = min(len(member_pool), len(shadow_pool) // 2)
    rng = np.random.default_rng([int(seed), 0x314])
    shadow = list(shadow_pool)
    order = rng.permutation(len(shadow))
    shadow_members = [shadow[i] for i in order[:shadow_size]]
    shadow_nonmembers = [shadow[i] for i in order[shadow_size:]]
    shadow_model = train_centralized(
        shadow_members, target_params.spec, steps=shadow_steps,
        batch_size=min(32, len(shadow_members)), eta=shadow_eta, seed=seed)
    tau = _best_threshold(_confidences(shadow_model, shadow_members),
                          _confidences(shadow_model, shadow_nonmembers))

    m_conf = _confidences(target_params, member_pool)
    n_conf = _confidences(target_params, nonmember_pool)
    tp = int(np.sum(m_conf >= tau))
    fn = len(m_conf) - tp
    tn = int(np.sum(n_conf < tau))
    fp = len(n_conf) - tn
    score = (tp + tn) / (tp + tn + fp + fn)
    return AttackReport("mia", float(score), {
        "threshold": tau, "tp": tp, "tn": tn, "fp": fp, "fn": fn})


def aia_run(global_params: ParameterSet, dataset, num_groups: int, seed: int,
            trials: int = 100, probe_size: int = 32, eta: float = 0.05,
            lambda1: float = 0.1) -> AttackReport:
    """Gradient-matching attribute inference.

    Builds a one-step update signature per group from group-pure probe
    batches, then classifies fresh group-pure updates by nearest
    signature in L2. Score is the fraction of correct inferences.
    """
    by_group = {g: [sm for sm in dataset if sm.s == g] for g in range(num_groups)}
    if any(not v for v in by_group.values()):
        raise ValueError("every group needs probe samples")
    rng = np.random.default_rng([int(seed), 0xA1A])

    def one_step_delta(batch):
        X, y, s = stack(batch)
        new, _ = local_train_step(global_params, X, y, s, eta, None, lambda1, 0.0)
        return np.concatenate([new.theta_f - global_params.theta_f,
                               new.theta_e - global_params.theta_e])

    def pure_batch(g):
        pool = by_group[g]
        idx = rng.integers(0, len(pool), size=min(probe_size, len(pool)))
        return [pool[i] for i in idx]

    signatures = {g: one_step_delta(pure_batch(g)) for g in range(num_groups)}
    correct = 0
    for _ in range(trials):
        true_g = int(rng.integers(0, num_groups))
        observed = one_step_delta(pure_batch(true_g))
        guess = min(signatures,
                    key=lambda g: float(np.linalg.norm(observed - signatures[g])))
        correct += guess == true_g
    return AttackReport("aia", correct / trials, {"trials": trials})


def byzantine_run(config: FederationConfig, shards, eval_samples,
                  malicious_fraction: float, perturb_scale: float = 10.0,
                  relative: bool = True, seed: int | None = None) -> AttackReport:
    """Paired clean/attacked runs; score is the accuracy degradation.

    The attacker compromises the most influential clients: the
    ``ceil(fraction * K)`` largest shards.
    """
    if not 0.0 <= malicious_fraction < 1.0:
        raise ValueError("malicious_fraction must be in [0, 1)")
    if seed is not None:
        config = replace(config, seed=seed)
    n_bad = int(np.ceil(malicious_fraction * config.num_clients))
    by_size = sorted(range(len(shards)), key=lambda k: len(shards[k]), reverse=True)
    byz = ByzantineSpec(
        client_ids=tuple(sorted(by_size[:n_bad])),
        scale=perturb_scale, relative=relative) if n_bad and perturb_scale > 0 else None
    _, clean = run_experiment(config, shards, eval_samples)
    if byz is None:
        attacked = clean
    else:
        _, attacked = run_experiment(config, shards, eval_samples, byzantine=byz)
    a_clean = clean[-1].accuracy
    a_byz = attacked[-1].accuracy
    return AttackReport("byzantine", a_clean - a_byz, {
        "clean_accuracy": a_clean, "attacked_accuracy": a_byz,
        "num_malicious": float(n_bad)})


def poisoning_run(config: FederationConfig, shards, eval_samples,
                  target_group: int, rate: float,
                  seed: int | None = None) -> AttackReport:
    """Paired clean/poisoned runs; score is the shift in equalized-odds gap.

    The compromised client is the shard holding the most target-group
    samples; its shard is poisoned per :func:`resfl_sim.datasets.poison`.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    if seed is not None:
        config = replace(config, seed=seed)
    params_clean, _ = run_experiment(config, shards, eval_samples)
    if rate == 0.0:
        poisoned_shards = shards
    else:
        victim = max(range(len(shards)),
                     key=lambda k: sum(sm.s == target_group for sm in shards[k]))
        poisoned_shards = list(shards)
        poisoned_shards[victim] = poison(shards[victim], target_group, rate,
                                         seed=config.seed)
    params_poisoned, _ = run_experiment(config, poisoned_shards, eval_samples)

    def eod_of(params):
        X, _, _ = stack(eval_samples)
        _, _, _, Zt, _ = forward_batch(params, X)
        preds = np.argmax(evidence_batch(Zt), axis=1)
        return eod(confusion_by_group(preds, eval_samples))

    eod_clean = eod_of(params_clean)
    eod_poisoned = eod_of(params_poisoned)
    return AttackReport("poisoning", eod_poisoned - eod_clean, {
        "eod_clean": eod_clean, "eod_poisoned": eod_poisoned, "rate": rate})
