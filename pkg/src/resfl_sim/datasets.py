"""Synthetic group-structured classification data.

Features are class-conditional Gaussians. Each class has a fixed
direction in feature space; per-group amplitude offsets let a group's
class signal be weaker or stronger (a signal-to-noise lever). A
configurable fraction of coordinates additionally carries an additive
group code, so a probe (or the adversary head) can decode the sensitive
attribute from raw features. Per-group label-flip noise and unequal
group sizes provide the representation-disparity levers.

Also: non-IID Dirichlet partitioning across clients and a label-flip
poisoning transform targeting one group.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int  # class index, 0-based
    s: int  # group index, 0-based


@dataclass(frozen=True)
class SynthSpec:
    input_dim: int = 20
    num_classes: int = 2
    num_groups: int = 4
    samples_per_group: tuple[int, ...] = (2000, 1500, 1000, 500)
    group_means: tuple[tuple[float, ...], ...] | None = None  # G x C amplitude offsets
    noise_std: float = 1.0
    attr_leak: float = 0.5  # fraction of coords carrying group signal
    label_flip_noise: tuple[float, ...] | None = None  # per group, in [0, 0.5)

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2 or self.num_groups < 1:
            raise ValueError("bad dimensions")
        if len(self.samples_per_group) != self.num_groups:
            raise ValueError("samples_per_group length must equal num_groups")
        if any(n < 0 for n in self.samples_per_group):
            raise ValueError("samples_per_group must be >= 0")
        if sum(n > 0 for n in self.samples_per_group) < 2:
            raise ValueError("need at least two groups with samples")
        if not 0.0 <= self.attr_leak <= 1.0:
            raise ValueError("attr_leak must be in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        gm = self.group_means
        if gm is None:
            gm = tuple(tuple(0.0 for _ in range(self.num_classes))
                       for _ in range(self.num_groups))
        else:
            gm = tuple(tuple(float(v) for v in row) for row in gm)
            if len(gm) != self.num_groups or any(len(r) != self.num_classes for r in gm):
                raise ValueError("group_means must be G x C")
        object.__setattr__(self, "group_means", gm)
        lf = self.label_flip_noise
        if lf is None:
            lf = tuple(0.0 for _ in range(self.num_groups))
        else:
            lf = tuple(float(v) for v in lf)
            if len(lf) != self.num_groups:
                raise ValueError("label_flip_noise length must equal num_groups")
            if any(not 0.0 <= v < 0.5 for v in lf):
                raise ValueError("label_flip_noise entries must be in [0, 0.5)")
        object.__setattr__(self, "label_flip_noise", lf)
        object.__setattr__(self, "samples_per_group", tuple(self.samples_per_group))

    def spec_hash(self) -> str:
        text = repr((self.input_dim, self.num_classes, self.num_groups,
                     self.samples_per_group, self.group_means, self.noise_std,
                     self.attr_leak, self.label_flip_noise))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _signal_directions(spec: SynthSpec, rng: np.random.Generator):
    """Fixed class directions and group leak codes for one dataset draw."""
    d = spec.input_dim
    dirs = rng.standard_normal((spec.num_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n_leak = int(round(spec.attr_leak * d))
    leak_idx = np.arange(n_leak)
    codes = rng.standard_normal((spec.num_groups, n_leak)) if n_leak else \
        np.zeros((spec.num_groups, 0))
    return dirs, leak_idx, codes


def generate_dataset(spec: SynthSpec, seed: int) -> list[Sample]:
    rng = np.random.default_rng([int(seed), 0x5EED])
    dirs, leak_idx, codes = _signal_directions(spec, rng)
    d = spec.input_dim
    samples = []
    for g in range(spec.num_groups):
        n_g = spec.samples_per_group[g]
        ys = rng.integers(0, spec.num_classes, size=n_g)
        for y in ys:
            amp = 2.0 * (1.0 + spec.group_means[g][y])
            x = amp * dirs[y] + spec.noise_std * rng.standard_normal(d)
            if len(leak_idx):
                x = x.copy()
                x[leak_idx] += codes[g]
            label = int(y)
            if spec.label_flip_noise[g] > 0 and rng.random() < spec.label_flip_noise[g]:
                label = int((label + 1 + rng.integers(0, spec.num_classes - 1))
                            % spec.num_classes)
            samples.append(Sample(x=x, y=label, s=g))
    return samples


def stack(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X, y, s) arrays from a list of samples."""
    X = np.stack([sm.x for sm in samples])
    y = np.array([sm.y for sm in samples], dtype=int)
    s = np.array([sm.s for sm in samples], dtype=int)
    return X, y, s


def partition(dataset, num_clients: int, beta: float, seed: int,
              max_retries: int = 10) -> list[list[Sample]]:
    """Non-IID split: per-group client proportions ~ Dirichlet(beta).

    Every sample lands on exactly one client. Empty shards trigger a
    resample, up to ``max_retries`` times.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if num_clients == 1:
        return [list(dataset)]
    rng = np.random.default_rng([int(seed), 0xD17])
    groups = sorted({sm.s for sm in dataset})
    for _ in range(max_retries):
        shards: list[list[Sample]] = [[] for _ in range(num_clients)]
        for g in groups:
            members = [sm for sm in dataset if sm.s == g]
            props = rng.dirichlet(np.full(num_clients, beta))
            assignment = rng.choice(num_clients, size=len(members), p=props)
            for sm, c in zip(members, assignment):
                shards[c].append(sm)
        if all(shards):
            return shards
    raise RuntimeError(f"could not produce non-empty shards in {max_retries} tries")


def poison(shard, target_group: int, rate: float, seed: int,
           favorable_class: int = 1) -> list[Sample]:
    """Append label-flipped clones of target-group samples.

    The injected set has size round(rate * len(shard)), drawn with
    replacement from the shard's target-group samples and relabeled to a
    wrong class. Favorable-class samples are cloned preferentially so
    the flips consistently push the target group toward unfavorable
    labels.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    shard = list(shard)
    if rate == 0.0:
        return shard
    pool = [sm for sm in shard if sm.s == target_group]
    if not pool:
        raise ValueError(f"shard has no samples of group {target_group}")
    favored = [sm for sm in pool if sm.y == favorable_class] or pool
    rng = np.random.default_rng([int(seed), 0xB1A5])
    n_inject = int(round(rate * len(shard)))
    num_classes = max(max(sm.y for sm in shard) + 1, 2)
    injected = []
    for i in rng.integers(0, len(favored), size=n_inject):
        src = favored[i]
        wrong = int((src.y + 1 + rng.integers(0, num_classes - 1)) % num_classes)
        injected.append(Sample(x=src.x.copy(), y=wrong, s=src.s))
    return shard + injected


def write_dataset(samples, spec: SynthSpec, path) -> None:
    """One sample per line: x coords, y, s; floats at 9 significant digits."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# resfl-sim dataset spec={spec.spec_hash()} n={len(samples)}\n")
        for sm in samples:
            coords = " ".join(f"{v:.9g}" for v in sm.x)
            f.write(f"{coords} {sm.y} {sm.s}\n")


def read_dataset(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                continue
            parts = line.split()
            samples.append(Sample(
                x=np.array([float(v) for v in parts[:-2]]),
                y=int(parts[-2]),
                s=int(parts[-1]),
            ))
    return samples
