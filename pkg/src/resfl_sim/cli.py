"""Command-line entry point.

    resfl-sim run    --config PATH [--out DIR] [--jobs N] [--seed S]
    resfl-sim sweep  --config PATH [--out DIR] [--jobs N] [--seed S]
    resfl-sim attack --config PATH [--kind NAME] [--out DIR] [--seed S]
    resfl-sim report --config PATH [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. The
RESFL_SIM_OUT environment variable overrides the default output
directory. All outputs are deterministic given config + seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import aia_run, byzantine_run, mia_run, poisoning_run, train_centralized
from .config import ConfigError, ExperimentConfig, load_config, normalized_text
from .datasets import generate_dataset, partition
from .federation import FederationConfig, run_experiment
from .metrics import MetricsRow, write_metrics
from .network import NetworkSpec, init_params

ATTACK_KINDS = ("mia", "aia", "byzantine", "poisoning")


def build_data(cfg: ExperimentConfig):
    """Train/test split sharing one signal draw: per group, scale the
    sample counts up, then hold out the tail fraction of each group."""
    scale = 1.0 / (1.0 - cfg.test_fraction)
    spg = tuple(max(int(round(n * scale)), n + 1 if n else 0)
                for n in cfg.synth.samples_per_group)
    full_spec = replace(cfg.synth, samples_per_group=spg)
    base_seed = cfg.seeds[0]
    full = generate_dataset(full_spec, seed=base_seed)
    train, test = [], []
    for g, n_total in enumerate(spg):
        members = [sm for sm in full if sm.s == g]
        n_train = cfg.synth.samples_per_group[g]
        train.extend(members[:n_train])
        test.extend(members[n_train:])
    return train, test


def network_for(cfg: ExperimentConfig) -> NetworkSpec:
    return NetworkSpec(input_dim=cfg.synth.input_dim,
                       hidden_dims=cfg.hidden_dims,
                       num_classes=cfg.synth.num_classes,
                       num_groups=cfg.synth.num_groups)


def _single_run(cfg: ExperimentConfig, algo: str, seed: int, train, test):
    shards = partition(train, cfg.num_clients, cfg.partition_beta, seed=seed)
    fed = cfg.federation_config(algo, seed)
    params, records = run_experiment(fed, shards, test, network=network_for(cfg))
    rows = [
        MetricsRow(
            algo=algo, seed=seed, round=r.round, accuracy=r.accuracy,
            acc_by_group=r.acc_by_group, di_dev=r.di_dev,
            delta_eop=r.delta_eop, eod=r.eod,
            ufm_mean=float(np.mean(list(r.ufm_by_client.values()))),
            unc_var=r.uncertainty_var,
        )
        for r in records
    ]
    return params, rows


def _resolve_out(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    out = cli_out or os.environ.get("RESFL_SIM_OUT") or cfg.out_dir or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_seed_override(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seeds=(seed,))


def cmd_run(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    train, test = build_data(cfg)
    cells = [(algo, seed) for algo in cfg.algorithms for seed in cfg.seeds]

    def work(cell):
        algo, seed = cell
        return cell, _single_run(cfg, algo, seed, train, test)[1]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(work, cells))
    else:
        results = dict(work(c) for c in cells)

    rows = [row for cell in cells for row in results[cell]]
    write_metrics(rows, out / "metrics.csv", num_groups=cfg.synth.num_groups)

    summary = {}
    last_round = cfg.rounds - 1
    for algo in cfg.algorithms:
        finals = [r for r in rows if r.algo == algo and r.round == last_round]
        if not finals:
            continue
        summary[algo] = {
            "accuracy": float(np.mean([r.accuracy for r in finals])),
            "di_dev": float(np.mean([r.di_dev for r in finals])),
            "delta_eop": float(np.mean([r.delta_eop for r in finals])),
            "eod": float(np.mean([r.eod for r in finals])),
            "ufm_mean": float(np.mean([r.ufm_mean for r in finals])),
            "unc_var": float(np.mean([r.unc_var for r in finals])),
            "seeds": list(cfg.seeds),
        }
    (out / "summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    (out / "config.cfg").write_text(normalized_text(cfg), encoding="utf-8")
    return 0


def _mia_against(cfg: ExperimentConfig, params, train, test, seed: int) -> float:
    rng = np.random.default_rng([seed, 0x517A])
    order = rng.permutation(len(train))
    members = [train[i] for i in order[:cfg.mia_overfit_size]]
    shadow = [train[i] for i in order[cfg.mia_overfit_size:
                                      cfg.mia_overfit_size + 400]]
    nonmembers = test[:len(members)]
    return mia_run(params, members, nonmembers, shadow, seed=seed,
                   shadow_steps=cfg.mia_overfit_steps).score


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    train, test = build_data(cfg)
    rows_sorted = sorted(cfg.sweep_rows)

    def work(cell):
        lam1, lam_adv = cell
        cell_cfg = replace(cfg, lambda1=lam1, lambda_adv=lam_adv)
        accs, dds, eops, mias, aias = [], [], [], [], []
        for seed in cfg.seeds:
            params, rows = _single_run(cell_cfg, "resfl", seed, train, test)
            final = rows[-1]
            accs.append(final.accuracy)
            dds.append(final.di_dev)
            eops.append(final.delta_eop)
            mias.append(_mia_against(cell_cfg, params, train, test, seed))
            aias.append(aia_run(params, train, cfg.synth.num_groups, seed=seed,
                                trials=cfg.aia_trials).score)
        return cell, tuple(float(np.mean(v)) for v in (accs, dds, eops, mias, aias))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(work, rows_sorted))
    else:
        results = dict(work(c) for c in rows_sorted)

    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        f.write("lambda1,lambda_adv,accuracy,di_dev,delta_eop,mia_sr,aia_sr\n")
        for cell in rows_sorted:
            acc, dd, eop, mia, aia = results[cell]
            f.write(f"{cell[0]:g},{cell[1]:g},"
                    + ",".join(f"{v:.6f}" for v in (acc, dd, eop, mia, aia)) + "\n")
    (out / "config.cfg").write_text(normalized_text(cfg), encoding="utf-8")
    return 0


def cmd_attack(cfg: ExperimentConfig, out: Path, kind: str | None) -> int:
    kinds = (kind,) if kind else cfg.attack_kinds
    train, test = build_data(cfg)
    net = network_for(cfg)
    lines = []
    for k in kinds:
        if k not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {k!r}")
        for seed in cfg.seeds:
            if k == "mia":
                members = [train[i] for i in
                           np.random.default_rng([seed, 0x517A])
                           .permutation(len(train))[:cfg.mia_overfit_size]]
                target = train_centralized(members, net,
                                           steps=cfg.mia_overfit_steps,
                                           batch_size=32, eta=0.1, seed=seed)
                dp_fed = FederationConfig(
                    num_clients=1, rounds=1,
                    local_iterations=cfg.mia_overfit_steps, batch_size=32,
                    eta=0.1, lambda1=cfg.lambda1, lambda_adv=0.0,
                    aggregator="fedavg_dp", dp_epsilon=cfg.dp_epsilon,
                    dp_clip=cfg.dp_clip, server_lr=1.0, seed=seed)
                dp_target, _ = run_experiment(dp_fed, [members], None,
                                              network=net)
                reports = [
                    ("mia", "overfit", seed,
                     _mia_against(cfg, target, train, test, seed), {}),
                    ("mia", "fedavg_dp", seed,
                     _mia_against(cfg, dp_target, train, test, seed), {}),
                ]
            elif k == "aia":
                params = init_params(net, np.random.default_rng([seed, 0x1217]))
                rep = aia_run(params, train, cfg.synth.num_groups, seed=seed,
                              trials=cfg.aia_trials)
                reports = [("aia", "init", seed, rep.score, rep.auxiliary)]
            else:
                reports = []
                for algo in cfg.algorithms:
                    shards = partition(train, cfg.num_clients, cfg.partition_beta,
                                       seed=seed)
                    fed = cfg.federation_config(algo, seed)
                    if k == "byzantine":
                        rep = byzantine_run(fed, shards, test,
                                            cfg.byzantine_fraction,
                                            cfg.byzantine_scale)
                    else:
                        group = cfg.poison_group
                        if group is None:
                            group = int(np.argmin(cfg.synth.samples_per_group))
                        rep = poisoning_run(fed, shards, test, group,
                                            cfg.poison_rate)
                    reports.append((k, algo, seed, rep.score, rep.auxiliary))
            for name, algo, sd, score, aux in reports:
                aux_text = ";".join(f"{a}={v:g}" for a, v in sorted(aux.items()))
                lines.append(f"{name},{algo},{sd},{score:.6f},{aux_text}")
    # rewritten whole-file per invocation so reruns are byte-identical
    with open(out / "attacks.csv", "w", encoding="utf-8", newline="") as f:
        f.write("attack,algo,seed,score,aux\n")
        for line in lines:
            f.write(line + "\n")
    return 0


def cmd_report(cfg: ExperimentConfig, out: Path) -> int:
    metrics_path = out / "metrics.csv"
    if not metrics_path.exists():
        print(f"error: {metrics_path} not found; run 'resfl-sim run' first",
              file=sys.stderr)
        return 1
    with open(metrics_path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        rows = [dict(zip(header, line.strip().split(","))) for line in f]
    summary: dict[str, dict] = {}
    for row in rows:
        algo = row["algo"]
        entry = summary.setdefault(algo, {"rounds": 0, "final": {}})
        entry["rounds"] = max(entry["rounds"], int(row["round"]) + 1)
    for algo, entry in summary.items():
        last = entry["rounds"] - 1
        finals = [r for r in rows if r["algo"] == algo and int(r["round"]) == last]
        for col in ("accuracy", "di_dev", "delta_eop", "eod", "ufm_mean", "unc_var"):
            entry["final"][col] = float(np.mean([float(r[col]) for r in finals]))
    (out / "summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resfl-sim",
                                     description="Federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "attack", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        if name == "attack":
            p.add_argument("--kind", choices=ATTACK_KINDS, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_seed_override(load_config(args.config), args.seed)
        out = _resolve_out(cfg, args.out)
        if args.command == "run":
            return cmd_run(cfg, out, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.jobs)
        if args.command == "attack":
            return cmd_attack(cfg, out, args.kind)
        return cmd_report(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
