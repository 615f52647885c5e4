"""Command-line interface: data generation, training, the look-ahead
benchmark, closed-loop control runs, mask interpretability, and sweeps.

Every subcommand accepts --config FILE (key=value lines, # comments, later
keys override earlier ones); explicit flags override file values.  All
randomness flows from --seed, so reruns with identical settings reproduce
output files byte for byte.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .arm import (DatasetSpec, generate_dataset, read_dataset_csv, training_arrays,
                  encoded_input_dim, write_dataset_bin, write_dataset_csv)
from .baselines import OraclePfConfig, STRATEGY_NAMES, make_strategy
from .bench import (BenchConfig, SweepConfig, lookahead_benchmark, mean_rmse,
                    run_sweep, write_result_rows, write_sweep_rows)
from .config import (Settings, parse_bool, parse_int_list, parse_str_list,
                     read_config_file)
from .control import ControlTask, run_control_episode, write_control_traces
from .filter import FilterConfig
from .interpret import (build_mask_bank, default_link_label, topk_link_accuracy,
                        write_mask_bank)
from .net import TrainConfig, init_net, load_net, save_net, train
from .arm import draw_link_lengths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smcd",
        description="Train a dropout forward-kinematics model and adapt it "
                    "online by particle filtering over dropout masks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="master random seed (default 0)")
        return p

    p = add("gen-data", "generate the multi-task babbling dataset")
    p.add_argument("--tasks", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--link-mean", type=float, dest="link_mean")
    p.add_argument("--link-std", type=float, dest="link_std")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--bin-out", dest="bin_out", help="optional compact binary twin")

    p = add("train", "train the dropout forward-kinematics model")
    p.add_argument("--data", required=True, help="dataset CSV from gen-data")
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--hidden", help="hidden layer widths, e.g. 256,256,256")
    p.add_argument("--dropout-p", type=float, dest="dropout_p")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--encoding", choices=("raw", "sincos"))
    p.add_argument("--masked-layer", type=int, dest="masked_layer",
                   help="restrict masking to one hidden layer (default: all)")

    p = add("eval-lookahead", "run the look-ahead prediction benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="result CSV path")
    p.add_argument("--strategies", help=f"comma list from {','.join(STRATEGY_NAMES)}")
    p.add_argument("--tasks", type=int)
    p.add_argument("--burn-ins", dest="burn_ins", help="comma list, e.g. 1,5,10,20")
    p.add_argument("--horizons", help="comma list, e.g. 1,5,10,20")
    p.add_argument("--particles", type=int)
    p.add_argument("--flip-rate", type=float, dest="flip_rate")
    p.add_argument("--sigma", type=float)
    p.add_argument("--gradient-lr", type=float, dest="gradient_lr")
    p.add_argument("--encoding", choices=("raw", "sincos"))
    p.add_argument("--timings", action="store_true", default=None,
                   help="include wall-time column (not reproducible)")

    p = add("control", "run closed-loop tracking episodes")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="aggregated trace CSV path")
    p.add_argument("--episodes", type=int)
    p.add_argument("--strategy", choices=STRATEGY_NAMES)
    p.add_argument("--telescoping", dest="telescoping",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--horizon", type=int)
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--particles", type=int)
    p.add_argument("--flip-rate", type=float, dest="flip_rate")
    p.add_argument("--sigma", type=float)
    p.add_argument("--gradient-lr", type=float, dest="gradient_lr")
    p.add_argument("--encoding", choices=("raw", "sincos"))

    p = add("interpret", "build a mask bank and score link-length retrieval")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="mask bank CSV path")
    p.add_argument("--bank-tasks", type=int, dest="bank_tasks")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--k", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--flip-rate", type=float, dest="flip_rate")
    p.add_argument("--sigma", type=float)
    p.add_argument("--encoding", choices=("raw", "sincos"))

    p = add("sweep", "hyper-parameter sweep over train/filter settings")
    p.add_argument("--param", action="append", default=None, metavar="KEY=V1,V2",
                   help="sweep axis; repeatable")
    p.add_argument("--out", required=True, help="sweep result CSV path")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--train-tasks", type=int, dest="train_tasks")
    p.add_argument("--eval-tasks", type=int, dest="eval_tasks")
    p.add_argument("--epochs", type=int)
    p.add_argument("--strategies")
    p.add_argument("--burn-ins", dest="burn_ins")
    p.add_argument("--horizons")
    return parser


def _settings(args) -> Settings:
    file_values = read_config_file(args.config) if args.config else {}
    return Settings(args, file_values)


def cmd_gen_data(args) -> int:
    s = _settings(args)
    spec = DatasetSpec(
        n_tasks=s.get("tasks", int, 1000),
        episodes_per_task=s.get("episodes", int, 150),
        steps_per_episode=s.get("steps", int, 10),
        link_mean=s.get("link_mean", float, 1.0),
        link_std=s.get("link_std", float, 0.3),
        seed=s.get("seed", int, 0))
    records = generate_dataset(spec)
    write_dataset_csv(records, args.out)
    bin_out = s.get("bin_out", str, None)
    if bin_out:
        write_dataset_bin(records, bin_out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    s = _settings(args)
    records = read_dataset_csv(args.data)
    encoding = s.get("encoding", str, "raw")
    x, y = training_arrays(records, encoding)
    hidden = parse_int_list(s.get("hidden", str, "256,256,256"))
    arch = (encoded_input_dim(encoding),) + hidden + (2,)
    masked_layer = s.get("masked_layer", int, None)
    masked = None if masked_layer is None else (masked_layer,)
    seed = s.get("seed", int, 0)
    net = init_net(arch, dropout_p=s.get("dropout_p", float, 0.5), seed=seed,
                   masked_layers=masked)
    cfg = TrainConfig(
        learning_rate=s.get("lr", float, 1e-4),
        epochs=s.get("epochs", int, 100),
        batch_size=s.get("batch", int, 64),
        seed=seed,
        optimizer=s.get("optimizer", str, "adam"))
    net = train(net, (x, y), cfg)
    save_net(net, args.out)
    print(f"trained on {len(x)} samples; "
          f"final epoch loss {net.loss_history[-1]:.6g}; saved to {args.out}")
    return 0


def _bench_config(s, seed: int) -> BenchConfig:
    return BenchConfig(
        burn_in_list=parse_int_list(s.get("burn_ins", str, "1,5,10,20")),
        horizon_list=parse_int_list(s.get("horizons", str, "1,5,10,20")),
        n_eval_tasks=s.get("tasks", int, 200),
        strategies=parse_str_list(s.get("strategies", str, "none,smcd,gradient")),
        seed=seed,
        encoding=s.get("encoding", str, "raw"),
        filter_cfg=FilterConfig(
            n_particles=s.get("particles", int, 500),
            flip_rate=s.get("flip_rate", float, 0.02),
            meas_noise_sigma=s.get("sigma", float, 0.05),
            seed=seed),
        gradient_lr=s.get("gradient_lr", float, 1e-3),
        oracle_cfg=OraclePfConfig(seed=seed))


def cmd_eval_lookahead(args) -> int:
    s = _settings(args)
    net = load_net(args.model)
    seed = s.get("seed", int, 0)
    cfg = _bench_config(s, seed)
    rows = lookahead_benchmark(net, cfg)
    write_result_rows(rows, args.out, include_timing=bool(s.get("timings", parse_bool, False)))
    print(f"{'strategy':>10} {'burn_in':>7} {'horizon':>7} {'mean_rmse':>12}")
    for (name, b, h), v in sorted(mean_rmse(rows).items()):
        print(f"{name:>10} {b:>7} {h:>7} {v:>12.6f}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_control(args) -> int:
    s = _settings(args)
    net = load_net(args.model)
    seed = s.get("seed", int, 0)
    episodes = s.get("episodes", int, 20)
    name = s.get("strategy", str, "smcd")
    telescoping = s.get("telescoping", parse_bool, True)
    filter_cfg = FilterConfig(
        n_particles=s.get("particles", int, 500),
        flip_rate=s.get("flip_rate", float, 0.02),
        meas_noise_sigma=s.get("sigma", float, 0.05),
        seed=seed)
    encoding = s.get("encoding", str, "raw")
    traces = []
    errs = []
    for ep in range(episodes):
        rng = np.random.default_rng([seed, ep])
        task = sample_task = ControlTask(
            radius=float(rng.uniform(0.3, 1.5)),
            start_angle=float(rng.uniform(-np.pi, np.pi)),
            horizon=s.get("horizon", int, 100),
            k1=s.get("k1", float, 20.0),
            k2=s.get("k2", float, 5.0),
            dt=s.get("dt", float, 0.1),
            telescoping=telescoping)
        if not telescoping:
            lengths = draw_link_lengths(rng)
            task = sample_task = ControlTask(
                radius=task.radius, start_angle=task.start_angle, horizon=task.horizon,
                k1=task.k1, k2=task.k2, dt=task.dt, telescoping=False,
                l1=float(lengths[0]), l2=float(lengths[1]))
        strategy = make_strategy(name, net, filter_cfg=filter_cfg,
                                 gradient_lr=s.get("gradient_lr", float, 1e-3),
                                 encoding=encoding, seed=[seed, ep, 1])
        trace = run_control_episode(strategy, sample_task, [seed, ep, 2])
        traces.append((ep, trace))
        errs.append(np.mean(trace.err[len(trace.err) // 2:]))
    write_control_traces(traces, args.out)
    print(f"{name}: mean tail tracking error over {episodes} episodes: "
          f"{float(np.mean(errs)):.6f}")
    print(f"wrote {sum(len(t.err) for _, t in traces)} rows to {args.out}")
    return 0


def cmd_interpret(args) -> int:
    s = _settings(args)
    net = load_net(args.model)
    seed = s.get("seed", int, 0)
    n_tasks = s.get("bank_tasks", int, 200)
    k = s.get("k", int, 10)
    rng = np.random.default_rng([seed, 0])
    lengths = np.stack([draw_link_lengths(rng) for _ in range(n_tasks)])
    labels = [default_link_label(l1, l2) for l1, l2 in lengths]
    filter_cfg = FilterConfig(
        n_particles=s.get("particles", int, 256),
        flip_rate=s.get("flip_rate", float, 0.02),
        meas_noise_sigma=s.get("sigma", float, 0.05),
        seed=seed)
    bank = build_mask_bank(net, lengths, labels, filter_cfg,
                           burn_in=s.get("burn_in", int, 10), seed=seed,
                           encoding=s.get("encoding", str, "raw"))
    write_mask_bank(bank, args.out)
    acc = topk_link_accuracy(bank, k)
    chance = k / (len(bank) - 1)
    print(f"top-{k} link-length accuracy over {len(bank)} tasks: {acc:.4f} "
          f"(chance {chance:.4f})")
    print(f"wrote mask bank to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    s = _settings(args)
    grid: dict[str, tuple] = {}
    for item in (args.param or []):
        if "=" not in item:
            raise ValueError(f"--param expects KEY=V1,V2 but got {item!r}")
        key, values = item.split("=", 1)
        grid[key.strip()] = tuple(float(v) for v in values.split(",") if v.strip())
    if not grid:
        raise ValueError("sweep needs at least one --param axis")
    cfg = SweepConfig(
        grid=grid,
        seed=s.get("seed", int, 0),
        cache_dir=s.get("cache_dir", str, "sweep_cache"),
        n_train_tasks=s.get("train_tasks", int, 50),
        n_eval_tasks=s.get("eval_tasks", int, 30),
        epochs=s.get("epochs", int, 30),
        strategies=parse_str_list(s.get("strategies", str, "none,smcd")),
        burn_in_list=parse_int_list(s.get("burn_ins", str, "10")),
        horizon_list=parse_int_list(s.get("horizons", str, "1,10")))
    rows = run_sweep(cfg)
    write_sweep_rows(rows, args.out)
    failures = sum(1 for r in rows if r.get("status") != "ok")
    print(f"sweep finished: {len(rows)} rows ({failures} failure rows); wrote {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-lookahead": cmd_eval_lookahead,
    "control": cmd_control,
    "interpret": cmd_interpret,
    "sweep": cmd_sweep,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
