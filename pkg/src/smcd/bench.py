"""Look-ahead prediction benchmark and hyper-parameter sweep harness.

The benchmark replays held-out babbling episodes: each strategy consumes a
burn-in prefix of observations, then the adapted model is rolled open-loop
over the remaining horizon (joint angles evolve by the known actions; only
the kinematics prediction comes from the model) and scored by RMSE against
the true end-effector positions.  Every strategy sees identical episodes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .arm import DatasetSpec, generate_dataset, make_eval_episode, training_arrays, encoded_input_dim
from .baselines import OraclePfConfig, make_strategy, STRATEGY_NAMES
from .filter import FilterConfig, Observation
from .net import DropoutNet, TrainConfig, init_net, train

RESULT_CSV_HEADER = "strategy,burn_in,horizon,task_id,rmse"

SWEEP_KEYS = ("hidden_width", "dropout_p", "lr", "batch", "n_particles",
              "flip_rate", "sigma")


@dataclass
class ResultRow:
    strategy: str
    burn_in: int
    horizon: int
    task_id: int
    rmse: float
    wall_time_ms: float


@dataclass
class BenchConfig:
    burn_in_list: tuple[int, ...] = (1, 5, 10, 20)
    horizon_list: tuple[int, ...] = (1, 5, 10, 20)
    n_eval_tasks: int = 200
    strategies: tuple[str, ...] = ("none", "smcd", "gradient")
    seed: int = 0
    link_mean: float = 1.0
    link_std: float = 0.3
    encoding: str = "raw"
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    gradient_lr: float = 1e-3
    oracle_cfg: OraclePfConfig = field(default_factory=OraclePfConfig)

    def __post_init__(self):
        if not self.burn_in_list or not self.horizon_list:
            raise ValueError("burn-in and horizon lists must be nonempty")
        if any(h < 1 for h in self.horizon_list):
            raise ValueError("horizons must be >= 1")
        if any(b < 0 for b in self.burn_in_list):
            raise ValueError("burn-ins must be >= 0")
        if self.n_eval_tasks < 1:
            raise ValueError("n_eval_tasks must be >= 1")
        for name in self.strategies:
            if name not in STRATEGY_NAMES:
                raise ValueError(f"unknown strategy {name!r}")


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SMCD_THREADS", "1")))
    except ValueError:
        return 1


def _benchmark_task(net: DropoutNet, cfg: BenchConfig, task_id: int) -> list[ResultRow]:
    """All (strategy, burn_in, horizon) cells for one held-out episode.

    Burn-in runs progressively with predictor snapshots at each requested
    depth, which matches independent runs because observations arrive in
    the same order from the same streams.
    """
    burns = sorted(set(cfg.burn_in_list))
    horizons = sorted(set(cfg.horizon_list))
    episode = make_eval_episode([cfg.seed, task_id], burns[-1], horizons[-1],
                                cfg.link_mean, cfg.link_std)
    rows = []
    for si, name in enumerate(sorted(set(cfg.strategies))):
        strategy = make_strategy(
            name, net, filter_cfg=cfg.filter_cfg, gradient_lr=cfg.gradient_lr,
            oracle_cfg=cfg.oracle_cfg, encoding=cfg.encoding,
            seed=[cfg.seed, task_id, si])
        done = 0
        adapt_time = 0.0
        for b in burns:
            t0 = time.perf_counter()
            while done < b:
                strategy.observe(Observation(episode.q[done], episode.xy[done]))
                done += 1
            adapt_time += time.perf_counter() - t0
            predict = strategy.predictor_snapshot()
            for h in horizons:
                t1 = time.perf_counter()
                qs = episode.q[b:b + h]
                preds = np.atleast_2d(predict(qs))
                err = preds - episode.xy[b:b + h]
                rmse = float(np.sqrt(np.mean(err * err)))
                cell_ms = (adapt_time + time.perf_counter() - t1) * 1000.0
                rows.append(ResultRow(name, b, h, task_id, rmse, cell_ms))
    return rows


def _benchmark_chunk(args) -> list[ResultRow]:
    net, cfg, task_ids = args
    out = []
    for t in task_ids:
        out.extend(_benchmark_task(net, cfg, t))
    return out


def lookahead_benchmark(net: DropoutNet, cfg: BenchConfig) -> list[ResultRow]:
    """Run the benchmark grid over held-out tasks.

    Episodes are seeded by (seed, task_id); results are returned in a
    deterministic order regardless of worker count (capped by the
    SMCD_THREADS environment variable).
    """
    if net.input_dim != encoded_input_dim(cfg.encoding):
        raise ValueError(f"model expects {net.input_dim} inputs but encoding "
                         f"{cfg.encoding!r} produces {encoded_input_dim(cfg.encoding)}")
    task_ids = list(range(cfg.n_eval_tasks))
    workers = _worker_count()
    rows: list[ResultRow] = []
    if workers > 1 and len(task_ids) > 1:
        chunks = [task_ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_benchmark_chunk, [(net, cfg, c) for c in chunks]):
                rows.extend(part)
    else:
        rows.extend(_benchmark_chunk((net, cfg, task_ids)))
    rows.sort(key=lambda r: (r.strategy, r.burn_in, r.horizon, r.task_id))
    return rows


def mean_rmse(rows) -> dict[tuple[str, int, int], float]:
    """Mean RMSE over tasks per (strategy, burn_in, horizon) cell."""
    sums: dict[tuple[str, int, int], list[float]] = {}
    for r in rows:
        sums.setdefault((r.strategy, r.burn_in, r.horizon), []).append(r.rmse)
    return {k: float(np.mean(v)) for k, v in sums.items()}


def rmse_by_task(rows, strategy: str, burn_in: int, horizon: int) -> np.ndarray:
    """Per-task RMSE vector for one cell, ordered by task id."""
    sel = [r for r in rows
           if r.strategy == strategy and r.burn_in == burn_in and r.horizon == horizon]
    sel.sort(key=lambda r: r.task_id)
    return np.array([r.rmse for r in sel])


def write_result_rows(rows, path, include_timing: bool = False) -> None:
    """Result CSV; the wall-time column is opt-in because timings are not
    reproducible across runs."""
    header = RESULT_CSV_HEADER + (",wall_time_ms" if include_timing else "")
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for r in rows:
            line = f"{r.strategy},{r.burn_in},{r.horizon},{r.task_id},{format(r.rmse, '.17g')}"
            if include_timing:
                line += f",{format(r.wall_time_ms, '.17g')}"
            f.write(line + "\n")


@dataclass
class SweepConfig:
    """Cross-product sweep of training/filter hyper-parameters.

    Cells are cached by config hash in cache_dir, so an interrupted sweep
    resumes without recomputing finished cells.
    """
    grid: dict
    seed: int = 0
    cache_dir: str = "sweep_cache"
    # base model/training settings, overridable per cell
    hidden_width: int = 64
    n_hidden: int = 3
    dropout_p: float = 0.5
    lr: float = 1e-4
    batch: int = 64
    epochs: int = 30
    optimizer: str = "adam"
    encoding: str = "raw"
    # dataset and benchmark sizes (desk scale)
    n_train_tasks: int = 50
    episodes_per_task: int = 10
    steps_per_episode: int = 10
    n_eval_tasks: int = 30
    burn_in_list: tuple[int, ...] = (10,)
    horizon_list: tuple[int, ...] = (1, 10)
    strategies: tuple[str, ...] = ("none", "smcd")
    n_particles: int = 200
    flip_rate: float = 0.02
    sigma: float = 0.05
    gradient_lr: float = 1e-3

    def __post_init__(self):
        if not self.grid:
            raise ValueError("sweep grid is empty")
        for key in self.grid:
            if key not in SWEEP_KEYS:
                raise ValueError(f"unknown sweep key {key!r}; expected one of {SWEEP_KEYS}")


def _grid_cells(grid: dict) -> list[dict]:
    keys = sorted(grid)
    cells = [{}]
    for key in keys:
        cells = [dict(c, **{key: v}) for c in cells for v in grid[key]]
    return cells


def _cell_hash(cfg: SweepConfig, params: dict) -> str:
    base = {k: v for k, v in asdict(cfg).items() if k not in ("grid", "cache_dir")}
    blob = json.dumps({"base": base, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _run_cell(cfg: SweepConfig, params: dict) -> list[dict]:
    width = int(params.get("hidden_width", cfg.hidden_width))
    p = float(params.get("dropout_p", cfg.dropout_p))
    lr = float(params.get("lr", cfg.lr))
    batch = int(params.get("batch", cfg.batch))

    spec = DatasetSpec(cfg.n_train_tasks, cfg.episodes_per_task,
                       cfg.steps_per_episode, seed=cfg.seed)
    data = generate_dataset(spec)
    x, y = training_arrays(data, cfg.encoding)
    arch = (encoded_input_dim(cfg.encoding),) + (width,) * cfg.n_hidden + (2,)
    net = init_net(arch, dropout_p=p, seed=cfg.seed)
    net = train(net, (x, y), TrainConfig(lr, cfg.epochs, batch, cfg.seed, cfg.optimizer))

    bench = BenchConfig(
        burn_in_list=cfg.burn_in_list, horizon_list=cfg.horizon_list,
        n_eval_tasks=cfg.n_eval_tasks, strategies=cfg.strategies,
        seed=cfg.seed, encoding=cfg.encoding,
        filter_cfg=FilterConfig(
            n_particles=int(params.get("n_particles", cfg.n_particles)),
            flip_rate=float(params.get("flip_rate", cfg.flip_rate)),
            meas_noise_sigma=float(params.get("sigma", cfg.sigma)),
            seed=cfg.seed),
        gradient_lr=cfg.gradient_lr)
    rows = lookahead_benchmark(net, bench)
    out = []
    for (strategy, b, h), value in sorted(mean_rmse(rows).items()):
        row = {k: params.get(k, getattr(cfg, k)) for k in SWEEP_KEYS}
        row.update(strategy=strategy, burn_in=b, horizon=h,
                   mean_rmse=value, status="ok")
        out.append(row)
    return out


def run_sweep(cfg: SweepConfig) -> list[dict]:
    """Execute the sweep grid, one trained model per cell.

    Finished cells are loaded from the cache; per-cell failures are
    recorded as error rows and the sweep continues.
    """
    os.makedirs(cfg.cache_dir, exist_ok=True)
    results = []
    for params in _grid_cells(cfg.grid):
        cache_path = os.path.join(cfg.cache_dir, _cell_hash(cfg, params) + ".json")
        if os.path.exists(cache_path):
            with open(cache_path) as f:
                cell = json.load(f)
        else:
            try:
                cell = {"params": params, "rows": _run_cell(cfg, params)}
            except Exception as exc:  # noqa: BLE001 - sweep must survive bad cells
                cell = {"params": params, "error": f"{type(exc).__name__}: {exc}"}
            with open(cache_path, "w") as f:
                json.dump(cell, f)
        if "error" in cell:
            row = {k: params.get(k, getattr(cfg, k)) for k in SWEEP_KEYS}
            row.update(strategy="", burn_in="", horizon="", mean_rmse="",
                       status=cell["error"])
            results.append(row)
        else:
            results.extend(cell["rows"])
    return results


def write_sweep_rows(rows, path) -> None:
    cols = list(SWEEP_KEYS) + ["strategy", "burn_in", "horizon", "mean_rmse", "status"]
    with open(path, "w", newline="\n") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(_fmt_cell(row.get(c, "")) for c in cols) + "\n")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)
