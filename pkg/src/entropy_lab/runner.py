"""Config loading and the (agent x seed) experiment loop."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .agents import Agent, AgentConfig, make_config
from .metrics import MetricsRecord, evaluate
from .numerics import InvalidInputError
from .streams import Streams, stream

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["step", "value", "entropy_state", "entropy_marginal"]
HISTOGRAM_COLUMNS = ["step", "action", "count", "sorted_rank"]

DESK_SCALE_NOTE = (
    "desk-scale run: datasets, interaction budgets and eval-set sizes are "
    "reduced from the full-scale experiments"
)


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the field path."""


# -- config ------------------------------------------------------------------

ENV_KEYS = {
    "classification": {"kind", "dataset", "train_images", "train_labels", "eval_images",
                       "eval_labels", "train_size", "reward_mode"},
    "genre": {"kind", "genre_features", "track_features", "epsilon", "n_genres", "n_tracks"},
    "click": {"kind", "n_products", "dim", "temperature"},
    "preference": {"kind", "n_actions", "dim", "noise_scale"},
}
AGENT_KEYS = {"kind", "name", "hidden", "lr", "batch_size", "activation", "bias", "init",
              "ppo_clip", "ppo_epochs", "normalize_advantage", "dqn_epsilon_start",
              "dqn_epsilon_end", "dqn_exploration_fraction", "dqn_buffer_capacity",
              "ql_epsilon"}
TOP_KEYS = {"name", "env", "agents", "total_interactions", "eval_every", "eval_size",
            "seeds", "output_dir"}


def _reject_unknown(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}: unknown key")


def _int(obj, key, path, default=None, minimum=None):
    val = obj.get(key, default)
    if val is None or isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}, got {val}")
    return val


@dataclass
class RunConfig:
    env: dict
    agents: list[dict]
    total_interactions: int
    eval_every: int
    eval_size: int
    seeds: list[int]
    output_dir: Path
    name: str = "experiment"
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "RunConfig":
        base = Path(base_dir) if base_dir else Path.cwd()
        _reject_unknown(raw, TOP_KEYS, "config")
        for key in ("env", "agents", "total_interactions", "eval_every", "seeds", "output_dir"):
            if key not in raw:
                raise ConfigError(f"config.{key}: missing")
        env = raw["env"]
        if not isinstance(env, dict) or env.get("kind") not in ENV_KEYS:
            raise ConfigError(f"config.env.kind: must be one of {sorted(ENV_KEYS)}")
        _reject_unknown(env, ENV_KEYS[env["kind"]], "config.env")
        total = _int(raw, "total_interactions", "config", minimum=0)
        every = _int(raw, "eval_every", "config", minimum=1)
        if total and every > total:
            raise ConfigError("config.eval_every: must not exceed total_interactions")
        eval_size = _int(raw, "eval_size", "config", default=1000, minimum=1)
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("config.seeds: expected a nonempty list of integers")
        agents = raw["agents"]
        if not isinstance(agents, list) or not agents:
            raise ConfigError("config.agents: expected a nonempty list")
        labels = set()
        for i, a in enumerate(agents):
            _reject_unknown(a, AGENT_KEYS, f"config.agents[{i}]")
            if "kind" not in a or "lr" not in a:
                raise ConfigError(f"config.agents[{i}]: 'kind' and 'lr' are required")
            label = a.get("name") or a["kind"]
            if label in labels:
                raise ConfigError(f"config.agents[{i}].name: duplicate agent name {label!r}")
            labels.add(label)
        for key in ("train_images", "train_labels", "eval_images", "eval_labels",
                    "genre_features", "track_features"):
            if key in env:
                p = base / env[key]
                if not p.exists():
                    raise ConfigError(f"config.env.{key}: file not found: {p}")
        cfg = cls(env=env, agents=agents, total_interactions=total, eval_every=every,
                  eval_size=eval_size, seeds=list(seeds), output_dir=base / raw["output_dir"],
                  name=str(raw.get("name", "experiment")), base_dir=base)
        # build every agent config once so bad values fail at startup
        for i, a in enumerate(agents):
            try:
                agent_config(a, state_dim=4, n_actions=2)
            except (InvalidInputError, TypeError) as exc:
                raise ConfigError(f"config.agents[{i}]: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def with_seed_offset(self, offset: int) -> "RunConfig":
        if not offset:
            return self
        return RunConfig(self.env, self.agents, self.total_interactions, self.eval_every,
                         self.eval_size, [s + offset for s in self.seeds], self.output_dir,
                         self.name, self.base_dir)

    def to_dict(self) -> dict:
        return {"name": self.name, "env": self.env, "agents": self.agents,
                "total_interactions": self.total_interactions, "eval_every": self.eval_every,
                "eval_size": self.eval_size, "seeds": self.seeds}


def agent_config(raw: dict, state_dim: int, n_actions: int) -> AgentConfig:
    kw = {k: v for k, v in raw.items() if k not in ("kind", "hidden", "lr", "activation", "bias")}
    return make_config(raw["kind"], state_dim, n_actions, tuple(raw.get("hidden", ())),
                       lr=raw["lr"], activation=raw.get("activation"),
                       bias=raw.get("bias"), **kw)


# -- environments ------------------------------------------------------------------


def _classification_sets(env_cfg, eval_size, base):
    if env_cfg.get("dataset", "digits") == "digits":
        data = envs.load_digits_set()
        n_eval = min(eval_size, len(data) // 2)
        train = data.subset(slice(0, len(data) - n_eval))
        evaluation = data.subset(slice(len(data) - n_eval, None))
    else:
        train = envs.load_idx_files(base / env_cfg["train_images"], base / env_cfg["train_labels"])
        if "eval_images" in env_cfg:
            evaluation = envs.load_idx_files(base / env_cfg["eval_images"],
                                             base / env_cfg["eval_labels"])
            evaluation = evaluation.subset(slice(0, eval_size))
        else:
            evaluation = train.subset(slice(len(train) - eval_size, None))
            train = train.subset(slice(0, len(train) - eval_size))
    if "train_size" in env_cfg:
        train = train.subset(slice(0, int(env_cfg["train_size"])))
    return train, evaluation


def build_env(cfg: RunConfig, seed: int) -> envs.ContextualBandit:
    e = cfg.env
    kind = e["kind"]
    rng = stream(seed, "env_init")
    base = cfg.base_dir
    if kind == "classification":
        train, evaluation = _classification_sets(e, cfg.eval_size, base)
        return envs.ClassificationBandit(train, evaluation,
                                         reward_mode=e.get("reward_mode", "signed"))
    if kind == "genre":
        if "genre_features" in e:
            _, genres = envs.read_feature_csv(base / e["genre_features"])
            _, tracks = envs.read_feature_csv(base / e["track_features"])
            model = envs.GenreModel(genres, tracks, e.get("epsilon", 0.1))
        else:
            model = envs.GenreModel.random(rng, e.get("n_genres", envs.N_GENRES),
                                           e.get("n_tracks", envs.N_TRACKS),
                                           e.get("epsilon", 0.1))
        return envs.GenreBandit(model, cfg.eval_size, rng)
    if kind == "click":
        model = envs.ClickModel.random(rng, e.get("n_products", 50), e.get("dim", 50),
                                       e.get("temperature", 2.0))
        return envs.ClickBandit(model, cfg.eval_size, rng)
    model = envs.PreferenceModel.random(rng, e.get("n_actions", 100), e.get("dim", 100),
                                        e.get("noise_scale", 0.0))
    return envs.PreferenceBandit(model, cfg.eval_size, rng)


# -- output --------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def sorted_ranks(counts) -> np.ndarray:
    order = np.argsort(-np.asarray(counts), kind="stable")
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(len(order))
    return ranks


class RunWriter:
    def __init__(self, run_dir: Path):
        run_dir.mkdir(parents=True, exist_ok=True)
        self.metrics = open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8")
        self.hist = open(run_dir / "histograms.csv", "w", newline="", encoding="utf-8")
        self.mw = csv.writer(self.metrics, lineterminator="\n")
        self.hw = csv.writer(self.hist, lineterminator="\n")
        self.mw.writerow(METRICS_COLUMNS)
        self.hw.writerow(HISTOGRAM_COLUMNS)

    def write(self, rec: MetricsRecord):
        self.mw.writerow([rec.step, _fmt(rec.value), _fmt(rec.entropy_state),
                          _fmt(rec.entropy_marginal)])
        for action, (count, rank) in enumerate(zip(rec.histogram, sorted_ranks(rec.histogram))):
            self.hw.writerow([rec.step, action, int(count), int(rank)])

    def close(self):
        self.metrics.close()
        self.hist.close()


def run_dir_for(cfg: RunConfig, label: str, seed: int) -> Path:
    return cfg.output_dir / label / f"seed_{seed}"


@dataclass
class RunResult:
    label: str
    seed: int
    status: str
    records: list[MetricsRecord]
    diagnostic: dict | None = None


def run_single(cfg: RunConfig, agent_index: int, seed: int) -> RunResult:
    """Train one agent on one seed, writing its CSVs as checkpoints arrive."""
    env = build_env(cfg, seed)
    raw = cfg.agents[agent_index]
    acfg = agent_config(raw, env.state_dim, env.n_actions)
    streams = Streams(seed, agent_index)
    shared = Streams(seed)
    agent = Agent(acfg, init_rng=streams.agent_init, rng=streams.action,
                  total_interactions=cfg.total_interactions)
    label = acfg.label
    out = run_dir_for(cfg, label, seed)
    writer = RunWriter(out)
    records = []
    modes = set()

    def checkpoint(step):
        rec = evaluate(agent.policy_probs, env, env.eval_set, shared.eval_at(step), step)
        rec.actions = None
        writer.write(rec)
        records.append(rec)
        modes.add(rec.value_mode)

    status, diagnostic = "completed", None
    state_rng = shared.state
    reward_rng = streams.reward
    t, a, r = 0, None, None
    try:
        checkpoint(0)
        for t in range(1, cfg.total_interactions + 1):
            X, aux = env.sample_states(state_rng, 1)
            a = agent.act(X[0])
            r = env.rewards(X, aux, [a], reward_rng)[0]
            agent.observe(X[0], a, r)
            if t % cfg.eval_every == 0:
                checkpoint(t)
    except (InvalidInputError, FloatingPointError) as exc:
        status = "aborted"
        diagnostic = {"step": t, "reason": f"non-finite values: {exc}"}
        if a is not None:
            diagnostic["last_interaction"] = {"action": int(a), "reward": float(r)
                                              if r is not None else None}
        log.error("%s seed %d aborted at step %d: %s", label, seed, t, exc)
    finally:
        writer.close()
    meta = {"agent": label, "seed": seed, "status": status, "config": raw,
            "network": acfg.net.to_dict(), "env": env.describe(),
            "value_mode": sorted(modes), "note": DESK_SCALE_NOTE}
    if diagnostic:
        meta["diagnostic"] = diagnostic
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return RunResult(label, seed, status, records, diagnostic)


def _worker_count() -> int:
    raw = os.environ.get("ENTROPY_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg: RunConfig, workers: int | None = None) -> list[RunResult]:
    """Run every (agent, seed) pair; results come back in config order."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    header = {"config": cfg.to_dict(), "note": DESK_SCALE_NOTE,
              "metrics_columns": METRICS_COLUMNS, "histogram_columns": HISTOGRAM_COLUMNS}
    (cfg.output_dir / "experiment.json").write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    jobs = [(i, seed) for i in range(len(cfg.agents)) for seed in cfg.seeds]
    workers = workers or _worker_count()
    if workers <= 1 or len(jobs) == 1:
        return [run_single(cfg, i, seed) for i, seed in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(run_single, cfg, i, seed) for i, seed in jobs]
        return [f.result() for f in futures]
