"""
Multi-agent training runs, the reward-based agent filters, aggregation across
surviving agents, and CSV/plot/manifest output.

Every agent is a pure function of ``(ExperimentConfig, seed)``: four
independent random streams (parameter init, environment, action sampling,
minibatch shuffling) are spawned from the seed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, checkpoint
from .baseline import ClassicalPolicy, ValueNet, ValueNetParams
from .circuit import EncodingVariant, PhotonicCircuit, softmax_with_temperature
from .env import CartPoleEnv
from .exceptions import GateDomainError, InvalidConfigError, NumericalDegeneracyError
from .fock import SimConfig
from .ppo import AdamState, Hyperparameters, RolloutBuffer, TrajectoryStep, update

log = logging.getLogger(__name__)

POLICY_KINDS = ("classical", "single", "reupload")
AGENT_COLUMNS = (
    "episode", "seed", "reward", "moving_avg", "policy_loss", "clip_term", "kl_term",
    "entropy_term", "l2_term", "value_loss", "min_state_norm",
)
AGGREGATE_COLUMNS = (
    "episode", "n_surviving", "mean_reward", "std_reward", "mean_moving_avg", "std_moving_avg",
)
SURVIVING = ("active", "completed")


@dataclass(frozen=True)
class ExperimentConfig:
    policy_kind: str = "reupload"
    layers: int = 3
    cutoff: int = 16
    episodes: int = 1000
    num_agents: int = 20
    seeds: tuple = ()
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    filter_enabled: bool = True
    filter_low: bool = True
    filter_high_start: bool = True
    filter_episode: int = 500
    filter_threshold: float = 100.0
    window: int = 20
    checkpoint_every: int = 0
    gradient_engine: str = "adjoint"
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.policy_kind == "single-encode":
            object.__setattr__(self, "policy_kind", "single")
        if self.policy_kind not in POLICY_KINDS:
            raise InvalidConfigError(f"policy_kind must be one of {POLICY_KINDS}; got {self.policy_kind!r}.")
        if self.episodes < 1:
            raise InvalidConfigError(f"episodes must be >= 1; got {self.episodes}.")
        if self.layers < 1 or self.cutoff < 2:
            raise InvalidConfigError("need layers >= 1 and cutoff >= 2.")
        if not self.seeds:
            object.__setattr__(self, "seeds", tuple(range(1, self.num_agents + 1)))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) != self.num_agents:
            raise InvalidConfigError(
                f"num_agents={self.num_agents} but {len(self.seeds)} seeds were given."
            )
        if self.window < 1:
            raise InvalidConfigError("window must be >= 1.")
        if self.gradient_engine not in ("adjoint", "finite-difference"):
            raise InvalidConfigError(f"unknown gradient engine {self.gradient_engine!r}.")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        hp = data.pop("hp", {}) or {}
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}.")
        return cls(hp=Hyperparameters().replace(**hp), **data)


_CONFIG_TYPES = {
    "policy_kind": str, "layers": int, "cutoff": int, "episodes": int, "num_agents": int,
    "seed_base": int, "filter_enabled": "bool", "filter_low": "bool", "filter_high_start": "bool",
    "filter_episode": int, "filter_threshold": float, "window": int, "checkpoint_every": int,
    "gradient_engine": str, "output_dir": str,
}


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidConfigError(f"not a boolean: {value!r}.")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines. ``hp.<name>`` keys set hyperparameters;
    ``seeds`` is a comma-separated list. Unknown keys raise."""
    values: dict = {}
    hp: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise InvalidConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}.")
        if key.startswith("hp."):
            hp[key[3:]] = value
        elif key == "seeds":
            values["seeds"] = tuple(int(s) for s in value.replace(",", " ").split())
        elif key in _CONFIG_TYPES:
            kind = _CONFIG_TYPES[key]
            try:
                values[key] = _parse_bool(value) if kind == "bool" else kind(value)
            except ValueError:
                raise InvalidConfigError(f"config line {lineno}: bad value for {key}: {value!r}.") from None
        else:
            raise InvalidConfigError(f"config line {lineno}: unknown key {key!r}.")
    if hp:
        Hyperparameters().replace(**hp)  # validate names and values early
    values["hp"] = hp
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None,
                 hp_overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults, config-file values and command-line overrides (last wins)."""
    merged = dict(file_values or {})
    hp = dict(merged.pop("hp", {}) or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    hp.update(hp_overrides or {})
    seed_base = merged.pop("seed_base", None)
    if "seeds" in merged and seed_base is None:
        merged.setdefault("num_agents", len(merged["seeds"]))
    else:
        n = merged.get("num_agents", ExperimentConfig.num_agents)
        base = 1 if seed_base is None else seed_base
        merged["seeds"] = tuple(range(base, base + n))
    return ExperimentConfig(hp=Hyperparameters().replace(**hp), **merged)


# ---------------------------------------------------------------------------
# Records

def moving_average(rewards, window: int = 20) -> np.ndarray:
    """Trailing mean over ``window`` episodes; the first entries average the available prefix."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return r
    c = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class AgentRecord:
    seed: int
    rewards: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    status: str = "active"
    window: int = 20
    error: Optional[str] = None
    seconds_per_episode: float = float("nan")
    policy_theta: Optional[np.ndarray] = None
    value_theta: Optional[np.ndarray] = None

    @property
    def moving_average(self) -> np.ndarray:
        return moving_average(self.rewards, self.window)

    def rows(self) -> list[dict]:
        ma = self.moving_average
        out = []
        for i, reward in enumerate(self.rewards):
            d = self.diagnostics[i] if i < len(self.diagnostics) else {}
            out.append({
                "episode": i + 1, "seed": self.seed, "reward": reward, "moving_avg": ma[i],
                **{k: d.get(k, float("nan")) for k in AGENT_COLUMNS[4:]},
            })
        return out


def make_policy(cfg: ExperimentConfig):
    if cfg.policy_kind == "classical":
        return ClassicalPolicy()
    return PhotonicCircuit(SimConfig(2, cfg.cutoff), cfg.layers, EncodingVariant(cfg.policy_kind))


def run_agent(cfg: ExperimentConfig, seed: int,
              on_checkpoint: Callable[[int, int, np.ndarray, np.ndarray], None] | None = None) -> AgentRecord:
    """Train one agent for ``cfg.episodes`` episodes.

    A gate-domain or numerical failure ends the agent early with status
    ``"aborted"`` and the error text kept on the record.
    """
    hp = cfg.hp
    init_ss, env_ss, act_ss, upd_ss = np.random.SeedSequence(seed).spawn(4)
    init_rng = np.random.default_rng(init_ss)
    act_rng = np.random.default_rng(act_ss)
    upd_rng = np.random.default_rng(upd_ss)
    env = CartPoleEnv(np.random.default_rng(env_ss), hp.horizon)

    policy = make_policy(cfg)
    value_net = ValueNet()
    theta = policy.init_params(init_rng)
    vtheta = value_net.init_params(init_rng)
    p_adam = AdamState.zeros(theta.size)
    v_adam = AdamState.zeros(vtheta.size)
    buffer = RolloutBuffer(hp.memory)
    record = AgentRecord(seed=seed, window=cfg.window)

    start = time.perf_counter()
    try:
        for episode in range(cfg.episodes):
            obs = env.reset()
            total = 0.0
            while True:
                scores, norms = policy.scores(theta, [obs])
                probs, logp = softmax_with_temperature(scores, hp.tau)
                action = int(act_rng.random() < probs[0, 1])
                value = float(value_net.predict(vtheta, [obs])[0])
                result = env.step(action)
                total += result.reward
                buffer.append(TrajectoryStep(
                    obs=obs, action=action, reward=result.reward, log_prob_old=float(logp[0, action]),
                    value=value, done=result.done, probs_old=(float(probs[0, 0]), float(probs[0, 1])),
                    state_norm=None if norms is None else float(norms[0]),
                ))
                obs = result.observation
                if result.done:
                    break
            res = update(buffer, policy, theta, value_net, vtheta, p_adam, v_adam, hp, upd_rng,
                         lr_scale=hp.learning_rate_scale(episode), gradient_engine=cfg.gradient_engine)
            if hp.buffer_mode == "episode":
                buffer.clear()
            theta, vtheta, p_adam, v_adam = res.theta, res.value_theta, res.policy_adam, res.value_adam
            if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(vtheta))):
                raise NumericalDegeneracyError("parameters became non-finite.")
            record.rewards.append(total)
            record.diagnostics.append(res.diagnostics)
            if on_checkpoint and cfg.checkpoint_every and (episode + 1) % cfg.checkpoint_every == 0:
                on_checkpoint(seed, episode + 1, theta, vtheta)
        record.status = "completed"
    except (GateDomainError, NumericalDegeneracyError, FloatingPointError) as exc:
        log.warning("agent %d aborted at episode %d: %s", seed, len(record.rewards) + 1, exc)
        record.status = "aborted"
        record.error = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    record.seconds_per_episode = elapsed / max(1, len(record.rewards))
    record.policy_theta, record.value_theta = theta, vtheta
    return record


# ---------------------------------------------------------------------------
# Filtering and aggregation

def apply_filters(records, checkpoint_episode: int = 500, threshold: float = 100.0,
                  low: bool = True, high_start: bool = True) -> list[AgentRecord]:
    """Return copies of ``records`` with membership statuses; reward data is untouched.

    * high start: the first moving-average window already exceeds ``threshold``.
    * low: the moving average at episode ``checkpoint_episode`` is below ``threshold``.
    """
    out = []
    for rec in records:
        status = rec.status
        if status in SURVIVING and rec.rewards:
            ma = rec.moving_average
            first_window = ma[min(rec.window, len(ma)) - 1]
            if high_start and first_window > threshold:
                status = "filtered_high_start"
            elif low and len(ma) >= checkpoint_episode and ma[checkpoint_episode - 1] < threshold:
                status = "filtered_low"
            else:
                status = "completed"
        out.append(dataclasses.replace(rec, status=status))
    return out


class EmptyAggregateError(ValueError):
    pass


@dataclass
class Aggregate:
    episode: np.ndarray
    n_surviving: np.ndarray
    mean_reward: np.ndarray
    std_reward: np.ndarray
    mean_moving_avg: np.ndarray
    std_moving_avg: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {c: getattr(self, c)[i] for c in AGGREGATE_COLUMNS} for i in range(len(self.episode))
        ]


def aggregate(records, window: int = 20) -> Aggregate:
    """Per-episode mean and population standard deviation over surviving agents."""
    survivors = [r for r in records if r.status in SURVIVING and r.rewards]
    if not survivors:
        raise EmptyAggregateError("no surviving agents to aggregate.")
    length = max(len(r.rewards) for r in survivors)
    rewards = np.full((len(survivors), length), np.nan)
    mas = np.full_like(rewards, np.nan)
    for i, r in enumerate(survivors):
        rewards[i, : len(r.rewards)] = r.rewards
        mas[i, : len(r.rewards)] = moving_average(r.rewards, window)
    present = ~np.isnan(rewards)
    n = present.sum(axis=0)

    def mean_std(a):
        filled = np.where(present, a, 0.0)
        mean = filled.sum(axis=0) / n
        var = np.where(present, (a - mean) ** 2, 0.0).sum(axis=0) / n
        return mean, np.sqrt(var)

    mr, sr = mean_std(rewards)
    mm, sm = mean_std(mas)
    return Aggregate(np.arange(1, length + 1), n, mr, sr, mm, sm)


# ---------------------------------------------------------------------------
# Output

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (float(v) if v != "" else float("nan")) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def agent_csv_path(out_dir: Path, seed: int) -> Path:
    return out_dir / "agents" / f"agent_{seed}.csv"


def save_checkpoint(out_dir: Path, cfg: ExperimentConfig, seed: int, episode, theta, vtheta) -> None:
    policy = make_policy(cfg)
    ckdir = out_dir / "checkpoints" / f"agent_{seed}"
    ckdir.mkdir(parents=True, exist_ok=True)
    header = {"policy_kind": cfg.policy_kind, "seed": str(seed), "episode": str(episode)}
    checkpoint.save(ckdir / f"episode_{episode}.policy.txt", policy.params(theta).named(), header)
    checkpoint.save(ckdir / f"episode_{episode}.value.txt", ValueNetParams.from_flat(vtheta).named(), header)


def _plot(out_dir: Path, records, agg: Aggregate, cfg: ExperimentConfig) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "photonic-ppo"
    files = []
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(agg.episode, agg.mean_reward, lw=1.0, label="mean reward")
    ax.fill_between(agg.episode, agg.mean_reward - agg.std_reward, agg.mean_reward + agg.std_reward,
                    alpha=0.25, label="±σ")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward")
    ax.set_title(f"{cfg.policy_kind}: surviving agents (n={int(agg.n_surviving.max())})")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(out_dir / "rewards.svg", metadata={"Date": None})
    plt.close(fig)
    files.append("rewards.svg")

    fig, ax = plt.subplots(figsize=(7, 4))
    for rec in records:
        if rec.status in SURVIVING and rec.rewards:
            ax.plot(np.arange(1, len(rec.rewards) + 1), rec.moving_average, lw=0.8, label=f"seed {rec.seed}")
    ax.set_xlabel("episode")
    ax.set_ylabel(f"moving average ({cfg.window})")
    fig.tight_layout()
    fig.savefig(out_dir / "agents.svg", metadata={"Date": None})
    plt.close(fig)
    files.append("agents.svg")
    return files


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def emit_outputs(records, agg: Aggregate | None, cfg: ExperimentConfig,
                 out_dir=None, plots: bool = True) -> dict:
    """Write agent CSVs, the aggregate CSV, plots, final checkpoints and the manifest."""
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "empty": not records,
        "agents": [],
        "files": {},
    }
    if records:
        (out_dir / "agents").mkdir(exist_ok=True)
        for rec in records:
            path = agent_csv_path(out_dir, rec.seed)
            write_csv(path, AGENT_COLUMNS, rec.rows())
            if rec.policy_theta is not None:
                save_checkpoint(out_dir, cfg, rec.seed, "final", rec.policy_theta, rec.value_theta)
            manifest["agents"].append({
                "seed": rec.seed, "status": rec.status, "episodes": len(rec.rewards),
                "error": rec.error, "seconds_per_episode": rec.seconds_per_episode,
                "csv": str(path.relative_to(out_dir)), "sha256": _sha256(path),
            })
        if agg is not None:
            write_csv(out_dir / "aggregate.csv", AGGREGATE_COLUMNS, agg.rows())
            manifest["files"]["aggregate"] = {"path": "aggregate.csv", "sha256": _sha256(out_dir / "aggregate.csv")}
            if plots:
                manifest["files"]["plots"] = _plot(out_dir, records, agg, cfg)
        else:
            manifest["no_survivors"] = True
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _run_agent_job(args):
    cfg, seed, out_dir = args
    callback = None
    if out_dir is not None and cfg.checkpoint_every:
        def callback(s, ep, th, vth):
            save_checkpoint(Path(out_dir), cfg, s, ep, th, vth)
    return run_agent(cfg, seed, callback)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, plots: bool = True):
    """Train every seed, filter, aggregate and write outputs.

    Returns ``(records, aggregate or None, manifest)``.
    """
    out_dir = Path(out_dir or cfg.output_dir)
    jobs = [(cfg, seed, str(out_dir)) for seed in cfg.seeds]
    workers = max(1, min(workers, len(jobs) or 1))
    if workers == 1:
        raw = [_run_agent_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_agent_job, jobs))
    if cfg.filter_enabled:
        records = apply_filters(raw, cfg.filter_episode, cfg.filter_threshold, cfg.filter_low, cfg.filter_high_start)
    else:
        records = apply_filters(raw, low=False, high_start=False)
    try:
        agg = aggregate(records, cfg.window)
    except EmptyAggregateError:
        agg = None
    manifest = emit_outputs(records, agg, cfg, out_dir, plots=plots)
    return records, agg, manifest


def replay(manifest_path, out_dir=None, workers: int = 1) -> tuple[bool, dict]:
    """Re-run the experiment in ``manifest_path`` and compare CSV hashes.

    Returns ``(identical, new_manifest)``.
    """
    manifest_path = Path(manifest_path)
    old = json.loads(manifest_path.read_text())
    cfg = ExperimentConfig.from_dict(old["config"])
    out_dir = Path(out_dir) if out_dir else manifest_path.parent / "replay"
    _, _, new = run_experiment(cfg, out_dir, workers=workers)
    same = old.get("files", {}).get("aggregate", {}).get("sha256") == new.get("files", {}).get("aggregate", {}).get("sha256")
    same &= [(a["seed"], a["sha256"]) for a in old["agents"]] == [(a["seed"], a["sha256"]) for a in new["agents"]]
    return bool(same), new
