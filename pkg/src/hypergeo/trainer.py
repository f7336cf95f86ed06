"""Episodic training and evaluation of the distance generators.

Embeddings are fixed ball points; only the generators are trained. Each
episode builds Einstein-midpoint prototypes from the support set, mines hard
queries with the fixed geodesic distance, scores hard queries against every
prototype with the adapted distance and leaves easy queries to the fixed
nearest-prototype rule.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diffcore as dc
from . import ghdm
from .data import SyntheticDataset, split_classes
from .diffcore import Tensor
from .errors import InvalidInputError, NumericalFaultError
from .mining import HardSet, PrototypeSet, build_prototypes, mine_hard

log = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy", "contrastive")
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    ways: int = 5
    shots: int = 5
    queries: int = 15
    threshold: float = 0.96
    rank: int = 16
    hidden: int | None = None
    c_min: float = 1e-4
    c_max: float = 3.0
    lr: float = 1e-2
    momentum: float = 0.9
    steps: int = 2000
    loss_kind: str = "cross_entropy"
    margin: float = 1.0
    residual: bool = True
    symmetric: bool = False
    use_projection: bool = True
    use_curvature: bool = True
    init_scale: float = 0.1
    holdout_fraction: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidInputError("threshold must lie in [0, 1]")
        if self.rank < 1 or self.steps < 0:
            raise InvalidInputError("rank must be >= 1 and steps >= 0")
        if self.ways < 2 or self.shots < 1 or self.queries < 1:
            raise InvalidInputError("episodes need ways >= 2, shots >= 1, queries >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInputError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.lr < 0.0:
            raise InvalidInputError("lr must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def ghdm_config(self, dim: int, base_kappa: float) -> ghdm.GHDMConfig:
        return ghdm.GHDMConfig(
            dim=dim, rank=self.rank, hidden=self.hidden, c_min=self.c_min, c_max=self.c_max,
            base_kappa=base_kappa, residual=self.residual, symmetric=self.symmetric,
            use_projection=self.use_projection, use_curvature=self.use_curvature,
            init_scale=self.init_scale,
        )


def benchmark_config(seed: int = 0, **overrides) -> TrainConfig:
    """Training settings of the standard benchmark: a larger generator
    initialisation and step size than the optimizer defaults."""
    params = dict(lr=2e-2, init_scale=0.5)
    params.update(overrides)
    return TrainConfig(seed=seed, **params)


@dataclass
class Episode:
    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    seed: int | None = None


def sample_episode(dataset: SyntheticDataset, classes, ways: int, shots: int, queries: int,
                   rng: np.random.Generator) -> Episode:
    classes = np.asarray(classes)
    if len(classes) < ways:
        raise InvalidInputError(f"{ways}-way episodes need {ways} classes, have {len(classes)}")
    chosen = np.sort(rng.choice(classes, size=ways, replace=False))
    s_idx, q_idx = [], []
    for c in chosen:
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < shots + queries:
            raise InvalidInputError(f"class {c} has {len(members)} points, needs {shots + queries}")
        pick = rng.choice(members, size=shots + queries, replace=False)
        s_idx.append(pick[:shots])
        q_idx.append(pick[shots:])
    s_idx = np.concatenate(s_idx)
    q_idx = np.concatenate(q_idx)
    return Episode(dataset.points[s_idx], dataset.labels[s_idx],
                   dataset.points[q_idx], dataset.labels[q_idx])


@dataclass
class EpisodeOutput:
    protos: PrototypeSet
    hard: HardSet
    distances: Tensor | None  # (|H|, p) adapted distances of hard queries
    probs: Tensor | None  # softmax(-distances)
    targets: np.ndarray  # prototype column of each hard query's label
    predictions: np.ndarray  # combined pipeline, every query
    fixed_predictions: np.ndarray  # nearest prototype under the fixed distance

    @property
    def num_hard(self) -> int:
        return len(self.hard.members)


def episode_logits(params: ghdm.GeneratorParams, episode: Episode, threshold: float) -> EpisodeOutput:
    kappa = params.config.base_kappa
    protos = build_prototypes(episode.support, episode.support_labels, kappa)
    hard = mine_hard(episode.query, protos, threshold)
    fixed = protos.class_ids[hard.nearest]
    predictions = fixed.copy()
    distances = probs = None
    targets = np.zeros(0, dtype=int)
    if len(hard.members):
        p = len(protos)
        q = episode.query[hard.members]
        x_i = np.repeat(q, p, axis=0)
        x_j = np.tile(protos.prototypes, (len(q), 1))
        distances = dc.reshape(ghdm.pair_distances(params, x_i, x_j), (len(q), p))
        probs = dc.softmax(-distances, axis=-1)
        targets = protos.index_of(episode.query_labels[hard.members])
        predictions[hard.members] = protos.class_ids[np.argmax(probs.value, axis=1)]
    return EpisodeOutput(protos, hard, distances, probs, targets, predictions, fixed)


def _one_hot(targets: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(targets), width))
    out[np.arange(len(targets)), targets] = 1.0
    return out


def cross_entropy(probs, targets) -> Tensor:
    """Mean over rows of ``-log p[target]``, probabilities floored at 1e-12."""
    probs = dc.as_tensor(probs)
    picked = dc.sum_pool(probs * _one_hot(np.asarray(targets), probs.shape[1]), axis=-1)
    return -dc.sum_pool(dc.log(dc.clamp(picked, lo=PROB_FLOOR))) / len(targets)


def contrastive(distances, targets, margin: float) -> Tensor:
    """Hinge ``max(0, margin + d(a, pos) - d(a, neg))`` averaged over all
    (anchor, positive prototype, negative prototype) triples."""
    distances = dc.as_tensor(distances)
    rows, width = distances.shape
    onehot = _one_hot(np.asarray(targets), width)
    pos = dc.sum_pool(distances * onehot, axis=-1, keepdims=True)
    hinge = dc.clamp(margin + pos - distances, lo=0.0)
    return dc.sum_pool(hinge * (1.0 - onehot)) / (rows * (width - 1))


def loss(output: EpisodeOutput, kind: str = "cross_entropy", margin: float = 1.0) -> Tensor:
    if kind == "cross_entropy":
        return cross_entropy(output.probs, output.targets)
    if kind == "contrastive":
        return contrastive(output.distances, output.targets, margin)
    raise InvalidInputError(f"unknown loss kind {kind!r}")


@dataclass
class TrainResult:
    params: ghdm.GeneratorParams
    losses: np.ndarray  # NaN where the episode had no hard query
    num_hard: np.ndarray
    train_classes: np.ndarray
    test_classes: np.ndarray
    seconds: float = 0.0

    def smoothed_final_loss(self, window: int | None = None) -> float:
        return smoothed_final_loss(self.losses, window)


def smoothed_final_loss(losses, window: int | None = None) -> float:
    """Mean of the last ``window`` recorded losses (default: last 10% of steps)."""
    losses = np.asarray(losses, dtype=np.float64)
    if window is None:
        window = max(1, len(losses) // 10)
    tail = losses[-window:]
    if not np.any(np.isfinite(tail)):
        return float("nan")
    return float(np.nanmean(tail))


def init_params(dataset: SyntheticDataset, config: TrainConfig) -> ghdm.GeneratorParams:
    return ghdm.GeneratorParams.init(config.ghdm_config(dataset.dim, dataset.kappa), config.seed)


def train(dataset: SyntheticDataset, config: TrainConfig,
          params: ghdm.GeneratorParams | None = None) -> TrainResult:
    """Run ``config.steps`` episodes of mine -> adapted logits -> loss -> SGD.

    Episodes come from the training classes only. With ``lr == 0`` losses are
    recorded but parameters never move.
    """
    t0 = time.perf_counter()
    train_cls, test_cls = split_classes(dataset.class_ids, config.holdout_fraction, config.seed)
    if params is None:
        params = init_params(dataset, config)
    opt = dc.SGD(params.tensors, config.lr, config.momentum) if config.lr > 0 else None
    rng = np.random.default_rng([config.seed, 0])
    losses = np.full(config.steps, np.nan)
    num_hard = np.zeros(config.steps, dtype=int)
    for step in range(config.steps):
        episode = sample_episode(dataset, train_cls, config.ways, config.shots, config.queries, rng)
        try:
            with dc.Tape() as tape:
                out = episode_logits(params, episode, config.threshold)
                num_hard[step] = out.num_hard
                if out.num_hard == 0:
                    continue
                value = loss(out, config.loss_kind, config.margin)
            if not np.isfinite(value.item()):
                raise NumericalFaultError(f"training step {step}", f"loss diverged at step {step}")
            losses[step] = value.item()
            if opt is not None:
                tape.backward(value)
                opt.step()
        except NumericalFaultError as exc:
            if exc.where.startswith("training step"):
                raise
            raise NumericalFaultError(f"training step {step}",
                                      f"non-finite value in {exc.where} at step {step}") from exc
        if step % 200 == 0:
            log.debug("step %d loss %.4f hard %d", step, losses[step], num_hard[step])
    return TrainResult(params, losses, num_hard, train_cls, test_cls, time.perf_counter() - t0)


@dataclass
class EpisodeMetrics:
    accuracy: float
    fixed_accuracy: float
    hard_fraction: float
    hard_correct: int
    hard_fixed_correct: int
    hard_total: int
    easy_correct: int
    easy_total: int


@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    fixed_accuracy: float
    fixed_ci95: float
    hard_fraction: float
    hard_accuracy: float
    hard_fixed_accuracy: float
    easy_accuracy: float
    episodes: list

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("episodes")
        d["num_episodes"] = len(self.episodes)
        return d


def _ci95(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(len(values)))


def _ratio(num: int, den: int) -> float:
    return num / den if den else float("nan")


def evaluate_episode(params: ghdm.GeneratorParams, episode: Episode, threshold: float) -> EpisodeMetrics:
    out = episode_logits(params, episode, threshold)
    labels = episode.query_labels
    hard = out.hard.mask
    correct = out.predictions == labels
    fixed_correct = out.fixed_predictions == labels
    return EpisodeMetrics(
        accuracy=float(correct.mean()),
        fixed_accuracy=float(fixed_correct.mean()),
        hard_fraction=float(hard.mean()),
        hard_correct=int(correct[hard].sum()),
        hard_fixed_correct=int(fixed_correct[hard].sum()),
        hard_total=int(hard.sum()),
        easy_correct=int(fixed_correct[~hard].sum()),
        easy_total=int((~hard).sum()),
    )


def eval_episodes(dataset: SyntheticDataset, config: TrainConfig, episodes: int,
                  classes=None) -> list[Episode]:
    """Deterministic held-out episodes; episode ``i`` depends only on (seed, i)."""
    if classes is None:
        _, classes = split_classes(dataset.class_ids, config.holdout_fraction, config.seed)
    out = []
    for i in range(episodes):
        rng = np.random.default_rng([config.seed, 1, i])
        ep = sample_episode(dataset, classes, config.ways, config.shots, config.queries, rng)
        ep.seed = i
        out.append(ep)
    return out


def evaluate(params: ghdm.GeneratorParams, dataset: SyntheticDataset, config: TrainConfig,
             episodes: int = 200, threads: int = 1, classes=None) -> EvalReport:
    """Accuracy +- 95% CI of the combined pipeline and of the fixed baseline."""
    eps = eval_episodes(dataset, config, episodes, classes)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(lambda e: evaluate_episode(params, e, config.threshold), eps))
    else:
        rows = [evaluate_episode(params, e, config.threshold) for e in eps]
    acc = [r.accuracy for r in rows]
    fixed = [r.fixed_accuracy for r in rows]
    hard_total = sum(r.hard_total for r in rows)
    easy_total = sum(r.easy_total for r in rows)
    return EvalReport(
        accuracy=float(np.mean(acc)),
        ci95=_ci95(acc),
        fixed_accuracy=float(np.mean(fixed)),
        fixed_ci95=_ci95(fixed),
        hard_fraction=float(np.mean([r.hard_fraction for r in rows])),
        hard_accuracy=_ratio(sum(r.hard_correct for r in rows), hard_total),
        hard_fixed_accuracy=_ratio(sum(r.hard_fixed_correct for r in rows), hard_total),
        easy_accuracy=_ratio(sum(r.easy_correct for r in rows), easy_total),
        episodes=rows,
    )


def time_evaluation(params: ghdm.GeneratorParams, episodes: list[Episode], threshold: float,
                    repeats: int = 3) -> float:
    """Median wall time (seconds) to score ``episodes`` at ``threshold``."""
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for ep in episodes:
            episode_logits(params, ep, threshold)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))
