"""Two-stage training: contrastive warm-up on triplets, then
correlation-loss refinement on fine-grained pairs, plus the evaluation
harness and the three-arm ceiling experiment.

Stage I iterates seeded shuffled triplet batches and minimizes the
contrastive loss (extended form when hard negatives are present). Stage
II starts from a stage-I checkpoint, encodes both sides of each scored
pair, and minimizes ``1 - pearson(cosines, gold)``; every encoder
parameter stays trainable. Evaluation reports Spearman x100 per dataset
and their unweighted mean.

Determinism: given (seed, config, dataset), training logs, checkpoints
and evaluation reports are identical across runs. In-memory training
logs therefore carry no wall-clock fields; the CLI layer records timing
in sidecar metadata instead.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from collections.abc import Callable, Mapping, Sequence

import numpy as np

from . import encoder as enc
from .bound import max_spearman
from .correlation import spearman
from .data import (
    POSITIVE_THRESHOLD,
    ScoredPair,
    SynthConfig,
    SynthDataset,
    Triplet,
    synth_generate,
    to_contrastive,
)
from .errors import DegenerateInput, InvalidInput, TrainingDiverged
from .losses import (
    ContrastiveBatch,
    SimilarityBatch,
    VarianceGuard,
    contrastive_grad,
    info_nce,
    info_nce_extended,
    pearson_loss,
    pearson_loss_grad,
)

__all__ = [
    "StageConfig",
    "TrainLogEntry",
    "TrainingResult",
    "EvalReport",
    "ExperimentConfig",
    "ExperimentResult",
    "EXPERIMENT_CSV_HEADER",
    "train_stage1",
    "train_stage2",
    "evaluate",
    "run_ceiling_experiment",
    "run_ceiling_experiments",
    "experiment_csv_lines",
    "default_experiment_config",
]

EncoderLike = enc.EncoderParams | Callable[[np.ndarray], np.ndarray]

EXPERIMENT_CSV_HEADER = "arm,test_spearman_x100,ceiling_x100,seed"
EXPERIMENT_ARMS = ("stage1", "contrastive", "pearson")


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters of one training stage.

    ``temperature`` is required for stage I and must be absent for stage
    II (the correlation loss has no temperature). ``eval_every`` > 0
    makes the trainer snapshot dev metrics every that many steps when
    eval sets are supplied.
    """

    stage: str
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int
    temperature: float | None = None
    eval_every: int = 0
    variance_guard: VarianceGuard = "train"

    def __post_init__(self):
        if self.stage not in ("I", "II"):
            raise InvalidInput(f"stage must be 'I' or 'II', got {self.stage!r}")
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.batch_size < 2:
            raise InvalidInput("batch_size must be >= 2")
        if self.epochs < 0:
            raise InvalidInput("epochs must be non-negative")
        if self.eval_every < 0:
            raise InvalidInput("eval_every must be non-negative")
        if self.stage == "I":
            if self.temperature is None or self.temperature <= 0:
                raise InvalidInput("stage I requires a positive temperature")
        elif self.temperature is not None:
            raise InvalidInput("stage II takes no temperature")
        if self.variance_guard not in ("strict", "train"):
            raise InvalidInput(f"unknown variance guard {self.variance_guard!r}")


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    loss: float
    lr: float


@dataclass(frozen=True)
class TrainingResult:
    params: enc.EncoderParams
    log: list[TrainLogEntry]
    evals: list[tuple[int, "EvalReport"]] = field(default_factory=list)


@dataclass(frozen=True)
class EvalReport:
    """Spearman x100 per dataset plus their unweighted mean."""

    checkpoint: str
    per_dataset: dict[str, float]
    average: float
    n_pairs: dict[str, int]
    timestamp: str = ""

    def as_dict(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "per_dataset": dict(self.per_dataset),
            "average": self.average,
            "n_pairs": dict(self.n_pairs),
            "timestamp": self.timestamp,
        }


def _features_for(
    ids: Sequence[str], features_by_id: Mapping[str, np.ndarray]
) -> np.ndarray:
    try:
        rows = [features_by_id[i] for i in ids]
    except KeyError as exc:
        raise InvalidInput(f"unknown item id {exc.args[0]!r}") from None
    return np.stack(rows)


def _shuffled_batches(count: int, batch_size: int, seed: int, epochs: int):
    """Index batches: per-epoch reshuffle, short final group dropped."""
    rng = np.random.default_rng(2 * seed if seed >= 0 else -2 * seed - 1)
    for _ in range(epochs):
        order = rng.permutation(count)
        for start in range(0, count - batch_size + 1, batch_size):
            yield order[start : start + batch_size]


def _check_finite_loss(loss: float, step: int) -> float:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at step {step}")
    return float(loss)


def train_stage1(
    params: enc.EncoderParams,
    triplets: Sequence[Triplet],
    features_by_id: Mapping[str, np.ndarray],
    config: StageConfig,
    eval_sets: Mapping[str, Sequence[ScoredPair]] | None = None,
) -> TrainingResult:
    """Contrastive warm-up. Uses the extended loss when the triplets carry
    hard negatives, the plain loss when none do; a mix is rejected."""
    if config.stage != "I":
        raise InvalidInput("train_stage1 requires a stage-I config")
    if not triplets:
        raise InvalidInput("no triplets to train on")
    with_negatives = sum(t.hard_negative is not None for t in triplets)
    if 0 < with_negatives < len(triplets):
        raise InvalidInput(
            "triplets mix entries with and without hard negatives; "
            "split them into uniform datasets"
        )
    use_extended = with_negatives == len(triplets)
    if len(triplets) < config.batch_size:
        raise InvalidInput(
            f"{len(triplets)} triplets are fewer than batch_size {config.batch_size}"
        )

    log: list[TrainLogEntry] = []
    evals: list[tuple[int, EvalReport]] = []
    step = 0
    for idx in _shuffled_batches(
        len(triplets), config.batch_size, config.seed, config.epochs
    ):
        batch = [triplets[i] for i in idx]
        feats_a = _features_for([t.anchor for t in batch], features_by_id)
        feats_p = _features_for([t.positive for t in batch], features_by_id)
        emb_a, cache_a = enc.encode_forward(params, feats_a)
        emb_p, cache_p = enc.encode_forward(params, feats_p)
        if use_extended:
            feats_n = _features_for([t.hard_negative for t in batch], features_by_id)
            emb_n, cache_n = enc.encode_forward(params, feats_n)
            cbatch = ContrastiveBatch(emb_a, emb_p, emb_n, config.temperature)
            loss = info_nce_extended(cbatch)
        else:
            cbatch = ContrastiveBatch(emb_a, emb_p, None, config.temperature)
            loss = info_nce(cbatch)
        step += 1
        loss = _check_finite_loss(loss, step)
        grads = contrastive_grad(cbatch)
        param_grads = enc.encode_backward(params, cache_a, grads.anchors)
        for name, g in enc.encode_backward(params, cache_p, grads.positives).items():
            param_grads[name] += g
        if use_extended:
            for name, g in enc.encode_backward(
                params, cache_n, grads.hard_negatives
            ).items():
                param_grads[name] += g
        params = enc.apply_gradients(params, param_grads, config.learning_rate)
        log.append(TrainLogEntry(step=step, loss=loss, lr=config.learning_rate))
        if eval_sets and config.eval_every and step % config.eval_every == 0:
            evals.append((step, evaluate(params, eval_sets, features_by_id)))
    return TrainingResult(params=params, log=log, evals=evals)


def train_stage2(
    params: enc.EncoderParams,
    pairs: Sequence[ScoredPair],
    features_by_id: Mapping[str, np.ndarray],
    config: StageConfig,
    eval_sets: Mapping[str, Sequence[ScoredPair]] | None = None,
) -> TrainingResult:
    """Correlation-loss refinement from a stage-I checkpoint. All encoder
    parameters are updated; nothing is frozen."""
    if config.stage != "II":
        raise InvalidInput("train_stage2 requires a stage-II config")
    if len(pairs) < config.batch_size:
        raise InvalidInput(
            f"{len(pairs)} pairs are fewer than batch_size {config.batch_size}"
        )

    log: list[TrainLogEntry] = []
    evals: list[tuple[int, EvalReport]] = []
    step = 0
    for idx in _shuffled_batches(
        len(pairs), config.batch_size, config.seed, config.epochs
    ):
        batch = [pairs[i] for i in idx]
        feats_s = _features_for([p.s for p in batch], features_by_id)
        feats_t = _features_for([p.s_prime for p in batch], features_by_id)
        emb_s, cache_s = enc.encode_forward(params, feats_s)
        emb_t, cache_t = enc.encode_forward(params, feats_t)
        cosines = enc.cosine_pairs(emb_s, emb_t)
        gold = np.array([p.gs for p in batch])
        sbatch = SimilarityBatch(cosines=cosines, gold_scores=gold)
        step += 1
        try:
            loss = pearson_loss(sbatch, guard=config.variance_guard)
            grad_cos = pearson_loss_grad(sbatch, guard=config.variance_guard)
        except DegenerateInput as exc:
            raise DegenerateInput(f"batch {step}: {exc}") from exc
        loss = _check_finite_loss(loss, step)
        grad_s, grad_t = enc.cosine_pairs_backward(emb_s, emb_t, grad_cos)
        param_grads = enc.encode_backward(params, cache_s, grad_s)
        for name, g in enc.encode_backward(params, cache_t, grad_t).items():
            param_grads[name] += g
        params = enc.apply_gradients(params, param_grads, config.learning_rate)
        log.append(TrainLogEntry(step=step, loss=loss, lr=config.learning_rate))
        if eval_sets and config.eval_every and step % config.eval_every == 0:
            evals.append((step, evaluate(params, eval_sets, features_by_id)))
    return TrainingResult(params=params, log=log, evals=evals)


def evaluate(
    encoder: EncoderLike,
    eval_sets: Mapping[str, Sequence[ScoredPair]],
    features_by_id: Mapping[str, np.ndarray],
    checkpoint_label: str | None = None,
    timestamp: str = "",
) -> EvalReport:
    """Spearman x100 of predicted cosines against gold, per eval set.

    ``encoder`` is either trained parameters or any callable mapping a
    feature matrix to an embedding matrix (used to plant oracles).
    Parameters are never modified. The average is the unweighted mean
    across sets.
    """
    if not eval_sets:
        raise InvalidInput("no evaluation sets supplied")
    if isinstance(encoder, enc.EncoderParams):
        run = lambda feats: enc.encode(encoder, feats)  # noqa: E731
        label = checkpoint_label or enc.checkpoint_id(enc.save_checkpoint(encoder))
    else:
        run = encoder
        label = checkpoint_label or "custom-encoder"
    per_dataset: dict[str, float] = {}
    n_pairs: dict[str, int] = {}
    for name, pairs in eval_sets.items():
        if len(pairs) < 2:
            raise InvalidInput(f"eval set {name!r} needs at least 2 pairs")
        emb_s = run(_features_for([p.s for p in pairs], features_by_id))
        emb_t = run(_features_for([p.s_prime for p in pairs], features_by_id))
        cosines = enc.cosine_pairs(np.asarray(emb_s), np.asarray(emb_t))
        gold = np.array([p.gs for p in pairs])
        try:
            rho = spearman(cosines, gold)
        except DegenerateInput as exc:
            raise DegenerateInput(f"eval set {name!r}: {exc}") from exc
        per_dataset[name] = 100.0 * rho
        n_pairs[name] = len(pairs)
    average = sum(per_dataset.values()) / len(per_dataset)
    return EvalReport(
        checkpoint=label,
        per_dataset=per_dataset,
        average=average,
        n_pairs=n_pairs,
        timestamp=timestamp,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one ceiling-experiment run needs. Per-component seeds
    are derived from ``synth.seed`` by :func:`reseed_experiment`."""

    synth: SynthConfig
    stage1: StageConfig
    stage2: StageConfig
    stage2_contrastive: StageConfig
    hidden_dim: int = 64
    embed_dim: int = 32

    def __post_init__(self):
        if self.stage1.stage != "I" or self.stage2_contrastive.stage != "I":
            raise InvalidInput("contrastive arms need stage-I configs")
        if self.stage2.stage != "II":
            raise InvalidInput("the refinement arm needs a stage-II config")


@dataclass(frozen=True)
class ExperimentResult:
    seed: int
    ceiling_x100: float
    arms: dict[str, float]
    reports: dict[str, EvalReport]
    dataset_counts: dict[str, int]


def default_experiment_config(seed: int = 0) -> ExperimentConfig:
    """Defaults tuned on synthetic dev data; every knob is overridable."""
    return reseed_experiment(
        ExperimentConfig(
            synth=SynthConfig(
                num_items=2000,
                latent_dim=16,
                feature_dim=32,
                observation_noise=0.05,
                score_noise=0.25,
                num_pairs=10000,
                seed=seed,
            ),
            stage1=StageConfig(
                stage="I",
                learning_rate=3e-3,
                batch_size=64,
                epochs=4,
                seed=seed,
                temperature=0.1,
            ),
            stage2=StageConfig(
                stage="II",
                learning_rate=2e-3,
                batch_size=200,
                epochs=20,
                seed=seed,
            ),
            stage2_contrastive=StageConfig(
                stage="I",
                learning_rate=3e-3,
                batch_size=64,
                epochs=20,
                seed=seed,
                temperature=0.1,
            ),
        ),
        seed,
    )


def reseed_experiment(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Derive per-component seeds from one run seed (documented offsets:
    synth +0, stage1 +1, stage2 +2, contrastive continuation +3; the
    encoder init uses +4 inside the runner)."""
    return ExperimentConfig(
        synth=replace(config.synth, seed=seed),
        stage1=replace(config.stage1, seed=seed + 1),
        stage2=replace(config.stage2, seed=seed + 2),
        stage2_contrastive=replace(config.stage2_contrastive, seed=seed + 3),
        hidden_dim=config.hidden_dim,
        embed_dim=config.embed_dim,
    )


def run_ceiling_experiment(
    config: ExperimentConfig, dataset: SynthDataset | None = None
) -> ExperimentResult:
    """Train the three arms and report their test Spearman x100.

    Arms: (a) stage I only; (b) stage I followed by contrastive
    continuation on pairs thresholded at 4.0 (positives only, in-batch
    negatives); (c) stage I followed by correlation-loss refinement.
    Arms (b) and (c) start from the same stage-I checkpoint. The
    reference ceiling is ``max_spearman`` at the test-set size.
    """
    ds = dataset if dataset is not None else synth_generate(config.synth)
    feats = ds.feature_index()
    test_sets = {"test": ds.test}

    params0 = enc.init_params(
        input_dim=ds.config.feature_dim,
        hidden_dim=config.hidden_dim,
        embed_dim=config.embed_dim,
        seed=ds.config.seed + 4,
    )
    stage1 = train_stage1(params0, ds.triplets, feats, config.stage1)
    report_a = evaluate(stage1.params, test_sets, feats)

    continuation_triplets = to_contrastive(ds.train, POSITIVE_THRESHOLD)
    stage_b = train_stage1(
        stage1.params, continuation_triplets, feats, config.stage2_contrastive
    )
    report_b = evaluate(stage_b.params, test_sets, feats)

    stage_c = train_stage2(stage1.params, ds.train, feats, config.stage2)
    report_c = evaluate(stage_c.params, test_sets, feats)

    reports = {"stage1": report_a, "contrastive": report_b, "pearson": report_c}
    return ExperimentResult(
        seed=ds.config.seed,
        ceiling_x100=100.0 * max_spearman(len(ds.test)),
        arms={arm: reports[arm].per_dataset["test"] for arm in EXPERIMENT_ARMS},
        reports=reports,
        dataset_counts={
            "items": len(ds.items),
            "pairs": len(ds.pairs),
            "train": len(ds.train),
            "dev": len(ds.dev),
            "test": len(ds.test),
            "triplets": len(ds.triplets),
        },
    )


def run_ceiling_experiments(
    config: ExperimentConfig, seeds: Sequence[int]
) -> list[ExperimentResult]:
    if not seeds:
        raise InvalidInput("need at least one seed")
    return [run_ceiling_experiment(reseed_experiment(config, s)) for s in seeds]


def experiment_csv_lines(results: Sequence[ExperimentResult]) -> list[str]:
    """Delimited report: one line per (arm, seed), 12 significant digits."""
    lines = [EXPERIMENT_CSV_HEADER]
    for res in results:
        for arm in EXPERIMENT_ARMS:
            lines.append(
                f"{arm},{res.arms[arm]:.12g},{res.ceiling_x100:.12g},{res.seed}"
            )
    return lines


def summarize_gap(results: Sequence[ExperimentResult]) -> dict[str, float]:
    """Median per arm plus the refinement-over-stage-I margin."""
    med = {
        arm: statistics.median(res.arms[arm] for res in results)
        for arm in EXPERIMENT_ARMS
    }
    med["pearson_minus_stage1"] = med["pearson"] - med["stage1"]
    return med
