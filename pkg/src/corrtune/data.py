"""Scored-pair datasets: file formats, overlap filtering, label rescaling,
contrastive conversion, batching, and a seeded synthetic generator.

File formats
------------
* Pairs TSV: UTF-8, ``sentence1<TAB>sentence2<TAB>score``, no header,
  LF line endings.
* Pairs JSONL: one object per line with keys ``s``, ``s_prime``, ``gs``
  and optional ``source``.
* Triplets JSONL: keys ``anchor``, ``positive``, optional
  ``hard_negative``.
* Synthetic dataset directory: ``manifest.json`` (config, seed, counts,
  split checksums), ``items.jsonl`` (id + feature vector),
  ``pairs_train/dev/test.jsonl``, ``triplets.jsonl``, ``oracle_map.json``.

Text equality for duplicate detection is exact byte equality after
Unicode NFC normalization and trimming of leading/trailing whitespace,
with no case folding; :func:`normalize_text` is the single place that
convention lives.
"""

from __future__ import annotations

import hashlib
import json
import math
import unicodedata
from dataclasses import dataclass, field, asdict
from pathlib import Path
from collections.abc import Iterable, Iterator, Sequence

import numpy as np

from .errors import GenerationError, InvalidInput, ParseError

__all__ = [
    "ScoredPair",
    "Triplet",
    "ItemFeatures",
    "SynthConfig",
    "SynthDataset",
    "normalize_text",
    "load_pairs",
    "write_pairs",
    "load_triplets",
    "write_triplets",
    "filter_overlap",
    "rescale_sick",
    "to_contrastive",
    "make_batches",
    "synth_generate",
    "save_dataset",
    "load_dataset",
]

POSITIVE_THRESHOLD = 4.0  # gold score above which a pair becomes a positive
HARD_NEGATIVE_CEILING = 1.0  # pairs scoring below this feed the negative pool

_SPLIT_FRACTIONS = {"train": 0.7, "dev": 0.15, "test": 0.15}

# geometric decay of the latent variance spectrum; keeps the effective
# latent dimension ~3 so pair cosines spread broadly over [-1, 1]
_LATENT_DECAY = 0.5


@dataclass(frozen=True)
class ScoredPair:
    """Two text items with a fine-grained similarity score in [0, 5]."""

    s: str
    s_prime: str
    gs: float
    source: str = ""


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive pair for contrastive training, optionally with an
    explicit hard negative. Fields must be non-empty strings."""

    anchor: str
    positive: str
    hard_negative: str | None = None

    def __post_init__(self):
        if not self.anchor or not self.positive:
            raise InvalidInput("triplet anchor and positive must be non-empty")
        if self.hard_negative is not None and not self.hard_negative:
            raise InvalidInput("hard_negative must be non-empty when present")


@dataclass(frozen=True)
class ItemFeatures:
    """A synthetic text item: identifier plus its feature vector."""

    id: str
    features: np.ndarray


@dataclass(frozen=True)
class SynthConfig:
    num_items: int
    latent_dim: int
    feature_dim: int
    observation_noise: float
    score_noise: float
    num_pairs: int
    seed: int
    # fraction of pairs whose score is drawn on a secondary [1, 5] scale
    # and mapped back through rescale_sick; off by default
    rescale_fraction: float = 0.0

    def __post_init__(self):
        if self.num_items < 2:
            raise InvalidInput("num_items must be >= 2")
        if self.latent_dim < 2 or self.feature_dim < 2:
            raise InvalidInput("latent_dim and feature_dim must be >= 2")
        if self.num_pairs < 2:
            raise InvalidInput("num_pairs must be >= 2")
        if self.observation_noise < 0 or self.score_noise < 0:
            raise InvalidInput("noise levels must be non-negative")
        if not 0.0 <= self.rescale_fraction <= 1.0:
            raise InvalidInput("rescale_fraction must be in [0, 1]")


@dataclass(frozen=True)
class SynthDataset:
    """Generated items, all pairs, disjoint splits, stage-I triplets and
    the linear map recovering latents from noiseless features."""

    config: SynthConfig
    items: list[ItemFeatures]
    pairs: list[ScoredPair]
    train: list[ScoredPair]
    dev: list[ScoredPair]
    test: list[ScoredPair]
    triplets: list[Triplet]
    oracle_map: np.ndarray

    def feature_index(self) -> dict[str, np.ndarray]:
        return {item.id: item.features for item in self.items}

    def splits(self) -> dict[str, list[ScoredPair]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def normalize_text(text: str) -> str:
    """Canonical form used for duplicate detection: NFC + strip."""
    return unicodedata.normalize("NFC", text).strip()


def _pair_key(pair: ScoredPair) -> tuple[str, str]:
    a = normalize_text(pair.s)
    b = normalize_text(pair.s_prime)
    return (a, b) if a <= b else (b, a)


def _parse_score(token: str, path: str, line_no: int) -> float:
    try:
        score = float(token)
    except ValueError:
        raise ParseError(f"score {token!r} is not a number", path, line_no) from None
    if not math.isfinite(score):
        raise ParseError(f"score {token!r} is not finite", path, line_no)
    return score


def load_pairs(path, format: str | None = None) -> list[ScoredPair]:
    """Read scored pairs from a TSV or JSONL file.

    The format defaults from the file suffix (.tsv / .jsonl). Malformed
    rows raise ``ParseError`` naming the file and line.
    """
    p = Path(path)
    fmt = format or ("jsonl" if p.suffix == ".jsonl" else "tsv")
    if fmt not in ("tsv", "jsonl"):
        raise InvalidInput(f"unknown pair format {fmt!r}")
    pairs: list[ScoredPair] = []
    with open(p, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if fmt == "tsv":
                cols = line.split("\t")
                if len(cols) != 3:
                    raise ParseError(
                        f"expected 3 tab-separated columns, got {len(cols)}",
                        str(p),
                        line_no,
                    )
                pairs.append(
                    ScoredPair(cols[0], cols[1], _parse_score(cols[2], str(p), line_no))
                )
            else:
                try:
                    obj = json.loads(line)
                    s, s_prime, gs = obj["s"], obj["s_prime"], obj["gs"]
                except Exception as exc:
                    raise ParseError(f"bad JSON object: {exc}", str(p), line_no) from None
                if not isinstance(gs, (int, float)) or not math.isfinite(float(gs)):
                    raise ParseError(f"score {gs!r} is not finite", str(p), line_no)
                pairs.append(
                    ScoredPair(str(s), str(s_prime), float(gs), str(obj.get("source", "")))
                )
    return pairs


def write_pairs(pairs: Sequence[ScoredPair], path, format: str | None = None) -> None:
    p = Path(path)
    fmt = format or ("jsonl" if p.suffix == ".jsonl" else "tsv")
    if fmt not in ("tsv", "jsonl"):
        raise InvalidInput(f"unknown pair format {fmt!r}")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            if fmt == "tsv":
                if "\t" in pair.s or "\t" in pair.s_prime:
                    raise InvalidInput("TSV cannot store text containing tabs")
                fh.write(f"{pair.s}\t{pair.s_prime}\t{pair.gs!r}\n")
            else:
                obj = {"s": pair.s, "s_prime": pair.s_prime, "gs": pair.gs}
                if pair.source:
                    obj["source"] = pair.source
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_triplets(path) -> list[Triplet]:
    p = Path(path)
    out: list[Triplet] = []
    with open(p, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    Triplet(
                        str(obj["anchor"]),
                        str(obj["positive"]),
                        None
                        if obj.get("hard_negative") is None
                        else str(obj["hard_negative"]),
                    )
                )
            except InvalidInput:
                raise
            except Exception as exc:
                raise ParseError(f"bad triplet: {exc}", str(p), line_no) from None
    return out


def write_triplets(triplets: Sequence[Triplet], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in triplets:
            obj = {"anchor": t.anchor, "positive": t.positive}
            if t.hard_negative is not None:
                obj["hard_negative"] = t.hard_negative
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def filter_overlap(
    train: Sequence[ScoredPair], test_sets: Sequence[Sequence[ScoredPair]]
) -> tuple[list[ScoredPair], list[ScoredPair]]:
    """Drop train pairs whose texts appear in any test set, in either order.

    A train pair (s1, s1') is removed iff some test pair (s2, s2')
    matches it as an unordered pair of normalized strings, regardless of
    scores. Kept pairs preserve their input order. Idempotent.
    """
    seen: set[tuple[str, str]] = set()
    for test in test_sets:
        for pair in test:
            seen.add(_pair_key(pair))
    kept: list[ScoredPair] = []
    removed: list[ScoredPair] = []
    for pair in train:
        (removed if _pair_key(pair) in seen else kept).append(pair)
    return kept, removed


def rescale_sick(label: float) -> float:
    """Map a [1, 5] annotation to [0, 5] via 5 * (label - 1) / 4."""
    if not (isinstance(label, (int, float)) and math.isfinite(label)):
        raise InvalidInput(f"label must be a finite number, got {label!r}")
    if not 1.0 <= label <= 5.0:
        raise InvalidInput(f"label must lie in [1, 5], got {label}")
    return 5.0 * (label - 1.0) / 4.0


def to_contrastive(pairs: Sequence[ScoredPair], threshold: float) -> list[Triplet]:
    """Keep pairs scoring strictly above the threshold as anchor/positive
    triplets (no hard negatives); everything else is dropped."""
    if not (isinstance(threshold, (int, float)) and 0.0 <= threshold <= 5.0):
        raise InvalidInput(f"threshold must lie in [0, 5], got {threshold}")
    return [
        Triplet(anchor=p.s, positive=p.s_prime)
        for p in pairs
        if p.gs > threshold
    ]


def make_batches(
    pairs: Sequence[ScoredPair], batch_size: int, seed: int, epochs: int
) -> Iterator[list[ScoredPair]]:
    """Yield shuffled consecutive groups of ``batch_size`` pairs per epoch.

    Each epoch reshuffles (one seeded stream drives all epochs, so the
    whole schedule is a function of the seed). A short final group is
    dropped: the correlation loss needs variance and tiny remainders are
    statistically degenerate.
    """
    if batch_size < 2:
        raise InvalidInput("batch_size must be >= 2")
    if len(pairs) < batch_size:
        raise InvalidInput(
            f"dataset of {len(pairs)} pairs is smaller than batch_size {batch_size}"
        )
    if epochs < 0:
        raise InvalidInput("epochs must be non-negative")
    rng = np.random.default_rng(_nonneg_seed(seed))
    n = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield [pairs[i] for i in order[start : start + batch_size]]


def _nonneg_seed(seed: int) -> int:
    # Generator seeds must be non-negative; fold sign in reversibly
    return 2 * seed if seed >= 0 else -2 * seed - 1


def _checksum_lines(lines: Iterable[str]) -> str:
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def _pair_line(pair: ScoredPair) -> str:
    obj = {"s": pair.s, "s_prime": pair.s_prime, "gs": pair.gs}
    if pair.source:
        obj["source"] = pair.source
    return json.dumps(obj, sort_keys=True)


def synth_generate(config: SynthConfig) -> SynthDataset:
    """Generate a seeded synthetic similarity dataset.

    Construction: each item i gets a latent vector z_i ~ N(0, diag(lambda))
    with geometrically decaying lambda; the gold score of a pair is the
    affine map of cos(z_i, z_j) onto [0, 5] plus truncated Gaussian noise.
    Observed features mix the latents through a whitening random linear
    map (low-variance latent directions are amplified), so feature-space
    cosine alone is a poor predictor of the gold score while a linear map
    (``oracle_map``, the pseudo-inverse of the mixing matrix) recovers the
    latents exactly when observation noise is zero.

    Splits are disjoint at the pair level; stage-I triplets come from the
    train split only, positives above 4.0 with hard negatives drawn from
    pairs scoring below 1.0.
    """
    rng = np.random.default_rng(_nonneg_seed(config.seed))
    n_items = config.num_items
    capacity = n_items * (n_items - 1) // 2
    if config.num_pairs > capacity // 2:
        raise GenerationError(
            f"num_pairs={config.num_pairs} exceeds half the {capacity} distinct"
            f" item pairs available; increase num_items"
        )

    lam = _LATENT_DECAY ** np.arange(config.latent_dim)
    latents = rng.normal(size=(n_items, config.latent_dim)) * np.sqrt(lam)
    mixing = (
        rng.normal(size=(config.latent_dim, config.feature_dim))
        / np.sqrt(lam)[:, None]
        / np.sqrt(config.latent_dim)
    )
    features = latents @ mixing
    if config.observation_noise > 0:
        features = features + config.observation_noise * rng.normal(
            size=features.shape
        )
    oracle_map = np.linalg.pinv(mixing)

    width = max(5, len(str(n_items - 1)))
    ids = [f"item-{i:0{width}d}" for i in range(n_items)]
    items = [ItemFeatures(id=ids[i], features=features[i]) for i in range(n_items)]

    # distinct unordered item pairs, rejection-sampled (sparse by the
    # capacity check above, so collisions stay rare)
    chosen: set[tuple[int, int]] = set()
    index_pairs: list[tuple[int, int]] = []
    while len(index_pairs) < config.num_pairs:
        i, j = rng.integers(0, n_items, size=2)
        if i == j:
            continue
        key = (int(min(i, j)), int(max(i, j)))
        if key in chosen:
            continue
        chosen.add(key)
        index_pairs.append(key)

    norms = np.linalg.norm(latents, axis=1)
    pairs: list[ScoredPair] = []
    for i, j in index_pairs:
        cos_ij = float(latents[i] @ latents[j] / (norms[i] * norms[j]))
        base = 2.5 * (cos_ij + 1.0)
        noise = config.score_noise * rng.normal() if config.score_noise > 0 else 0.0
        if config.rescale_fraction > 0 and rng.random() < config.rescale_fraction:
            # secondary annotation scale: score lands on [1, 5], then is
            # mapped back to [0, 5]; truncation differs from the primary
            raw5 = min(5.0, max(1.0, 1.0 + 0.8 * base + noise))
            gs = rescale_sick(raw5)
            source = "synthetic-alt"
        else:
            gs = min(5.0, max(0.0, base + noise))
            source = "synthetic"
        pairs.append(ScoredPair(s=ids[i], s_prime=ids[j], gs=gs, source=source))

    order = rng.permutation(config.num_pairs)
    n_train = int(round(_SPLIT_FRACTIONS["train"] * config.num_pairs))
    n_dev = int(round(_SPLIT_FRACTIONS["dev"] * config.num_pairs))
    n_train = min(n_train, config.num_pairs)
    n_dev = min(n_dev, config.num_pairs - n_train)
    train = [pairs[i] for i in order[:n_train]]
    dev = [pairs[i] for i in order[n_train : n_train + n_dev]]
    test = [pairs[i] for i in order[n_train + n_dev :]]

    kept, leaked = filter_overlap(train, [dev, test])
    if leaked:
        raise GenerationError(
            f"internal split leak: {len(leaked)} train pairs overlap dev/test"
        )

    positives = to_contrastive(train, POSITIVE_THRESHOLD)
    negative_pool = [p for p in train if p.gs < HARD_NEGATIVE_CEILING]
    if not positives or not negative_pool:
        raise GenerationError(
            "cannot build stage-I triplets: "
            f"{len(positives)} positives above {POSITIVE_THRESHOLD}, "
            f"{len(negative_pool)} pairs below {HARD_NEGATIVE_CEILING} "
            f"in a train split of {len(train)}; increase num_pairs or lower noise"
        )
    triplets = [
        Triplet(
            anchor=t.anchor,
            positive=t.positive,
            hard_negative=negative_pool[int(rng.integers(0, len(negative_pool)))].s_prime,
        )
        for t in positives
    ]

    return SynthDataset(
        config=config,
        items=items,
        pairs=pairs,
        train=train,
        dev=dev,
        test=test,
        triplets=triplets,
        oracle_map=oracle_map,
    )


def dataset_manifest(ds: SynthDataset) -> dict:
    """Config, seed, counts and per-split checksums, JSON-ready."""
    return {
        "config": asdict(ds.config),
        "seed": ds.config.seed,
        "counts": {
            "items": len(ds.items),
            "pairs": len(ds.pairs),
            "train": len(ds.train),
            "dev": len(ds.dev),
            "test": len(ds.test),
            "triplets": len(ds.triplets),
        },
        "split_checksums": {
            name: _checksum_lines(_pair_line(p) for p in split)
            for name, split in ds.splits().items()
        },
    }


def save_dataset(ds: SynthDataset, out_dir) -> None:
    """Write the dataset directory layout documented in the module header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "items.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for item in ds.items:
            fh.write(
                json.dumps(
                    {"id": item.id, "features": [float(x) for x in item.features]},
                    sort_keys=True,
                )
                + "\n"
            )
    for name, split in ds.splits().items():
        write_pairs(split, out / f"pairs_{name}.jsonl", format="jsonl")
    write_triplets(ds.triplets, out / "triplets.jsonl")
    with open(out / "oracle_map.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {"shape": list(ds.oracle_map.shape),
             "data": [float(x) for x in ds.oracle_map.ravel()]},
            fh,
            sort_keys=True,
        )
        fh.write("\n")
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(dataset_manifest(ds), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class LoadedDataset:
    """On-disk dataset, re-read: feature index, splits, triplets."""

    features_by_id: dict[str, np.ndarray]
    splits: dict[str, list[ScoredPair]]
    triplets: list[Triplet]
    oracle_map: np.ndarray | None
    manifest: dict


def load_dataset(data_dir) -> LoadedDataset:
    root = Path(data_dir)
    if not root.is_dir():
        raise InvalidInput(f"dataset directory {root} does not exist")
    features: dict[str, np.ndarray] = {}
    items_path = root / "items.jsonl"
    with open(items_path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
                features[str(obj["id"])] = np.asarray(obj["features"], dtype=np.float64)
            except Exception as exc:
                raise ParseError(f"bad item: {exc}", str(items_path), line_no) from None
    splits = {
        name: load_pairs(root / f"pairs_{name}.jsonl", format="jsonl")
        for name in ("train", "dev", "test")
        if (root / f"pairs_{name}.jsonl").exists()
    }
    triplets_path = root / "triplets.jsonl"
    triplets = load_triplets(triplets_path) if triplets_path.exists() else []
    oracle = None
    oracle_path = root / "oracle_map.json"
    if oracle_path.exists():
        with open(oracle_path, encoding="utf-8") as fh:
            obj = json.load(fh)
        oracle = np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])
    manifest_path = root / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    return LoadedDataset(
        features_by_id=features,
        splits=splits,
        triplets=triplets,
        oracle_map=oracle,
        manifest=manifest,
    )
