"""Interaction-log preprocessing: implicit feedback, 5-core filtering,
leave-one-out splits, popularity-sampled evaluation negatives and padded
training batches."""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import ConfigError

log = logging.getLogger(__name__)

PAD_ID = 0


class DataFormatError(ValueError):
    """Malformed input data; message carries the offending line number."""


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int


@dataclass
class Vocab:
    """Dense id space: 0 = padding, 1..K = preference tokens, items from K+1."""

    K: int
    item_to_id: dict[str, int]
    id_to_item: dict[int, str]
    popularity: np.ndarray  # indexed by dense id, counts over train portions

    @property
    def size(self) -> int:
        return self.K + 1 + len(self.item_to_id)

    @property
    def first_item_id(self) -> int:
        return self.K + 1

    def real_item_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=np.float32)
        mask[self.first_item_id:] = 1.0
        return mask


@dataclass
class SequenceDataset:
    users: list[str]  # raw user ids, sorted
    train: list[np.ndarray]  # per-user dense item ids, chronological
    val_target: np.ndarray  # dense item id per user
    test_target: np.ndarray
    vocab: Vocab
    max_len: int

    @property
    def n_users(self) -> int:
        return len(self.users)

    def train_lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.train], dtype=np.int64)


@dataclass
class EvalCandidates:
    """Per-user sampled negatives shared by both evaluation splits."""

    negatives: list[np.ndarray]  # (n,) dense ids per user, fixed order

    def candidates(self, dataset: SequenceDataset, split: str) -> list[np.ndarray]:
        """101-id candidate lists with the split's ground truth first."""
        targets = dataset.val_target if split == "val" else dataset.test_target
        return [
            np.concatenate(([targets[u]], self.negatives[u]))
            for u in range(dataset.n_users)
        ]


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) int32, right-padded with PAD_ID
    lengths: np.ndarray  # (B,) real item counts
    labels: np.ndarray  # (B,) dense item ids


# --------------------------------------------------------------------------
# Loading and filtering
# --------------------------------------------------------------------------

def load_raw(path: str | Path, format: str = "ml100k-tsv") -> list[Interaction]:
    """Parse an interaction log; ratings are discarded (implicit feedback)."""
    path = Path(path)
    out: list[Interaction] = []
    if format == "ml100k-tsv":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DataFormatError(
                        f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
                    )
                out.append(_make_interaction(parts, path, lineno))
    elif format == "generic-csv":
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, parts in enumerate(csv.reader(fh), start=1):
                if not parts:
                    continue
                if len(parts) != 4:
                    raise DataFormatError(
                        f"{path}:{lineno}: expected 4 comma-separated fields, got {len(parts)}"
                    )
                if lineno == 1 and not _is_int(parts[3]):
                    continue  # header row
                out.append(_make_interaction(parts, path, lineno))
    else:
        raise ConfigError(f"unknown input format {format!r}")
    return out


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def _make_interaction(parts: list[str], path, lineno: int) -> Interaction:
    user, item, _rating, ts = (p.strip() for p in parts)
    if not _is_int(ts):
        raise DataFormatError(f"{path}:{lineno}: timestamp {ts!r} is not an integer")
    ts_val = int(ts)
    if ts_val < 0:
        raise DataFormatError(f"{path}:{lineno}: negative timestamp {ts_val}")
    if not user or not item:
        raise DataFormatError(f"{path}:{lineno}: empty user or item id")
    return Interaction(user=user, item=item, timestamp=ts_val)


def kcore_filter(interactions: list[Interaction], k: int = 5) -> list[Interaction]:
    """Drop items then users with fewer than k interactions, to a fixpoint."""
    if k < 1:
        raise ConfigError(f"kcore_filter: k must be >= 1, got {k}")
    current = interactions
    while True:
        item_counts = Counter(x.item for x in current)
        kept = [x for x in current if item_counts[x.item] >= k]
        user_counts = Counter(x.user for x in kept)
        kept = [x for x in kept if user_counts[x.user] >= k]
        if len(kept) == len(current):
            return kept
        current = kept


def interaction_stats(interactions: list[Interaction]) -> dict:
    """Users/items/actions plus per-user sequence-length summary."""
    lengths = Counter(x.user for x in interactions)
    n_items = len({x.item for x in interactions})
    vals = np.array(sorted(lengths.values())) if lengths else np.array([0])
    return {
        "users": len(lengths),
        "items": n_items,
        "actions": len(interactions),
        "min_len": int(vals.min()),
        "max_len": int(vals.max()),
        "avg_len": float(vals.mean()),
    }


# --------------------------------------------------------------------------
# Dataset construction
# --------------------------------------------------------------------------

def build_dataset(
    interactions: list[Interaction], max_len: int = 50, K: int = 3
) -> SequenceDataset:
    """Chronological per-user sequences, truncated to the most recent
    ``max_len`` items, then split leave-one-out: last item is the test
    target, second-to-last the validation target, the rest is training."""
    by_user: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for order, x in enumerate(interactions):
        by_user[x.user].append((x.timestamp, order, x.item))

    items = sorted({x.item for x in interactions})
    item_to_id = {raw: K + 1 + i for i, raw in enumerate(items)}
    id_to_item = {v: k for k, v in item_to_id.items()}

    users: list[str] = []
    train: list[np.ndarray] = []
    val_t: list[int] = []
    test_t: list[int] = []
    skipped = 0
    for user in sorted(by_user):
        rows = sorted(by_user[user])  # timestamp, ties by input order
        seq = [item_to_id[item] for _, _, item in rows][-max_len:]
        if len(seq) < 3:
            skipped += 1
            continue
        users.append(user)
        train.append(np.asarray(seq[:-2], dtype=np.int64))
        val_t.append(seq[-2])
        test_t.append(seq[-1])
    if skipped:
        log.info("build_dataset: excluded %d users with < 3 interactions", skipped)

    popularity = np.zeros(K + 1 + len(items), dtype=np.int64)
    for seq in train:
        np.add.at(popularity, seq, 1)

    vocab = Vocab(K=K, item_to_id=item_to_id, id_to_item=id_to_item, popularity=popularity)
    return SequenceDataset(
        users=users,
        train=train,
        val_target=np.asarray(val_t, dtype=np.int64),
        test_target=np.asarray(test_t, dtype=np.int64),
        vocab=vocab,
        max_len=max_len,
    )


def sample_negatives(
    dataset: SequenceDataset,
    n: int = 100,
    seed: int = 0,
    exclude_history: bool = True,
) -> EvalCandidates:
    """Per user, n distinct negatives drawn with probability proportional to
    training popularity, excluding both leave-one-out targets and (by
    default) the user's training items."""
    vocab = dataset.vocab
    pop = vocab.popularity.astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6E6567,)))
    negatives: list[np.ndarray] = []
    for u in range(dataset.n_users):
        weights = pop.copy()
        weights[dataset.val_target[u]] = 0.0
        weights[dataset.test_target[u]] = 0.0
        if exclude_history:
            weights[dataset.train[u]] = 0.0
        eligible = np.flatnonzero(weights > 0)
        if eligible.size < n:
            raise DataFormatError(
                f"user {dataset.users[u]}: only {eligible.size} eligible negative "
                f"items, need {n}"
            )
        p = weights[eligible] / weights[eligible].sum()
        chosen = rng.choice(eligible, size=n, replace=False, p=p)
        negatives.append(chosen.astype(np.int64))
    return EvalCandidates(negatives=negatives)


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------

def batch_iterator(
    dataset: SequenceDataset,
    batch_size: int = 256,
    mode: str = "prefix",
    rng: np.random.Generator | None = None,
    subsample: float = 1.0,
):
    """Yield shuffled, right-padded training batches.

    mode="prefix" emits one instance per position (input = items 1..t,
    label = item t+1); mode="last" emits one instance per user predicting
    the final train-portion item from the preceding prefix.
    """
    if batch_size == 0:
        raise ConfigError("batch_iterator: batch_size must be positive")
    if mode not in ("prefix", "last"):
        raise ConfigError(f"batch_iterator: unknown mode {mode!r}")
    instances: list[tuple[int, int]] = []  # (user index, prefix length)
    for u, seq in enumerate(dataset.train):
        if len(seq) < 2:
            continue
        if mode == "prefix":
            instances.extend((u, t) for t in range(1, len(seq)))
        else:
            instances.append((u, len(seq) - 1))
    if rng is not None:
        order = rng.permutation(len(instances))
        if mode == "prefix" and subsample < 1.0:
            keep = max(1, int(round(subsample * len(instances))))
            order = order[:keep]
        instances = [instances[i] for i in order]
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        t_max = max(t for _, t in chunk)
        ids = np.full((len(chunk), t_max), PAD_ID, dtype=np.int64)
        lengths = np.empty(len(chunk), dtype=np.int64)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, (u, t) in enumerate(chunk):
            ids[row, :t] = dataset.train[u][:t]
            lengths[row] = t
            labels[row] = dataset.train[u][t]
        yield Batch(ids=ids, lengths=lengths, labels=labels)


def count_instances(dataset: SequenceDataset, mode: str = "prefix") -> int:
    if mode == "prefix":
        return int(sum(max(0, len(s) - 1) for s in dataset.train))
    return int(sum(1 for s in dataset.train if len(s) >= 2))


# --------------------------------------------------------------------------
# On-disk dataset directory (tab-separated, UTF-8)
# --------------------------------------------------------------------------

def save_dataset(dataset: SequenceDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = dataset.vocab
    with open(out / "vocab.tsv", "w", encoding="utf-8") as fh:
        for raw in sorted(vocab.item_to_id):
            dense = vocab.item_to_id[raw]
            fh.write(f"{raw}\t{dense}\t{int(vocab.popularity[dense])}\n")
    with open(out / "sequences.tsv", "w", encoding="utf-8") as fh:
        for user, seq in zip(dataset.users, dataset.train):
            fh.write(f"{user}\t{' '.join(str(i) for i in seq)}\n")
    with open(out / "splits.tsv", "w", encoding="utf-8") as fh:
        for u, user in enumerate(dataset.users):
            fh.write(f"{user}\t{dataset.val_target[u]}\t{dataset.test_target[u]}\n")


def load_dataset(in_dir: str | Path, max_len: int = 50) -> SequenceDataset:
    src = Path(in_dir)
    for name in ("vocab.tsv", "sequences.tsv", "splits.tsv"):
        if not (src / name).exists():
            raise DataFormatError(f"dataset directory {src} is missing {name}")
    item_to_id: dict[str, int] = {}
    pops: dict[int, int] = {}
    with open(src / "vocab.tsv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"vocab.tsv:{lineno}: expected 3 fields")
            raw, dense, pop = parts
            item_to_id[raw] = int(dense)
            pops[int(dense)] = int(pop)
    if not item_to_id:
        raise DataFormatError("vocab.tsv: empty vocabulary")
    K = min(item_to_id.values()) - 1
    size = max(item_to_id.values()) + 1
    popularity = np.zeros(size, dtype=np.int64)
    for dense, pop in pops.items():
        popularity[dense] = pop
    vocab = Vocab(
        K=K,
        item_to_id=item_to_id,
        id_to_item={v: k for k, v in item_to_id.items()},
        popularity=popularity,
    )
    users: list[str] = []
    train: list[np.ndarray] = []
    with open(src / "sequences.tsv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"sequences.tsv:{lineno}: expected 2 fields")
            users.append(parts[0])
            train.append(np.array([int(x) for x in parts[1].split()], dtype=np.int64))
    val_t = np.zeros(len(users), dtype=np.int64)
    test_t = np.zeros(len(users), dtype=np.int64)
    index = {u: i for i, u in enumerate(users)}
    with open(src / "splits.tsv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[0] not in index:
                raise DataFormatError(f"splits.tsv:{lineno}: malformed row")
            u = index[parts[0]]
            val_t[u] = int(parts[1])
            test_t[u] = int(parts[2])
    return SequenceDataset(
        users=users, train=train, val_target=val_t, test_target=test_t,
        vocab=vocab, max_len=max_len,
    )


def save_negatives(cands: EvalCandidates, dataset: SequenceDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for user, negs in zip(dataset.users, cands.negatives):
            fh.write(f"{user}\t{' '.join(str(i) for i in negs)}\n")


def load_negatives(path: str | Path, dataset: SequenceDataset) -> EvalCandidates:
    rows: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 fields")
            rows[parts[0]] = np.array([int(x) for x in parts[1].split()], dtype=np.int64)
    missing = [u for u in dataset.users if u not in rows]
    if missing:
        raise DataFormatError(f"{path}: missing negatives for {len(missing)} users")
    return EvalCandidates(negatives=[rows[u] for u in dataset.users])
