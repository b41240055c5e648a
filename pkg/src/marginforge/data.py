"""Synthetic planted-concept datasets plus on-disk ingestion.

Items are generated from per-concept Gaussian latents pushed through fixed
random linear maps into the video and text feature spaces. A configurable
fraction of items shares its concept with at least one other item, planting
semantically equivalent negatives whose ground truth is known exactly. The
static expert tables are derived views: mean-pooled frames for video, and the
text features under independent extra noise for text (a deliberately
imperfect external encoder).
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ConfigError, ParseError
from .experts import (
    StaticEmbeddingTable,
    load_frame_file,
    load_static_embeddings,
    save_frame_file,
    save_static_embeddings,
)
from .seeding import named_rng

VAL_FRACTION = 0.2

# sse_text noise std as a fraction of the raw text noise
_SSE_TEXT_NOISE_FACTOR = 0.5

MANIFEST_NAME = "manifest.txt"

_FILES = {
    "frames": "frames.frm1",
    "text": "text.emb1",
    "sse_video": "sse_video.emb1",
    "sse_text": "sse_text.emb1",
    "labels": "labels.txt",
    "split_train": "split_train.txt",
    "split_val": "split_val.txt",
}


@dataclass(frozen=True)
class SynthConfig:
    n_items: int = 64
    n_concepts: int = 64
    latent_dim: int = 8
    video_dim: int = 24
    text_dim: int = 20
    frames_per_video: int = 4
    noise_video: float = 0.1
    noise_text: float = 0.1
    duplicate_rate: float = 0.0
    seed: int = 0


@dataclass
class Dataset:
    ids: list[str]
    concepts: np.ndarray  # (N,) int64 concept label per item
    frames: np.ndarray  # (N, T, video_dim)
    text: np.ndarray  # (N, text_dim)
    sse_video: StaticEmbeddingTable
    sse_text: StaticEmbeddingTable
    train_ids: list[str]
    val_ids: list[str]
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {item_id: i for i, item_id in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ConfigError("dataset ids are not unique")
        assigned = set(self.train_ids) | set(self.val_ids)
        if assigned != set(self.ids) or len(self.train_ids) + len(self.val_ids) != len(self.ids):
            raise ConfigError("train/val splits must partition the ids")

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, ids) -> np.ndarray:
        return np.array([self.index[i] for i in ids], dtype=np.int64)

    def pooled_video(self) -> np.ndarray:
        return self.frames.mean(axis=1)


def _duplicate_count(cfg: SynthConfig) -> int:
    target = cfg.duplicate_rate * cfg.n_items
    d = int(round(target))
    if d == 1:
        d = 0 if target <= 1.0 else 2
    return d


def _plan_concept_sizes(cfg: SynthConfig) -> list[int]:
    """Sizes per concept: shared groups (>= 2 items) first, then singletons."""
    if not 0.0 <= cfg.duplicate_rate <= 1.0:
        raise ConfigError(f"duplicate_rate must be in [0, 1], got {cfg.duplicate_rate}")
    if cfg.n_concepts > cfg.n_items or cfg.n_concepts < 1:
        raise ConfigError(
            f"n_concepts must be in [1, n_items], got {cfg.n_concepts} for {cfg.n_items} items"
        )
    d = _duplicate_count(cfg)
    singles = cfg.n_items - d
    shared = cfg.n_concepts - singles
    if d == 0:
        if shared != 0:
            raise ConfigError(
                f"duplicate_rate {cfg.duplicate_rate} needs n_concepts == n_items "
                f"({cfg.n_items}), got {cfg.n_concepts}"
            )
        return [1] * singles
    if shared < 1 or 2 * shared > d:
        raise ConfigError(
            f"cannot split {d} duplicated items into {shared} concepts of size >= 2; "
            f"with n_items={cfg.n_items} and duplicate_rate={cfg.duplicate_rate}, "
            f"n_concepts must lie in [{singles + 1}, {singles + d // 2}]"
        )
    base, rem = divmod(d, shared)
    return [base + 1] * rem + [base] * (shared - rem) + [1] * singles


def generate(cfg: SynthConfig) -> Dataset:
    """Deterministic synthetic dataset with planted semantic duplicates."""
    if min(cfg.latent_dim, cfg.video_dim, cfg.text_dim, cfg.frames_per_video) < 1:
        raise ConfigError(f"dims and frame count must be positive: {cfg}")
    if cfg.noise_video < 0 or cfg.noise_text < 0:
        raise ConfigError("noise levels must be nonnegative")
    if cfg.n_items < 4:
        raise ConfigError(f"need at least 4 items for a train/val split, got {cfg.n_items}")
    sizes = _plan_concept_sizes(cfg)

    n, m, t = cfg.n_items, cfg.latent_dim, cfg.frames_per_video
    ids = [f"it{i:06d}" for i in range(n)]

    latents = named_rng(cfg.seed, "data_latents").standard_normal((cfg.n_concepts, m))
    rng_maps = named_rng(cfg.seed, "data_maps")
    map_video = rng_maps.standard_normal((cfg.video_dim, m)) / np.sqrt(m)
    map_text = rng_maps.standard_normal((cfg.text_dim, m)) / np.sqrt(m)

    concepts = np.empty(n, dtype=np.int64)
    perm = named_rng(cfg.seed, "data_assign").permutation(n)
    cursor = 0
    for concept, size in enumerate(sizes):
        for item in perm[cursor : cursor + size]:
            concepts[item] = concept
        cursor += size

    signal_video = latents[concepts] @ map_video.T  # (N, video_dim)
    signal_text = latents[concepts] @ map_text.T  # (N, text_dim)

    eps_video = named_rng(cfg.seed, "data_video_noise").standard_normal((n, t, cfg.video_dim))
    eps_text = named_rng(cfg.seed, "data_text_noise").standard_normal((n, cfg.text_dim))
    eps_sse = named_rng(cfg.seed, "data_sse_noise").standard_normal((n, cfg.text_dim))

    frames = signal_video[:, None, :] + cfg.noise_video * eps_video
    text = signal_text + cfg.noise_text * eps_text
    # the static text expert is an independent, imperfect view of the clean
    # semantics (an external encoder), not a degraded copy of the raw features
    sse_text_vecs = signal_text + _SSE_TEXT_NOISE_FACTOR * cfg.noise_text * eps_sse
    sse_video_vecs = frames.mean(axis=1)

    split_perm = named_rng(cfg.seed, "data_split").permutation(n)
    n_val = max(2, int(round(VAL_FRACTION * n)))
    val_rows = sorted(split_perm[:n_val].tolist())
    train_rows = sorted(split_perm[n_val:].tolist())
    if len(train_rows) < 2:
        raise ConfigError(f"{n} items leave fewer than 2 training items")

    return Dataset(
        ids=ids,
        concepts=concepts,
        frames=frames,
        text=text,
        sse_video=StaticEmbeddingTable(ids, sse_video_vecs, "sse_video"),
        sse_text=StaticEmbeddingTable(ids, sse_text_vecs, "sse_text"),
        train_ids=[ids[i] for i in train_rows],
        val_ids=[ids[i] for i in val_rows],
    )


def ground_truth_equivalents(dataset: Dataset) -> dict[str, set[str]]:
    """For each id, the other ids sharing its concept."""
    by_concept: dict[int, list[str]] = {}
    for item_id, concept in zip(dataset.ids, dataset.concepts):
        by_concept.setdefault(int(concept), []).append(item_id)
    return {
        item_id: set(by_concept[int(concept)]) - {item_id}
        for item_id, concept in zip(dataset.ids, dataset.concepts)
    }


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def fnv1a64(data: bytes) -> str:
    """FNV-1a 64-bit hash as lowercase hex."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def _write_labels(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"LBL1 {len(dataset)}\n")
        for item_id, concept in zip(dataset.ids, dataset.concepts):
            fh.write(f"{item_id} {int(concept)}\n")


def _load_labels(path) -> dict[str, int]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("LBL1 "):
        raise ParseError(f"{path}: expected 'LBL1 <N>' header", 1)
    n = int(lines[0].split()[1])
    labels: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<id> <concept>'", lineno)
        try:
            labels[parts[0]] = int(parts[1])
        except ValueError:
            raise ParseError(f"bad concept label {parts[1]!r}", lineno) from None
    if len(labels) != n:
        raise ParseError(f"{path}: header declares {n} labels, found {len(labels)}")
    return labels


def _write_split(ids, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"SPLIT1 {len(ids)}\n")
        for item_id in ids:
            fh.write(item_id + "\n")


def _load_split(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("SPLIT1 "):
        raise ParseError(f"{path}: expected 'SPLIT1 <N>' header", 1)
    n = int(lines[0].split()[1])
    ids = [line.strip() for line in lines[1:] if line.strip() and not line.startswith("#")]
    if len(ids) != n:
        raise ParseError(f"{path}: header declares {n} ids, found {len(ids)}")
    return ids


def write_dataset(dataset: Dataset, out_dir) -> None:
    """Write all data files plus a checksummed manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_frame_file(dataset.ids, dataset.frames, out / _FILES["frames"])
    save_static_embeddings(
        StaticEmbeddingTable(dataset.ids, dataset.text, "text"), out / _FILES["text"]
    )
    save_static_embeddings(dataset.sse_video, out / _FILES["sse_video"])
    save_static_embeddings(dataset.sse_text, out / _FILES["sse_text"])
    _write_labels(dataset, out / _FILES["labels"])
    _write_split(dataset.train_ids, out / _FILES["split_train"])
    _write_split(dataset.val_ids, out / _FILES["split_val"])

    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        fh.write("MANIFEST1\n")
        for role, filename in _FILES.items():
            digest = fnv1a64((out / filename).read_bytes())
            fh.write(f"{role} {filename} {digest}\n")


def load_dataset(data_dir) -> Dataset:
    """Load a dataset directory, verifying the manifest checksums."""
    root = Path(data_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise ParseError(f"{manifest}: manifest not found")
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "MANIFEST1":
        raise ParseError(f"{manifest}: expected MANIFEST1 header", 1)
    files: dict[str, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("expected '<role> <filename> <checksum>'", lineno)
        role, filename, digest = parts
        target = root / filename
        if not target.exists():
            raise ParseError(f"{manifest}: listed file {filename} is missing", lineno)
        actual = fnv1a64(target.read_bytes())
        if actual != digest:
            raise ChecksumError(f"{filename}: checksum {actual} != manifest {digest}")
        files[role] = filename
    missing = set(_FILES) - set(files)
    if missing:
        raise ParseError(f"{manifest}: missing roles {sorted(missing)}")

    ids, frames = load_frame_file(root / files["frames"])
    text_table = load_static_embeddings(root / files["text"], "text")
    sse_video = load_static_embeddings(root / files["sse_video"], "sse_video")
    sse_text = load_static_embeddings(root / files["sse_text"], "sse_text")
    labels = _load_labels(root / files["labels"])

    for name, table_ids in (
        ("text", text_table.ids),
        ("sse_video", sse_video.ids),
        ("sse_text", sse_text.ids),
    ):
        if table_ids != ids:
            raise ParseError(f"{name} ids do not match the frame file ids")
    try:
        concepts = np.array([labels[i] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise ParseError(f"labels file is missing id {exc.args[0]!r}") from None

    return Dataset(
        ids=ids,
        concepts=concepts,
        frames=frames,
        text=text_table.embeddings,
        sse_video=sse_video,
        sse_text=sse_text,
        train_ids=_load_split(root / files["split_train"]),
        val_ids=_load_split(root / files["split_val"]),
    )
