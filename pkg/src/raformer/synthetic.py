"""Synthetic VideoQA instances with planted critical frames.

The pattern vocabulary is a bank of orthonormal vectors split into answer
patterns (ids below ``n_answer_patterns``) and context patterns (the
rest). Each instance plants one (query, answer) pattern pair on K frames:
the frame feature carries the query pattern while a single object slot
carries the answer pattern, so joining frame- and object-level content is
required to answer. The question contains the query pattern id among
context fillers; the correct candidate (or open-ended class) is the
answer pattern. Everything else is context noise, so an analytic
nearest-pattern oracle can recover the label independently of the model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RFDS"
VERSION = 1


@dataclass
class SyntheticConfig:
    t_frames: int = 16
    s_objects: int = 4
    q_len: int = 8
    d_in: int = 32
    n_patterns: int = 16
    n_answer_patterns: int = 8
    k_planted: int = 2
    noise_sigma: float = 0.1
    seed: int = 0
    task: str = "mc"
    n_candidates: int = 5
    candidate_len: int = 4

    def __post_init__(self):
        problems = []
        if self.t_frames < 1 or self.s_objects < 1 or self.q_len < 1:
            problems.append("t_frames, s_objects and q_len must be positive")
        if self.k_planted < 1 or self.k_planted > self.t_frames:
            problems.append(f"k_planted must be in [1, {self.t_frames}]")
        if self.n_answer_patterns < 2 or self.n_answer_patterns > self.n_patterns:
            problems.append("need 2 <= n_answer_patterns <= n_patterns")
        if self.n_patterns - self.n_answer_patterns < 2:
            problems.append("need at least 2 context patterns beyond the answer patterns")
        if self.d_in < self.n_patterns:
            problems.append(f"d_in {self.d_in} too small for {self.n_patterns} orthogonal patterns")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        if self.task not in ("mc", "oe"):
            problems.append(f"unknown task {self.task!r}")
        if self.task == "mc":
            if self.n_candidates < 2 or self.n_candidates > self.n_answer_patterns:
                problems.append("need 2 <= n_candidates <= n_answer_patterns")
            if self.candidate_len < 1:
                problems.append("candidate_len must be positive")
        if problems:
            raise ValueError("infeasible synthetic config: " + "; ".join(problems))

    @property
    def n_classes(self) -> int:
        return self.n_candidates if self.task == "mc" else self.n_answer_patterns


@dataclass
class SyntheticSample:
    frames: np.ndarray  # (T, d_in)
    objects: np.ndarray  # (T, S, d_in)
    question: np.ndarray  # (L,) pattern ids
    candidates: np.ndarray | None  # (n_candidates, candidate_len) ids, mc only
    label: int
    planted_frames: tuple[int, ...]


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    patterns: np.ndarray  # (n_patterns, d_in) orthonormal rows
    samples: list[SyntheticSample]

    def __len__(self) -> int:
        return len(self.samples)


def make_patterns(cfg: SyntheticConfig) -> np.ndarray:
    """Orthonormal pattern bank via Gram-Schmidt over Gaussian draws."""
    rng = np.random.default_rng([cfg.seed, 0])
    raw = rng.standard_normal((cfg.n_patterns, cfg.d_in))
    bank = np.zeros_like(raw)
    for i in range(cfg.n_patterns):
        vec = raw[i] - bank[:i].T @ (bank[:i] @ raw[i])
        bank[i] = vec / np.linalg.norm(vec)
    return bank


def _generate_sample(cfg: SyntheticConfig, patterns: np.ndarray, index: int) -> SyntheticSample:
    rng = np.random.default_rng([cfg.seed, 1, index])
    t_len, s, d = cfg.t_frames, cfg.s_objects, cfg.d_in
    context = np.arange(cfg.n_answer_patterns, cfg.n_patterns)

    if cfg.task == "mc":
        candidate_patterns = rng.choice(cfg.n_answer_patterns, size=cfg.n_candidates, replace=False)
        label = int(rng.integers(cfg.n_candidates))
        answer_pattern = int(candidate_patterns[label])
    else:
        answer_pattern = int(rng.integers(cfg.n_answer_patterns))
        label = answer_pattern
        candidate_patterns = None

    query_pattern = int(rng.choice(context))
    fillers = context[context != query_pattern]
    planted = np.sort(rng.choice(t_len, size=cfg.k_planted, replace=False))

    question = rng.choice(fillers, size=cfg.q_len)
    question[rng.integers(cfg.q_len)] = query_pattern

    candidates = None
    if cfg.task == "mc":
        candidates = rng.choice(fillers, size=(cfg.n_candidates, cfg.candidate_len))
        for a in range(cfg.n_candidates):
            candidates[a, rng.integers(cfg.candidate_len)] = candidate_patterns[a]
        candidates = candidates.astype(np.int64)

    frame_ids = rng.choice(fillers, size=t_len)
    frame_ids[planted] = query_pattern
    object_ids = rng.choice(fillers, size=(t_len, s))
    for t in planted:
        object_ids[t, rng.integers(s)] = answer_pattern

    noise = cfg.noise_sigma
    frames = patterns[frame_ids] + noise * rng.standard_normal((t_len, d))
    objects = patterns[object_ids] + noise * rng.standard_normal((t_len, s, d))

    return SyntheticSample(
        frames=frames,
        objects=objects,
        question=question.astype(np.int64),
        candidates=candidates,
        label=label,
        planted_frames=tuple(int(t) for t in planted),
    )


def generate_dataset(cfg: SyntheticConfig, count: int, start_index: int = 0) -> SyntheticDataset:
    """Deterministic sample stream; sample i is seeded by (seed, start_index + i)."""
    patterns = make_patterns(cfg)
    samples = [_generate_sample(cfg, patterns, start_index + i) for i in range(count)]
    return SyntheticDataset(config=cfg, patterns=patterns, samples=samples)


def candidate_content_patterns(sample: SyntheticSample, cfg: SyntheticConfig) -> list[int]:
    """Each candidate row contains exactly one answer-pattern id; extract them."""
    out = []
    for row in sample.candidates:
        content = [int(i) for i in row if i < cfg.n_answer_patterns]
        if len(content) != 1:
            raise ValueError(f"candidate row {row} does not carry exactly one answer pattern")
        out.append(content[0])
    return out


def oracle_answer(sample: SyntheticSample, patterns: np.ndarray, cfg: SyntheticConfig) -> int:
    """Analytic label: match frames to question ids, then objects to answers.

    Frames whose nearest pattern id appears in the question select the
    candidate object pool; the answer is the candidate (or class) whose
    pattern scores highest against that pool. Independent of the model.
    """
    frame_pat = (sample.frames @ patterns.T).argmax(axis=1)
    question_ids = set(int(i) for i in sample.question)
    matched = [t for t in range(cfg.t_frames) if int(frame_pat[t]) in question_ids]
    if not matched:
        matched = list(range(cfg.t_frames))
    pool = sample.objects[matched].reshape(-1, cfg.d_in)
    dots = pool @ patterns.T  # (n_objects, n_patterns)
    if cfg.task == "mc":
        scores = [dots[:, p].max() for p in candidate_content_patterns(sample, cfg)]
    else:
        scores = [dots[:, c].max() for c in range(cfg.n_answer_patterns)]
    return int(np.argmax(scores))


def rationale_recall(selected, planted) -> float:
    """Fraction of planted critical frames present in the selection."""
    planted = set(int(t) for t in planted)
    if not planted:
        return 0.0
    return len(planted & set(int(t) for t in selected)) / len(planted)


def random_recall_baseline(
    t_frames: int,
    k_planted: int,
    subset_sizes,
    rng: np.random.Generator,
    draws: int = 10000,
) -> float:
    """Monte Carlo recall of size-matched uniform random frame subsets."""
    sizes = np.asarray(list(subset_sizes), dtype=np.int64)
    total = 0.0
    for _ in range(draws):
        m = int(sizes[rng.integers(len(sizes))])
        subset = rng.choice(t_frames, size=min(m, t_frames), replace=False)
        planted = rng.choice(t_frames, size=k_planted, replace=False)
        total += rationale_recall(subset, planted)
    return total / draws


# ---------------------------------------------------------------------------
# Dataset files: binary for round-trips, JSON lines for inspection.
# Binary layout (little-endian): magic "RFDS", version u32, config-JSON
# length u32 + bytes, sample count u32; per sample: label i64,
# planted i64[k], question i64[L], candidate ids i64[A * candidate_len]
# (absent for open-ended), frames f64[T * d_in], objects f64[T * S * d_in].


def write_dataset(dataset: SyntheticDataset, path) -> None:
    cfg = dataset.config
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(dataset.samples)))
        for s in dataset.samples:
            fh.write(struct.pack("<q", s.label))
            fh.write(np.asarray(s.planted_frames, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(s.question, dtype="<i8").tobytes())
            if cfg.task == "mc":
                fh.write(np.ascontiguousarray(s.candidates, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(s.frames, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.objects, dtype="<f8").tobytes())


def read_dataset(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"not a dataset file: {path}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        cfg = SyntheticConfig(**json.loads(fh.read(header_len).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        t_len, s, d = cfg.t_frames, cfg.s_objects, cfg.d_in
        samples = []
        for _ in range(count):
            (label,) = struct.unpack("<q", fh.read(8))
            planted = np.frombuffer(fh.read(8 * cfg.k_planted), dtype="<i8")
            question = np.frombuffer(fh.read(8 * cfg.q_len), dtype="<i8").astype(np.int64)
            candidates = None
            if cfg.task == "mc":
                n = cfg.n_candidates * cfg.candidate_len
                candidates = (
                    np.frombuffer(fh.read(8 * n), dtype="<i8")
                    .reshape(cfg.n_candidates, cfg.candidate_len)
                    .astype(np.int64)
                )
            frames = np.frombuffer(fh.read(8 * t_len * d), dtype="<f8").reshape(t_len, d).copy()
            objects = (
                np.frombuffer(fh.read(8 * t_len * s * d), dtype="<f8")
                .reshape(t_len, s, d)
                .copy()
            )
            samples.append(
                SyntheticSample(
                    frames=frames,
                    objects=objects,
                    question=question,
                    candidates=candidates,
                    label=int(label),
                    planted_frames=tuple(int(t) for t in planted),
                )
            )
    return SyntheticDataset(config=cfg, patterns=make_patterns(cfg), samples=samples)


def write_inspection_jsonl(dataset: SyntheticDataset, path) -> None:
    """Human-readable dump: ids, labels, planted frames, feature norms."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, s in enumerate(dataset.samples):
            record = {
                "index": i,
                "label": s.label,
                "planted_frames": list(s.planted_frames),
                "question": [int(t) for t in s.question],
                "candidates": None if s.candidates is None else s.candidates.tolist(),
                "frame_norms": [round(float(v), 4) for v in np.linalg.norm(s.frames, axis=1)],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
