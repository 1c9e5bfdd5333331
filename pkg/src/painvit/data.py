"""Frames, PSPI labels, subject-disjoint folds and training-time sampling.

A :class:`Corpus` stores frames column-wise (one numpy array per field) so
that training batches are plain fancy-indexing.  The video variant works on
a second corpus whose rows are 2x2 frame grids (:func:`grid_corpus`).
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError, ValidationError
from .pnm import read_image, write_image
from .rng import make_rng

AU_NAMES = ("au4", "au6", "au7", "au9", "au10", "au43")
AU_MAX = {"au4": 5, "au6": 5, "au7": 5, "au9": 5, "au10": 5, "au43": 1}
PSPI_MAX = 16
MANIFEST_COLUMNS = ("subject_id", "video_id", "frame_index", "image_path") + AU_NAMES


@dataclass(frozen=True)
class AUVector:
    au4: int = 0
    au6: int = 0
    au7: int = 0
    au9: int = 0
    au10: int = 0
    au43: int = 0

    def __post_init__(self):
        for name in AU_NAMES:
            value = getattr(self, name)
            if int(value) != value or not 0 <= value <= AU_MAX[name]:
                raise ValidationError(f"{name}={value} outside 0..{AU_MAX[name]}")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, n)) for n in AU_NAMES)


def pspi_score(au) -> int:
    """AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43."""
    if not isinstance(au, AUVector):
        au = AUVector(*au) if not isinstance(au, dict) else AUVector(**au)
    return int(au.au4 + max(au.au6, au.au7) + max(au.au9, au.au10) + au.au43)


def pspi_array(aus: np.ndarray) -> np.ndarray:
    """Vectorised :func:`pspi_score` over an N x 6 AU matrix (columns in AU_NAMES order)."""
    aus = np.asarray(aus)
    return aus[:, 0] + np.maximum(aus[:, 1], aus[:, 2]) + np.maximum(aus[:, 3], aus[:, 4]) + aus[:, 5]


def binarize(pspi: int) -> int:
    if not 0 <= pspi <= PSPI_MAX:
        raise ValidationError(f"PSPI {pspi} outside 0..{PSPI_MAX}")
    return int(pspi > 0)


@dataclass
class Sample:
    subject_id: str
    video_id: str
    frame_index: int
    image: np.ndarray
    au: AUVector
    pspi: int
    label: int

    @property
    def sample_id(self) -> str:
        return f"{self.subject_id}_{self.video_id}_{self.frame_index:05d}"


@dataclass
class Corpus:
    images: np.ndarray          # N x C x H x W in [0, 1]
    subject_ids: np.ndarray     # N strings
    video_ids: np.ndarray       # N strings
    frame_index: np.ndarray     # N ints
    aus: np.ndarray             # N x 6 ints (AU_NAMES order)
    pspi: np.ndarray = field(default=None)
    labels: np.ndarray = field(default=None)
    is_grid: bool = False

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=object)
        self.video_ids = np.asarray(self.video_ids, dtype=object)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.aus = np.asarray(self.aus, dtype=np.int64).reshape(-1, 6)
        computed = pspi_array(self.aus)
        if self.pspi is None:
            self.pspi = computed
        elif not np.array_equal(np.asarray(self.pspi), computed):
            bad = int(np.nonzero(np.asarray(self.pspi) != computed)[0][0])
            raise ValidationError(f"row {bad}: PSPI {self.pspi[bad]} does not match AUs (expected {computed[bad]})")
        self.pspi = np.asarray(self.pspi, dtype=np.int64)
        self.labels = (self.pspi > 0).astype(np.int64)
        n = len(self.subject_ids)
        for name in ("images", "video_ids", "frame_index", "aus"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"corpus column {name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.subject_ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(str(self.subject_ids[i]), str(self.video_ids[i]), int(self.frame_index[i]),
                      self.images[i], AUVector(*self.aus[i]), int(self.pspi[i]), int(self.labels[i]))

    def sample_id(self, i: int) -> str:
        return f"{self.subject_ids[i]}_{self.video_ids[i]}_{int(self.frame_index[i]):05d}"

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids.tolist()))

    def pain_counts(self) -> list[tuple[str, int]]:
        return [(s, int(self.labels[self.subject_ids == s].sum())) for s in self.subjects()]

    def indices_for(self, subjects: Iterable[str]) -> np.ndarray:
        return np.nonzero(np.isin(self.subject_ids, list(subjects)))[0]

    def videos(self) -> list[np.ndarray]:
        """Row indices of each (subject, video) in order of first appearance."""
        groups: dict[tuple[str, str], list[int]] = {}
        for i, key in enumerate(zip(self.subject_ids, self.video_ids)):
            groups.setdefault(key, []).append(i)
        return [np.asarray(v) for v in groups.values()]

    def check_frame_order(self) -> None:
        for rows in self.videos():
            idx = self.frame_index[rows]
            if np.any(np.diff(idx) <= 0):
                k = int(np.nonzero(np.diff(idx) <= 0)[0][0]) + 1
                raise ValidationError(f"frame indices not strictly increasing in video "
                                      f"{self.subject_ids[rows[0]]}/{self.video_ids[rows[0]]} at frame {idx[k]}")

    def prevalence(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0


# -- folds -----------------------------------------------------------------------
@dataclass
class FoldAssignment:
    mapping: dict[str, int]
    k: int = 5

    def folds(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.k)]
        for subject, f in self.mapping.items():
            out[f].append(subject)
        return [sorted(f) for f in out]

    def test_subjects(self, fold: int) -> list[str]:
        return self.folds()[fold]

    def train_subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.mapping.items() if f != fold)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "folds": self.folds()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FoldAssignment":
        payload = json.loads(text)
        mapping = {s: i for i, fold in enumerate(payload["folds"]) for s in fold}
        return cls(mapping, int(payload["k"]))


def fold_totals(assign: Sequence[int], counts: Sequence[int], k: int) -> np.ndarray:
    totals = np.zeros(k, dtype=np.int64)
    np.add.at(totals, np.asarray(assign), np.asarray(counts))
    return totals


def spread(totals) -> int:
    return int(np.max(totals) - np.min(totals))


def make_folds(subjects: Sequence[tuple[str, int]], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Subject-disjoint folds with balanced pain-frame totals.

    Subjects are ranked by pain count, the lightest is paired with the
    heaviest, and pairs are dealt round-robin into folds of near-equal
    size.  A best-improvement local search then exchanges one or two
    subjects between two folds (up to four subjects per move) while that
    lowers the spread of per-fold pain totals.
    """
    s = len(subjects)
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if s < k:
        raise ConfigError(f"{s} subjects cannot fill {k} folds")
    names = [str(n) for n, _ in subjects]
    if len(set(names)) != s:
        raise ConfigError("duplicate subject ids")
    counts = np.asarray([int(c) for _, c in subjects], dtype=np.int64)

    tiebreak = make_rng(seed, "folds").permutation(s)
    ranked = sorted(range(s), key=lambda i: (counts[i], tiebreak[i]))
    units: list[list[int]] = [[ranked[i], ranked[s - 1 - i]] for i in range(s // 2)]
    if s % 2:
        units.append([ranked[s // 2]])

    capacity = np.full(k, s // k)
    capacity[: s % k] += 1
    assign = np.full(s, -1)
    cursor = 0
    while units:
        unit = units.pop(0)
        room = capacity - np.bincount(assign[assign >= 0], minlength=k)
        target = next((f % k for f in range(cursor, cursor + k) if room[f % k] >= len(unit)), None)
        if target is None:
            units[:0] = [[m] for m in unit]
            continue
        assign[unit] = target
        cursor = target + 1

    def score(a):
        totals = fold_totals(a, counts, k)
        return spread(totals), int(np.sum((k * totals - totals.sum()) ** 2))

    best = score(assign)
    while True:
        candidate, candidate_score = None, best
        for fa, fb in itertools.combinations(range(k), 2):
            in_a = np.nonzero(assign == fa)[0]
            in_b = np.nonzero(assign == fb)[0]
            for size in (1, 2):
                for group_a in itertools.combinations(in_a, size):
                    for group_b in itertools.combinations(in_b, size):
                        trial = assign.copy()
                        trial[list(group_a)] = fb
                        trial[list(group_b)] = fa
                        sc = score(trial)
                        if sc < candidate_score:
                            candidate, candidate_score = trial, sc
        if candidate is None:
            break
        assign, best = candidate, candidate_score
    return FoldAssignment({names[i]: int(assign[i]) for i in range(s)}, k)


# -- sampling ---------------------------------------------------------------------
def oversample(train_indices, labels, seed: int | np.random.Generator) -> np.ndarray:
    """Redraw minority-class indices with replacement until both classes are equally frequent.

    ``labels`` is aligned with ``train_indices``.  All original indices are
    kept; the result is shuffled.
    """
    idx = np.asarray(train_indices)
    lab = np.asarray(labels).astype(int)
    if idx.shape != lab.shape:
        raise ContractError(f"{idx.size} indices but {lab.size} labels")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, "oversample")
    pos, neg = idx[lab == 1], idx[lab == 0]
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("oversampling needs both classes in the training set")
    minority, majority = (pos, neg) if pos.size < neg.size else (neg, pos)
    extra = rng.choice(minority, size=majority.size - minority.size, replace=True)
    return rng.permutation(np.concatenate([idx, extra]))


# -- grids --------------------------------------------------------------------------
@dataclass
class GridSample:
    image: np.ndarray
    label: int
    subject_id: str
    video_id: str
    frame_indices: tuple[int, int, int, int]
    pspi: int = 0
    au: tuple[int, ...] = ()


def downscale_half(image: np.ndarray) -> np.ndarray:
    c, h, w = image.shape
    if h % 2 or w % 2:
        raise ContractError(f"cannot halve an image of size {h}x{w}")
    return image.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def tile_grid(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Four C x H x W frames -> one C x H x W grid (f1 top-left ... f4 bottom-right)."""
    a, b, c, d = (downscale_half(np.asarray(f)) for f in frames)
    return np.concatenate([np.concatenate([a, b], axis=2), np.concatenate([c, d], axis=2)], axis=1)


def grid_count(length: int, stride: int = 4) -> int:
    return max(0, (length - 4) // stride + 1)


def make_grids(frames: Sequence[Sample], stride: int = 4) -> list[GridSample]:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    frames = list(frames)
    if len({(f.subject_id, f.video_id) for f in frames}) > 1:
        raise ContractError("make_grids expects frames of a single video")
    if any(b.frame_index <= a.frame_index for a, b in zip(frames, frames[1:])):
        raise ContractError("frames must be sorted by strictly increasing frame_index")
    out = []
    for start in range(0, grid_count(len(frames), stride) * stride, stride):
        window = frames[start:start + 4]
        last = window[-1]
        out.append(GridSample(tile_grid([f.image for f in window]), last.label, last.subject_id,
                              last.video_id, tuple(f.frame_index for f in window), last.pspi, last.au.as_tuple()))
    return out


def grid_corpus(corpus: Corpus, stride: int = 4) -> Corpus:
    """Corpus whose rows are 2x2 grids; AUs, PSPI and frame index come from the last frame."""
    images, subjects, videos, frames, aus = [], [], [], [], []
    for rows in corpus.videos():
        for g in make_grids([corpus[int(i)] for i in rows], stride):
            images.append(g.image)
            subjects.append(g.subject_id)
            videos.append(g.video_id)
            frames.append(g.frame_indices[-1])
            aus.append(g.au)
    if not images:
        c, h, w = corpus.image_shape
        return Corpus(np.zeros((0, c, h, w)), [], [], [], np.zeros((0, 6), dtype=np.int64), is_grid=True)
    return Corpus(np.stack(images), subjects, videos, frames, np.asarray(aus), is_grid=True)


# -- mixup --------------------------------------------------------------------------
def one_hot(labels, num_classes: int = 2) -> np.ndarray:
    labels = np.asarray(labels).astype(int)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def blend(x_i, x_j, y_i, y_j, lam: float):
    x_i, x_j, y_i, y_j = (np.asarray(v, dtype=np.float64) for v in (x_i, x_j, y_i, y_j))
    return lam * x_i + (1.0 - lam) * x_j, lam * y_i + (1.0 - lam) * y_j


@dataclass
class MixupPlan:
    partner: np.ndarray   # -1 where the sample is left unmixed
    lam: np.ndarray       # 1.0 where unmixed

    @property
    def mixed(self) -> np.ndarray:
        return np.nonzero(self.partner >= 0)[0]


def mixup_plan(labels, subject_ids, alpha: float, fraction: float = 0.2, same_subject: bool = True,
               seed: int | np.random.Generator = 0) -> MixupPlan:
    """Pick ``round(fraction * N)`` samples and, for each, a partner with the other label.

    With ``same_subject`` the partner must also share the subject id.
    Samples without an eligible partner stay unmixed.
    """
    if alpha <= 0:
        raise ConfigError(f"mixup alpha must be positive, got {alpha}")
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"mixup fraction must be in [0, 1], got {fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, "mixup")
    labels = np.asarray(labels).astype(int)
    subjects = np.asarray(subject_ids, dtype=object)
    n = labels.size
    partner = np.full(n, -1)
    lam = np.ones(n)
    chosen = np.sort(rng.choice(n, size=int(round(fraction * n)), replace=False)) if n else np.array([], int)
    for i in chosen:
        eligible = labels != labels[i]
        if same_subject:
            eligible &= subjects == subjects[i]
        candidates = np.nonzero(eligible)[0]
        if candidates.size == 0:
            continue
        partner[i] = int(rng.choice(candidates))
        lam[i] = float(rng.beta(alpha, alpha))
    return MixupPlan(partner, lam)


def apply_plan(images: np.ndarray, targets: np.ndarray, plan: MixupPlan, rows: np.ndarray,
               source_images: np.ndarray, source_targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mix the rows ``rows`` of an epoch (already gathered into ``images``/``targets``)."""
    images, targets = images.copy(), targets.copy()
    for k, r in enumerate(rows):
        j = plan.partner[r]
        if j >= 0:
            images[k], targets[k] = blend(images[k], source_images[j], targets[k], source_targets[j], plan.lam[r])
    return images, targets


def mixup(images, labels, subject_ids, alpha: float, fraction: float = 0.2, same_subject: bool = True,
          seed: int | np.random.Generator = 0) -> tuple[np.ndarray, np.ndarray, MixupPlan]:
    """Mix a batch; ``labels`` may be hard labels or one-hot rows.  Returns images, soft labels, plan."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    targets = one_hot(labels) if labels.ndim == 1 else labels.astype(np.float64)
    plan = mixup_plan(targets.argmax(axis=1), subject_ids, alpha, fraction, same_subject, seed)
    mixed_x, mixed_y = apply_plan(images, targets, plan, np.arange(len(images)), images, targets)
    return mixed_x, mixed_y, plan


# -- synthetic corpus -------------------------------------------------------------------
# regions on a 32 x 32 canvas as (y0, y1, x0, x1); scaled for other sizes
REGIONS_32 = {
    "brow": [(9, 11, 8, 24)],
    "eyes": [(12, 15, 9, 14), (12, 15, 18, 23)],
    "nose": [(17, 23, 13, 19)],
}
AU_REGION = {"au4": "brow", "au6": "eyes", "au7": "eyes", "au43": "eyes", "au9": "nose", "au10": "nose"}


def region_masks(image_size: int) -> dict[str, np.ndarray]:
    scale = image_size / 32.0
    masks = {}
    for name, boxes in REGIONS_32.items():
        m = np.zeros((image_size, image_size), dtype=bool)
        for y0, y1, x0, x1 in boxes:
            m[int(y0 * scale):int(y1 * scale), int(x0 * scale):int(x1 * scale)] = True
        masks[name] = m
    return masks


def au_patch_mask(image_size: int, patch_size: int) -> np.ndarray:
    """Patch-grid mask of every patch touching a planted AU region."""
    union = np.any(np.stack(list(region_masks(image_size).values())), axis=0)
    side = image_size // patch_size
    return union.reshape(side, patch_size, side, patch_size).any(axis=(1, 3))


@dataclass(frozen=True)
class SyntheticParams:
    num_subjects: int = 10
    frames_per_video: int = 40
    videos_per_subject: int = 4
    signal_strength: float = 1.0
    seed: int = 0
    image_size: int = 32
    channels: int = 1
    episode_rate: float = 0.032   # expected pain episodes per frame

    def __post_init__(self):
        if min(self.num_subjects, self.frames_per_video, self.videos_per_subject, self.image_size, self.channels) <= 0:
            raise ConfigError("synthetic corpus sizes must be positive")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError(f"signal_strength must be in [0, 1], got {self.signal_strength}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")


def _envelope(rng: np.random.Generator, length: int, rate: float) -> tuple[np.ndarray, list[dict]]:
    """Per-frame AU intensities (length x 6) from piecewise-linear pain episodes."""
    aus = np.zeros((length, 6), dtype=np.int64)
    episodes = []
    for _ in range(rng.poisson(rate * length)):
        rise, hold, fall = int(rng.integers(1, 3)), int(rng.integers(3, 10)), int(rng.integers(1, 3))
        start = int(rng.integers(-rise, length))
        peaks = rng.integers(1, 6, size=5) * (rng.random(5) < 0.75)
        if not peaks.any():
            peaks[int(rng.integers(0, 5))] = int(rng.integers(1, 6))
        closes_eyes = rng.random() < 0.5
        knots_t = [start, start + rise, start + rise + hold, start + rise + hold + fall]
        t = np.arange(length)
        env = np.interp(t, knots_t, [0.0, 1.0, 1.0, 0.0], left=0.0, right=0.0)
        ep = np.zeros((length, 6), dtype=np.int64)
        ep[:, :5] = np.ceil(env[:, None] * peaks[None, :] - 1e-9).astype(np.int64)
        ep[:, 5] = (closes_eyes & (env >= 0.6)).astype(np.int64)
        aus = np.maximum(aus, ep)
        episodes.append({"start": start, "rise": rise, "hold": hold, "fall": fall})
    return aus, episodes


def _subject_texture(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    scale = size / 32.0
    noise = gaussian_filter(rng.standard_normal((size, size)), sigma=2.5 * scale)
    noise *= 0.05 / max(noise.std(), 1e-12)
    yy, xx = np.mgrid[0:size, 0:size] / scale
    face = 0.38 + 0.06 * np.exp(-(((yy - 16) / 11) ** 2 + ((xx - 16) / 9) ** 2))
    blobs = np.zeros((size, size))
    for _ in range(3):
        cy, cx = rng.uniform(2, 30, size=2)
        width = rng.uniform(1.5, 3.5)
        blobs += rng.uniform(-0.1, 0.1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    base = face + noise + blobs
    if channels == 3:
        tint = 1.0 + rng.uniform(-0.08, 0.08, size=3)
        return np.stack([base * t for t in tint])
    return base[None]


def au_brightness(aus: np.ndarray, masks: dict[str, np.ndarray], signal_strength: float) -> np.ndarray:
    """Additive brightness (N x H x W) planted by the AUs; active AUs add 0.10 plus 0.03 per intensity step."""
    size = next(iter(masks.values())).shape[0]
    out = np.zeros((len(aus), size, size))
    for col, name in enumerate(AU_NAMES):
        level = aus[:, col] * (5 if name == "au43" else 1)
        amp = np.where(level > 0, 0.10 + 0.03 * level, 0.0) * signal_strength
        out += amp[:, None, None] * masks[AU_REGION[name]][None]
    return out


def gen_synthetic(num_subjects: int = 10, frames_per_video: int = 40, videos_per_subject: int = 4,
                  signal_strength: float = 1.0, seed: int = 0, image_size: int = 32, channels: int = 1,
                  episode_rate: float = 0.032) -> Corpus:
    """Deterministic stand-in corpus with AU-driven brightness in fixed facial regions."""
    params = SyntheticParams(num_subjects, frames_per_video, videos_per_subject, signal_strength, seed,
                             image_size, channels, episode_rate)
    masks = region_masks(image_size)
    images, subjects, videos, frames, aus = [], [], [], [], []
    for s in range(params.num_subjects):
        rng = make_rng(seed, "subject", s)
        texture = _subject_texture(rng, image_size, channels)
        for v in range(params.videos_per_subject):
            vid_rng = make_rng(seed, "video", s, v)
            au, _ = _envelope(vid_rng, frames_per_video, episode_rate)
            noise = vid_rng.normal(0.0, 0.02, size=(frames_per_video, channels, image_size, image_size))
            jitter = vid_rng.uniform(-0.03, 0.03, size=(frames_per_video, 1, 1, 1))
            planted = au_brightness(au, masks, signal_strength)[:, None]
            images.append(np.clip(texture[None] + planted + noise + jitter, 0.0, 1.0))
            subjects += [f"S{s:03d}"] * frames_per_video
            videos += [f"V{v:02d}"] * frames_per_video
            frames += list(range(frames_per_video))
            aus.append(au)
    return Corpus(np.concatenate(images), subjects, videos, frames, np.concatenate(aus))


def synthetic_from_params(params: SyntheticParams) -> Corpus:
    return gen_synthetic(params.num_subjects, params.frames_per_video, params.videos_per_subject,
                         params.signal_strength, params.seed, params.image_size, params.channels,
                         params.episode_rate)


# -- manifest I/O -----------------------------------------------------------------------
def _parse_int(value: str, column: str, line: int) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"row {line}: column {column} is not an integer ({value!r})") from None


def load_manifest(path) -> Corpus:
    """Read a CSV manifest (paths relative to the manifest's directory)."""
    path = Path(path)
    root = path.parent
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: manifest header lacks columns {missing}")
        has_pspi = "pspi" in header
        images, subjects, videos, frames, aus, declared = [], [], [], [], [], []
        shape = None
        for line, row in enumerate(reader, start=2):
            if None in row or any(row.get(c) in (None, "") for c in MANIFEST_COLUMNS):
                raise ValidationError(f"row {line}: malformed or missing fields")
            values = [_parse_int(row[c], c, line) for c in AU_NAMES]
            try:
                au = AUVector(*values)
            except ValidationError as exc:
                raise ValidationError(f"row {line}: {exc}") from None
            expected = pspi_score(au)
            if has_pspi and row["pspi"] not in (None, ""):
                given = _parse_int(row["pspi"], "pspi", line)
                if given != expected:
                    raise ValidationError(f"row {line}: PSPI mismatch for frame {row['subject_id']}/"
                                          f"{row['video_id']}/{row['frame_index']}: "
                                          f"column says {given}, AUs give {expected}")
            image = read_image(root / row["image_path"])
            if shape is None:
                shape = image.shape
            elif image.shape != shape:
                raise ValidationError(f"row {line}: image shape {image.shape} differs from {shape}")
            images.append(image)
            subjects.append(row["subject_id"])
            videos.append(row["video_id"])
            frames.append(_parse_int(row["frame_index"], "frame_index", line))
            aus.append(au.as_tuple())
            declared.append(expected)
    if not images:
        raise ValidationError(f"{path}: manifest has no rows")
    corpus = Corpus(np.stack(images), subjects, videos, frames, np.asarray(aus), np.asarray(declared))
    corpus.check_frame_order()
    return corpus


def export_manifest(corpus: Corpus, out_dir) -> Path:
    """Write images as PGM/PPM plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    ext = ".pgm" if corpus.image_shape[0] == 1 else ".ppm"
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS + ("pspi",))
        for i in range(len(corpus)):
            rel = f"images/{corpus.sample_id(i)}{ext}"
            write_image(out_dir / rel, corpus.images[i])
            writer.writerow([corpus.subject_ids[i], corpus.video_ids[i], int(corpus.frame_index[i]), rel,
                             *[int(a) for a in corpus.aus[i]], int(corpus.pspi[i])])
    return manifest
