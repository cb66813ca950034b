"""Frame annotations: aggregation, agreement filtering, subject-independent
partitioning and distribution statistics."""

from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import AU_IDS, N_EXPRESSIONS, PARTITIONS


class AnnotationError(ValueError):
    pass


class SplitWarning(UserWarning):
    pass


class CorrelationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LabeledFrame:
    video_id: str
    frame: int
    subject_id: str
    valence: float | None = None
    arousal: float | None = None
    au: tuple[int, ...] | None = None
    expr: int | None = None
    annotator_id: str | None = None

    def __post_init__(self):
        if (self.valence is None) != (self.arousal is None):
            raise AnnotationError("valence and arousal must be given together")
        if self.valence is not None and not (-1.0 <= self.valence <= 1.0 and -1.0 <= self.arousal <= 1.0):
            raise AnnotationError(f"VA out of [-1, 1] at {self.video_id}:{self.frame}")
        if self.au is not None:
            object.__setattr__(self, "au", tuple(int(v) for v in self.au))
            if any(v not in (0, 1) for v in self.au):
                raise AnnotationError(f"AU entries must be 0/1 at {self.video_id}:{self.frame}")
        if self.expr is not None and not (0 <= self.expr < N_EXPRESSIONS):
            raise AnnotationError(f"expression class {self.expr} out of range at {self.video_id}:{self.frame}")
        if self.valence is None and self.au is None and self.expr is None:
            raise AnnotationError(f"frame {self.video_id}:{self.frame} carries no label")

    @property
    def va(self) -> tuple[float, float] | None:
        return None if self.valence is None else (self.valence, self.arousal)

    def to_json(self) -> dict:
        doc = {"video_id": self.video_id, "frame": self.frame, "subject_id": self.subject_id}
        if self.annotator_id is not None:
            doc["annotator_id"] = self.annotator_id
        if self.valence is not None:
            doc["valence"] = self.valence
            doc["arousal"] = self.arousal
        if self.au is not None:
            doc["au"] = list(self.au)
        if self.expr is not None:
            doc["expr"] = self.expr
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LabeledFrame":
        allowed = {"video_id", "frame", "subject_id", "annotator_id", "valence", "arousal", "au", "expr"}
        extra = set(doc) - allowed
        if extra:
            raise AnnotationError(f"unknown field {sorted(extra)[0]!r}")
        for key in ("video_id", "frame", "subject_id"):
            if key not in doc:
                raise AnnotationError(f"missing field {key!r}")
        return cls(
            video_id=str(doc["video_id"]),
            frame=int(doc["frame"]),
            subject_id=str(doc["subject_id"]),
            valence=None if doc.get("valence") is None else float(doc["valence"]),
            arousal=None if doc.get("arousal") is None else float(doc["arousal"]),
            au=None if doc.get("au") is None else tuple(doc["au"]),
            expr=None if doc.get("expr") is None else int(doc["expr"]),
            annotator_id=None if doc.get("annotator_id") is None else str(doc["annotator_id"]),
        )


def read_frames(path: str | Path) -> list[LabeledFrame]:
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                frames.append(LabeledFrame.from_json(json.loads(line)))
            except (json.JSONDecodeError, AnnotationError, TypeError, ValueError) as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from exc
    return frames


def write_frames(path: str | Path, frames: Iterable[LabeledFrame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_json(), sort_keys=True) + "\n")


@dataclass
class AnnotatorTrack:
    annotator_id: str
    frames: np.ndarray
    values: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.values = np.asarray(self.values)
        if self.values.shape[0] != self.frames.shape[0]:
            raise AnnotationError(f"track {self.annotator_id}: {len(self.frames)} frames but {len(self.values)} labels")
        if np.any(np.diff(self.frames) <= 0):
            raise AnnotationError(f"track {self.annotator_id}: frame indices must be strictly increasing")

    def restrict(self, mask: np.ndarray) -> "AnnotatorTrack":
        return AnnotatorTrack(self.annotator_id, self.frames[mask], self.values[mask], self.video_id)


def tracks_from_frames(frames: Iterable[LabeledFrame], task: str) -> list[AnnotatorTrack]:
    """Group per-annotator frames into tracks, ordered by (video, annotator)."""
    groups: dict[tuple[str, str], list[LabeledFrame]] = defaultdict(list)
    for f in frames:
        label = {"va": f.va, "au": f.au, "expr": f.expr}[task]
        if label is not None:
            groups[(f.video_id, f.annotator_id or "")].append(f)
    tracks = []
    for (video, annotator), fs in sorted(groups.items()):
        fs.sort(key=lambda f: f.frame)
        values = [{"va": f.va, "au": f.au, "expr": f.expr}[task] for f in fs]
        tracks.append(AnnotatorTrack(annotator, [f.frame for f in fs], np.array(values), video))
    return tracks


def _check_aligned(tracks: Sequence[AnnotatorTrack]) -> None:
    ref = tracks[0]
    for t in tracks[1:]:
        if len(t.frames) != len(ref.frames):
            raise AnnotationError(
                f"track {t.annotator_id} has {len(t.frames)} frames, track {ref.annotator_id} has {len(ref.frames)}"
            )
        diff = np.flatnonzero(t.frames != ref.frames)
        if diff.size:
            i = diff[0]
            raise AnnotationError(
                f"first mismatch at position {i}: track {ref.annotator_id} frame {ref.frames[i]}, "
                f"track {t.annotator_id} frame {t.frames[i]}"
            )


def _by_video(tracks: Sequence[AnnotatorTrack]) -> dict[str, list[AnnotatorTrack]]:
    out: dict[str, list[AnnotatorTrack]] = defaultdict(list)
    for t in tracks:
        out[t.video_id].append(t)
    return dict(out)


def aggregate_va(tracks: Sequence[AnnotatorTrack]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame mean over annotators, clamped to [-1, 1].

    Values are sorted across annotators before summing, so the result does
    not depend on annotator order.
    """
    if len(tracks) < 2:
        raise AnnotationError("aggregation needs at least two annotator tracks")
    _check_aligned(tracks)
    stack = np.sort(np.stack([np.asarray(t.values, dtype=np.float64) for t in tracks]), axis=0)
    return tracks[0].frames.copy(), np.clip(stack.sum(axis=0) / len(tracks), -1.0, 1.0)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if den == 0.0:
        return float("nan")
    return float((dx * dy).sum() / den)


def inter_annotator_correlation(tracks: Sequence[AnnotatorTrack]) -> np.ndarray:
    """Mean pairwise Pearson correlation per label dimension.

    Pairs involving a constant track are skipped with a warning.
    """
    if len(tracks) < 2:
        raise AnnotationError("correlation needs at least two annotator tracks")
    _check_aligned(tracks)
    vals = [np.asarray(t.values, dtype=np.float64).reshape(len(t.frames), -1) for t in tracks]
    dims = vals[0].shape[1]
    out = np.empty(dims)
    for d in range(dims):
        rs = []
        for i, j in itertools.combinations(range(len(tracks)), 2):
            r = pearson(vals[i][:, d], vals[j][:, d])
            if np.isnan(r):
                warnings.warn(
                    f"constant track in pair ({tracks[i].annotator_id}, {tracks[j].annotator_id}), dimension {d}: skipped",
                    CorrelationWarning,
                    stacklevel=2,
                )
                continue
            rs.append(r)
        out[d] = np.mean(rs) if rs else np.nan
    return out


def _rows(values) -> np.ndarray:
    v = np.asarray(values)
    return v[:, None] if v.ndim == 1 else v.reshape(v.shape[0], int(np.prod(v.shape[1:])))


@dataclass
class AgreementResult:
    tracks: list[AnnotatorTrack]
    report: dict[str, dict[str, int]]

    def consensus(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Kept frames and their agreed labels per video."""
        out = {}
        for video, ts in _by_video(self.tracks).items():
            out[video] = (ts[0].frames, ts[0].values)
        return out


def agreement_filter(tracks: Sequence[AnnotatorTrack]) -> AgreementResult:
    """Keep frames on which every annotator of the video gave the same label."""
    kept_tracks: list[AnnotatorTrack] = []
    report = {}
    for video, ts in _by_video(tracks).items():
        _check_aligned(ts)
        vals = [_rows(t.values) for t in ts]
        agree = np.ones(len(ts[0].frames), dtype=bool)
        for v in vals[1:]:
            agree &= np.all(v == vals[0], axis=1)
        kept_tracks.extend(t.restrict(agree) for t in ts)
        report[video] = {"kept": int(agree.sum()), "dropped": int((~agree).sum())}
    return AgreementResult(kept_tracks, report)


def video_table(frames: Iterable[LabeledFrame]) -> dict[str, tuple[str, int]]:
    """video id -> (subject id, number of distinct frames)."""
    subjects: dict[str, str] = {}
    indices: dict[str, set[int]] = defaultdict(set)
    for f in frames:
        prev = subjects.setdefault(f.video_id, f.subject_id)
        if prev != f.subject_id:
            raise AnnotationError(f"video {f.video_id} assigned to subjects {prev} and {f.subject_id}")
        indices[f.video_id].add(f.frame)
    return {v: (subjects[v], len(indices[v])) for v in sorted(subjects)}


@dataclass
class SplitAssignment:
    videos: dict[str, str]
    subjects: dict[str, list[str]] = field(default_factory=dict)

    def partition_videos(self) -> dict[str, list[str]]:
        out = {p: [] for p in PARTITIONS}
        for v, p in sorted(self.videos.items()):
            out[p].append(v)
        return out

    def frame_ratios(self, table: Mapping[str, tuple[str, int]]) -> tuple[float, ...]:
        totals = dict.fromkeys(PARTITIONS, 0)
        for v, p in self.videos.items():
            totals[p] += table[v][1]
        n = sum(totals.values())
        return tuple(totals[p] / n for p in PARTITIONS)

    def to_json(self) -> dict:
        return {
            "videos": dict(sorted(self.videos.items())),
            "subjects": {s: sorted(vs) for s, vs in sorted(self.subjects.items())},
        }


def subject_overlaps(assignment: SplitAssignment, table: Mapping[str, tuple[str, int]]) -> dict[str, set[str]]:
    """Subjects whose videos land in more than one partition (empty when valid)."""
    seen: dict[str, set[str]] = defaultdict(set)
    for video, (subject, _) in table.items():
        if video not in assignment.videos:
            raise AnnotationError(f"video {video} has no partition")
        seen[subject].add(assignment.videos[video])
    return {s: ps for s, ps in seen.items() if len(ps) > 1}


def subject_independent_split(
    videos: Mapping[str, tuple[str, int]] | Iterable[LabeledFrame],
    ratios: Sequence[float] = (0.6, 0.1, 0.3),
    seed: int = 0,
    refine: bool = True,
) -> SplitAssignment:
    """Assign whole subjects to train/validation/test.

    Subjects are taken largest first (equal sizes in seeded random order) and
    each goes to the partition furthest below its target frame count.  A
    local search of single moves and pairwise swaps then lowers the squared
    deviation from the targets.  Subjects are never divided.
    """
    if not isinstance(videos, Mapping):
        videos = video_table(videos)
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (len(PARTITIONS),) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"need {len(PARTITIONS)} non-negative ratios summing to 1, got {ratios.tolist()}")
    by_subject: dict[str, list[str]] = defaultdict(list)
    sizes: dict[str, int] = defaultdict(int)
    for video, (subject, n) in sorted(videos.items()):
        by_subject[subject].append(video)
        sizes[subject] += n
    total = sum(sizes.values())
    if total == 0:
        raise ValueError("no frames to split")
    if max(sizes.values()) > ratios.max() * total:
        warnings.warn("a single subject exceeds the largest target share; ratios unreachable", SplitWarning, stacklevel=2)

    rng = np.random.default_rng(seed)
    names = sorted(by_subject)
    order = [names[i] for i in rng.permutation(len(names))]
    order.sort(key=lambda s: -sizes[s])

    target = ratios * total
    load = np.zeros(len(PARTITIONS))
    part: dict[str, int] = {}
    for s in order:
        k = int(np.argmax(target - load))
        part[s] = k
        load[k] += sizes[s]

    if refine:
        _refine(order, sizes, part, load, target)

    assign = {v: PARTITIONS[part[s]] for s in order for v in by_subject[s]}
    return SplitAssignment(assign, {s: list(vs) for s, vs in by_subject.items()})


def _refine(order, sizes, part, load, target, max_passes: int = 50) -> None:
    def cost(l):
        return float(((l - target) ** 2).sum())

    k = len(target)
    for _ in range(max_passes):
        improved = False
        for s in order:
            for dest in range(k):
                src = part[s]
                if dest == src:
                    continue
                trial = load.copy()
                trial[src] -= sizes[s]
                trial[dest] += sizes[s]
                if cost(trial) < cost(load) - 1e-9:
                    load[:] = trial
                    part[s] = dest
                    improved = True
        for a, b in itertools.combinations(order, 2):
            pa, pb = part[a], part[b]
            if pa == pb or sizes[a] == sizes[b]:
                continue
            trial = load.copy()
            delta = sizes[a] - sizes[b]
            trial[pa] -= delta
            trial[pb] += delta
            if cost(trial) < cost(load) - 1e-9:
                load[:] = trial
                part[a], part[b] = pb, pa
                improved = True
        if not improved:
            return


@dataclass
class DatasetStats:
    va_hist: np.ndarray  # rows: valence bins, cols: arousal bins
    va_edges: np.ndarray
    expr_hist: np.ndarray
    au_counts: np.ndarray
    n_va: int
    n_expr: int
    n_au: int
    au_ids: tuple[int, ...] = AU_IDS

    @property
    def au_pct_frames(self) -> np.ndarray:
        return 100.0 * self.au_counts / self.n_au if self.n_au else np.zeros(len(self.au_counts))

    @property
    def au_pct_activations(self) -> np.ndarray:
        total = self.au_counts.sum()
        return 100.0 * self.au_counts / total if total else np.zeros(len(self.au_counts))


def dataset_stats(frames: Sequence[LabeledFrame], bins: int = 20, au_ids: Sequence[int] = AU_IDS) -> DatasetStats:
    if not frames:
        raise ValueError("no frames")
    va = np.array([f.va for f in frames if f.va is not None], dtype=np.float64).reshape(-1, 2)
    hist, edges, _ = np.histogram2d(va[:, 0], va[:, 1], bins=bins, range=[[-1, 1], [-1, 1]])
    expr = np.array([f.expr for f in frames if f.expr is not None], dtype=np.intp)
    aus = np.array([f.au for f in frames if f.au is not None], dtype=np.int64).reshape(-1, len(au_ids))
    return DatasetStats(
        va_hist=hist.astype(np.int64),
        va_edges=edges,
        expr_hist=np.bincount(expr, minlength=N_EXPRESSIONS).astype(np.int64),
        au_counts=aus.sum(axis=0).astype(np.int64),
        n_va=len(va),
        n_expr=len(expr),
        n_au=len(aus),
        au_ids=tuple(au_ids),
    )


def au_table_rows(counts: Sequence[int], total_frames: int, au_ids: Sequence[int] = AU_IDS) -> list[dict[str, str]]:
    """One row per AU: count with thousands separators and both percentage bases."""
    counts = [int(c) for c in counts]
    activations = sum(counts)
    rows = []
    for au, c in zip(au_ids, counts):
        rows.append({
            "au": f"AU {au}",
            "count": f"{c:,}",
            "pct_of_frames": f"{100.0 * c / total_frames:.1f}%" if total_frames else "-",
            "pct_of_activations": f"{100.0 * c / activations:.1f}%" if activations else "-",
        })
    return rows


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def stats_csv(stats: DatasetStats) -> dict[str, str]:
    """CSV documents keyed by file name."""
    edges = stats.va_edges
    va_rows = [["valence_lo", "valence_hi", *[f"{edges[j]:.2f}" for j in range(len(edges) - 1)]]]
    for i in range(stats.va_hist.shape[0]):
        va_rows.append([f"{edges[i]:.2f}", f"{edges[i + 1]:.2f}", *stats.va_hist[i].tolist()])
    expr_rows = [["class", "count"], *[[c, int(n)] for c, n in enumerate(stats.expr_hist)]]
    au = au_table_rows(stats.au_counts, stats.n_au, stats.au_ids)
    au_rows = [list(au[0].keys())] + [list(r.values()) for r in au] if au else [["au"]]
    return {
        "va_histogram.csv": _csv(va_rows),
        "expr_histogram.csv": _csv(expr_rows),
        "au_table.csv": _csv(au_rows),
    }
