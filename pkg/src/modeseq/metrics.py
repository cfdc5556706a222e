"""Best-of-K errors, miss rate, average precision, coverage and confidence inversions.

All distances are Euclidean, in meters. A mode "matches" when its endpoint is
within the threshold (2.0 m by default) of the ground-truth endpoint.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

SCHEMA = "modeseq-metrics/1"
DEFAULT_THRESHOLD = 2.0


def _traj(preds) -> np.ndarray:
    return np.asarray(getattr(preds, "trajectories", preds), dtype=np.float64)


def _check(traj: np.ndarray, gt: np.ndarray) -> None:
    if traj.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"length mismatch: predictions {traj.shape} vs ground truth {gt.shape}")


def displacement_errors(preds, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode (ADE, FDE) arrays for predictions [K, T, 2] against gt [T, 2]."""
    traj, gt = _traj(preds), np.asarray(gt, dtype=np.float64)
    _check(traj, gt)
    err = np.linalg.norm(traj - gt, axis=-1)
    return err.mean(axis=-1), err[..., -1]


def min_ade(preds, gt) -> float:
    return float(displacement_errors(preds, gt)[0].min())


def min_fde(preds, gt) -> float:
    return float(displacement_errors(preds, gt)[1].min())


def endpoint_matches(preds, gt, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return displacement_errors(preds, gt)[1] <= threshold


def miss(preds, gt, threshold: float = DEFAULT_THRESHOLD) -> bool:
    if threshold <= 0:
        raise ValueError("miss threshold must be positive")
    return not bool(endpoint_matches(preds, gt, threshold).any())


def miss_rate(pairs: Iterable[tuple], threshold: float = DEFAULT_THRESHOLD) -> float:
    flags = [miss(p, g, threshold) for p, g in pairs]
    if not flags:
        raise ValueError("miss_rate of an empty dataset")
    return float(np.mean(flags))


@dataclass(frozen=True)
class RankedEntry:
    """Scored modes of one scene (or one target of a scene) for the AP sweep."""

    key: tuple  # scene id, then target id; sorts ties
    scores: np.ndarray  # [K]
    matches: np.ndarray  # [K] bool
    kind: str = "vehicle"


def pooled_detections(entries: Sequence[RankedEntry]) -> list[tuple[int, bool]]:
    """(entry index, match) pairs in sweep order: score descending, then key, then mode index."""
    rows = []
    for i, e in enumerate(entries):
        for k, (s, m) in enumerate(zip(e.scores, e.matches)):
            rows.append((-float(s), e.key, k, i, bool(m)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return [(r[3], r[4]) for r in rows]


def ap_from_flags(flags: Sequence[str], n_positives: int) -> float:
    """AP of a sweep already labelled 'tp' / 'fp' / 'ignore', with envelope integration.

    Computed in exact rationals and rounded once, so the value does not depend
    on summation order.
    """
    if n_positives <= 0:
        raise ValueError("AP needs at least one scene")
    tp = fp = 0
    precision, is_tp = [], []
    for flag in flags:
        if flag == "ignore":
            continue
        if flag == "tp":
            tp += 1
        else:
            fp += 1
        precision.append(Fraction(tp, tp + fp))
        is_tp.append(flag == "tp")
    # recall only rises at true positives, by 1/n each
    area, best = Fraction(0), Fraction(0)
    for p, hit in zip(reversed(precision), reversed(is_tp)):
        best = max(best, p)
        if hit:
            area += best
    return float(area / n_positives)


def average_precision(entries: Sequence[RankedEntry], soft: bool = False) -> float:
    """AP over pooled predictions; one ground truth per entry.

    The first matching prediction of an entry is a true positive. Later
    matches of the same entry are false positives, or skipped when ``soft``.
    """
    if not entries:
        raise ValueError("average_precision of an empty dataset")
    seen = set()
    flags = []
    for i, m in pooled_detections(entries):
        if not m:
            flags.append("fp")
        elif i not in seen:
            seen.add(i)
            flags.append("tp")
        else:
            flags.append("ignore" if soft else "fp")
    return ap_from_flags(flags, len(entries))


def mean_average_precision(entries: Sequence[RankedEntry], soft: bool = False) -> tuple[float, dict]:
    """Mean of per-kind AP over the agent kinds present, plus the per-kind values."""
    if not entries:
        raise ValueError("mean_average_precision of an empty dataset")
    kinds = sorted({e.kind for e in entries})
    per = {k: average_precision([e for e in entries if e.kind == k], soft) for k in kinds}
    return float(np.mean(list(per.values()))), per


def mode_coverage(preds, oracle_branches, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of oracle branches with some predicted endpoint within ``threshold``."""
    if oracle_branches is None:
        raise ValueError("mode_coverage needs oracle branches")
    ends = _traj(preds)[:, -1]
    branch_ends = np.asarray(oracle_branches, dtype=np.float64)[:, -1]
    d = np.linalg.norm(branch_ends[:, None] - ends[None], axis=-1)
    return float((d <= threshold).any(axis=1).mean())


def scene_inversion(preds, confidences, gt, delta: float = DEFAULT_THRESHOLD) -> Optional[bool]:
    """Whether an unmatched mode outscores the closest matched mode; None without a match."""
    fde = displacement_errors(preds, gt)[1]
    matched = fde <= delta
    if not matched.any():
        return None
    conf = np.asarray(confidences, dtype=np.float64)
    best = int(np.argmin(np.where(matched, fde, np.inf)))
    return bool((conf[~matched] > conf[best]).any())


def inversion_rate(triples: Iterable[tuple], delta: float = DEFAULT_THRESHOLD) -> float:
    """Share of scenes with a match in which an unmatched mode has higher confidence than the
    best-matched one. ``triples`` yields (trajectories, confidences, gt); 0 if no scene matches."""
    flags = [scene_inversion(p, c, g, delta) for p, c, g in triples]
    flags = [f for f in flags if f is not None]
    return float(np.mean(flags)) if flags else 0.0


# joint


def joint_errors(trajectories, gts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per joint mode, agent-mean ADE and FDE, plus per-agent FDE [K, A].

    ``trajectories`` is [K, A, T, 2] and ``gts`` is [A, T, 2].
    """
    traj = np.asarray(trajectories, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if traj.shape[1:] != gts.shape:
        raise ValueError(f"agent mismatch: joint predictions {traj.shape} vs ground truth {gts.shape}")
    err = np.linalg.norm(traj - gts[None], axis=-1)  # [K, A, T]
    return err.mean(axis=-1).mean(axis=-1), err[..., -1].mean(axis=-1), err[..., -1]


def joint_min_ade(trajectories, gts) -> float:
    return float(joint_errors(trajectories, gts)[0].min())


def joint_min_fde(trajectories, gts) -> float:
    return float(joint_errors(trajectories, gts)[1].min())


def joint_mode_matches(trajectories, gts, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """A joint mode matches when every agent's endpoint is within ``threshold``."""
    return (joint_errors(trajectories, gts)[2] <= threshold).all(axis=1)


def joint_miss(trajectories, gts, threshold: float = DEFAULT_THRESHOLD, rule: str = "any") -> bool:
    """Scene miss: every joint mode misses. A joint mode misses when any agent (``rule='any'``)
    or all agents (``rule='all'``) are beyond ``threshold``."""
    agent_miss = joint_errors(trajectories, gts)[2] > threshold
    if rule == "any":
        mode_miss = agent_miss.any(axis=1)
    elif rule == "all":
        mode_miss = agent_miss.all(axis=1)
    else:
        raise ValueError(f"unknown joint miss rule {rule!r}")
    return bool(mode_miss.all())


def nearest_branches(trajectories, oracle: np.ndarray) -> np.ndarray:
    """Index of the oracle branch whose endpoint is closest to each trajectory's endpoint."""
    ends = np.asarray(trajectories, dtype=np.float64)[..., -1, :]
    branch_ends = np.asarray(oracle, dtype=np.float64)[:, -1]
    return np.argmin(np.linalg.norm(ends[..., None, :] - branch_ends, axis=-1), axis=-1)


# reports

MARGINAL_FIELDS = ("min_ade", "min_fde", "miss_rate", "mAP", "soft_mAP", "coverage", "inversion_rate")
JOINT_FIELDS = ("joint_min_ade", "joint_min_fde", "joint_miss_rate", "joint_mAP", "joint_soft_mAP",
                "joint_coverage", "forbidden_top_rate")


@dataclass
class MetricReport:
    n_scenes: int
    min_ade: Optional[float] = None
    min_fde: Optional[float] = None
    miss_rate: Optional[float] = None
    mAP: Optional[float] = None
    soft_mAP: Optional[float] = None
    coverage: Optional[float] = None
    inversion_rate: Optional[float] = None
    joint_min_ade: Optional[float] = None
    joint_min_fde: Optional[float] = None
    joint_miss_rate: Optional[float] = None
    joint_mAP: Optional[float] = None
    joint_soft_mAP: Optional[float] = None
    joint_coverage: Optional[float] = None
    forbidden_top_rate: Optional[float] = None
    per_kind: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = SCHEMA
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def flat(self) -> dict:
        """Single-level mapping with stable column names (per-kind values prefixed)."""
        row = {"schema": SCHEMA, "n_scenes": self.n_scenes}
        for name in MARGINAL_FIELDS + JOINT_FIELDS:
            row[name] = getattr(self, name)
        for kind in sorted(self.per_kind):
            for name, val in sorted(self.per_kind[kind].items()):
                row[f"{kind}.{name}"] = val
        for name, val in sorted(self.meta.items()):
            row[f"meta.{name}"] = val
        return row

    def to_csv(self) -> str:
        row = self.flat()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = {k: v for k, v in d.items() if k != "schema"}
        return cls(**d)


def _marginal_stats(records, threshold: float) -> dict:
    ade = [min_ade(r["trajectories"], r["gt"]) for r in records]
    fde = [min_fde(r["trajectories"], r["gt"]) for r in records]
    misses = [miss(r["trajectories"], r["gt"], threshold) for r in records]
    entries = [RankedEntry(r["key"], r["confidences"], endpoint_matches(r["trajectories"], r["gt"], threshold),
                           r["kind"]) for r in records]
    out = {"n": len(records), "min_ade": float(np.mean(ade)), "min_fde": float(np.mean(fde)),
           "miss_rate": float(np.mean(misses)), "AP": average_precision(entries),
           "soft_AP": average_precision(entries, soft=True)}
    cov = [mode_coverage(r["trajectories"], r["oracle"], threshold) for r in records if r["oracle"] is not None]
    out["coverage"] = float(np.mean(cov)) if cov else None
    out["inversion_rate"] = inversion_rate(((r["trajectories"], r["confidences"], r["gt"]) for r in records),
                                           threshold)
    return out


def evaluate_marginal(predictions: Sequence, scenes: Sequence, threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    """Report for marginal PredictionSets, matched to scenes by (scene id, target id)."""
    by_id = {s.scene_id: s for s in scenes}
    records = []
    for p in predictions:
        s = by_id[p.scene_id]
        oracle = None if s.oracle_branches is None else s.oracle_branches.get(p.target_id)
        records.append({"key": (p.scene_id, p.target_id), "trajectories": p.trajectories,
                        "confidences": p.confidences, "gt": s.ground_truth[p.target_id],
                        "kind": p.kind, "oracle": oracle})
    if not records:
        raise ValueError("evaluate_marginal: empty dataset")
    total = _marginal_stats(records, threshold)
    per_kind = {}
    for kind in sorted({r["kind"] for r in records}):
        per_kind[kind] = _marginal_stats([r for r in records if r["kind"] == kind], threshold)
    return MetricReport(
        n_scenes=len(records), min_ade=total["min_ade"], min_fde=total["min_fde"],
        miss_rate=total["miss_rate"], mAP=float(np.mean([v["AP"] for v in per_kind.values()])),
        soft_mAP=float(np.mean([v["soft_AP"] for v in per_kind.values()])),
        coverage=total["coverage"], inversion_rate=total["inversion_rate"], per_kind=per_kind)


def evaluate_joint(predictions: Sequence, scenes: Sequence, threshold: float = DEFAULT_THRESHOLD,
                   miss_rule: str = "any") -> MetricReport:
    """Report for JointPredictionSets: scene-level metrics plus each agent's marginal metrics."""
    by_id = {s.scene_id: s for s in scenes}
    ade, fde, misses, entries, coverage, forbidden = [], [], [], [], [], []
    marginals = []
    for p in predictions:
        s = by_id[p.scene_id]
        missing = [t for t in p.target_ids if t not in s.ground_truth]
        if missing:
            raise ValueError(f"scene {p.scene_id!r}: no ground truth for agents {missing}")
        gts = np.stack([s.ground_truth[t] for t in p.target_ids])
        ade.append(joint_min_ade(p.trajectories, gts))
        fde.append(joint_min_fde(p.trajectories, gts))
        misses.append(joint_miss(p.trajectories, gts, threshold, miss_rule))
        entries.append(RankedEntry((p.scene_id,), p.scene_scores,
                                   joint_mode_matches(p.trajectories, gts, threshold)))
        marginals += [p.marginal(t) for t in p.target_ids]
        if s.oracle_branches is not None and all(t in s.oracle_branches for t in p.target_ids):
            oracle = [s.oracle_branches[t] for t in p.target_ids]
            coverage.append(_joint_coverage(p.trajectories, oracle, s.forbidden_pairs, threshold))
            if s.forbidden_pairs:
                top = int(np.argmax(p.scene_scores))
                pair = tuple(int(nearest_branches(p.trajectories[top, a], oracle[a]))
                             for a in range(len(p.target_ids)))
                forbidden.append(pair in {tuple(f) for f in s.forbidden_pairs})
    if not entries:
        raise ValueError("evaluate_joint: empty dataset")
    report = evaluate_marginal(marginals, scenes, threshold)
    report.n_scenes = len(entries)
    report.joint_min_ade = float(np.mean(ade))
    report.joint_min_fde = float(np.mean(fde))
    report.joint_miss_rate = float(np.mean(misses))
    report.joint_mAP = average_precision(entries)
    report.joint_soft_mAP = average_precision(entries, soft=True)
    report.joint_coverage = float(np.mean(coverage)) if coverage else None
    report.forbidden_top_rate = float(np.mean(forbidden)) if forbidden else None
    report.meta["joint_miss_rule"] = miss_rule
    return report


def _joint_coverage(trajectories, oracle: list, forbidden, threshold: float) -> float:
    """Share of feasible oracle branch combinations reproduced by some joint mode."""
    traj = np.asarray(trajectories)
    forbidden = {tuple(f) for f in forbidden}
    combos = [c for c in np.ndindex(*[len(o) for o in oracle]) if c not in forbidden]
    hits = 0
    for combo in combos:
        ends = np.stack([oracle[a][b][-1] for a, b in enumerate(combo)])  # [A, 2]
        d = np.linalg.norm(traj[:, :, -1] - ends[None], axis=-1)  # [K, A]
        hits += bool((d <= threshold).all(axis=1).any())
    return hits / len(combos)
