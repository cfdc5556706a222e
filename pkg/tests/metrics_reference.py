"""Brute-force metric definitions, written as plain loops, and a random-instance comparison."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def _dist(p, g):
    dx, dy = float(p[0]) - float(g[0]), float(p[1]) - float(g[1])
    return math.sqrt(dx * dx + dy * dy)


def ade(traj, gt):
    total = 0.0
    for p, g in zip(traj, gt):
        total += _dist(p, g)
    return total / len(gt)


def fde(traj, gt):
    return _dist(traj[-1], gt[-1])


def min_ade(modes, gt):
    return min(ade(m, gt) for m in modes)


def min_fde(modes, gt):
    return min(fde(m, gt) for m in modes)


def is_miss(modes, gt, threshold):
    return all(fde(m, gt) > threshold for m in modes)


def ap(scenes, soft=False):
    """Hand sweep of the precision/recall curve.

    ``scenes`` is a list of (key, scores, matches). Detections are ordered by
    score (high first), then key, then mode index.
    """
    dets = []
    for i, (key, scores, matches) in enumerate(scenes):
        for k in range(len(scores)):
            dets.append((float(scores[k]), key, k, i, bool(matches[k])))
    dets = sorted(dets, key=lambda d: (-d[0], d[1], d[2]))
    found = set()
    points = []  # (recall, precision) after each counted detection
    tp = fp = 0
    for _, _, _, i, m in dets:
        if m and i not in found:
            found.add(i)
            tp += 1
        elif m and soft:
            continue
        else:
            fp += 1
        points.append((Fraction(tp, len(scenes)), Fraction(tp, tp + fp)))
    area = Fraction(0)
    prev_recall = Fraction(0)
    for j, (r, _) in enumerate(points):
        interp = max(p for _, p in points[j:])
        area += (r - prev_recall) * interp
        prev_recall = r
    return float(area)


def coverage(modes, branches, threshold):
    covered = 0
    for b in branches:
        if any(_dist(m[-1], b[-1]) <= threshold for m in modes):
            covered += 1
    return covered / len(branches)


def inversion(modes, conf, gt, threshold):
    """None when nothing matches; else whether an unmatched mode outranks the closest match."""
    d = [fde(m, gt) for m in modes]
    matched = [k for k in range(len(modes)) if d[k] <= threshold]
    if not matched:
        return None
    best = matched[0]
    for k in matched:
        if d[k] < d[best]:
            best = k
    return any(conf[k] > conf[best] for k in range(len(modes)) if k not in matched)


def joint_min_ade(modes, gts):
    return min(sum(ade(mode[a], gts[a]) for a in range(len(gts))) / len(gts) for mode in modes)


def joint_min_fde(modes, gts):
    return min(sum(fde(mode[a], gts[a]) for a in range(len(gts))) / len(gts) for mode in modes)


def joint_matches(modes, gts, threshold):
    return [all(fde(mode[a], gts[a]) <= threshold for a in range(len(gts))) for mode in modes]


def joint_is_miss(modes, gts, threshold, rule="any"):
    for mode in modes:
        misses = [fde(mode[a], gts[a]) > threshold for a in range(len(gts))]
        mode_miss = any(misses) if rule == "any" else all(misses)
        if not mode_miss:
            return False
    return True


# random comparison


def _grid(rng, shape, step=0.5, span=6):
    return rng.integers(-span, span + 1, size=shape) * step


def _instance(rng, k, t):
    """Modes and gt on a half-meter grid so many endpoints sit exactly at the threshold."""
    gt = _grid(rng, (t, 2))
    modes = gt + _grid(rng, (k, t, 2), 0.5, 4)
    if rng.random() < 0.5:
        modes = modes + rng.normal(scale=0.3, size=modes.shape)
    return modes, gt


def run_random_cases(rng, n):
    """Compare the package metrics with the loops above on ``n`` random small datasets."""
    from modeseq import metrics as M

    failures = []

    def check(name, got, want, case):
        if got != want:
            failures.append(f"case {case} {name}: got {got!r}, want {want!r}")

    for case in range(n):
        threshold = float(rng.choice([1.0, 2.0]))
        k, t = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        n_scenes = int(rng.integers(1, 6))
        scenes = []
        for s in range(n_scenes):
            modes, gt = _instance(rng, k, t)
            scores = rng.integers(0, 5, size=k) / 4.0  # coarse grid forces ties
            scenes.append((modes, gt, scores))
            check("min_ade", M.min_ade(modes, gt), min_ade(modes, gt), case)
            check("min_fde", M.min_fde(modes, gt), min_fde(modes, gt), case)
            check("miss", M.miss(modes, gt, threshold), is_miss(modes, gt, threshold), case)
            check("inversion", M.scene_inversion(modes, scores, gt, threshold),
                  inversion(modes, scores, gt, threshold), case)
            branches = _grid(rng, (3, t, 2), 1.0)
            check("coverage", M.mode_coverage(modes, branches, threshold),
                  coverage(modes, branches, threshold), case)
        want_mr = sum(is_miss(m, g, threshold) for m, g, _ in scenes) / n_scenes
        check("miss_rate", M.miss_rate([(m, g) for m, g, _ in scenes], threshold), want_mr, case)
        keyed = [((f"s{i}",), sc, [fde(m, g) <= threshold for m in modes])
                 for i, (modes, g, sc) in enumerate(scenes)]
        entries = [M.RankedEntry(key, np.asarray(sc), np.asarray(mt)) for key, sc, mt in keyed]
        for soft in (False, True):
            check(f"ap soft={soft}", M.average_precision(entries, soft), ap(keyed, soft), case)

        agents = int(rng.integers(1, 4))
        pairs = [_instance(rng, k, t) for _ in range(agents)]
        joint = np.stack([p[0] for p in pairs], axis=1)  # [K, A, T, 2]
        gts = np.stack([p[1] for p in pairs])
        check("joint_min_ade", M.joint_min_ade(joint, gts), joint_min_ade(joint, gts), case)
        check("joint_min_fde", M.joint_min_fde(joint, gts), joint_min_fde(joint, gts), case)
        check("joint_matches", M.joint_mode_matches(joint, gts, threshold).tolist(),
              joint_matches(joint, gts, threshold), case)
        for rule in ("any", "all"):
            check(f"joint_miss {rule}", M.joint_miss(joint, gts, threshold, rule),
                  joint_is_miss(joint, gts, threshold, rule), case)
    return n, failures
