import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metrics_reference as ref
from modeseq import metrics as M
from modeseq.scene import JointPredictionSet, PredictionSet


def _line(end_x, t=4):
    traj = np.zeros((t, 2))
    traj[:, 0] = np.linspace(end_x / t, end_x, t)
    return traj


def test_min_errors_examples():
    gt = _line(10.0)
    assert M.min_ade(gt[None], gt) == 0.0 and M.min_fde(gt[None], gt) == 0.0
    modes = np.stack([gt, gt + [3.0, 4.0]])
    assert M.min_ade(modes, gt) == 0.0 and M.min_fde(modes, gt) == 0.0
    assert M.displacement_errors(modes, gt)[1][1] == 5.0
    with pytest.raises(ValueError, match="length mismatch"):
        M.min_ade(modes, gt[:3])


def test_miss_examples():
    gt = _line(10.0)
    assert not M.miss(np.stack([gt + [9, 9], gt]), gt)
    assert M.miss(np.stack([gt + [2.1, 0], gt + [0, -3]]), gt)
    with pytest.raises(ValueError):
        M.miss(gt[None], gt, 0.0)


def test_miss_rate_manual_count():
    gt = _line(10.0)
    offsets = [0.0, 1.0, 2.0, 2.5, 3.0, 0.5, 5.0, 1.9, 2.01, 0.0]
    pairs = [((gt + [o, 0])[None], gt) for o in offsets]
    assert M.miss_rate(pairs) == 4 / 10
    with pytest.raises(ValueError):
        M.miss_rate([])


def _entry(i, scores, matches, kind="vehicle"):
    return M.RankedEntry((f"s{i}",), np.asarray(scores, float), np.asarray(matches, bool), kind)


def test_ap_hand_swept_case():
    # pooled order: s0 0.9 TP, s0 0.8 FP, s1 0.7 FP, s1 0.6 TP
    entries = [_entry(0, [0.9, 0.8], [True, False]), _entry(1, [0.7, 0.6], [False, True])]
    assert [m for _, m in M.pooled_detections(entries)] == [True, False, False, True]
    # recall 0.5 at precision 1, recall 1 at precision 0.5 -> 0.5 * 1 + 0.5 * 0.5
    assert M.average_precision(entries) == 0.75
    assert ref.ap([(e.key, e.scores, e.matches) for e in entries]) == 0.75


def test_ap_top_modes_match_gives_one():
    entries = [_entry(i, [0.9, 0.1, 0.2], [True, False, False]) for i in range(5)]
    assert M.average_precision(entries) == 1.0


def test_ap_duplicate_match_soft_versus_hard():
    entries = [_entry(0, [0.9, 0.8], [True, True]), _entry(1, [0.7, 0.1], [True, False])]
    assert M.average_precision(entries, soft=True) == 1.0
    assert M.average_precision(entries) == pytest.approx(0.5 + 0.5 * 2 / 3)


def test_ap_ties_break_by_scene_then_mode():
    entries = [_entry(1, [0.5], [True]), _entry(0, [0.5, 0.5], [False, True])]
    order = M.pooled_detections(entries)
    assert order == [(1, False), (1, True), (0, True)]


def test_ap_empty_raises():
    with pytest.raises(ValueError, match="empty"):
        M.average_precision([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(0, 4), min_size=1, max_size=4),
                          st.lists(st.booleans(), min_size=4, max_size=4)), min_size=1, max_size=5))
def test_soft_map_never_below_map(scenes):
    entries = [_entry(i, np.array(s) / 4, m[:len(s)]) for i, (s, m) in enumerate(scenes)]
    assert M.average_precision(entries, soft=True) >= M.average_precision(entries)


def test_ap_invariant_to_entry_order():
    rng = np.random.default_rng(0)
    for _ in range(50):
        entries = [_entry(i, rng.integers(0, 4, 3) / 3, rng.random(3) < 0.4) for i in range(6)]
        shuffled = [entries[j] for j in rng.permutation(6)]
        assert M.average_precision(entries) == M.average_precision(shuffled)


def test_mean_average_precision_over_kinds():
    entries = [_entry(0, [0.9], [True], "vehicle"), _entry(1, [0.9], [False], "cyclist")]
    value, per = M.mean_average_precision(entries)
    assert per == {"cyclist": 0.0, "vehicle": 1.0} and value == 0.5


def test_coverage_examples():
    branches = np.stack([_line(10.0), _line(10.0) + [0, 8], _line(10.0) + [0, -8]])
    two = np.stack([branches[0], branches[1] + 0.5])
    assert M.mode_coverage(two, branches) == pytest.approx(2 / 3)
    collapsed = np.stack([branches[0], branches[0] + 0.1])
    assert M.mode_coverage(collapsed, branches) == pytest.approx(1 / 3)
    with pytest.raises(ValueError, match="oracle"):
        M.mode_coverage(two, None)


def test_inversion_examples():
    gt = _line(10.0)
    modes = np.stack([gt, gt + [0, 6.0]])
    assert M.scene_inversion(modes, [0.9, 0.2], gt) is False
    assert M.scene_inversion(modes, [0.2, 0.9], gt) is True
    assert M.scene_inversion(modes + [0, 5], [0.2, 0.9], gt) is None


def test_inversion_rate_ten_crafted_scenes():
    gt = _line(10.0)
    good, far = gt, gt + [0, 6.0]
    close = gt + [1.5, 0]
    scenes = [
        ([good, far], [0.9, 0.1], False),
        ([good, far], [0.1, 0.9], True),
        ([far, good], [0.5, 0.5], False),  # tie is not an inversion
        ([close, good, far], [0.7, 0.6, 0.2], False),  # matched modes outrank each other freely
        ([close, good, far], [0.1, 0.3, 0.4], True),
        ([far, far + 1], [0.9, 0.8], None),
        ([good], [0.0], False),
        ([far, close], [0.6, 0.5], True),
        ([far, close, good], [0.05, 0.9, 0.1], False),
        ([far, close, good], [0.3, 0.9, 0.2], True),
    ]
    triples = [(np.stack(m), c, gt) for m, c, _ in scenes]
    for (m, c, want), triple in zip(scenes, triples):
        assert M.scene_inversion(*triple) is want
    assert M.inversion_rate(triples) == pytest.approx(4 / 9)
    assert M.inversion_rate([triples[5]]) == 0.0


def test_joint_single_agent_equals_marginal():
    rng = np.random.default_rng(2)
    for _ in range(100):
        modes, gt = rng.normal(size=(4, 5, 2)) * 2, rng.normal(size=(5, 2))
        joint = modes[:, None]
        assert M.joint_min_ade(joint, gt[None]) == M.min_ade(modes, gt)
        assert M.joint_min_fde(joint, gt[None]) == M.min_fde(modes, gt)
        assert M.joint_miss(joint, gt[None]) == M.miss(modes, gt)


def test_joint_exact_mode_and_agent_mismatch():
    gts = np.stack([_line(10.0), _line(6.0)])
    joint = np.stack([gts, gts + 4.0])
    assert M.joint_min_ade(joint, gts) == 0.0 and M.joint_min_fde(joint, gts) == 0.0
    assert not M.joint_miss(joint, gts)
    with pytest.raises(ValueError, match="agent mismatch"):
        M.joint_min_ade(joint[:, :1], gts)


def test_joint_miss_rules():
    gts = np.stack([_line(10.0), _line(6.0)])
    half = np.stack([gts[0], gts[1] + [0, 5.0]])[None]  # agent 2 misses
    assert M.joint_miss(half, gts, rule="any") and not M.joint_miss(half, gts, rule="all")
    with pytest.raises(ValueError):
        M.joint_miss(half, gts, rule="most")


def test_random_instances_match_brute_force():
    _, failures = ref.run_random_cases(np.random.default_rng(12), 200)
    assert not failures, failures[:3]


# reports


class _Scene:
    def __init__(self, sid, gt, oracle=None, forbidden=()):
        self.scene_id, self.ground_truth = sid, gt
        self.oracle_branches, self.forbidden_pairs = oracle, forbidden


def test_evaluate_marginal_report_fields():
    gt = _line(10.0)
    oracle = np.stack([gt, gt + [0, 8]])
    preds = [PredictionSet(np.stack([gt, gt + [0, 8]]), np.ones((2, 4, 2)), np.array([0.8, 0.3]),
                           scene_id=f"s{i}", target_id=0) for i in range(3)]
    scenes = [_Scene(f"s{i}", {0: gt}, {0: oracle}) for i in range(3)]
    report = M.evaluate_marginal(preds, scenes)
    flat = report.flat()
    assert flat["min_ade"] == 0.0 and flat["miss_rate"] == 0.0
    assert flat["mAP"] == 1.0 and flat["coverage"] == 1.0 and flat["inversion_rate"] == 0.0
    assert all(0 <= flat[k] <= 1 for k in ("miss_rate", "mAP", "soft_mAP", "coverage", "inversion_rate"))
    again = M.MetricReport.from_dict(json.loads(report.to_json()))
    assert again.flat() == flat
    header = report.to_csv().splitlines()[0].split(",")
    assert header[:3] == ["schema", "n_scenes", "min_ade"]


def test_evaluate_joint_forbidden_top_and_coverage():
    a0 = np.stack([_line(10.0), _line(10.0) + [0, 8]])  # branch 0 yield, 1 proceed
    a1 = np.stack([_line(8.0), _line(8.0) + [0, -8]])
    gts = {3: a0[1], 5: a1[0]}
    scene = _Scene("x", gts, {3: a0, 5: a1}, forbidden=((1, 1),))
    # top mode is the forbidden (proceed, proceed) pair; second mode is the ground truth
    traj = np.stack([np.stack([a0[1], a1[1]]), np.stack([a0[1], a1[0]]), np.stack([a0[0], a1[1]])])
    preds = JointPredictionSet((3, 5), traj, np.ones_like(traj), np.array([0.9, 0.5, 0.2]), scene_id="x")
    report = M.evaluate_joint([preds], [scene])
    assert report.forbidden_top_rate == 1.0
    assert report.joint_coverage == pytest.approx(2 / 3)
    assert report.joint_min_fde == 0.0 and report.joint_miss_rate == 0.0
    assert report.joint_mAP == 0.5  # one FP ahead of the only TP
