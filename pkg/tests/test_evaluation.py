"""Matching and average-precision checks against hand-worked and loop oracles."""

import numpy as np
import pytest

from posegrid import (
    EvalConfig,
    FinalPrediction,
    MatchLabel,
    Pose,
    Rotation,
    SceneTruth,
    SymmetrySpec,
    average_precision,
    evaluate_dataset,
    make_model,
    match,
    pose_distance_matrix,
)
from posegrid.evaluation import PRCurve

MODEL = make_model(SymmetrySpec.none())
RADIUS = 0.1 * MODEL.diameter  # 0.024 m


def _pred(x, y=0.0, z=1.2, confidence=0.8, rotation=None):
    pose = Pose(rotation or Rotation.identity(), np.array([x, y, z]))
    return FinalPrediction(pose=pose, confidence=confidence, support=1)


def _gt(x, y=0.0, z=1.2, visibility=1.0, rotation=None):
    return (Pose(rotation or Rotation.identity(), np.array([x, y, z])), visibility)


def _match_oracle(preds, ground_truth, model, cfg):
    """Same protocol, written as plain loops over the distance matrix."""
    radius = cfg.radius_frac * model.diameter
    vis = [v for _, v in ground_truth]
    if preds and ground_truth:
        dist = pose_distance_matrix(
            [p.pose for p in preds], [p for p, _ in ground_truth], model
        )
    else:
        dist = np.zeros((len(preds), len(ground_truth)))
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    claimed = [False] * len(ground_truth)
    labels = [None] * len(preds)
    pred_gt = [-1] * len(preds)
    for i in order:
        best = None
        for j in range(len(ground_truth)):
            if claimed[j] or vis[j] < cfg.vis_cutoff or dist[i, j] > radius:
                continue
            if best is None or dist[i, j] < dist[i, best]:
                best = j
        if best is not None:
            claimed[best] = True
            labels[i] = MatchLabel.TRUE_POSITIVE
            pred_gt[i] = best
            continue
        near_ignored = any(
            vis[j] < cfg.vis_cutoff and dist[i, j] <= radius
            for j in range(len(ground_truth))
        )
        labels[i] = MatchLabel.DISCARDED if near_ignored else MatchLabel.FALSE_POSITIVE
    return tuple(labels), tuple(pred_gt)


def test_perfect_predictions_all_match():
    gts = [_gt(0.0), _gt(0.1), _gt(-0.1)]
    preds = [_pred(0.0, confidence=0.9), _pred(0.1, confidence=0.8), _pred(-0.1, confidence=0.7)]
    result = match(preds, gts, MODEL)
    assert all(l is MatchLabel.TRUE_POSITIVE for l in result.labels)
    assert result.pred_gt == (0, 1, 2)
    assert result.gt_matched == (True, True, True)
    assert result.missed_count == 0


def test_no_predictions_means_all_missed():
    result = match([], [_gt(0.0), _gt(0.1)], MODEL)
    assert result.labels == ()
    assert result.eligible_count == 2
    assert result.missed_count == 2


def test_prediction_near_ignored_object_is_discarded():
    result = match([_pred(0.0)], [_gt(0.0, visibility=0.3)], MODEL)
    assert result.labels == (MatchLabel.DISCARDED,)
    assert result.pred_gt == (-1,)
    assert result.eligible_count == 0


def test_prediction_far_from_everything_is_false_positive():
    result = match([_pred(0.3)], [_gt(0.0)], MODEL)
    assert result.labels == (MatchLabel.FALSE_POSITIVE,)
    assert result.missed_count == 1


def test_prediction_claims_nearest_of_two_in_radius():
    gts = [_gt(0.015), _gt(-0.010)]
    result = match([_pred(0.0)], gts, MODEL)
    assert result.labels == (MatchLabel.TRUE_POSITIVE,)
    assert result.pred_gt == (1,)


def test_distance_tie_goes_to_lower_gt_index():
    gts = [_gt(0.01), _gt(-0.01)]
    result = match([_pred(0.0)], gts, MODEL)
    assert result.pred_gt == (0,)


def test_greedy_processes_higher_confidence_first():
    # the confident but sloppier prediction claims the object, the precise
    # late one finds it taken and nothing else nearby
    preds = [_pred(0.001, confidence=0.5), _pred(0.020, confidence=0.9)]
    result = match(preds, [_gt(0.0)], MODEL)
    assert result.labels == (MatchLabel.FALSE_POSITIVE, MatchLabel.TRUE_POSITIVE)
    assert result.pred_gt == (-1, 0)
    assert result.order == (1, 0)


def test_confidence_tie_processes_lower_pred_index_first():
    preds = [_pred(0.002, confidence=0.8), _pred(0.001, confidence=0.8)]
    result = match(preds, [_gt(0.0)], MODEL)
    assert result.labels == (MatchLabel.TRUE_POSITIVE, MatchLabel.FALSE_POSITIVE)


def test_claimed_object_is_not_reused():
    preds = [_pred(0.0, confidence=0.9), _pred(0.0, confidence=0.8)]
    result = match(preds, [_gt(0.0)], MODEL)
    assert result.tp_count == 1
    assert result.fp_count == 1


def test_match_agrees_with_loop_oracle_on_random_instances():
    rng = np.random.default_rng(29)
    cfg = EvalConfig()
    for _ in range(100):
        n_gt = int(rng.integers(0, 9))
        gts = [
            _gt(
                *rng.uniform(-0.1, 0.1, size=2),
                z=1.2 + rng.uniform(-0.1, 0.1),
                visibility=float(rng.uniform(0.0, 1.0)),
                rotation=Rotation.from_quat(rng.normal(size=4)),
            )
            for _ in range(n_gt)
        ]
        preds = []
        for _ in range(int(rng.integers(0, 16))):
            if gts and rng.uniform() < 0.6:
                base, _ = gts[int(rng.integers(0, len(gts)))]
                offset = rng.uniform(-2.0 * RADIUS, 2.0 * RADIUS, size=3)
                pose = Pose(base.rotation, base.translation + offset)
            else:
                pose = Pose(
                    Rotation.from_quat(rng.normal(size=4)),
                    np.array([0.0, 0.0, 1.2]) + rng.uniform(-0.1, 0.1, size=3),
                )
            preds.append(
                FinalPrediction(pose=pose, confidence=float(rng.uniform(0, 1)), support=1)
            )
        result = match(preds, gts, MODEL, cfg)
        labels, pred_gt = _match_oracle(preds, gts, MODEL, cfg)
        assert result.labels == labels
        assert result.pred_gt == pred_gt


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(vis_cutoff=0.0)
    with pytest.raises(ValueError):
        EvalConfig(vis_cutoff=1.2)
    with pytest.raises(ValueError):
        EvalConfig(radius_frac=-0.1)


def test_average_precision_hand_worked():
    T, F = True, False
    curve = average_precision([T, F, T, F], 2)
    assert curve.ap == pytest.approx(5.0 / 6.0, rel=1e-12)
    assert np.allclose(curve.recalls, [0.5, 0.5, 1.0, 1.0])
    assert np.allclose(curve.precisions, [1.0, 0.5, 2.0 / 3.0, 0.5])
    assert average_precision([F, T], 1).ap == pytest.approx(0.5, rel=1e-12)


def test_average_precision_perfect_and_worthless():
    assert average_precision([True] * 5, 5).ap == 1.0
    assert average_precision([False] * 4, 3).ap == 0.0
    assert average_precision([], 2).ap == 0.0


def test_average_precision_zero_ground_truth_edges():
    assert average_precision([], 0).ap == 1.0
    assert average_precision([False, False], 0).ap == 0.0
    with pytest.raises(ValueError):
        average_precision([True], 0)
    with pytest.raises(ValueError):
        average_precision([True], -1)


def test_average_precision_drops_discarded_labels():
    with_disc = [
        MatchLabel.TRUE_POSITIVE,
        MatchLabel.DISCARDED,
        MatchLabel.FALSE_POSITIVE,
        MatchLabel.DISCARDED,
        MatchLabel.TRUE_POSITIVE,
    ]
    plain = [True, False, True]
    assert average_precision(with_disc, 2).ap == average_precision(plain, 2).ap


def test_average_precision_rejects_unknown_labels():
    with pytest.raises(TypeError):
        average_precision(["tp"], 1)


def test_trailing_false_positives_leave_ap_unchanged():
    rng = np.random.default_rng(31)
    for _ in range(50):
        labels = list(rng.uniform(size=rng.integers(1, 20)) < 0.5)
        gt = int(sum(labels) + rng.integers(0, 4))
        if gt == 0:
            continue
        base = average_precision(labels, gt).ap
        extended = average_precision(labels + [False] * 3, gt).ap
        assert extended == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_more_confident_ordering_of_same_labels_cannot_hurt():
    # moving a TP earlier in the ranking never lowers AP
    rng = np.random.default_rng(37)
    for _ in range(50):
        labels = list(rng.uniform(size=10) < 0.4)
        gt = max(1, int(sum(labels)))
        base = average_precision(labels, gt).ap
        improved = average_precision(sorted(labels, reverse=True), gt).ap
        assert improved >= base - 1e-12


def test_pr_curve_validation():
    with pytest.raises(ValueError):
        PRCurve(np.array([0.5, 0.2]), np.array([1.0, 1.0]), 0.5)
    with pytest.raises(ValueError):
        PRCurve(np.array([0.2]), np.array([1.0, 0.5]), 0.5)
    with pytest.raises(ValueError):
        PRCurve(np.array([0.2]), np.array([1.0]), 1.5)


def _scene(seed, n_objects=6, model=MODEL):
    rng = np.random.default_rng(seed)
    gts = []
    for _ in range(n_objects):
        gts.append(
            _gt(
                *rng.uniform(-0.1, 0.1, size=2),
                z=1.2 + rng.uniform(-0.1, 0.1),
                visibility=float(rng.uniform(0.3, 1.0)),
            )
        )
    preds = []
    for pose, vis in gts:
        if rng.uniform() < 0.8:
            preds.append(
                FinalPrediction(
                    pose=Pose(pose.rotation, pose.translation + rng.normal(0, 0.002, 3)),
                    confidence=float(rng.uniform(0.5, 1.0)),
                    support=1,
                )
            )
    for _ in range(2):
        preds.append(_pred(*rng.uniform(0.2, 0.3, size=2), confidence=float(rng.uniform(0, 0.5))))
    return preds, SceneTruth(model=model, ground_truth=gts)


def test_evaluate_dataset_single_scene_matches_direct_ap():
    preds, truth = _scene(5)
    report = evaluate_dataset({"s": preds}, {"s": truth})
    result = match(preds, truth.ground_truth, MODEL)
    direct = average_precision(result.ordered_labels(), result.eligible_count)
    assert report.pooled.ap == pytest.approx(direct.ap, rel=1e-12)
    assert report.macro_ap == pytest.approx(direct.ap, rel=1e-12)
    assert len(report.scenes) == 1
    assert report.scenes[0].scene_id == "s"
    assert set(report.per_model) == {MODEL.name}


def test_evaluate_dataset_duplicating_a_scene_preserves_pooled_ap():
    preds, truth = _scene(11)
    single = evaluate_dataset({"a": preds}, {"a": truth})
    double = evaluate_dataset({"a": preds, "b": preds}, {"a": truth, "b": truth})
    assert double.pooled.ap == pytest.approx(single.pooled.ap, rel=1e-12)
    assert double.macro_ap == pytest.approx(single.macro_ap, rel=1e-12)


def test_evaluate_dataset_confidence_rescaling_is_invisible():
    preds, truth = _scene(13)
    base = evaluate_dataset({"s": preds}, {"s": truth})
    cubed = [
        FinalPrediction(pose=p.pose, confidence=p.confidence**3, support=p.support)
        for p in preds
    ]
    warped = evaluate_dataset({"s": cubed}, {"s": truth})
    assert warped.pooled.ap == base.pooled.ap


def test_evaluate_dataset_groups_by_model_name():
    preds_a, truth_a = _scene(17, model=make_model(SymmetrySpec.none(), name="widget"))
    preds_b, truth_b = _scene(19, model=make_model(SymmetrySpec.cyclic(4), name="gadget"))
    report = evaluate_dataset(
        {"a": preds_a, "b": preds_b}, {"a": truth_a, "b": truth_b}
    )
    assert set(report.per_model) == {"widget", "gadget"}
    assert report.per_model["widget"].ap == pytest.approx(report.scenes[0].curve.ap)
    assert report.per_model["gadget"].ap == pytest.approx(report.scenes[1].curve.ap)


def test_evaluate_dataset_rejects_mismatched_scene_ids():
    preds, truth = _scene(23)
    with pytest.raises(ValueError, match="line up"):
        evaluate_dataset({"a": preds}, {"b": truth})


def test_evaluate_dataset_empty_is_vacuously_perfect():
    report = evaluate_dataset({}, {})
    assert report.scenes == ()
    assert report.pooled.ap == 1.0
    assert report.macro_ap == 1.0
