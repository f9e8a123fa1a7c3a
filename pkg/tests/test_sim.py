import numpy as np
import pytest

from mpmfuse.errors import DataError
from mpmfuse.geometry import FrameSize, centroid, mask_area
from mpmfuse.metrics import evaluate_sequence
from mpmfuse.mpm import MpmConfig
from mpmfuse.sim import (
    BranchProfile,
    ObjectScript,
    Scenario,
    constant_velocity_scenario,
    crossing_scenario,
    render_gt,
    render_sequence,
    run_tracking,
    synth_logits,
)
from oracles import normal_flip_probability


def one_object(waypoints, occlusions=(), size=(5, 5), shape="rectangle", frame=FrameSize(40, 40), frames=20):
    obj = ObjectScript(1, size, waypoints, shape=shape, occlusions=occlusions)
    return Scenario(frame, frames, (obj,), seed=1)


class TestScripts:
    def test_waypoint_center_exact(self):
        sc = one_object(((0, (10.5 / 40, 20.5 / 40)), (10, (30.5 / 40, 20.5 / 40))))
        masks, _ = render_gt(sc, 10)
        assert centroid(masks[1]) == pytest.approx((30.5 / 40, 20.5 / 40), abs=1e-15)
        assert mask_area(masks[1]) == 25

    def test_linear_midpoint(self):
        sc = one_object(((0, (0.2, 0.5)), (10, (0.4, 0.5))))
        assert sc.objects[0].center_at(5) == pytest.approx((0.3, 0.5), abs=1e-15)

    def test_occluded_frame_is_empty(self):
        sc = one_object(((0, (0.5, 0.5)),), occlusions=((3, 6),))
        assert mask_area(render_gt(sc, 3)[0][1]) == 0
        assert mask_area(render_gt(sc, 6)[0][1]) == 25

    def test_higher_id_on_top(self):
        a = ObjectScript(1, (9, 9), ((0, (0.5, 0.5)),))
        b = ObjectScript(2, (3, 3), ((0, (0.5, 0.5)),))
        sc = Scenario(FrameSize(21, 21), 1, (b, a))
        masks, labels = render_gt(sc, 0)
        assert mask_area(masks[2]) == 9 and mask_area(masks[1]) == 72
        assert labels[10, 10] == 2

    def test_ellipse(self):
        sc = one_object(((0, (20.5 / 40, 20.5 / 40)),), shape="ellipse", size=(9, 5))
        m = render_gt(sc, 0)[0][1]
        rows, cols = np.nonzero(m)
        assert cols.max() - cols.min() + 1 == 9 and rows.max() - rows.min() + 1 == 5

    def test_validation(self):
        with pytest.raises(DataError):
            ObjectScript(1, (3, 3), ((5, (0.1, 0.1)), (2, (0.2, 0.2))))
        with pytest.raises(DataError):
            ObjectScript(1, (3, 3), ((0, (0.1, 0.1)),), occlusions=((0, 5), (3, 8)))
        with pytest.raises(DataError):
            Scenario(FrameSize(8, 8), 0, ())
        with pytest.raises(DataError):
            Scenario(FrameSize(8, 8), 3, (ObjectScript(2, (3, 3), ((0, (0.5, 0.5)),)),))
        with pytest.raises(DataError):
            render_gt(Scenario(FrameSize(8, 8), 3, ()), 3)


def blob_labels(h, w, n, seed):
    rng = np.random.default_rng(seed)
    labels = np.zeros((h, w), np.uint8)
    for k in range(1, n + 1):
        y, x = rng.integers(0, h - 40), rng.integers(0, w - 40)
        labels[y:y + 40, x:x + 40] = k
    return labels


class TestSynthLogits:
    def test_noiseless_argmax_is_gt(self):
        labels = blob_labels(64, 64, 3, 0)
        z = synth_logits(labels, 3, BranchProfile("C"), 0)
        np.testing.assert_array_equal(z.argmax(0), labels)

    def test_full_dropout_hides_objects(self):
        labels = blob_labels(64, 64, 2, 1)
        z = synth_logits(labels, 2, BranchProfile("C", noise_std=0.5, dropout_prob=1.0), 0)
        assert not np.any(z.argmax(0) > 0)

    def test_distractor_marks_other_objects(self):
        labels = np.zeros((10, 10), np.uint8)
        labels[1:3, 1:3] = 1
        labels[6:8, 6:8] = 2
        z = synth_logits(labels, 2, BranchProfile("S", distractor_gain=0.5), 0)
        assert z[1, 7, 7] == -4 + 0.5 * 8
        assert z[2, 1, 1] == -4 + 0.5 * 8
        assert z[1, 0, 0] == -4

    def test_deterministic(self):
        labels = blob_labels(64, 64, 1, 2)
        p = BranchProfile("C", noise_std=1.0, dropout_prob=0.3)
        a = synth_logits(labels, 1, p, 123)
        assert a.tobytes() == synth_logits(labels, 1, p, 123).tobytes()
        assert a.tobytes() != synth_logits(labels, 1, p, 124).tobytes()

    @pytest.mark.parametrize("n,std", [(1, 1.0), (1, 4.0), (2, 4.0), (3, 6.0)])
    def test_error_rate_matches_normal_tail(self, n, std):
        labels = blob_labels(256, 256, n, 3)
        z = synth_logits(labels, n, BranchProfile("C", noise_std=std), 7)
        rate = np.mean(z.argmax(0) != labels)
        assert abs(rate - normal_flip_probability(n, std)) < 0.01


class TestTracking:
    def test_noiseless_occlusion_free_is_perfect(self):
        sc = crossing_scenario(noise_std=0.0, distractor_gain=0.0)
        r = run_tracking(sc, MpmConfig(), mpm=False)
        assert (r.report.j, r.report.f) == (1.0, 1.0)

    def test_small_beta_does_not_change_masks(self):
        sc = crossing_scenario(noise_std=0.0, distractor_gain=0.0)
        off = run_tracking(sc, MpmConfig(beta=0.1), mpm=False)
        on = run_tracking(sc, MpmConfig(beta=0.1), mpm=True)
        np.testing.assert_array_equal(on.labels, off.labels)

    def test_occlusion_counter(self):
        sc = constant_velocity_scenario()
        r = run_tracking(sc, MpmConfig(), mpm=True)
        counts = [fr.states[0].frames_since_observation for fr in r.trace]
        assert counts[12:17] == [1, 2, 3, 4, 5]
        assert counts[17] == 0 and counts[11] == 0

    def test_report_matches_recomputation(self):
        sc = crossing_scenario()
        r = run_tracking(sc, MpmConfig(), mpm=True)
        again = evaluate_sequence(r.labels, render_sequence(sc), 2)
        assert again == r.report

    def test_deterministic(self):
        sc = crossing_scenario()
        a = run_tracking(sc, MpmConfig(), mpm=True)
        b = run_tracking(sc, MpmConfig(), mpm=True)
        assert a.labels.tobytes() == b.labels.tobytes()
        assert [fr.states for fr in a.trace] == [fr.states for fr in b.trace]

    def test_mpm_helps_crossing(self):
        sc = crossing_scenario()
        on = run_tracking(sc, MpmConfig(), mpm=True).report
        off = run_tracking(sc, MpmConfig(), mpm=False).report
        for obj in (1, 2):
            assert on.per_object[obj][0] > off.per_object[obj][0]

    def test_adaptation_runs_and_changes_params(self):
        sc = crossing_scenario(frames=10)
        r = run_tracking(sc, MpmConfig(), mpm=True, adapt_steps=5)
        assert r.config.beta != MpmConfig().beta
