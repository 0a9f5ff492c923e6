"""Verifier: interval soundness, branch-and-bound verdicts, bench harness."""

import numpy as np
import pytest

from udlflow import _kernels
from udlflow._kernels import _fallback
from udlflow.classifiers import ReluClassifier
from udlflow.errors import ContractError
from udlflow.flows import build_flow
from udlflow.verify import (BenchRow, IntervalBox, VerificationTask,
                            bench_robustness, compile_flow, compile_network,
                            confidence, crossover_index, fuzz_certified,
                            interval_forward, latent_udl_region, local_task,
                            replay_counterexample, small_box_region, verify,
                            verify_local, write_bench_csv)


def toy_flow(seed=0, scale=0.5, **kw):
    flow = build_flow((2,), n_blocks=3, base_kind="gamma", seed=seed, **kw)
    flow.perturb(np.random.default_rng(seed + 50), scale=scale)
    return flow


class TestIntervalForward:
    def test_identity_network(self):
        flow = build_flow((3,), n_blocks=2, seed=0)  # identity at init
        box = IntervalBox([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0])
        out = interval_forward(flow, box)
        np.testing.assert_allclose(out.lower, box.lower, atol=1e-12)
        np.testing.assert_allclose(out.upper, box.upper, atol=1e-12)

    def test_single_affine(self):
        clf = ReluClassifier.from_arrays([np.array([[2.0]])], [np.array([1.0])])
        out = interval_forward(clf, IntervalBox([0.0], [1.0]))
        np.testing.assert_allclose(out.lower, [1.0])
        np.testing.assert_allclose(out.upper, [3.0])

    def test_soundness_fuzz(self):
        flow = toy_flow(1)
        net = compile_network(flow)
        lo = np.array([-0.8, -0.3])
        hi = np.array([0.4, 0.9])
        blo, bhi = net.interval(lo.copy(), hi.copy())
        rng = np.random.default_rng(0)
        pts = rng.uniform(lo, hi, size=(100000, 2))
        out = net.points(pts)
        assert np.all(out >= blo - 1e-12)
        assert np.all(out <= bhi + 1e-12)

    def test_exact_on_affine_only_graph(self):
        # couplings zeroed out leave a purely affine flow; bounds must
        # match the true image bounds (corner enumeration oracle)
        flow = build_flow((3,), n_blocks=3, seed=2)
        for block in flow.blocks:
            block.affine.perturb(np.random.default_rng(3), 0.5)
        flow.final_affine.perturb(np.random.default_rng(4), 0.5)
        lo = np.array([-1.0, 0.2, -0.5])
        hi = np.array([0.3, 1.0, 0.1])
        blo, bhi = compile_flow(flow).interval(lo.copy(), hi.copy())
        corners = np.stack(np.meshgrid(*zip(lo, hi))).reshape(3, -1).T
        images = flow.forward(corners)
        np.testing.assert_allclose(blo, images.min(axis=0), atol=1e-9)
        np.testing.assert_allclose(bhi, images.max(axis=0), atol=1e-9)


class TestKernelBackends:
    def test_backends_agree(self):
        rng = np.random.default_rng(0)
        ws = [rng.normal(size=(8, 4)), rng.normal(size=(5, 8))]
        bs = [rng.normal(size=8), rng.normal(size=5)]
        relus = [True, False]
        wpos = [np.maximum(w, 0) for w in ws]
        wneg = [np.minimum(w, 0) for w in ws]
        lo, hi = rng.normal(size=4), None
        lo = np.sort(rng.normal(size=(2, 4)), axis=0)
        a = _kernels.stack_interval(wpos, wneg, bs, relus, lo[0], lo[1])
        b = _fallback.stack_interval(wpos, wneg, bs, relus, lo[0], lo[1])
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], atol=1e-12)
        x = rng.normal(size=4)
        np.testing.assert_allclose(_kernels.stack_point(ws, bs, relus, x),
                                   _fallback.stack_point(ws, bs, relus, x),
                                   atol=1e-12)
        xb = rng.normal(size=(17, 4))
        np.testing.assert_allclose(_kernels.stack_points(ws, bs, relus, xb),
                                   _fallback.stack_points(ws, bs, relus, xb),
                                   atol=1e-12)
        np.testing.assert_allclose(
            _kernels.stack_margins(ws, bs, relus, xb, 2),
            _fallback.stack_margins(ws, bs, relus, xb, 2), atol=1e-12)


class TestConfidence:
    def test_one_hot(self):
        assert confidence(np.eye(10)[0], 0) == pytest.approx(1.0)

    def test_all_equal(self):
        v = 3.7
        assert confidence(np.full(10, v), 2) == pytest.approx(v / 10.0)

    def test_shift_changes_by_c_over_m(self):
        y = np.random.default_rng(0).normal(size=10)
        c = 2.5
        assert confidence(y + c, 4) - confidence(y, 4) == pytest.approx(
            c / 10.0, abs=1e-12)

    def test_needs_two_logits(self):
        with pytest.raises(ContractError):
            confidence(np.array([1.0]), 0)


class TestRegions:
    def test_linf_region_is_box(self):
        flow = build_flow((2,), n_blocks=2, k=np.inf, base_kind="gamma",
                          seed=0)
        region = latent_udl_region(flow, 0.5)
        assert region.kind == "linf-ball"
        box = region.bounding_box()
        r = flow.base.udl_radius(0.5)
        np.testing.assert_allclose(box.lower, [-r, -r])
        np.testing.assert_allclose(box.upper, [r, r])

    def test_l2_refused(self):
        flow = build_flow((2,), n_blocks=2, k=2, base_kind="half-normal",
                          seed=0)
        with pytest.raises(ContractError):
            latent_udl_region(flow, 0.5)

    def test_q_zero_degenerate(self):
        flow = build_flow((2,), n_blocks=2, base_kind="gamma", seed=0)
        region = latent_udl_region(flow, 0.0)
        assert region.radius == 0.0
        box = region.bounding_box()
        np.testing.assert_array_equal(box.lower, box.upper)

    def test_l1_region_points_pass_udl_contains(self):
        # rejection-sampling oracle: box samples filtered by the l1 sum
        flow = toy_flow(3)
        q = 0.6
        region = latent_udl_region(flow, q)
        rng = np.random.default_rng(1)
        box = region.bounding_box()
        z = box.sample(4000, rng)
        z = z[np.abs(z).sum(axis=1) < region.radius]
        assert z.shape[0] > 100
        x = flow.forward(z)
        assert flow.udl_contains(x, q).all()

    def test_region_sampler_stays_inside(self):
        region = latent_udl_region(toy_flow(4), 0.7)
        z = region.sample(5000, np.random.default_rng(0))
        assert region.contains(z).all()

    def test_calibrated_radius_used(self):
        from udlflow.valcal import Calibration
        flow = toy_flow(5)
        calib = Calibration(q_grid=[0.5], radii=[1.23])
        region = latent_udl_region(flow, 0.5, calibration=calib)
        assert region.radius == pytest.approx(1.23)
        assert region.calibrated


class TestVerifyLocal:
    def test_eps_zero_certified_iff_argmax_unique(self):
        clf = ReluClassifier.from_arrays(
            [np.array([[1.0, 0.0], [0.0, 1.0]])], [np.array([0.5, 0.0])])
        assert verify_local(clf, np.array([0.2, 0.1]), 0.0).status == "certified"
        tie = ReluClassifier.from_arrays(
            [np.array([[1.0, 1.0], [0.0, 0.0]])], [np.array([0.0, 0.0])])
        verdict = verify_local(tie, np.array([0.3, 0.0]), 0.0, budget=50)
        assert verdict.status != "certified"

    def test_constant_classifier_certified_for_every_eps(self):
        clf = ReluClassifier.from_arrays(
            [np.array([[0.0, 0.0], [0.0, 0.0]])], [np.array([1.0, 0.0])])
        for eps in (0.1, 10.0):
            verdict = verify_local(clf, np.zeros(2), eps)
            assert verdict.status == "certified"
            assert verdict.nodes == 1  # margin dominates at the root

    def test_planted_boundary_is_falsified_and_replays(self):
        # logits (x0, -x0): decision boundary x0 = 0 crosses the region
        clf = ReluClassifier.from_arrays(
            [np.array([[1.0, -1.0], [0.0, 0.0]])], [np.array([0.0, 0.0])])
        center = np.array([0.05, 0.0])
        verdict = verify_local(clf, center, 0.2, seed=1)
        assert verdict.status == "falsified"
        task = local_task(clf, center, 0.2)
        assert replay_counterexample(task, verdict.counterexample)
        # grid-enumeration oracle confirms a violation exists
        g = np.linspace(-0.15, 0.25, 401)
        grid = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        assert (clf.predict(grid) != clf.predict(center[None])[0]).any()

    def test_agreement_with_grid_enumeration(self):
        rng = np.random.default_rng(7)
        eps = 0.15
        for i in range(6):
            clf = ReluClassifier([2, 8, 8, 2], seed=100 + i)
            center = rng.normal(size=2) * 0.5
            verdict = verify_local(clf, center, eps, budget=40000, seed=i)
            t = clf.predict(center[None])[0]
            g = np.linspace(-eps, eps, 101)
            grid = center + np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
            grid_robust = bool((clf.predict(grid) == t).all())
            assert verdict.status in ("certified", "falsified")
            assert (verdict.status == "certified") == grid_robust

    def test_budget_zero_unknown(self):
        clf = ReluClassifier([2, 4, 2], seed=0)
        assert verify_local(clf, np.zeros(2), 0.1, budget=0).status == "unknown"

    def test_certified_survives_fuzz(self):
        clf = ReluClassifier([2, 6, 2], seed=11)
        center = np.array([1.5, 1.5])
        verdict = verify_local(clf, center, 0.05, seed=0)
        if verdict.status == "certified":
            task = local_task(clf, center, 0.05)
            assert fuzz_certified(task, n=100000, seed=3) == 0

    def test_deterministic(self):
        clf = ReluClassifier([2, 8, 2], seed=12)
        a = verify_local(clf, np.array([0.1, -0.2]), 0.1, seed=5)
        b = verify_local(clf, np.array([0.1, -0.2]), 0.1, seed=5)
        assert (a.status, a.nodes) == (b.status, b.nodes)


class TestVerifyGlobal:
    def test_two_regimes(self, trained_moons_flow, moons_classifier):
        region = small_box_region(2, 0.05)
        task_v = VerificationTask(kind="global-robustness",
                                  classifier=moons_classifier, region=region,
                                  epsilon=0.001, flow=trained_moons_flow)
        verdict_v = verify(task_v, budget=20000, seed=0)
        assert verdict_v.status == "certified"
        # two-moons geometry: the box image sits ~0.3 from the decision
        # boundary, so falsification needs a perturbation that reaches it
        task_f = VerificationTask(kind="global-robustness",
                                  classifier=moons_classifier, region=region,
                                  epsilon=0.5, flow=trained_moons_flow)
        verdict_f = verify(task_f, budget=20000, seed=0)
        assert verdict_f.status == "falsified"
        cex = verdict_f.counterexample
        assert cex["pred_t"] != cex["pred_prime"]
        assert replay_counterexample(task_f, cex)
        assert np.abs(cex["delta"]).max() <= 0.5 + 1e-12

    def test_l1_region_engine(self, trained_moons_flow, moons_classifier):
        region = latent_udl_region(trained_moons_flow, 0.05)
        task = VerificationTask(kind="global-robustness",
                                classifier=moons_classifier, region=region,
                                epsilon=0.0005, flow=trained_moons_flow)
        verdict = verify(task, budget=40000, seed=0)
        assert verdict.status in ("certified", "falsified", "unknown")
        if verdict.status == "falsified":
            z = verdict.counterexample["z"]
            assert np.abs(z).sum() < region.radius

    def test_certified_implies_local_on_sampled_centers(
            self, trained_moons_flow, moons_classifier):
        region = small_box_region(2, 0.05)
        eps = 0.001
        task = VerificationTask(kind="global-robustness",
                                classifier=moons_classifier, region=region,
                                epsilon=eps, flow=trained_moons_flow)
        assert verify(task, budget=20000, seed=0).status == "certified"
        centers = trained_moons_flow.forward(
            region.sample(10, np.random.default_rng(4)))
        for c in centers:
            assert verify_local(moons_classifier, c, eps).status == "certified"


class TestConfidenceBound:
    def test_certified_and_falsified(self, trained_moons_flow,
                                     moons_classifier):
        region = small_box_region(2, 0.05)
        base = VerificationTask(kind="confidence-bound",
                                classifier=moons_classifier, region=region,
                                flow=trained_moons_flow, target_class=0,
                                tau=1e9)
        assert verify(base, budget=5000, seed=0).status == "certified"
        tight = VerificationTask(kind="confidence-bound",
                                 classifier=moons_classifier, region=region,
                                 flow=trained_moons_flow, target_class=0,
                                 tau=-1e9)
        verdict = verify(tight, budget=5000, seed=0)
        if verdict.status == "falsified":
            assert replay_counterexample(tight, verdict.counterexample)
        else:
            # class 0 may be unreachable from this box; then the property
            # holds vacuously
            assert verdict.status == "certified"


class TestBench:
    def test_zero_instances_two_global_rows(self, trained_moons_flow,
                                            moons_classifier):
        rows = bench_robustness(trained_moons_flow, moons_classifier,
                                0.001, 0.1, n_instances=0, budget=5000)
        assert len(rows) == 2
        assert all(r.mode == "global" for r in rows)

    def test_rows_and_crossover(self, trained_moons_flow, moons_classifier,
                                tmp_path):
        rows = bench_robustness(trained_moons_flow, moons_classifier,
                                0.001, 0.1, n_instances=4, budget=5000, seed=1)
        assert len(rows) == 2 + 2 * 4
        path = tmp_path / "bench.csv"
        write_bench_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "mode,epsilon,verdict,seconds"
        assert len(lines) == 11
        for eps in (0.001, 0.1):
            cross = crossover_index(rows, eps)
            locals_total = sum(r.seconds for r in rows
                               if r.mode != "global" and r.epsilon == eps)
            global_time = next(r.seconds for r in rows
                               if r.mode == "global" and r.epsilon == eps)
            if locals_total > global_time:
                assert cross is not None
            else:
                assert cross is None

    def test_crossover_arithmetic(self):
        rows = [BenchRow("global", 0.1, "certified", 1.0),
                BenchRow("local-0", 0.1, "certified", 0.3),
                BenchRow("local-1", 0.1, "certified", 0.4),
                BenchRow("local-2", 0.1, "certified", 0.5)]
        assert crossover_index(rows, 0.1) == 3
        rows[0] = BenchRow("global", 0.1, "certified", 100.0)
        assert crossover_index(rows, 0.1) is None

    def test_threads_do_not_change_rows(self, trained_moons_flow,
                                        moons_classifier):
        a = bench_robustness(trained_moons_flow, moons_classifier, 0.001, 0.1,
                             n_instances=3, budget=3000, seed=2, threads=1)
        b = bench_robustness(trained_moons_flow, moons_classifier, 0.001, 0.1,
                             n_instances=3, budget=3000, seed=2, threads=4)
        assert [(r.mode, r.epsilon, r.verdict) for r in a] == \
            [(r.mode, r.epsilon, r.verdict) for r in b]
