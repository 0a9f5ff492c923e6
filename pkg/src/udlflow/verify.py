"""Flow-conditioned robustness verification.

Properties are decided over a joint input box by branch and bound:
interval bounds prune nodes where the postcondition provably holds, a
sampling-plus-coordinate-descent falsifier hunts for concrete violations
inside undecided nodes, and the widest dimension is split otherwise.
Certification requires every leaf pruned safe with a margin above a
fixed soundness slack (a stand-in for directed rounding); falsification
requires a counterexample that replays to a violation under exact
forward evaluation. Anything else is unknown.

Networks are compiled into segment programs before search: affine layers
(including the flow's LU and one-star-convolution bijections, and any
run of consecutive affine maps, which are merged into a single matrix so
interval bounds on affine-only graphs are exact) become dense stacks
driven by the _kernels backend; additive couplings propagate a box
through their conditioner and add the shift interval.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .classifiers import ReluClassifier
from .errors import ContractError
from .flows import FlowModel

CERT_SLACK = 1e-7       # margins must clear this to certify
FALSIFY_MARGIN = 1e-9   # violations must clear this to claim falsified
SPLIT_FLOOR = 1e-9      # narrower boxes are not split further
FALSIFIER_SAMPLES = 64
FALSIFIER_STEPS = 50


# ---------------------------------------------------------------------------
# boxes and latent regions

@dataclass
class IntervalBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ContractError("box bounds must have equal shape")
        if np.any(self.lower > self.upper):
            raise ContractError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def sample(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass
class LatentRegion:
    """Precondition region in latent space (or data space for local tasks).

    Balls are l_1 or l_inf norm balls of the given radius, originating
    from a UDL probability level q (analytic or recalibrated); a box is
    the small-box workaround or a local perturbation box.
    """

    kind: str  # 'l1-ball' | 'linf-ball' | 'box'
    dim: int
    radius: float | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    q: float | None = None
    calibrated: bool = False

    def bounding_box(self) -> IntervalBox:
        if self.kind == "box":
            return IntervalBox(self.lower, self.upper)
        r = self.radius
        return IntervalBox(np.full(self.dim, -r), np.full(self.dim, r))

    def contains(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.kind == "box":
            return self.bounding_box().contains(z)
        if self.kind == "l1-ball":
            return np.abs(z).sum(axis=1) < self.radius
        return np.abs(z).max(axis=1) < self.radius

    def sample(self, n: int, rng) -> np.ndarray:
        if self.kind == "l1-ball":
            mags = rng.dirichlet(np.ones(self.dim), size=n)
            signs = rng.choice([-1.0, 1.0], size=(n, self.dim))
            scale = self.radius * rng.uniform(0, 1, n) ** (1.0 / self.dim)
            return mags * signs * scale[:, None]
        return self.bounding_box().sample(n, rng)


def latent_udl_region(flow: FlowModel, q: float, k=None,
                      calibration=None) -> LatentRegion:
    """Latent region whose image is the learned UDL at level q.

    Only k in {1, inf} is supported: those level sets are linear-
    constraint definable (k=2 is fine for density queries but has no
    linear encoding, so it is refused here).
    """
    k = flow.base.k if k is None else k
    if k == 2:
        raise ContractError(
            "l2 level sets are not linear-constraint definable; "
            "use k in {1, inf} for verification regions")
    if k not in (1, np.inf):
        raise ContractError(f"unsupported norm order {k!r}")
    if calibration is not None:
        radius = calibration.radius(q)
        calibrated = True
    else:
        radius = flow.base.udl_radius(q)
        calibrated = False
    kind = "l1-ball" if k == 1 else "linf-ball"
    return LatentRegion(kind=kind, dim=flow.dim, radius=float(radius),
                        q=q, calibrated=calibrated)


def small_box_region(dim: int, halfwidth: float = 0.05,
                     center: np.ndarray | None = None,
                     q: float | None = None) -> LatentRegion:
    """Axis-aligned box centered in the high-density latent region; the
    practical stand-in when the full UDL is too hard for a solver."""
    center = np.zeros(dim) if center is None else np.asarray(center, float)
    return LatentRegion(kind="box", dim=dim, lower=center - halfwidth,
                        upper=center + halfwidth, q=q)


# ---------------------------------------------------------------------------
# network compilation

class _Stack:
    """Dense affine(+ReLU) chain in kernel-ready form."""

    __slots__ = ("ws", "bs", "relus", "wpos", "wneg")

    def __init__(self, layers):
        self.ws = [np.ascontiguousarray(w, dtype=np.float64) for w, _, _ in layers]
        self.bs = [np.ascontiguousarray(b, dtype=np.float64) for _, b, _ in layers]
        self.relus = [bool(r) for _, _, r in layers]
        self.wpos = [np.ascontiguousarray(np.maximum(w, 0.0)) for w in self.ws]
        self.wneg = [np.ascontiguousarray(np.minimum(w, 0.0)) for w in self.ws]

    def interval(self, lo, hi):
        return _kernels.stack_interval(self.wpos, self.wneg, self.bs,
                                       self.relus, lo, hi)

    def point(self, x):
        return _kernels.stack_point(self.ws, self.bs, self.relus, x)

    def points(self, x):
        # small batches (the falsifier's probes) are dispatch-bound and go
        # through the kernel; large ones are BLAS territory
        if x.shape[0] <= 256:
            return _kernels.stack_points(self.ws, self.bs, self.relus, x)
        h = x
        last = len(self.ws) - 1
        for i, (w, b) in enumerate(zip(self.ws, self.bs)):
            h = h @ w.T + b
            if self.relus[i]:
                np.maximum(h, 0.0, out=h)
        return h


class CompiledNet:
    """Segment program: dense stacks interleaved with additive couplings."""

    def __init__(self, segments, in_dim: int, out_dim: int):
        self.segments = segments
        self.in_dim = in_dim
        self.out_dim = out_dim

    def interval(self, lo: np.ndarray, hi: np.ndarray):
        for seg in self.segments:
            if seg[0] == "stack":
                lo, hi = seg[1].interval(lo, hi)
            else:
                _, mask, stack = seg
                slo, shi = stack.interval(lo * mask, hi * mask)
                inv = 1.0 - mask
                lo = lo + inv * slo
                hi = hi + inv * shi
        return lo, hi

    def point(self, x: np.ndarray) -> np.ndarray:
        for seg in self.segments:
            if seg[0] == "stack":
                x = seg[1].point(x)
            else:
                _, mask, stack = seg
                x = x + (1.0 - mask) * stack.point(x * mask)
        return x

    def points(self, x: np.ndarray) -> np.ndarray:
        for seg in self.segments:
            if seg[0] == "stack":
                x = seg[1].points(x)
            else:
                _, mask, stack = seg
                x = x + (1.0 - mask) * stack.points(x * mask)
        return x


def compile_classifier(clf: ReluClassifier) -> CompiledNet:
    return CompiledNet([("stack", _Stack(clf.lower()))],
                       clf.n_inputs, clf.n_outputs)


def _affine_bias(layer) -> np.ndarray:
    # OneStarConv and DiagonalScaling expose the full-width bias_full;
    # LUAffineLayer carries the bias directly
    if hasattr(layer, "bias"):
        return layer.bias.data
    return np.asarray(layer.bias_full)


def _affine_of(layer):
    """(M, c) of an affine bijection layer, plus its inverse affine."""
    m = layer.matrix()
    c = _affine_bias(layer)
    minv = np.linalg.inv(m)
    return (m, c), (minv, -minv @ c)


def compile_flow(flow: FlowModel) -> CompiledNet:
    """Lower latent-to-data evaluation to a segment program.

    Consecutive affine maps (the A^{-1} ending one block and the A
    opening the next, and the final affine) are merged into a single
    matrix, which keeps interval propagation exact across them.
    """
    segments = []
    pending = None  # (M, c) affine accumulated so far

    def push_affine(m, c):
        nonlocal pending
        if pending is None:
            pending = (m, c)
        else:
            pm, pc = pending
            pending = (m @ pm, m @ pc + c)

    def flush():
        nonlocal pending
        if pending is not None:
            segments.append(("stack", _Stack([(pending[0], pending[1], False)])))
            pending = None

    for block in flow.blocks:
        fwd = inv = None
        if block.affine is not None:
            fwd, inv = _affine_of(block.affine)
            push_affine(*fwd)
        lowered = block.coupling.conditioner.lower()
        w_last, b_last, _ = lowered[-1]
        if np.any(w_last) or np.any(b_last):
            flush()
            segments.append(("coupling", block.coupling.mask.copy(),
                             _Stack(lowered)))
        # an identically-zero shift leaves the affine run unbroken, so
        # identity-initialized couplings do not loosen interval bounds
        if inv is not None:
            push_affine(*inv)
    if flow.final_affine is not None:
        push_affine(flow.final_affine.matrix(), _affine_bias(flow.final_affine))
    flush()
    return CompiledNet(segments, flow.dim, flow.dim)


def compile_network(obj) -> CompiledNet:
    if isinstance(obj, CompiledNet):
        return obj
    if isinstance(obj, ReluClassifier):
        return compile_classifier(obj)
    if isinstance(obj, FlowModel):
        return compile_flow(obj)
    raise ContractError(f"cannot compile {type(obj).__name__}")


def interval_forward(net, box: IntervalBox) -> IntervalBox:
    """Sound elementwise output bounds of a network on an input box."""
    lo, hi = compile_network(net).interval(box.lower.copy(), box.upper.copy())
    return IntervalBox(lo, hi)


def confidence(y: np.ndarray, i: int) -> float:
    """conf(y) = y_i - (sum of the other logits) / (number of logits)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size < 2:
        raise ContractError("confidence needs at least two logits")
    return float(y[i] - (y.sum() - y[i]) / y.size)


# ---------------------------------------------------------------------------
# tasks

@dataclass
class VerificationTask:
    kind: str  # 'local-robustness' | 'global-robustness' | 'confidence-bound'
    classifier: ReluClassifier
    region: LatentRegion
    epsilon: float = 0.0
    flow: FlowModel | None = None
    target_class: int | None = None
    tau: float | None = None
    q: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractError("epsilon must be nonnegative")
        if self.kind not in ("local-robustness", "global-robustness",
                             "confidence-bound"):
            raise ContractError(f"unknown property kind {self.kind!r}")
        if self.kind != "local-robustness":
            if self.flow is None:
                raise ContractError(f"{self.kind} needs a flow model")
            if self.flow.dim != self.classifier.n_inputs:
                raise ContractError("flow output and classifier input disagree")
        if self.kind == "confidence-bound":
            if self.tau is None or self.target_class is None:
                raise ContractError("confidence bound needs target class and tau")


def local_task(classifier: ReluClassifier, x: np.ndarray, epsilon: float,
               target_class: int | None = None) -> VerificationTask:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    region = LatentRegion(kind="box", dim=x.size, lower=x - epsilon,
                          upper=x + epsilon)
    if target_class is None:
        target_class = int(np.argmax(classifier.logits(x)[0]))
    return VerificationTask(kind="local-robustness", classifier=classifier,
                            region=region, epsilon=epsilon,
                            target_class=target_class)


@dataclass
class Verdict:
    status: str  # 'certified' | 'falsified' | 'unknown'
    counterexample: dict | None = None
    nodes: int = 0
    seconds: float = 0.0

    def __bool__(self):
        return self.status == "certified"


# ---------------------------------------------------------------------------
# per-kind evaluators

class _Evaluator:
    """Bound checks and exact violation scoring on the joint input box."""

    def __init__(self, task: VerificationTask):
        self.task = task
        self.clf = compile_network(task.classifier)
        self.flow = None if task.flow is None else compile_flow(task.flow)
        self.n_classes = task.classifier.n_outputs
        region_box = task.region.bounding_box()
        if task.kind == "global-robustness":
            d = self.flow.in_dim
            self.z_dim = d
            lo = np.concatenate([region_box.lower, np.full(d, -task.epsilon)])
            hi = np.concatenate([region_box.upper, np.full(d, task.epsilon)])
        else:
            self.z_dim = region_box.dim
            lo, hi = region_box.lower.copy(), region_box.upper.copy()
        self.root = (lo, hi)
        self.l1_radius = (task.region.radius
                          if task.region.kind == "l1-ball" else None)
        self.eye = np.eye(lo.size)
        if task.target_class is not None:
            self._others = np.flatnonzero(
                np.arange(self.n_classes) != task.target_class)
        if task.kind == "local-robustness":
            self._local_stack = self.clf.segments[0][1]

    # region feasibility of a node (only restrictive for l1 regions)

    def node_feasible(self, lo, hi) -> bool:
        if self.l1_radius is None:
            return True
        zlo, zhi = lo[:self.z_dim], hi[:self.z_dim]
        closest = np.where((zlo <= 0) & (zhi >= 0), 0.0,
                           np.minimum(np.abs(zlo), np.abs(zhi)))
        return float(closest.sum()) < self.l1_radius

    def in_region(self, x: np.ndarray) -> np.ndarray:
        if self.l1_radius is None:
            return np.ones(x.shape[0], dtype=bool)
        return np.abs(x[:, :self.z_dim]).sum(axis=1) < self.l1_radius

    # -- certification on interval bounds --------------------------------

    @staticmethod
    def _provable_argmax(ylo, yhi):
        """Class index provably the strict argmax, or None."""
        s = int(np.argmax(ylo))
        masked = yhi.copy()
        masked[s] = -np.inf
        if ylo[s] - masked.max() > CERT_SLACK:
            return s
        return None

    def node_certified(self, lo, hi) -> bool:
        task = self.task
        if task.kind == "local-robustness":
            ylo, yhi = self.clf.interval(lo.copy(), hi.copy())
            t = task.target_class
            return ylo[t] - yhi[self._others].max() > CERT_SLACK
        if task.kind == "global-robustness":
            zlo, zhi = lo[:self.z_dim].copy(), hi[:self.z_dim].copy()
            dlo, dhi = lo[self.z_dim:], hi[self.z_dim:]
            xlo, xhi = self.flow.interval(zlo, zhi)
            ylo, yhi = self.clf.interval(xlo.copy(), xhi.copy())
            s = self._provable_argmax(ylo, yhi)
            if s is None:
                return False
            plo, phi = self.clf.interval(xlo + dlo, xhi + dhi)
            return self._provable_argmax(plo, phi) == s
        # confidence bound
        zlo, zhi = lo.copy(), hi.copy()
        xlo, xhi = self.flow.interval(zlo, zhi)
        ylo, yhi = self.clf.interval(xlo, xhi)
        i = task.target_class
        others_lo = ylo[self._others]
        if others_lo.size and others_lo.max() - yhi[i] > CERT_SLACK:
            return True  # class i provably not the argmax
        conf_ub = yhi[i] - others_lo.sum() / self.n_classes
        return conf_ub < task.tau - CERT_SLACK

    # -- exact evaluation ---------------------------------------------------

    def violation_margin(self, x: np.ndarray) -> np.ndarray:
        """Per-point margin; a violation is margin <= 0 (ties violate).

        Points outside an l1 region get +inf (they cannot witness
        anything)."""
        x = np.atleast_2d(x)
        task = self.task
        if task.kind == "local-robustness":
            t = task.target_class
            if x.shape[0] <= 256:
                stack = self._local_stack
                return _kernels.stack_margins(stack.ws, stack.bs, stack.relus,
                                              x, t)
            y = self.clf.points(x)
            margin = y[:, t] - y[:, self._others].max(axis=1)
        elif task.kind == "global-robustness":
            xt = self.flow.points(x[:, :self.z_dim])
            y = self.clf.points(xt)
            yp = self.clf.points(xt + x[:, self.z_dim:])
            t = np.argmax(y, axis=1)
            yp_t = yp[np.arange(yp.shape[0]), t]
            masked = yp.copy()
            masked[np.arange(yp.shape[0]), t] = -np.inf
            margin = yp_t - masked.max(axis=1)
        else:
            xt = self.flow.points(x)
            y = self.clf.points(xt)
            i = task.target_class
            cls_margin = y[:, i] - y[:, self._others].max(axis=1)
            conf = y[:, i] - (y.sum(axis=1) - y[:, i]) / self.n_classes
            # violation: argmax is i (ties count) and conf exceeds tau
            margin = np.where(cls_margin >= 0.0, task.tau - conf, np.inf)
        margin = np.where(self.in_region(x), margin, np.inf)
        return margin

    def counterexample(self, x: np.ndarray) -> dict:
        task = self.task
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if task.kind == "local-robustness":
            y = self.clf.points(x[None, :])[0]
            return {"x_prime": x, "logits": y, "pred": int(np.argmax(y)),
                    "target": task.target_class}
        if task.kind == "global-robustness":
            z, delta = x[:self.z_dim], x[self.z_dim:]
            xt = task.flow.forward(z)
            xp = xt + delta
            y = self.clf.points(xt[None, :])[0]
            yp = self.clf.points(xp[None, :])[0]
            return {"z": z, "delta": delta, "x_t": xt, "x_prime": xp,
                    "pred_t": int(np.argmax(y)), "pred_prime": int(np.argmax(yp))}
        xt = task.flow.forward(x)
        y = self.clf.points(xt[None, :])[0]
        return {"z": x, "x_t": xt, "logits": y, "pred": int(np.argmax(y)),
                "conf": confidence(y, task.target_class), "tau": task.tau}


def replay_counterexample(task: VerificationTask, cex: dict) -> bool:
    """Re-check a counterexample through exact forward evaluation,
    independent of the compiled program the search used."""
    clf = task.classifier
    if task.kind == "local-robustness":
        y = clf.logits(cex["x_prime"])[0]
        t = task.target_class
        return bool(np.delete(y, t).max() >= y[t])
    if task.kind == "global-robustness":
        xt = task.flow.forward(cex["z"])
        xp = xt + cex["delta"]
        y = clf.logits(xt)[0]
        yp = clf.logits(xp)[0]
        t = int(np.argmax(y))
        return bool(np.delete(yp, t).max() >= yp[t])
    xt = task.flow.forward(cex["z"])
    y = clf.logits(xt)[0]
    i = task.target_class
    return bool(y[i] >= y.max() and confidence(y, i) > task.tau)


# ---------------------------------------------------------------------------
# falsifier and branch and bound

def _falsify_in_box(ev: _Evaluator, lo, hi, rng):
    """Random sampling plus coordinate descent on the violation margin.

    The descent runs up to FALSIFIER_STEPS probes of +-step along every
    axis, halving the step on stall; it exits early once the step has
    collapsed, since further probes cannot move the incumbent.
    """
    dim = lo.size
    x = rng.uniform(lo, hi, size=(FALSIFIER_SAMPLES, dim))
    margins = ev.violation_margin(x)
    best_i = int(np.argmin(margins))
    if margins[best_i] <= -FALSIFY_MARGIN:
        return x[best_i]
    best = x[best_i].copy()
    best_m = margins[best_i]
    if not np.isfinite(best_m):
        return None
    step = (hi - lo) / 4.0
    floor = np.maximum((hi - lo) * 1e-9, 1e-15)
    for _ in range(FALSIFIER_STEPS):
        probes = step * ev.eye
        cands = np.concatenate([best + probes, best - probes])
        np.clip(cands, lo, hi, out=cands)
        margins = ev.violation_margin(cands)
        j = int(np.argmin(margins))
        if margins[j] <= -FALSIFY_MARGIN:
            return cands[j]
        if margins[j] < best_m:
            best, best_m = cands[j].copy(), margins[j]
        else:
            step *= 0.5
            if np.all(step < floor):
                break
    return None


def verify(task: VerificationTask, budget: int = 20000,
           seed: int = 0) -> Verdict:
    """Branch-and-bound decision of a verification task.

    budget caps the number of explored nodes; exhausting it (or reaching
    unsplittable undecided boxes) yields 'unknown'. 'certified' means
    every leaf was pruned safe with margin above the soundness slack;
    'falsified' always carries a replayed counterexample.
    """
    start = time.perf_counter()
    ev = _Evaluator(task)
    if budget <= 0:
        return Verdict("unknown", nodes=0, seconds=time.perf_counter() - start)
    # one stream, advanced in fixed DFS order: deterministic per seed
    rng = np.random.default_rng(seed)
    stack = [ev.root]
    nodes = 0
    inconclusive = False
    while stack:
        if nodes >= budget:
            return Verdict("unknown", nodes=nodes,
                           seconds=time.perf_counter() - start)
        lo, hi = stack.pop()
        nodes += 1
        if not ev.node_feasible(lo, hi):
            continue
        if ev.node_certified(lo, hi):
            continue
        cex_point = _falsify_in_box(ev, lo, hi, rng)
        if cex_point is not None:
            cex = ev.counterexample(cex_point)
            if replay_counterexample(task, cex):
                return Verdict("falsified", counterexample=cex, nodes=nodes,
                               seconds=time.perf_counter() - start)
        width = hi - lo
        j = int(np.argmax(width))
        if width[j] <= SPLIT_FLOOR:
            inconclusive = True
            continue
        mid = 0.5 * (lo[j] + hi[j])
        upper_lo = lo.copy()
        upper_lo[j] = mid
        lower_hi = hi.copy()
        lower_hi[j] = mid
        stack.append((upper_lo, hi))
        stack.append((lo, lower_hi))
    status = "unknown" if inconclusive else "certified"
    return Verdict(status, nodes=nodes, seconds=time.perf_counter() - start)


def verify_local(classifier: ReluClassifier, x: np.ndarray, epsilon: float,
                 budget: int = 20000, seed: int = 0) -> Verdict:
    """Argmax stability of a single classifier on the box x +- epsilon."""
    return verify(local_task(classifier, x, epsilon), budget=budget, seed=seed)


def fuzz_certified(task: VerificationTask, n: int = 100000,
                   seed: int = 0) -> int:
    """Count violations found by pure random sampling of the input region
    (an independent soundness check for certified verdicts)."""
    ev = _Evaluator(task)
    rng = np.random.default_rng(seed)
    lo, hi = ev.root
    found = 0
    for start in range(0, n, 20000):
        batch = min(20000, n - start)
        x = rng.uniform(lo, hi, size=(batch, lo.size))
        found += int(np.sum(ev.violation_margin(x) <= 0.0))
    return found


# ---------------------------------------------------------------------------
# benchmark harness

@dataclass
class BenchRow:
    mode: str
    epsilon: float
    verdict: str
    seconds: float


def bench_robustness(flow: FlowModel, classifier: ReluClassifier,
                     eps_verify: float, eps_falsify: float,
                     n_instances: int = 0, budget: int = 20000,
                     seed: int = 0, box_halfwidth: float = 0.05,
                     threads: int = 1) -> list[BenchRow]:
    """Global-versus-local runtime comparison rows.

    Two global rows (one per epsilon regime) over the small latent box,
    then per-instance local rows at both epsilons; instance centers are
    images of latent points sampled from the same box, so a certified
    global verdict must imply every local one.
    """
    region = small_box_region(flow.dim, halfwidth=box_halfwidth)
    rows = []
    for eps in (eps_verify, eps_falsify):
        task = VerificationTask(kind="global-robustness", classifier=classifier,
                                region=region, epsilon=eps, flow=flow)
        verdict = verify(task, budget=budget, seed=seed)
        rows.append(BenchRow("global", eps, verdict.status, verdict.seconds))
    if n_instances > 0:
        rng = np.random.default_rng(seed)
        centers = flow.forward(region.sample(n_instances, rng))
        jobs = [(i, eps, centers[i]) for eps in (eps_verify, eps_falsify)
                for i in range(n_instances)]

        def run(job):
            i, eps, center = job
            verdict = verify_local(classifier, center, eps, budget=budget,
                                   seed=seed + i)
            return BenchRow(f"local-{i}", eps, verdict.status, verdict.seconds)

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows.extend(pool.map(run, jobs))
        else:
            rows.extend(run(j) for j in jobs)
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("mode,epsilon,verdict,seconds\n")
        for r in rows:
            fh.write(f"{r.mode},{r.epsilon!r},{r.verdict},{r.seconds!r}\n")


def crossover_index(rows, epsilon: float) -> int | None:
    """Instance count after which cumulative local time exceeds the
    global run at the same epsilon; None when it never does."""
    global_time = None
    locals_ = []
    for r in rows:
        if abs(r.epsilon - epsilon) > 1e-15:
            continue
        if r.mode == "global":
            global_time = r.seconds
        else:
            locals_.append((int(r.mode.split("-")[1]), r.seconds))
    if global_time is None:
        raise ContractError(f"no global row at epsilon {epsilon}")
    locals_.sort()
    cum = 0.0
    for i, (_, sec) in enumerate(locals_, start=1):
        cum += sec
        if cum > global_time:
            return i
    return None
