"""Solver-ready property files: export and round-trip parsing.

A property file is line-oriented s-expressions over declared scalar
variables (z_i, delta_i, x_i, aux t_i, outputs y_i / yp_i): linear
<=/>= assertions for the precondition and one disjunctive assertion for
the negated postcondition, following the satisfiability convention that
a witness of the exported system is a counterexample to the property.
Metadata forms ((kind ...), (epsilon ...), (target ...), ...) make the
file self-describing; the parser cross-checks them against the actual
constraints and refuses inconsistent files. docs/property_format.md
holds the grammar.

The companion model file (io module format) carries the network graph:
a bare classifier for local robustness, or a composite node list wiring
the flow into the (duplicated) classifier copies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import io as model_io
from .errors import FormatError
from .verify import LatentRegion, VerificationTask

PROP_VERSION = 1


# ---------------------------------------------------------------------------
# s-expression plumbing

def _tokenize(text: str):
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        elif ch == '"':
            j = text.index('"', i + 1)
            out.append(text[i:j + 1])
            i = j + 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in '();"':
                j += 1
            out.append(text[i:j])
            i = j
    return out


def _read_sexprs(tokens):
    def read(pos):
        if tokens[pos] != "(":
            return tokens[pos], pos + 1
        pos += 1
        items = []
        while pos < len(tokens) and tokens[pos] != ")":
            item, pos = read(pos)
            items.append(item)
        if pos >= len(tokens):
            raise FormatError("unbalanced parenthesis in property file")
        return items, pos + 1

    exprs = []
    pos = 0
    while pos < len(tokens):
        expr, pos = read(pos)
        exprs.append(expr)
    return exprs


def _num(x: float) -> str:
    return repr(float(x))


def _term(coef: float, var: str) -> str:
    return f"(* {_num(coef)} {var})"


def _linear(terms) -> str:
    if len(terms) == 1:
        return _term(*terms[0])
    return "(+ " + " ".join(_term(c, v) for c, v in terms) + ")"


def _assert_line(op: str, terms, const: float) -> str:
    return f"(assert ({op} {_linear(terms)} {_num(const)}))"


# ---------------------------------------------------------------------------
# export

def _region_lines(region: LatentRegion, var: str):
    lines = [f"(region {region.kind})"]
    if region.q is not None:
        lines.append(f"(q {_num(region.q)})")
    if region.calibrated:
        lines.append("(calibrated true)")
    if region.kind == "l1-ball":
        lines.append(f"(radius {_num(region.radius)})")
        lines.append(f"(declare-aux t {region.dim})")
        for i in range(region.dim):
            lines.append(_assert_line(">=", [(1.0, f"t_{i}"), (-1.0, f"{var}_{i}")], 0.0))
            lines.append(_assert_line(">=", [(1.0, f"t_{i}"), (1.0, f"{var}_{i}")], 0.0))
        lines.append(_assert_line(
            "<=", [(1.0, f"t_{i}") for i in range(region.dim)], region.radius))
    elif region.kind == "linf-ball":
        lines.append(f"(radius {_num(region.radius)})")
        for i in range(region.dim):
            lines.append(_assert_line("<=", [(1.0, f"{var}_{i}")], region.radius))
            lines.append(_assert_line(">=", [(1.0, f"{var}_{i}")], -region.radius))
    else:
        box = region.bounding_box()
        for i in range(region.dim):
            lines.append(_assert_line("<=", [(1.0, f"{var}_{i}")], box.upper[i]))
            lines.append(_assert_line(">=", [(1.0, f"{var}_{i}")], box.lower[i]))
    return lines


def _resolve_target(task: VerificationTask) -> int:
    if task.target_class is not None:
        return task.target_class
    box = task.region.bounding_box()
    center = 0.5 * (box.lower + box.upper)
    if task.flow is not None:
        center = task.flow.forward(center)
    return int(np.argmax(task.classifier.logits(center)[0]))


def export_spec(task: VerificationTask, model_path: str,
                property_path: str) -> None:
    """Write the model file and the negated-property constraint file."""
    n_out = task.classifier.n_outputs
    target = _resolve_target(task)
    if task.kind == "local-robustness":
        model_io.save(task.classifier, model_path)
    else:
        doc = model_io.encode_composite(
            task.flow, task.classifier,
            duplicate_classifier=task.kind == "global-robustness")
        model_io.save(doc, model_path)

    lines = [
        "; negated-property file: a satisfying assignment is a counterexample",
        f"(version {PROP_VERSION})",
        f"(kind {task.kind})",
        f'(model "{os.path.basename(model_path)}")',
        f"(target {target})",
    ]
    if task.kind == "local-robustness":
        d = task.region.dim
        lines.append(f"(epsilon {_num(task.epsilon)})")
        lines.append(f"(declare-input x {d})")
        lines.append(f"(declare-output y {n_out})")
        lines.extend(_region_lines(task.region, "x"))
        disjuncts = [f"(>= {_linear([(1.0, f'y_{j}'), (-1.0, f'y_{target}')])} {_num(0.0)})"
                     for j in range(n_out) if j != target]
        lines.append("(assert (or " + " ".join(disjuncts) + "))")
    elif task.kind == "global-robustness":
        dz = task.flow.dim
        lines.append(f"(epsilon {_num(task.epsilon)})")
        lines.append(f"(declare-input z {dz})")
        lines.append(f"(declare-input delta {dz})")
        lines.append(f"(declare-output y {n_out})")
        lines.append(f"(declare-output yp {n_out})")
        lines.extend(_region_lines(task.region, "z"))
        for i in range(dz):
            lines.append(_assert_line("<=", [(1.0, f"delta_{i}")], task.epsilon))
            lines.append(_assert_line(">=", [(1.0, f"delta_{i}")], -task.epsilon))
        for j in range(n_out):
            if j != target:
                lines.append(_assert_line(
                    ">=", [(1.0, f"y_{target}"), (-1.0, f"y_{j}")], 0.0))
        disjuncts = [f"(>= {_linear([(1.0, f'yp_{j}'), (-1.0, f'yp_{target}')])} {_num(0.0)})"
                     for j in range(n_out) if j != target]
        lines.append("(assert (or " + " ".join(disjuncts) + "))")
    else:  # confidence-bound
        dz = task.flow.dim
        lines.append(f"(tau {_num(task.tau)})")
        lines.append(f"(declare-input z {dz})")
        lines.append(f"(declare-output y {n_out})")
        lines.extend(_region_lines(task.region, "z"))
        for j in range(n_out):
            if j != target:
                lines.append(_assert_line(
                    ">=", [(1.0, f"y_{target}"), (-1.0, f"y_{j}")], 0.0))
        conf_terms = [(1.0, f"y_{target}")] + [
            (-1.0 / n_out, f"y_{j}") for j in range(n_out) if j != target]
        lines.append(_assert_line(">=", conf_terms, task.tau))
    with open(property_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# parsing

@dataclass
class PropertyDoc:
    version: int
    kind: str
    model: str
    target: int
    epsilon: float | None = None
    tau: float | None = None
    q: float | None = None
    calibrated: bool = False
    region_kind: str | None = None
    radius: float | None = None
    declares: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    sum_constraints: list = field(default_factory=list)
    disjunction: list = field(default_factory=list)


def _parse_linear(expr):
    """-> list of (coef, var), for (* c v) or (+ (* c v) ...)."""
    if expr[0] == "*":
        return [(float(expr[1]), expr[2])]
    if expr[0] == "+":
        terms = []
        for sub in expr[1:]:
            terms.extend(_parse_linear(sub))
        return terms
    raise FormatError(f"unsupported linear expression head {expr[0]!r}")


def parse_property(path: str) -> PropertyDoc:
    with open(path) as fh:
        exprs = _read_sexprs(_tokenize(fh.read()))
    meta = {}
    declares = {}
    bounds = {}
    sums = []
    disjunction = []
    for expr in exprs:
        if not isinstance(expr, list) or not expr:
            raise FormatError(f"{path}: stray token {expr!r}")
        head = expr[0]
        if head in ("version", "kind", "model", "target", "epsilon", "tau",
                    "q", "radius", "region", "calibrated"):
            meta[head] = expr[1]
        elif head in ("declare-input", "declare-output", "declare-aux"):
            declares[expr[1]] = (head.split("-")[1], int(expr[2]))
        elif head == "assert":
            body = expr[1]
            if body[0] == "or":
                for sub in body[1:]:
                    disjunction.append((sub[0], _parse_linear(sub[1]),
                                        float(sub[2])))
            elif body[0] in ("<=", ">="):
                terms = _parse_linear(body[1])
                const = float(body[2])
                if len(terms) == 1 and abs(terms[0][0]) == 1.0:
                    coef, var = terms[0]
                    lo, hi = bounds.get(var, (-np.inf, np.inf))
                    effective = const / coef
                    tighten_upper = (body[0] == "<=") == (coef > 0)
                    if tighten_upper:
                        hi = min(hi, effective)
                    else:
                        lo = max(lo, effective)
                    bounds[var] = (lo, hi)
                else:
                    sums.append((body[0], terms, const))
            else:
                raise FormatError(f"{path}: unsupported assertion {body[0]!r}")
        else:
            raise FormatError(f"{path}: unknown form {head!r}")
    for key in ("version", "kind", "model", "target"):
        if key not in meta:
            raise FormatError(f"{path}: missing ({key} ...)")
    if int(meta["version"]) != PROP_VERSION:
        raise FormatError(f"{path}: unsupported property version {meta['version']}")
    return PropertyDoc(
        version=int(meta["version"]), kind=meta["kind"],
        model=meta["model"].strip('"'), target=int(meta["target"]),
        epsilon=float(meta["epsilon"]) if "epsilon" in meta else None,
        tau=float(meta["tau"]) if "tau" in meta else None,
        q=float(meta["q"]) if "q" in meta else None,
        calibrated=meta.get("calibrated") == "true",
        region_kind=meta.get("region"),
        radius=float(meta["radius"]) if "radius" in meta else None,
        declares=declares, bounds=bounds, sum_constraints=sums,
        disjunction=disjunction)


def _var_bounds(doc: PropertyDoc, name: str, size: int):
    lo = np.empty(size)
    hi = np.empty(size)
    for i in range(size):
        pair = doc.bounds.get(f"{name}_{i}")
        if pair is None or not np.isfinite(pair).all():
            raise FormatError(f"variable {name}_{i} is not fully bounded")
        lo[i], hi[i] = pair
    return lo, hi


def _reconstruct_region(doc: PropertyDoc, var: str, dim: int) -> LatentRegion:
    kind = doc.region_kind
    if kind == "l1-ball":
        if "t" not in doc.declares:
            raise FormatError("l1 region without aux variable declaration")
        sums = [s for s in doc.sum_constraints
                if s[0] == "<=" and all(v.startswith("t_") for _, v in s[1])]
        if len(sums) != 1:
            raise FormatError("l1 region needs exactly one aux sum constraint")
        radius = sums[0][2]
        if doc.radius is None or abs(radius - doc.radius) > 1e-12:
            raise FormatError("declared radius disagrees with sum constraint")
        return LatentRegion(kind="l1-ball", dim=dim, radius=radius,
                            q=doc.q, calibrated=doc.calibrated)
    lo, hi = _var_bounds(doc, var, dim)
    if kind == "linf-ball":
        r = doc.radius
        if r is None or np.any(np.abs(lo + r) > 1e-12) or np.any(np.abs(hi - r) > 1e-12):
            raise FormatError("declared radius disagrees with variable bounds")
        return LatentRegion(kind="linf-ball", dim=dim, radius=r,
                            q=doc.q, calibrated=doc.calibrated)
    if kind == "box":
        return LatentRegion(kind="box", dim=dim, lower=lo, upper=hi,
                            q=doc.q, calibrated=doc.calibrated)
    raise FormatError(f"unknown region kind {kind!r}")


def import_task(property_path: str,
                model_path: str | None = None) -> VerificationTask:
    """Rebuild the VerificationTask an exported pair describes."""
    doc = parse_property(property_path)
    if model_path is None:
        model_path = os.path.join(os.path.dirname(property_path) or ".", doc.model)
    loaded = model_io.load(model_path)
    if doc.kind == "local-robustness":
        if not hasattr(loaded, "logits"):
            raise FormatError("local task expects a classifier model file")
        d = doc.declares["x"][1]
        region = _reconstruct_region(doc, "x", d)
        if doc.epsilon is None:
            raise FormatError("local task without epsilon")
        return VerificationTask(kind="local-robustness", classifier=loaded,
                                region=region, epsilon=doc.epsilon,
                                target_class=doc.target)
    if not isinstance(loaded, dict):
        raise FormatError(f"{doc.kind} expects a composite model file")
    flow, classifier = loaded["flow"], loaded["classifier"]
    dz = doc.declares["z"][1]
    region = _reconstruct_region(doc, "z", dz)
    if doc.kind == "global-robustness":
        dlo, dhi = _var_bounds(doc, "delta", dz)
        eps = float(dhi.max())
        if doc.epsilon is None or abs(eps - doc.epsilon) > 1e-12 or \
                np.any(np.abs(dlo + eps) > 1e-12) or np.any(np.abs(dhi - eps) > 1e-12):
            raise FormatError("delta bounds disagree with declared epsilon")
        return VerificationTask(kind="global-robustness", classifier=classifier,
                                region=region, epsilon=eps, flow=flow,
                                target_class=doc.target, q=doc.q)
    if doc.kind == "confidence-bound":
        if doc.tau is None:
            raise FormatError("confidence task without tau")
        return VerificationTask(kind="confidence-bound", classifier=classifier,
                                region=region, flow=flow,
                                target_class=doc.target, tau=doc.tau, q=doc.q)
    raise FormatError(f"unknown task kind {doc.kind!r}")
