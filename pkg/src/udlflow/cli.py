"""Command-line entry point.

Verbs: train, sample, logprob, validate, verify, bench-robustness,
export, synth-data. Artifacts land in --out-dir (the UDLFLOW_OUT
environment variable overrides it); every written path is printed.
Exit codes: 0 success, 1 property falsified (verify verb), 2 usage
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as model_io
from . import props, valcal, verify as verify_mod
from .datasets import load_csv, load_idx, save_csv, synth
from .errors import UdlflowError
from .flows import build_baseline, build_flow
from .training import TrainConfig, train, write_history_csv


def _out_dir(args) -> str:
    out = os.environ.get("UDLFLOW_OUT") or args.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _emit(path: str) -> None:
    print(f"wrote {path}")


def _load_data(spec: str):
    """Data specs: synth:NAME, csv:PATH, idx:IMAGES,LABELS[,class=K][,pool=P]."""
    if spec.startswith("synth:"):
        return synth(spec.split(":", 1)[1], n=2000, seed=0)
    if spec.startswith("csv:"):
        return load_csv(spec.split(":", 1)[1])
    if spec.startswith("idx:"):
        parts = spec.split(":", 1)[1].split(",")
        images, labels = parts[0], (parts[1] if len(parts) > 1 else None)
        kw = {}
        for extra in parts[2:]:
            key, value = extra.split("=")
            if key == "class":
                kw["class_filter"] = int(value)
            elif key == "pool":
                kw["downsample"] = int(value)
        return load_idx(images, labels, **kw)
    raise UdlflowError(f"unknown data spec {spec!r} "
                       "(use synth:NAME, csv:PATH or idx:IMAGES,LABELS)")


def write_svg_scatter(pairs, path, diagonal: bool = True,
                      size: int = 420, margin: int = 30) -> None:
    """Minimal SVG scatter of probability pairs with a reference diagonal."""
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.float64))

    def sx(v):
        return margin + v * (size - 2 * margin)

    def sy(v):
        return size - margin - v * (size - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if diagonal:
        parts.append(f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(1)}" '
                     'stroke="#999" stroke-dasharray="4 3"/>')
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pairs)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4"/>')
    for a, b in pairs:
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" '
                     'fill="#1f77b4"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# verbs

def _cmd_synth_data(args) -> int:
    out = _out_dir(args)
    ds = synth(args.name, args.n, seed=args.seed)
    path = os.path.join(out, f"{args.name}.csv")
    save_csv(ds.samples, path)
    _emit(path)
    if ds.labels is not None:
        lpath = os.path.join(out, f"{args.name}-labels.csv")
        save_csv(ds.labels.reshape(-1, 1), lpath)
        _emit(lpath)
    return 0


def _cmd_train(args) -> int:
    out = _out_dir(args)
    ds = _load_data(args.data)
    shape = ds.shape if len(ds.shape) == 3 else (ds.dim,)
    if args.baseline:
        flow = build_baseline(shape, n_blocks=args.blocks, seed=args.seed)
    else:
        flow = build_flow(shape, n_blocks=args.blocks, k=args.k,
                          base_kind=args.base, final=args.final,
                          seed=args.seed)
    config = TrainConfig(learning_rate=args.lr, patience=args.patience,
                         batch_size=args.batch, max_epochs=args.epochs,
                         lu_reg_weight=args.lu_reg, dequantize=args.dequantize,
                         seed=args.seed)
    result = train(flow, ds.samples, config)
    model_path = os.path.join(out, args.model_name)
    model_io.save(result.flow, model_path)
    _emit(model_path)
    hist_path = os.path.join(out, "history.csv")
    write_history_csv(result.history, hist_path)
    _emit(hist_path)
    status = "diverged" if result.diverged else "ok"
    print(f"training {status}: best val NLL {result.best_val_nll!r} "
          f"({len(result.history)} epochs)")
    return 0


def _cmd_sample(args) -> int:
    out = _out_dir(args)
    flow = model_io.load(args.model)
    samples = flow.sample(args.n, np.random.default_rng(args.seed))
    path = os.path.join(out, "samples.csv")
    save_csv(samples, path)
    _emit(path)
    return 0


def _cmd_logprob(args) -> int:
    out = _out_dir(args)
    flow = model_io.load(args.model)
    ds = _load_data(args.data)
    lp = flow.log_prob(ds.samples)
    path = os.path.join(out, "logprob.csv")
    save_csv(lp.reshape(-1, 1), path)
    _emit(path)
    print(f"mean log-probability {lp.mean()!r} over {ds.n} points")
    return 0


def _cmd_validate(args) -> int:
    out = _out_dir(args)
    flow = model_io.load(args.model)
    ds = _load_data(args.data)
    report = valcal.validate_flow(flow, ds.samples,
                                  permutations=args.permutations,
                                  seed=args.seed)
    rpath = os.path.join(out, "validation.txt")
    report.write(rpath)
    _emit(rpath)
    latents = flow.inverse(ds.samples)
    pairs = valcal.pp_plot_data(latents, flow.base, grid_size=args.grid)
    ppath = os.path.join(out, "pp.csv")
    save_csv(pairs, ppath, header=["empirical", "model"])
    _emit(ppath)
    spath = os.path.join(out, "pp.svg")
    write_svg_scatter(pairs, spath)
    _emit(spath)
    print(f"verdict: {report.verdict} (ks_p={report.ks_p!r}, "
          f"energy_p={report.energy_p!r}, "
          f"sign pass {report.sign_pass_count}/{report.sign_p.size})")
    return 0


def _build_task(args):
    classifier = model_io.load(args.classifier)
    if args.mode == "local":
        center = np.array([float(v) for v in args.center.split(",")])
        return verify_mod.local_task(classifier, center, args.eps,
                                     target_class=args.target)
    flow = model_io.load(args.model)
    if args.q is not None:
        region = verify_mod.latent_udl_region(flow, args.q)
    else:
        region = verify_mod.small_box_region(flow.dim, args.box_halfwidth)
    if args.mode == "global":
        return verify_mod.VerificationTask(
            kind="global-robustness", classifier=classifier, region=region,
            epsilon=args.eps, flow=flow, target_class=args.target, q=args.q)
    return verify_mod.VerificationTask(
        kind="confidence-bound", classifier=classifier, region=region,
        flow=flow, target_class=args.target, tau=args.tau, q=args.q)


def _cmd_verify(args) -> int:
    out = _out_dir(args)
    task = _build_task(args)
    verdict = verify_mod.verify(task, budget=args.budget, seed=args.seed)
    print(f"{verdict.status} nodes={verdict.nodes} seconds={verdict.seconds!r}")
    if verdict.counterexample is not None:
        cpath = os.path.join(out, "counterexample.csv")
        rows = [np.asarray(v, dtype=np.float64).reshape(-1)
                for v in verdict.counterexample.values()
                if isinstance(v, np.ndarray)]
        save_csv(np.concatenate(rows).reshape(1, -1), cpath)
        _emit(cpath)
        for key, value in verdict.counterexample.items():
            if not isinstance(value, np.ndarray):
                print(f"  {key}={value}")
    return 1 if verdict.status == "falsified" else 0


def _cmd_bench(args) -> int:
    out = _out_dir(args)
    flow = model_io.load(args.model)
    classifier = model_io.load(args.classifier)
    rows = verify_mod.bench_robustness(
        flow, classifier, args.eps_verify, args.eps_falsify,
        n_instances=args.instances, budget=args.budget, seed=args.seed,
        box_halfwidth=args.box_halfwidth, threads=args.threads)
    path = os.path.join(out, "bench.csv")
    verify_mod.write_bench_csv(rows, path)
    _emit(path)
    for eps in (args.eps_verify, args.eps_falsify):
        cross = verify_mod.crossover_index(rows, eps)
        print(f"epsilon {eps}: crossover at "
              f"{cross if cross is not None else 'none (no crossover)'}")
    return 0


def _cmd_export(args) -> int:
    out = _out_dir(args)
    task = _build_task(args)
    model_path = os.path.join(out, "exported-model.json")
    prop_path = os.path.join(out, "property.txt")
    props.export_spec(task, model_path, prop_path)
    _emit(model_path)
    _emit(prop_path)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default=".")


def _add_task_flags(p, local_center: bool):
    p.add_argument("--classifier", required=True)
    p.add_argument("--model", help="flow model file (global/confidence modes)")
    p.add_argument("--mode", choices=["global", "local", "confidence"],
                   default="global")
    p.add_argument("--q", type=float, default=None,
                   help="UDL level; omitted means the small-box workaround")
    p.add_argument("--eps", type=float, default=0.001)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--box-halfwidth", type=float, default=0.05)
    p.add_argument("--budget", type=int, default=20000)
    if local_center:
        p.add_argument("--center", default="0,0",
                       help="comma-separated point for local mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udlflow",
        description="train, validate and verify uniformly scaling flows")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth-data", help="write a built-in synthetic dataset")
    _add_common(p)
    p.add_argument("--name", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="fit a flow by maximum likelihood")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--blocks", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--base", default="gamma-mixture",
                   choices=["lognormal", "gamma", "gamma-mixture",
                            "half-normal", "exponential"])
    p.add_argument("--k", type=lambda s: np.inf if s == "inf" else int(s),
                   default=1, help="norm order of the base (1, 2 or inf)")
    p.add_argument("--final", default="lu-affine",
                   choices=["lu-affine", "diagonal", "none"])
    p.add_argument("--lu-reg", type=float, default=1e-4)
    p.add_argument("--dequantize", action="store_true")
    p.add_argument("--baseline", action="store_true",
                   help="coupling-only architecture with fixed normal base")
    p.add_argument("--model-name", default="model.json")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="draw samples from a trained flow")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("logprob", help="log-density of data under a flow")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_logprob)

    p = sub.add_parser("validate", help="goodness-of-fit and radiality tests")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--permutations", type=int, default=200)
    p.add_argument("--grid", type=int, default=100)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("verify", help="decide a robustness/confidence property")
    _add_common(p)
    _add_task_flags(p, local_center=True)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench-robustness",
                       help="global-vs-local runtime comparison CSV")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--eps-verify", type=float, default=0.001)
    p.add_argument("--eps-falsify", type=float, default=0.1)
    p.add_argument("--instances", type=int, default=0)
    p.add_argument("--budget", type=int, default=20000)
    p.add_argument("--box-halfwidth", type=float, default=0.05)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("export", help="write solver-ready property/model files")
    _add_common(p)
    _add_task_flags(p, local_center=True)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UdlflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
