"""Experiment runner: convergence studies, training, regression, eigenvalues.

Subcommands
-----------
``dataset gen|load``  build a sphere lattice or ingest a CSV into the cache
``nngp-conv``         Monte-Carlo NNGP estimate vs the limiting kernel, per width
``jntk-init``         finite JNTK at initialisation vs the limiting kernel, per width
``jntk-drift``        JNTK drift during robust training on a log2 step grid
``train``             one robust-training run with loss / weight-movement logs
``regress``           kernel regression + eigenfeature accuracy/robustness sweep
``min-eig``           minimum-eigenvalue-vs-depth diagnostics

Configuration comes from a JSON file (``--config``); individual keys can be
overridden by flags.  Every run writes the effective config next to its
outputs and stamps each CSV with the config's SHA-256, so re-running a
fixed config reproduces every output byte for byte.  Exit codes: 0 ok,
2 configuration error, 3 numeric failure, 4 assumption violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .activations import make_activation
from .datasets import Dataset, fibonacci_sphere, load_cached, load_csv, save_dataset
from .errors import AssumptionViolation, ConfigError, JntkError
from .kernels import GramMatrix, jntk_gram, nngp_gram
from .mlp import estimate_nngp, finite_jntk_gram, init_mlp
from .quadrature import gauss_hermite
from .regression import eigenfeatures, fit, min_eig_sweep
from .training import TrainConfig, jntk_drift, log2_schedule, train

DEFAULTS = {
    "activation": "gelu",
    "normalise": True,
    "depth": 2,
    "depths": [1, 2, 3, 4],
    "widths": [128, 256, 512, 1024],
    "width": 1024,
    "dataset": {"kind": "sphere", "n": 16, "dim": 4},
    "lambda": 0.01,
    "lambdas": [1.0, 0.1, 0.01, 0.001],
    "kappa": 0.1,
    "eta": 1.0,
    "steps": 2048,
    "samples": 2000,
    "seeds": [0, 1, 2, 3, 4],
    "quad_order": 64,
    "subset": None,
    "unsafe_activation": False,
    "perturb_steps": [0.01, 0.1],
    "test_fraction": 0.25,
    "bootstrap_resamples": 10000,
    "out": "out",
}


def load_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config!r} is not valid JSON: {exc}") from exc
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for key in ("seed", "out", "subset", "quad_order"):
        val = getattr(args, key, None)
        if val is not None:
            if key == "seed":
                cfg["seeds"] = [val]
            else:
                cfg[key] = val
    if getattr(args, "unsafe_activation", False):
        cfg["unsafe_activation"] = True
    if not cfg["seeds"]:
        raise ConfigError("seeds must be non-empty")
    if not 0.0 < cfg["lambda"] <= 1.0:
        raise ConfigError(f"lambda must lie in (0, 1], got {cfg['lambda']!r}")
    if any(w < 1 for w in cfg["widths"]):
        raise ConfigError("widths must be positive")
    return cfg


def config_hash(cfg: dict) -> str:
    # the output directory is not part of the experiment identity
    hashed = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode()).hexdigest()


def _prepare(cfg: dict) -> tuple[str, str]:
    os.makedirs(cfg["out"], exist_ok=True)
    digest = config_hash(cfg)
    with open(os.path.join(cfg["out"], "effective_config.json"), "w") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return cfg["out"], digest


def resolve_dataset(cfg: dict) -> Dataset:
    spec = cfg["dataset"]
    kind = spec.get("kind", "sphere")
    if kind == "sphere":
        ds = fibonacci_sphere(int(spec.get("n", 16)), int(spec.get("dim", 4)))
    elif kind == "csv":
        ds, removed = load_csv(
            spec["path"], spec["target_column"], float(spec.get("parallel_threshold", 0.99))
        )
        if removed:
            print(f"filtered {len(removed)} near-parallel rows: {removed}", file=sys.stderr)
    elif kind == "cache":
        ds = load_cached(spec["path"])
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    subset = cfg.get("subset")
    if subset is not None:
        subset = int(subset)
        if not 2 <= subset <= ds.n:
            raise ConfigError(f"subset must be in [2, {ds.n}], got {subset}")
        ds = Dataset(ds.inputs[:subset], ds.targets[:subset], ds.provenance, ds.name)
    ds.validate()
    return ds


def _activation(cfg: dict):
    # normalisation always uses the fixed 64-node rule; quad_order only
    # controls the kernel expectations
    return make_activation(cfg["activation"], normalise=cfg["normalise"])


def _rule(cfg: dict):
    return gauss_hermite(cfg["quad_order"])


def bootstrap_ci(values: np.ndarray, resamples: int, seed: int = 0) -> tuple[float, float]:
    """Seeded percentile bootstrap for the median of ``values``."""
    rng = np.random.Generator(np.random.Philox(seed))
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, values.shape[0], size=(resamples, values.shape[0]))
    medians = np.median(values[idx], axis=1)
    return float(np.percentile(medians, 2.5)), float(np.percentile(medians, 97.5))


def _write_csv(path: str, digest: str, header: str, rows: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={digest}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _delta_rows(cfg: dict, digest: str, reference: GramMatrix, per_seed_gram) -> list[str]:
    """Shared emission for the two at-init convergence experiments."""
    rows = []
    w = reference.block_width
    for width in cfg["widths"]:
        deltas = np.empty((len(cfg["seeds"]), w, w))
        for s, seed in enumerate(cfg["seeds"]):
            deltas[s] = per_seed_gram(width, seed).max_abs_by_entry(reference)
        for a in range(w):
            for b in range(w):
                med = float(np.median(deltas[:, a, b]))
                lo, hi = bootstrap_ci(deltas[:, a, b], cfg["bootstrap_resamples"])
                rows.append(f"{width},{a},{b},{med!r},{lo!r},{hi!r}")
    return rows


def cmd_nngp_conv(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    reference = nngp_gram(act, ds.inputs, cfg["depth"], _rule(cfg), allow_unsafe=cfg["unsafe_activation"])

    def estimate(width, seed):
        return estimate_nngp(act, width, cfg["depth"], ds.inputs, cfg["kappa"], cfg["samples"], seed)

    rows = _delta_rows(cfg, digest, reference, estimate)
    _write_csv(os.path.join(out, "nngp_conv.csv"), digest, "width,a,b,delta,ci_lo,ci_hi", rows)
    return 0


def cmd_jntk_init(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    reference = jntk_gram(act, ds.inputs, cfg["depth"], 1.0, _rule(cfg), allow_unsafe=cfg["unsafe_activation"])

    def at_init(width, seed):
        net = init_mlp(seed, width, cfg["depth"], ds.d0, cfg["kappa"])
        fin = finite_jntk_gram(net, act, ds.inputs)
        return GramMatrix(fin.n, fin.d0, fin.entries / cfg["kappa"] ** 2)

    rows = _delta_rows(cfg, digest, reference, at_init)
    _write_csv(os.path.join(out, "jntk_init.csv"), digest, "width,a,b,delta,ci_lo,ci_hi", rows)
    return 0


def cmd_jntk_drift(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    reference = jntk_gram(act, ds.inputs, cfg["depth"], 1.0, _rule(cfg), allow_unsafe=cfg["unsafe_activation"])
    schedule = log2_schedule(cfg["steps"])
    rows = []
    w = 1 + ds.d0
    for width in cfg["widths"]:
        per_seed = np.empty((len(cfg["seeds"]), len(schedule), w, w))
        for s, seed in enumerate(cfg["seeds"]):
            net = init_mlp(seed, width, cfg["depth"], ds.d0, cfg["kappa"])
            tc = TrainConfig(cfg["lambda"], cfg["eta"], cfg["steps"], log_schedule=schedule)
            log = train(net, act, ds.inputs, ds.targets, tc, drift_reference=reference)
            for t, (step, drift) in enumerate(log.drift):
                per_seed[s, t] = drift
        med = np.median(per_seed, axis=0)
        for t, step in enumerate(schedule):
            for a in range(w):
                for b in range(w):
                    rows.append(f"{width},{step},{a},{b},{float(med[t, a, b])!r}")
    _write_csv(os.path.join(out, "jntk_drift.csv"), digest, "width,step,a,b,delta", rows)
    return 0


def cmd_train(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    schedule = log2_schedule(cfg["steps"])
    net = init_mlp(cfg["seeds"][0], cfg["width"], cfg["depth"], ds.d0, cfg["kappa"])
    reference = jntk_gram(
        act, ds.inputs, cfg["depth"], 1.0, _rule(cfg), allow_unsafe=cfg["unsafe_activation"]
    )
    tc = TrainConfig(cfg["lambda"], cfg["eta"], cfg["steps"], log_schedule=schedule)
    log = train(net, act, ds.inputs, ds.targets, tc, drift_reference=reference)
    rows = []
    for rec in log.records:
        for layer, (op, inf, one) in enumerate(rec.movement):
            rows.append(f"{rec.step},{rec.loss!r},{layer + 1},{op!r},{inf!r},{one!r}")
    _write_csv(
        os.path.join(out, "train_log.csv"), digest, "step,loss,layer,op_norm,inf_norm,one_norm", rows
    )
    drift_rows = []
    for step, drift in log.drift:
        for a in range(1 + ds.d0):
            for b in range(1 + ds.d0):
                drift_rows.append(f"{step},{a},{b},{float(drift[a, b])!r}")
    _write_csv(os.path.join(out, "train_drift.csv"), digest, "step,a,b,drift", drift_rows)
    # thresholded-sign training accuracy at the end, for orientation
    from .mlp import forward

    correct = sum(
        1
        for i in range(ds.n)
        if np.sign(forward(log.final_state, act, ds.inputs[i])[0]) == np.sign(ds.targets[i])
    )
    print(f"final loss {log.records[-1].loss!r}, train accuracy {correct}/{ds.n}")
    return 0


def _svg_scatter(path: str, xs: np.ndarray, ys: np.ndarray, labels: tuple[str, str]) -> None:
    """Minimal SVG scatter; axes span [0, 1] (accuracy scale)."""
    size, margin = 320, 40
    span = size - 2 * margin

    def px(v: float) -> float:
        return margin + span * v

    def py(v: float) -> float:
        return size - margin - span * v

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="none" stroke="black"/>',
        f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" '
        f'font-size="11">{labels[0]}</text>',
        f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 12 {size / 2:.0f})">{labels[1]}</text>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{px(float(x)):.2f}" cy="{py(float(y)):.2f}" r="2.5" fill="steelblue" fill-opacity="0.6"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_regress(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    rule = _rule(cfg)

    # deterministic head/tail split: the lattice order spreads both parts
    n_test = max(1, int(round(ds.n * cfg["test_fraction"])))
    train_in, train_y = ds.inputs[: ds.n - n_test], ds.targets[: ds.n - n_test]
    test_in, test_y = ds.inputs[ds.n - n_test :], ds.targets[ds.n - n_test :]

    # the smallest depth satisfying the positivity assumption, searched upward
    depth = None
    for cand in sorted(set(cfg["depths"])):
        rep = min_eig_sweep(act, train_in, [cand], 1.0, rule, allow_unsafe=cfg["unsafe_activation"])
        if rep.assumption_ok[0]:
            depth = cand
            break
    if depth is None:
        raise AssumptionViolation(
            f"no depth in {sorted(set(cfg['depths']))} gives a positive-definite "
            f"kernel Gram for activation {cfg['activation']!r}"
        )
    print(f"using depth {depth}")

    steps = tuple(float(s) for s in cfg["perturb_steps"])
    for lam in cfg["lambdas"]:
        reg = fit(act, train_in, train_y, depth, lam, rule, allow_unsafe=cfg["unsafe_activation"])
        report = eigenfeatures(reg, test_in, test_y, steps)
        rows = []
        kept = np.flatnonzero(report.retained)
        for rank, idx in enumerate(kept):
            rows.append(
                f"{rank + 1},{float(report.eigenvalues[idx])!r},{float(report.accuracy[rank])!r},"
                f"{float(report.accuracy_perturbed[steps[0]][rank])!r},"
                f"{float(report.accuracy_perturbed[steps[1]][rank])!r}"
            )
        tag = f"{lam:g}".replace(".", "p")
        _write_csv(
            os.path.join(out, f"eigenfeatures_lambda_{tag}.csv"),
            digest,
            "rank,eigenvalue,acc,acc_p_small,acc_p_large",
            rows,
        )
        small, large = f"acc after {steps[0]:g} step", f"acc after {steps[1]:g} step"
        for (ix, iy, labels, fname) in (
            (report.accuracy, report.accuracy_perturbed[steps[0]],
             ("test accuracy", small), f"acc_vs_small_{tag}.svg"),
            (report.accuracy, report.accuracy_perturbed[steps[1]],
             ("test accuracy", large), f"acc_vs_large_{tag}.svg"),
            (report.accuracy_perturbed[steps[0]], report.accuracy_perturbed[steps[1]],
             (small, large), f"small_vs_large_{tag}.svg"),
        ):
            _svg_scatter(os.path.join(out, fname), ix, iy, labels)
        if report.skipped:
            print(f"lambda={lam}: skipped {len(report.skipped)} null eigenfeatures")
    return 0


def cmd_min_eig(cfg: dict) -> int:
    out, digest = _prepare(cfg)
    ds = resolve_dataset(cfg)
    act = _activation(cfg)
    rep = min_eig_sweep(
        act, ds.inputs, sorted(set(cfg["depths"])), cfg["lambda"], _rule(cfg),
        allow_unsafe=cfg["unsafe_activation"],
    )
    rows = [
        f"{d},{j!r},{n!r},{str(ok).lower()}"
        for d, j, n, ok in zip(rep.depths, rep.jntk_min, rep.ntk_min, rep.assumption_ok)
    ]
    _write_csv(
        os.path.join(out, "min_eig.csv"), digest, "depth,jntk_mineig,ntk_mineig,assumption_ok", rows
    )
    if rep.parallel_pairs:
        print(f"warning: exactly parallel input pairs {rep.parallel_pairs}", file=sys.stderr)
    return 0


def cmd_dataset(cfg: dict, args: argparse.Namespace) -> int:
    out, digest = _prepare(cfg)
    if args.dataset_cmd == "gen":
        ds = fibonacci_sphere(args.n, args.dim)
    else:
        ds, removed = load_csv(args.path, args.target_column, args.threshold)
        if removed:
            print(f"filtered {len(removed)} near-parallel rows: {removed}")
    ds.validate()
    path = os.path.join(out, f"{ds.name}.csv")
    save_dataset(ds, path, config_hash=digest)
    print(f"wrote {ds.n} x {ds.d0} dataset to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jntk", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="replace the seed list with this one seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--subset", type=int, help="use only the first K dataset points")
        p.add_argument("--quad-order", type=int, dest="quad_order", help="Gauss-Hermite order")
        p.add_argument(
            "--unsafe-activation",
            action="store_true",
            help="allow the square activation at depth > 1",
        )

    for name in ("nngp-conv", "jntk-init", "jntk-drift", "train", "regress", "min-eig"):
        common(sub.add_parser(name))

    pd = sub.add_parser("dataset")
    dsub = pd.add_subparsers(dest="dataset_cmd", required=True)
    pg = dsub.add_parser("gen")
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--dim", type=int, default=4)
    pl = dsub.add_parser("load")
    pl.add_argument("--path", required=True)
    pl.add_argument("--target-column", required=True)
    pl.add_argument("--threshold", type=float, default=0.99)
    for sp in (pg, pl):
        common(sp)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "dataset":
            return cmd_dataset(cfg, args)
        handler = {
            "nngp-conv": cmd_nngp_conv,
            "jntk-init": cmd_jntk_init,
            "jntk-drift": cmd_jntk_drift,
            "train": cmd_train,
            "regress": cmd_regress,
            "min-eig": cmd_min_eig,
        }[args.command]
        return handler(cfg)
    except JntkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 3)


if __name__ == "__main__":
    sys.exit(main())
