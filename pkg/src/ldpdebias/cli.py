"""Command-line driver: datagen, release, train, validate, bias-scan.

A typical experiment is four commands against one output directory:

    ldpdebias datagen  --out runs/demo --seed 7
    ldpdebias release  --out runs/demo --seed 7
    ldpdebias train    --out runs/demo --seed 7 --method iwp
    ldpdebias validate --out runs/demo

datagen writes clean train/test splits; release produces one released
copy of the training split per seed (each under a fresh budget, so the
one-shot guard holds within a copy); train fits one model per seed with
the chosen estimator and writes per-seed traces plus a summary; validate
runs the Monte Carlo self-checks and fails the process if any hard check
fails. bias-scan tabulates the series truncation bias over orders and
noise levels.

Every delimited output starts with "# key=value" comment lines carrying
the tool version and a hash of the resolved configuration. Train,
validate and bias-scan also render a figure next to their tables.

Exit codes: 0 success, 1 a validation check failed, 2 bad usage or
configuration, 3 missing or malformed files.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    config_hash,
    desk_preset,
    load_config,
    make_budget,
    make_loss,
)
from .data import (
    DatasetSpec,
    arrays_to_records,
    generate_synthetic,
    read_records_csv,
    records_to_arrays,
    release_dataset,
    split,
    write_records_csv,
)
from .errors import (
    BudgetError,
    BudgetMismatchError,
    ConfigError,
    DataError,
    LabelError,
    LdpDebiasError,
    ModeError,
    NormBoundError,
    OneShotError,
    SeriesOrderError,
)
from .optimizer import SgdConfig, evaluate, iwp_sgd, ridge_solution, sgd_plain
from .transforms import default_eval_points, truncation_bias_estimate
from .validation import (
    ExponentialFamily,
    QuadraticFamily,
    Z_THRESHOLD,
    check_bernoulli_variance,
    check_bias_decomposition,
    check_regression_debias,
    check_unbiasedness,
    check_variance_bound,
    check_weierstrass_variance,
    write_report_csv,
)

_METHODS = ("real", "noisy", "iwp")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _header(cfg: ExperimentConfig, **extra) -> dict:
    head = {"tool": f"ldpdebias {__version__}", "config_hash": config_hash(cfg)}
    head.update(extra)
    return head


def _check_overwrite(paths, force: bool) -> None:
    existing = [p for p in paths if Path(p).exists()]
    if existing and not force:
        raise DataError(f"refusing to overwrite {existing[0]}; pass --force to allow")


def _released_path(out: Path, seed_index: int) -> Path:
    return out / f"released_train_seed{seed_index:04d}.csv"


def _read_required(path: Path):
    if not path.exists():
        raise DataError(f"missing input file {path}; run the earlier pipeline step first")
    return read_records_csv(path)


def cmd_datagen(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    spec = DatasetSpec(
        n=cfg.n,
        p=cfg.p,
        class_separation=cfg.class_separation,
        label_balance=cfg.label_balance,
        seed=cfg.seed,
    )
    records = generate_synthetic(spec)
    train, test = split(records, cfg.test_fraction, seed=cfg.seed + 1)
    train_path, test_path = out / "train.csv", out / "test.csv"
    _check_overwrite([train_path, test_path], force)
    head = _header(cfg, n=cfg.n, p=cfg.p, seed=cfg.seed)
    for path, part in ((train_path, train), (test_path, test)):
        x, y = records_to_arrays(part)
        write_records_csv(path, x, y, {**head, "rows": len(part)})
        print(f"wrote {path} ({len(part)} rows)")
    return 0


def cmd_release(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    x, y, _ = _read_required(out / "train.csv")
    train = arrays_to_records(x, y)
    targets = [_released_path(out, s) for s in range(cfg.n_seeds)]
    _check_overwrite(targets, force)
    for s, path in enumerate(targets):
        budget = make_budget(cfg)
        child_seed = int(np.random.SeedSequence([cfg.seed, s]).generate_state(1, np.uint64)[0])
        released, manifest = release_dataset(train, budget, child_seed)
        rx, ry = records_to_arrays(released)
        write_records_csv(path, rx, ry, {**_header(cfg), **manifest, "seed_index": s})
    print(f"wrote {cfg.n_seeds} released copies of {len(train)} records under {out}")
    return 0


def _resolve_radius(cfg: ExperimentConfig, clean_train) -> float:
    if cfg.radius > 0:
        return cfg.radius
    lam = cfg.lam if cfg.lam > 0 else 1.0
    return 10.0 * float(np.linalg.norm(ridge_solution(clean_train, lam)))


def _render_trace_figure(path: Path, traces, method: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    risks = np.vstack([t.test_risk for t in traces])
    for row in risks:
        ax.plot(traces[0].batch_index, row, color="steelblue", alpha=0.3, linewidth=0.8)
    ax.plot(traces[0].batch_index, risks.mean(axis=0), color="crimson", linewidth=1.8,
            label=f"mean of {len(traces)} seeds")
    ax.set_xlabel("batch")
    ax.set_ylabel("test risk")
    ax.set_title(f"test risk per batch ({method})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_train(cfg: ExperimentConfig, out: Path, method: str, force: bool) -> int:
    if cfg.schedule != "constant":
        raise ConfigError(
            "the CLI protocol trains with the constant schedule; "
            "use the library API for curvature-driven schedules"
        )
    glm = make_loss(cfg)
    budget = make_budget(cfg)
    x_train, y_train, _ = _read_required(out / "train.csv")
    x_test, y_test, _ = _read_required(out / "test.csv")
    test_set = (x_test, y_test)
    radius = _resolve_radius(cfg, (x_train, y_train))
    sgd_cfg = SgdConfig(
        step_size=cfg.step_size,
        schedule="constant",
        batch_size=cfg.batch_size,
        radius=radius,
        lam=cfg.lam,
        seed=cfg.seed,
    )

    trace_paths = [out / f"trace_{method}_seed{s:04d}.csv" for s in range(cfg.n_seeds)]
    summary_path = out / f"summary_{method}.csv"
    _check_overwrite(trace_paths + [summary_path], force)

    thetas, risks, accs, traces = [], [], [], []
    for s in range(cfg.n_seeds):
        if method == "real":
            model, trace = sgd_plain((x_train, y_train), glm, sgd_cfg, test_set=test_set)
        else:
            rx, ry, head = _read_required(_released_path(out, s))
            if method == "noisy":
                model, trace = sgd_plain((rx, ry), glm, sgd_cfg, test_set=test_set)
            else:
                manifest = {
                    key: float(head[key])
                    for key in ("epsilon_x", "epsilon_y", "delta", "feature_norm_bound")
                    if key in head
                }
                model, trace = iwp_sgd(
                    (rx, ry), glm, budget, sgd_cfg, test_set=test_set, manifest=manifest
                )
        risk, acc = evaluate(model.theta, test_set, glm)
        thetas.append(model.theta)
        risks.append(risk)
        accs.append(acc)
        traces.append(trace)
        _write_trace(trace_paths[s], trace, _header(cfg, method=method, seed_index=s))

    theta_bar = np.mean(np.vstack(thetas), axis=0)
    avg_risk, avg_acc = evaluate(theta_bar, test_set, glm)
    risk_var = float(np.var(risks, ddof=1)) if cfg.n_seeds > 1 else 0.0
    acc_var = float(np.var(accs, ddof=1)) if cfg.n_seeds > 1 else 0.0

    import csv as _csv

    with open(summary_path, "w", newline="") as fh:
        for key, value in _header(cfg, method=method).items():
            fh.write(f"# {key}={value}\n")
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["seed", "final_test_risk", "final_test_accuracy", "final_theta_norm",
             "risk_variance", "accuracy_variance", "averaged_model_risk",
             "averaged_model_accuracy"]
        )
        for s in range(cfg.n_seeds):
            writer.writerow(
                [s, repr(risks[s]), repr(accs[s]),
                 repr(float(np.linalg.norm(thetas[s]))), "", "", "", ""]
            )
        writer.writerow(
            ["aggregate", repr(float(np.mean(risks))), repr(float(np.mean(accs))),
             repr(float(np.linalg.norm(theta_bar))), repr(risk_var), repr(acc_var),
             repr(avg_risk), repr(avg_acc)]
        )
    _render_trace_figure(out / f"figure_train_{method}.png", traces, method)
    print(
        f"{method}: mean test risk {np.mean(risks):.6g}, mean accuracy "
        f"{np.mean(accs):.4f} over {cfg.n_seeds} seeds; wrote {summary_path}"
    )
    return 0


def _write_trace(path: Path, trace, header: dict) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(trace.COLUMNS)
        for row in trace.rows():
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])


def _render_validation_figure(path: Path, reports) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    names = [r.check_id for r in reports]
    zs = [min(abs(r.z_score), 10.0) if math.isfinite(r.z_score) else 10.0 for r in reports]
    colors = ["tab:green" if r.verdict == "pass" else
              "tab:gray" if r.verdict == "info" else "tab:red" for r in reports]
    ax.bar(range(len(reports)), zs, color=colors)
    ax.axhline(Z_THRESHOLD, color="black", linestyle="--", linewidth=1.0,
               label=f"threshold {Z_THRESHOLD:g}")
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("|z| (capped at 10)")
    ax.set_title("self-check z-scores")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_validate(cfg: ExperimentConfig, out: Path, corrupt_inverse_weight: bool) -> int:
    budget = make_budget(cfg)
    rng = np.random.default_rng(cfg.seed)
    p = cfg.p
    from .losses import ExponentialLoss, LogisticLoss, QuadraticLoss

    def unit(scale: float) -> np.ndarray:
        v = rng.standard_normal(p)
        return scale * v / np.linalg.norm(v)

    # Keep sigma^2 ||theta||^2 modest so the exponential estimator's MC
    # variance stays testable; the norms used still satisfy ||theta|| <= 1.
    theta_small = unit(min(1.0, 1.0 / math.sqrt(budget.sigma_squared())))
    x_point = unit(0.8 * budget.feature_norm_bound)
    n_mc = 200_000

    # The quadratic check uses an aligned pair with a clearly nonzero
    # margin: a corrupted label weight biases this loss proportionally to
    # the margin, so a near-orthogonal draw could mask the corruption.
    # The small norm keeps the estimator's own variance (which grows like
    # sigma^4 ||theta||^4) from drowning that bias.
    theta_q = np.zeros(p)
    theta_q[0] = 0.1
    x_q = np.zeros(p)
    x_q[0] = 0.8 * budget.feature_norm_bound
    bad_weight = 1.0 if corrupt_inverse_weight else None
    reports = [
        check_unbiasedness(
            QuadraticLoss(), theta_q, x_q, 1.0, budget, n_mc, rng,
            _inverse_weight=bad_weight,
        ),
        check_unbiasedness(ExponentialLoss(), theta_small, x_point, -1.0, budget, n_mc, rng),
        check_unbiasedness(LogisticLoss(), theta_small, x_point, 1.0, budget, n_mc, rng),
    ]
    for eps_y in (0.5, 1.0, 2.0, 5.0):
        reports.append(check_bernoulli_variance(1.7, -0.4, eps_y))
    reports.append(
        check_weierstrass_variance(
            QuadraticFamily(np.eye(p), np.zeros(p)), x_point, 0.5, n_mc, rng
        )
    )
    reports.append(
        check_weierstrass_variance(
            ExponentialFamily(unit(0.6)), x_point, 0.25, n_mc, rng
        )
    )
    for glm in (QuadraticLoss(), ExponentialLoss()):
        reports.append(check_variance_bound(glm, budget, rng=rng))
    clean = generate_synthetic(DatasetSpec(n=2000, p=p, seed=cfg.seed))
    reports.extend(
        check_bias_decomposition(
            ExponentialLoss(), unit(0.2 / math.sqrt(p)), clean, budget,
            k_terms=30, n_samples=200, rng=rng,
        )
    )
    reports.append(
        check_regression_debias(unit(0.5), x_point, 0.7, budget.sigma_squared(),
                                1.0, n_mc, rng)
    )

    report_path = out / "validation_report.csv"
    write_report_csv(report_path, reports, _header(cfg))
    _render_validation_figure(out / "figure_validation.png", reports)
    failures = [r for r in reports if r.verdict == "fail"]
    for r in reports:
        print(f"{r.check_id:40s} z={r.z_score:+10.3g} verdict={r.verdict}")
    print(f"wrote {report_path} ({len(reports)} checks, {len(failures)} failures)")
    return 1 if failures else 0


def _render_bias_scan_figure(path: Path, rows) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    orders = sorted({k for k, _, _ in rows})
    for k in orders:
        pts = [(v, b) for kk, v, b in rows if kk == k]
        ax.plot([v for v, _ in pts], [b for _, b in pts], marker="o", label=f"K={k}")
    ax.set_xlabel("margin noise variance")
    ax.set_ylabel("sup truncation bias")
    ax.set_title("series truncation bias")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_bias_scan(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    glm = make_loss(cfg)
    if glm.name == "logistic" and glm.truncation is None:
        scan_orders = range(0, 7)
    else:
        scan_orders = range(0, 5)
    variances = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
    radius = cfg.radius if cfg.radius > 0 else 1.0
    margin_bound = radius * cfg.resolved_norm_bound()
    eval_points = default_eval_points(margin_bound)
    rng = np.random.default_rng(cfg.seed)
    scan_path = out / "bias_scan.csv"
    _check_overwrite([scan_path], force)

    if glm.name == "logistic":
        scan_loss = type(glm)(truncation=None)
    else:
        scan_loss = glm
    rows = []
    for k in scan_orders:
        for v in variances:
            bias = truncation_bias_estimate(scan_loss, k, v, eval_points, 4000, rng)
            if not math.isfinite(bias):
                raise LdpDebiasError(f"non-finite bias estimate at K={k}, variance={v}")
            rows.append((k, v, bias))

    import csv as _csv

    with open(scan_path, "w", newline="") as fh:
        for key, value in _header(cfg, loss=glm.name).items():
            fh.write(f"# {key}={value}\n")
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["truncation_order", "margin_variance", "bias_sup"])
        for k, v, bias in rows:
            writer.writerow([k, repr(v), repr(bias)])
    _render_bias_scan_figure(out / "figure_bias_scan.png", rows)
    print(f"wrote {scan_path} ({len(rows)} rows)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpdebias",
        description="bias-corrected learning from one-shot locally private data releases",
    )
    parser.add_argument("--version", action="version", version=f"ldpdebias {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", type=Path, default=None, help="INI config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="allow overwriting outputs")
        sp.add_argument("--desk", action="store_true",
                        help="desk scale: n=1e5 and 20 seeds")

    add_common(sub.add_parser("datagen", help="generate clean train/test splits"))
    add_common(sub.add_parser("release", help="release the training split, once per seed"))
    train = sub.add_parser("train", help="fit one model per released copy")
    add_common(train)
    train.add_argument("--method", choices=_METHODS, required=True,
                       help="real: clean data; noisy: released, uncorrected; iwp: debiased")
    validate = sub.add_parser("validate", help="run the Monte Carlo self-checks")
    add_common(validate)
    validate.add_argument("--corrupt-inverse-weight", action="store_true",
                          help=argparse.SUPPRESS)
    add_common(sub.add_parser("bias-scan", help="tabulate series truncation bias"))
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.desk:
        cfg = desk_preset(cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "datagen":
            return cmd_datagen(cfg, out, args.force)
        if args.command == "release":
            return cmd_release(cfg, out, args.force)
        if args.command == "train":
            return cmd_train(cfg, out, args.method, args.force)
        if args.command == "validate":
            return cmd_validate(cfg, out, args.corrupt_inverse_weight)
        return cmd_bias_scan(cfg, out, args.force)
    except (ConfigError, BudgetError, BudgetMismatchError, ModeError, SeriesOrderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, LabelError, NormBoundError, OneShotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
