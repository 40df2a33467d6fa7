"""Command-line interface: train, eval, gradcheck, sweep.

Exit codes: 0 success, 1 configuration or data error, 2 gradient-check
threshold failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import data as datamod
from . import engine, gradcheck
from .network import Example, EpConfig, init_network
from .oim import DivergenceError

METRIC_COLUMNS = ("epoch", "train_acc", "test_acc", "mean_loss", "wall_time")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _resolve_run_config(args) -> cfgmod.RunConfig:
    overrides = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise cfgmod.ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data_dir is not None:
        overrides["data_dir"] = args.data_dir
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return cfgmod.resolve(args.preset, args.config, overrides)


def _load_data(run: cfgmod.RunConfig):
    data_dir = run.data_dir or datamod.default_data_dir()
    return datamod.load_dataset(data_dir, run.dataset, seed=run.seed)


def _append_metrics(path: Path, rows, header: bool) -> None:
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(METRIC_COLUMNS)
        for m in rows:
            writer.writerow(
                [m.epoch, repr(m.train_accuracy), repr(m.test_accuracy),
                 repr(m.train_loss), f"{m.wall_time:.3f}"]
            )


def cmd_train(args) -> int:
    try:
        run = _resolve_run_config(args)
        train_ds, test_ds = _load_data(run)
    except (cfgmod.ConfigError, FileNotFoundError, datamod.IdxError) as exc:
        return _fail(str(exc))

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfgmod.write_config(run, out_dir / "config.txt")
    cfg, hw = run.ep_config(), run.hardware_config()

    initial, start_epoch = None, 0
    if args.resume:
        try:
            initial, saved_cfg, saved_hw, start_epoch, saved_seed = ckpt.load_checkpoint(
                args.resume
            )
        except (OSError, ckpt.CheckpointError) as exc:
            return _fail(str(exc))
        stale = {
            k: (v, dataclasses.asdict(cfg)[k])
            for k, v in dataclasses.asdict(saved_cfg).items()
            if k != "epochs" and dataclasses.asdict(cfg)[k] != v
        }
        if stale or saved_seed != run.seed:
            print(f"warning: resumed config differs from checkpoint: {stale}",
                  file=sys.stderr)

    targets = datamod.encode_targets(train_ds.labels, 10, low=run.target_low)
    metrics_path = out_dir / "metrics.csv"
    fresh = start_epoch == 0
    if fresh and metrics_path.exists():
        metrics_path.unlink()

    interval = run.checkpoint_interval

    def on_epoch(metrics, net):
        _append_metrics(metrics_path, [metrics],
                        header=metrics.epoch == 0 and not metrics_path.exists())
        done = metrics.epoch + 1
        if done % interval == 0 or done == cfg.epochs:
            ckpt.save_checkpoint(
                out_dir / f"checkpoint-epoch{done:04d}.oimck",
                net, cfg, hw, done, run.seed,
            )
        print(
            f"epoch {metrics.epoch:3d}  train {metrics.train_accuracy:.4f}  "
            f"test {metrics.test_accuracy:.4f}  loss {metrics.train_loss:.4f}  "
            f"({metrics.wall_time:.1f}s)",
            flush=True,
        )

    try:
        result = engine.train(
            train_ds.images, train_ds.labels, targets, cfg, hw,
            callbacks=[on_epoch],
            n_h=run.n_h,
            test_images=test_ds.images,
            test_labels=test_ds.labels,
            initial=initial,
            start_epoch=start_epoch,
        )
    except DivergenceError as exc:
        return _fail(f"training aborted: {exc}")
    ckpt.save_checkpoint(
        out_dir / "checkpoint-final.oimck", result.net, cfg, hw, cfg.epochs, run.seed
    )
    if result.history:
        print(f"final test accuracy: {result.history[-1].test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    try:
        net, cfg, hw, epoch, seed = ckpt.load_checkpoint(args.checkpoint)
    except (OSError, ckpt.CheckpointError) as exc:
        return _fail(str(exc))
    try:
        data_dir = args.data_dir or datamod.default_data_dir()
        _, test_ds = datamod.load_dataset(data_dir, args.dataset, seed=seed)
    except (FileNotFoundError, datamod.IdxError) as exc:
        return _fail(str(exc))
    # same stream keys as the final in-training evaluation
    accuracy, confusion = engine.evaluate(
        net, test_ds.images, test_ds.labels, cfg, hw, epoch=max(epoch - 1, 0), n_y=10
    )
    print(f"test accuracy: {accuracy:.4f}  ({len(test_ds)} examples)")
    print("confusion matrix (rows = true class, columns = predicted):")
    for row in confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "checkpoint": str(args.checkpoint),
        "dataset": args.dataset,
        "epoch": epoch,
        "test_accuracy": accuracy,
        "confusion": confusion.tolist(),
        "per_class_accuracy": [
            (row[i] / row.sum() if row.sum() else 0.0)
            for i, row in enumerate(confusion)
        ],
    }
    with open(out_dir / "eval_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return 0


def _parse_grid(raw: str, kind=float):
    return [kind(tok) for tok in raw.split(",") if tok.strip()]


def cmd_gradcheck(args) -> int:
    sizes = _parse_grid(args.toy_sizes, int)
    if len(sizes) != 3:
        return _fail("--toy-sizes expects n_x,n_h,n_y")
    n_x, n_h, n_y = sizes
    n_params = n_x * n_h + n_h * n_y + n_h + n_y
    if n_params > 2000:
        return _fail(
            f"{n_params} parameters is too many for the finite-difference "
            f"oracle (limit 2000); use smaller --toy-sizes"
        )
    cfg = EpConfig(
        beta=0.01,
        epsilon=args.epsilon,
        free_steps=args.free_steps,
        nudge_steps=args.nudge_steps,
        batch_size=1,
        epochs=0,
        seed=args.seed or 0,
    )
    rng = np.random.default_rng(cfg.seed)
    net = init_network(n_x, n_h, n_y, cfg.seed)
    example = Example(
        x=rng.uniform(0.0, 1.0, n_x),
        target=rng.choice([-1.0, 1.0], n_y),
    )

    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    betas = _parse_grid(args.beta_grid)
    curve_betas = _parse_grid(args.curve_betas)
    verdicts: list[tuple[str, bool]] = []

    fd = gradcheck.fd_loss_gradient(net, example, cfg, delta=args.delta)
    bptt = gradcheck.bptt_loss_gradient(net, example, cfg)
    oracle = gradcheck.compare(bptt, fd)
    verdicts.append(("BPTT vs FD rel. L2 < 1e-4", oracle.relative_l2_error < 1e-4))

    fd_neg = fd.scaled(-1.0)
    rel_errors = []
    for beta in sorted(betas, reverse=True):
        ep = _ep_estimate(net, example, cfg, beta, corrupt=args.corrupt_sign)
        comp = gradcheck.compare(ep, fd_neg)
        rel_errors.append(comp.relative_l2_error)
        print(f"beta={beta:<8g} cos={comp.cosine_similarity:+.6f} "
              f"rel_l2={comp.relative_l2_error:.3e}")
    verdicts.append(
        ("EP vs -FD error decreases with beta",
         all(a > b for a, b in zip(rel_errors, rel_errors[1:]))),
    )
    verdicts.append((f"EP vs -FD cosine > 0.999 at beta={min(betas)}",
                     comp.cosine_similarity > 0.999))

    curve = gradcheck.instantaneous_ep_curve(net, example, cfg, curve_betas)
    gradcheck.write_curve_csv(curve, out_dir / "ep_bptt_curve.csv")
    devs = [curve.max_deviation(b) for b in sorted(curve_betas, reverse=True)]
    verdicts.append(
        ("per-step EP-BPTT deviation shrinks as beta halves",
         all(a > b for a, b in zip(devs, devs[1:]))),
    )
    ep_end = _ep_estimate(net, example, cfg, min(curve_betas),
                          corrupt=args.corrupt_sign)
    end = gradcheck.compare(ep_end, bptt.scaled(-1.0))
    verdicts.append((f"EP vs BPTT endpoint cosine > 0.999",
                     end.cosine_similarity > 0.999))

    failed = False
    for label, ok in verdicts:
        print(f"{'PASS' if ok else 'FAIL'}: {label}")
        failed |= not ok
    print(f"curve written to {out_dir / 'ep_bptt_curve.csv'}")
    return 2 if failed else 0


def _ep_estimate(net, example, cfg, beta, corrupt=False):
    from .network import ep_gradient

    run_cfg = dataclasses.replace(cfg, beta=beta)
    phases = engine.run_three_phases(net, example, run_cfg)
    grad = ep_gradient(phases.phi_plus, phases.phi_minus, example.x, beta, net.n_h)
    if corrupt:  # negative-control hook for the test suite
        grad.g_w_hy = -grad.g_w_hy
    return grad


_SWEEP_FIELD = {
    "noise": ("noise_xi", float),
    "phase_bits": ("phase_bits", int),
    "param_bits": ("param_bits", int),
    "beta": ("beta", float),
}


def cmd_sweep(args) -> int:
    try:
        base = _resolve_run_config(args)
        # cells re-split mnist100 per seed, so load the full parent sets
        load_name = "mnist" if base.dataset == "mnist100" else base.dataset
        data_dir = base.data_dir or datamod.default_data_dir()
        train_ds, test_ds = datamod.load_dataset(data_dir, load_name, seed=base.seed)
    except (cfgmod.ConfigError, FileNotFoundError, datamod.IdxError) as exc:
        return _fail(str(exc))
    field, kind = _SWEEP_FIELD[args.axis]
    values = _parse_grid(args.values, kind)
    betas = _parse_grid(args.beta_grid) if args.beta_grid else [base.beta]
    seeds = _parse_grid(args.seeds, int) if args.seeds else [base.seed]

    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "sweep.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "beta", "seed", "final_test_acc", "status"])
        for value in values:
            for beta in betas:
                for seed in seeds:
                    updates = {"seed": seed, "beta": beta, field: value}
                    run = dataclasses.replace(base, **updates)
                    cell = f"{args.axis}{value}-beta{beta}-seed{seed}"
                    cell_dir = out_dir / cell
                    cell_dir.mkdir(parents=True, exist_ok=True)
                    cfgmod.write_config(run, cell_dir / "config.txt")
                    t0 = time.perf_counter()
                    try:
                        acc = _train_cell(run, train_ds, test_ds, cell_dir)
                        writer.writerow(
                            [args.axis, value, beta, seed, repr(acc), "ok"]
                        )
                        print(f"{cell}: acc={acc:.4f} "
                              f"({time.perf_counter() - t0:.0f}s)", flush=True)
                    except Exception as exc:  # keep sweeping on cell failure
                        writer.writerow(
                            [args.axis, value, beta, seed, "", f"error: {exc}"]
                        )
                        print(f"{cell}: FAILED ({exc})", flush=True)
                    fh.flush()
    print(f"sweep table written to {sweep_path}")
    return 0


def _train_cell(run, full_train, full_test, cell_dir) -> float:
    # mnist100 resampled per seed, matching a fresh `train` invocation
    if run.dataset == "mnist100":
        train_ds, test_ds = datamod.make_mnist100(full_train, full_test, run.seed)
    else:
        train_ds, test_ds = full_train, full_test
    targets = datamod.encode_targets(train_ds.labels, 10, low=run.target_low)
    cfg, hw = run.ep_config(), run.hardware_config()
    rows = []
    result = engine.train(
        train_ds.images, train_ds.labels, targets, cfg, hw,
        callbacks=[lambda m, _net: rows.append(m)],
        n_h=run.n_h,
        test_images=test_ds.images,
        test_labels=test_ds.labels,
    )
    _append_metrics(cell_dir / "metrics.csv", rows, header=True)
    return result.history[-1].test_accuracy if result.history else float("nan")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--preset", help="named preset (e.g. mnist100-paper)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a single config field (repeatable)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--data-dir", help="dataset directory "
                        "(default $OIMEP_DATA_DIR or ./data)")
    parser.add_argument("--out-dir", help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oimep",
        description="Equilibrium propagation on simulated oscillator Ising machines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network")
    _add_common(p_train)
    p_train.add_argument("--resume", metavar="CHECKPOINT",
                         help="continue from a saved checkpoint")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--dataset", default="mnist100",
                        choices=["mnist", "fmnist", "mnist100"])
    p_eval.add_argument("--data-dir")
    p_eval.add_argument("--out-dir")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck",
                            help="validate EP against BPTT and finite differences")
    p_grad.add_argument("--toy-sizes", default="6,4,3",
                        help="n_x,n_h,n_y for the toy network")
    p_grad.add_argument("--epsilon", type=float, default=0.15)
    p_grad.add_argument("--free-steps", type=int, default=3000)
    p_grad.add_argument("--nudge-steps", type=int, default=1200)
    p_grad.add_argument("--delta", type=float, default=1e-5)
    p_grad.add_argument("--beta-grid", default="0.1,0.03,0.01,0.003")
    p_grad.add_argument("--curve-betas", default="0.02,0.01,0.005")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out-dir")
    p_grad.add_argument("--corrupt-sign", action="store_true",
                        help=argparse.SUPPRESS)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_sweep = sub.add_parser("sweep", help="train across a parameter grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=sorted(_SWEEP_FIELD))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated grid values")
    p_sweep.add_argument("--beta-grid",
                         help="optional joint beta grid (axis x beta)")
    p_sweep.add_argument("--seeds", help="comma-separated seeds per cell")
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
