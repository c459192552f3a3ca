"""Command-line entry point: gen-data, pretrain, eval, recover, starvation-demo."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .metrics import scene_extent
from .numerics.autodiff import NumericalError
from .scene import GraphPrepConfig, SceneSpec, build_dataset, load_dataset, read_sample, save_dataset
from .starvation import starvation_scaling
from .train import TrainingAbort, load_samples, load_state, metrics_csv, run_eval, run_overfit, run_pretrain, run_recover

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_NUMERIC = 0, 2, 3, 4
SLOPE_RANGE = (-1.15, -0.85)
STARVATION_LAMBDAS = (1.0, 10.0, 100.0, 1000.0)
RECOVERY_FRACTION = 0.25

def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into a config override dict."""
    out: dict[str, str] = {}
    k = 0
    while k < len(extra):
        tok = extra[k]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            k += 1
        else:
            if k + 1 >= len(extra) or extra[k + 1].startswith("--"):
                raise ConfigError(f"{key}: missing value")
            value = extra[k + 1]
            k += 2
        out[key] = value
    return out


def _config(args, extra) -> dict:
    overrides = parse_overrides(extra)
    if getattr(args, "data", None):
        overrides["run.data_dir"] = args.data
    if getattr(args, "out", None):
        overrides["run.out_dir"] = args.out
    return load_config(args.config, overrides)


def cmd_gen_data(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    if not 0.0 <= args.rho_min <= args.rho_max <= 1.0:
        raise ConfigError("rho: need 0 <= rho-min <= rho-max <= 1")
    spec = SceneSpec(num_objects=args.objects, points_per_object=args.points_per_object,
                     noise_clusters=args.noise_clusters)
    prep = GraphPrepConfig(tau_pts=args.tau_pts, k_min=args.k_min, rho_min=args.rho_min, rho_max=args.rho_max)
    try:
        spec.validate()
        samples = build_dataset(spec, prep, args.seed, n_scenes=args.scenes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    paths = save_dataset(args.out_dir, samples)
    print(f"wrote {len(paths)} samples from {args.scenes} scenes to {args.out_dir}")
    return EXIT_OK


def cmd_pretrain(args, extra) -> int:
    cfg = _config(args, extra)
    out = Path(cfg["run.out_dir"])
    if args.overfit:
        sample = read_sample(args.overfit)
        steps = args.steps or cfg["run.overfit_steps"]
        run_overfit(sample, cfg, steps, seed=cfg["seed"], out_dir=out)
        err = run_recover(out / "checkpoint", sample, cfg["eval.seed"], out / "recovered.scene")
        limit = RECOVERY_FRACTION * scene_extent(sample)
        ok = err.mean_centroid < limit
        print(f"overfit {steps} steps: mean centroid error {err.mean_centroid:.4f} "
              f"(limit {limit:.4f}) {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_CHECK
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    state = run_pretrain(cfg, resume_from=args.resume, out_dir=out)
    sys.stdout.write(metrics_csv(state.rows))
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    if args.data:
        samples = load_dataset(args.data)
    else:
        samples = load_samples(load_state(args.checkpoint)[1])
    row = run_eval(args.checkpoint, samples, args.out)
    sys.stdout.write(metrics_csv([row]))
    return EXIT_OK


def cmd_recover(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    sample = read_sample(args.sample)
    err = run_recover(args.checkpoint, sample, args.seed, args.out, args.points)
    print(f"mean centroid error {err.mean_centroid:.6g}, mean extent log-error {err.mean_extent:.6g}")
    return EXIT_OK


def starvation_table(lambdas=STARVATION_LAMBDAS, lambda_topo: float = 0.1, trials: int = 3, seed: int = 0):
    """CSV text for both regimes plus the multi-regime slope."""
    multi = starvation_scaling(lambdas, lambda_topo, trials, "multi", seed)
    single = starvation_scaling(lambdas, lambda_topo, trials, "single", seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_prior", "regime", "cum_update", "final_residual"])
    for name, res in (("multi", multi), ("single", single)):
        for lp, cu, fr in zip(res.lambdas, res.cum_update, res.final_residual):
            w.writerow([f"{lp:.17g}", name, f"{cu:.17g}", f"{fr:.17g}"])
    return buf.getvalue(), multi.slope


def cmd_starvation(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    lambdas = tuple(float(x) for x in args.lambdas.split(","))
    try:
        text, slope = starvation_table(lambdas, args.lambda_topo, args.trials, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    ok = SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]
    print(f"slope {slope:.6f} {'within' if ok else 'outside'} [{SLOPE_RANGE[0]}, {SLOPE_RANGE[1]}]")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topolayout", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic scenes and write subgraph samples")
    g.add_argument("--scenes", type=int, default=25)
    g.add_argument("--objects", type=int, default=8)
    g.add_argument("--points-per-object", type=int, default=64)
    g.add_argument("--noise-clusters", type=int, default=0)
    g.add_argument("--tau-pts", type=int, default=32)
    g.add_argument("--k-min", type=int, default=3)
    g.add_argument("--rho-min", type=float, default=0.0)
    g.add_argument("--rho-max", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain (extra --key value pairs override config keys)")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset directory (default: generate from scene.* keys)")
    p.add_argument("--gen", action="store_true", help="generate the dataset in memory (the default without --data)")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--overfit", metavar="SAMPLE", help="fit the generation loss on one sample file and check recovery")
    p.add_argument("--steps", type=int, help="overfit steps (default run.overfit_steps)")
    p.set_defaults(fn=cmd_pretrain)

    e = sub.add_parser("eval", help="clustering metrics and embedding dump for a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("recover", help="reverse-sample a scene from a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("sample")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--points", type=int, default=64)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_recover)

    s = sub.add_parser("starvation-demo", help="gradient-starvation sweep; exit 3 if the slope is off")
    s.add_argument("--lambdas", default=",".join(str(x) for x in STARVATION_LAMBDAS))
    s.add_argument("--lambda-topo", type=float, default=0.1)
    s.add_argument("--trials", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_starvation)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAbort, NumericalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
