"""Command-line entry point: ``python -m diffusion_pinn {train,sample,evaluate,oracle}``.

Every command refuses to overwrite existing outputs and writes a JSON manifest
(config hash, seed, file-format versions) next to what it produces.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from diffusion_pinn import __version__
from diffusion_pinn.checkpoint import FORMAT_VERSION, load_checkpoint
from diffusion_pinn.config import load_config, substream_seed
from diffusion_pinn.errors import CheckpointError, ConfigError, DivergenceError, UnsupportedTargetError

FORMATS = {"checkpoint": FORMAT_VERSION, "samples_csv": 1, "train_log_csv": 1, "report_json": 1, "manifest": 1}


class CommandError(Exception):
    pass


def _fresh_file(path):
    path = Path(path)
    if path.exists():
        raise CommandError(f"refusing to overwrite existing {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _fresh_dir(path):
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        raise CommandError(f"refusing to reuse non-empty run directory {path}")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(path, command, *, seed, config_hash="", outputs=(), extra=None):
    body = {
        "command": command,
        "seed": seed,
        "config_sha256": config_hash,
        "formats": FORMATS,
        "package_version": __version__,
        "outputs": [str(Path(p).name) for p in outputs],
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    from diffusion_pinn.trainer import train, train_score_fpe

    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    tcfg = cfg.train
    if args.seed is not None:
        tcfg = replace(tcfg, seed=substream_seed(seed, "train"))
    if args.steps is not None:
        tcfg = replace(tcfg, iterations=args.steps)
    out = args.out or cfg.out
    if out is None:
        raise CommandError("no output directory: pass --out or set 'out' in the config")
    out = _fresh_dir(out)
    target = cfg.target
    meta = {"config_sha256": cfg.source_hash}
    fit = train_score_fpe if cfg.mode == "score" else train
    model, log = fit(target, tcfg, out_dir=out, metadata=meta)
    log.to_csv(out / "train_log.csv")
    outputs = sorted(p.name for p in out.glob("ckpt_*.dpc")) + ["train_log.csv"]
    if log.score_error:
        log.score_error_to_csv(out / "score_error.csv")
        outputs.append("score_error.csv")
    summary = {"final_loss": log.final_loss, "iterations": tcfg.iterations, "mode": cfg.mode, "target": target.name}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _manifest(out / "manifest.json", "train", seed=seed, config_hash=cfg.source_hash, outputs=outputs + ["summary.json"])
    print(f"trained {target.name} for {tcfg.iterations} iterations; held-out residual loss {log.final_loss:.3e}")
    return 0


# ---------------------------------------------------------------------------
# sample


def _checkpoint_target(header, config_path):
    from diffusion_pinn.targets import get_target

    if config_path is not None:
        target = load_config(config_path).target
    else:
        spec = header.get("metadata", {}).get("target")
        if not spec:
            raise CommandError("checkpoint carries no target; pass --config")
        target = get_target(spec)
    if target.dim != header["d"]:
        raise CheckpointError(f"checkpoint input dimension {header['d']} does not match target dimension {target.dim}")
    return target


def cmd_sample(args):
    from diffusion_pinn.sampler import RADIUS_DEFAULTS, SamplerConfig, sample
    from diffusion_pinn.trainer import model_from_checkpoint

    params, header = load_checkpoint(args.checkpoint)
    target = _checkpoint_target(header, args.config)
    out = _fresh_file(args.out)
    seed = 0 if args.seed is None else args.seed
    cfg = SamplerConfig(
        steps=args.steps or 1000,
        samples=args.samples or 1000,
        radius=args.radius or RADIUS_DEFAULTS.get(target.name, 20.0),
        seed=substream_seed(seed, "sample"),
    )
    model = model_from_checkpoint(params, header, target)
    result = sample(model, cfg, workers=args.workers)
    result.config.update({"checkpoint_sha256": _file_hash(args.checkpoint), "target": target.name})
    result.save(out)
    _manifest(out.with_name(out.name + ".manifest.json"), "sample", seed=seed, outputs=[out])
    print(f"wrote {len(result)} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args):
    from diffusion_pinn import metrics as mt
    from diffusion_pinn.reference import reference_samples
    from diffusion_pinn.sampler import load_samples
    from diffusion_pinn.targets import get_target, mog_perturbed

    target = load_config(args.config).target if args.config else get_target(args.target or "")
    samples = load_samples(args.samples)
    if samples.dim != target.dim:
        raise CommandError(f"samples have dimension {samples.dim}, target {target.name} has {target.dim}")
    out = _fresh_file(args.out)
    seed = 0 if args.seed is None else args.seed
    chosen = [m.strip() for m in args.metric.split(",") if m.strip()]
    report = mt.MetricsReport(target.name, samples.method, seed, len(samples))
    for metric in chosen:
        if metric == "kl":
            rng = np.random.default_rng(substream_seed(seed, "reference"))
            ref = reference_samples(target, args.reference_size or len(samples), rng)
            p = mt.project(samples.samples, target.name)
            report.kl_estimate = mt.knn_kl(p, mt.project(ref, target.name), args.k)
            report.kl_dims, report.n_reference, report.k = p.shape[1], len(ref), args.k
        elif metric == "mixing":
            if not target.modes:
                raise UnsupportedTargetError(f"target {target.name!r} has no mode descriptors")
            report.mixing_l2 = mt.mixing_error(samples, target.modes)
        elif metric == "score":
            if target.oracle is None:
                raise UnsupportedTargetError(f"score error needs an analytic oracle; {target.name!r} has none")
            if args.checkpoint is None:
                raise CommandError("the score metric needs --checkpoint")
            from diffusion_pinn.trainer import model_from_checkpoint

            params, header = load_checkpoint(args.checkpoint)
            model = model_from_checkpoint(params, header, target)
            rng = np.random.default_rng(substream_seed(seed, "eval"))
            times = (0.1, 0.3, 0.5, 0.7, 0.9)
            errs = [mt.score_l2_error(model, target.oracle, t, mog_perturbed(target.oracle, t).sample(2000, rng)) for t in times]
            report.score_l2 = float(np.mean(errs))
        else:
            raise CommandError(f"unknown metric {metric!r}; choose from kl, mixing, score")
    report.to_json(out)
    if args.results:
        report.append_csv(args.results)
    _manifest(out.with_name(out.name + ".manifest.json"), "evaluate", seed=seed, outputs=[out])
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args):
    from diffusion_pinn import theory_oracles as th

    out = _fresh_file(args.out)
    seed = 0 if args.seed is None else args.seed
    if args.kind == "figure-1":
        if args.sweep == "time":
            grid = np.round(np.linspace(0.0, 0.99, args.points), 10)
            rows = th.time_sweep(th.example_pair(args.w1), grid)
            header = ["t", "kl", "fisher", "logdensity_gap"]
        else:
            grid = np.round(np.linspace(0.1, 0.9, args.points), 10)
            rows = th.weight_sweep(grid)
            header = ["w1", "kl", "fisher", "logdensity_gap"]
    elif args.kind == "bounds":
        pairs = [th.example_pair(args.w1)] + th.random_separated_pairs(args.pairs, np.random.default_rng(substream_seed(seed, "eval")))
        header = ["pair", "quantity", "bound", "numeric", "satisfied"]
        rows = []
        for i, (kb, kn, kok, fb, fn, fok) in enumerate(th.bounds_table(pairs)):
            rows.append((i, "kl_lower", kb, kn, kok))
            rows.append((i, "fisher_upper", fb, fn, fok))
    else:
        from diffusion_pinn.targets import GaussianMixture

        rng = np.random.default_rng(substream_seed(seed, "eval"))
        means = np.array([[5.0, 5.0], [-5.0, -5.0]])
        header = ["weights", "x1", "x2", "t", "residual_norm"]
        rows = []
        pts = rng.uniform(-8, 8, size=(args.points, 2))
        ts = rng.uniform(0.01, 0.99, size=args.points)
        for w in ((0.5, 0.5), (0.2, 0.8)):
            field = th.mixture_score_field(GaussianMixture(np.array(w), means, 1.0))
            for x, t in zip(pts, ts):
                r = th.score_fpe_residual(field, x, t)
                rows.append((f"{w[0]:g}/{w[1]:g}", x[0], x[1], t, float(np.linalg.norm(r))))
    _write_csv(out, header, rows)
    _manifest(out.with_name(out.name + ".manifest.json"), f"oracle {args.kind}", seed=seed, outputs=[out])
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="diffusion-pinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the log-density (or score) PINN")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override the iteration count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples with the reverse SDE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score a sample file against its target")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--target")
    p.add_argument("--checkpoint")
    p.add_argument("--metric", default="kl,mixing")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference-size", type=int)
    p.add_argument("--results", help="CSV to append the report to")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="two-mode mixture curves, bounds and residual checks")
    p.add_argument("kind", choices=("figure-1", "bounds", "score-residual"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep", choices=("weights", "time"), default="weights")
    p.add_argument("--points", type=int, default=9)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--w1", type=float, default=0.5)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, ConfigError, CheckpointError, UnsupportedTargetError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
