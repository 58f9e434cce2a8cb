"""``rtolab`` command line: corpus generation, model training, latent
optimization and design evaluation.

Everything a command writes lands under ``--out``::

    corpus/      manifest, topologies, run.cfg
    models/      vae-z<d>/, surrogate/ (checkpoints, histories, run.cfg)
    traces/      trace.csv, frames/*.pgm, summary.cfg, optimal design
    figures/     PNG renderings of the above

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import numbers
import sys
from pathlib import Path

import numpy as np

from . import kvfile, plotting
from .config import ConfigError, RunConfig, load_config, parse_overrides
from .dataset import (FormatError, export_pgm, generate_corpus, load_manifest, rank_and_split, read_pgm,
                      read_topology, write_topology)
from .descent import optimize, threshold_design
from .robust import MonteCarlo, RobustConfig, robust_compliance
from .surrogate import SurrogateModel, train_surrogate
from .vae import VaeModel, generate, train_vae

log = logging.getLogger("rtolab")

RUN_CFG = "run.cfg"
VOLUME_SLACK = 0.005


# ---- helpers -----------------------------------------------------------------

def _resolve(args, flag_overrides: dict, fallback=None) -> RunConfig:
    """Config file or preset (falling back to a saved run.cfg), then
    ``--set`` pairs, then dedicated flags."""
    source = args.config if args.config is not None else fallback
    overrides = parse_overrides(getattr(args, "set", None))
    overrides.update({k: v for k, v in flag_overrides.items() if v is not None})
    return load_config(source, overrides)


def _corpus_cfg(corpus: Path):
    path = corpus / RUN_CFG
    return path if path.is_file() else None


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([kvfile.format_value(v) if isinstance(v, numbers.Real) else v for v in row])


def _history_rows(history, keys):
    # the untrained epoch-0 record is kept for the figure only
    return [[h[k] for k in keys] for h in history if h["epoch"] > 0]


def _progress(label, every):
    def report(epoch, rec):
        if epoch % every == 0:
            log.info("%s epoch %d: %s", label, epoch,
                     ", ".join(f"{k}={v:.4g}" for k, v in rec.items() if k != "epoch"))
    return report


def _read_design(path: Path, theta_min: float) -> np.ndarray:
    if path.suffix.lower() == ".pgm":
        # 8-bit luminance, black = solid
        return np.maximum(1.0 - read_pgm(path) / 255.0, theta_min)
    return read_topology(path)


# ---- commands ----------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = _resolve(args, {"n_samples": args.n, "seed": args.seed, "workers": args.workers})
    out = Path(args.out)
    corpus_dir = out / "corpus"
    spec = cfg.problem_spec()
    log.info("generating %d samples of %s into %s", cfg.n_samples, cfg.problem, corpus_dir)
    manifest = generate_corpus(spec, cfg.n_samples, cfg.robust_config(), cfg.simp_config(), cfg.seed,
                               corpus_dir, cfg.workers,
                               progress=lambda i, n: log.info("sample %d/%d", i, n) if i % 10 == 0 else None)
    if cfg.k_exclude + cfg.n_test < len(manifest):
        manifest = rank_and_split(manifest, cfg.k_exclude, cfg.n_test, cfg.split_seed)
        manifest.save()
    else:
        log.warning("corpus of %d too small for %d excluded + %d test; all samples stay in train",
                    len(manifest), cfg.k_exclude, cfg.n_test)
    cfg.save(corpus_dir / RUN_CFG)

    figures = out / "figures"
    plotting.plot_corpus(manifest.rows, figures / "corpus_qrob.png")
    ranked = sorted(manifest.rows, key=lambda r: (r.q_rob, r.id))[:8]
    plotting.plot_designs(manifest.load(ranked), figures / "corpus_best.png",
                          [f"{r.q_rob:.4g}" for r in ranked])
    q = [r.q_rob for r in manifest.rows]
    print(f"corpus: {len(manifest)} samples, q_rob min {min(q):.6g} median {np.median(q):.6g} max {max(q):.6g}")
    print(f"wrote {corpus_dir}")
    return 0


def cmd_train_vae(args) -> int:
    corpus = Path(args.corpus)
    cfg = _resolve(args, {"latent_dim": args.latent_dim, "vae_epochs": args.epochs, "vae_seed": args.seed},
                   _corpus_cfg(corpus))
    manifest = load_manifest(corpus)
    train_rows, test_rows = manifest.split("train"), manifest.split("test")
    x_train = manifest.load(train_rows)
    x_test = manifest.load(test_rows) if test_rows else np.zeros((0, *x_train.shape[1:]))
    arch = cfg.vae_architecture(x_train.shape[1:])
    log.info("VAE %s on %d train / %d test images", arch, len(x_train), len(x_test))
    model, history = train_vae(x_train, x_test, arch, cfg.vae_train_config(),
                               progress=_progress("vae", max(1, cfg.vae_epochs // 10)))

    tag = f"vae-z{arch.latent_dim}"
    model_dir = Path(args.out) / "models" / tag
    model.save(model_dir)
    keys = ["epoch", "train_total", "train_recon", "train_kl", "test_total", "test_recon", "test_kl"]
    _write_csv(model_dir / "history.csv", keys, _history_rows(history, keys))
    cfg.save(model_dir / RUN_CFG)

    # volume audit over prior samples and reconstruction-vs-prior comparison
    spec = manifest.spec()
    designable = spec.designable.ravel()
    samples = generate(model, cfg.n_generate, np.random.SeedSequence([cfg.vae_seed, 11]))
    flat = samples.reshape(len(samples), -1)
    volumes = flat[:, designable].mean(axis=1)
    audit = {
        "n_generate": len(samples),
        "volume_fraction": spec.volume_fraction,
        "max_volume": float(volumes.max()),
        "frac_over_slack": float(np.mean(volumes > spec.volume_fraction + VOLUME_SLACK)),
        "initial_test_total": history[0]["test_total"],
        "final_test_total": history[-1]["test_total"],
    }
    if len(x_test):
        mu, _ = model.encode(x_test)
        recon = model.decode(mu)
        target = x_test.reshape(len(x_test), -1)
        recon_mse = np.mean((recon - target) ** 2, axis=1)
        prior = flat[:len(x_test)] if len(flat) >= len(x_test) else flat[np.arange(len(x_test)) % len(flat)]
        prior_mse = np.mean((prior - target) ** 2, axis=1)
        audit["recon_beats_prior"] = float(np.mean(recon_mse < prior_mse))
        plotting.plot_designs(list(x_test[:4]) + list(recon[:4].reshape(-1, *arch.shape)),
                              Path(args.out) / "figures" / f"{tag}_reconstructions.png",
                              ["test"] * 4 + ["reconstruction"] * 4)
    kvfile.dump(audit, model_dir / "audit.cfg", header="VAE audit")

    figures = Path(args.out) / "figures"
    plotting.plot_history(history, ["train_total", "test_total"], figures / f"{tag}_loss.png",
                          f"VAE |z|={arch.latent_dim}", logy=True)
    plotting.plot_designs(samples[:16], figures / f"{tag}_samples.png")
    print(f"VAE |z|={arch.latent_dim}: test loss {audit['initial_test_total']:.6g} -> "
          f"{audit['final_test_total']:.6g}; {100 * audit['frac_over_slack']:.2f}% of "
          f"{len(samples)} samples above volume {spec.volume_fraction + VOLUME_SLACK:g}")
    print(f"wrote {model_dir}")
    return 0


def cmd_train_surrogate(args) -> int:
    corpus = Path(args.corpus)
    cfg = _resolve(args, {"sur_epochs": args.epochs, "sur_seed": args.seed}, _corpus_cfg(corpus))
    manifest = load_manifest(corpus)
    fit_rows = manifest.split("train") + manifest.split("excluded")
    test_rows = manifest.split("test")
    x = manifest.load(fit_rows)
    y = [r.q_rob for r in fit_rows]
    holdout = None
    if test_rows:
        holdout = (manifest.load(test_rows), [r.q_rob for r in test_rows], [r.id for r in test_rows])
    model, report, history = train_surrogate(x, y, cfg.surrogate_config(), holdout,
                                             progress=_progress("surrogate", max(1, cfg.sur_epochs // 10)))

    model_dir = Path(args.out) / "models" / "surrogate"
    model.save(model_dir)
    _write_csv(model_dir / "history.csv", ["epoch", "train_mse"], _history_rows(history, ["epoch", "train_mse"]))
    _write_csv(model_dir / "regression.csv", ["id", "q_rob", "predicted"],
               zip(report.ids, report.true.tolist(), report.predicted.tolist()))
    kvfile.dump({"split": "test" if holdout else "train", "n": len(report.true), "mse": report.mse,
                 "r2": report.r2, "pearson": report.pearson}, model_dir / "report.cfg",
                header="surrogate regression report")
    cfg.save(model_dir / RUN_CFG)

    figures = Path(args.out) / "figures"
    plotting.plot_history(history, ["train_mse"], figures / "surrogate_loss.png", "surrogate", logy=True)
    plotting.plot_regression(report.true, report.predicted, figures / "surrogate_regression.png",
                             f"r = {report.pearson:.3f}")
    print(f"surrogate: held-out pearson {report.pearson:.4f}, r2 {report.r2:.4f}")
    print(f"wrote {model_dir}")
    return 0


def cmd_optimize(args) -> int:
    corpus = Path(args.corpus)
    cfg = _resolve(args, {"eta": args.eta, "descent_seed": args.seed, "max_iters": args.max_iters},
                   _corpus_cfg(corpus))
    manifest = load_manifest(corpus)
    spec = manifest.spec()
    robust_cfg = cfg.robust_config()
    vae = VaeModel.load(args.vae)
    surrogate = SurrogateModel.load(args.surrogate)
    if vae.arch.shape != spec.grid.shape or surrogate.shape != spec.grid.shape:
        raise ValueError(f"model image shapes {vae.arch.shape}/{surrogate.shape} do not match "
                         f"the corpus grid {spec.grid.shape}")
    train_rows = manifest.split("train")
    best_row = min(train_rows, key=lambda r: (r.q_rob, r.id))
    descent_cfg = cfg.descent_config()
    result = optimize(vae, surrogate, spec, robust_cfg, descent_cfg, best_row.q_rob)

    out = Path(args.out) / "traces"
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, trace in enumerate(result.traces):
        fe_at = {it: fe for it, _, fe in trace.checkpoints}
        running = np.minimum.accumulate(trace.q)
        for it, (z, q) in enumerate(zip(trace.zs, trace.q)):
            rows.append([k, it, float(q), float(running[it]), fe_at.get(it, ""), *map(float, z)])
        for it in sorted(fe_at):
            theta = vae.decode(trace.zs[it])[0].reshape(spec.grid.shape)
            theta[spec.passive] = spec.theta_min
            export_pgm(theta, frames / f"restart{k}_{it:04d}.pgm")
    z_cols = [f"z{i}" for i in range(vae.latent_dim)]
    _write_csv(out / "trace.csv", ["restart", "iter", "q_nn", "q_nn_best", "fe_q_rob", *z_cols], rows)

    final = threshold_design(result.theta, spec)
    write_topology(out / "optimal.rtod", final)
    export_pgm(final, out / "optimal.pgm")
    summary = result.summary()
    summary["best_training_id"] = best_row.id
    summary["eta"] = descent_cfg.eta
    kvfile.dump(summary, out / "summary.cfg", header="latent descent summary")
    cfg.save(out / RUN_CFG)

    figures = Path(args.out) / "figures"
    plotting.plot_trace(result.traces, figures / "descent_trace.png", best_row.q_rob)
    best_train = manifest.load([best_row])[0]
    plotting.plot_designs([best_train, final], figures / "optimal_design.png",
                          [f"best training {best_row.q_rob:.5g}", f"latent descent {result.fe.q_rob:.5g}"],
                          ncols=2)
    verdict = "strict improvement" if summary["strict_improvement"] else "no strict improvement"
    print(f"best training q_rob {best_row.q_rob:.6g}; optimized q_rob {result.fe.q_rob:.6g} "
          f"({summary['improvement_pct']:+.2f}%, {verdict}, source {result.source})")
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args, {"lam": args.lam})
    spec = cfg.problem_spec()
    theta = _read_design(Path(args.design), spec.theta_min)
    if theta.shape != spec.grid.shape:
        raise FormatError(f"design shape {theta.shape} does not match the configured grid {spec.grid.shape}")
    quad = robust_compliance(theta, spec, cfg.robust_config())
    print(f"q_rob = {quad.q_rob!r}")
    print(f"mean = {quad.mean!r}")
    print(f"std = {quad.std!r}")
    if args.mc:
        mc = robust_compliance(theta, spec, RobustConfig(cfg.lam, MonteCarlo(args.mc, args.mc_seed)))
        print(f"mc_q_rob = {mc.q_rob!r}")
        print(f"mc_mean = {mc.mean!r}")
        print(f"mc_std = {mc.std!r}")
        print(f"mc_rel_diff = {abs(mc.q_rob - quad.q_rob) / abs(quad.q_rob)!r}")
    return 0


# ---- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtolab", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required,
                        help="config file or preset name (l-bracket-30, heat-sink-32, ...)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("generate-data", help="SIMP corpus over sampled load realizations")
    common(g, config_required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.set_defaults(func=cmd_generate_data)

    v = sub.add_parser("train-vae", help="train the variational autoencoder")
    common(v)
    v.add_argument("--corpus", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--latent-dim", type=int)
    v.add_argument("--epochs", type=int)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_train_vae)

    s = sub.add_parser("train-surrogate", help="train the robust-compliance regressor")
    common(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train_surrogate)

    o = sub.add_parser("optimize", help="multi-start gradient descent in latent space")
    common(o)
    o.add_argument("--corpus", required=True)
    o.add_argument("--vae", required=True)
    o.add_argument("--surrogate", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--eta", type=float)
    o.add_argument("--max-iters", type=int)
    o.add_argument("--seed", type=int)
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("evaluate", help="robust compliance of a topology file")
    common(e, config_required=True)
    e.add_argument("--design", required=True, help=".rtod topology or .pgm image")
    e.add_argument("--mc", type=int, default=0, help="Monte Carlo cross-check sample count")
    e.add_argument("--mc-seed", type=int, default=0)
    e.add_argument("--lambda", dest="lam", type=float)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 after --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rtolab: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        if args.verbose:
            log.exception("command failed")
        print(f"rtolab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
