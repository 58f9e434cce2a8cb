"""Corpus of deterministic optima: generation, labelling, splitting and I/O.

Layout of a corpus directory::

    corpus.cfg            metadata (problem params, lambda, quadrature, seed, hash)
    manifest.csv          one row per topology
    topologies/000017.rtod

Topology files are ``b"RTOD"``, then little-endian u32 ``version, nx, ny``,
then ``nx * ny`` little-endian float32 densities, row-major from the top-left.
"""
from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kvfile
from .grid import ProblemSpec, build_problem
from .robust import MonteCarlo, Quadrature, RobustConfig, UncertainScalar, robust_compliance, sample_xi
from .simp import SimpConfig, run_simp

log = logging.getLogger(__name__)

MAGIC = b"RTOD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "test", "excluded")
MANIFEST_FIELDS = ("id", "xi", "q_rob", "q_mean", "q_std", "split", "path")
MAX_FAILURE_RATE = 0.05


class FormatError(ValueError):
    pass


class CorpusError(RuntimeError):
    pass


def write_topology(path, theta) -> None:
    theta = np.asarray(theta)
    if theta.ndim != 2:
        raise ValueError("topology must be a 2-D array (ny, nx)")
    ny, nx = theta.shape
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, nx, ny) + theta.astype("<f4").tobytes())


def read_topology(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a topology file as a float64 ``(ny, nx)`` array."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if shape is not None and (ny, nx) != tuple(shape):
        raise FormatError(f"{path}: dimension mismatch, file is {ny}x{nx}, expected {shape[0]}x{shape[1]}")
    expected = _HEADER.size + 4 * nx * ny
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(ny, nx)


def export_pgm(theta, path) -> None:
    """Binary greyscale image; solid material renders black."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError("expected a 2-D field")
    pixels = np.rint(255.0 * (1.0 - np.clip(theta, 0.0, 1.0))).astype(np.uint8)
    ny, nx = theta.shape
    Path(path).write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4], dtype=np.uint8, count=nx * ny).reshape(ny, nx)


@dataclass
class ManifestRow:
    id: int
    xi: float
    q_rob: float
    q_mean: float
    q_std: float
    split: str = "train"
    path: str = ""


@dataclass
class CorpusManifest:
    meta: dict
    rows: list[ManifestRow] = field(default_factory=list)
    root: Path | None = None

    def __len__(self):
        return len(self.rows)

    def split(self, tag: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == tag]

    def spec(self) -> ProblemSpec:
        return build_problem(problem_params(self.meta))

    def load(self, rows=None, shape=None) -> np.ndarray:
        """Stack topologies for ``rows`` (default: all) as ``(n, ny, nx)``."""
        rows = self.rows if rows is None else rows
        return np.stack([read_topology(self.root / r.path, shape) for r in rows])

    def save(self, root=None) -> None:
        root = Path(root or self.root)
        root.mkdir(parents=True, exist_ok=True)
        kvfile.dump(self.meta, root / "corpus.cfg", header="rtolab corpus metadata")
        (root / "manifest.csv").write_text(manifest_csv(self.rows), encoding="utf-8")
        self.root = root


def manifest_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_FIELDS)
    for r in rows:
        w.writerow([r.id, repr(r.xi), repr(r.q_rob), repr(r.q_mean), repr(r.q_std), r.split, r.path])
    return buf.getvalue()


def load_manifest(root) -> CorpusManifest:
    root = Path(root)
    meta = kvfile.load(root / "corpus.cfg")
    rows = []
    with open(root / "manifest.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise FormatError(f"{root}/manifest.csv: unexpected header {reader.fieldnames}")
        for rec in reader:
            if rec["split"] not in SPLITS:
                raise FormatError(f"unknown split tag {rec['split']!r}")
            rows.append(ManifestRow(int(rec["id"]), float(rec["xi"]), float(rec["q_rob"]),
                                    float(rec["q_mean"]), float(rec["q_std"]), rec["split"], rec["path"]))
    if len({r.id for r in rows}) != len(rows):
        raise FormatError("duplicate ids in manifest")
    return CorpusManifest(meta, rows, root)


PROBLEM_PREFIX = "problem."


def problem_params(meta: dict) -> dict:
    n = len(PROBLEM_PREFIX)
    return {k[n:]: v for k, v in meta.items() if k.startswith(PROBLEM_PREFIX)}


def spec_hash(spec: ProblemSpec) -> str:
    text = kvfile.dumps(dict(sorted(spec.params.items())))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _estimator_meta(cfg: RobustConfig) -> dict:
    est = cfg.estimator
    if isinstance(est, Quadrature):
        return {"estimator": "quadrature", "quadrature_m": est.m}
    return {"estimator": "montecarlo", "mc_n": est.n, "mc_seed": est.seed}


def robust_config_from_meta(meta: dict) -> RobustConfig:
    if meta.get("estimator", "quadrature") == "quadrature":
        return RobustConfig(float(meta["lambda"]), Quadrature(int(meta.get("quadrature_m", 7))))
    return RobustConfig(float(meta["lambda"]), MonteCarlo(int(meta["mc_n"]), int(meta["mc_seed"])))


def _one_sample(args):
    spec, xi, simp_cfg, robust_cfg = args
    if isinstance(spec, dict):
        spec = build_problem(spec)
    try:
        res = run_simp(spec, xi, simp_cfg)
        # label exactly what gets stored on disk
        theta = res.theta_star.astype("<f4").astype(np.float64)
        rob = robust_compliance(theta, spec, robust_cfg)
    except Exception as exc:  # one bad realization must not sink the corpus
        return None, f"{type(exc).__name__}: {exc}"
    return (theta, rob, res.converged), None


def generate_corpus(spec: ProblemSpec, n: int, robust_cfg: RobustConfig, simp_cfg: SimpConfig,
                    seed: int, out_dir, workers: int = 1, progress=None) -> CorpusManifest:
    """Run SIMP at ``n`` sampled realizations, label each optimum with its
    robust compliance and write the corpus under ``out_dir``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(out_dir)
    (root / "topologies").mkdir(parents=True, exist_ok=True)
    xis = sample_xi(UncertainScalar(*spec.xi_range), n, seed)
    if workers > 1:
        # specs are rebuilt from their params inside each worker
        jobs = [(spec.params, float(xi), simp_cfg, robust_cfg) for xi in xis]
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_sample, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        results = []
        for i, xi in enumerate(xis):
            results.append(_one_sample((spec, float(xi), simp_cfg, robust_cfg)))
            if progress:
                progress(i + 1, n)

    rows, failures, unconverged = [], [], 0
    for i, (xi, (out, err)) in enumerate(zip(xis, results)):
        if out is None:
            failures.append((i, err))
            log.warning("sample %d (xi=%.6f) failed: %s", i, xi, err)
            continue
        theta, rob, converged = out
        unconverged += not converged
        rel = f"topologies/{i:06d}.rtod"
        write_topology(root / rel, theta)
        rows.append(ManifestRow(i, float(xi), rob.q_rob, rob.mean, rob.std, "train", rel))
    if len(failures) > MAX_FAILURE_RATE * n:
        raise CorpusError(f"{len(failures)} of {n} SIMP runs failed; first: {failures[0][1]}")

    meta = {
        "spec_hash": spec_hash(spec),
        "lambda": robust_cfg.lam,
        **_estimator_meta(robust_cfg),
        "seed": seed,
        "n_requested": n,
        "n_failed": len(failures),
        "n_unconverged": unconverged,
        "k_exclude": 0,
        "n_test": 0,
        "split_seed": "none",
        **{f"simp.{k}": v for k, v in simp_cfg.__dict__.items()},
        **{PROBLEM_PREFIX + k: v for k, v in spec.params.items()},
    }
    manifest = CorpusManifest(meta, rows, root)
    manifest.save()
    return manifest


def rank_and_split(manifest: CorpusManifest, k_exclude: int, n_test: int, seed) -> CorpusManifest:
    """Tag the ``k_exclude`` best (lowest q_rob) samples as excluded, then draw
    ``n_test`` of the rest at random as the test split."""
    total = len(manifest.rows)
    if k_exclude < 0 or n_test < 0:
        raise ValueError("counts must be non-negative")
    if k_exclude + n_test >= total:
        raise CorpusError(f"corpus of {total} cannot supply {k_exclude} excluded + {n_test} test samples")
    ranked = sorted(manifest.rows, key=lambda r: (r.q_rob, r.id))
    excluded = {r.id for r in ranked[:k_exclude]}
    rest = sorted(r.id for r in ranked[k_exclude:])
    rng = np.random.default_rng(seed)
    test = {rest[i] for i in rng.choice(len(rest), size=n_test, replace=False)} if n_test else set()
    rows = []
    for r in manifest.rows:
        tag = "excluded" if r.id in excluded else "test" if r.id in test else "train"
        rows.append(replace(r, split=tag))
    meta = dict(manifest.meta, k_exclude=k_exclude, n_test=n_test, split_seed=seed)
    return CorpusManifest(meta, rows, manifest.root)
