"""Config-driven studies: phantom and external data, all reconstructors, reports.

A study is described by one JSON-serialisable :class:`ExperimentConfig`.
``run_study`` builds (or ingests) the data, runs every requested method and
writes recon containers, amplified error maps, ``report.json`` and an aligned
``report.txt`` table into ``output_dir``. ``grid_search`` sweeps the Cartesian
product of ``cfg.grid`` for one method and ranks the points by NMSE.
"""
from __future__ import annotations

import copy
import dataclasses
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from discus.classical import CSParams, LSParams, cs_wavelet_recon, ls_recon
from discus.data_model import (
    DivergenceError,
    ImageSeries,
    KSpaceDataset,
    SensMaps,
    load_container,
    save_container,
)
from discus.metrics import evaluate
from discus.neural import FitConfig, GeneratorConfig, discus_fit
from discus.operator import add_noise, full_mask, ifft2c, simulate_kspace
from discus.phantom import MotionSpec, make_motion_series, shepp_logan, synth_coil_maps
from discus.sampling import MaskParams, gro_mask, vd_random_mask

log = logging.getLogger(__name__)

STUDIES = ("shepp_rotation", "shepp_translation", "shepp_both", "external_lge")
METHODS = ("cs", "ls", "dip", "discus_gs", "discus")
NEURAL = ("dip", "discus_gs", "discus")

# (rotation_deg_max, shift_px_max) of the phantom studies
MOTION = {"shepp_rotation": (3.0, 0.0), "shepp_translation": (0.0, 3.0), "shepp_both": (3.0, 3.0)}

_BLOCKS = {"cs": CSParams, "ls": LSParams, "generator": GeneratorConfig, "fit": FitConfig}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    study: str = "shepp_rotation"
    size: int = 64
    T: int = 32
    R: float = 3.0
    snr_db: float | None = None
    seed: int = 0
    n_coils: int = 1
    acs: int = 4
    density_power: float = 1.5
    methods: list = field(default_factory=lambda: list(METHODS))
    cs: CSParams = field(default_factory=CSParams)
    ls: LSParams = field(default_factory=LSParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    grid: dict | None = None
    output_dir: str | None = None
    input_path: str | None = None
    error_amplification: float = 5.0

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}, got {self.study!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown or empty methods {bad or self.methods}; choose from {METHODS}")
        if self.size < 16 or self.T < 1 or self.n_coils < 1:
            raise ConfigError("size must be >= 16, T and n_coils positive")
        if self.study == "external_lge" and not self.input_path:
            raise ConfigError("external_lge needs input_path (a fully sampled kspace container)")
        if self.error_amplification <= 0:
            raise ConfigError("error_amplification must be positive")
        if self.grid is not None:
            if not isinstance(self.grid, dict):
                raise ConfigError("grid must map 'block.param' to a list of values")
            for key, values in self.grid.items():
                _check_grid_key(key)
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"grid entry {key!r} needs a non-empty list")

    # --- JSON round trip ---

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            for block, kind in _BLOCKS.items():
                if block in d:
                    if not isinstance(d[block], dict):
                        raise ConfigError(f"{block!r} must be an object")
                    d[block] = kind(**d[block])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def with_overrides(self, overrides):
        """Copy with ``{"block.param": value}`` / ``{"param": value}`` applied."""
        d = copy.deepcopy(self.to_dict())
        for key, value in overrides.items():
            _check_grid_key(key)
            if "." in key:
                block, name = key.split(".", 1)
                d[block][name] = value
            else:
                d[key] = value
        return ExperimentConfig.from_dict(d)


def _check_grid_key(key):
    if "." in key:
        block, name = key.split(".", 1)
        kind = _BLOCKS.get(block)
        if kind is None or name not in {f.name for f in dataclasses.fields(kind)}:
            raise ConfigError(f"grid key {key!r} does not name a parameter")
    elif key not in {f.name for f in dataclasses.fields(ExperimentConfig)} or key in _BLOCKS:
        raise ConfigError(f"grid key {key!r} does not name a parameter")


# --- data --------------------------------------------------------------------


def study_truth(cfg):
    """Ground-truth series of a phantom study."""
    if cfg.study not in MOTION:
        raise ConfigError(f"{cfg.study} has no synthetic ground truth")
    rot, shift = MOTION[cfg.study]
    return make_motion_series(shepp_logan(cfg.size), cfg.T, MotionSpec(rot, shift, seed=cfg.seed))


def study_mask(cfg, n_pe=None):
    n_pe = cfg.size if n_pe is None else n_pe
    t = cfg.T
    p = MaskParams(n_pe, t, cfg.R, cfg.acs, cfg.seed, cfg.density_power)
    return gro_mask(p) if cfg.study == "external_lge" else vd_random_mask(p)


def study_sens(cfg, h=None, w=None):
    h = cfg.size if h is None else h
    w = cfg.size if w is None else w
    return SensMaps.unit(h, w) if cfg.n_coils == 1 else synth_coil_maps(cfg.n_coils, h, w)


def coil_combine(full):
    """Sensitivity-weighted combination of fully sampled multicoil k-space."""
    return np.sum(np.conj(full.sens.maps)[None] * ifft2c(np.asarray(full.samples)), axis=1)


def retrospective_undersample(full, mask):
    """Keep only the lines of ``mask`` from a fully sampled dataset."""
    if full.mask.mask.shape != mask.mask.shape:
        raise ConfigError(f"mask {mask.mask.shape} does not fit data {full.mask.mask.shape}")
    if not np.all(full.mask.mask == 1):
        raise ConfigError("external data must be fully sampled")
    keep = mask.kspace_mask(full.shape[-1])[:, None]
    return KSpaceDataset(np.where(keep, full.samples, 0), mask, full.sens)


def ingest_external(cfg):
    """Load a fully sampled kspace container, return (reference, undersampled data)."""
    path = Path(cfg.input_path)
    if not (path / "meta.json").exists():
        raise FileNotFoundError(f"external data container not found: {path}")
    full = load_container(path)
    if not isinstance(full, KSpaceDataset):
        raise ConfigError(f"{path} is not a kspace container")
    t, _, h, _ = full.shape
    mask = gro_mask(MaskParams(h, t, cfg.R, cfg.acs, cfg.seed, cfg.density_power))
    ref = ImageSeries(coil_combine(full))
    return ref, retrospective_undersample(full, mask)


def synth_lge_standin(size=64, t=8, n_coils=8, seed=0):
    """Fully sampled multicoil stand-in for an inversion-recovery LGE series.

    Two tissue classes of the Shepp-Logan phantom recover with different T1
    across the ``t`` inversion times; a small seeded jitter of the recovery
    rates keeps series from different seeds distinct.
    """
    rng = np.random.default_rng(seed)
    base = shepp_logan(size).frames[0].real
    bright = np.where(base > 0.5, base, 0.0)
    rest = base - bright
    ti = np.linspace(0.1, 1.5, t)
    t1 = np.array([0.45, 1.0]) * (1 + 0.05 * rng.standard_normal(2))
    curves = np.abs(1 - 2 * np.exp(-ti[:, None] / t1[None]))
    frames = curves[:, 0, None, None] * bright + curves[:, 1, None, None] * rest
    sens = synth_coil_maps(n_coils, size, size)
    return simulate_kspace(ImageSeries(frames.astype(complex)), full_mask(t, size), sens)


def build_study(cfg):
    """(reference series, undersampled KSpaceDataset) for ``cfg``."""
    if cfg.study == "external_lge":
        ref, data = ingest_external(cfg)
    else:
        ref = study_truth(cfg)
        data = simulate_kspace(ref, study_mask(cfg), study_sens(cfg))
    if cfg.snr_db is not None:
        data = add_noise(data, cfg.snr_db, cfg.seed)
    return ref, data


# --- methods -----------------------------------------------------------------


def run_method(method, data, cfg):
    """Reconstruct ``data`` with one method; returns (ImageSeries, extras dict)."""
    extras = {}
    if method == "cs":
        recon, traces = cs_wavelet_recon(data, cfg.cs, return_trace=True)
        extras["fista_monotone"] = fista_monotone(traces)
    elif method == "ls":
        recon, _, _ = ls_recon(data, cfg.ls)
    elif method in NEURAL:
        lam = cfg.fit.lam if method == "discus" else 0.0
        # one experiment seed drives phantom, mask, noise and network init
        fcfg = dataclasses.replace(cfg.fit, mode=method, lam=lam, seed=cfg.seed)
        res = discus_fit(data, cfg.generator, fcfg)
        recon = res.recon
        extras["final_data_term"] = res.loss_trace[-1][1]
        if method == "discus":
            extras["manifold_dim"] = res.manifold_dim
    else:
        raise ConfigError(f"unknown method {method!r}")
    if not np.all(np.isfinite(recon.frames)):
        raise DivergenceError(f"{method} produced non-finite frames")
    return recon, extras


def fista_monotone(traces, tol=1e-6):
    """True when every per-frame FISTA objective trace is non-increasing."""
    traces = np.atleast_2d(traces)
    steps = np.diff(traces, axis=1)
    return bool(np.all(steps <= tol * np.abs(traces[:, :1])))


# --- outputs -----------------------------------------------------------------


def error_map(est, ref, amplification=5.0):
    """8-bit image of |est - ref| x amplification, clipped at the reference max."""
    e = np.abs(np.asarray(est) - np.asarray(ref)) * amplification
    top = np.abs(np.asarray(ref)).max()
    if top == 0:
        top = 1.0
    return np.round(np.clip(e, 0, top) / top * 255).astype(np.uint8)


def write_pgm(path, img):
    """Binary greyscale PGM; frames of a series are tiled left to right."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 3:
        img = np.concatenate(list(img), axis=1)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _fmt(v):
    if isinstance(v, str):
        return v
    return f"{v:.3f}"


def report_table(report):
    rows = [("method", "nmse_db", "ssim", "manifold_dim")]
    for m, r in report["methods"].items():
        rows.append((m, _fmt(r["nmse_db"]), _fmt(r["ssim"]), str(r.get("manifold_dim", "-"))))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
        if k == 0:
            lines.append("  ".join("-" * wd for wd in widths))
    head = f"study {report['study']}  size {report['size']}  T {report['T']}  R {report['R']}"
    return head + "\n" + "\n".join(lines) + "\n"


def dump_json(obj, path):
    # sorted keys and repr floats: identical inputs give identical bytes
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def _report_header(cfg):
    return {"study": cfg.study, "size": cfg.size, "T": cfg.T, "R": cfg.R, "seed": cfg.seed,
            "snr_db": cfg.snr_db, "ssim_mode": "per-frame mean of magnitude SSIM", "methods": {}}


def run_study(cfg, write=True):
    """Run every method in ``cfg.methods``; returns the report dict.

    With ``write`` (and ``cfg.output_dir`` set) the ground truth, data, every
    recon, error maps, the echoed config and the reports go to disk. On a
    divergent fit the artifacts produced so far are written before the
    :class:`DivergenceError` propagates.
    """
    out = Path(cfg.output_dir) if (write and cfg.output_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dump_json(cfg.to_dict(), out / "config.json")
    ref, data = build_study(cfg)
    if out is not None:
        save_container(ref, out / "reference")
        save_container(data, out / "kspace")
    report = _report_header(cfg)
    try:
        for method in cfg.methods:
            log.info("running %s on %s", method, cfg.study)
            recon, extras = run_method(method, data, cfg)
            entry = evaluate(recon, ref).as_dict()
            entry.update(extras)
            report["methods"][method] = entry
            if out is not None:
                save_container(recon, out / f"recon_{method}")
                write_pgm(out / f"error_{method}.pgm", error_map(recon.frames, ref.frames, cfg.error_amplification))
    except DivergenceError as exc:
        report["diverged"] = str(exc)
        raise
    finally:
        if out is not None:
            dump_json(report, out / "report.json")
            (out / "report.txt").write_text(report_table(report))
    return report


# --- grid search -------------------------------------------------------------


def grid_points(grid):
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _score_point(args):
    cfg_dict, method, point = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_overrides(point)
    ref, data = build_study(cfg)
    recon, extras = run_method(method, data, cfg)
    row = {"params": point, **evaluate(recon, ref).as_dict()}
    row.pop("per_frame")
    row.update(extras)
    return row


def grid_search(cfg, method, workers=1):
    """Evaluate every point of ``cfg.grid`` with ``method``; best block plus leaderboard.

    Returns ``(best_params, leaderboard)`` with the leaderboard sorted by
    ascending NMSE (ties keep grid order). Writes ``grid_<method>.json`` when
    ``cfg.output_dir`` is set.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if not cfg.grid:
        raise ConfigError("grid search needs a non-empty grid")
    points = grid_points(cfg.grid)
    base = dict(cfg.to_dict(), grid=None, output_dir=None, methods=[method])
    jobs = [(base, method, p) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_score_point, jobs))
    else:
        rows = [_score_point(j) for j in jobs]
    order = sorted(range(len(rows)), key=lambda i: (_nmse_key(rows[i]["nmse_db"]), i))
    board = [rows[i] for i in order]
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json({"method": method, "study": cfg.study, "leaderboard": board}, out / f"grid_{method}.json")
    return board[0]["params"], board


def _nmse_key(v):
    return float("-inf") if v == "-inf" else float(v)
