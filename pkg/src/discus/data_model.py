"""Core value types and the on-disk container.

A container is a directory holding ``meta.json`` and one headerless,
little-endian, row-major binary file per named array::

    {"version": 1, "kind": "kspace" | "image" | "mask" | "sens" | "checkpoint",
     "arrays": {name: {"dtype": "c64le" | "f32le" | "u8", "shape": [...],
                       "file": "<name>.bin"}},
     "attrs": {...}}

Complex values are stored as interleaved (re, im) float32 pairs, so arrays
held in memory at double precision are rounded once on save. Anything that
has been through a save/load cycle round-trips bit-exactly from then on.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTAINER_VERSION = 1

DTYPES = {
    "c64le": np.dtype("<c8"),
    "f32le": np.dtype("<f4"),
    "u8": np.dtype("u1"),
}


class ContainerError(ValueError):
    """Raised for malformed, inconsistent, or unwritable containers."""


class DivergenceError(RuntimeError):
    """A solver produced non-finite values; ``trace`` holds the history so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_complex(a):
    a = np.asarray(a)
    if not np.iscomplexobj(a):
        a = a.astype(np.complex128)
    return a


def _require_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ImageSeries:
    """T complex frames of size H x W."""

    frames: np.ndarray

    def __post_init__(self):
        f = _as_complex(self.frames)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3:
            raise ValueError(f"frames must be T x H x W, got shape {f.shape}")
        t, h, w = f.shape
        if t < 1 or h < 8 or w < 8:
            raise ValueError(f"need T >= 1 and H, W >= 8, got {f.shape}")
        _require_finite("frames", f)
        object.__setattr__(self, "frames", _frozen(f))

    @property
    def frame_count(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class MaskSeries:
    """Per-frame phase-encode sampling pattern, shape T x H_pe (1 = line acquired)."""

    mask: np.ndarray
    acceleration: float

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim == 1:
            m = m[None]
        if m.ndim != 2:
            raise ValueError(f"mask must be T x H_pe, got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask must be binary")
        m = m.astype(np.uint8)
        r = float(self.acceleration)
        if not r > 0:
            raise ValueError("acceleration must be positive")
        counts = m.sum(axis=1)
        if np.any(counts < 1):
            raise ValueError("every frame needs at least one sampled line")
        target = round(m.shape[1] / r)
        if np.any(np.abs(counts - target) > 1):
            raise ValueError(
                f"per-frame line counts {sorted(set(counts.tolist()))} not within 1 of {target}"
            )
        object.__setattr__(self, "mask", _frozen(m))
        object.__setattr__(self, "acceleration", r)

    @property
    def frame_count(self):
        return self.mask.shape[0]

    @property
    def n_pe(self):
        return self.mask.shape[1]

    def kspace_mask(self, width):
        """Boolean T x H_pe x W mask with the readout fully sampled."""
        return np.repeat(self.mask.astype(bool)[:, :, None], width, axis=2)


@dataclass(frozen=True, eq=False)
class SensMaps:
    """Coil sensitivities, C x H x W, with unit sum-of-squares where nonzero."""

    maps: np.ndarray
    tol: float = field(default=1e-6, repr=False)

    def __post_init__(self):
        s = _as_complex(self.maps)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3:
            raise ValueError(f"maps must be C x H x W, got shape {s.shape}")
        _require_finite("maps", s)
        sos = np.sum(np.abs(s) ** 2, axis=0)
        support = sos > 0.5
        if np.any(np.abs(sos[support] - 1.0) > self.tol) or np.any(sos[~support] > self.tol):
            raise ValueError("coil maps are not normalized to unit sum-of-squares")
        object.__setattr__(self, "maps", _frozen(s))

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @classmethod
    def unit(cls, h, w):
        return cls(np.ones((1, h, w), dtype=np.complex128))


@dataclass(frozen=True, eq=False)
class KSpaceDataset:
    """Sampled multicoil k-space, T x C x H x W, exactly zero off the mask."""

    samples: np.ndarray
    mask: MaskSeries
    sens: SensMaps
    snr_db: float | None = None
    seed: int | None = None

    def __post_init__(self):
        y = _as_complex(self.samples)
        if y.ndim != 4:
            raise ValueError(f"samples must be T x C x H x W, got shape {y.shape}")
        t, c, h, w = y.shape
        if self.mask.mask.shape != (t, h):
            raise ValueError(f"mask shape {self.mask.mask.shape} does not match samples {y.shape}")
        if self.sens.maps.shape != (c, h, w):
            raise ValueError(f"sens shape {self.sens.maps.shape} does not match samples {y.shape}")
        _require_finite("samples", y)
        off = ~self.mask.kspace_mask(w)
        if np.any(np.where(off[:, None], y, 0) != 0):
            raise ValueError("samples must be exactly zero wherever the mask is zero")
        object.__setattr__(self, "samples", _frozen(y))
        if self.snr_db is not None:
            object.__setattr__(self, "snr_db", float(self.snr_db))
        if self.seed is not None:
            object.__setattr__(self, "seed", int(self.seed))

    @property
    def shape(self):
        return self.samples.shape

    @property
    def n_measurements(self):
        """Number of acquired complex values (nonzero mask entries times coils)."""
        t, c, h, w = self.samples.shape
        return int(self.mask.mask.sum()) * w * c


# --- container I/O -----------------------------------------------------------


def _encode(a, tag):
    dt = DTYPES[tag]
    if tag == "c64le":
        return np.ascontiguousarray(a, dtype=dt).tobytes()
    return np.ascontiguousarray(a).astype(dt).tobytes()


def _arrays_for(obj):
    if isinstance(obj, KSpaceDataset):
        return "kspace", {
            "samples": (obj.samples, "c64le"),
            "mask": (obj.mask.mask, "u8"),
            "sens": (obj.sens.maps, "c64le"),
        }, {"snr_db": obj.snr_db, "seed": obj.seed, "acceleration": obj.mask.acceleration}
    if isinstance(obj, ImageSeries):
        return "image", {"frames": (obj.frames, "c64le")}, {}
    if isinstance(obj, MaskSeries):
        return "mask", {"mask": (obj.mask, "u8")}, {"acceleration": obj.acceleration}
    if isinstance(obj, SensMaps):
        return "sens", {"maps": (obj.maps, "c64le")}, {}
    raise TypeError(f"cannot store objects of type {type(obj).__name__}")


def write_arrays(path, kind, arrays, attrs=None):
    """Low-level writer: ``arrays`` maps name -> (ndarray, dtype tag)."""
    path = Path(path)
    for name, (a, tag) in arrays.items():
        if tag not in DTYPES:
            raise ContainerError(f"unknown dtype tag {tag!r}")
        if np.issubdtype(np.asarray(a).dtype, np.inexact) and not np.all(np.isfinite(a)):
            raise ContainerError(f"array {name!r} contains non-finite values; nothing written")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContainerError(f"cannot create {path}: {exc}") from exc
    meta = {"version": CONTAINER_VERSION, "kind": kind, "arrays": {}, "attrs": dict(attrs or {})}
    for name, (a, tag) in arrays.items():
        fname = f"{name}.bin"
        meta["arrays"][name] = {"dtype": tag, "shape": list(np.shape(a)), "file": fname}
        try:
            (path / fname).write_bytes(_encode(a, tag))
        except OSError as exc:
            raise ContainerError(f"cannot write {path / fname}: {exc}") from exc
    tmp = path / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True))
    os.replace(tmp, path / "meta.json")


def read_arrays(path):
    """Low-level reader returning (kind, {name: ndarray}, attrs)."""
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise ContainerError(f"no meta.json in {path}") from exc
    except json.JSONDecodeError as exc:
        raise ContainerError(f"corrupt meta.json in {path}: {exc}") from exc
    if meta.get("version") != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {meta.get('version')!r}")
    arrays = {}
    for name, spec in meta.get("arrays", {}).items():
        tag = spec.get("dtype")
        if tag not in DTYPES:
            raise ContainerError(f"array {name!r}: unknown dtype tag {tag!r}")
        dt = DTYPES[tag]
        shape = tuple(int(s) for s in spec["shape"])
        fpath = path / spec["file"]
        if not fpath.is_file():
            raise ContainerError(f"array {name!r}: missing file {fpath}")
        raw = fpath.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if len(raw) != expected:
            raise ContainerError(
                f"array {name!r}: shape {list(shape)} needs {expected} bytes, file has {len(raw)}"
            )
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    return meta["kind"], arrays, meta.get("attrs", {})


def save_container(obj, path):
    kind, arrays, attrs = _arrays_for(obj)
    write_arrays(path, kind, arrays, attrs)


def load_container(path):
    kind, arrays, attrs = read_arrays(path)
    try:
        if kind == "image":
            return ImageSeries(arrays["frames"])
        if kind == "mask":
            return MaskSeries(arrays["mask"], attrs.get("acceleration", 1.0))
        if kind == "sens":
            return SensMaps(arrays["maps"])
        if kind == "kspace":
            mask = MaskSeries(arrays["mask"], attrs.get("acceleration", 1.0))
            return KSpaceDataset(
                arrays["samples"],
                mask,
                SensMaps(arrays["sens"]),
                snr_db=attrs.get("snr_db"),
                seed=attrs.get("seed"),
            )
    except KeyError as exc:
        raise ContainerError(f"{kind} container is missing array {exc}") from exc
    except ValueError as exc:
        raise ContainerError(f"{kind} container violates its invariants: {exc}") from exc
    raise ContainerError(f"unknown container kind {kind!r}")
