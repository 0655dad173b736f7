"""Run configuration, dataset persistence and manifests."""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError
from .measurement import POLARIZATIONS, CountsImage, NoiseModel, TomographyDataset, noise_to_dict
from .modes import GridSpec, RadialProfile, default_profile

TOOL_NAME = "tamqudit"
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".tamqudit.lock"
ANALYZER_NAMES = POLARIZATIONS + ("D", "A")
ROLES = ("image", "sidecar", "rho", "slice", "report", "figure", "config")
PGM_MAX = 65535


# --- configuration ----------------------------------------------------------

_SCHEMA = {
    "grid": {"n_pixels": int, "extent": float},
    "profile": {"kind": str, "ring_scale": float, "window_width": float},
    "n_frames": int,
    "noise": {"dark_count_prob": float, "detection_efficiency": float, "background_uniform": float},
    "seed": int,
    "output": str,
    "emit_png": bool,
    "analyzers": list,
}


def _check_fields(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise InputError(f"config{path or ''}: expected an object")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise InputError(f"config field {where!r} is not recognized")
        kind = schema[key]
        if isinstance(kind, dict):
            _check_fields(value, kind, where)
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InputError(f"config field {where!r} must be a number")
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise InputError(f"config field {where!r} must be an integer")
        elif not isinstance(value, kind):
            raise InputError(f"config field {where!r} must be of type {kind.__name__}")


def _wrap(where: str, fn, *args):
    try:
        return fn(*args)
    except InputError as exc:
        raise InputError(f"config field {where!r}: {exc}") from exc


@dataclass
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    profile: RadialProfile | None = None
    n_frames: int = 10_000
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    output: str = "run"
    emit_png: bool = False
    # D and A may be added for over-complete tomography.
    analyzers: tuple = POLARIZATIONS

    def __post_init__(self):
        self.analyzers = tuple(self.analyzers)
        for name in self.analyzers:
            if name not in ANALYZER_NAMES:
                raise InputError(f"config field 'analyzers': unknown polarization {name!r}")
        if len(set(self.analyzers)) != len(self.analyzers):
            raise InputError("config field 'analyzers': duplicate entries")
        if self.profile is None:
            self.profile = default_profile(self.grid)
        if self.n_frames < 0:
            raise InputError(f"config field 'n_frames': must be >= 0, got {self.n_frames}")
        if self.seed < 0:
            raise InputError(f"config field 'seed': must be >= 0, got {self.seed}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        _check_fields(doc, _SCHEMA)
        grid = _wrap("grid", lambda d: GridSpec(**d), doc.get("grid", {}))
        profile = None
        if "profile" in doc:
            base = default_profile(grid)
            merged = {"kind": base.kind, "ring_scale": base.ring_scale, "window_width": base.window_width}
            merged.update(doc["profile"])
            profile = _wrap("profile", lambda d: RadialProfile(**d), merged)
        noise = _wrap("noise", lambda d: NoiseModel(**d), doc.get("noise", {}))
        kwargs = {k: doc[k] for k in ("n_frames", "seed", "output", "emit_png", "analyzers") if k in doc}
        return cls(grid=grid, profile=profile, noise=noise, **kwargs)

    def to_dict(self) -> dict:
        return {
            "grid": {"n_pixels": self.grid.n_pixels, "extent": self.grid.extent},
            "profile": {
                "kind": self.profile.kind,
                "ring_scale": self.profile.ring_scale,
                "window_width": self.profile.window_width,
            },
            "n_frames": self.n_frames,
            "noise": noise_to_dict(self.noise),
            "seed": self.seed,
            "output": self.output,
            "emit_png": self.emit_png,
            "analyzers": list(self.analyzers),
        }

    def hash(self) -> str:
        return sha256_bytes(canonical_json(self.to_dict()).encode())


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(doc)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_json(path, doc) -> None:
    write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --- 16-bit PGM -------------------------------------------------------------


def write_pgm(path, counts: np.ndarray) -> None:
    """Binary P5 PGM, 16-bit big-endian, maxval 65535."""
    a = np.asarray(counts)
    if a.ndim != 2:
        raise InputError("PGM images must be 2-D")
    if a.size and (a.min() < 0 or a.max() > PGM_MAX):
        raise InputError(f"counts must lie in [0, {PGM_MAX}] for a 16-bit image; max is {a.max()}")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAX}\n".encode("ascii"))
        fh.write(a.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    pos += 1
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos != n:
        raise InputError(f"{path}: expected {n} bytes of pixel data, found {len(data) - pos}")
    return np.frombuffer(data[pos:], dtype=dtype).reshape(h, w).astype(np.int64)


# --- datasets ---------------------------------------------------------------


def _panel_stem(row: int, col: int, inp: str, ana: str) -> str:
    return f"img_{row}{col}_{inp}_{ana}"


def sidecar_doc(img: CountsImage, profile: RadialProfile) -> dict:
    m = img.meta
    return {
        "input_pol": m.get("input_pol"),
        "analyzer": m.get("analyzer"),
        "n_frames": m.get("n_frames"),
        "seed": m.get("seed"),
        "noise": m.get("noise"),
        "projection_prob": m.get("projection_prob"),
        "dark": bool(m.get("dark", False)),
        "grid": {"n_pixels": img.grid.n_pixels, "extent": img.grid.extent},
        "profile": {"kind": profile.kind, "ring_scale": profile.ring_scale, "window_width": profile.window_width},
        "total_counts": img.total,
    }


@dataclass
class Manifest:
    config_hash: str
    files: list
    tool_version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tool": TOOL_NAME,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "files": self.files,
            **self.extra,
        }


def file_entry(root: Path, name: str, role: str) -> dict:
    if role not in ROLES:
        raise InputError(f"unknown manifest role {role!r}")
    return {"path": name, "role": role, "sha256": sha256_file(root / name)}


def write_manifest(root, entries, config_hash: str, extra=None) -> Path:
    root = Path(root)
    path = root / MANIFEST_NAME
    write_json(path, Manifest(config_hash, list(entries), extra=dict(extra or {})).to_dict())
    return path


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST_NAME
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc


def verify_manifest(root) -> list:
    """Problems found: missing files and hash mismatches. Empty when intact."""
    root = Path(root)
    doc = read_manifest(root)
    problems = []
    for entry in doc.get("files", []):
        p = root / entry["path"]
        if not p.is_file():
            problems.append(f"missing: {entry['path']}")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"hash mismatch: {entry['path']}")
    return problems


@contextlib.contextmanager
def output_lock(root):
    """Exclusive lock file in ``root`` for the duration of a command."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {root}: {exc}") from exc
    lock = root / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{root} is locked by another run (remove {lock} if stale)") from None
    except OSError as exc:
        raise InputError(f"cannot write to {root}: {exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield root
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def save_dataset(ds: TomographyDataset, root, config: RunConfig | None = None) -> list:
    """Write images, sidecars and the manifest; returns the manifest entries."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    config = config or RunConfig(ds.grid, ds.profile, ds.n_frames, ds.noise, ds.seed, str(root), analyzers=ds.analyzers)
    entries = []
    for i, inp in enumerate(ds.inputs):
        for j, ana in enumerate(ds.analyzers):
            img = ds.images[i][j]
            stem = _panel_stem(i, j, inp, ana)
            write_pgm(root / f"{stem}.pgm", img.counts)
            write_json(root / f"{stem}.json", sidecar_doc(img, ds.profile))
            entries.append(file_entry(root, f"{stem}.pgm", "image"))
            entries.append(file_entry(root, f"{stem}.json", "sidecar"))
    extra = {"dataset": {"inputs": list(ds.inputs), "analyzers": list(ds.analyzers), "config": config.to_dict()}}
    write_manifest(root, entries, config.hash(), extra)
    return entries


def load_dataset(root) -> TomographyDataset:
    root = Path(root)
    doc = read_manifest(root)
    try:
        meta = doc["dataset"]
        config = RunConfig.from_dict(meta["config"])
        inputs, analyzers = tuple(meta["inputs"]), tuple(meta["analyzers"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{root}: manifest lacks dataset description ({exc})") from exc
    for name in inputs + analyzers:
        if name not in ANALYZER_NAMES:
            raise InputError(f"{root}: unknown polarization {name!r} in manifest")
    problems = verify_manifest(root)
    if problems:
        raise InputError(f"{root}: manifest check failed: {'; '.join(problems)}")
    rows = []
    for i, inp in enumerate(inputs):
        row = []
        for j, ana in enumerate(analyzers):
            stem = _panel_stem(i, j, inp, ana)
            counts = read_pgm(root / f"{stem}.pgm")
            with open(root / f"{stem}.json", encoding="utf-8") as fh:
                side = json.load(fh)
            if counts.shape != (config.grid.n_pixels,) * 2:
                raise InputError(f"{stem}.pgm: shape {counts.shape} does not match the grid")
            row.append(CountsImage(config.grid, counts, side))
        rows.append(row)
    return TomographyDataset(rows, inputs, analyzers, config.grid, config.profile, config.noise, config.seed, config.n_frames)
