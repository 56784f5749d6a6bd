"""Synthetic TEM traces and the six noise-domain corpora."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .metrics import SNR_CAP_DB

N_SAMPLES = 900
SIDE = 30
FORMAT_VERSION = 1

Q1_RANGE = (100.0, 1500.0)
Q2_RANGE = (0.5, 4.0)
B_RANGE = (2.0, 6.0)


@dataclass(frozen=True)
class TimeGrid:
    n: int = N_SAMPLES
    dt: float = 1.0 / 250.0
    t0: float = 1.0 / 250.0

    def __post_init__(self):
        if self.t0 <= 0 or self.dt <= 0 or self.n < 1:
            raise ValueError("time grid needs t0 > 0, dt > 0, n >= 1")

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)


GRID = TimeGrid()


@dataclass(frozen=True)
class SignalParams:
    Q1: float
    Q2: float
    B: float
    terms: int = 1


def clean_signal(p: SignalParams, grid: TimeGrid = GRID) -> np.ndarray:
    """s(t) = Q1 * sum_{k=1..M} exp(-k^2 Q2 t) + B."""
    if not all(np.isfinite([p.Q1, p.Q2, p.B])):
        raise ValueError(f"non-finite signal parameters: {p}")
    if p.terms < 1:
        raise ValueError("series truncation must be >= 1")
    t = grid.t
    k2 = np.arange(1, p.terms + 1, dtype=np.float64)[:, None] ** 2
    return p.Q1 * np.exp(-k2 * p.Q2 * t).sum(axis=0) + p.B


def sample_params(rng: np.random.Generator, terms: int = 1) -> SignalParams:
    q1 = rng.uniform(*Q1_RANGE)
    q2 = rng.uniform(*Q2_RANGE)
    b = rng.uniform(*B_RANGE)
    return SignalParams(float(q1), float(q2), float(b), terms)


def add_gaussian_snr(s: np.ndarray, target_snr_db: float, rng: np.random.Generator) -> np.ndarray:
    power = float(np.dot(s, s))
    if power <= 0:
        raise ValueError("cannot calibrate noise against a zero-power signal")
    if target_snr_db >= SNR_CAP_DB:
        return s.copy()
    sigma = np.sqrt(power / (s.size * 10.0 ** (target_snr_db / 10.0)))
    return s + rng.normal(0.0, sigma, size=s.shape)


def add_sinusoid(s: np.ndarray, A: float, f: float, phase: float, grid: TimeGrid = GRID) -> np.ndarray:
    if A < 0:
        raise ValueError("sinusoid amplitude must be non-negative")
    return s + A * np.sin(2 * np.pi * f * grid.t + phase)


def add_impulses(s: np.ndarray, k: int, amp_range: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """k spikes at distinct indices, magnitude U(amp_range), random sign."""
    if not 0 <= k <= s.size:
        raise ValueError(f"spike count {k} outside [0, {s.size}]")
    out = s.copy()
    idx = rng.choice(s.size, size=k, replace=False)
    amp = rng.uniform(*amp_range, size=k) * rng.choice([-1.0, 1.0], size=k)
    out[idx] += amp
    return out


class Kind(str, Enum):
    SOURCE = "source"
    AGN = "agn"
    LFI = "lfi"
    HFI = "hfi"
    IMP = "imp"
    CMP = "cmp"


@dataclass(frozen=True)
class DomainSpec:
    kind: Kind
    snr_db: tuple[float, float] = (20.0, 25.0)
    amp_mv: tuple[float, float] = (10.0, 30.0)
    lfi_hz: tuple[float, float] = (1.0, 5.0)
    hfi_hz: tuple[float, float] = (10.0, 50.0)
    phase: tuple[float, float] = (0.0, 2 * np.pi)
    spikes: tuple[int, int] = (20, 30)
    spike_mv: tuple[float, float] = (50.0, 70.0)
    terms: int = 1

    def __post_init__(self):
        for name in ("snr_db", "amp_mv", "lfi_hz", "hfi_hz", "phase", "spikes", "spike_mv"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: [{lo}, {hi}]")

    @classmethod
    def default(cls, kind: Kind | str) -> "DomainSpec":
        kind = Kind(kind)
        if kind in (Kind.AGN, Kind.CMP):
            return cls(kind, snr_db=(8.0, 10.0))
        return cls(kind)

    def ranges(self) -> dict:
        return {
            "snr_db": self.snr_db, "amp_mv": self.amp_mv, "lfi_hz": self.lfi_hz,
            "hfi_hz": self.hfi_hz, "phase": self.phase, "spikes": self.spikes, "spike_mv": self.spike_mv,
        }


def _sub_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(n)]


def compose_cmp(s: np.ndarray, spec: DomainSpec, rng: np.random.Generator, log: dict | None = None) -> np.ndarray:
    """AGN -> LFI -> HFI -> IMP, each stage on its own child stream."""
    if spec.kind != Kind.CMP:
        raise ValueError("compose_cmp needs a CMP domain spec")
    r_agn, r_lfi, r_hfi, r_imp = _sub_rngs(rng, 4)
    log = {} if log is None else log
    snr = r_agn.uniform(*spec.snr_db)
    out = add_gaussian_snr(s, snr, r_agn)
    a, f, ph = r_lfi.uniform(*spec.amp_mv), r_lfi.uniform(*spec.lfi_hz), r_lfi.uniform(*spec.phase)
    out = add_sinusoid(out, a, f, ph)
    a2, f2, ph2 = r_hfi.uniform(*spec.amp_mv), r_hfi.uniform(*spec.hfi_hz), r_hfi.uniform(*spec.phase)
    out = add_sinusoid(out, a2, f2, ph2)
    k = int(r_imp.integers(spec.spikes[0], spec.spikes[1] + 1))
    out = add_impulses(out, k, spec.spike_mv, r_imp)
    log.update(snr_db=snr, lfi_A=a, lfi_f=f, lfi_phase=ph, hfi_A=a2, hfi_f=f2, hfi_phase=ph2, spikes=k)
    return out


def corrupt(s: np.ndarray, spec: DomainSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Apply the domain's noise recipe; returns (noisy, draws)."""
    kind = spec.kind
    log: dict = {}
    if kind in (Kind.SOURCE, Kind.AGN):
        log["snr_db"] = rng.uniform(*spec.snr_db)
        return add_gaussian_snr(s, log["snr_db"], rng), log
    if kind in (Kind.LFI, Kind.HFI):
        band = spec.lfi_hz if kind == Kind.LFI else spec.hfi_hz
        log.update(A=rng.uniform(*spec.amp_mv), f=rng.uniform(*band), phase=rng.uniform(*spec.phase))
        return add_sinusoid(s, log["A"], log["f"], log["phase"]), log
    if kind == Kind.IMP:
        log["spikes"] = int(rng.integers(spec.spikes[0], spec.spikes[1] + 1))
        return add_impulses(s, log["spikes"], spec.spike_mv, rng), log
    return compose_cmp(s, spec, rng, log), log


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, sample index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass
class Dataset:
    clean: np.ndarray
    noisy: np.ndarray
    spec: DomainSpec
    seed: int
    params: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape or self.clean.ndim != 2 or self.clean.shape[1] != N_SAMPLES:
            raise ValueError(f"clean/noisy must both be n x {N_SAMPLES}")

    def __len__(self) -> int:
        return self.clean.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, clean=self.clean[idx], noisy=self.noisy[idx], params=[self.params[i] for i in idx])

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.clean, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.noisy, dtype="<f4").tobytes())
        return h.digest()


def make_dataset(spec: DomainSpec | Kind | str, n: int, seed: int) -> Dataset:
    if not isinstance(spec, DomainSpec):
        spec = DomainSpec.default(spec)
    if n < 1:
        raise ValueError("dataset needs n >= 1")
    clean = np.empty((n, N_SAMPLES), dtype=np.float32)
    noisy = np.empty((n, N_SAMPLES), dtype=np.float32)
    log = []
    for i in range(n):
        rng = sample_rng(seed, i)
        p = sample_params(rng, spec.terms)
        s = clean_signal(p)
        y, draws = corrupt(s, spec, rng)
        clean[i] = s
        noisy[i] = y
        log.append({"Q1": p.Q1, "Q2": p.Q2, "B": p.B, **draws})
    return Dataset(clean, noisy, spec, seed, log)


def train_test_split(ds: Dataset, ratio: int = 10, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then contiguous ratio:1 split."""
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = max(1, len(ds) // (ratio + 1))
    return ds.subset(perm[n_test:]), ds.subset(perm[:n_test])


def to_image(s: np.ndarray) -> np.ndarray:
    """Row-major (..., 900) -> (..., 30, 30)."""
    s = np.asarray(s)
    if s.shape[-1] != N_SAMPLES:
        raise ValueError(f"expected length {N_SAMPLES}, got {s.shape[-1]}")
    return s.reshape(*s.shape[:-1], SIDE, SIDE)


def from_image(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.shape[-2:] != (SIDE, SIDE):
        raise ValueError(f"expected trailing ({SIDE}, {SIDE}), got {m.shape[-2:]}")
    return m.reshape(*m.shape[:-2], N_SAMPLES)


# on-disk container ---------------------------------------------------------

def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = GRID
    meta = [
        f"format-version: {FORMAT_VERSION}",
        f"kind: {ds.spec.kind.value}",
        f"n: {len(ds)}",
        f"seed: {ds.seed}",
        f"grid: n={g.n} dt={g.dt!r} t0={g.t0!r}",
        f"terms: {ds.spec.terms}",
    ]
    for name, (lo, hi) in ds.spec.ranges().items():
        meta.append(f"range.{name}: {lo!r} {hi!r}")
    (out / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    (out / "clean.f32").write_bytes(np.ascontiguousarray(ds.clean, dtype="<f4").tobytes())
    (out / "noisy.f32").write_bytes(np.ascontiguousarray(ds.noisy, dtype="<f4").tobytes())

    keys: list[str] = []
    for row in ds.params:
        keys.extend(k for k in row if k not in keys)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", *keys])
    for i, row in enumerate(ds.params):
        w.writerow([i, *(repr(float(row[k])) if k in row else "" for k in keys)])
    (out / "params.csv").write_text(buf.getvalue(), encoding="utf-8")
    return out


def _parse_meta(text: str) -> dict[str, str]:
    meta = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    return meta


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not (path / "meta.txt").is_file():
        raise FileNotFoundError(f"no dataset container at {path}")
    meta = _parse_meta((path / "meta.txt").read_text(encoding="utf-8"))
    if int(meta.get("format-version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {meta.get('format-version')}")
    n = int(meta["n"])
    ranges = {}
    for key, value in meta.items():
        if key.startswith("range."):
            lo, hi = value.split()
            conv = int if key == "range.spikes" else float
            ranges[key[6:]] = (conv(lo), conv(hi))
    spec = DomainSpec(Kind(meta["kind"]), terms=int(meta.get("terms", 1)), **ranges)

    def read(name):
        arr = np.fromfile(path / name, dtype="<f4")
        if arr.size != n * N_SAMPLES:
            raise ValueError(f"{name}: expected {n * N_SAMPLES} floats, found {arr.size}")
        return arr.reshape(n, N_SAMPLES).astype(np.float32)

    params = []
    csv_path = path / "params.csv"
    if csv_path.is_file():
        with open(csv_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                row.pop("index")
                params.append({k: float(v) for k, v in row.items() if v != ""})
    if len(params) != n:
        params = [{} for _ in range(n)]
    return Dataset(read("clean.f32"), read("noisy.f32"), spec, int(meta["seed"]), params)
