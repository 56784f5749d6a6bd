"""Sparse signal dictionary: ISTA coding and per-atom least-squares updates.

Objective over a corpus Y (n x L) with codes A (n x K) and unit-norm atoms D (K x L):

    sum_i |y_i - D^T a_i|^2 + lam * |a_i|_1
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"DPTD"
VERSION = 1
_HEADER = struct.Struct("<4sHIId")


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Dictionary:
    atoms: np.ndarray  # (K, L), unit-norm rows
    lam: float = 1.0
    source_hash: bytes = b"\0" * 32

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise ValueError("atoms must be a K x L matrix")
        if len(self.source_hash) != 32:
            raise ValueError("source hash must be 32 bytes")

    @property
    def K(self) -> int:
        return self.atoms.shape[0]

    @property
    def L(self) -> int:
        return self.atoms.shape[1]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, self.K, self.L, float(self.lam))
        return head + np.ascontiguousarray(self.atoms, dtype="<f4").tobytes() + self.source_hash

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Dictionary":
        if len(blob) < _HEADER.size:
            raise ValueError("dictionary file truncated")
        magic, version, k, length, lam = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"bad dictionary magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"unsupported dictionary version {version}")
        n_atoms = k * length * 4
        if len(blob) != _HEADER.size + n_atoms + 32:
            raise ValueError("dictionary file has the wrong length")
        atoms = np.frombuffer(blob, dtype="<f4", count=k * length, offset=_HEADER.size).reshape(k, length)
        return cls(atoms.astype(np.float64), lam, bytes(blob[_HEADER.size + n_atoms:]))

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class DictFitReport:
    objective: list[float] = field(default_factory=list)
    final_mse: float = float("nan")
    sparsity: float = float("nan")


def _atoms(D) -> np.ndarray:
    return D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def spectral_norm_sq(D, iters: int = 1000, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest eigenvalue of D D^T by power iteration."""
    atoms = _atoms(D)
    G = atoms @ atoms.T
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = float(v @ G @ v)
        if abs(new - lam) <= tol * max(new, 1e-300):
            return new
        lam = new
    raise ConvergenceError("power iteration did not converge")


def objective(Y, D, A, lam: float) -> float:
    R = np.asarray(Y, dtype=np.float64) - np.asarray(A) @ _atoms(D)
    return float(np.sum(R * R) + lam * np.sum(np.abs(A)))


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def sparse_encode(
    D, Y, lam: float = 1.0, max_iters: int = 500, tol: float = 1e-7, A0=None, history: list | None = None
) -> np.ndarray:
    """ISTA with step 1/(2L); accepts a single signal (L,) or a batch (n, L).

    Stops once the relative change of the batch objective drops below ``tol``.
    If ``history`` is given, the objective before and after every iteration is appended to it.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    atoms = _atoms(D)
    Y = np.asarray(Y, dtype=np.float64)
    single = Y.ndim == 1
    Y2 = Y[None] if single else Y
    G = atoms @ atoms.T
    C = Y2 @ atoms.T
    yy = float(np.sum(Y2 * Y2))
    step = 1.0 / (2.0 * spectral_norm_sq(atoms))
    A = np.zeros((Y2.shape[0], atoms.shape[0])) if A0 is None else np.array(A0, dtype=np.float64).reshape(len(Y2), -1)

    def obj(A):
        # |Y - A D|^2 expanded through the Gram matrix
        return yy - 2 * np.sum(A * C) + np.sum((A @ G) * A) + lam * np.sum(np.abs(A))

    prev = obj(A)
    if history is not None:
        history.append(prev)
    for _ in range(max_iters):
        A = soft_threshold(A - step * 2.0 * (A @ G - C), step * lam)
        cur = obj(A)
        if history is not None:
            history.append(cur)
        if abs(prev - cur) <= tol * max(abs(prev), 1e-300):
            break
        prev = cur
    return A[0] if single else A


def dict_update(D, Y, A) -> np.ndarray:
    """Sequential rank-1 least-squares refit of each used atom on the unit sphere.

    With codes fixed, the minimiser of sum_i |r_i - d a_ij|^2 over |d| = 1 is
    the normalised least-squares direction sum_i a_ij r_i. Unused atoms stay put.
    """
    atoms = _atoms(D).copy()
    Y = np.asarray(Y, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    R = Y - A @ atoms
    for j in range(atoms.shape[0]):
        a = A[:, j]
        nz = np.flatnonzero(a)
        if nz.size == 0:
            continue
        a_nz = a[nz]
        R[nz] += np.outer(a_nz, atoms[j])
        v = a_nz @ R[nz]
        nv = np.linalg.norm(v)
        if nv > 0:
            atoms[j] = v / nv
        R[nz] -= np.outer(a_nz, atoms[j])
    return atoms


def learn_dictionary(
    Y,
    K: int = 64,
    lam: float = 1.0,
    epochs: int = 10,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-7,
    source_hash: bytes | None = None,
) -> tuple[Dictionary, np.ndarray, DictFitReport]:
    """Alternate ISTA coding and atom refits for ``epochs`` rounds."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if n == 0:
        raise ValueError("empty training corpus")
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    if K > n / 100:
        log.warning("K=%d is not much smaller than the corpus (n=%d); the prior may overfit", K, n)
    rng = np.random.default_rng(seed)
    atoms = Y[rng.choice(n, size=K, replace=False)].copy()
    norms = np.linalg.norm(atoms, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot seed atoms from zero signals")
    atoms /= norms

    report = DictFitReport()
    A = None
    for _ in range(epochs):
        A = sparse_encode(atoms, Y, lam, max_iters, tol, A0=A)
        report.objective.append(objective(Y, atoms, A, lam))
        atoms = dict_update(atoms, Y, A)
        dead = np.flatnonzero(~A.any(axis=0))
        if dead.size:
            # dead atoms carry zero codes, so swapping them leaves the objective unchanged
            err = np.sum((Y - A @ atoms) ** 2, axis=1)
            worst = np.argsort(-err, kind="stable")[: dead.size]
            for j, i in zip(dead, worst):
                atoms[j] = Y[i] / np.linalg.norm(Y[i])

    # store-precision atoms so in-memory and on-disk dictionaries agree exactly
    atoms = atoms.astype(np.float32).astype(np.float64)
    A = sparse_encode(atoms, Y, lam, max_iters, tol, A0=A)
    report.final_mse = recon_mse(Y, atoms, A)
    report.sparsity = sparsity(A)
    if source_hash is None:
        source_hash = hashlib.sha256(np.ascontiguousarray(Y, dtype="<f4").tobytes()).digest()
    return Dictionary(atoms, lam, source_hash), A, report


def reconstruct(D, a) -> np.ndarray:
    atoms = _atoms(D)
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != atoms.shape[0]:
        raise ValueError(f"code length {a.shape[-1]} does not match K={atoms.shape[0]}")
    return a @ atoms


def sparsity(A) -> float:
    """Fraction of exactly-zero code entries."""
    A = np.asarray(A)
    return float(np.mean(A == 0)) if A.size else 1.0


def recon_mse(Y, D, A) -> float:
    R = np.asarray(Y, dtype=np.float64) - reconstruct(D, A)
    return float(np.mean(R * R))
