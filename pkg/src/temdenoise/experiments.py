"""Domain-shift reports and ablation runners; every result is a list of CSV-ready rows."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import csvio, sparsedict
from .metrics import mean_abs_first_diff, snr_rows
from .network import DTEMDNet
from .simgen import Dataset
from .tta import COMPONENTS, TTAConfig, adapt_dataset

METRIC_COLUMNS = ["domain", "method", "mean_snr_db", "std_snr_db", "mean_abs_first_diff", "mafd_gap", "n"]
METHODS = ("noisy", "source", "dp-tta", "dict-only", "source-dict")


@dataclass
class MetricRow:
    domain: str
    method: str
    mean_snr_db: float
    std_snr_db: float
    mean_abs_first_diff: float
    mafd_gap: float  # mean over samples of |mafd(estimate) - mafd(clean)|
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("metric row needs n > 0")


def metric_row(domain: str, method: str, clean: np.ndarray, est: np.ndarray) -> MetricRow:
    s = snr_rows(clean, est)
    mafd_est = np.array([mean_abs_first_diff(e) for e in est])
    mafd_clean = np.array([mean_abs_first_diff(c) for c in clean])
    return MetricRow(domain, method, float(np.mean(s)), float(np.std(s)), float(np.mean(mafd_est)),
                     float(np.mean(np.abs(mafd_est - mafd_clean))), len(clean))


def dict_only(dictionary: sparsedict.Dictionary, noisy: np.ndarray, norm_scale: float, max_iters: int = 300) -> np.ndarray:
    """Sparse-code the noisy traces against the frozen dictionary and reconstruct (raw mV)."""
    codes = sparsedict.sparse_encode(dictionary, np.asarray(noisy, dtype=np.float64) * norm_scale,
                                     dictionary.lam, max_iters=max_iters)
    return sparsedict.reconstruct(dictionary, codes) / norm_scale


def domain_report(
    model: DTEMDNet,
    dictionary: sparsedict.Dictionary,
    domains: dict[str, Dataset],
    tta_cfg: TTAConfig = TTAConfig(),
    seed: int = 0,
) -> list[MetricRow]:
    """Rows for noisy input, source model, DP-TTA, dictionary-only coding and the model's dictionary branch."""
    rows = []
    for name, data in domains.items():
        if data is None or len(data) == 0:
            raise ValueError(f"missing corpus for domain {name!r}")
        rep = adapt_dataset(model, data, tta_cfg, seed)
        scale = model.cfg.norm_scale
        rows.append(metric_row(name, "noisy", data.clean, data.noisy))
        rows.append(metric_row(name, "source", data.clean, rep.source_denoised))
        rows.append(metric_row(name, "dp-tta", data.clean, rep.denoised))
        rows.append(metric_row(name, "dict-only", data.clean, dict_only(dictionary, data.noisy, scale)))
        rows.append(metric_row(name, "source-dict", data.clean, rep.source_recon))
    return rows


def write_metric_rows(rows: list[MetricRow], path: str | Path) -> None:
    csvio.write(path, "metric_rows", 1, METRIC_COLUMNS, [asdict(r) for r in rows])


def read_metric_rows(path: str | Path) -> list[MetricRow]:
    recs = csvio.read(path, "metric_rows", 1, METRIC_COLUMNS, {"domain": str, "method": str, "n": int})
    return [MetricRow(**r) for r in recs]


@dataclass
class AblationGrid:
    axis: str
    columns: list[str]
    cells: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        csvio.write(path, f"ablation_{self.axis}", 1, self.columns, self.cells)

    @classmethod
    def read_csv(cls, path: str | Path, axis: str) -> "AblationGrid":
        columns = K_COLUMNS if axis == "k" else LOSS_COLUMNS
        types = {"K": int, "monotone": int} if axis == "k" else {"components": str}
        return cls(axis, columns, csvio.read(path, f"ablation_{axis}", 1, columns, types))


K_COLUMNS = ["K", "recon_mse", "sparsity", "final_objective", "monotone"]
LOSS_COLUMNS = ["components", "snr_source", "snr_adapted", "gain_db"]

# enumeration order of the loss-component ablation table
LOSS_SUBSETS = [
    ("den",), ("sparse",), ("oov",),
    ("den", "sparse"), ("den", "oov"), ("sparse", "oov"),
    COMPONENTS,
]


def ablate_k(ks, corpus: np.ndarray, lam: float = 1.0, seed: int = 0, epochs: int = 10, **fit_kw) -> AblationGrid:
    """Fit one dictionary per K on the same (normalised) corpus."""
    ks = list(ks)
    if not ks:
        raise ValueError("need at least one K")
    corpus = np.asarray(corpus, dtype=np.float64)
    grid = AblationGrid("k", K_COLUMNS)
    for k in ks:
        if k > len(corpus):
            raise ValueError(f"K={k} exceeds corpus size {len(corpus)}")
        _, _, rep = sparsedict.learn_dictionary(corpus, k, lam, epochs, seed, **fit_kw)
        obj = np.array(rep.objective)
        mono = bool(np.all(obj[1:] <= obj[:-1] + 1e-9 * np.abs(obj[:-1])))
        grid.cells.append({"K": k, "recon_mse": rep.final_mse, "sparsity": rep.sparsity,
                           "final_objective": float(obj[-1]), "monotone": int(mono)})
    return grid


def ablate_losses(model: DTEMDNet, corpus: Dataset | dict[str, Dataset], cfg: TTAConfig = TTAConfig(),
                  seed: int = 0, subsets=LOSS_SUBSETS) -> AblationGrid:
    """Adapt once per loss-component subset; gain is adapted minus source mean SNR.

    A dict of corpora is pooled: each corpus is adapted on its own batches and
    the SNRs are averaged with per-sample weights.
    """
    corpora = corpus if isinstance(corpus, dict) else {"corpus": corpus}
    if not corpora:
        raise ValueError("loss ablation needs at least one corpus")
    for name, data in corpora.items():
        if data is None or not np.any(data.clean):
            raise ValueError(f"loss ablation needs clean references ({name})")
    sizes = np.array([len(d) for d in corpora.values()], dtype=float)
    grid = AblationGrid("losses", LOSS_COLUMNS)
    for subset in subsets:
        sub_cfg = TTAConfig(**{**asdict(cfg), "components": tuple(subset)})
        reps = [adapt_dataset(model, data, sub_cfg, seed) for data in corpora.values()]
        pre = float(np.dot(sizes, [r.snr_pre for r in reps]) / sizes.sum())
        post = float(np.dot(sizes, [r.snr_post for r in reps]) / sizes.sum())
        grid.cells.append({"components": "+".join(subset) if subset else "none",
                           "snr_source": pre, "snr_adapted": post, "gain_db": post - pre})
    return grid


def all_subsets():
    """Every subset of the three components, empty set included."""
    return [c for r in range(4) for c in itertools.combinations(COMPONENTS, r)]
