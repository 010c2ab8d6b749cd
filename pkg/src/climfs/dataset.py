"""Multi-view data containers, CSV manifests, and missing-data simulation.

Conventions
-----------
* A view is a (d_v, n) float64 matrix whose *columns* are samples.
* Masks share the view's shape with entries in {0, 1}; 1 marks observed.
* CSV files carry no header; floats are written with 17 significant
  digits so that a save/load round trip is bit-exact.
* All randomness flows through a numpy ``default_rng`` seeded explicitly.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from climfs.errors import ConfigError

CSV_FLOAT_FMT = "%.17g"


class ScenarioKind(str, enum.Enum):
    """Supported missing-data regimes."""

    VIEW = "view"          # whole views vanish for selected samples
    VARIABLE = "variable"  # individual entries vanish per view
    MIXED = "mixed"        # view removal, then entry removal on the rest


@dataclass
class MissingScenario:
    """Simulation request: which regime, how much, and the seed."""

    kind: ScenarioKind
    delta: float
    seed: int

    def __post_init__(self) -> None:
        self.kind = ScenarioKind(self.kind)
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        self.seed = int(self.seed)


@dataclass
class MultiViewDataset:
    """Aligned views of one sample set, with optional cluster labels."""

    views: list[np.ndarray]
    labels: np.ndarray | None = None
    view_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.views:
            raise ValueError("need at least one view")
        self.views = [np.ascontiguousarray(v, dtype=float) for v in self.views]
        n = self.views[0].shape[1]
        for i, v in enumerate(self.views):
            if v.ndim != 2:
                raise ValueError(f"view {i} is not a matrix")
            if v.shape[1] != n:
                raise ValueError(
                    f"view {i} has {v.shape[1]} samples, expected {n}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"view {i} contains non-finite entries")
        if not self.view_names:
            self.view_names = [f"view{i}" for i in range(len(self.views))]
        if len(self.view_names) != len(self.views):
            raise ValueError("one name per view required")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (n,):
                raise ValueError("labels must be one integer per sample")
            if self.labels.min(initial=0) < 0:
                raise ValueError("labels must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[1]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [v.shape[0] for v in self.views]

    def copy(self) -> "MultiViewDataset":
        return MultiViewDataset(
            views=[v.copy() for v in self.views],
            labels=None if self.labels is None else self.labels.copy(),
            view_names=list(self.view_names))


@dataclass
class MaskMatrix:
    """Observation masks, one 0/1 matrix per view."""

    masks: list[np.ndarray]

    def __post_init__(self) -> None:
        self.masks = [np.ascontiguousarray(m, dtype=float) for m in self.masks]
        for i, m in enumerate(self.masks):
            if m.ndim != 2:
                raise ValueError(f"mask {i} is not a matrix")
            if not np.isin(m, (0.0, 1.0)).all():
                raise ValueError(f"mask {i} has entries outside {{0, 1}}")

    @classmethod
    def all_observed(cls, ds: MultiViewDataset) -> "MaskMatrix":
        return cls([np.ones_like(v) for v in ds.views])

    def check_against(self, ds: MultiViewDataset) -> None:
        if len(self.masks) != ds.n_views:
            raise ValueError("mask/view count mismatch")
        for m, v in zip(self.masks, ds.views):
            if m.shape != v.shape:
                raise ValueError("mask/view shape mismatch")

    def observed_fraction(self) -> float:
        tot = sum(m.size for m in self.masks)
        return float(sum(m.sum() for m in self.masks) / tot)


def _round_count(x: float) -> int:
    """Deterministic round-half-up used for all simulated counts."""
    return int(np.floor(x + 0.5))


def _check_no_empty_samples(masks: list[np.ndarray], context: str) -> None:
    n = masks[0].shape[1]
    alive = np.zeros(n, dtype=bool)
    for m in masks:
        alive |= m.any(axis=0)
    if not alive.all():
        dead = int(np.flatnonzero(~alive)[0])
        raise ValueError(
            f"{context}: sample {dead} would lose every view; lower delta "
            f"or change the seed")


def apply_missing(ds: MultiViewDataset,
                  scenario: MissingScenario) -> tuple[MultiViewDataset, MaskMatrix]:
    """Mask `ds` according to `scenario`; returns (masked data, masks).

    Counts are exact under round-half-up:

    * view: exactly round(delta * n) samples each lose one whole view,
      chosen uniformly (requires >= 2 views).
    * variable: each view independently loses round(delta * d_v * n)
      entries, uniformly without replacement.
    * mixed: the view stage first, then for each view
      round(delta * d_v * n_remaining) entries vanish from the columns of
      samples that kept the view.

    Masked entries are zeroed in the returned dataset; observed entries
    are copied verbatim. Raises ValueError if any sample would end up with
    no observed view at all.
    """
    rng = np.random.default_rng(scenario.seed)
    n, V = ds.n_samples, ds.n_views
    masks = [np.ones_like(v) for v in ds.views]

    if scenario.kind in (ScenarioKind.VIEW, ScenarioKind.MIXED):
        if V < 2:
            raise ValueError("view removal needs at least two views")
        m = _round_count(scenario.delta * n)
        hit = rng.choice(n, size=m, replace=False)
        dropped_view = rng.integers(0, V, size=m)
        for sample, view in zip(hit, dropped_view):
            masks[view][:, sample] = 0.0

    if scenario.kind == ScenarioKind.VARIABLE:
        for v, mask in enumerate(masks):
            d_v = mask.shape[0]
            cnt = _round_count(scenario.delta * d_v * n)
            flat = rng.choice(d_v * n, size=cnt, replace=False)
            mask.reshape(-1)[flat] = 0.0

    if scenario.kind == ScenarioKind.MIXED:
        for v, mask in enumerate(masks):
            keep = np.flatnonzero(mask.any(axis=0))
            d_v = mask.shape[0]
            cnt = _round_count(scenario.delta * d_v * keep.shape[0])
            flat = rng.choice(d_v * keep.shape[0], size=cnt, replace=False)
            rows, cols = np.unravel_index(flat, (d_v, keep.shape[0]))
            mask[rows, keep[cols]] = 0.0

    _check_no_empty_samples(masks, f"{scenario.kind.value} delta={scenario.delta}")

    masked_views = [np.where(m == 1.0, v, 0.0) for v, m in zip(ds.views, masks)]
    masked = MultiViewDataset(views=masked_views, labels=ds.labels,
                              view_names=list(ds.view_names))
    return masked, MaskMatrix(masks)


def mean_impute(view: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked entries with the per-feature mean of observed entries.

    A feature row with no observed entry is filled with zeros and a
    warning is emitted.
    """
    view = np.asarray(view, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if view.shape != mask.shape:
        raise ValueError("view/mask shape mismatch")
    counts = mask.sum(axis=1)
    sums = (view * mask).sum(axis=1)
    means = np.zeros(view.shape[0])
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen]
    if not seen.all():
        warnings.warn(
            f"{int((~seen).sum())} feature row(s) fully missing; imputing zeros",
            stacklevel=2)
    out = view.copy()
    miss = mask == 0.0
    out[miss] = np.broadcast_to(means[:, None], view.shape)[miss]
    return out


def mean_impute_dataset(ds: MultiViewDataset, masks: MaskMatrix) -> MultiViewDataset:
    """Per-view `mean_impute`, keeping labels and names."""
    masks.check_against(ds)
    views = [mean_impute(v, m) for v, m in zip(ds.views, masks.masks)]
    return MultiViewDataset(views=views, labels=ds.labels,
                            view_names=list(ds.view_names))


def normalize_columns(ds: MultiViewDataset) -> MultiViewDataset:
    """Scale every sample column of every view to unit l2 norm.

    Zero columns are left untouched (warning emitted): rescaling them is
    undefined and downstream code treats them like any other column.
    """
    views = []
    for name, v in zip(ds.view_names, ds.views):
        norms = np.linalg.norm(v, axis=0)
        zero = norms == 0.0
        if zero.any():
            warnings.warn(
                f"view {name}: {int(zero.sum())} zero column(s) left "
                f"unnormalized", stacklevel=2)
        safe = np.where(zero, 1.0, norms)
        views.append(v / safe)
    return MultiViewDataset(views=views, labels=ds.labels,
                            view_names=list(ds.view_names))


# ------------------------------------------------------------- CSV + JSON


def _load_csv_matrix(path: Path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix CSV {path}: {exc}") from exc
    return arr


def load_manifest(path: str | Path) -> MultiViewDataset:
    """Load a dataset described by a manifest JSON.

    Format: {"views": [{"name": str, "path": csv}, ...],
             "labels": csv-path-or-null}. View CSVs are (d_v, n) with no
    header; the labels CSV is a single integer column of length n.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(spec, dict) or "views" not in spec:
        raise ConfigError(f"manifest {path} lacks a 'views' list")
    base = path.parent
    views, names = [], []
    for entry in spec["views"]:
        if set(entry) != {"name", "path"}:
            raise ConfigError(f"manifest view entries need exactly name/path, got {sorted(entry)}")
        views.append(_load_csv_matrix(base / entry["path"]))
        names.append(str(entry["name"]))
    labels = None
    if spec.get("labels"):
        raw = _load_csv_matrix(base / spec["labels"]).reshape(-1)
        labels = raw.astype(int)
        if not np.array_equal(raw, labels):
            raise ConfigError("labels CSV must contain integers")
    extra = set(spec) - {"views", "labels"}
    if extra:
        raise ConfigError(f"unknown manifest keys: {sorted(extra)}")
    try:
        return MultiViewDataset(views=views, labels=labels, view_names=names)
    except ValueError as exc:
        raise ConfigError(f"manifest {path}: {exc}") from exc


def save_dataset(ds: MultiViewDataset, out_dir: str | Path) -> Path:
    """Write view/label CSVs plus manifest.json to `out_dir`; returns the
    manifest path. Floats use 17 significant digits (bit-exact reload)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, v in zip(ds.view_names, ds.views):
        fname = f"{name}.csv"
        np.savetxt(out / fname, v, fmt=CSV_FLOAT_FMT, delimiter=",")
        entries.append({"name": name, "path": fname})
    labels_entry = None
    if ds.labels is not None:
        np.savetxt(out / "labels.csv", ds.labels[:, None], fmt="%d", delimiter=",")
        labels_entry = "labels.csv"
    manifest = {"views": entries, "labels": labels_entry}
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return mpath


def save_masks(masks: MaskMatrix, view_names: list[str],
               out_dir: str | Path) -> Path:
    """Write per-view 0/1 mask CSVs plus masks.json; returns the index path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, m in zip(view_names, masks.masks):
        fname = f"mask_{name}.csv"
        np.savetxt(out / fname, m, fmt="%d", delimiter=",")
        entries.append({"name": name, "path": fname})
    mpath = out / "masks.json"
    mpath.write_text(json.dumps({"masks": entries}, indent=2, sort_keys=True) + "\n")
    return mpath


def load_masks(path: str | Path) -> MaskMatrix:
    """Load masks written by `save_masks`."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mask index {path}: {exc}") from exc
    masks = [_load_csv_matrix(path.parent / e["path"]) for e in spec["masks"]]
    try:
        return MaskMatrix(masks)
    except ValueError as exc:
        raise ConfigError(f"mask index {path}: {exc}") from exc


# ------------------------------------------------------------- synthetic


def make_synthetic(n: int, views: int, clusters: int, informative: int,
                   noise: int, separation: float = 3.0,
                   noise_scale: float = 1.0, seed: int = 0) -> MultiViewDataset:
    """Planted-cluster generator used by tests and the CLI.

    Each view stacks `informative` features carrying the cluster structure
    (unit-norm random centers scaled by `separation`, plus unit Gaussian
    jitter) on top of `noise` pure-noise features drawn N(0, noise_scale).
    Cluster sizes are as balanced as n allows; sample order is shuffled.
    """
    if min(n, views, clusters, informative) < 1 or noise < 0:
        raise ValueError("n, views, clusters, informative must be >= 1, noise >= 0")
    if clusters > n:
        raise ValueError("more clusters than samples")
    rng = np.random.default_rng(seed)
    base = np.arange(n) % clusters
    labels = rng.permutation(base)
    view_list = []
    for _ in range(views):
        centers = rng.normal(size=(clusters, informative))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        centers *= separation
        signal = centers[labels].T + rng.normal(size=(informative, n))
        noise_block = rng.normal(scale=noise_scale, size=(noise, n))
        view_list.append(np.vstack([signal, noise_block]))
    return MultiViewDataset(views=view_list, labels=labels)
