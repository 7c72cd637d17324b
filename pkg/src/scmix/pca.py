"""Representation-shift diagnostic: per-layer 2D PCA centers and distances.

States from two model snapshots are projected into a shared 2-component
basis fitted on the union of both snapshots' states per layer (distances
between centers are only meaningful in a common coordinate system). The
per-layer distance is the Euclidean distance between the snapshots' mean
projected coordinates; the aggregate is the mean over layers, with a
pooled-center alternative behind a flag.

The eigensolver is a cyclic Jacobi rotation on the covariance matrix:
deterministic, dependency-free, and plenty fast for widths up to 128.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataError
from .mixing import MixingMode
from .model import ModelParams, forward

DEGENERATE_TOL = 1e-12


@dataclass
class StateDump:
    """Per-layer hidden-state matrices collected over an evaluation corpus."""

    tag: str
    layers: list[np.ndarray]  # each [n_states, d_model]
    mode: MixingMode = MixingMode.NO_MIX


@dataclass
class Pca2:
    components: np.ndarray  # [2, d], orthonormal rows
    projected: np.ndarray  # [n, 2]
    mean: np.ndarray  # [d]
    eigenvalues: np.ndarray  # [2], descending
    degenerate: bool


@dataclass
class PcaReport:
    layer_distances: list[float]
    aggregate: float
    centers_a: list[tuple[float, float]]
    centers_b: list[tuple[float, float]]
    tag_a: str
    tag_b: str
    aggregate_kind: str = "mean-distance"
    projections_a: list[np.ndarray] | None = None
    projections_b: list[np.ndarray] | None = None


def jacobi_eigh(sym: np.ndarray, max_sweeps: int = 100, tol: float = 1e-14):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), unordered.
    """
    a = np.array(sym, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ContractError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ContractError("jacobi_eigh needs a symmetric matrix")
    v = np.eye(n)
    scale = np.abs(a).max() or 1.0
    for _ in range(max_sweeps):
        off_sq = (a * a).sum() - (np.diag(a) ** 2).sum()
        if off_sq <= (tol * scale) ** 2:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale * 1e-2:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


def _fix_sign(component: np.ndarray) -> np.ndarray:
    for value in component:
        if abs(value) > DEGENERATE_TOL:
            return component if value > 0 else -component
    return component


def pca_2(rows: np.ndarray) -> Pca2:
    """Top-2 principal components of ``rows`` with a deterministic sign.

    The covariance is the population covariance of the mean-centered rows.
    Data of rank < 2 come back flagged degenerate (the second component then
    spans no variance).
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 3 or rows.shape[1] < 2:
        raise ContractError(f"pca_2 needs at least 3 rows and 2 columns, got {rows.shape}")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / rows.shape[0]
    eigenvalues, vectors = jacobi_eigh(cov)
    order = np.argsort(-eigenvalues, kind="stable")[:2]
    components = np.stack([_fix_sign(vectors[:, i]) for i in order])
    top = eigenvalues[order]
    scale = max(abs(eigenvalues).max(), 1.0)
    degenerate = top[1] <= DEGENERATE_TOL * scale
    projected = centered @ components.T
    return Pca2(
        components=components,
        projected=projected,
        mean=mean,
        eigenvalues=top,
        degenerate=degenerate,
    )


def collect_states(
    params: ModelParams,
    sequences: list[list[int]],
    tag: str,
    mode: MixingMode = MixingMode.NO_MIX,
) -> StateDump:
    """Layer states over teacher-forced sequences, concatenated position-wise.

    Generation is frozen to the given gold continuations for determinism, so
    the mixing mode does not alter the collected states; it is recorded on
    the dump for provenance.
    """
    if not sequences:
        raise ContractError("collect_states needs a nonempty corpus")
    per_layer: list[list[np.ndarray]] = []
    for seq in sequences:
        with ad.no_grad():
            trace = forward(params, seq, capture_layers=True)
        if not per_layer:
            per_layer = [[] for _ in trace.layers]
        for store, layer in zip(per_layer, trace.layers):
            store.append(layer.data.copy())
    return StateDump(tag=tag, layers=[np.concatenate(chunks) for chunks in per_layer], mode=mode)


def shift_report(
    dump_a: StateDump,
    dump_b: StateDump,
    aggregate: str = "mean-distance",
    keep_projections: bool = False,
) -> PcaReport:
    """Distance between representation centers of two dumps, per layer.

    The basis per layer is fitted on the union of both dumps' states, so the
    report is symmetric in its inputs.
    """
    if len(dump_a.layers) != len(dump_b.layers):
        raise ContractError(
            f"layer count mismatch: {len(dump_a.layers)} vs {len(dump_b.layers)}"
        )
    if aggregate not in ("mean-distance", "pooled-center"):
        raise ContractError(f"unknown aggregate kind {aggregate!r}")
    distances: list[float] = []
    centers_a: list[tuple[float, float]] = []
    centers_b: list[tuple[float, float]] = []
    proj_a: list[np.ndarray] = []
    proj_b: list[np.ndarray] = []
    for la, lb in zip(dump_a.layers, dump_b.layers):
        if la.shape[1] != lb.shape[1]:
            raise ContractError(f"state width mismatch: {la.shape} vs {lb.shape}")
        fit = pca_2(np.concatenate([la, lb]))
        pa = fit.projected[: la.shape[0]]
        pb = fit.projected[la.shape[0] :]
        za = pa.mean(axis=0)
        zb = pb.mean(axis=0)
        centers_a.append((float(za[0]), float(za[1])))
        centers_b.append((float(zb[0]), float(zb[1])))
        distances.append(float(np.linalg.norm(zb - za)))
        if keep_projections:
            proj_a.append(pa)
            proj_b.append(pb)
    if aggregate == "pooled-center":
        pooled_a = np.mean(centers_a, axis=0)
        pooled_b = np.mean(centers_b, axis=0)
        agg = float(np.linalg.norm(pooled_b - pooled_a))
    else:
        agg = float(np.mean(distances))
    return PcaReport(
        layer_distances=distances,
        aggregate=agg,
        centers_a=centers_a,
        centers_b=centers_b,
        tag_a=dump_a.tag,
        tag_b=dump_b.tag,
        aggregate_kind=aggregate,
        projections_a=proj_a if keep_projections else None,
        projections_b=proj_b if keep_projections else None,
    )


# ---- report files -----------------------------------------------------------------


def write_report(path, report: PcaReport) -> None:
    """Line-delimited per-layer records followed by the aggregate record."""
    lines = [f"# tags\t{report.tag_a}\t{report.tag_b}\t{report.aggregate_kind}\n"]
    lines.append("layer\tdistance\tza_x\tza_y\tzb_x\tzb_y\n")
    for i, d in enumerate(report.layer_distances):
        za, zb = report.centers_a[i], report.centers_b[i]
        lines.append(f"{i}\t{d!r}\t{za[0]!r}\t{za[1]!r}\t{zb[0]!r}\t{zb[1]!r}\n")
    lines.append(f"aggregate\t{report.aggregate!r}\t\t\t\t\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_report(path) -> PcaReport:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if len(lines) < 4 or not lines[0].startswith("# tags\t"):
        raise DataError(f"{path}: not a shift report")
    _, tag_a, tag_b, kind = lines[0].split("\t")
    distances: list[float] = []
    centers_a: list[tuple[float, float]] = []
    centers_b: list[tuple[float, float]] = []
    aggregate = None
    for line in lines[2:]:
        fields = line.split("\t")
        if fields[0] == "aggregate":
            aggregate = float(fields[1])
            continue
        distances.append(float(fields[1]))
        centers_a.append((float(fields[2]), float(fields[3])))
        centers_b.append((float(fields[4]), float(fields[5])))
    if aggregate is None:
        raise DataError(f"{path}: missing aggregate record")
    return PcaReport(
        layer_distances=distances,
        aggregate=aggregate,
        centers_a=centers_a,
        centers_b=centers_b,
        tag_a=tag_a,
        tag_b=tag_b,
        aggregate_kind=kind,
    )


def write_scatter(path, report: PcaReport) -> None:
    """Per-point projected coordinates for external plotting."""
    if report.projections_a is None:
        raise ContractError("report was built without keep_projections")
    lines = ["layer\ttag\tx\ty\n"]
    for i, (pa, pb) in enumerate(zip(report.projections_a, report.projections_b)):
        for tag, points in ((report.tag_a, pa), (report.tag_b, pb)):
            for x, y in points:
                lines.append(f"{i}\t{tag}\t{x!r}\t{y!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
