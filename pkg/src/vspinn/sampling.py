"""Seeded collocation points: interior, boundary pieces, near-hole annulus."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import Circle, ConstraintSpec, ProblemSpec


@dataclass(frozen=True)
class SamplePlan:
    n_interior: int = 1000
    # total count split in proportion to locus measure, or counts per constraint name
    n_boundary: int | dict = 100
    n_near_feature: int = 0
    # annulus radii as multiples of the hole radius
    annulus: tuple[float, float] = (1.0, 2.0)
    seed: int = 0
    resample_each_epoch: bool = True

    def __post_init__(self):
        if self.n_interior < 0 or self.n_near_feature < 0:
            raise ValueError("sample counts must be >= 0")
        counts = self.n_boundary.values() if isinstance(self.n_boundary, dict) else [self.n_boundary]
        if any(c < 0 for c in counts):
            raise ValueError("boundary counts must be >= 0")
        inner, outer = self.annulus
        if inner < 1.0 or outer <= inner:
            raise ValueError("annulus must satisfy 1 <= inner < outer (in hole radii)")


_INTERIOR, _BOUNDARY = 0, 1


def _rng(plan: SamplePlan, epoch: int, stream: int) -> np.random.Generator:
    e = epoch if plan.resample_each_epoch else 0
    return np.random.default_rng([plan.seed, e, stream])


def _check_annulus(spec: ProblemSpec, plan: SamplePlan) -> None:
    g = spec.geometry
    if g.hole_center is None:
        raise ValueError("near-feature sampling needs a geometry with a hole")
    outer = plan.annulus[1] * g.hole_radius
    c = np.asarray(g.hole_center)
    if np.any(c - outer < np.asarray(g.lo)) or np.any(c + outer > np.asarray(g.hi)):
        raise ValueError("annulus reaches outside the domain")


def sample_interior(spec: ProblemSpec, plan: SamplePlan, epoch: int = 0) -> np.ndarray:
    """Interior points in the spec's (scaled) coordinates, shape (n, d).

    Points are drawn in original coordinates and mapped by the scale factors,
    so problems that differ only in N see the same relative layout.
    """
    g = spec.geometry
    if not np.all(g.extent > 0):
        raise ValueError("geometry has zero volume")
    if g.hole_fraction() >= 1.0:
        raise ValueError("hole covers the domain")
    rng = _rng(plan, epoch, _INTERIOR)
    lo, hi = np.asarray(g.lo), np.asarray(g.hi)
    chunks, have = [], 0
    while have < plan.n_interior:
        need = plan.n_interior - have
        draw = rng.uniform(lo, hi, size=(max(need, 16) + need // 4, g.dim))
        inside = np.all((draw > lo) & (draw < hi), axis=1)
        if g.hole_center is not None:
            inside &= np.linalg.norm(draw - np.asarray(g.hole_center), axis=1) > g.hole_radius
        draw = draw[inside][:need]
        chunks.append(draw)
        have += len(draw)
    pts = np.concatenate(chunks) if chunks else np.zeros((0, g.dim))
    if plan.n_near_feature:
        _check_annulus(spec, plan)
        r_in, r_out = (a * g.hole_radius for a in plan.annulus)
        r = np.sqrt(rng.uniform(r_in**2, r_out**2, plan.n_near_feature))
        # keep strictly off the hole boundary
        r = np.maximum(r, r_in * (1.0 + 1e-12))
        theta = rng.uniform(0.0, 2.0 * math.pi, plan.n_near_feature)
        ring = np.asarray(g.hole_center) + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts = np.concatenate([pts, ring])
    return pts * spec.factors


def boundary_counts(spec: ProblemSpec, plan: SamplePlan) -> dict[str, int]:
    """Points per constraint; an integer total is split by locus measure."""
    names = [c.name for c in spec.constraints]
    if isinstance(plan.n_boundary, dict):
        unknown = set(plan.n_boundary) - set(names)
        if unknown:
            raise ValueError(f"unknown constraint names in n_boundary: {sorted(unknown)}")
        return {n: int(plan.n_boundary.get(n, 0)) for n in names}
    measures = np.array([spec.geometry.measure(c.locus) for c in spec.constraints])
    total = int(plan.n_boundary)
    if measures.sum() <= 0:
        raise ValueError("boundary has zero measure")
    raw = total * measures / measures.sum()
    counts = np.floor(raw).astype(int)
    # largest remainder, ties broken by constraint order
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    return dict(zip(names, (int(c) for c in counts)))


def sample_boundary(spec: ProblemSpec, plan: SamplePlan, epoch: int = 0) -> list[tuple[np.ndarray, ConstraintSpec]]:
    """Per-constraint point batches in the spec's (scaled) coordinates.

    For periodic constraints the points lie on the first face; the partner
    points on the opposite face share every other coordinate.
    """
    if not spec.constraints:
        raise ValueError("problem has no constraints")
    counts = boundary_counts(spec, plan)
    rng = _rng(plan, epoch, _BOUNDARY)
    out = []
    g = spec.geometry
    for c in spec.constraints:
        n = counts[c.name]
        if n and g.measure(c.locus) <= 0:
            raise ValueError(f"constraint {c.name!r} sits on a zero-measure locus")
        if isinstance(c.locus, Circle) and g.hole_center is None:
            raise ValueError(f"constraint {c.name!r} needs a hole")
        pts = g.sample_locus(c.locus, n, rng)
        out.append((pts * spec.factors, c))
    return out
