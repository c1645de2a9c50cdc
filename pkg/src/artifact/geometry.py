"""Axis-aligned boxes and interior-disjoint unions of boxes.

Boxes are closed. Two boxes "overlap" when their intersection has positive
width in every dimension where the first box has positive width; touching
faces do not count. Zero-width (degenerate) boxes are allowed everywhere and
behave as closed lower-dimensional slabs.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

MEMBERSHIP_TOL = 1e-12


class Box:
    """Closed axis-aligned box ``[lo, hi]`` in ``R^d``.

    Parameters
    ----------
    lo, hi : array-like of shape (d,)
        Per-dimension bounds with ``lo <= hi``.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.array(lo, dtype=float).reshape(-1)
        hi = np.array(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"lo has {lo.size} entries but hi has {hi.size}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"lo[{bad}]={lo[bad]} exceeds hi[{bad}]={hi[bad]}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_center_scale(cls, center, scale) -> "Box":
        center = np.asarray(center, dtype=float)
        scale = np.asarray(scale, dtype=float)
        if np.any(scale < 0):
            raise ValueError("scale must be nonnegative")
        return cls(center - scale, center + scale)

    @classmethod
    def point(cls, p) -> "Box":
        return cls(p, p)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def scale(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def is_degenerate(self) -> bool:
        return bool(np.any(self.hi <= self.lo))

    def contains(self, points, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Closed membership test for one point or an ``(n, d)`` array."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, box has {self.dim}")
        inside = np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)
        return bool(inside[0]) if single else inside

    def contains_box(self, other: "Box", tol: float = MEMBERSHIP_TOL) -> bool:
        _check_dim(self.dim, other.dim)
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersect(self, other: "Box") -> "Box | None":
        """Closed intersection, possibly degenerate; ``None`` when empty."""
        _check_dim(self.dim, other.dim)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def overlaps(self, other: "Box") -> bool:
        """True when ``other`` cuts a set of full relative dimension out of self."""
        return _overlap_bounds(self, other) is not None

    def as_tuple(self) -> tuple:
        return tuple(self.lo.tolist()) + tuple(self.hi.tolist())

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["lo"], d["hi"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self) -> int:
        return hash(self.as_tuple())

    def __repr__(self) -> str:
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


class BoxUnion:
    """Union of same-dimension boxes with pairwise-disjoint interiors.

    The disjointness invariant is the caller's responsibility; use
    :func:`disjointify` to build one from overlapping boxes and
    :meth:`check_disjoint` to verify it.
    """

    __slots__ = ("boxes", "dim")

    def __init__(self, boxes: Iterable[Box] = (), dim: int | None = None):
        boxes = tuple(boxes)
        if dim is None:
            if not boxes:
                raise ValueError("an empty BoxUnion needs an explicit dimension")
            dim = boxes[0].dim
        for i, b in enumerate(boxes):
            if not isinstance(b, Box):
                raise TypeError(f"member {i} is not a Box")
            if b.dim != dim:
                raise ValueError(f"member {i} has dimension {b.dim}, expected {dim}")
        self.boxes = boxes
        self.dim = int(dim)

    def __iter__(self) -> Iterator[Box]:
        return iter(self.boxes)

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, i) -> Box:
        return self.boxes[i]

    def is_empty(self) -> bool:
        return len(self.boxes) == 0

    def volume(self) -> float:
        return union_volume(self)

    def contains(self, points, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        return union_contains(self, points, tol)

    def hull(self) -> Box:
        if not self.boxes:
            raise ValueError("hull of an empty union")
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return Box(lo, hi)

    def check_disjoint(self) -> bool:
        for i, a in enumerate(self.boxes):
            for b in self.boxes[i + 1:]:
                if _interiors_meet(a, b):
                    return False
        return True

    def to_list(self) -> list:
        return [b.to_dict() for b in self.boxes]

    @classmethod
    def from_list(cls, items: Sequence[dict], dim: int | None = None) -> "BoxUnion":
        return cls([Box.from_dict(d) for d in items], dim=dim)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "boxes": self.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxUnion":
        """Read ``{"dim": ..., "boxes": [...]}``; other keys are ignored."""
        return cls.from_list(d["boxes"], dim=d.get("dim"))

    def __repr__(self) -> str:
        return f"BoxUnion(dim={self.dim}, n={len(self.boxes)})"


def _check_dim(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def _interiors_meet(a: Box, b: Box) -> bool:
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    return bool(np.all(hi > lo))


def _overlap_bounds(a: Box, b: Box):
    """Bounds of ``a ∩ b`` if the intersection has a's relative dimension."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(lo > hi):
        return None
    spread = a.hi > a.lo
    if np.any(spread & (hi <= lo)):
        return None
    return lo, hi


def box_volume(b: Box) -> float:
    return b.volume()


def union_volume(u: BoxUnion) -> float:
    return float(sum(b.volume() for b in u.boxes))


def _subtract_one(a: Box, b: Box) -> list[Box]:
    if _overlap_bounds(a, b) is None:
        return [a]
    cur_lo = a.lo.copy()
    cur_hi = a.hi.copy()
    pieces = []
    # Sweep dimensions in order; each dimension peels off at most two slabs.
    for i in range(a.dim):
        if cur_lo[i] < b.lo[i]:
            hi = cur_hi.copy()
            hi[i] = b.lo[i]
            pieces.append(Box(cur_lo.copy(), hi))
            cur_lo[i] = b.lo[i]
        if b.hi[i] < cur_hi[i]:
            lo = cur_lo.copy()
            lo[i] = b.hi[i]
            pieces.append(Box(lo, cur_hi.copy()))
            cur_hi[i] = b.hi[i]
    return pieces


def subtract(u: BoxUnion, b: Box) -> BoxUnion:
    """Return ``u`` minus ``b`` as an interior-disjoint union."""
    _check_dim(u.dim, b.dim)
    out: list[Box] = []
    for a in u.boxes:
        out.extend(_subtract_one(a, b))
    return BoxUnion(out, dim=u.dim)


def subtract_union(u: BoxUnion, v: BoxUnion) -> BoxUnion:
    _check_dim(u.dim, v.dim)
    for b in v.boxes:
        if not u.boxes:
            break
        u = subtract(u, b)
    return u


def intersect_box(u: BoxUnion, b: Box, keep_touching: bool = False) -> BoxUnion:
    """Intersection of a union with a box.

    By default a member that only touches ``b`` on a face contributes
    nothing, mirroring the overlap rule used by :func:`subtract`.
    """
    _check_dim(u.dim, b.dim)
    out = []
    for a in u.boxes:
        if keep_touching:
            c = a.intersect(b)
            if c is not None:
                out.append(c)
        else:
            ob = _overlap_bounds(a, b)
            if ob is not None:
                out.append(Box(*ob))
    return BoxUnion(out, dim=u.dim)


def intersect_unions(u: BoxUnion, v: BoxUnion) -> BoxUnion:
    """Intersection of two interior-disjoint unions (result is disjoint too)."""
    _check_dim(u.dim, v.dim)
    out = []
    for a in u.boxes:
        for b in v.boxes:
            ob = _overlap_bounds(a, b)
            if ob is not None:
                out.append(Box(*ob))
    return BoxUnion(out, dim=u.dim)


def disjointify(boxes: Iterable[Box], dim: int | None = None) -> BoxUnion:
    """Decompose possibly-overlapping boxes into a disjoint union.

    Earlier boxes are kept whole; later ones are cut by everything before
    them (discovery order).
    """
    result: list[Box] = []
    for b in boxes:
        pieces = [b]
        for r in result:
            nxt = []
            for p in pieces:
                nxt.extend(_subtract_one(p, r))
            pieces = nxt
            if not pieces:
                break
        result.extend(pieces)
    if dim is None and not result:
        raise ValueError("cannot infer dimension of an empty result")
    return BoxUnion(result, dim=dim if dim is not None else result[0].dim)


def union_of(u: BoxUnion, v: BoxUnion) -> BoxUnion:
    """Disjoint union of two unions; pieces of ``v`` already in ``u`` are cut."""
    _check_dim(u.dim, v.dim)
    return BoxUnion(list(u.boxes) + list(subtract_union(v, u).boxes), dim=u.dim)


def covers(u: BoxUnion, b: Box) -> bool:
    """True when the closed box ``b`` lies inside the closed union ``u``."""
    _check_dim(u.dim, b.dim)
    rest = [b]
    for a in u.boxes:
        nxt = []
        for p in rest:
            nxt.extend(_subtract_one(p, a))
        rest = nxt
        if not rest:
            return True
    return not rest


def union_contains(u: BoxUnion, points, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != u.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, union has {u.dim}")
    inside = np.zeros(pts.shape[0], dtype=bool)
    for b in u.boxes:
        inside |= np.all((pts >= b.lo - tol) & (pts <= b.hi + tol), axis=1)
    return bool(inside[0]) if single else inside


def union_interior_contains(u: BoxUnion, points, tol: float = 1e-9) -> np.ndarray:
    """Points in the open interior of the union (not merely of one box).

    A point on a shared face of two boxes is interior when the boxes holding
    it cover every orthant around it.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, k = pts.shape
    if k != u.dim:
        raise ValueError(f"points have dimension {k}, union has {u.dim}")
    out = np.zeros(n, dtype=bool)
    if u.is_empty() or n == 0:
        return out
    lo, hi = _bounds_arrays(u)
    n_closed = np.zeros(n, dtype=np.int64)
    for a, b in zip(lo, hi):
        out |= np.all((pts > a + tol) & (pts < b - tol), axis=1)
        n_closed += np.all((pts >= a - tol) & (pts <= b + tol), axis=1)
    rest = np.flatnonzero(~out & (n_closed >= 2))
    if rest.size == 0:
        return out
    p = pts[rest]
    bits = (np.arange(2 ** k)[:, None] >> np.arange(k)[None, :]) & 1 == 1
    cover = np.zeros((rest.size, 2 ** k), dtype=bool)
    for a, b in zip(lo, hi):
        c = np.all((p >= a - tol) & (p <= b + tol), axis=1)
        if not c.any():
            continue
        plus, minus = p[c] < b - tol, p[c] > a + tol
        side = np.where(bits[None, :, :], plus[:, None, :], minus[:, None, :])
        cover[c] |= side.all(axis=2)
    out[rest] = cover.all(axis=1)
    return out


def sample_uniform(u: BoxUnion, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. uniform points from the union as an ``(n, d)`` array.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    vols = np.array([b.volume() for b in u.boxes], dtype=float)
    total = float(vols.sum()) if vols.size else 0.0
    if total <= 0.0:
        raise ValueError("cannot sample from a zero-volume union")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n == 0:
        return np.empty((0, u.dim))
    idx = rng.choice(len(u.boxes), size=n, p=vols / total)
    lo = np.array([b.lo for b in u.boxes])[idx]
    hi = np.array([b.hi for b in u.boxes])[idx]
    return lo + rng.random((n, u.dim)) * (hi - lo)


def split_box(b: Box, parts: int = 2) -> list[Box]:
    """Split every positive-width dimension into ``parts`` equal pieces."""
    if parts < 1:
        raise ValueError("parts must be at least 1")
    edges = []
    for i in range(b.dim):
        if b.hi[i] > b.lo[i]:
            edges.append(np.linspace(b.lo[i], b.hi[i], parts + 1))
        else:
            edges.append(np.array([b.lo[i], b.hi[i]]))
    out = []
    for idx in np.ndindex(*[len(e) - 1 for e in edges]):
        lo = [edges[i][k] for i, k in enumerate(idx)]
        hi = [edges[i][k + 1] for i, k in enumerate(idx)]
        out.append(Box(lo, hi))
    return out


def _bounds_arrays(u: BoxUnion):
    if not u.boxes:
        z = np.empty((0, u.dim))
        return z, z
    return np.array([b.lo for b in u.boxes]), np.array([b.hi for b in u.boxes])


def intersection_volume(u: BoxUnion, v: BoxUnion) -> float:
    """Volume of ``u ∩ v`` for two interior-disjoint unions (vectorized)."""
    _check_dim(u.dim, v.dim)
    ulo, uhi = _bounds_arrays(u)
    vlo, vhi = _bounds_arrays(v)
    if not len(ulo) or not len(vlo):
        return 0.0
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, len(vlo) * u.dim))
    for s in range(0, len(ulo), chunk):
        lo = np.maximum(ulo[s:s + chunk, None, :], vlo[None, :, :])
        hi = np.minimum(uhi[s:s + chunk, None, :], vhi[None, :, :])
        total += float(np.prod(np.clip(hi - lo, 0.0, None), axis=2).sum())
    return total


def symmetric_difference_volume(u: BoxUnion, v: BoxUnion) -> float:
    return union_volume(u) + union_volume(v) - 2.0 * intersection_volume(u, v)


def coalesce(u: BoxUnion) -> BoxUnion:
    """Merge members that differ in one dimension only and share a face there."""
    boxes = [(b.lo.copy(), b.hi.copy()) for b in u.boxes]
    merged = True
    while merged:
        merged = False
        for axis in range(u.dim):
            groups: dict = {}
            for i, (lo, hi) in enumerate(boxes):
                key = tuple(np.delete(lo, axis)) + tuple(np.delete(hi, axis))
                groups.setdefault(key, []).append(i)
            out = []
            used = set()
            for key, idxs in groups.items():
                if len(idxs) == 1:
                    continue
                idxs = sorted(idxs, key=lambda i: boxes[i][0][axis])
                run_lo, run_hi = boxes[idxs[0]]
                run_lo, run_hi = run_lo.copy(), run_hi.copy()
                run_members = [idxs[0]]
                for i in idxs[1:]:
                    lo, hi = boxes[i]
                    if lo[axis] == run_hi[axis] and hi[axis] > lo[axis] and run_hi[axis] > run_lo[axis]:
                        run_hi[axis] = hi[axis]
                        run_members.append(i)
                    else:
                        if len(run_members) > 1:
                            out.append((run_lo, run_hi))
                            used.update(run_members)
                        run_lo, run_hi = lo.copy(), hi.copy()
                        run_members = [i]
                if len(run_members) > 1:
                    out.append((run_lo, run_hi))
                    used.update(run_members)
            if used:
                merged = True
                keep = [b for i, b in enumerate(boxes) if i not in used]
                boxes = keep + out
    boxes.sort(key=lambda b: tuple(b[0]) + tuple(b[1]))
    return BoxUnion([Box(lo, hi) for lo, hi in boxes], dim=u.dim)


def split_longest(b: Box, parts: int) -> list[Box]:
    """Split ``b`` into ``parts`` boxes by repeatedly halving the widest piece."""
    if parts < 1:
        raise ValueError("parts must be at least 1")
    pieces = [b]
    while len(pieces) < parts:
        widths = [float(np.max(p.widths)) for p in pieces]
        k = int(np.argmax(widths))
        p = pieces.pop(k)
        axis = int(np.argmax(p.widths))
        mid = 0.5 * (p.lo[axis] + p.hi[axis])
        hi1 = p.hi.copy()
        hi1[axis] = mid
        lo2 = p.lo.copy()
        lo2[axis] = mid
        pieces[k:k] = [Box(p.lo, hi1), Box(lo2, p.hi)]
    return pieces
