"""Action-constraint families, feasibility tests and projections.

Every constraint works on single vectors as well as on stacked batches: ``a``
has shape ``(..., d_a)`` and ``s`` shape ``(..., d_s)``. Sets are closed, so
boundary points are feasible.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ConstraintError(ValueError):
    """Raised for malformed constraint text or dimension mismatches."""


def _exact_shrink(a, scale, measure, cap):
    # Walk the scale factor down ulp by ulp until the rounded result is inside.
    out = a * scale[..., None]
    bad = measure(out) > cap
    while np.any(bad):
        scale = np.where(bad, np.nextafter(scale, 0.0), scale)
        out = a * scale[..., None]
        bad = measure(out) > cap
    return out


class ConstraintSpec:
    """Base class for a feasible action set C(s)."""

    tag = ""
    state_dependent = False

    def check_dims(self, d_a: int, d_s: int | None = None) -> None:
        pass

    def is_feasible(self, a, s=None):
        raise NotImplementedError

    def project(self, a, s=None):
        raise NotImplementedError

    def static_bounds(self):
        """Per-coordinate half widths when the set is a box, else ``None``."""
        return None

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class Unconstrained(ConstraintSpec):
    tag = "none"

    def is_feasible(self, a, s=None):
        a = np.asarray(a, dtype=float)
        return np.all(np.isfinite(a), axis=-1)

    def project(self, a, s=None):
        return np.array(a, dtype=float, copy=True)

    def to_text(self) -> str:
        return "none"


@dataclass(frozen=True)
class Box(ConstraintSpec):
    """``|a_i| <= half_width_i``; a scalar half width applies to every dim."""

    half_width: float | tuple[float, ...]
    tag = "box"

    def __post_init__(self):
        hw = np.atleast_1d(np.asarray(self.half_width, dtype=float))
        if np.any(~(hw > 0)) or not np.all(np.isfinite(hw)):
            raise ConstraintError("box half width must be positive and finite")

    def _hw(self, d_a: int) -> np.ndarray:
        hw = np.atleast_1d(np.asarray(self.half_width, dtype=float))
        if hw.size == 1:
            return np.full(d_a, hw[0])
        if hw.size != d_a:
            raise ConstraintError(f"box has {hw.size} widths but action has {d_a} dims")
        return hw

    def check_dims(self, d_a, d_s=None):
        self._hw(d_a)

    def is_feasible(self, a, s=None):
        a = np.asarray(a, dtype=float)
        return np.all(np.abs(a) <= self._hw(a.shape[-1]), axis=-1)

    def project(self, a, s=None):
        a = np.asarray(a, dtype=float)
        hw = self._hw(a.shape[-1])
        return np.clip(a, -hw, hw)

    def static_bounds(self):
        return self.half_width

    def to_text(self) -> str:
        if np.ndim(self.half_width) == 0:
            return f"box:{_fmt(self.half_width)}"
        return "box:" + _fmt_list(self.half_width)


@dataclass(frozen=True)
class L2Groups(ConstraintSpec):
    """``sum_{i in g} a_i^2 <= cap_g`` for each disjoint index group ``g``."""

    groups: tuple[tuple[tuple[int, ...], float], ...]
    tag = "l2"

    def __post_init__(self):
        seen: set[int] = set()
        for idx, cap in self.groups:
            if not cap > 0:
                raise ConstraintError("l2 caps must be positive")
            if seen.intersection(idx):
                raise ConstraintError("l2 index groups must be disjoint")
            seen.update(idx)

    def check_dims(self, d_a, d_s=None):
        for idx, _ in self.groups:
            if any(i < 0 or i >= d_a for i in idx):
                raise ConstraintError(f"l2 group {list(idx)} out of range for {d_a} action dims")

    def is_feasible(self, a, s=None):
        a = np.asarray(a, dtype=float)
        self.check_dims(a.shape[-1])
        ok = np.ones(a.shape[:-1], dtype=bool)
        for idx, cap in self.groups:
            ok &= np.sum(a[..., list(idx)] ** 2, axis=-1) <= cap
        return ok

    def project(self, a, s=None):
        a = np.asarray(a, dtype=float)
        self.check_dims(a.shape[-1])
        out = a.copy()
        for idx, cap in self.groups:
            cols = list(idx)
            sub = a[..., cols]
            sq = np.sum(sub**2, axis=-1)
            over = sq > cap
            if not np.any(over):
                continue
            scale = np.where(over, np.sqrt(cap) / np.sqrt(np.where(over, sq, 1.0)), 1.0)
            shrunk = _exact_shrink(sub, scale, lambda x: np.sum(x**2, axis=-1), cap)
            out[..., cols] = np.where(over[..., None], shrunk, sub)
        return out

    def to_text(self) -> str:
        parts = [f"{_fmt_list(idx, int)}:{_fmt(cap)}" for idx, cap in self.groups]
        return "l2:" + ":".join(parts)


@dataclass(frozen=True)
class WeightedAbsSum(ConstraintSpec):
    """``sum_i |s[k_i] * a_i| <= cap`` where ``k_i = state_index_map[i]``."""

    state_index_map: tuple[int, ...]
    cap: float
    tag = "wabs"
    state_dependent = True

    def __post_init__(self):
        if not self.cap > 0:
            raise ConstraintError("wabs cap must be positive")

    def check_dims(self, d_a, d_s=None):
        _check_index_map(self.state_index_map, d_a, d_s)

    def _weights(self, a, s):
        if s is None:
            raise ConstraintError("wabs constraint needs a state")
        s = np.asarray(s, dtype=float)
        self.check_dims(a.shape[-1], s.shape[-1])
        return np.abs(s[..., list(self.state_index_map)])

    def _measure(self, a, w):
        return np.sum(np.abs(w * a), axis=-1)

    def is_feasible(self, a, s=None):
        a = np.asarray(a, dtype=float)
        return self._measure(a, self._weights(a, s)) <= self.cap

    def project(self, a, s=None):
        """Exact Euclidean projection onto the weighted l1 ball.

        The minimiser soft-thresholds each coordinate by ``lam * w_i``; ``lam``
        is found exactly from the sorted breakpoints ``|a_i| / w_i``.
        """
        a = np.asarray(a, dtype=float)
        w = self._weights(a, s)
        a, w = np.broadcast_arrays(a, w)
        over = self._measure(a, w) > self.cap
        if not np.any(over):
            return a.copy()
        y = np.abs(a)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            brk = np.where(w > 0, y / w, np.inf)
        order = np.argsort(-brk, axis=-1, kind="stable")
        ys = np.take_along_axis(y, order, axis=-1)
        ws = np.take_along_axis(w, order, axis=-1)
        bs = np.take_along_axis(brk, order, axis=-1)
        num = np.cumsum(ws * ys, axis=-1) - self.cap
        den = np.cumsum(ws * ws, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_k = np.where(den > 0, num / den, -np.inf)
        valid = bs > lam_k
        # largest valid prefix length
        k = a.shape[-1] - 1 - np.argmax(valid[..., ::-1], axis=-1)
        lam = np.take_along_axis(lam_k, k[..., None], axis=-1)
        lam = np.maximum(lam, 0.0)
        out = np.sign(a) * np.maximum(y - lam * w, 0.0)
        out = np.where(over[..., None], out, a)
        measure = lambda x: self._measure(x, w)  # noqa: E731
        if np.any(measure(out) > self.cap):
            out = _exact_shrink(out, np.ones(out.shape[:-1]), measure, self.cap)
        return out

    def to_text(self) -> str:
        return f"wabs:{_fmt_list(self.state_index_map, int)}:{_fmt(self.cap)}"


@dataclass(frozen=True)
class PositivePartSum(ConstraintSpec):
    """``sum_i max(s[k_i] * a_i, 0) <= cap`` (power-limit style).

    Projection is a radial shrink toward the origin, not the exact L2
    projection. The measure is positively homogeneous in ``a`` so the shrink
    factor ``cap / measure`` lands exactly on the boundary.
    """

    state_index_map: tuple[int, ...]
    cap: float
    tag = "ppsum"
    state_dependent = True

    def __post_init__(self):
        if not self.cap > 0:
            raise ConstraintError("ppsum cap must be positive")

    def check_dims(self, d_a, d_s=None):
        _check_index_map(self.state_index_map, d_a, d_s)

    def _weights(self, a, s):
        if s is None:
            raise ConstraintError("ppsum constraint needs a state")
        s = np.asarray(s, dtype=float)
        self.check_dims(a.shape[-1], s.shape[-1])
        return s[..., list(self.state_index_map)]

    @staticmethod
    def _measure(a, w):
        return np.sum(np.maximum(w * a, 0.0), axis=-1)

    def is_feasible(self, a, s=None):
        a = np.asarray(a, dtype=float)
        return self._measure(a, self._weights(a, s)) <= self.cap

    def project(self, a, s=None):
        a = np.asarray(a, dtype=float)
        w = self._weights(a, s)
        a, w = np.broadcast_arrays(a, w)
        m = self._measure(a, w)
        over = m > self.cap
        if not np.any(over):
            return a.copy()
        scale = np.where(over, self.cap / np.where(over, m, 1.0), 1.0)
        out = _exact_shrink(a, scale, lambda x: self._measure(x, w), self.cap)
        return np.where(over[..., None], out, a)

    def to_text(self) -> str:
        return f"ppsum:{_fmt_list(self.state_index_map, int)}:{_fmt(self.cap)}"


def _check_index_map(index_map, d_a, d_s):
    if len(index_map) != d_a:
        raise ConstraintError(f"state index map has {len(index_map)} entries but action has {d_a} dims")
    if d_s is not None and any(k < 0 or k >= d_s for k in index_map):
        raise ConstraintError(f"state index map {list(index_map)} out of range for {d_s} state dims")


def is_feasible(a, s, spec: ConstraintSpec):
    """True iff ``a`` lies in the closed feasible set ``C(s)``."""
    return spec.is_feasible(a, s)


def project(a, s, spec: ConstraintSpec):
    """Map ``a`` into ``C(s)``; feasible inputs are returned unchanged."""
    a = np.asarray(a, dtype=float)
    ok = spec.is_feasible(a, s)
    if np.all(ok):
        return a.copy()
    out = spec.project(a, s)
    return np.where(np.asarray(ok)[..., None], a, out)


# -- canonical text form ---------------------------------------------------

def _fmt(x: float) -> str:
    # shortest text that parses back to the same float
    return repr(float(x))


def _fmt_list(xs: Sequence, kind=float) -> str:
    if kind is int:
        return "[" + ",".join(str(int(x)) for x in xs) + "]"
    return "[" + ",".join(_fmt(x) for x in xs) + "]"


_LIST = re.compile(r"^\[([^\]]*)\]$")


def _parse_list(tok: str, kind, aliases=None):
    if aliases and tok in aliases:
        return tuple(aliases[tok])
    m = _LIST.match(tok.strip())
    if not m:
        raise ConstraintError(f"expected a bracketed list, got {tok!r}")
    body = m.group(1).strip()
    if not body:
        return ()
    try:
        return tuple(kind(x) for x in body.split(","))
    except ValueError as exc:
        raise ConstraintError(f"bad list {tok!r}") from exc


def _parse_real(tok: str) -> float:
    try:
        val = float(tok)
    except ValueError as exc:
        raise ConstraintError(f"expected a number, got {tok!r}") from exc
    if not np.isfinite(val):
        raise ConstraintError(f"expected a finite number, got {tok!r}")
    return val


def _split(text: str) -> list[str]:
    # split on ':' outside brackets
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == ":" and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return [t.strip() for t in out]


def parse_constraint(text: str, velocity_indices: Sequence[int] | None = None) -> ConstraintSpec:
    """Parse the canonical text form.

    Forms: ``none``, ``box:0.1``, ``box:[0.1,0.2]``, ``l2:[0,1,2]:0.5:[3,4,5]:0.05``,
    ``wabs:[2,3]:0.5``, ``ppsum:[2,3]:10``. For the two state-weighted forms
    the aliases ``v`` and ``w`` stand for the environment's velocity
    coordinates and need ``velocity_indices``.
    """
    toks = _split(text.strip())
    tag = toks[0].lower()
    args = toks[1:]
    aliases = None
    if velocity_indices is not None:
        aliases = {"v": tuple(velocity_indices), "w": tuple(velocity_indices)}
    if tag in ("none", "unconstrained"):
        if args:
            raise ConstraintError("'none' takes no arguments")
        return Unconstrained()
    if tag == "box":
        if len(args) != 1:
            raise ConstraintError("box takes one argument")
        if args[0].startswith("["):
            return Box(_parse_list(args[0], float))
        return Box(_parse_real(args[0]))
    if tag == "l2":
        if not args or len(args) % 2:
            raise ConstraintError("l2 takes index-list/cap pairs")
        groups = tuple(
            (_parse_list(args[k], int), _parse_real(args[k + 1])) for k in range(0, len(args), 2)
        )
        return L2Groups(groups)
    if tag in ("wabs", "ppsum"):
        if len(args) != 2:
            raise ConstraintError(f"{tag} takes an index map and a cap")
        if args[0] in ("v", "w") and aliases is None:
            raise ConstraintError(f"alias {args[0]!r} needs an environment")
        idx = _parse_list(args[0], int, aliases)
        cls = WeightedAbsSum if tag == "wabs" else PositivePartSum
        return cls(idx, _parse_real(args[1]))
    raise ConstraintError(f"unknown constraint family {tag!r}")
