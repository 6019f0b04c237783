"""Truncated tensor algebra over R^ell, group exp/log and Lyndon coordinates.

Elements are stored densely, one flat array per level.  The coordinate of
a word ``I = (i1, ..., in)`` sits at the base-``ell`` index built from the
zero-based letters, most significant letter first, so that ``np.outer``
followed by ``ravel`` realises the tensor (concatenation) product.

Letters are 1-based throughout the public API, matching ``e_1, ..., e_ell``.

The private ``_mul``/``_exp``/``_log`` helpers work on lists of level arrays
with arbitrary leading batch dimensions; the rough-path code uses them to
process whole grids of increments at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import NotLieElementError, ShapeMismatchError

MAX_DEPTH = 5
LIE_RTOL = 1e-9


@dataclass(frozen=True)
class TensorShape:
    alphabet_size: int
    depth: int

    def __post_init__(self):
        if int(self.alphabet_size) != self.alphabet_size or self.alphabet_size < 1:
            raise ValueError(f"alphabet_size must be a positive integer, got {self.alphabet_size!r}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValueError(f"depth must be a positive integer, got {self.depth!r}")
        if self.depth > MAX_DEPTH:
            raise ValueError(f"depth {self.depth} exceeds the supported maximum {MAX_DEPTH}")

    def level_size(self, n: int) -> int:
        return self.alphabet_size**n

    @property
    def size(self) -> int:
        return sum(self.level_size(n) for n in range(self.depth + 1))


def word_index(word: Sequence[int], ell: int) -> int:
    idx = 0
    for letter in word:
        if not 1 <= letter <= ell:
            raise ValueError(f"letter {letter} outside alphabet 1..{ell}")
        idx = idx * ell + (letter - 1)
    return idx


def index_word(idx: int, n: int, ell: int) -> tuple[int, ...]:
    letters = []
    for _ in range(n):
        idx, r = divmod(idx, ell)
        letters.append(r + 1)
    return tuple(reversed(letters))


# ---------------------------------------------------------------------------
# batched level arithmetic


def _zero_levels(ell, depth, batch=()):
    return [np.zeros(tuple(batch) + (ell**n,)) for n in range(depth + 1)]


def _mul(a, b, ell, depth):
    """Truncated product of two level lists (leading batch dims broadcast)."""
    out = []
    for n in range(depth + 1):
        acc = None
        for j in range(n + 1):
            x, y = a[j], b[n - j]
            term = (x[..., :, None] * y[..., None, :]).reshape(
                np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (ell**n,)
            )
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _mul_left_nilpotent(a, b, ell, depth):
    # a has vanishing scalar part: level n of a*b is sum_{j>=1} a_j (x) b_(n-j)
    batch = np.broadcast_shapes(a[0].shape[:-1], b[0].shape[:-1])
    out = [np.zeros(batch + (1,))]
    for n in range(1, depth + 1):
        acc = np.zeros(batch + (ell**n,))
        for j in range(1, n + 1):
            x, y = a[j], b[n - j]
            acc = acc + (x[..., :, None] * y[..., None, :]).reshape(batch + (ell**n,))
        out.append(acc)
    return out


def _exp(a, ell, depth):
    """exp of a nilpotent element via Horner: 1 + a(1 + a/2(1 + a/3(...)))."""
    batch = a[0].shape[:-1]
    acc = _zero_levels(ell, depth, batch)
    acc[0][...] = 1.0
    for k in range(depth, 0, -1):
        acc = _mul_left_nilpotent([x / k for x in a], acc, ell, depth)
        acc[0] = acc[0] + 1.0
    return acc


def _log(g, ell, depth):
    """log of an element with scalar part 1: x(c1 + x(c2 + ...)), c_k = (-1)^(k+1)/k."""
    x = [lvl for lvl in g]
    x[0] = np.zeros_like(g[0])
    batch = g[0].shape[:-1]
    acc = _zero_levels(ell, depth, batch)
    for k in range(depth, 0, -1):
        acc = _mul_left_nilpotent(x, acc, ell, depth)
        acc[0] = acc[0] + (-1.0) ** (k + 1) / k
    return _mul_left_nilpotent(x, acc, ell, depth)


# ---------------------------------------------------------------------------


class TensorElement:
    """Element of the truncated tensor algebra T^(depth)(R^ell)."""

    __slots__ = ("shape", "levels")

    def __init__(self, shape: TensorShape, levels: Sequence[np.ndarray]):
        if len(levels) != shape.depth + 1:
            raise ShapeMismatchError(
                f"expected {shape.depth + 1} levels for {shape}, got {len(levels)}"
            )
        lv = []
        for n, arr in enumerate(levels):
            arr = np.array(arr, dtype=float).reshape(-1)
            if arr.size != shape.level_size(n):
                raise ShapeMismatchError(
                    f"level {n} must have {shape.level_size(n)} coefficients, got {arr.size}"
                )
            arr.flags.writeable = False
            lv.append(arr)
        self.shape = shape
        self.levels = tuple(lv)

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, shape: TensorShape) -> "TensorElement":
        return cls(shape, _zero_levels(shape.alphabet_size, shape.depth))

    @classmethod
    def unit(cls, shape: TensorShape) -> "TensorElement":
        lv = _zero_levels(shape.alphabet_size, shape.depth)
        lv[0][0] = 1.0
        return cls(shape, lv)

    @classmethod
    def letter(cls, shape: TensorShape, i: int) -> "TensorElement":
        return cls.from_words(shape, {(i,): 1.0})

    @classmethod
    def from_words(cls, shape: TensorShape, coeffs: Mapping[tuple, float]) -> "TensorElement":
        lv = _zero_levels(shape.alphabet_size, shape.depth)
        for word, value in coeffs.items():
            word = tuple(word)
            if len(word) > shape.depth:
                raise ShapeMismatchError(f"word {word} longer than depth {shape.depth}")
            lv[len(word)][word_index(word, shape.alphabet_size)] += value
        return cls(shape, lv)

    @classmethod
    def from_vector(cls, shape: TensorShape, x) -> "TensorElement":
        """Level-1 element sum_i x_i e_i."""
        lv = _zero_levels(shape.alphabet_size, shape.depth)
        lv[1][:] = np.asarray(x, dtype=float).reshape(shape.alphabet_size)
        return cls(shape, lv)

    # access -------------------------------------------------------------
    @property
    def scalar(self) -> float:
        return float(self.levels[0][0])

    def coefficient(self, word: Sequence[int]) -> float:
        word = tuple(word)
        return float(self.levels[len(word)][word_index(word, self.shape.alphabet_size)])

    def level_tensor(self, n: int) -> np.ndarray:
        """Level ``n`` reshaped to an ``(ell,)*n`` array (zero-based indices)."""
        return self.levels[n].reshape((self.shape.alphabet_size,) * n)

    def items(self, atol: float = 0.0):
        """Yield ``(word, value)`` for coefficients with ``|value| > atol``,
        levels ascending, words in lexicographic order."""
        ell = self.shape.alphabet_size
        for n, lvl in enumerate(self.levels):
            for idx in np.flatnonzero(np.abs(lvl) > atol):
                yield index_word(int(idx), n, ell), float(lvl[idx])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.flat())))

    def truncate(self, depth: int) -> "TensorElement":
        shape = TensorShape(self.shape.alphabet_size, depth)
        lv = list(self.levels[: depth + 1])
        lv += _zero_levels(shape.alphabet_size, depth)[len(lv):]
        return TensorElement(shape, lv)

    # arithmetic ---------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, TensorElement):
            return NotImplemented
        if other.shape != self.shape:
            raise ShapeMismatchError(f"shape mismatch: {self.shape} vs {other.shape}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return TensorElement(self.shape, [a + b for a, b in zip(self.levels, other.levels)])

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return TensorElement(self.shape, [a - b for a, b in zip(self.levels, other.levels)])

    def __neg__(self):
        return TensorElement(self.shape, [-a for a in self.levels])

    def __mul__(self, c):
        if isinstance(c, TensorElement):
            return tensor_mul(self, c)
        return TensorElement(self.shape, [a * float(c) for a in self.levels])

    __rmul__ = __mul__

    def __matmul__(self, other):
        return tensor_mul(self, other)

    def __eq__(self, other):
        if not isinstance(other, TensorElement) or other.shape != self.shape:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels))

    __hash__ = None

    def allclose(self, other: "TensorElement", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.max(np.abs(self.flat() - other.flat()), initial=0.0) <= atol)

    def __repr__(self):
        terms = ", ".join(f"{'.'.join(map(str, w)) or '()'}: {v:.6g}" for w, v in self.items())
        return f"TensorElement(ell={self.shape.alphabet_size}, depth={self.shape.depth}, {{{terms}}})"


def tensor_mul(a: TensorElement, b: TensorElement) -> TensorElement:
    if not isinstance(a, TensorElement) or not isinstance(b, TensorElement):
        raise TypeError("tensor_mul expects two TensorElements")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    s = a.shape
    return TensorElement(s, _mul(a.levels, b.levels, s.alphabet_size, s.depth))


def tensor_exp(a: TensorElement, atol: float = 0.0) -> TensorElement:
    if abs(a.scalar) > atol:
        raise ValueError(f"tensor_exp needs a vanishing scalar part, got {a.scalar!r}")
    s = a.shape
    lv = list(a.levels)
    lv[0] = np.zeros(1)
    return TensorElement(s, _exp(lv, s.alphabet_size, s.depth))


def tensor_log(g: TensorElement, atol: float = 1e-12) -> TensorElement:
    if abs(g.scalar - 1.0) > atol:
        raise ValueError(f"tensor_log needs scalar part 1, got {g.scalar!r}")
    s = g.shape
    return TensorElement(s, _log(list(g.levels), s.alphabet_size, s.depth))


def lie_bracket(a: TensorElement, b: TensorElement) -> TensorElement:
    return tensor_mul(a, b) - tensor_mul(b, a)


def bracket_word_expansion(word: Sequence[int], shape: TensorShape) -> TensorElement:
    """Right-nested bracket [e_i1, [e_i2, ... [e_i(r-1), e_ir]]] in tensor coordinates."""
    word = tuple(word)
    if not 1 <= len(word) <= shape.depth:
        raise ValueError(f"word length must be in 1..{shape.depth}, got {len(word)}")
    for letter in word:
        if not 1 <= letter <= shape.alphabet_size:
            raise ValueError(f"letter {letter} outside alphabet 1..{shape.alphabet_size}")
    out = TensorElement.letter(shape, word[-1])
    for letter in reversed(word[:-1]):
        out = lie_bracket(TensorElement.letter(shape, letter), out)
    return out


# ---------------------------------------------------------------------------
# Lyndon words


def lyndon_words(ell: int, max_len: int) -> list[tuple[int, ...]]:
    """Lyndon words over 1..ell of length <= max_len, sorted by (length, lex)."""
    words = []
    w = [0]
    while w:
        words.append(tuple(c + 1 for c in w))
        # Duval's generation step
        m = len(w)
        while len(w) < max_len:
            w.append(w[len(w) - m])
        while w and w[-1] == ell - 1:
            w.pop()
        if w:
            w[-1] += 1
    return sorted(words, key=lambda x: (len(x), x))


def is_lyndon(word: Sequence[int]) -> bool:
    word = tuple(word)
    return all(word < word[i:] for i in range(1, len(word)))


def standard_factorization(word: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split a Lyndon word of length >= 2 as u v with v its longest proper Lyndon suffix."""
    word = tuple(word)
    if len(word) < 2:
        raise ValueError("standard factorization needs a word of length >= 2")
    for i in range(1, len(word)):
        if is_lyndon(word[i:]):
            return word[:i], word[i:]
    raise AssertionError("unreachable: single letters are Lyndon")


def bracketing(word: Sequence[int]):
    """Bracket tree of a Lyndon word: a letter, or a pair ``(left, right)``."""
    word = tuple(word)
    if len(word) == 1:
        return word[0]
    u, v = standard_factorization(word)
    return (bracketing(u), bracketing(v))


def expand_tree(tree, shape: TensorShape) -> TensorElement:
    if isinstance(tree, tuple):
        return lie_bracket(expand_tree(tree[0], shape), expand_tree(tree[1], shape))
    return TensorElement.letter(shape, tree)


def witt_dimension(ell: int, n: int) -> int:
    """Necklace count (1/n) sum_{d | n} mu(d) ell^(n/d)."""

    def mobius(k):
        res, p = 1, 2
        while p * p <= k:
            if k % p == 0:
                k //= p
                if k % p == 0:
                    return 0
                res = -res
            p += 1
        return -res if k > 1 else res

    total = sum(mobius(d) * ell ** (n // d) for d in range(1, n + 1) if n % d == 0)
    return total // n


class LyndonCoords(NamedTuple):
    coefficients: np.ndarray
    residual: float


class LyndonBasis:
    """Lyndon words with standard bracketing and their tensor expansions."""

    def __init__(self, shape: TensorShape):
        self.shape = shape
        self.words = lyndon_words(shape.alphabet_size, shape.depth)
        self.trees = [bracketing(w) for w in self.words]
        self.expansion = {w: expand_tree(t, shape) for w, t in zip(self.words, self.trees)}

    def __len__(self):
        return len(self.words)

    def bracketing(self, word):
        return self.trees[self.words.index(tuple(word))]

    @cached_property
    def _level_systems(self):
        # per level n: (slice into self.words, P matrix rows=words cols=tensor coords,
        #               lower-triangular system matrix restricted to Lyndon columns)
        ell = self.shape.alphabet_size
        systems = []
        start = 0
        for n in range(1, self.shape.depth + 1):
            ws = [w for w in self.words if len(w) == n]
            P = np.array([self.expansion[w].levels[n] for w in ws]).reshape(len(ws), ell**n)
            cols = [word_index(w, ell) for w in ws]
            systems.append((slice(start, start + len(ws)), P, cols))
            start += len(ws)
        return systems

    def coords_batch(self, levels):
        """Coefficients and residual norms for batched level lists (scalar level ignored)."""
        batch = levels[0].shape[:-1]
        coeffs = np.zeros(batch + (len(self.words),))
        res2 = np.zeros(batch)
        for n, (sl, P, cols) in enumerate(self._level_systems, start=1):
            x = levels[n]
            if not cols:
                res2 = res2 + np.sum(x * x, axis=-1)
                continue
            # P[:, cols] is unit upper triangular: P_v has leading word v and
            # only lexicographically larger words besides
            A = P[:, cols]
            c = np.linalg.solve(A.T, x[..., cols].reshape(-1, len(cols)).T).T.reshape(
                batch + (len(cols),)
            )
            coeffs[..., sl] = c
            r = x - c @ P
            res2 = res2 + np.sum(r * r, axis=-1)
        return coeffs, np.sqrt(res2)

    def element(self, coefficients) -> TensorElement:
        out = TensorElement.zero(self.shape)
        for c, w in zip(np.asarray(coefficients, dtype=float), self.words):
            if c != 0.0:
                out = out + c * self.expansion[w]
        return out


def lie_tolerance(element: TensorElement, rtol: float = LIE_RTOL) -> float:
    return rtol * max(1.0, element.norm())


def lyndon_coords(
    lie: TensorElement, basis: LyndonBasis, tol: float | None = None, check: bool = True
) -> LyndonCoords:
    """Express a Lie element in the Lyndon basis.

    Raises ``NotLieElementError`` when the residual exceeds ``tol`` (default
    ``1e-9`` relative to the element norm) and ``check`` is set.
    """
    if lie.shape != basis.shape:
        raise ShapeMismatchError(f"shape mismatch: {lie.shape} vs {basis.shape}")
    if abs(lie.scalar) > 0.0:
        raise ValueError(f"Lie elements have vanishing scalar part, got {lie.scalar!r}")
    coeffs, residual = basis.coords_batch([lvl for lvl in lie.levels])
    residual = float(residual)
    if tol is None:
        tol = lie_tolerance(lie)
    if check and residual > tol:
        raise NotLieElementError(residual, tol)
    return LyndonCoords(coeffs, residual)


# ---------------------------------------------------------------------------
# text dump


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def dump(element: TensorElement) -> str:
    """One line ``I=<i1.i2...> value=<decimal>`` per nonzero coefficient."""
    return "".join(
        f"I={'.'.join(map(str, w))} value={format_float(v)}\n" for w, v in element.items()
    )


def parse_dump(lines: Iterable[str], shape: TensorShape) -> TensorElement:
    coeffs = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            ipart, vpart = line.split()
            if not ipart.startswith("I=") or not vpart.startswith("value="):
                raise ValueError
            body = ipart[2:]
            word = tuple(int(c) for c in body.split(".")) if body else ()
            coeffs[word] = coeffs.get(word, 0.0) + float(vpart[6:])
        except ValueError:
            raise ValueError(f"malformed tensor dump line: {line!r}") from None
    return TensorElement.from_words(shape, coeffs)


def all_words(ell: int, n: int):
    return itertools.product(range(1, ell + 1), repeat=n)
