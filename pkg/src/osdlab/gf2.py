"""Binary vectors and matrices over GF(2).

Bits are packed little-endian into ``uint64`` words: bit ``j`` of a vector
lives in word ``j // 64`` at bit position ``j % 64``. The packed form is what
the decoder's re-encoding kernel consumes; the unpacked ``uint8`` form is
used for row reduction and for I/O.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

WORD_BITS = 64

# popcount of every byte value, shared by weight computations
BYTE_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.int64)


def n_words(length: int) -> int:
    return (length + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack the last axis of a 0/1 array into uint64 words.

    Returns:
        array with the last axis replaced by ``n_words(length)`` words.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    length = bits.shape[-1]
    width = n_words(length) * WORD_BITS
    padded = np.zeros(bits.shape[:-1] + (width,), dtype=np.uint8)
    padded[..., :length] = bits & 1
    as_bytes = np.packbits(padded.reshape(bits.shape[:-1] + (width // 8, 8)), axis=-1, bitorder="little")
    return as_bytes.reshape(bits.shape[:-1] + (width // 8,)).view("<u8").copy()


def unpack_bits(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`."""
    words = np.ascontiguousarray(np.asarray(words, dtype="<u8"))
    as_bytes = words.view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :length].astype(np.uint8)


def popcount_words(words: np.ndarray) -> np.ndarray:
    """Number of set bits per row of packed words (last axis summed)."""
    words = np.ascontiguousarray(np.asarray(words, dtype="<u8"))
    as_bytes = words.view(np.uint8)
    return BYTE_POPCOUNT[as_bytes].sum(axis=-1)


@dataclass(frozen=True, eq=False)
class BitVector:
    """Fixed-length binary vector."""

    length: int
    words: np.ndarray

    @classmethod
    def from_array(cls, bits) -> "BitVector":
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        if bits.size and bits.max() > 1:
            raise ValueError("bit values must be 0 or 1")
        return cls(int(bits.size), pack_bits(bits))

    @classmethod
    def zeros(cls, length: int) -> "BitVector":
        return cls(length, np.zeros(n_words(length), dtype=np.uint64))

    def to_array(self) -> np.ndarray:
        return unpack_bits(self.words, self.length)

    def weight(self) -> int:
        return int(popcount_words(self.words))

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, idx: int) -> int:
        if not 0 <= idx < self.length:
            raise IndexError(idx)
        return int((int(self.words[idx // WORD_BITS]) >> (idx % WORD_BITS)) & 1)

    def __xor__(self, other: "BitVector") -> "BitVector":
        if self.length != other.length:
            raise ValueError(f"length mismatch: {self.length} vs {other.length}")
        return BitVector(self.length, self.words ^ other.words)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.length == other.length and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.length, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"BitVector({''.join(map(str, self.to_array()))})"


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """Row-major binary matrix with rows packed into words."""

    rows: int
    cols: int
    data: np.ndarray  # shape (rows, n_words(cols))

    @classmethod
    def from_array(cls, bits) -> "BitMatrix":
        bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
        if bits.size and bits.max() > 1:
            raise ValueError("bit values must be 0 or 1")
        return cls(bits.shape[0], bits.shape[1], pack_bits(bits))

    def to_array(self) -> np.ndarray:
        return unpack_bits(self.data, self.cols)

    def row(self, i: int) -> BitVector:
        return BitVector(self.cols, self.data[i].copy())

    def col(self, j: int) -> BitVector:
        return BitVector.from_array(self.to_array()[:, j])

    def rank(self) -> int:
        return gf2_rank(self.to_array())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.data.tobytes()))


def gf2_rank(a: np.ndarray) -> int:
    """Rank over GF(2) by plain elimination on a copy."""
    m = np.array(a, dtype=np.uint8) & 1
    rank = 0
    rows, cols = m.shape
    for c in range(cols):
        pivots = np.nonzero(m[rank:, c])[0]
        if pivots.size == 0:
            continue
        p = rank + pivots[0]
        m[[rank, p]] = m[[p, rank]]
        hits = np.nonzero(m[:, c])[0]
        hits = hits[hits != rank]
        m[hits] ^= m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


@njit(cache=True)
def _systematize_inplace(m, pi2):
    """Gauss-Jordan on ``m`` (k x n uint8) with greedy column swaps.

    When the column at pivot position ``r`` has no usable pivot, it is swapped
    with the nearest column to its right that does. ``pi2`` is updated with
    every swap. Returns the number of pivots found.
    """
    k, n = m.shape
    for r in range(k):
        col = -1
        prow = -1
        for c in range(r, n):
            for i in range(r, k):
                if m[i, c]:
                    prow = i
                    break
            if prow >= 0:
                col = c
                break
        if col < 0:
            return r
        if col != r:
            for i in range(k):
                t = m[i, r]
                m[i, r] = m[i, col]
                m[i, col] = t
            t2 = pi2[r]
            pi2[r] = pi2[col]
            pi2[col] = t2
        if prow != r:
            for j in range(n):
                t = m[r, j]
                m[r, j] = m[prow, j]
                m[prow, j] = t
        for i in range(k):
            if i != r and m[i, r]:
                for j in range(r, n):
                    m[i, j] ^= m[r, j]
    return k


def systematize_array(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Row-reduce a k x n 0/1 array to ``[I_k | P]`` with greedy column swaps.

    Returns:
        (reduced array, pi2 permutation of column positions, success flag).
        ``reduced`` equals the reduction of ``g[:, pi2]``.
    """
    m = np.array(g, dtype=np.uint8, order="C") & 1
    pi2 = np.arange(m.shape[1], dtype=np.int64)
    found = _systematize_inplace(m, pi2)
    return m, pi2, found == m.shape[0]


def systematize(G: BitMatrix, col_priority=None) -> tuple[BitMatrix, np.ndarray, bool]:
    """Systematize ``G`` after ordering its columns by ``col_priority``.

    ``col_priority`` is the reliability order (pi1); pi2 is returned relative
    to that ordering, so ``Gsys`` spans the rows of ``G[:, col_priority][:, pi2]``.

    Returns:
        (Gsys, pi2, success). ``success`` is False when rank(G) < k.
    """
    g = G.to_array()
    if col_priority is not None:
        col_priority = np.asarray(col_priority, dtype=np.int64)
        if sorted(col_priority.tolist()) != list(range(G.cols)):
            raise ValueError("col_priority must be a permutation of the columns")
        g = g[:, col_priority]
    reduced, pi2, ok = systematize_array(g)
    return BitMatrix.from_array(reduced), pi2, ok


def encode(msg: BitVector, Gsys: BitMatrix) -> BitVector:
    """Codeword ``msg * Gsys`` (XOR of the rows selected by ``msg``)."""
    if msg.length != Gsys.rows:
        raise ValueError(f"message length {msg.length} != generator rows {Gsys.rows}")
    sel = msg.to_array().astype(bool)
    words = np.bitwise_xor.reduce(Gsys.data[sel], axis=0) if sel.any() else np.zeros_like(Gsys.data[0])
    return BitVector(Gsys.cols, words)


def parity_check_matrix(Gsys: BitMatrix) -> BitMatrix:
    """``H = [P^T | I_{n-k}]`` for a systematic ``Gsys = [I_k | P]``."""
    g = Gsys.to_array()
    k, n = g.shape
    if not np.array_equal(g[:, :k], np.eye(k, dtype=np.uint8)):
        raise ValueError("generator is not in systematic form")
    h = np.concatenate([g[:, k:].T, np.eye(n - k, dtype=np.uint8)], axis=1)
    return BitMatrix.from_array(h)


def syndrome(word: BitVector, H: BitMatrix) -> BitVector:
    """``H * word^T`` as a length n-k vector."""
    if word.length != H.cols:
        raise ValueError(f"word length {word.length} != parity matrix columns {H.cols}")
    overlap = H.data & word.words[None, :]
    parity = popcount_words(overlap) & 1
    return BitVector.from_array(parity.astype(np.uint8))


def read_generator(path) -> np.ndarray:
    """Parse the text generator format: ``n k`` then k rows of n bits."""
    lines = [ln.rstrip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty generator file")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"header must be 'n k', got {lines[0]!r}")
    n, k = int(header[0]), int(header[1])
    body = lines[1:]
    if len(body) != k:
        raise ValueError(f"expected {k} rows, found {len(body)}")
    rows = []
    for idx, ln in enumerate(body):
        if len(ln) != n or set(ln) - {"0", "1"}:
            raise ValueError(f"row {idx + 1} is not {n} characters of 0/1")
        rows.append([int(ch) for ch in ln])
    return np.array(rows, dtype=np.uint8)


def write_generator(path, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.uint8)
    k, n = g.shape
    text = [f"{n} {k}"] + ["".join(str(int(b)) for b in row) for row in g]
    Path(path).write_text("\n".join(text) + "\n")
