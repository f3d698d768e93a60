"""Code families (extended BCH, Polar, user generators) and weight spectra."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .gf2 import BYTE_POPCOUNT, BitMatrix, gf2_rank, pack_bits, read_generator, systematize_array

# primitive polynomials over GF(2), bit i = coefficient of x^i
PRIMITIVE_POLY = {
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0b100011101,
}

# (n, k) -> (designed correction capability t, minimum distance of the extended code)
EBCH_TABLE = {
    (16, 7): (2, 6),
    (32, 16): (3, 8),
    (64, 30): (6, 14),
    (128, 64): (10, 22),
}

EXHAUSTIVE_K_CAP = 21


@dataclass(frozen=True, eq=False)
class CodeSpec:
    """Binary linear block code with its generator matrix."""

    n: int
    k: int
    d_H: int
    G: np.ndarray  # k x n uint8
    family: str = "Generic"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.G.shape != (self.k, self.n):
            raise ValueError(f"generator shape {self.G.shape} != ({self.k}, {self.n})")
        if gf2_rank(self.G) != self.k:
            raise ValueError("generator matrix is rank deficient")

    @property
    def name(self) -> str:
        return f"{self.family}({self.n},{self.k},{self.d_H})"

    def digest(self) -> str:
        return hashlib.sha256(np.packbits(self.G).tobytes()).hexdigest()[:16]

    def generator_bits(self) -> BitMatrix:
        return BitMatrix.from_array(self.G)


def binom_partial(a: int, b: int, c: int) -> int:
    """Exact partial binomial sum ``sum_{i=a}^{b} C(c, i)``."""
    if not 0 <= a <= b <= c:
        raise ValueError(f"need 0 <= a <= b <= c, got a={a}, b={b}, c={c}")
    return sum(comb(c, i) for i in range(a, b + 1))


def binom_partial_or_zero(a: int, b: int, c: int) -> int:
    """Partial binomial sum that is zero for empty ranges (b < a or c < 0)."""
    if c < 0 or b < a:
        return 0
    return sum(comb(c, i) for i in range(max(a, 0), min(b, c) + 1))


# --------------------------------------------------------------------------
# polynomial helpers (integers as GF(2) coefficient vectors)


def _gf_tables(m: int):
    prim = PRIMITIVE_POLY[m]
    size = (1 << m) - 1
    exp = np.zeros(2 * size, dtype=np.int64)
    log = np.full(size + 1, -1, dtype=np.int64)
    x = 1
    for i in range(size):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x >> m:
            x ^= prim
    exp[size:] = exp[:size]
    return exp, log


def _poly_mul_gf(a: list[int], b: list[int], exp, log, size) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if not ai:
            continue
        for j, bj in enumerate(b):
            if bj:
                out[i + j] ^= int(exp[(log[ai] + log[bj]) % size])
    return out


def bch_generator_poly(n0: int, t: int) -> list[int]:
    """Narrow-sense binary BCH generator polynomial, lowest degree first."""
    m = n0.bit_length()
    if (1 << m) - 1 != n0 or m not in PRIMITIVE_POLY:
        raise ValueError(f"unsupported primitive length {n0}")
    exp, log = _gf_tables(m)
    needed = set()
    for j in range(1, 2 * t + 1):
        c = j % n0
        while c not in needed:
            needed.add(c)
            c = (2 * c) % n0
    poly = [1]
    for j in sorted(needed):
        poly = _poly_mul_gf(poly, [int(exp[j]), 1], exp, log, n0)
    if any(c not in (0, 1) for c in poly):
        raise RuntimeError("generator polynomial has non-binary coefficients")
    return poly


def cyclic_generator_matrix(poly: list[int], n0: int) -> np.ndarray:
    deg = len(poly) - 1
    k = n0 - deg
    g = np.zeros((k, n0), dtype=np.uint8)
    for i in range(k):
        g[i, i : i + deg + 1] = poly
    return g


def extend_with_parity(g: np.ndarray) -> np.ndarray:
    parity = g.sum(axis=1) % 2
    return np.concatenate([g, parity[:, None].astype(np.uint8)], axis=1)


def build_ebch(n: int, k: int, poly: list[int] | None = None) -> CodeSpec:
    """Extended BCH code of length n (a power of two) and dimension k.

    Without ``poly`` only the sizes in :data:`EBCH_TABLE` are available; a
    user polynomial (lowest degree first, length n-k) builds any extended
    cyclic code of length n-1.
    """
    n0 = n - 1
    if poly is None:
        if (n, k) not in EBCH_TABLE:
            raise ValueError(
                f"no built-in extended BCH code for (n, k) = ({n}, {k}); "
                f"supported: {sorted(EBCH_TABLE)}, or pass a generator polynomial"
            )
        t, d = EBCH_TABLE[(n, k)]
        poly = bch_generator_poly(n0, t)
    else:
        d = None
    if len(poly) - 1 != n0 - k:
        raise ValueError(f"polynomial degree {len(poly) - 1} does not give dimension {k}")
    g = extend_with_parity(cyclic_generator_matrix(list(poly), n0))
    if d is None:
        d = minimum_distance(g) if k <= EXHAUSTIVE_K_CAP else 0
    return CodeSpec(n, k, d, g, "eBCH", {"poly": "".join(map(str, poly))})


def bhattacharyya_ranking(n: int, design_snr_db: float) -> np.ndarray:
    """Synthetic channel indices sorted from most to least reliable."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"polar length must be a power of two, got {n}")
    z = np.array([np.exp(-(10 ** (design_snr_db / 10)))])
    while z.size < n:
        nxt = np.empty(2 * z.size)
        nxt[0::2] = 2 * z - z * z
        nxt[1::2] = z * z
        z = nxt
    return np.argsort(z, kind="stable")


def polar_kernel_power(n: int) -> np.ndarray:
    f = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    g = np.ones((1, 1), dtype=np.uint8)
    while g.shape[0] < n:
        g = np.kron(g, f) % 2
    return g.astype(np.uint8)


def build_polar(n: int, k: int, design_snr_db: float = 2.0) -> CodeSpec:
    """Polar code from the Kronecker power with a Bhattacharyya information set."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"polar length must be a power of two, got {n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}")
    info = np.sort(bhattacharyya_ranking(n, design_snr_db)[:k])
    g = polar_kernel_power(n)[info]
    if k <= EXHAUSTIVE_K_CAP:
        d = minimum_distance(g)
    else:
        # polar codes: minimum distance equals the lightest selected row
        d = int(g.sum(axis=1).min())
    return CodeSpec(n, k, d, g, "Polar", {"design_snr_db": design_snr_db, "info_set": info.tolist()})


def code_from_file(path) -> CodeSpec:
    g = read_generator(path)
    k, n = g.shape
    d = minimum_distance(g) if k <= EXHAUSTIVE_K_CAP else 0
    return CodeSpec(n, k, d, g, "Generic", {"source": str(path)})


def hamming_7_4() -> CodeSpec:
    g = np.array(
        [[1, 1, 0, 1, 0, 0, 0], [0, 1, 1, 0, 1, 0, 0], [0, 0, 1, 1, 0, 1, 0], [0, 0, 0, 1, 1, 0, 1]],
        dtype=np.uint8,
    )
    return CodeSpec(7, 4, 3, g, "Generic", {"name": "hamming"})


def code_by_name(name: str, design_snr_db: float = 2.0) -> CodeSpec:
    """Resolve names such as ``ebch-64-30``, ``polar-64-21`` or ``hamming-7-4``."""
    parts = name.lower().replace("_", "-").split("-")
    if len(parts) != 3:
        raise ValueError(f"code name must look like family-n-k, got {name!r}")
    family, n, k = parts[0], int(parts[1]), int(parts[2])
    if family in ("ebch", "bch"):
        return build_ebch(n, k)
    if family == "polar":
        return build_polar(n, k, design_snr_db)
    if family == "hamming" and (n, k) == (7, 4):
        return hamming_7_4()
    raise ValueError(f"unknown code family {family!r}")


# --------------------------------------------------------------------------
# codebook enumeration


def _xor_table(rows: np.ndarray) -> np.ndarray:
    """XOR of every subset of ``rows`` (packed words), indexed by subset mask."""
    count = rows.shape[0]
    table = np.zeros((1 << count, rows.shape[1]), dtype=np.uint64)
    for i in range(count):
        half = 1 << i
        table[half : 2 * half] = table[:half] ^ rows[i]
    return table


def _popcount_u64(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype="<u8")
    return BYTE_POPCOUNT[x.view(np.uint8).reshape(x.shape + (8,))].sum(axis=-1)


def enumerate_parity_weights(gsys: np.ndarray, cap: int = EXHAUSTIVE_K_CAP):
    """Message weight and parity weight of every codeword of ``[I | P]``.

    Returns:
        (q, u) integer arrays of length 2^k, indexed by message mask.
    """
    k, n = gsys.shape
    if k > cap:
        raise ValueError(f"exhaustive enumeration needs k <= {cap}, got k = {k}")
    parity = pack_bits(gsys[:, k:])
    lo_bits = (k + 1) // 2
    lo = _xor_table(parity[:lo_bits])
    hi = _xor_table(parity[lo_bits:])
    u = np.zeros((hi.shape[0], lo.shape[0]), dtype=np.int64)
    for w in range(parity.shape[1]):
        u += _popcount_u64(hi[:, w][:, None] ^ lo[:, w][None, :])
    masks_lo = np.arange(lo.shape[0], dtype=np.uint64)
    masks_hi = np.arange(hi.shape[0], dtype=np.uint64)
    q = _popcount_u64(masks_hi)[:, None] + _popcount_u64(masks_lo)[None, :]
    return q.ravel(), u.ravel()


def minimum_distance(g: np.ndarray, cap: int = EXHAUSTIVE_K_CAP) -> int:
    gsys, _, ok = systematize_array(g)
    if not ok:
        raise ValueError("generator matrix is rank deficient")
    q, u = enumerate_parity_weights(gsys, cap)
    w = q + u
    return int(w[w > 0].min())


@dataclass(frozen=True, eq=False)
class WeightSpectrumModel:
    """Codeword weight counts and the parity-weight table p_cP(u, q).

    ``pcp_table[u, q]`` is the probability that a codeword generated from a
    weight-q message has parity weight u (rows u = 0..n-k, columns q = 0..k).
    """

    mode: str
    n: int
    k: int
    d_H: int
    A: np.ndarray
    psi: float
    pcp_table: np.ndarray

    def pcp_bit(self) -> np.ndarray:
        """Probability that one given parity bit is set, per message weight q."""
        u = np.arange(self.n - self.k + 1)
        return (u[:, None] / max(self.n - self.k, 1) * self.pcp_table).sum(axis=0)

    def pcp_bit_pair(self) -> np.ndarray:
        """Probability that two given parity bits are both set, per q."""
        r = self.n - self.k
        u = np.arange(r + 1)
        if r < 2:
            return np.zeros(self.k + 1)
        return (u[:, None] * (u[:, None] - 1) / (r * (r - 1)) * self.pcp_table).sum(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# schema", "osdlab-spectrum-v1", self.mode, self.n, self.k, self.d_H])
            w.writerow(["u", "count"])
            for u, a in enumerate(self.A):
                w.writerow([u, repr(float(a)) if self.mode == "Binomial" else int(a)])
            w.writerow(["u", "q", "p"])
            for q in range(self.k + 1):
                for u in range(self.n - self.k + 1):
                    if self.pcp_table[u, q] > 0:
                        w.writerow([u, q, repr(float(self.pcp_table[u, q]))])


def weight_spectrum(
    code: CodeSpec,
    mode: str = "Binomial",
    cap: int = EXHAUSTIVE_K_CAP,
    permutations: int = 16,
    seed: int = 0,
) -> WeightSpectrumModel:
    """Weight spectrum by exhaustive enumeration or the truncated binomial model.

    In ``Exhaustive`` mode the parity-weight table is averaged over the natural
    systematic form and ``permutations`` random column orders, since the
    decoder systematizes a reliability-permuted generator on every frame.
    """
    n, k = code.n, code.k
    r = n - k
    psi = 1.0 - sum(comb(n, u) for u in range(1, max(code.d_H, 1))) / 2.0**n
    if mode == "Exhaustive":
        rng = np.random.default_rng(seed)
        orders = [np.arange(n)] + [rng.permutation(n) for _ in range(permutations)]
        counts = np.zeros((r + 1, k + 1), dtype=np.float64)
        for order in orders:
            gsys, _, ok = systematize_array(code.G[:, order])
            if not ok:
                raise ValueError("generator matrix is rank deficient")
            q, u = enumerate_parity_weights(gsys, cap)
            np.add.at(counts, (u, q), 1.0)
        pcp = counts / counts.sum(axis=0, keepdims=True)
        A = np.bincount(q + u, minlength=n + 1).astype(np.int64)
        return WeightSpectrumModel("Exhaustive", n, k, code.d_H, A, psi, pcp)
    if mode == "Binomial":
        col = np.array([comb(r, u) for u in range(r + 1)], dtype=np.float64) / 2.0**r
        pcp = np.repeat(col[:, None], k + 1, axis=1)
        A = np.zeros(n + 1)
        A[0] = 1.0
        for u in range(max(code.d_H, 1), n + 1):
            A[u] = 2.0**k * comb(n, u) / 2.0**n / psi
        return WeightSpectrumModel("Binomial", n, k, code.d_H, A, psi, pcp)
    raise ValueError(f"unknown spectrum mode {mode!r}")


def write_code_csv(path, code: CodeSpec) -> None:
    Path(path).write_text(
        "# schema,osdlab-code-v1\n" + f"family,{code.family}\nn,{code.n}\nk,{code.k}\nd_H,{code.d_H}\n"
    )
