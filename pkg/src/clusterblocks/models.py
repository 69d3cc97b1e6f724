"""Heavy-tailed series generators and their exact marginal tails.

Models are moving maxima of i.i.d. standard Pareto innovations,

    X_j = max_k c_k * xi_{j+k},      P(xi > t) = t**(-alpha), t >= 1,

which covers the i.i.d. case (single coefficient), the 1-dependent MMA(1)
case and general m-dependent MMA(q), plus a piecewise wrapper that
concatenates independent copies of an inner model, one copy per block.
Pareto innovations give closed-form marginals, so thresholds can be
calibrated exactly instead of empirically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, PersistError

_U64 = 0xFFFFFFFFFFFFFFFF
_MAGIC = b"CLBLKSER"


def _mask_seed(seed: int) -> int:
    return int(seed) & _U64


@dataclass(frozen=True)
class ModelSpec:
    """Specification of a series generator.

    kind is one of "iid", "mma1", "mmaq", "piecewise".  coeffs are the
    moving-maxima weights (c_0, ..., c_q); alpha is the Pareto tail index.
    For "piecewise", inner holds the base model and block_size the length
    of each independent copy (block_size=None is allowed and must be
    resolved by the caller before generation).
    """

    kind: str
    alpha: float = 0.0
    coeffs: tuple[float, ...] = ()
    block_size: int | None = None
    inner: "ModelSpec | None" = None

    def __post_init__(self):
        if self.kind == "piecewise":
            if self.inner is None:
                raise ModelError("piecewise model needs an inner model")
            if self.inner.kind == "piecewise":
                raise ModelError("piecewise models cannot be nested")
            if self.block_size is not None and self.block_size < 1:
                raise ModelError("block_size must be a positive integer")
            return
        if self.alpha <= 0:
            raise ModelError("tail index alpha must be > 0")
        if not self.coeffs or all(c == 0 for c in self.coeffs):
            raise ModelError("at least one coefficient must be positive")
        if any(c < 0 for c in self.coeffs):
            raise ModelError("coefficients must be nonnegative")

    # -- constructors ----------------------------------------------------

    @classmethod
    def iid_pareto(cls, alpha: float) -> "ModelSpec":
        return cls(kind="iid", alpha=float(alpha), coeffs=(1.0,))

    @classmethod
    def mma1(cls, c0: float, c1: float, alpha: float) -> "ModelSpec":
        return cls(kind="mma1", alpha=float(alpha), coeffs=(float(c0), float(c1)))

    @classmethod
    def mmaq(cls, coeffs, alpha: float) -> "ModelSpec":
        return cls(kind="mmaq", alpha=float(alpha), coeffs=tuple(float(c) for c in coeffs))

    @classmethod
    def piecewise(cls, inner: "ModelSpec", block_size: int | None = None) -> "ModelSpec":
        return cls(kind="piecewise", inner=inner,
                   block_size=None if block_size is None else int(block_size))

    # -- helpers ----------------------------------------------------------

    @property
    def base(self) -> "ModelSpec":
        """The stationary model actually generating values (inner for piecewise)."""
        return self.inner if self.kind == "piecewise" else self

    @property
    def order(self) -> int:
        """Dependence order q: lags beyond q are independent."""
        return len(self.base.coeffs) - 1

    def with_block_size(self, block_size: int) -> "ModelSpec":
        if self.kind != "piecewise":
            return self
        return ModelSpec.piecewise(self.inner, block_size)

    def label(self) -> str:
        if self.kind == "piecewise":
            return f"piecewise({self.inner.label()})"
        return self.kind

    def format(self) -> str:
        """Round-trippable mini-language string, e.g. "mma1:1,1,1"."""
        if self.kind == "piecewise":
            size = "r" if self.block_size is None else str(self.block_size)
            return f"piecewise({self.inner.format()}):{size}"
        if self.kind == "iid":
            return f"iid:{self.alpha:g}"
        parts = [f"{c:g}" for c in self.coeffs] + [f"{self.alpha:g}"]
        return f"{self.kind}:" + ",".join(parts)


def parse_model(text: str) -> ModelSpec:
    """Parse the CLI mini-language: "iid:alpha", "mma1:c0,c1,alpha",
    "mmaq:c0,...,cq,alpha", "piecewise(<inner>):<block_size|r>".
    """
    text = text.strip()
    if text.startswith("piecewise("):
        close = text.rfind(")")
        if close < 0 or not text[close + 1:].startswith(":"):
            raise ModelError(f"cannot parse piecewise model {text!r}")
        inner = parse_model(text[len("piecewise("):close])
        size_txt = text[close + 2:]
        block_size = None if size_txt == "r" else int(size_txt)
        return ModelSpec.piecewise(inner, block_size)
    kind, _, args = text.partition(":")
    try:
        values = [float(v) for v in args.split(",") if v != ""]
    except ValueError as exc:
        raise ModelError(f"cannot parse model arguments in {text!r}") from exc
    if kind == "iid":
        if len(values) != 1:
            raise ModelError("iid model takes exactly one argument: alpha")
        return ModelSpec.iid_pareto(values[0])
    if kind == "mma1":
        if len(values) != 3:
            raise ModelError("mma1 model takes c0,c1,alpha")
        return ModelSpec.mma1(values[0], values[1], values[2])
    if kind == "mmaq":
        if len(values) < 2:
            raise ModelError("mmaq model takes c0,...,cq,alpha")
        return ModelSpec.mmaq(values[:-1], values[-1])
    raise ModelError(f"unknown model kind {kind!r}")


@dataclass
class MagnitudeSeries:
    """A finite sequence of nonnegative magnitudes plus provenance."""

    values: np.ndarray
    model: ModelSpec | None = None
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ModelError("series must be a nonempty 1-d array")
        if np.any(self.values < 0):
            raise ModelError("magnitudes must be nonnegative")

    def __len__(self) -> int:
        return self.values.size


def _pareto(rng: np.random.Generator, n: int, alpha: float) -> np.ndarray:
    # (1 - U)^(-1/alpha) with U in [0,1) lands on (1, inf) except for the
    # measure-zero U=0 corner, which is redrawn to keep the support open.
    u = rng.random(n)
    while True:
        zero = u == 0.0
        if not zero.any():
            break
        u[zero] = rng.random(int(zero.sum()))
    return (1.0 - u) ** (-1.0 / alpha)


def _gen_stationary(spec: ModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    q = len(spec.coeffs) - 1
    xi = _pareto(rng, n + q, spec.alpha)
    out = np.zeros(n)
    for k, c in enumerate(spec.coeffs):
        if c > 0:
            np.maximum(out, c * xi[k:k + n], out=out)
    return out


def _gen_piecewise(spec: ModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    # One innovation row per block: rows are disjoint slices of a single
    # stream, so blocks are independent, and row j only depends on (seed,
    # j, block_size), so each block replays individually as the sample
    # grows.  Re-seeding a generator per block gives the same contract at
    # several hundred times the cost.
    size = spec.block_size
    q = len(spec.inner.coeffs) - 1
    m = n // size
    xi = _pareto(rng, m * (size + q), spec.inner.alpha).reshape(m, size + q)
    out = np.zeros((m, size))
    for k, c in enumerate(spec.inner.coeffs):
        if c > 0:
            np.maximum(out, c * xi[:, k:k + size], out=out)
    return out.ravel()


def gen_series(spec: ModelSpec, n: int, seed: int) -> MagnitudeSeries:
    """Generate a series of length n; bit-identical replay for fixed inputs.

    Piecewise models draw one independent innovation row per block, so
    blocks are independent copies and individually reproducible.
    """
    if n < 1:
        raise ModelError("series length must be >= 1")
    seed = _mask_seed(seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if spec.kind == "piecewise":
        size = spec.block_size
        if size is None:
            raise ModelError("piecewise block_size is unresolved")
        if n % size != 0:
            raise ModelError(f"n={n} is not a multiple of block_size={size}")
        values = _gen_piecewise(spec, n, rng)
    else:
        values = _gen_stationary(spec, n, rng)
    return MagnitudeSeries(values=values, model=spec, seed=seed)


def marginal_tail(spec: ModelSpec, x: float) -> float:
    """Exact w = P(X_0 > x); for piecewise models, the inner marginal.

    Valid for x >= max_k c_k (below that the product form leaves the
    Pareto support).
    """
    spec = spec.base
    cmax = max(spec.coeffs)
    if x < cmax:
        raise ModelError(f"threshold {x} below model support [{cmax}, inf)")
    # -expm1(sum log1p(-p_k)) keeps full relative accuracy for tiny tails.
    log_below = 0.0
    for c in spec.coeffs:
        if c > 0:
            p = (c / x) ** spec.alpha
            if p >= 1.0:
                return 1.0
            log_below += np.log1p(-p)
    return float(-np.expm1(log_below))


def threshold_for_w(spec: ModelSpec, w: float) -> float:
    """Invert marginal_tail: u with |marginal_tail(u) - w| <= 1e-12 * w."""
    if not 0.0 < w < 1.0:
        raise ModelError("w must lie strictly between 0 and 1")
    base = spec.base
    positive = [c for c in base.coeffs if c > 0]
    if len(positive) == 1:
        u = positive[0] * w ** (-1.0 / base.alpha)
        return float(u)
    lo = max(positive)                      # marginal_tail(lo) = 1 > w
    hi = (sum(c ** base.alpha for c in positive) / w) ** (1.0 / base.alpha)
    hi = max(hi, lo * 2.0)                  # union bound: marginal_tail(hi) <= w
    tol = 1e-12 * w
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = marginal_tail(base, mid)
        if abs(fm - w) <= tol:
            return float(mid)
        if fm > w:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps * hi:
            break
    u = 0.5 * (lo + hi)
    if abs(marginal_tail(base, u) - w) > tol:
        raise ModelError("threshold bisection did not converge")
    return float(u)


# -- tail process and the conditioned process Z ---------------------------


@dataclass(frozen=True)
class TailPath:
    """One draw of the MMA(1) tail process: (Y_-1, Y_0, Y_1), zero beyond."""

    y_minus1: float
    y_0: float
    y_1: float

    def __post_init__(self):
        if not self.y_0 > 1.0:
            raise ModelError("tail path must have y_0 > 1")
        if self.y_minus1 > 0 and self.y_1 > 0:
            raise ModelError("at most one of y_minus1, y_1 can be nonzero")

    def window(self) -> np.ndarray:
        """Coordinates from time 0 on; earlier coordinates never exceed 1
        for an accepted Z draw and are irrelevant to cluster functionals."""
        return np.array([self.y_0, self.y_1])


@dataclass
class ZBookkeeping:
    draws: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.draws if self.draws else float("nan")


class ZSampler:
    """Tail process Y and the rejection sampler for Z = Y | Y*_{-inf,-1} <= 1.

    Y_1 = B (c1/c0) Y_0 and Y_-1 = (1-B) (c0/c1) Y_0 with B Bernoulli of
    mean c0^a / (c0^a + c1^a); a draw is accepted as Z when y_minus1 <= 1.
    The running acceptance rate estimates the candidate extremal index.
    """

    def __init__(self, spec: ModelSpec, seed: int):
        base = spec.base
        if base.kind not in ("mma1", "iid"):
            raise ModelError("tail sampling is only available for MMA(1)-type models")
        c = list(base.coeffs) + [0.0] * (2 - len(base.coeffs))
        self.c0, self.c1 = c[0], c[1]
        if self.c0 == 0 and self.c1 == 0:
            raise ModelError("both coefficients are zero")
        self.alpha = base.alpha
        s = self.c0 ** self.alpha + self.c1 ** self.alpha
        self.p_b = self.c0 ** self.alpha / s
        self.rng = np.random.default_rng(np.random.SeedSequence(_mask_seed(seed)))
        self.book = ZBookkeeping()

    def _draw(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        y0 = _pareto(self.rng, k, self.alpha)
        b = self.rng.random(k) < self.p_b
        y1 = np.where(b, (self.c1 / self.c0) * y0 if self.c0 > 0 else 0.0, 0.0)
        ym1 = np.where(~b, (self.c0 / self.c1) * y0 if self.c1 > 0 else 0.0, 0.0)
        self.book.draws += k
        return ym1, y0, y1

    def sample_y(self) -> TailPath:
        ym1, y0, y1 = self._draw(1)
        return TailPath(float(ym1[0]), float(y0[0]), float(y1[0]))

    def sample_z(self) -> TailPath:
        while True:
            ym1, y0, y1 = self._draw(1)
            if ym1[0] <= 1.0:
                self.book.accepted += 1
                return TailPath(float(ym1[0]), float(y0[0]), float(y1[0]))

    def sample_z_many(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized rejection: arrays (z_0, z_1) of k accepted draws."""
        z0 = np.empty(0)
        z1 = np.empty(0)
        while z0.size < k:
            batch = max(1024, int(1.3 * (k - z0.size) / max(self.acceptance_hint, 1e-3)))
            ym1, y0, y1 = self._draw(batch)
            keep = ym1 <= 1.0
            self.book.accepted += int(keep.sum())
            z0 = np.concatenate([z0, y0[keep]])
            z1 = np.concatenate([z1, y1[keep]])
        return z0[:k], z1[:k]

    @property
    def acceptance_hint(self) -> float:
        cm = max(self.c0, self.c1) ** self.alpha
        return cm / (self.c0 ** self.alpha + self.c1 ** self.alpha)


def sample_tail_and_z(spec: ModelSpec, seed: int) -> tuple[TailPath, TailPath, ZBookkeeping]:
    """One tail-process draw, one accepted Z draw, and the rejection counts."""
    sampler = ZSampler(spec, seed)
    y = sampler.sample_y()
    z = sampler.sample_z()
    return y, z, sampler.book


# -- series files ----------------------------------------------------------


def write_series(path, series: MagnitudeSeries, fmt: str = "bin") -> None:
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(series)))
            fh.write(series.values.astype("<f8").tobytes())
    elif fmt == "txt":
        with open(path, "w") as fh:
            for v in series.values:
                fh.write(repr(float(v)) + "\n")
    else:
        raise PersistError(f"unknown series format {fmt!r}")


def read_series(path) -> MagnitudeSeries:
    """Read either format; the binary magic distinguishes them."""
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            raw = fh.read(8)
            if len(raw) != 8:
                raise PersistError("truncated series file: missing length")
            (n,) = struct.unpack("<Q", raw)
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            if data.size != n:
                raise PersistError("truncated series file: missing values")
            return MagnitudeSeries(values=data.copy())
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise PersistError(f"cannot parse series file {path}") from exc
    return MagnitudeSeries(values=values)
