"""Replicated rate experiments over (n, r, w) grids with deterministic seeding.

Grid rules are declarative strings ("n^0.15", "n^-0.6" or absolute
numbers) so a report fully documents its regime.  Replicate seeds derive
from (experiment seed, grid index, replicate index); results are reduced
in that fixed order, so the output is a pure function of the
configuration regardless of worker count.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .blocks import BlockConfig, window_values_at
from .errors import ConfigError, PersistError
from .expansion import block_bookkeeping, boundary_cluster_stat, internal_cluster_stat
from .functionals import get_functional
from .limits import LimitTable
from .models import ModelSpec, gen_series, threshold_for_w

CSV_HEADER = "model,alpha,c0,c1,n,r,w,replicates,target,mean,sd,se"

_KNOWN_TARGETS = ("disjoint_stat", "sliding_stat", "ic_norm", "bc_norm",
                  "ic_large_norm", "pa1a2_small", "pa1a2_large", "clm_large",
                  "ecm", "scaled_gap")


def parse_rule(rule: str):
    """Turn "n^p" or a numeric literal into a callable of n."""
    rule = str(rule).strip()
    m = re.fullmatch(r"n\^([+-]?\d+(?:\.\d+)?)", rule)
    if m:
        p = float(m.group(1))
        return lambda n: float(n) ** p
    try:
        value = float(rule)
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid rule {rule!r}") from exc
    return lambda n: value


def parse_target(target: str) -> tuple[str, float | None]:
    m = re.fullmatch(r"(\w+)\(([^)]+)\)", target.strip())
    if m:
        kind, arg = m.group(1), float(m.group(2))
    else:
        kind, arg = target.strip(), None
    if kind not in _KNOWN_TARGETS:
        raise ConfigError(f"unknown target {target!r}")
    if kind == "clm_large" and arg is None:
        raise ConfigError("clm_large needs an exponent, e.g. clm_large(1)")
    return kind, arg


@dataclass(frozen=True)
class GridPoint:
    n: int
    r: int
    w: float
    u: float


@dataclass
class ExperimentConfig:
    model: ModelSpec
    functional: str
    grid: tuple              # tuples (n, r_rule, w_rule)
    replicates: int
    seed: int
    targets: tuple
    threads: int = 1
    max_bytes: int = 8_000_000_000

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        ns = [int(g[0]) for g in self.grid]
        if ns != sorted(ns):
            raise ConfigError("grid must be sorted by n")
        self.targets = tuple(self.targets)
        for t in self.targets:
            parse_target(t)
        get_functional(self.functional)

    def resolve_grid(self) -> list[GridPoint]:
        points = []
        for n, r_rule, w_rule in self.grid:
            n = int(n)
            r = math.ceil(parse_rule(r_rule)(n) - 1e-12)
            w = parse_rule(w_rule)(n)
            if r < 2:
                raise ConfigError(f"rule {r_rule!r} gives r={r} < 2 at n={n}")
            if not 0.0 < w < 1.0:
                raise ConfigError(f"rule {w_rule!r} gives w={w} outside (0,1) at n={n}")
            if r > n // 4:
                raise ConfigError(f"r={r} leaves fewer than 4 blocks at n={n}")
            u = threshold_for_w(self.model, w)
            points.append(GridPoint(n=n, r=r, w=float(w), u=float(u)))
        return points

    def canonical(self) -> dict:
        return {
            "model": self.model.format(),
            "functional": self.functional,
            "grid": [[int(n), str(r), str(w)] for n, r, w in self.grid],
            "replicates": self.replicates,
            "seed": self.seed,
            "targets": list(self.targets),
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TableRow:
    grid_index: int
    n: int
    r: int
    w: float
    target: str
    mean: float
    sd: float
    se: float
    replicates: int


@dataclass
class ConvergenceTable:
    model: str
    alpha: float
    c0: float
    c1: float
    rows: list
    metadata: dict = field(default_factory=dict)

    def row(self, grid_index: int, target: str) -> TableRow:
        for r in self.rows:
            if r.grid_index == grid_index and r.target == target:
                return r
        raise KeyError((grid_index, target))

    def targets(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.target not in seen:
                seen.append(r.target)
        return seen

    def series(self, target: str) -> list[TableRow]:
        return sorted((r for r in self.rows if r.target == target),
                      key=lambda r: r.grid_index)


def _model_columns(model: ModelSpec) -> tuple[str, float, float, float]:
    base = model.base
    c = list(base.coeffs) + [0.0] * (2 - len(base.coeffs))
    return model.label(), base.alpha, c[0], c[1]


def _derived_seed(seed: int, g: int, k: int) -> int:
    ss = np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, g, k))
    return int(ss.generate_state(1, np.uint64)[0])


def _replicate_values(model: ModelSpec, point: GridPoint, functional: str,
                      targets: tuple, seed: int) -> list[float]:
    """All requested targets for one generated replicate."""
    h = get_functional(functional)
    spec = model.with_block_size(point.r)
    n = point.n
    if spec.kind == "piecewise":
        n = (n // point.r) * point.r       # block copies must tile the sample
    series = gen_series(spec, n, seed)
    cfg = BlockConfig(r=point.r, u=point.u, w=point.w)
    book = block_bookkeeping(series, cfg)
    m, r, w = book.m, book.r, book.w
    n_eff = book.n_eff
    parsed = [parse_target(t) for t in targets]
    kinds = {k for k, _ in parsed}

    ic_total = None
    if kinds & {"ic_norm", "ic_large_norm"}:
        mode = "piecewise" if spec.kind == "piecewise" else "standard"
        ic_total, _ = internal_cluster_stat(book, h, mode=mode, path="fast")
    bc_total = None
    if "bc_norm" in kinds:
        bc_total = boundary_cluster_stat(book, h, path="fast").total
    pair_rate = None
    if kinds & {"pa1a2_small", "pa1a2_large"}:
        a = book.active
        even = np.arange(2, m, 2) - 1          # 0-based left block of pairs (j, j+1), j even
        pair_rate = float((a[even] & a[even + 1]).mean()) if even.size else 0.0
    db = sb = None
    if kinds & {"disjoint_stat", "sliding_stat", "scaled_gap"}:
        starts = np.arange(1, (m - 1) * r + 1, dtype=np.int64)
        sb = float(window_values_at(book.scaled, book.pos, starts, r, h).sum())
        bstarts = np.arange(m - 1, dtype=np.int64) * r + 1
        db = float(r * window_values_at(book.scaled, book.pos, bstarts, r, h).sum())

    out = []
    for kind, arg in parsed:
        if kind == "ic_norm":
            out.append(ic_total / (n_eff * w))
        elif kind == "bc_norm":
            out.append(bc_total / (n_eff * w))
        elif kind == "ic_large_norm":
            out.append(ic_total / (n_eff * r ** 2 * w ** 2))
        elif kind == "pa1a2_small":
            out.append(pair_rate / w)
        elif kind == "pa1a2_large":
            out.append(pair_rate / (r ** 2 * w ** 2))
        elif kind == "clm_large":
            lengths = np.where(book.active, book.last - book.first + 1, 0).astype(float)
            moment = float((lengths ** arg * book.active).mean())
            out.append(moment / (r ** (arg + 2.0) * w ** 2))
        elif kind == "ecm":
            bstarts_all = np.arange(m, dtype=np.int64) * r + 1
            vals = window_values_at(book.scaled, book.pos, bstarts_all, r, h)
            out.append(float(vals.mean()) / (r * w))
        elif kind == "disjoint_stat":
            out.append(db / (n_eff * r * w))
        elif kind == "sliding_stat":
            out.append(sb / (n_eff * r * w))
        elif kind == "scaled_gap":
            out.append(r * (db - sb) / (n_eff * r * w))
    return out


def _worker(args):
    model, point, functional, targets, seed = args
    return _replicate_values(model, point, functional, targets, seed)


def run_experiment(cfg: ExperimentConfig) -> ConvergenceTable:
    """Run all replicates over the grid and aggregate per-target moments."""
    t0 = time.monotonic()
    points = cfg.resolve_grid()
    n_max = max(p.n for p in points)
    if n_max * 8 * 4 * max(1, cfg.threads) > cfg.max_bytes:
        raise ConfigError(
            f"n={n_max} with {cfg.threads} workers exceeds the memory budget")

    jobs = []
    seeds_seen = {}
    for g in range(len(points)):
        for k in range(cfg.replicates):
            s = _derived_seed(cfg.seed, g, k)
            if s in seeds_seen:
                raise ConfigError(f"derived seed collision at {(g, k)}")
            seeds_seen[s] = (g, k)
            jobs.append((cfg.model, points[g], cfg.functional, cfg.targets, s))

    if cfg.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_worker, jobs, chunksize=8))
    else:
        results = [_worker(j) for j in jobs]

    rows = []
    for g, point in enumerate(points):
        block = np.array(results[g * cfg.replicates:(g + 1) * cfg.replicates])
        for t_idx, target in enumerate(cfg.targets):
            col = block[:, t_idx]
            mean = float(col.mean())
            sd = float(col.std(ddof=1)) if cfg.replicates > 1 else 0.0
            rows.append(TableRow(grid_index=g, n=point.n, r=point.r, w=point.w,
                                 target=target, mean=mean, sd=sd,
                                 se=sd / math.sqrt(cfg.replicates),
                                 replicates=cfg.replicates))
    label, alpha, c0, c1 = _model_columns(cfg.model)
    meta = {"config_hash": cfg.config_hash, "code_version": __version__,
            "wall_time_s": time.monotonic() - t0}
    return ConvergenceTable(model=label, alpha=alpha, c0=c0, c1=c1,
                            rows=rows, metadata=meta)


# -- verdicts ------------------------------------------------------------------


@dataclass
class VerdictReport:
    rows: dict
    rel_band: float

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows.values())

    def to_dict(self) -> dict:
        return {"rel_band": self.rel_band, "passed": self.passed, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def summarize(table: ConvergenceTable, expected: dict, rel_band: float = 0.15) -> VerdictReport:
    """Per-target verdict at the final grid point.

    A target passes when its final mean is within 3 SE of the expected
    constant, or within the relative band with the absolute error
    monotonically shrinking along the grid.  Targets with expected value 0
    use the 3 SE band alone.
    """
    if not table.rows:
        raise ConfigError("empty table")
    rows = {}
    for target in table.targets():
        if target not in expected:
            raise ConfigError(f"no expected value for target {target!r}")
        exp = float(expected[target])
        seq = table.series(target)
        final = seq[-1]
        err = abs(final.mean - exp)
        within_3se = err <= 3.0 * final.se
        diffs = [abs(r.mean - exp) for r in seq]
        monotone = all(b <= a + 1e-12 for a, b in zip(diffs, diffs[1:]))
        if exp == 0.0:
            rel = float("inf") if final.mean != 0 else 0.0
            passed = within_3se
        else:
            rel = err / abs(exp)
            passed = within_3se or (rel <= rel_band and monotone)
        rows[target] = {"final_mean": final.mean, "final_se": final.se,
                        "expected": exp, "rel_error": rel,
                        "within_3se": within_3se, "monotone": monotone,
                        "passed": passed}
    return VerdictReport(rows=rows, rel_band=rel_band)


def expected_targets(lt: LimitTable, targets) -> dict:
    """Map target names to their limit constants for the verdict step."""
    out = {}
    for t in targets:
        kind, arg = parse_target(t)
        if kind == "ic_norm":
            out[t] = lt.nu_ic
        elif kind == "bc_norm":
            out[t] = lt.nu_bc
        elif kind == "pa1a2_small":
            out[t] = lt.small_block_pa1a2
        elif kind == "pa1a2_large":
            out[t] = lt.large_block_pa1a2
        elif kind == "clm_large":
            out[t] = lt.theta ** 2 / ((arg + 1.0) * (arg + 2.0))
        elif kind == "ic_large_norm":
            out[t] = lt.ic_large_constant
        elif kind == "ecm":
            if lt.functional != "indicator":
                raise ConfigError("ecm expectation is pinned for the indicator only")
            out[t] = lt.theta
        elif kind == "scaled_gap":
            out[t] = -(lt.nu_ic + lt.nu_bc)
        elif kind in ("disjoint_stat", "sliding_stat"):
            if lt.functional != "indicator":
                raise ConfigError("block statistic expectation pinned for the indicator only")
            out[t] = lt.theta
    return out


# -- persistence ---------------------------------------------------------------


def csv_text(table: ConvergenceTable) -> str:
    lines = [CSV_HEADER]
    for r in table.rows:
        lines.append(",".join([
            table.model, repr(float(table.alpha)), repr(float(table.c0)),
            repr(float(table.c1)), str(r.n), str(r.r), repr(float(r.w)),
            str(r.replicates), r.target, repr(float(r.mean)),
            repr(float(r.sd)), repr(float(r.se)),
        ]))
    return "\n".join(lines) + "\n"


def persist(table: ConvergenceTable, path, fmt: str = "csv") -> None:
    """Write a table; CSV columns are fixed and byte-stable for fixed input."""
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(csv_text(table))
    elif fmt == "json":
        payload = {
            "model": table.model, "alpha": table.alpha, "c0": table.c0,
            "c1": table.c1,
            "metadata": {k: v for k, v in table.metadata.items()
                         if k != "wall_time_s"},
            "rows": [dict(grid_index=r.grid_index, n=r.n, r=r.r, w=r.w,
                          target=r.target, mean=r.mean, sd=r.sd, se=r.se,
                          replicates=r.replicates) for r in table.rows],
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise PersistError(f"unknown format {fmt!r}")


def load(path) -> ConvergenceTable:
    """Load a CSV or JSON table written by persist()."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        payload = json.loads(text)
        try:
            rows = [TableRow(grid_index=int(r["grid_index"]), n=int(r["n"]),
                             r=int(r["r"]), w=float(r["w"]), target=r["target"],
                             mean=float(r["mean"]), sd=float(r["sd"]),
                             se=float(r["se"]), replicates=int(r["replicates"]))
                    for r in payload["rows"]]
            return ConvergenceTable(model=payload["model"], alpha=payload["alpha"],
                                    c0=payload["c0"], c1=payload["c1"], rows=rows,
                                    metadata=payload.get("metadata", {}))
        except KeyError as exc:
            raise PersistError(f"missing column: {exc.args[0]}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise PersistError("empty table file")
    header = lines[0].split(",")
    wanted = CSV_HEADER.split(",")
    for col in wanted:
        if col not in header:
            raise PersistError(f"missing column: {col}")
    idx = {c: header.index(c) for c in wanted}
    rows = []
    model = alpha = c0 = c1 = None
    grid_seen: dict[tuple, int] = {}
    for ln in lines[1:]:
        f = ln.split(",")
        if len(f) != len(header):
            raise PersistError(f"malformed row: {ln!r}")
        model = f[idx["model"]]
        alpha = float(f[idx["alpha"]])
        c0 = float(f[idx["c0"]])
        c1 = float(f[idx["c1"]])
        key = (int(f[idx["n"]]), int(f[idx["r"]]), float(f[idx["w"]]))
        g = grid_seen.setdefault(key, len(grid_seen))
        rows.append(TableRow(grid_index=g, n=key[0], r=key[1], w=key[2],
                             target=f[idx["target"]], mean=float(f[idx["mean"]]),
                             sd=float(f[idx["sd"]]), se=float(f[idx["se"]]),
                             replicates=int(f[idx["replicates"]])))
    return ConvergenceTable(model=model, alpha=alpha, c0=c0, c1=c1, rows=rows)
