"""Synthetic patch corpus, detection/runtime evaluation and scaling runs."""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import ndimage

from .chunking import chunk_image
from .config import PipelineConfig
from .errors import ChunkShieldError, ParameterError
from .image_io import ImageTensor, load_image
from .mi_features import HistogramConfig, all_pairs_mi, extract_features
from .pipeline import STAGES, DefenseResult, defend

BASE_KINDS = ("gradient", "noisy", "bandnoise", "file")
PATCH_KINDS = ("noise", "checkerboard", "solid", "none")


@dataclass(frozen=True)
class SyntheticSpec:
    base: str = "gradient"
    patch: str = "noise"
    patch_size: int = 50
    position: tuple[int, int] | None = None  # (top, left); None draws one from the seed
    height: int = 224
    width: int = 224
    channels: int = 3
    seed: int = 0
    base_path: str | None = None

    def __post_init__(self) -> None:
        if self.base not in BASE_KINDS:
            raise ParameterError(f"unknown base kind {self.base!r}; choose from {BASE_KINDS}")
        if self.patch not in PATCH_KINDS:
            raise ParameterError(f"unknown patch kind {self.patch!r}; choose from {PATCH_KINDS}")
        if self.base == "file" and not self.base_path:
            raise ParameterError("base 'file' needs base_path")
        if self.channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.channels}")
        if self.patch != "none":
            if self.patch_size < 1:
                raise ParameterError(f"patch_size must be >= 1, got {self.patch_size}")
            if self.base != "file" and self.patch_size > min(self.height, self.width):
                raise ParameterError(f"patch of size {self.patch_size} does not fit a {self.height}x{self.width} image")
            if self.position is not None:
                top, left = self.position
                if top < 0 or left < 0 or (
                    self.base != "file"
                    and (top + self.patch_size > self.height or left + self.patch_size > self.width)
                ):
                    raise ParameterError(f"patch at {self.position} leaves the image")


Rect = tuple[int, int, int, int]  # top, left, height, width


def _gradient_base(rng: np.random.Generator, h: int, w: int, ch: int) -> np.ndarray:
    rows = np.arange(h, dtype=np.float64)[:, None] / max(h - 1, 1)
    cols = np.arange(w, dtype=np.float64)[None, :] / max(w - 1, 1)
    out = np.empty((h, w, ch))
    for c in range(ch):
        lo = rng.uniform(0, 80)
        hi = rng.uniform(lo + 120, 255)
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * rows + np.sin(theta) * cols
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
        out[:, :, c] = lo + (hi - lo) * t
    return out


def _noisy_base(rng: np.random.Generator, h: int, w: int, ch: int) -> np.ndarray:
    # gradient plus Gaussian sensor noise
    return _gradient_base(rng, h, w, ch) + rng.normal(0.0, SENSOR_NOISE_SIGMA, size=(h, w, ch))


def _bandnoise_base(rng: np.random.Generator, h: int, w: int, ch: int) -> np.ndarray:
    # low-pass noise field; correlation length well above the default stride
    out = np.empty((h, w, ch))
    for c in range(ch):
        field_ = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=BANDNOISE_SIGMA, mode="reflect")
        field_ = (field_ - field_.min()) / max(field_.max() - field_.min(), 1e-12)
        out[:, :, c] = 10 + 235 * field_
    return out


_BASES = {"gradient": _gradient_base, "noisy": _noisy_base, "bandnoise": _bandnoise_base}
BANDNOISE_SIGMA = 24.0
SENSOR_NOISE_SIGMA = 2.0


def _paint_patch(img: np.ndarray, kind: str, rect: Rect, rng: np.random.Generator) -> None:
    top, left, ph, pw = rect
    ch = img.shape[2]
    if kind == "noise":
        img[top : top + ph, left : left + pw] = rng.integers(0, 256, size=(ph, pw, ch))
    elif kind == "checkerboard":
        cell = int(rng.integers(3, 9))
        a, b = rng.integers(0, 256, size=(2, ch))
        yy, xx = np.mgrid[0:ph, 0:pw]
        on = ((yy // cell + xx // cell) % 2).astype(bool)
        img[top : top + ph, left : left + pw] = np.where(on[:, :, None], a, b)
    elif kind == "solid":
        img[top : top + ph, left : left + pw] = rng.integers(0, 256, size=ch)


def generate_case(spec: SyntheticSpec) -> tuple[ImageTensor, Rect | None]:
    """Deterministic synthetic image and the exact patch rectangle (None if clean)."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0xC0FFEE,)))
    if spec.base == "file":
        assert spec.base_path is not None
        img = load_image(spec.base_path).data.astype(np.float64)
        h, w = img.shape[:2]
    else:
        h, w = spec.height, spec.width
        img = _BASES[spec.base](rng, h, w, spec.channels)
    img = np.floor(np.clip(img, 0, 255) + 0.5)
    if spec.patch == "none":
        return ImageTensor(img.astype(np.uint8)), None
    p = spec.patch_size
    if p > min(h, w):
        raise ParameterError(f"patch of size {p} does not fit a {h}x{w} image")
    if spec.position is None:
        top, left = int(rng.integers(0, h - p + 1)), int(rng.integers(0, w - p + 1))
    else:
        top, left = spec.position
        if top + p > h or left + p > w:
            raise ParameterError(f"patch at {spec.position} leaves the {h}x{w} image")
    rect = (top, left, p, p)
    _paint_patch(img, spec.patch, rect, rng)
    return ImageTensor(img.astype(np.uint8)), rect


def make_corpus(
    n: int,
    seed: int = 0,
    bases: Sequence[str] = ("gradient", "noisy"),
    patches: Sequence[str] = ("noise", "checkerboard"),
    **spec_fields: Any,
) -> list[SyntheticSpec]:
    """``n`` specs cycling through base/patch kinds, with per-case seeds."""
    combos = [(b, p) for b in bases for p in patches]
    return [
        SyntheticSpec(base=combos[i % len(combos)][0], patch=combos[i % len(combos)][1], seed=seed * 100_003 + i, **spec_fields)
        for i in range(n)
    ]


def corpus_from_config(obj: dict[str, Any]) -> list[SyntheticSpec]:
    """Build a corpus from a JSON object.

    Either ``{"cases": [{...SyntheticSpec fields...}, ...]}`` or a generator
    form ``{"n": 100, "seed": 0, "bases": [...], "patches": [...], ...}``
    where extra keys are passed to every spec.
    """
    if "cases" in obj:
        specs = []
        for c in obj["cases"]:
            c = dict(c)
            if c.get("position") is not None:
                c["position"] = tuple(c["position"])
            specs.append(SyntheticSpec(**c))
        return specs
    obj = dict(obj)
    n = int(obj.pop("n", 100))
    seed = int(obj.pop("seed", 0))
    bases = obj.pop("bases", ("gradient", "noisy"))
    patches = obj.pop("patches", ("noise", "checkerboard"))
    try:
        return make_corpus(n, seed, bases, patches, **obj)
    except TypeError as exc:
        raise ParameterError(f"bad corpus config: {exc}") from exc


# ---------------------------------------------------------------------------
# evaluation


def flagged_coverage(result: DefenseResult, rect: Rect) -> float:
    """Fraction of the patch rectangle covered by the union of flagged windows."""
    top, left, ph, pw = rect
    mask = np.zeros((result.image.height, result.image.width), dtype=bool)
    k = result.kernel
    for f in result.flagged:
        mask[f.top : f.top + k, f.left : f.left + k] = True
    return float(mask[top : top + ph, left : left + pw].sum()) / (ph * pw)


def _window_hits(top: int, left: int, k: int, rect: Rect) -> bool:
    rt, rl, rh, rw = rect
    return top < rt + rh and rt < top + k and left < rl + rw and rl < left + k


@dataclass
class CaseRecord:
    case: int
    seed: int
    base: str
    patch: str
    rect: Rect | None
    n_chunks: int = 0
    flagged: int = 0
    false_flags: int = 0
    coverage: float | None = None
    detected: bool | None = None
    timings: dict[str, float] = field(default_factory=dict)
    total_runtime: float | None = None
    error: str | None = None


@dataclass
class EvalReport:
    cases: list[CaseRecord]
    recall: float | None
    false_flag_rate: float | None
    runtime: dict[str, dict[str, float]]
    errors: int

    def summary(self) -> dict[str, Any]:
        return {
            "record": "summary",
            "cases": len(self.cases),
            "recall": self.recall,
            "false_flag_rate": self.false_flag_rate,
            "errors": self.errors,
            "runtime": self.runtime,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": "case", **asdict(c)}) for c in self.cases]
        lines.append(json.dumps(self.summary()))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        def fmt(v: float | None, spec: str) -> str:
            return "N/A" if v is None else format(v, spec)

        out = [
            f"{'case':>5} {'base':<10} {'patch':<13} {'flagged':>7} {'coverage':>8} {'detected':>8} {'total_s':>8}",
        ]
        for c in self.cases:
            det = "ERR" if c.error else ("-" if c.detected is None else ("yes" if c.detected else "no"))
            out.append(
                f"{c.case:>5} {c.base:<10} {c.patch:<13} {c.flagged:>7} {fmt(c.coverage, '.3f'):>8} {det:>8} "
                f"{fmt(c.total_runtime, '.4f'):>8}"
            )
        out.append("")
        out.append(f"recall           {fmt(self.recall, '.3f')}")
        out.append(f"false-flag rate  {fmt(self.false_flag_rate, '.4f')}")
        out.append(f"errors           {self.errors}")
        for stage, st in self.runtime.items():
            out.append(f"{stage:<16} mean {st['mean']:.4f}s  p50 {st['p50']:.4f}s  p90 {st['p90']:.4f}s")
        return "\n".join(out) + "\n"


def _run_case(args: tuple[int, SyntheticSpec, PipelineConfig]) -> CaseRecord:
    i, spec, config = args
    rec = CaseRecord(i, spec.seed, spec.base, spec.patch, None)
    try:
        image, rect = generate_case(spec)
        rec.rect = rect
        res = defend(image, config, workers=1)
    except (ChunkShieldError, OSError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.n_chunks = len(res.scores)
    rec.flagged = len(res.flagged)
    rec.timings = dict(res.timings)
    rec.total_runtime = res.total_runtime
    if rect is None:
        rec.false_flags = rec.flagged
    else:
        rec.false_flags = sum(not _window_hits(f.top, f.left, res.kernel, rect) for f in res.flagged)
        rec.coverage = flagged_coverage(res, rect)
        rec.detected = rec.coverage >= 0.5
    return rec


def _percentile(xs: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(xs), q))


def evaluate(corpus: Sequence[SyntheticSpec], config: PipelineConfig = PipelineConfig(), workers: int = 1) -> EvalReport:
    """Run :func:`defend` on every case and aggregate detection and runtime.

    ``workers > 1`` spreads cases over processes; leave it at 1 when timings
    should not contend for cores.
    """
    if not corpus:
        raise ParameterError("corpus is empty")
    jobs = [(i, s, config) for i, s in enumerate(corpus)]
    if workers <= 1:
        cases = [_run_case(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cases = list(pool.map(_run_case, jobs))

    ok = [c for c in cases if c.error is None]
    patched = [c for c in ok if c.rect is not None]
    clean = [c for c in ok if c.rect is None]
    recall = sum(bool(c.detected) for c in patched) / len(patched) if patched else None
    ffr = statistics.fmean(c.false_flags / c.n_chunks for c in clean if c.n_chunks) if clean else None

    runtime: dict[str, dict[str, float]] = {}
    for stage in (*STAGES, "total"):
        xs = [c.total_runtime if stage == "total" else c.timings.get(stage, 0.0) for c in ok]
        if xs:
            runtime[stage] = {"mean": statistics.fmean(xs), "p50": _percentile(xs, 50), "p90": _percentile(xs, 90)}
    return EvalReport(cases, recall, ffr, runtime, len(cases) - len(ok))


# ---------------------------------------------------------------------------
# scaling


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(x: Sequence[float], y: Sequence[float]) -> LinearFit | None:
    """Least-squares line; None when fewer than two distinct x values."""
    xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if xa.size < 2 or np.unique(xa).size < 2:
        return None
    slope, intercept = np.polyfit(xa, ya, 1)
    resid = ya - (slope * xa + intercept)
    ss_tot = float(((ya - ya.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float | None:
    fit = linear_fit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)))
    return None if fit is None else fit.slope


@dataclass
class ScalingTable:
    rows: list[tuple[int, float]]
    fit: LinearFit | None
    all_pairs: list[tuple[int, float]] = field(default_factory=list)
    all_pairs_exponent: float | None = None

    def to_records(self) -> list[dict[str, Any]]:
        recs: list[dict[str, Any]] = [{"n": n, "localized_s": t} for n, t in self.rows]
        ap = dict(self.all_pairs)
        for r in recs:
            if r["n"] in ap:
                r["all_pairs_s"] = ap[r["n"]]
        recs.append(
            {
                "record": "fit",
                "slope": None if self.fit is None else self.fit.slope,
                "intercept": None if self.fit is None else self.fit.intercept,
                "r2": None if self.fit is None else self.fit.r2,
                "all_pairs_exponent": self.all_pairs_exponent,
            }
        )
        return recs


def _grid_dims(n: int) -> tuple[int, int]:
    r = int(math.isqrt(n))
    while n % r:
        r -= 1
    return r, n // r


def scaling_image(n_chunks: int, config: PipelineConfig, channels: int = 1, seed: int = 0) -> ImageTensor:
    """Band-noise image whose grid has exactly ``n_chunks`` chunks."""
    rows, cols = _grid_dims(n_chunks)
    h = config.kernel + (rows - 1) * config.stride
    w = config.kernel + (cols - 1) * config.stride
    img, _ = generate_case(SyntheticSpec(base="bandnoise", patch="none", height=h, width=w, channels=channels, seed=seed))
    return img


def _best_time(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def scaling_run(
    chunk_counts: Sequence[int],
    config: PipelineConfig = PipelineConfig(),
    channels: int = 1,
    repeats: int = 3,
    all_pairs_counts: Iterable[int] = (),
) -> ScalingTable:
    """Time feature extraction against chunk count, optionally with the all-pairs reference."""
    if list(chunk_counts) != sorted(set(chunk_counts)):
        raise ParameterError("chunk counts must be strictly increasing")
    cfg = HistogramConfig(config.bins)
    rows = []
    grids = {}
    for n in chunk_counts:
        grid = chunk_image(scaling_image(n, config, channels), config.kernel, config.stride)
        grids[n] = grid
        rows.append((n, _best_time(lambda: extract_features(grid, cfg, workers=1), repeats)))
    ap_rows = []
    for n in all_pairs_counts:
        grid = grids.get(n) or chunk_image(scaling_image(n, config, channels), config.kernel, config.stride)
        ap_rows.append((n, _best_time(lambda: all_pairs_mi(grid, cfg), 1)))
    exponent = loglog_slope([n for n, _ in ap_rows], [t for _, t in ap_rows]) if len(ap_rows) >= 2 else None
    return ScalingTable(rows, linear_fit([n for n, _ in rows], [t for _, t in rows]), ap_rows, exponent)
