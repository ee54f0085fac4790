"""Per-region anchor search with an evolutionary algorithm.

A candidate configuration is a 7-gene chromosome: three aspect ratios and
four scale ratios whose cartesian product gives 12 anchors. Fitness is the
mean of ``-(1 - m)^2 * log(m)`` over ground truths, where ``m`` is the best
IoU any anchor reaches against the box when placed on its center. Lower is
better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import AnnotationRecord, derive_features
from .geometry import (
    ANCHOR_BASE,
    DEFAULT_ASPECTS,
    DEFAULT_SCALES,
    GENE_MAX,
    GENE_MIN,
    AnchorSpec,
    BoundingBox,
    boxes_to_wh,
    cartesian_config,
    centered_iou,
    max_iou_many,
)
from .regions import RegionPartition, assign_region, lloyd

N_ASPECTS = 3
N_SCALES = 4
N_GENES = N_ASPECTS + N_SCALES
IOU_FLOOR = 1e-7
COVERED_IOU = 0.5
MUTATION_MODES = ("reset", "creep", "mixed")


@dataclass(frozen=True)
class AnchorChromosome:
    aspects: tuple[float, float, float]
    scales: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.aspects) != N_ASPECTS or len(self.scales) != N_SCALES:
            raise ValueError("a chromosome holds exactly 3 aspect and 4 scale genes")

    @classmethod
    def from_genes(cls, genes: Sequence[float]) -> "AnchorChromosome":
        g = [float(v) for v in genes]
        if len(g) != N_GENES:
            raise ValueError(f"expected {N_GENES} genes, got {len(g)}")
        return cls(tuple(g[:N_ASPECTS]), tuple(g[N_ASPECTS:]))

    @classmethod
    def default(cls) -> "AnchorChromosome":
        return cls(tuple(DEFAULT_ASPECTS), tuple(DEFAULT_SCALES))

    def genes(self) -> np.ndarray:
        return np.array(self.aspects + self.scales, dtype=float)

    def canonical(self, params: "EAParams | None" = None) -> "AnchorChromosome":
        params = params or EAParams()
        return AnchorChromosome.from_genes(canonicalize(self.genes()[None, :], params)[0])

    def specs(self) -> list[AnchorSpec]:
        return cartesian_config(self.scales, self.aspects)


@dataclass(frozen=True)
class EAParams:
    gene_min: float = GENE_MIN
    gene_max: float = GENE_MAX
    gene_precision: float = 1e-3
    crossover_prob: float = 0.8
    mutation_prob: float = 0.2
    mutation_mode: str = "mixed"
    reset_share: float = 0.5
    creep_sigma: float = 0.1
    population: int = 100
    generations: int = 50
    tournament_size: int = 3
    elitism: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.gene_min < self.gene_max:
            raise ValueError("gene bounds must satisfy 0 < min < max")
        if self.gene_precision <= 0:
            raise ValueError("gene precision must be positive")
        for name in ("crossover_prob", "mutation_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.mutation_mode not in MUTATION_MODES:
            raise ValueError(f"mutation_mode must be one of {MUTATION_MODES}")
        if not 0.0 <= self.reset_share <= 1.0:
            raise ValueError("reset_share must be in [0, 1]")
        if self.creep_sigma < 0:
            raise ValueError("creep_sigma must be non-negative")
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.tournament_size < 1:
            raise ValueError("tournament size must be at least 1")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be in [0, population)")


@dataclass
class RegionCoverage:
    index: int
    bounds: tuple[float, float]
    count: int
    mean_max_iou: float | None
    covered_fraction: float | None
    fitness: float | None
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "bounds": list(self.bounds),
            "count": self.count,
            "mean_max_iou": self.mean_max_iou,
            "covered_fraction": self.covered_fraction,
            "fitness": self.fitness,
            "fallback": self.fallback,
        }


@dataclass
class CoverageReport:
    """How well per-region anchors fit the ground truths.

    ``mean_max_iou`` and ``fitness`` are weighted by box count;
    ``region_average_iou`` is the plain average over non-empty regions.
    ``history`` holds, per region, one entry per generation plus the
    initial population when the report comes from :func:`evolve`.
    """

    regions: list[RegionCoverage]
    mean_max_iou: float
    covered_fraction: float
    fitness: float
    region_average_iou: float
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "regions": [r.to_dict() for r in self.regions],
            "mean_max_iou": self.mean_max_iou,
            "covered_fraction": self.covered_fraction,
            "fitness": self.fitness,
            "region_average_iou": self.region_average_iou,
            "history": self.history,
        }


def as_wh(gts) -> np.ndarray:
    """Accept boxes or an ``(K, 2)`` size array and return sizes."""
    if isinstance(gts, np.ndarray):
        return np.asarray(gts, dtype=float).reshape(-1, 2)
    gts = list(gts)
    if gts and isinstance(gts[0], BoundingBox):
        return boxes_to_wh(gts)
    return np.asarray(gts, dtype=float).reshape(-1, 2)


def fitness_from_max_iou(max_iou: np.ndarray) -> float:
    m = np.clip(np.asarray(max_iou, dtype=float), IOU_FLOOR, 1.0)
    return float(np.mean(-((1.0 - m) ** 2) * np.log(m)))


def fitness(x: AnchorChromosome, gts) -> float:
    """Log-weighted anchor mismatch; 0 when every box matches an anchor exactly."""
    wh = as_wh(gts)
    if len(wh) == 0:
        raise ValueError("fitness needs at least one ground truth")
    return fitness_from_max_iou(max_iou_many(wh, x.specs()))


def genes_to_sizes(genes: np.ndarray) -> np.ndarray:
    """``(P, 7)`` genes to ``(P, 12, 2)`` anchor sizes (aspect-major order)."""
    a = genes[:, None, :N_ASPECTS, None]
    s = genes[:, None, None, N_ASPECTS:]
    root = np.sqrt(a)
    w = (ANCHOR_BASE * s * root).reshape(len(genes), -1)
    h = (ANCHOR_BASE * s / root).reshape(len(genes), -1)
    return np.stack([w, h], axis=-1)


def population_max_iou(genes: np.ndarray, wh: np.ndarray, chunk: int = 20000) -> np.ndarray:
    """``(P, K)`` best centered IoU of every gt under every chromosome."""
    anchors = genes_to_sizes(genes)
    out = np.empty((len(genes), len(wh)))
    for start in range(0, len(wh), chunk):
        part = wh[start:start + chunk]
        out[:, start:start + chunk] = centered_iou(part[None, :, :], anchors).max(axis=-1)
    return out


def population_fitness(genes: np.ndarray, wh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fitness and mean max-IoU for each row of ``genes``."""
    m = population_max_iou(genes, wh)
    clipped = np.clip(m, IOU_FLOOR, 1.0)
    fit = np.mean(-((1.0 - clipped) ** 2) * np.log(clipped), axis=1)
    return fit, m.mean(axis=1)


def canonicalize(genes: np.ndarray, params: EAParams) -> np.ndarray:
    """Clamp to bounds, snap to the gene grid and sort each sub-chromosome."""
    g = np.clip(genes, params.gene_min, params.gene_max)
    g = np.round(g / params.gene_precision) * params.gene_precision
    g = np.clip(g, params.gene_min, params.gene_max)
    # Remove float noise from the grid snap so values serialize cleanly.
    decimals = max(0, -int(math.floor(math.log10(params.gene_precision))))
    g = np.round(g, decimals)
    g[:, :N_ASPECTS] = np.sort(g[:, :N_ASPECTS], axis=1)
    g[:, N_ASPECTS:] = np.sort(g[:, N_ASPECTS:], axis=1)
    return g


def _tournament(fit: np.ndarray, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    contenders = rng.integers(0, len(fit), size=(n, size))
    winners = np.argmin(fit[contenders], axis=1)
    return contenders[np.arange(n), winners]


def _crossover(children: np.ndarray, params: EAParams, rng: np.random.Generator) -> None:
    """In-place single-point crossover of consecutive pairs, per sub-chromosome."""
    for i in range(0, len(children) - 1, 2):
        for lo, hi in ((0, N_ASPECTS), (N_ASPECTS, N_GENES)):
            if rng.random() < params.crossover_prob:
                cut = int(rng.integers(lo + 1, hi))
                tail = children[i, cut:hi].copy()
                children[i, cut:hi] = children[i + 1, cut:hi]
                children[i + 1, cut:hi] = tail


def _mutate(children: np.ndarray, params: EAParams, rng: np.random.Generator) -> None:
    """In-place per-gene mutation.

    Each gene mutates with ``mutation_prob``. A mutated gene is either reset
    uniformly within the bounds or crept by a log-normal factor of log-sd
    ``creep_sigma``; ``mutation_mode`` picks one kind or mixes them, a
    mixed mutation resetting with probability ``reset_share``.
    """
    mask = rng.random(children.shape) < params.mutation_prob
    fresh = rng.uniform(params.gene_min, params.gene_max, size=children.shape)
    crept = children * np.exp(rng.normal(0.0, params.creep_sigma, size=children.shape))
    if params.mutation_mode == "reset":
        new = fresh
    elif params.mutation_mode == "creep":
        new = crept
    else:
        new = np.where(rng.random(children.shape) < params.reset_share, fresh, crept)
    children[mask] = new[mask]


@dataclass
class RegionRun:
    best: AnchorChromosome
    best_fitness: float
    best_mean_iou: float
    fitness_history: list[float]
    iou_history: list[float]


def evolve_region(wh: np.ndarray, params: EAParams, rng: np.random.Generator) -> RegionRun:
    """Run the generational loop on one set of ground-truth sizes."""
    params.validate()
    pop = canonicalize(
        rng.uniform(params.gene_min, params.gene_max, size=(params.population, N_GENES)), params
    )
    fit, mean_iou = population_fitness(pop, wh)
    best = int(np.argmin(fit))
    fit_hist = [float(fit[best])]
    iou_hist = [float(mean_iou[best])]
    for _ in range(params.generations):
        order = np.argsort(fit, kind="stable")
        elites = pop[order[: params.elitism]].copy()
        elite_fit = fit[order[: params.elitism]]
        elite_iou = mean_iou[order[: params.elitism]]

        children = pop[_tournament(fit, params.population, params.tournament_size, rng)].copy()
        _crossover(children, params, rng)
        _mutate(children, params, rng)
        children = canonicalize(children, params)
        child_fit, child_iou = population_fitness(children, wh)

        if params.elitism:
            worst = np.argsort(child_fit, kind="stable")[::-1][: params.elitism]
            children[worst] = elites
            child_fit[worst] = elite_fit
            child_iou[worst] = elite_iou
        pop, fit, mean_iou = children, child_fit, child_iou
        best = int(np.argmin(fit))
        fit_hist.append(float(fit[best]))
        iou_hist.append(float(mean_iou[best]))
    return RegionRun(
        best=AnchorChromosome.from_genes(pop[best]),
        best_fitness=float(fit[best]),
        best_mean_iou=float(mean_iou[best]),
        fitness_history=fit_hist,
        iou_history=iou_hist,
    )


@dataclass
class EvolutionResult:
    chromosomes: list[AnchorChromosome]
    fallback: list[bool]
    report: CoverageReport

    def configs(self) -> list[list[AnchorSpec]]:
        return [c.specs() for c in self.chromosomes]


def _region_wh(gts_by_region: Mapping[int, object], n_regions: int) -> list[np.ndarray]:
    extra = set(gts_by_region) - set(range(n_regions))
    if extra:
        raise ValueError(f"ground truths given for unknown regions {sorted(extra)}")
    return [as_wh(gts_by_region.get(i, np.empty((0, 2)))) for i in range(n_regions)]


def evolve(
    gts_by_region: Mapping[int, object], partition: RegionPartition, params: EAParams
) -> EvolutionResult:
    """Optimize an independent chromosome for every region of ``partition``.

    Each region draws from its own child of the seed sequence, so results
    do not depend on region processing order. Regions without boxes keep
    the default configuration and are flagged as fallbacks.
    """
    params.validate()
    groups = _region_wh(gts_by_region, partition.n_regions)
    streams = np.random.SeedSequence(params.seed).spawn(partition.n_regions)
    chromosomes, fallback, history = [], [], []
    for i, wh in enumerate(groups):
        if len(wh) == 0:
            chromosomes.append(AnchorChromosome.default())
            fallback.append(True)
            history.append({"region": i, "fitness": [], "mean_max_iou": []})
            continue
        run = evolve_region(wh, params, np.random.default_rng(streams[i]))
        chromosomes.append(run.best)
        fallback.append(False)
        history.append({"region": i, "fitness": run.fitness_history, "mean_max_iou": run.iou_history})
    report = coverage_from_groups([c.specs() for c in chromosomes], groups, partition, fallback)
    report.history = history
    return EvolutionResult(chromosomes, fallback, report)


def split_by_region(
    records: Sequence[AnnotationRecord], partition: RegionPartition
) -> dict[int, np.ndarray]:
    """Group record box sizes by the region holding their vertical center."""
    buckets: dict[int, list[tuple[float, float]]] = {i: [] for i in range(partition.n_regions)}
    for r in records:
        y = derive_features(r).y_center_norm
        buckets[assign_region(partition, min(max(y, 0.0), 1.0))].append(
            (r.box.width(), r.box.height())
        )
    return {i: np.array(v, dtype=float).reshape(-1, 2) for i, v in buckets.items()}


def coverage_from_groups(
    configs: Sequence[Sequence[AnchorSpec]],
    groups: Sequence[np.ndarray],
    partition: RegionPartition,
    fallback: Sequence[bool] | None = None,
) -> CoverageReport:
    if len(configs) != partition.n_regions:
        raise ValueError(
            f"partition has {partition.n_regions} regions but {len(configs)} configurations were given"
        )
    fallback = list(fallback) if fallback is not None else [False] * partition.n_regions
    regions = []
    all_iou = []
    for i, ((lo, hi), cfg, wh) in enumerate(zip(partition.intervals(), configs, groups)):
        if not cfg:
            raise ValueError(f"region {i} has an empty anchor configuration")
        if len(wh) == 0:
            regions.append(RegionCoverage(i, (lo, hi), 0, None, None, None, fallback[i]))
            continue
        m = max_iou_many(wh, cfg)
        all_iou.append(m)
        regions.append(RegionCoverage(
            index=i,
            bounds=(lo, hi),
            count=len(wh),
            mean_max_iou=float(m.mean()),
            covered_fraction=float(np.mean(m >= COVERED_IOU)),
            fitness=fitness_from_max_iou(m),
            fallback=fallback[i],
        ))
    if not all_iou:
        raise ValueError("no ground truths to evaluate")
    m = np.concatenate(all_iou)
    present = [r.mean_max_iou for r in regions if r.mean_max_iou is not None]
    return CoverageReport(
        regions=regions,
        mean_max_iou=float(m.mean()),
        covered_fraction=float(np.mean(m >= COVERED_IOU)),
        fitness=fitness_from_max_iou(m),
        region_average_iou=float(np.mean(present)),
    )


def evaluate_coverage(
    config: Sequence[Sequence[AnchorSpec]],
    gts: Sequence[AnnotationRecord],
    partition: RegionPartition,
) -> CoverageReport:
    """Audit per-region anchors against annotated boxes."""
    groups = split_by_region(gts, partition)
    return coverage_from_groups(config, [groups[i] for i in range(partition.n_regions)], partition)


def _iou_distance(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return 1.0 - centered_iou(points, centroids)


@dataclass
class KMeansAnchors:
    specs: list[AnchorSpec]
    report: CoverageReport
    degenerate: bool


def kmeans_anchor_baseline(gts, k: int = 12, seed: int = 0) -> KMeansAnchors:
    """YOLO-style anchors: K-means on box (width, height) with ``1 - IoU`` distance.

    When fewer than ``k`` distinct sizes exist, every distinct size becomes
    a centroid, the set is padded by repetition and flagged degenerate.
    """
    wh = as_wh(gts)
    if k < 1:
        raise ValueError("k must be positive")
    if len(wh) < k:
        raise ValueError(f"need at least {k} boxes, got {len(wh)}")
    if np.any(wh <= 0):
        raise ValueError("boxes must have positive width and height")
    distinct = np.unique(wh, axis=0)
    degenerate = len(distinct) < k
    if degenerate:
        centroids = np.array([distinct[i % len(distinct)] for i in range(k)])
    else:
        centroids = lloyd(wh, k, seed, distance=_iou_distance).centroids
    # Sort by area for a stable, readable order.
    centroids = centroids[np.lexsort((centroids[:, 0], centroids[:, 0] * centroids[:, 1]))]
    specs = [
        AnchorSpec(math.sqrt(w * h) / ANCHOR_BASE, w / h) for w, h in centroids
    ]
    report = coverage_from_groups([specs], [wh], RegionPartition())
    return KMeansAnchors(specs, report, degenerate)


def roi_spatial_features(
    box: BoundingBox, image_width: float, image_height: float
) -> tuple[float, float, float, float]:
    """Width, height and center of a box as fractions of the image size."""
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image size must be positive")
    cx, cy = box.center()
    return (
        box.width() / image_width,
        box.height() / image_height,
        cx / image_width,
        cy / image_height,
    )


def anchors_document(
    chromosomes: Sequence[AnchorChromosome],
    partition: RegionPartition,
    camera_group: str,
    seed: int,
    history: list,
) -> dict:
    """The ``anchors.json`` layout consumed by detectors and ``eval-coverage``."""
    return {
        "regions": [
            {"bounds": [lo, hi], "scales": list(c.scales), "aspects": list(c.aspects)}
            for (lo, hi), c in zip(partition.intervals(), chromosomes)
        ],
        "camera_group": camera_group,
        "seed": seed,
        "history": history,
    }


def configs_from_document(doc: Mapping) -> tuple[list[list[AnchorSpec]], RegionPartition]:
    """Rebuild per-region anchor sets and the implied partition from ``anchors.json``.

    Regions may list explicit ``anchors`` (``[[scale, aspect], ...]``)
    instead of ``scales`` and ``aspects``.
    """
    regions = doc.get("regions")
    if not regions:
        raise ValueError("anchor document has no regions")
    configs = []
    cuts = []
    for i, reg in enumerate(regions):
        if "anchors" in reg:
            configs.append([AnchorSpec(float(s), float(a)) for s, a in reg["anchors"]])
        else:
            configs.append(cartesian_config(reg["scales"], reg["aspects"]))
        if i:
            cuts.append(float(reg["bounds"][0]))
    return configs, RegionPartition(tuple(cuts))
