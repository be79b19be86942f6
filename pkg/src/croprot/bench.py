"""Throughput of the preprocessing stages on synthetic parcels.

Run as ``python -m croprot.bench [n_parcels]``. Timings are informative;
the only hard check is a >1.5x parallel speedup on machines with at least
four cores, plus byte-identical caches for every worker count.
"""
from __future__ import annotations

import resource
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cli import default_workers
from .features import features_all, save_feature_cache
from .prep import prep_all, save_smooth_cache
from .synth import SynthConfig, generate

MIN_CORES_FOR_SPEEDUP = 4
MIN_SPEEDUP = 1.5


@dataclass
class StageTiming:
    workers: int
    prep_s: float
    features_s: float
    n_series: int

    @property
    def total_s(self) -> float:
        return self.prep_s + self.features_s

    @property
    def parcels_per_s(self) -> float:
        return self.n_series / self.total_s if self.total_s > 0 else float("inf")


@dataclass
class BenchReport:
    n_parcels: int
    n_series: int
    generate_s: float
    runs: list[StageTiming] = field(default_factory=list)
    identical_caches: bool = True
    peak_rss_mb: float = 0.0
    cores: int = 1

    @property
    def speedup(self) -> float:
        base, best = self.runs[0], self.runs[-1]
        return base.total_s / best.total_s if best.total_s > 0 else float("inf")

    def to_text(self) -> str:
        lines = [f"parcels\t{self.n_parcels}", f"parcel_seasons\t{self.n_series}", f"cores\t{self.cores}",
                 f"generate_s\t{self.generate_s:.2f}",
                 "workers\tprep_s\tfeatures_s\ttotal_s\tparcel_seasons_per_s"]
        for r in self.runs:
            lines.append(f"{r.workers}\t{r.prep_s:.2f}\t{r.features_s:.2f}\t{r.total_s:.2f}\t{r.parcels_per_s:.1f}")
        lines += [f"speedup\t{self.speedup:.2f}", f"identical_caches\t{self.identical_caches}",
                  f"peak_rss_mb\t{self.peak_rss_mb:.1f}"]
        return "\n".join(lines) + "\n"


def _peak_rss_mb() -> float:
    # ru_maxrss is in kilobytes on Linux
    own = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    kids = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss
    return max(own, kids) / 1024.0


def _cache_bytes(smooth, feats) -> tuple[bytes, bytes]:
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "s.rssm", Path(tmp) / "f.feat"
        save_smooth_cache(a, smooth.values())
        save_feature_cache(b, feats)
        return a.read_bytes(), b.read_bytes()


def bench_prep(n_parcels: int = 10_000, workers=None, seed: int = 0, enforce: bool = True) -> BenchReport:
    """Time prep + features at each worker count (default: 1 and all cores)."""
    cores = default_workers()
    workers = sorted(set(workers or (1, cores)))
    t0 = time.perf_counter()
    dataset = generate(SynthConfig(n_parcels=n_parcels, seed=seed))
    series = list(dataset.iter_series())
    report = BenchReport(n_parcels, len(series), time.perf_counter() - t0, cores=cores)
    reference = None
    for w in workers:
        t0 = time.perf_counter()
        smooth = prep_all(series, workers=w)
        t1 = time.perf_counter()
        feats = features_all(smooth, workers=w)
        t2 = time.perf_counter()
        report.runs.append(StageTiming(w, t1 - t0, t2 - t1, len(series)))
        blobs = _cache_bytes(smooth, feats)
        if reference is None:
            reference = blobs
        elif blobs != reference:
            report.identical_caches = False
    report.peak_rss_mb = _peak_rss_mb()
    if enforce and cores >= MIN_CORES_FOR_SPEEDUP and len(report.runs) > 1:
        assert report.speedup > MIN_SPEEDUP, f"parallel speedup {report.speedup:.2f} <= {MIN_SPEEDUP}"
    return report


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    n = int(argv[0]) if argv else 10_000
    sys.stdout.write(bench_prep(n).to_text())
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
