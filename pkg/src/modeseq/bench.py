"""Decoder latency measurements: recurrent versus parallel mode decoding."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .features import featurize, marginal_samples
from .network import ModeSeqNetwork
from .numcore import no_grad

BENCH_COLUMNS = ("variant", "K", "n_scenes", "median_ms", "p95_ms", "mean_ms", "recurrent_over_parallel")


@dataclass
class LatencyRow:
    variant: str
    k: int
    times_ms: np.ndarray  # one entry per scene

    @property
    def median(self) -> float:
        return float(np.median(self.times_ms))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.times_ms, 95))

    @property
    def mean(self) -> float:
        return float(np.mean(self.times_ms))


def benchmark_decoders(network: ModeSeqNetwork, scenes: Sequence, ks: Sequence[int],
                       variants: Sequence[str] = ("recurrent", "parallel"), warmup: int = 3,
                       single_threaded: bool = True) -> list[LatencyRow]:
    """Per-scene wall clock of ``decoder.decode`` for every (variant, K).

    The scene encoding is computed once up front and excluded from the timing.
    Variants and K values are interleaved per scene so slow drifts in machine
    load hit every cell alike.
    """
    samples = marginal_samples(scenes)
    max_k = network.cfg.max_modes
    bad = [k for k in ks if not 1 <= k <= max_k]
    if bad:
        raise ValueError(f"K values {bad} outside [1, {max_k}]")
    limits = threadpool_limits(limits=1) if single_threaded else None
    try:
        with no_grad():
            embs = [network.encode(featurize([s], with_gt=False)) for s in samples]
            dec = network.decoder
            for emb in embs[:warmup]:
                for k in ks:
                    for v in variants:
                        dec.decode(emb, k, v, network.cfg.rearrange)
            times = {(v, k): [] for v in variants for k in ks}
            for emb in embs:
                for k in ks:
                    for v in variants:
                        t0 = time.perf_counter_ns()
                        dec.decode(emb, k, v, network.cfg.rearrange)
                        times[(v, k)].append((time.perf_counter_ns() - t0) / 1e6)
    finally:
        if limits is not None:
            limits.unregister()
    return [LatencyRow(v, k, np.array(times[(v, k)])) for v in variants for k in ks]


def speed_ratios(rows: Sequence[LatencyRow]) -> dict[int, float]:
    """Median recurrent latency over median parallel latency, per K."""
    by = {(r.variant, r.k): r for r in rows}
    return {k: by[("recurrent", k)].median / by[("parallel", k)].median
            for (v, k) in by if v == "parallel" and ("recurrent", k) in by}


def bench_csv(rows: Sequence[LatencyRow]) -> str:
    ratios = speed_ratios(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        ratio = ratios.get(r.k)
        w.writerow([r.variant, r.k, len(r.times_ms), f"{r.median:.4f}", f"{r.p95:.4f}", f"{r.mean:.4f}",
                    "" if ratio is None else f"{ratio:.3f}"])
    return buf.getvalue()
