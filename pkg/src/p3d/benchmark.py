"""Throughput measurements: clips/second and a per-layer time breakdown.

Forward passes in inference mode are read-only over parameters, so the
multi-threaded configuration simply runs independent forwards on a
thread pool; numpy releases the GIL inside BLAS calls.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .network import NetworkGraph


@dataclass
class BenchResult:
    geometry: tuple
    threads: int
    iterations: int
    clips_per_sec: float
    run_seconds: list
    layer_seconds: list = field(default_factory=list)  # (name, median s)

    @property
    def total_seconds(self) -> float:
        return float(np.median(self.run_seconds))

    def table(self) -> str:
        lines = [f"geometry {self.geometry}  threads {self.threads}  "
                 f"iterations {self.iterations}",
                 f"throughput {self.clips_per_sec:.3f} clips/s "
                 f"(median forward {self.total_seconds * 1e3:.1f} ms)"]
        if self.layer_seconds:
            width = max(len(n) for n, _ in self.layer_seconds)
            lines.append("per-layer median:")
            for name, secs in self.layer_seconds:
                lines.append(f"  {name.ljust(width)}  {secs * 1e3:9.3f} ms")
            total = sum(s for _, s in self.layer_seconds)
            lines.append(f"  {'sum'.ljust(width)}  {total * 1e3:9.3f} ms")
        return "\n".join(lines) + "\n"


def _timed_forward(net: NetworkGraph, x, layer_times):
    out = x
    for layer in net.layers:
        t0 = time.perf_counter()
        out = layer.forward(out, train=False)
        layer_times.setdefault(layer.name, []).append(
            time.perf_counter() - t0)
    return out


def bench(net: NetworkGraph, geometry=None, iterations: int = 5,
          threads: int = 1, seed: int = 0) -> BenchResult:
    """Median throughput over `iterations` single-clip forward passes."""
    t, h, w = geometry if geometry is not None else net.arch.input_geometry
    x = rng.uniform((1, 3, int(t), int(h), int(w)), 0.0, 1.0, seed)
    net.forward(x, train=False)  # warm-up
    if threads <= 1:
        layer_times = {}
        runs = []
        for _ in range(iterations):
            t0 = time.perf_counter()
            _timed_forward(net, x, layer_times)
            runs.append(time.perf_counter() - t0)
        per_layer = [(name, float(np.median(times)))
                     for name, times in layer_times.items()]
        cps = 1.0 / float(np.median(runs))
        return BenchResult((int(t), int(h), int(w)), 1, iterations, cps,
                           runs, per_layer)
    inputs = [x.copy() for _ in range(threads)]
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(net.forward, inputs[i % threads], False)
                   for i in range(iterations)]
        for f in futures:
            f.result()
    wall = time.perf_counter() - t0
    return BenchResult((int(t), int(h), int(w)), threads, iterations,
                       iterations / wall, [wall])
