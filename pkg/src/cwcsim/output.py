"""CSV and metadata writers.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back with ``float`` recovers every value exactly.
"""

from __future__ import annotations

import csv
import json
import platform

from . import __version__


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _writer(stream):
    return csv.writer(stream, lineterminator="\n")


def write_trajectory(stream, traj) -> None:
    w = _writer(stream)
    w.writerow(["time", *traj.names])
    for t, row in zip(traj.times, traj.rows):
        w.writerow([_num(t), *(_num(v) for v in row)])


def write_summary(stream, stats) -> None:
    w = _writer(stream)
    w.writerow(["time", "observable", "n", "mean", "std", "min", "max"])
    for t, name, n, mean, std, lo, hi in stats.rows():
        w.writerow([_num(t), name, n, _num(mean), _num(std), _num(lo), _num(hi)])


def write_terminal(stream, metrics) -> None:
    w = _writer(stream)
    w.writerow(["replica", "observable", "final", "first_crossing_time"])
    for rep in metrics.replicas:
        for name, value in rep.final.items():
            w.writerow([rep.index, name, _num(value), _num(rep.first_crossing.get(name))])


def read_trajectory(stream) -> tuple[list[str], list[list[float]]]:
    rows = list(csv.reader(stream))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def metadata(model, config, *, overrides=None, generator=None, engine=None, **extra) -> dict:
    meta = {
        "model": model.name,
        "parameter_overrides": dict(overrides or {}),
        "parameters": dict(model.params),
        "t_end": config.t_end,
        "dt": config.dt_sample,
        "base_seed": config.seed,
        "max_events": config.max_events,
        "generator": generator,
        "engine": engine,
        "code_version": __version__,
        "python": platform.python_version(),
    }
    meta.update(extra)
    return meta


def write_metadata(stream, meta: dict) -> None:
    json.dump(meta, stream, indent=2, sort_keys=False)
    stream.write("\n")
