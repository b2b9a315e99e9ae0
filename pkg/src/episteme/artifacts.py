"""Run configuration, trace and results files, schema checks and SVG plots."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from .belief import entropy
from .core import NoiseModel
from .harness import CellResult, MissionKind, Reasoning, ScenarioSpec, TrialRecord, Tunables
from .world import Arena

SEED_ENV = "EPISTEME_SEED"
CSV_HEADER = ("mission", "n_robots", "n_goals", "reasoning", "trials", "successes", "success_rate",
              "ci_low", "ci_high", "mean_iters", "mean_duplicates")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    n_robots: tuple[int, ...]
    n_goals: tuple[int, ...] | None = None     # None pairs each n_robots with as many goals
    reasoning: tuple[str, ...] = ("zero", "first", "higher")
    missions: tuple[str, ...] | None = None    # None uses the config's mission


@dataclass(frozen=True)
class RunConfig:
    mission: str
    n_robots: int
    n_goals: int
    arena: tuple[float, float, float, float] = (0.0, 0.0, 30.0, 30.0)
    max_iters: int = 150
    v_max: float = 1.0
    convergence_radius: float = 1.5
    noise: NoiseModel = field(default_factory=NoiseModel)
    modality_mix: str = "uniform"
    reasoning: str = "higher"
    order: int | None = None
    seed: int = 0
    dt: float = 1.0
    trials: int = 50
    grid: Grid | None = None
    output_dir: str = "out"
    parallelism: int = 1
    scale: str = "full"
    tunables: Tunables = field(default_factory=Tunables)

    def spec(self, **overrides: Any) -> ScenarioSpec:
        base = dict(mission=MissionKind(self.mission), n_robots=self.n_robots, n_goals=self.n_goals,
                    arena=Arena(*self.arena), max_iters=self.max_iters, v_max=self.v_max,
                    convergence_radius=self.convergence_radius, noise=self.noise, modality_mix=self.modality_mix,
                    reasoning=Reasoning(self.reasoning), seed=self.seed, max_order=self.order, dt=self.dt,
                    tunables=self.tunables)
        base.update(overrides)
        if base["mission"] is MissionKind.MULTI_TASK and self.scale == "smoke":
            base["n_goals"] = scale_tasks(base["n_goals"])
        return ScenarioSpec(**base)

    def campaign_specs(self) -> list[ScenarioSpec]:
        grid = self.grid or Grid((self.n_robots,), (self.n_goals,), (self.reasoning,))
        missions = grid.missions or (self.mission,)
        goals = grid.n_goals
        specs = []
        for m in missions:
            for k, n in enumerate(grid.n_robots):
                n_goals = n if goals is None else goals[k if len(goals) == len(grid.n_robots) else 0]
                for r in grid.reasoning:
                    specs.append(self.spec(mission=MissionKind(m), n_robots=n, n_goals=n_goals,
                                           reasoning=Reasoning(r), max_order=None))
        return specs


def scale_tasks(n_tasks: int) -> int:
    """Desk-scale task count: full-size counts are squeezed into 8..12."""
    return min(max(n_tasks, 8), 12)


_REQUIRED = ("mission", "n_robots", "n_goals")
_NESTED = {"noise": NoiseModel, "tunables": Tunables, "grid": Grid}
_CHOICES = {"mission": [m.value for m in MissionKind], "reasoning": [r.value for r in Reasoning],
            "scale": ["full", "smoke"]}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"field {name!r} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field {name!r} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field {name!r} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"field {name!r} must be a string")
        return value
    return value


def _build(cls, data: Any, where: str):
    label = where or "config"
    if not isinstance(data, dict):
        raise ConfigError(f"{label} must be a JSON object")
    prefix = where + "." if where else ""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key '{prefix}{unknown[0]}'")
    kwargs = {}
    for name, f in known.items():
        if name in data:
            value = data[name]
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"missing required field '{prefix}{name}'")
        else:
            continue
        if cls is RunConfig and name in _NESTED:
            kwargs[name] = None if value is None and name == "grid" else _build(_NESTED[name], value, prefix + name)
        elif f.default is MISSING or f.default is None or isinstance(f.default, tuple):
            kwargs[name] = value
        else:
            kwargs[name] = _coerce(prefix + name, value, f.default)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def config_from_dict(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for name in _REQUIRED:
        if name not in data:
            raise ConfigError(f"missing required field {name!r}")
    for name, options in _CHOICES.items():
        if name in data and data[name] not in options:
            raise ConfigError(f"field {name!r} must be one of {options}, got {data[name]!r}")
    for name in ("n_robots", "n_goals"):
        if isinstance(data[name], bool) or not isinstance(data[name], int):
            raise ConfigError(f"field {name!r} must be an integer")
    cfg = _build(RunConfig, data, "")
    try:
        if cfg.grid is not None:
            grid = cfg.grid
            if not grid.n_robots or not all(isinstance(n, int) and n >= 1 for n in grid.n_robots):
                raise ConfigError("grid.n_robots must be a nonempty list of positive integers")
            bad = [r for r in grid.reasoning if r not in _CHOICES["reasoning"]]
            if bad:
                raise ConfigError(f"grid.reasoning has unknown level {bad[0]!r}")
            if grid.missions is not None and any(m not in _CHOICES["mission"] for m in grid.missions):
                raise ConfigError("grid.missions has an unknown mission")
            cfg = _replace(cfg, grid=Grid(tuple(grid.n_robots), None if grid.n_goals is None else tuple(grid.n_goals),
                                          tuple(grid.reasoning), None if grid.missions is None else tuple(grid.missions)))
        if not (isinstance(cfg.arena, (list, tuple)) and len(cfg.arena) == 4):
            raise ConfigError("field 'arena' must be [xmin, ymin, xmax, ymax]")
        cfg = _replace(cfg, arena=tuple(float(v) for v in cfg.arena))
        if cfg.order is not None and cfg.order not in (0, 1, 2, 3):
            raise ConfigError("field 'order' must be 0..3 or null")
        if cfg.trials < 1:
            raise ConfigError("field 'trials' must be >= 1")
        if cfg.parallelism < 1:
            raise ConfigError("field 'parallelism' must be >= 1")
        cfg.spec()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _replace(cfg: RunConfig, **kw: Any) -> RunConfig:
    return replace(cfg, **kw)


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)
    out["arena"] = list(cfg.arena)
    if cfg.grid is not None:
        out["grid"] = {k: (list(v) if v is not None else None) for k, v in out["grid"].items()}
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data)


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def seed_from_env(cfg: RunConfig, environ: dict | None = None) -> RunConfig:
    env = os.environ if environ is None else environ
    raw = env.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return _replace(cfg, seed=seed)


# ---------------------------------------------------------------------------
# Traces and results
# ---------------------------------------------------------------------------

def sig9(x: float) -> float:
    return float(f"{x:.9g}")


def _round(obj: Any) -> Any:
    if isinstance(obj, float):
        return sig9(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _dumps(obj: Any) -> str:
    return json.dumps(_round(obj), separators=(",", ":"), allow_nan=False)


def trajectory_lines(record: TrialRecord, robot: int = 0) -> list[str]:
    """One JSON object per step; posterior and selection are those of ``robot``."""
    if not record.steps:
        raise ValueError("record has no step snapshots; run the trial with record=True")
    lines = []
    for s in record.steps:
        post = s.posteriors[robot]
        lines.append(_dumps({
            "t": s.t,
            "robots": [{"id": i, "x": p[0], "y": p[1], "heading": h}
                       for i, (p, h) in enumerate(zip(s.positions, s.headings))],
            "posterior": post,
            "entropy": float(entropy(post)),
            "selected_config": s.preferred[robot],
        }))
    return lines


def belief_trace_lines(record: TrialRecord) -> list[str]:
    lines = []
    for s in record.steps:
        robots = []
        for i in range(len(s.positions)):
            robots.append({
                "id": i,
                "modality": record.modalities[i].value if record.modalities else None,
                "goals": s.subsets[i],
                "posterior": s.posteriors[i],
                "entropy": s.entropies[i],
                "selected_config": s.preferred[i],
                "evidence": {str(k): v for k, v in sorted(s.evidence[i].items())},
            })
        lines.append(_dumps({"t": s.t, "robots": robots}))
    return lines


def _write_lines(path: str | os.PathLike, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def export_trajectory(record: TrialRecord, path: str | os.PathLike, robot: int = 0) -> None:
    _write_lines(path, trajectory_lines(record, robot))


def export_belief_trace(record: TrialRecord, path: str | os.PathLike) -> None:
    _write_lines(path, belief_trace_lines(record))


def results_csv(cells: Sequence[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in cells:
        s = c.spec
        w.writerow([s.mission.value, s.n_robots, s.n_goals, s.reasoning.value, c.trials, c.successes,
                    repr(sig9(c.success_rate)), repr(sig9(c.ci_low)), repr(sig9(c.ci_high)),
                    repr(sig9(c.mean_iters)), repr(sig9(c.mean_duplicates))])
    return buf.getvalue()


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{n}: {exc.msg}") from None
    return out


# ---------------------------------------------------------------------------
# Schema checks
# ---------------------------------------------------------------------------

def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_trajectory(records: Sequence[dict]) -> list[str]:
    errors = []
    if not records:
        return ["trajectory is empty"]
    for n, r in enumerate(records, 1):
        where = f"line {n}"
        if set(r) != {"t", "robots", "posterior", "entropy", "selected_config"}:
            errors.append(f"{where}: keys {sorted(r)} do not match the trajectory schema")
            continue
        if r["t"] != n - 1:
            errors.append(f"{where}: t={r['t']} out of sequence")
        for rb in r["robots"]:
            if set(rb) != {"id", "x", "y", "heading"} or not all(_is_num(rb[k]) for k in ("x", "y", "heading")):
                errors.append(f"{where}: malformed robot entry")
                break
        post = r["posterior"]
        if not post or not all(_is_num(p) and p >= 0 for p in post) or abs(sum(post) - 1.0) > 1e-6:
            errors.append(f"{where}: posterior is not a distribution")
        elif not _is_num(r["entropy"]) or abs(r["entropy"] - entropy(post)) > 1e-6:
            errors.append(f"{where}: entropy does not match the posterior")
        if not isinstance(r["selected_config"], int) or not 0 <= r["selected_config"] < max(len(post), 1):
            errors.append(f"{where}: selected_config out of range")
    return errors


def validate_belief_trace(records: Sequence[dict]) -> list[str]:
    errors = []
    for n, r in enumerate(records, 1):
        if set(r) != {"t", "robots"}:
            errors.append(f"line {n}: keys {sorted(r)} do not match the belief-trace schema")
            continue
        for rb in r["robots"]:
            post = rb.get("posterior", [])
            if abs(sum(post) - 1.0) > 1e-6 or any(p < 0 for p in post):
                errors.append(f"line {n}: robot {rb.get('id')} posterior is not a distribution")
            if not isinstance(rb.get("evidence"), dict):
                errors.append(f"line {n}: robot {rb.get('id')} lacks evidence summaries")
    return errors


def validate_results_csv(text: str) -> list[str]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        return ["header does not match " + ",".join(CSV_HEADER)]
    errors = []
    for n, row in enumerate(rows[1:], 2):
        if len(row) != len(CSV_HEADER):
            errors.append(f"line {n}: expected {len(CSV_HEADER)} columns")
            continue
        try:
            trials, wins = int(row[4]), int(row[5])
            rate, lo, hi = float(row[6]), float(row[7]), float(row[8])
        except ValueError:
            errors.append(f"line {n}: non-numeric field")
            continue
        if not 0 <= wins <= trials or trials < 1:
            errors.append(f"line {n}: successes out of range")
        if not lo - 1e-9 <= rate <= hi + 1e-9:
            errors.append(f"line {n}: success_rate outside its interval")
    return errors


def validate_file(path: str | os.PathLike) -> list[str]:
    """Check a config (.json), trace (.jsonl) or results (.csv) file."""
    p = Path(path)
    if p.suffix == ".json":
        try:
            load_config(p)
        except ConfigError as exc:
            return [str(exc)]
        return []
    if p.suffix == ".jsonl":
        try:
            records = read_jsonl(p)
        except ConfigError as exc:
            return [str(exc)]
        if records and set(records[0]) == {"t", "robots"}:
            return validate_belief_trace(records)
        return validate_trajectory(records)
    if p.suffix == ".csv":
        return validate_results_csv(p.read_text(encoding="utf-8"))
    return [f"unsupported file type {p.suffix!r}"]


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _f(x: float) -> str:
    return f"{x:.2f}"


def paths_svg(trajectory: Sequence[dict], goals: Sequence[tuple[float, float]], arena: Arena = Arena(),
              size: int = 480, radius: float = 1.5) -> str:
    pad = 20
    scale = (size - 2 * pad) / max(arena.xmax - arena.xmin, arena.ymax - arena.ymin)

    def xy(x: float, y: float) -> tuple[str, str]:
        return _f(pad + (x - arena.xmin) * scale), _f(size - pad - (y - arena.ymin) * scale)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect x="{pad}" y="{pad}" width="{_f(size - 2 * pad)}" height="{_f(size - 2 * pad)}" '
             'fill="white" stroke="black"/>']
    for j, (gx, gy) in enumerate(goals):
        cx, cy = xy(gx, gy)
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="{_f(radius * scale)}" fill="none" stroke="gray" '
                     'stroke-dasharray="3,2"/>')
        parts.append(f'<text x="{cx}" y="{cy}" font-size="10" text-anchor="middle">G{j}</text>')
    n = len(trajectory[0]["robots"]) if trajectory else 0
    for i in range(n):
        pts = " ".join(",".join(xy(s["robots"][i]["x"], s["robots"][i]["y"])) for s in trajectory)
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        x0, y0 = xy(trajectory[0]["robots"][i]["x"], trajectory[0]["robots"][i]["y"])
        parts.append(f'<rect x="{_f(float(x0) - 3)}" y="{_f(float(y0) - 3)}" width="6" height="6" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def grouped_bars_svg(cells: Sequence[CellResult], metric: str = "success_rate", title: str = "") -> str:
    """Bars grouped by robot count, one bar per reasoning level, Wilson whiskers for success rate."""
    groups: dict[int, dict[str, CellResult]] = {}
    for c in cells:
        groups.setdefault(c.spec.n_robots, {})[c.spec.reasoning.value] = c
    levels = [r.value for r in Reasoning if any(r.value in g for g in groups.values())]
    values = {(n, lv): getattr(c, metric) for n, g in groups.items() for lv, c in g.items()}
    top = max([1.0 if metric == "success_rate" else 0.0] + list(values.values())) or 1.0
    w, h, pad = 120 * max(1, len(groups)) + 80, 300, 40
    plot_h = h - 2 * pad
    bar = 80 / max(1, len(levels))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
             f'<text x="{w / 2:.1f}" y="16" font-size="12" text-anchor="middle">{title or metric}</text>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - 10}" y2="{h - pad}" stroke="black"/>']
    for gi, n in enumerate(sorted(groups)):
        x0 = pad + 10 + gi * 120
        parts.append(f'<text x="{x0 + 40}" y="{h - pad + 14}" font-size="10" text-anchor="middle">n={n}</text>')
        for li, lv in enumerate(levels):
            if (n, lv) not in values:
                continue
            v = values[(n, lv)]
            bh = plot_h * v / top
            x = x0 + li * bar
            parts.append(f'<rect x="{_f(x)}" y="{_f(h - pad - bh)}" width="{_f(bar - 2)}" height="{_f(bh)}" '
                         f'fill="{PALETTE[li % len(PALETTE)]}"><title>{lv}: {sig9(v)}</title></rect>')
            if metric == "success_rate":
                c = groups[n][lv]
                y_lo, y_hi = h - pad - plot_h * c.ci_low / top, h - pad - plot_h * c.ci_high / top
                cx = x + (bar - 2) / 2
                parts.append(f'<line x1="{_f(cx)}" y1="{_f(y_lo)}" x2="{_f(cx)}" y2="{_f(y_hi)}" stroke="black"/>')
    for li, lv in enumerate(levels):
        parts.append(f'<rect x="{w - 90}" y="{24 + 14 * li}" width="10" height="10" '
                     f'fill="{PALETTE[li % len(PALETTE)]}"/>')
        parts.append(f'<text x="{w - 76}" y="{33 + 14 * li}" font-size="10">{lv}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
