"""Seeded desk-scale experiments behind the ``restoreib`` commands.

Every command is a pure function of its resolved config: it expands into
independent training jobs (one per sweep point and seed), runs them, merges
the results into a :class:`MetricsReport` in job order and evaluates its
shape checks on seed medians. Wall-clock time is kept out of the report so
that reruns are byte-identical; it goes to ``timings.csv`` instead.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import tensor as T
from .degrade import DegradationSpec, make_dataset
from .fitting import FitError, fit_double_exponential, fit_log_saturation, fit_single_exponential
from .info import boundary_check, mutual_info, proposed_terms, quantize_activations
from .metrics import psnr, to_gray
from .nn import (
    ConfigError,
    GeneratorConfig,
    build_generator,
    build_patchgan,
    load_checkpoint,
    save_checkpoint,
)
from .plot import Series, save_svg
from .train import LossTrace, TrainConfig, evaluate, pretrain_reconstruction, restore, to_net, train_gan

__all__ = [
    "COMMANDS",
    "COLUMNS",
    "TASK_PRESETS",
    "Check",
    "CommandResult",
    "MetricsReport",
    "Verdict",
    "apply_overrides",
    "parse_model",
    "parse_value",
    "resolve_config",
    "run_command",
    "run_jobs",
    "run_point",
    "n_saturated",
]

log = logging.getLogger("restoreib")

TASK_PRESETS = {
    "noise": {"kind": "noise", "sigma": 0.1},
    "rain": {"kind": "rain", "streak_count": 20, "length": 10.0, "intensity": 0.6, "angle_jitter": 10.0},
    "haze": {"kind": "haze", "beta": 1.5, "beta_jitter": 0.5, "depth_source": "ramp"},
    "rain_haze": {"kind": "rain_haze", "beta": 1.0, "beta_jitter": 0.5},
}

COLUMNS = ("task", "variant", "sweep", "value", "seed", "psnr", "ssim", "g_loss", "d_loss", "l1", "adv", "config")
METRICS = ("psnr", "ssim", "g_loss", "d_loss", "l1", "adv")

_COMMON = {
    "seed": 0,
    "seeds": 3,
    "threads": None,
    "data": {"count": 160, "size": 64, "seed": 0},
    "generator": {"base_channels": 16},
    "train": {"loss_kind": "l1_only", "epochs": 10, "samples_per_epoch": 128, "crop_size": 32},
}

DEFAULTS: dict[str, dict] = {
    "synth": {"task": "rain", "data": {"count": 160, "size": 64, "seed": 0}, "seed": 0},
    "sweep-depth": {
        **_COMMON,
        "tasks": ["noise", "rain", "haze"],
        "kinds": ["unet", "endecoder"],
        "depths": [1, 2, 3, 4, 5],
        "train": {**_COMMON["train"], "epochs": 16},
        "tol": 0.01,
    },
    "sweep-infoaccum": {
        **_COMMON,
        "task": "rain",
        "depth": 5,
        "layers": [0, 2, 4, 6, 8, 10],
        "train": {**_COMMON["train"], "epochs": 8},
    },
    "sweep-position": {
        **_COMMON,
        "task": "rain",
        "depth": 5,
        "layers": 4,
        "positions": [[], [1], [2], [3], [4], [5], [1, 2], [1, 2, 3]],
    },
    "reconstruct": {
        **_COMMON,
        "seeds": 1,
        "models": ["UNet-5", "UNet-5+SubPix", "UNet-5+InfoAccum-15", "UNet-5+InfoAccum-15+SubPix", "EnDecoder-5"],
        "target": "UNet-5+InfoAccum-15+SubPix",
        "min_psnr": 45.0,
        "train": {"epochs": 12, "samples_per_epoch": 128, "crop_size": 32, "lr": 1e-3},
    },
    "ablation": {
        **_COMMON,
        "task": "rain",
        "variants": [
            {"name": "baseline", "model": "UNet-5", "loss_kind": "jsgan"},
            {"name": "+LSGAN", "model": "UNet-5", "loss_kind": "lsgan"},
            {"name": "+InfoAccum-15", "model": "UNet-5+InfoAccum-15", "loss_kind": "lsgan"},
            {"name": "+SubPix", "model": "UNet-5+InfoAccum-15+SubPix", "loss_kind": "lsgan"},
        ],
        "train": {"epochs": 10, "samples_per_epoch": 128, "crop_size": 32},
        "depth_compare": {"models": ["UNet-5", "UNet-8"], "loss_kind": "lsgan", "size": 256, "count": 20,
                          "train": {"epochs": 2, "samples_per_epoch": 16, "crop_size": 256}},
        "tol": 0.01,
        "d_loss_max": 0.1,
    },
    "train": {
        **_COMMON,
        "seeds": 1,
        "task": "rain",
        "model": "UNet-5",
        "train": {"loss_kind": "lsgan", "epochs": 10, "samples_per_epoch": 128, "crop_size": 32},
        "mode": "restore",
    },
    "eval": {"net": None, "task": "rain", "data": {"count": 160, "size": 64, "seed": 0}, "seed": 0, "save_images": 4},
    "fit-loss": {
        **_COMMON,
        "trace": None,
        "column": "l1",
        "task": "rain",
        "model": "UNet-5",
        "train": {"loss_kind": "l1_only", "epochs": 100, "samples_per_epoch": 32, "crop_size": 32, "lr": 1e-3},
        "min_delta_r2": 0.05,
    },
    "info-analysis": {
        "net": None,
        "model": "UNet-5",
        "task": "noise",
        "data": {"count": 160, "size": 64, "seed": 0},
        "bins": 4,
        "grid": 4,
        "seed": 0,
        "tol": 1e-12,
    },
}

COMMANDS = tuple(DEFAULTS)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def parse_value(text: str):
    """Command-line override value: JSON, an ``a..b`` integer range, a comma list or a string."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        pass
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            pass
    if "," in text:
        return [parse_value(t) for t in text.split(",") if t]
    return text


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(cfg: dict, overrides: dict[str, object]) -> dict:
    """Set dotted keys (``train.epochs``) on a copy of ``cfg``."""
    out = copy.deepcopy(cfg)
    for key, value in overrides.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return out


def resolve_config(command: str, file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then overrides; unknown top-level keys are rejected."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    defaults = DEFAULTS[command]
    cfg = _deep_merge(defaults, file_cfg or {})
    cfg = apply_overrides(cfg, overrides or {})
    unknown = sorted(set(cfg) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config field(s) for {command}: {', '.join(unknown)}")
    if "train" in cfg:
        TrainConfig.from_dict(cfg["train"])  # validate early, by field name
    return cfg


def resolve_task(task) -> tuple[str, dict]:
    """A task is a preset name, an inline spec dict or a path to a JSON spec file."""
    if isinstance(task, dict):
        spec = DegradationSpec.from_dict(task)
        return spec.kind, spec.to_dict()
    if isinstance(task, str) and task in TASK_PRESETS:
        return task, DegradationSpec.from_dict(TASK_PRESETS[task]).to_dict()
    path = Path(str(task))
    if path.is_file():
        d = json.loads(path.read_text())
        d = d.get("spec", d)  # accept a dataset's spec.json too
        return path.stem, DegradationSpec.from_dict(d).to_dict()
    raise ConfigError(f"unknown task {task!r}: use one of {sorted(TASK_PRESETS)}, an inline spec or a JSON file")


def parse_model(label: str, base: dict | None = None) -> GeneratorConfig:
    """Parse labels such as ``UNet-5+InfoAccum-15+SubPix`` or ``EnDecoder-3``.

    ``InfoAccum-L@1,2`` places the module before encoder levels 1 and 2.
    Other generator fields come from ``base``.
    """
    if isinstance(label, dict):
        return GeneratorConfig.from_dict({**(base or {}), **label})
    parts = [p.strip() for p in str(label).split("+")]
    head = parts[0].lower()
    kind, _, depth = head.partition("-")
    kinds = {"unet": "unet", "endecoder": "endecoder", "en/decoder": "endecoder"}
    if kind not in kinds or not depth.isdigit():
        raise ConfigError(f"cannot parse model {label!r}")
    d = {**(base or {}), "kind": kinds[kind], "depth": int(depth)}
    for p in parts[1:]:
        low = p.lower()
        if low == "subpix":
            d["subpix_head"] = True
        elif low.startswith("infoaccum-"):
            spec, _, where = low[len("infoaccum-"):].partition("@")
            positions = tuple(int(v) for v in where.split(",")) if where else (1,)
            d["infoaccum"] = {"layers": int(spec), "positions": list(positions)}
        else:
            raise ConfigError(f"unknown model component {p!r} in {label!r}")
    return GeneratorConfig.from_dict(d)


def _seeds(cfg: dict) -> list[int]:
    return [int(cfg["seed"]) + i for i in range(int(cfg["seeds"]))]


def _threads(cfg: dict) -> int:
    env = os.environ.get("RESTOREIB_THREADS")
    n = cfg.get("threads") or (int(env) if env else 1)
    if env:
        n = min(n, int(env))
    return max(1, int(n))


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# reports and verdicts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsReport:
    """Rows of sweep results with a fixed column schema."""

    def __init__(self, rows: list[dict] | None = None):
        self.rows: list[dict] = []
        for r in rows or []:
            self.add(**r)

    def add(self, **row) -> None:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown report columns {sorted(unknown)}")
        self.rows.append({c: row.get(c) for c in COLUMNS})

    def runs(self) -> list[dict]:
        return [r for r in self.rows if r["seed"] != "median"]

    def add_medians(self) -> None:
        """Append one median row per (task, variant, sweep, value) group, in first-seen order."""
        groups: dict[tuple, list[dict]] = {}
        for r in self.runs():
            groups.setdefault((r["task"], r["variant"], r["sweep"], r["value"]), []).append(r)
        for (task, variant, sweep, value), rows in groups.items():
            med = {m: float(np.median([r[m] for r in rows])) for m in METRICS if all(r[m] is not None for r in rows)}
            self.add(task=task, variant=variant, sweep=sweep, value=value, seed="median", **med)

    def select(self, seed="median", **where) -> list[dict]:
        out = [r for r in self.rows if (seed is None or r["seed"] == seed)]
        for k, v in where.items():
            out = [r for r in out if r[k] == v]
        return out

    def curve(self, metric: str, **where) -> tuple[list, list[float]]:
        rows = self.select(**where)
        return [r["value"] for r in rows], [r[metric] for r in rows]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "MetricsReport":
        text = Path(source).read_text() if not str(source).startswith("task,") else str(source)
        rep = cls()
        for raw in csv.DictReader(io.StringIO(text)):
            row = {}
            for c in COLUMNS:
                v = raw.get(c, "")
                if c in METRICS:
                    row[c] = float(v) if v != "" else None
                elif c in ("value", "seed"):
                    row[c] = int(v) if v.lstrip("-").isdigit() else (v or None)
                else:
                    row[c] = v or None
            rep.rows.append(row)
        return rep


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), **_jsonable(self.detail)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Verdict:
    command: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, **detail) -> Check:
        c = Check(name, bool(passed), detail)
        self.checks.append(c)
        return c

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "passed": self.passed,
                           "checks": [c.to_dict() for c in self.checks]}, indent=1, sort_keys=True) + "\n"


@dataclass
class CommandResult:
    command: str
    config: dict
    report: MetricsReport | None = None
    verdict: Verdict | None = None
    extras: dict = field(default_factory=dict)
    timings: list[tuple[str, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# jobs
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _dataset(spec_json: str, count: int, size: int, seed: int):
    return make_dataset(DegradationSpec.from_dict(json.loads(spec_json)), count, size, seed)


def dataset_for(spec: dict, data: dict):
    return _dataset(json.dumps(spec, sort_keys=True), int(data["count"]), int(data["size"]), int(data["seed"]))


def make_job(task: dict, data: dict, generator: GeneratorConfig, train: dict, seed: int, mode: str = "restore",
             disc_base: int | None = None, out: str | None = None, checkpoint: bool = False) -> dict:
    tcfg = TrainConfig.from_dict({**train, "seed": seed})
    job = {
        "task": task,
        "data": dict(data),
        "generator": generator.to_dict(),
        "train": tcfg.to_dict(),
        "seed": seed,
        "mode": mode,
        "out": out,
        "checkpoint": checkpoint,
    }
    if disc_base is not None:
        job["train"]["disc_base"] = disc_base
    return job


def run_point(job: dict) -> dict:
    """Train and evaluate one configuration; returns final metrics and the trace CSV."""
    t0 = time.perf_counter()
    ds = dataset_for(job["task"], job["data"])
    gcfg = GeneratorConfig.from_dict(job["generator"])
    tcfg = TrainConfig.from_dict(job["train"])
    gen = build_generator(gcfg, seed=job["seed"])
    if job["mode"] == "reconstruct":
        trace = pretrain_reconstruction(gen, [y for _, y in ds.train], tcfg, epochs=tcfg.epochs)
        metrics = evaluate(gen, [(y, y) for _, y in ds.test])
    else:
        disc = None
        if tcfg.loss_kind != "l1_only":
            disc = build_patchgan(gcfg.in_channels + gcfg.out_channels, tcfg.disc_base, seed=job["seed"])
        trace = train_gan(gen, disc, ds.train, tcfg)
        metrics = evaluate(gen, ds.test)
    last = trace[-1]
    result = {
        "psnr": metrics["psnr"],
        "ssim": metrics["ssim"],
        "g_loss": last.g_loss,
        "d_loss": last.d_loss,
        "l1": last.l1,
        "adv": last.adv,
        "trace": trace.to_csv(),
        "config": _hash({k: job[k] for k in ("task", "data", "generator", "train", "seed", "mode")}),
    }
    if job.get("out"):
        out = Path(job["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(result["trace"])
        (out / "job.json").write_text(json.dumps({k: v for k, v in job.items() if k != "out"}, indent=1, sort_keys=True) + "\n")
        if job.get("checkpoint"):
            save_checkpoint(gen, out / "generator", extra={"generator": job["generator"], "task": job["task"], "seed": job["seed"]})
    result["seconds"] = time.perf_counter() - t0
    return result


def run_jobs(jobs: list[dict], threads: int = 1) -> list[dict]:
    """Run jobs (optionally in worker processes); results come back in job order."""
    if threads <= 1 or len(jobs) <= 1:
        results = []
        for i, job in enumerate(jobs):
            results.append(run_point(job))
            log.info("job %d/%d %s seed=%s psnr=%.3f ssim=%.4f (%.0fs)", i + 1, len(jobs),
                     GeneratorConfig.from_dict(job["generator"]).label(), job["seed"],
                     results[-1]["psnr"], results[-1]["ssim"], results[-1]["seconds"])
        return results
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_point, jobs))


def _row(result: dict, **keys) -> dict:
    return {**keys, **{m: result[m] for m in METRICS}, "config": result["config"]}


def _job_dir(out, *parts) -> str | None:
    if out is None:
        return None
    return str(Path(out, "runs", *[str(p).replace("/", "_").replace("+", "_") for p in parts]))


# ---------------------------------------------------------------------------
# shape statistics
# ---------------------------------------------------------------------------


def n_saturated(values: list, scores: list[float], tol: float) -> int:
    """Smallest sweep value whose score is within ``tol`` of the best score."""
    best = max(scores)
    return min(v for v, s in zip(values, scores) if s >= best - tol)


def _nondecreasing_within(scores: list[float], tol: float) -> bool:
    return all(b >= a - tol for a, b in zip(scores, scores[1:]))


def _rises_then_flat(values: list, scores: list[float], tol: float) -> bool:
    """No step drops by more than ``tol`` and every point from saturation on stays within ``tol`` of the best."""
    n_sat = n_saturated(values, scores, tol)
    best = max(scores)
    tail = [s for v, s in zip(values, scores) if v >= n_sat]
    return _nondecreasing_within(scores, tol) and all(s >= best - tol for s in tail)


def _peaks_then_drops(scores: list[float], tol: float) -> tuple[bool, int, float]:
    k = int(np.argmax(scores))
    drop = scores[k] - scores[-1]
    return k < len(scores) - 1 and drop >= tol, k, drop


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    data = {**cfg["data"], "seed": cfg["data"].get("seed", cfg["seed"])}
    ds = dataset_for(spec, data)
    resid = [x - y for x, y in ds.pairs]
    stats = {
        "task": name,
        "count": ds.count,
        "size": ds.size,
        "train": len(ds.train),
        "test": len(ds.test),
        "input_psnr": float(np.mean([psnr(x, y) for x, y in ds.pairs])),
        "residual_rms": float(np.sqrt(np.mean([np.mean(r**2) for r in resid]))),
    }
    v = Verdict("synth")
    v.check("split_80_20", len(ds.train) == round(0.8 * ds.count), train=len(ds.train), test=len(ds.test))
    if out is not None:
        ds.save(Path(out) / "dataset")
        (Path(out) / "summary.json").write_text(json.dumps(_jsonable(stats), indent=1, sort_keys=True) + "\n")
    return CommandResult("synth", cfg, None, v, {"stats": stats, "dataset": ds})


def cmd_sweep_depth(cfg: dict, out=None) -> CommandResult:
    tol = float(cfg["tol"])
    depths = [int(d) for d in cfg["depths"]]
    tasks = [resolve_task(t) for t in cfg["tasks"]]
    jobs, keys = [], []
    for name, spec in tasks:
        for kind in cfg["kinds"]:
            for n in depths:
                g = GeneratorConfig.from_dict({**cfg["generator"], "kind": kind, "depth": n})
                for s in _seeds(cfg):
                    jobs.append(make_job(spec, cfg["data"], g, cfg["train"], s, out=_job_dir(out, name, kind, n, s)))
                    keys.append(dict(task=name, variant=kind, sweep="depth", value=n, seed=s))
    results = run_jobs(jobs, _threads(cfg))
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()

    v = Verdict("sweep-depth")
    nsat = {}
    series = []
    for name, _ in tasks:
        for kind in cfg["kinds"]:
            xs, ys = rep.curve("ssim", task=name, variant=kind)
            series.append(Series(f"{name} {kind}", xs, ys, style="line" if kind == "unet" else "dashed"))
            if kind == "unet":
                nsat[name] = n_saturated(xs, ys, tol)
                v.check(f"unet_flat_after_rise[{name}]", _rises_then_flat(xs, ys, tol), ssim=ys, n_saturated=nsat[name])
            elif kind == "endecoder":
                ok, k, drop = _peaks_then_drops(ys, tol)
                v.check(f"endecoder_peak_then_drop[{name}]", ok, ssim=ys, peak_depth=xs[k], drop=drop)
    ordered = [t for t in ("noise", "rain", "haze") if t in nsat]
    if len(ordered) > 1:
        vals = [nsat[t] for t in ordered]
        v.check("n_saturated_order", all(a <= b for a, b in zip(vals, vals[1:])), order=ordered, n_saturated=vals)
    extras = {"n_saturated": nsat, "svg": {"ssim_vs_depth.svg": (series, "SSIM vs down/up-sampling depth", "depth N", "SSIM")}}
    return CommandResult("sweep-depth", cfg, rep, v, extras, _timings(keys, results))


def _timings(keys, results):
    return [(",".join(str(k[c]) for c in ("task", "variant", "value", "seed")), r["seconds"]) for k, r in zip(keys, results)]


def cmd_sweep_infoaccum(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    layers = [int(x) for x in cfg["layers"]]
    jobs, keys = [], []
    for L in layers:
        g = GeneratorConfig.from_dict({**cfg["generator"], "depth": cfg["depth"], "infoaccum": {"layers": L}})
        for s in _seeds(cfg):
            jobs.append(make_job(spec, cfg["data"], g, cfg["train"], s, out=_job_dir(out, "L", L, s)))
            keys.append(dict(task=name, variant=f"UNet-{cfg['depth']}+InfoAccum", sweep="layers", value=L, seed=s))
    # plain baseline for the reduction check
    base = GeneratorConfig.from_dict({**cfg["generator"], "depth": cfg["depth"]})
    seed0 = _seeds(cfg)[0]
    jobs.append(make_job(spec, cfg["data"], base, cfg["train"], seed0, out=_job_dir(out, "baseline", seed0)))
    results = run_jobs(jobs, _threads(cfg))
    base_res = results.pop()
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()

    v = Verdict("sweep-infoaccum")
    xs, ys = rep.curve("ssim", sweep="layers")
    fit = fit_log_saturation(xs, ys)
    alpha = fit.params["alpha"]
    per_seed = {}
    for s in _seeds(cfg):
        sx, sy = rep.curve("ssim", seed=s, sweep="layers")
        per_seed[s] = fit_log_saturation(sx, sy).params["alpha"] if len(sx) > 1 else float("nan")
    v.check("log_saturation_slope_positive", alpha > 0, alpha=alpha, gamma=fit.params["gamma"], r2=fit.r2, alpha_per_seed=per_seed)
    v.check("row_count", len(rep.runs()) == len(layers) * len(_seeds(cfg)), rows=len(rep.runs()))
    if 0 in layers:
        l0 = rep.select(seed=seed0, value=0)[0]
        spread = [r["ssim"] for r in rep.select(seed=None, value=0) if r["seed"] != "median"]
        noise = max(spread) - min(spread)
        diff = abs(l0["ssim"] - base_res["ssim"])
        v.check("zero_layers_matches_baseline", diff <= noise, diff=diff, seed_spread=noise,
                bitwise=l0["psnr"] == base_res["psnr"] and l0["ssim"] == base_res["ssim"])
    grid = np.linspace(min(xs), max(xs), 50)
    series = [Series("median SSIM", xs, ys, style="scatter"),
              Series(f"fit a={alpha:.4f}", list(grid), list(fit.predict(grid)), style="dashed")]
    extras = {"fit": fit, "baseline": base_res, "svg": {"ssim_vs_layers.svg": (series, "InfoAccum layers", "layers L", "SSIM")}}
    return CommandResult("sweep-infoaccum", cfg, rep, v, extras, _timings(keys, results))


def _position_label(pos) -> str:
    return "{" + ",".join(map(str, pos)) + "}" if pos else "{}"


def cmd_sweep_position(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    positions = [tuple(sorted(int(p) for p in ps)) for ps in cfg["positions"]]
    depth = int(cfg["depth"])
    for ps in positions:
        bad = [p for p in ps if not 1 <= p <= depth]
        if bad:
            raise ConfigError(f"positions {bad} outside 1..{depth}")
    jobs, keys = [], []
    for idx, ps in enumerate(positions):
        ia = {"layers": cfg["layers"], "positions": list(ps)} if ps else None
        g = GeneratorConfig.from_dict({**cfg["generator"], "depth": depth, "infoaccum": ia})
        for s in _seeds(cfg):
            jobs.append(make_job(spec, cfg["data"], g, cfg["train"], s, out=_job_dir(out, "pos", idx, s)))
            keys.append(dict(task=name, variant=_position_label(ps), sweep="position", value=idx, seed=s))
    results = run_jobs(jobs, _threads(cfg))
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()

    v = Verdict("sweep-position")
    med = {r["variant"]: r["psnr"] for r in rep.select()}
    if () in positions:
        base = med["{}"]
        singles = {ps[0]: med[_position_label(ps)] - base for ps in positions if len(ps) == 1}
        if 1 in singles and len(singles) > 1:
            best = max(singles, key=lambda k: (singles[k], -k))
            v.check("position_1_largest_gain", all(singles[1] >= g for g in singles.values()),
                    gains={str(k): g for k, g in singles.items()}, best=best)
    series = [Series("median PSNR", list(range(len(positions))), [med[_position_label(p)] for p in positions], style="scatter")]
    extras = {"labels": [_position_label(p) for p in positions],
              "svg": {"psnr_vs_position.svg": (series, "InfoAccum positions (index into config list)", "position set", "PSNR (dB)")}}
    return CommandResult("sweep-position", cfg, rep, v, extras, _timings(keys, results))


def cmd_reconstruct(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg.get("task", "rain"))
    models = [parse_model(m, cfg["generator"]) for m in cfg["models"]]
    jobs, keys = [], []
    for g in models:
        for s in _seeds(cfg):
            jobs.append(make_job(spec, cfg["data"], g, cfg["train"], s, mode="reconstruct", out=_job_dir(out, g.label(), s)))
            keys.append(dict(task="reconstruction", variant=g.label(), sweep="model", value=None, seed=s))
    results = run_jobs(jobs, _threads(cfg))
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()

    v = Verdict("reconstruct")
    med = {r["variant"]: r["psnr"] for r in rep.select()}
    v.check("no_lossless_variant", all(math.isfinite(r["psnr"]) for r in rep.runs()), psnr=med)
    target = parse_model(cfg["target"], cfg["generator"]).label()
    if target in med:
        ranking = sorted(med, key=lambda k: -med[k])
        v.check("target_ranks_first", ranking[0] == target, target=target, ranking=ranking)
        v.check("target_min_psnr", med[target] >= float(cfg["min_psnr"]), target=target, psnr=med[target], threshold=cfg["min_psnr"])
    ends = [k for k in med if k.startswith("EnDecoder")]
    unets = [k for k in med if k.startswith("UNet")]
    if ends and unets:
        v.check("endecoder_lowest", max(med[k] for k in ends) < min(med[k] for k in unets), psnr=med)
    labels = [g.label() for g in models]
    series = [Series("median PSNR", list(range(len(labels))), [med[k] for k in labels], style="scatter")]
    extras = {"psnr": med, "svg": {"reconstruction_psnr.svg": (series, "Reconstruction PSNR by model", "model index", "PSNR (dB)")}}
    return CommandResult("reconstruct", cfg, rep, v, extras, _timings(keys, results))


def cmd_ablation(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    seeds = _seeds(cfg)
    jobs, keys = [], []
    for i, var in enumerate(cfg["variants"]):
        g = parse_model(var["model"], cfg["generator"])
        train = {**cfg["train"], "loss_kind": var["loss_kind"]}
        for s in seeds:
            jobs.append(make_job(spec, cfg["data"], g, train, s, out=_job_dir(out, var["name"], s)))
            keys.append(dict(task=name, variant=var["name"], sweep="ablation", value=i, seed=s))
    dc = cfg.get("depth_compare")
    if dc:
        data = {**cfg["data"], "size": dc["size"], "count": dc["count"]}
        train = {**cfg["train"], **dc["train"], "loss_kind": dc["loss_kind"]}
        for m in dc["models"]:
            g = parse_model(m, cfg["generator"])
            for s in seeds:
                jobs.append(make_job(spec, data, g, train, s, out=_job_dir(out, "depth", g.label(), s)))
                keys.append(dict(task=name, variant=g.label(), sweep="depth_compare", value=g.depth, seed=s))
    results = run_jobs(jobs, _threads(cfg))
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()

    v = Verdict("ablation")
    chain = rep.select(sweep="ablation")
    names = [r["variant"] for r in chain]
    ps = [r["psnr"] for r in chain]
    v.check("ablation_psnr_monotone", all(a <= b for a, b in zip(ps, ps[1:])), variants=names, psnr=ps)
    by_loss = {}
    for var, r in zip(cfg["variants"], chain):
        by_loss.setdefault((str(var["model"]), var["loss_kind"]), r)
    js = [r for (m, k), r in by_loss.items() if k == "jsgan"]
    ls = {m: r for (m, k), r in by_loss.items() if k == "lsgan"}
    for r in js:
        model = next(m for (m, k), rr in by_loss.items() if rr is r)
        v.check("jsgan_discriminator_collapse", r["d_loss"] < float(cfg["d_loss_max"]), variant=r["variant"], d_loss=r["d_loss"])
        if model in ls:
            v.check("lsgan_beats_jsgan", ls[model]["psnr"] > r["psnr"], lsgan=ls[model]["psnr"], jsgan=r["psnr"])
    if dc:
        cmp_rows = rep.select(sweep="depth_compare")
        ss = [r["ssim"] for r in cmp_rows]
        v.check("depth_reduction_no_drop", abs(ss[0] - ss[-1]) <= float(cfg["tol"]),
                variants=[r["variant"] for r in cmp_rows], ssim=ss, delta=ss[0] - ss[-1])
    series = [Series("median PSNR", list(range(len(ps))), ps, style="line")]
    extras = {"svg": {"ablation_psnr.svg": (series, "Ablation chain", "variant index", "PSNR (dB)")}}
    return CommandResult("ablation", cfg, rep, v, extras, _timings(keys, results))


def cmd_train(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    g = parse_model(cfg["model"], cfg["generator"])
    jobs, keys = [], []
    for s in _seeds(cfg):
        job = make_job(spec, cfg["data"], g, cfg["train"], s, mode=cfg["mode"], out=_job_dir(out, g.label(), s), checkpoint=out is not None)
        jobs.append(job)
        keys.append(dict(task=name, variant=g.label(), sweep=cfg["mode"], value=None, seed=s))
    results = run_jobs(jobs, _threads(cfg))
    rep = MetricsReport([_row(r, **k) for r, k in zip(results, keys)])
    rep.add_medians()
    v = Verdict("train")
    v.check("finite_metrics", all(math.isfinite(r["psnr"]) and math.isfinite(r["g_loss"]) for r in results))
    trace = LossTrace.from_csv(results[0]["trace"])
    epochs = [float(r.epoch) for r in trace]
    series = [Series("g_loss", epochs, list(trace.column("g_loss"))), Series("l1", epochs, list(trace.column("l1")))]
    if trace.column("d_loss").any():
        series.append(Series("d_loss", epochs, list(trace.column("d_loss"))))
    extras = {"traces": [r["trace"] for r in results], "svg": {"loss_trace.svg": (series, f"Training losses {g.label()}", "epoch", "loss")}}
    return CommandResult("train", cfg, rep, v, extras, _timings(keys, results))


def _load_net(path):
    state, meta = load_checkpoint(path)
    if "generator" not in meta:
        raise ConfigError(f"checkpoint {path} has no generator config in its metadata")
    gen = build_generator(GeneratorConfig.from_dict(meta["generator"]), seed=int(meta.get("seed", 0)))
    gen.load_state_dict(state)
    return gen, meta


def cmd_eval(cfg: dict, out=None) -> CommandResult:
    if not cfg.get("net"):
        raise ConfigError("eval needs --net <checkpoint.json>")
    gen, meta = _load_net(cfg["net"])
    task = cfg["task"] if cfg.get("task") else meta.get("task")
    name, spec = resolve_task(task)
    ds = dataset_for(spec, cfg["data"])
    test = evaluate(gen, ds.test)
    train = evaluate(gen, ds.train)
    rep = MetricsReport()
    label = GeneratorConfig.from_dict(meta["generator"]).label()
    for split, m in (("test", test), ("train", train)):
        rep.add(task=name, variant=label, sweep="split", value=split, seed=meta.get("seed"), psnr=m["psnr"], ssim=m["ssim"])
    v = Verdict("eval")
    v.check("train_split_not_below_test", train["psnr"] >= test["psnr"], train=train["psnr"], test=test["psnr"])
    images = []
    for i, (x, y) in enumerate(ds.test[: int(cfg["save_images"])]):
        images.append((ds.test_ids[i], x, restore(gen, x), y))
    return CommandResult("eval", cfg, rep, v, {"images": images})


def _trace_from_source(source, column: str) -> np.ndarray:
    trace = LossTrace.from_csv(Path(source))
    return trace.column(column)


def cmd_fit_loss(cfg: dict, out=None) -> CommandResult:
    column = cfg["column"]
    v = Verdict("fit-loss")
    rep = MetricsReport()
    curves = []
    if cfg.get("trace"):
        curves.append(("trace", None, _trace_from_source(cfg["trace"], column)))
        timings = []
    else:
        name, spec = resolve_task(cfg["task"])
        g = parse_model(cfg["model"], cfg["generator"])
        seeds = _seeds(cfg)
        jobs = [make_job(spec, cfg["data"], g, cfg["train"], s, out=_job_dir(out, g.label(), s)) for s in seeds]
        results = run_jobs(jobs, _threads(cfg))
        keys = []
        for s, r in zip(seeds, results):
            curves.append((g.label(), s, LossTrace.from_csv(r["trace"]).column(column)))
            keys.append(dict(task=name, variant=g.label(), value=0, seed=s))
            rep.add(**_row(r, task=name, variant=g.label(), sweep="train", value=None, seed=s))
        timings = _timings(keys, results)
    fits = []
    for label, seed, ys in curves:
        if len(ys) < 10:
            raise FitError(f"loss trace has {len(ys)} points; fit-loss needs at least 10")
        xs = np.arange(len(ys), dtype=np.float64)
        dbl = fit_double_exponential(xs, ys)
        sgl = fit_single_exponential(xs, ys)
        fits.append({"label": label, "seed": seed, "double": dbl, "single": sgl, "delta_r2": dbl.r2 - sgl.r2, "xs": xs, "ys": ys})
    deltas = [f["delta_r2"] for f in fits]
    med = float(np.median(deltas))
    v.check("two_stage_delta_r2", med > float(cfg["min_delta_r2"]), median_delta_r2=med, delta_r2=deltas,
            threshold=cfg["min_delta_r2"], double=[f["double"].params for f in fits], single=[f["single"].params for f in fits])
    f0 = fits[0]
    series = [
        Series(f"{column} trace", list(f0["xs"]), list(f0["ys"]), style="scatter"),
        Series(f"double R2={f0['double'].r2:.4f}", list(f0["xs"]), list(f0["double"].predict(f0["xs"]))),
        Series(f"single R2={f0['single'].r2:.4f}", list(f0["xs"]), list(f0["single"].predict(f0["xs"])), style="dashed"),
    ]
    extras = {"fits": fits, "svg": {"loss_fit.svg": (series, "Loss trace fits", "epoch", column)}}
    return CommandResult("fit-loss", cfg, rep if rep.rows else None, v, extras, timings)


def _patch_means(img: np.ndarray, grid: int) -> np.ndarray:
    """Gray-level mean of each cell of a grid x grid partition (nearest upsampling for small maps)."""
    g = img if img.ndim == 2 else to_gray(img)
    h, w = g.shape
    if h < grid or w < grid:
        g = np.repeat(np.repeat(g, -(-grid // h), axis=0), -(-grid // w), axis=1)
        h, w = g.shape
    rows = np.array_split(np.arange(h), grid)
    cols = np.array_split(np.arange(w), grid)
    return np.array([[g[np.ix_(r, c)].mean() for c in cols] for r in rows])


def _bottleneck_map(gen, x: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return gen.bottleneck(to_net(x, gen.dtype)).data[0].astype(np.float64)


def info_samples(gen, pairs, grid: int) -> dict[str, np.ndarray]:
    """Per-patch scalars for X, Y, the bottleneck and the output.

    The bottleneck is reduced to its first principal component over all
    spatial positions of all images, then mapped onto the patch grid. A
    ``None`` generator is the identity map (bottleneck = input).
    """
    xs, ys, yts, feats = [], [], [], []
    for x, y in pairs:
        xs.append(_patch_means(x, grid).ravel())
        ys.append(_patch_means(y, grid).ravel())
        if gen is not None:
            yts.append(_patch_means(restore(gen, x), grid).ravel())
            feats.append(_bottleneck_map(gen, x))
    if gen is None:
        return {k: np.concatenate(xs if k != "Y" else ys)[:, None] for k in ("X", "Y", "Xt", "Yt")}
    c = feats[0].shape[0]
    flat = np.concatenate([f.reshape(c, -1).T for f in feats])
    flat = flat - flat.mean(axis=0)
    if c > 1:
        _, _, vt = np.linalg.svd(flat, full_matrices=False)
        comp = vt[0] * np.sign(vt[0][np.argmax(np.abs(vt[0]))])
    else:
        comp = np.ones(1)
    xts = [_patch_means(np.tensordot(comp, f, axes=1), grid).ravel() for f in feats]
    return {k: np.concatenate(v)[:, None] for k, v in (("X", xs), ("Y", ys), ("Xt", xts), ("Yt", yts))}


def cmd_info_analysis(cfg: dict, out=None) -> CommandResult:
    name, spec = resolve_task(cfg["task"])
    ds = dataset_for(spec, cfg["data"])
    net = cfg.get("net")
    if net == "identity":
        gen, label = None, "identity"
    elif net:
        gen, meta = _load_net(net)
        label = GeneratorConfig.from_dict(meta["generator"]).label()
    else:
        g = parse_model(cfg["model"], {})
        gen, label = build_generator(g, seed=int(cfg["seed"])), g.label() + " (untrained)"
    samples = info_samples(gen, ds.test, int(cfg["grid"]))
    joint = quantize_activations(samples, int(cfg["bins"]))
    i_yx = mutual_info(joint, "Y", "X")
    i_yxt = mutual_info(joint, "Y", "Xt")
    i_yyt = mutual_info(joint, "Y", "Yt")
    terms = proposed_terms(joint)
    bounds = boundary_check(joint)
    tol = float(cfg["tol"])
    v = Verdict("info-analysis")
    v.check("empirical_dpi_chain", i_yx >= i_yxt - tol and i_yxt >= i_yyt - tol, I_YX=i_yx, I_YXt=i_yxt, I_YYt=i_yyt)
    stats = {
        "net": label,
        "task": name,
        "samples": int(samples["X"].shape[0]),
        "bins": int(cfg["bins"]),
        "I(Y;X)": i_yx,
        "I(Y;Xt)": i_yxt,
        "I(Y;Yt)": i_yyt,
        "terms": terms,
        "bound_slacks": dict(bounds.slack),
        "bounds_satisfied": bounds.satisfied,
    }
    rep = MetricsReport()
    series = [Series("bits", [0.0, 1.0, 2.0], [i_yx, i_yxt, i_yyt], style="line")]
    extras = {"stats": stats, "joint": joint,
              "svg": {"information.svg": (series, "I(Y;X), I(Y;Xt), I(Y;Yt)", "variable index", "bits")}}
    return CommandResult("info-analysis", cfg, rep, v, extras)


_HANDLERS = {
    "synth": cmd_synth,
    "sweep-depth": cmd_sweep_depth,
    "sweep-infoaccum": cmd_sweep_infoaccum,
    "sweep-position": cmd_sweep_position,
    "reconstruct": cmd_reconstruct,
    "ablation": cmd_ablation,
    "train": cmd_train,
    "eval": cmd_eval,
    "fit-loss": cmd_fit_loss,
    "info-analysis": cmd_info_analysis,
}


def run_command(command: str, cfg: dict, out=None) -> CommandResult:
    """Run a resolved config and, when ``out`` is given, write all artefacts there."""
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "config.resolved.json").write_text(json.dumps({"command": command, **cfg}, indent=1, sort_keys=True) + "\n")
    res = _HANDLERS[command](cfg, out)
    if out is not None:
        write_outputs(res, Path(out))
    return res


def write_outputs(res: CommandResult, out: Path) -> None:
    if res.report is not None and res.report.rows:
        res.report.to_csv(out / "report.csv")
    if res.verdict is not None:
        (out / "verdict.json").write_text(res.verdict.to_json())
    for fname, (series, title, xl, yl) in res.extras.get("svg", {}).items():
        save_svg(out / fname, series, title, xl, yl)
    if res.timings:
        (out / "timings.csv").write_text("run,seconds\n" + "".join(f"{k},{s:.3f}\n" for k, s in res.timings))
    if res.command == "info-analysis":
        (out / "info.json").write_text(json.dumps(_jsonable(res.extras["stats"]), indent=1, sort_keys=True) + "\n")
    if res.command == "fit-loss":
        fits = [{"label": f["label"], "seed": f["seed"], "delta_r2": f["delta_r2"],
                 "double": f["double"].to_dict(), "single": f["single"].to_dict()} for f in res.extras["fits"]]
        (out / "fits.json").write_text(json.dumps(_jsonable(fits), indent=1, sort_keys=True) + "\n")
    if res.command == "eval":
        from .imageio import save_image

        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for i, x, yt, y in res.extras["images"]:
            save_image(img_dir / f"{i}_input.ppm", x)
            save_image(img_dir / f"{i}_restored.ppm", yt)
            save_image(img_dir / f"{i}_target.ppm", y)

