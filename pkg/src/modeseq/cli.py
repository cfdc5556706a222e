"""Command line experiment runner: ``modeseq generate | train | eval | bench | report``.

Every invocation creates a run directory under ``$MODESEQ_OUTPUT_ROOT``
(default ``./runs``) named ``<timestamp>-<command>-seed<seed>`` and writes a
``manifest.json`` there before doing any work.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from .bench import bench_csv, benchmark_decoders, speed_ratios
from .config import IGNORED_VARIANTS, STRATEGIES, VARIANTS, ConfigError, build_configs, config_snapshot, \
    read_config_file
from .metrics import MARGINAL_FIELDS, JOINT_FIELDS, MetricReport, evaluate_joint, evaluate_marginal
from .scene import SceneFormatError, SceneValidationError, load_dataset
from .training import NumericalError, load_checkpoint, train_network
from .validation import check_scenes

ENV_OUTPUT_ROOT = "MODESEQ_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
CONFIG_SECTIONS = ("model", "train", "data", "eval")

log = logging.getLogger("modeseq")


class DataError(RuntimeError):
    """Input data missing, malformed, or incompatible with the model."""


# run directories and manifests


@dataclass
class RunManifest:
    run_id: str
    command: str
    argv: list
    config: dict
    build: str
    seed: Optional[int]
    single_threaded: bool
    bit_reproducible: bool
    started: str
    finished: Optional[str] = None
    status: str = "running"
    dataset_hash: Optional[str] = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def build_id() -> str:
    """Package version plus the git revision of the source tree, when there is one."""
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def atomic_write(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def make_run_dir(command: str, seed: Optional[int], explicit: Optional[str] = None) -> Path:
    if explicit:
        path = Path(explicit)
        path.mkdir(parents=True, exist_ok=True)
        return path
    root = Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))
    stamp = dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    base = f"{stamp}-{command}-seed{'na' if seed is None else seed}"
    path = root / base
    n = 1
    while path.exists():
        path = root / f"{base}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


class Run:
    """Owns a run directory and keeps its manifest current on disk."""

    def __init__(self, args, command: str, config: dict, seed: Optional[int]):
        self.dir = make_run_dir(command, seed, args.run_dir)
        single = not args.allow_threads
        self.manifest = RunManifest(run_id=self.dir.name, command=command, argv=list(args.argv), config=config,
                                    build=build_id(), seed=seed, single_threaded=single,
                                    bit_reproducible=single, started=_now())
        self.write()

    def path(self, name: str) -> Path:
        return self.dir / name

    def output(self, key: str, name: str) -> Path:
        self.manifest.outputs[key] = name
        return self.dir / name

    def write(self) -> Path:
        return atomic_write(self.dir / "manifest.json", json.dumps(asdict(self.manifest), indent=2, sort_keys=True))

    def finish(self, status: str = "ok") -> None:
        self.manifest.status = status
        self.manifest.finished = _now()
        self.write()


# config handling


def _parse_set(items: Sequence[str]) -> dict:
    out: dict = {}
    bad = []
    for item in items or ():
        key, sep, value = item.partition("=")
        sec, dot, name = key.partition(".")
        if not sep or not dot or not name:
            bad.append(f"--set {item!r}: expected section.key=value")
            continue
        out.setdefault(sec.strip(), {})[name.strip()] = value.strip()
    if bad:
        raise ConfigError(bad)
    return out


def _file_sections(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        sections = read_config_file(path)
    except FileNotFoundError as exc:
        raise ConfigError([f"config file {path}: not found"]) from exc
    except Exception as exc:  # configparser raises several unrelated types
        raise ConfigError([f"config file {path}: {exc}"]) from exc
    return sections


def _merge(*layers: dict) -> dict:
    out: dict = {}
    for layer in layers:
        for sec, vals in layer.items():
            out.setdefault(sec, {}).update({k: v for k, v in vals.items() if v is not None})
    return out


def _check_sections(merged: dict) -> None:
    bad = [f"[{sec}]: unknown section (expected one of {CONFIG_SECTIONS})" for sec in merged
           if sec not in CONFIG_SECTIONS]
    if bad:
        raise ConfigError(bad)


def _on_off(text: str) -> bool:
    low = text.strip().lower()
    if low in {"on", "true", "1", "yes"}:
        return True
    if low in {"off", "false", "0", "no"}:
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError("empty K list")
    return ks


# data helpers


def _dataset_manifest(path: str) -> Path:
    p = Path(path)
    for cand in (p, p / "manifest.txt", p / "dataset" / "manifest.txt"):
        if cand.is_file():
            return cand
    raise DataError(f"{path}: no dataset manifest found (expected a manifest file, a dataset "
                    f"directory, or a generate run directory)")


def _load_scenes(path: str, require_ground_truth: bool = True):
    from .synthgen import dataset_hash

    manifest = _dataset_manifest(path)
    try:
        scenes = check_scenes(load_dataset(manifest), require_ground_truth)
    except (SceneFormatError, SceneValidationError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    except FileNotFoundError as exc:
        raise DataError(f"{manifest}: {exc}") from exc
    return scenes, manifest, dataset_hash(manifest)


def _file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# commands


def cmd_generate(args) -> int:
    from .synthgen import PRESET_COUPLING, PRESETS, dataset_hash, generate_dataset

    sections = _merge(_file_sections(args.config), _parse_set(args.set))
    _check_sections(sections)
    data = sections.get("data", {})
    preset = args.preset or data.get("preset", "fork3")
    if preset not in PRESETS:
        raise ConfigError([f"data.preset: {preset!r} not in {sorted(PRESETS)}"])
    problems = []
    try:
        n = int(args.n if args.n is not None else data.get("n", 500))
    except ValueError:
        problems.append(f"data.n: cannot parse {data.get('n')!r} as int")
    try:
        seed = int(args.seed if args.seed is not None else data.get("seed", 0))
    except ValueError:
        problems.append(f"data.seed: cannot parse {data.get('seed')!r} as int")
    if problems:
        raise ConfigError(problems)
    if n < 1:
        raise ConfigError([f"data.n: must be >= 1, got {n}"])
    coupling = args.coupling or data.get("coupling") or PRESET_COUPLING.get(preset)
    spec = PRESETS[preset]
    config = {"data": {"preset": preset, "n": n, "seed": seed, "coupling": coupling,
                       "spec": json.loads(json.dumps(asdict(spec)))}}
    run = Run(args, "generate", config, seed)
    try:
        manifest = generate_dataset(spec, n, seed, run.path("dataset"), coupling)
    except ValueError as exc:
        run.finish("failed")
        raise ConfigError([f"data: {exc}"]) from exc
    run.manifest.dataset_hash = dataset_hash(manifest)
    run.manifest.outputs["dataset"] = str(manifest.relative_to(run.dir))
    run.finish()
    print(manifest)
    print(run.path("manifest.json"))
    return EXIT_OK


def _model_train_overrides(args) -> dict:
    model = {"variant": args.variant, "n_modes": args.modes, "n_layers": args.layers,
             "hidden_dim": args.dim, "n_heads": args.heads, "rearrange": args.rearrange,
             "joint": True if args.joint else None}
    train = {"strategy": args.strategy, "ignored_variant": args.ignored, "delta": args.delta,
             "lambda_rank": args.lambda_rank, "epochs": args.epochs, "lr": args.lr,
             "max_steps": args.max_steps, "seed": args.seed, "batch_size": args.batch_size}
    return {"model": model, "train": train}


def cmd_train(args) -> int:
    from .features import joint_samples, marginal_samples

    sections = _merge(_file_sections(args.config), _parse_set(args.set))
    _check_sections(sections)
    overrides = _model_train_overrides(args)
    data_path = args.data or sections.get("data", {}).get("path")
    if not data_path:
        raise ConfigError(["data.path: no training data given (use --data)"])
    preset = args.preset or sections.get("data", {}).get("preset_model") or "desk"
    build_configs(preset, sections, overrides)  # report config problems before touching data

    scenes, manifest, dhash = _load_scenes(data_path)
    t_obs, t_hat = scenes[0].t_obs, scenes[0].t_hat
    if any(s.t_obs != t_obs or s.t_hat != t_hat for s in scenes):
        raise DataError("scenes disagree on t_obs / t_hat")
    model_cfg, train_cfg = build_configs(preset, sections, _merge(overrides, {"model": {"t_obs": t_obs,
                                                                                        "t_hat": t_hat}}))
    samples = joint_samples(scenes) if model_cfg.joint else marginal_samples(scenes)
    if model_cfg.joint and len({len(s.targets) for s in samples}) != 1:
        raise DataError("joint training needs the same number of targets in every scene")

    run = Run(args, "train", {"preset": preset, **config_snapshot(model_cfg, train_cfg)}, train_cfg.seed)
    run.manifest.dataset_hash = dhash
    run.manifest.inputs["data"] = str(manifest)
    atomic_write(run.path("config.ini"), _ini_text(config_snapshot(model_cfg, train_cfg)))
    run.write()

    def progress(row):
        if args.log_every and row["step"] % args.log_every == 0:
            log.info("step %d epoch %d total %.4f lr %.2e", row["step"], row["epoch"], row["total"], row["lr"])

    ckpt = run.output("checkpoint", "checkpoint.ckpt")
    try:
        with _threads(args):
            train_network(samples, model_cfg, train_cfg, log_path=run.output("train_log", "train_log.csv"),
                          checkpoint_path=ckpt, checkpoint_every=args.checkpoint_every, callback=progress)
    except NumericalError:
        run.finish("numerical_failure")
        raise
    run.manifest.outputs["checkpoint_sha256"] = _file_hash(ckpt)
    run.finish()
    print(ckpt)
    return EXIT_OK


def _ini_text(snapshot: dict) -> str:
    lines = []
    for sec, vals in snapshot.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in vals.items()]
        lines.append("")
    return "\n".join(lines)


class _threads:
    """Single-threaded BLAS unless ``--allow-threads`` was given."""

    def __init__(self, args):
        self.single = not args.allow_threads
        self.limits = None

    def __enter__(self):
        if self.single:
            self.limits = threadpool_limits(limits=1)
        return self

    def __exit__(self, *exc):
        if self.limits is not None:
            self.limits.unregister()
        return False


# evaluation, optionally spread over worker processes

_WORKER = {}


def _worker_init(ckpt_path: str) -> None:
    threadpool_limits(limits=1)
    _WORKER["model"] = _estimator_from(load_checkpoint(ckpt_path))


def _estimator_from(ckpt):
    from .estimator import JointModeSeqForecaster, ModeSeqForecaster

    cls = JointModeSeqForecaster if ckpt.model_config.joint else ModeSeqForecaster
    return cls.from_checkpoint(ckpt)


def _worker_predict(job):
    scenes, k, variant, rearrange = job
    return _WORKER["model"].predict_layers(scenes, n_modes=k, variant=variant, rearrange=rearrange)


def _predict_layers(model, ckpt_path: Path, scenes, k, variant, rearrange, workers: int):
    if workers <= 1:
        return model.predict_layers(scenes, n_modes=k, variant=variant, rearrange=rearrange)
    size = -(-len(scenes) // workers)
    jobs = [(scenes[i:i + size], k, variant, rearrange) for i in range(0, len(scenes), size)]
    with cf.ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(str(ckpt_path),)) as pool:
        parts = list(pool.map(_worker_predict, jobs))  # map keeps submission order
    n_layers = len(parts[0])
    return [[p for part in parts for p in part[ell]] for ell in range(n_layers)]


def cmd_eval(args) -> int:
    sections = _merge(_file_sections(args.config), _parse_set(args.set))
    _check_sections(sections)
    ev = sections.get("eval", {})
    try:
        threshold = float(args.threshold if args.threshold is not None else ev.get("threshold", 2.0))
    except ValueError:
        raise ConfigError([f"eval.threshold: cannot parse {ev.get('threshold')!r} as float"]) from None
    miss_rule = args.miss_rule or ev.get("miss_rule", "any")
    if miss_rule not in ("any", "all"):
        raise ConfigError([f"eval.miss_rule: {miss_rule!r} not in ('any', 'all')"])

    ckpt_path = Path(args.checkpoint)
    if ckpt_path.is_dir():
        ckpt_path = ckpt_path / "checkpoint.ckpt"
    try:
        header_only = load_checkpoint(ckpt_path)
    except ValueError as exc:
        if not ckpt_path.exists():
            raise OSError(f"{ckpt_path}: checkpoint not found") from exc
        raise DataError(str(exc)) from exc
    requested = {k: v for k, v in sections.get("model", {}).items()}
    if requested:
        model_cfg, _ = build_configs(sections={"model": {**config_snapshot(header_only.model_config,
                                                                            header_only.train_config)["model"],
                                                         **requested}})
        try:
            ckpt = load_checkpoint(ckpt_path, model_cfg)
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc
    else:
        ckpt = header_only
    model = _estimator_from(ckpt)
    cfg = ckpt.model_config
    k = args.modes or cfg.n_modes
    if not 1 <= k <= cfg.max_modes:
        raise ConfigError([f"--modes: must lie in [1, {cfg.max_modes}], got {k}"])
    variant = args.variant or cfg.variant
    rearrange = cfg.rearrange if args.rearrange is None else args.rearrange

    scenes, manifest, dhash = _load_scenes(args.data)
    try:
        scenes = check_scenes(scenes, True, n_targets=len(scenes[0].target_ids) if cfg.joint else None,
                              t_obs=cfg.t_obs, t_hat=cfg.t_hat)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    setting = {"variant": variant, "strategy": ckpt.train_config.strategy,
               "ignored_variant": ckpt.train_config.ignored_variant, "rearrange": rearrange, "K": k,
               "threshold": threshold, "joint": cfg.joint, "miss_rule": miss_rule}
    run = Run(args, "eval", {"setting": setting, **config_snapshot(cfg, ckpt.train_config)},
              ckpt.train_config.seed)
    # evaluation workers run single-threaded each, so results do not depend on --workers
    run.manifest.bit_reproducible = True
    run.manifest.dataset_hash = dhash
    run.manifest.inputs.update(data=str(manifest), checkpoint=str(ckpt_path),
                               checkpoint_sha256=_file_hash(ckpt_path))
    run.write()

    with _threads(args):
        per_layer = _predict_layers(model, ckpt_path, scenes, k, variant, rearrange, args.workers)
    if cfg.joint:
        reports = [evaluate_joint(p, scenes, threshold, miss_rule) for p in per_layer]
    else:
        reports = [evaluate_marginal(p, scenes, threshold) for p in per_layer]
    doc = {"schema": "modeseq-eval/1", "manifest": "manifest.json", "dataset_hash": dhash,
           "checkpoint_sha256": run.manifest.inputs["checkpoint_sha256"], "setting": setting,
           "final": reports[-1].to_dict(), "layers": [r.to_dict() for r in reports]}
    atomic_write(run.output("report", "report.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    atomic_write(run.output("report_csv", "report.csv"), _layers_csv(reports))
    run.finish()
    print(run.path("report.json"))
    final = reports[-1]
    keys = ("joint_mAP", "joint_min_fde", "forbidden_top_rate") if cfg.joint else \
        ("min_ade", "min_fde", "miss_rate", "mAP", "coverage")
    print("  ".join(f"{key}={getattr(final, key):.4f}" for key in keys if getattr(final, key) is not None))
    return EXIT_OK


def _layers_csv(reports: Sequence[MetricReport]) -> str:
    rows = [{"layer": i, **r.flat()} for i, r in enumerate(reports)]
    names = list(dict.fromkeys(k for row in rows for k in row))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(row.get(k)) for k in names})
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_bench(args) -> int:
    from .network import ModeSeqNetwork
    from .synthgen import PRESETS, generate_scenes

    if args.checkpoint:
        path = Path(args.checkpoint)
        if path.is_dir():
            path = path / "checkpoint.ckpt"
        try:
            ckpt = load_checkpoint(path)
        except ValueError as exc:
            raise OSError(str(exc)) from exc
        network, source = ckpt.network, str(path)
    else:
        model_cfg, _ = build_configs("desk", overrides={"model": {"hidden_dim": args.dim}})
        network, source = ModeSeqNetwork(model_cfg, seed=args.seed or 0), "untrained desk network"
    if args.data:
        scenes, manifest, dhash = _load_scenes(args.data, require_ground_truth=False)
    else:
        scenes, manifest, dhash = generate_scenes(PRESETS["fork3"], args.scenes, seed=args.seed or 0), None, None
    scenes = scenes[:args.scenes]
    if len(scenes) < 200:
        log.warning("benchmarking over %d scenes; at least 200 give stable percentiles", len(scenes))
    run = Run(args, "bench", {"model": asdict(network.cfg),
                              "K": args.modes, "n_scenes": len(scenes)}, args.seed)
    run.manifest.bit_reproducible = False  # wall-clock numbers never are
    run.manifest.dataset_hash = dhash
    run.manifest.inputs.update(model=source, data=str(manifest) if manifest else "fork3 seed "
                               f"{args.seed or 0} generated in memory")
    run.write()
    rows = benchmark_decoders(network, scenes, args.modes, single_threaded=not args.allow_threads)
    text = bench_csv(rows)
    atomic_write(run.output("bench", "bench.csv"), text)
    run.finish()
    print(run.path("bench.csv"))
    print(format_table(list(csv.reader(io.StringIO(text)))))
    ratios = speed_ratios(rows)
    print("recurrent/parallel median ratio: " + ", ".join(f"K={k}: {r:.2f}" for k, r in ratios.items()))
    return EXIT_OK


# ablation tables

SETTING_COLUMNS = ("variant", "strategy", "ignored_variant", "rearrange")


def collect_reports(run_dirs: Sequence[str]) -> tuple[list[tuple[str, dict]], list[str]]:
    found, missing = [], []
    for d in run_dirs:
        path = Path(d) / "report.json"
        if not path.is_file():
            missing.append(str(path))
            continue
        found.append((Path(d).name, json.loads(path.read_text())))
    return found, missing


def report_rows(found: Sequence[tuple[str, dict]]) -> list[list[str]]:
    """Header plus one row per run; K appears only when runs used different K."""
    ks = {doc["setting"]["K"] for _, doc in found}
    settings = list(SETTING_COLUMNS) + (["K"] if len(ks) > 1 else [])
    metric_names = [m for m in MARGINAL_FIELDS + JOINT_FIELDS
                    if any(doc["final"].get(m) is not None for _, doc in found)]
    rows = [["run"] + settings + ["n_scenes"] + metric_names]
    for name, doc in found:
        s, f = doc["setting"], doc["final"]
        rows.append([name] + [_cell(s[c]) for c in settings] + [_cell(f["n_scenes"])]
                    + [_cell(f.get(m)) for m in metric_names])
    return rows


def format_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    found, missing = collect_reports(args.runs)
    for m in missing:
        print(f"missing report: {m}", file=sys.stderr)
    if not found:
        print("no completed runs to report", file=sys.stderr)
        return EXIT_DATA
    rows = report_rows(found)
    run = Run(args, "report", {"runs": [str(r) for r in args.runs]}, None)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    atomic_write(run.output("table_csv", "table.csv"), buf.getvalue())
    table = format_table(rows)
    atomic_write(run.output("table_txt", "table.txt"), table)
    run.manifest.inputs["missing"] = missing
    run.finish("ok" if not missing else "incomplete")
    sys.stdout.write(table)
    return EXIT_DATA if missing else EXIT_OK


# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model] [train] [data] [eval] sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable, wins over --config")
    p.add_argument("--run-dir", help="write into this directory instead of a fresh one under $"
                   + ENV_OUTPUT_ROOT)
    p.add_argument("--allow-threads", action="store_true",
                   help="let BLAS use several threads (faster, not bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modeseq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"modeseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    from .synthgen import COUPLINGS, PRESETS as DATA_PRESETS
    from .config import PRESETS as MODEL_PRESETS

    g = sub.add_parser("generate", help="write a synthetic scene dataset")
    _common(g)
    g.add_argument("--preset", choices=sorted(DATA_PRESETS))
    g.add_argument("--n", type=int, help="number of scenes (default 500)")
    g.add_argument("--seed", type=int)
    g.add_argument("--coupling", choices=COUPLINGS, help="draw interactive scenes with this joint rule")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(t)
    t.add_argument("--data", help="dataset manifest, dataset directory, or generate run directory")
    t.add_argument("--preset", choices=sorted(MODEL_PRESETS))
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--ignored", choices=IGNORED_VARIANTS)
    t.add_argument("--rearrange", type=_on_off, metavar="on|off")
    t.add_argument("--joint", action="store_true", help="joint multi-agent decoding")
    t.add_argument("--modes", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--dim", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--delta", type=float)
    t.add_argument("--lambda-rank", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="STEPS")
    t.add_argument("--log-every", type=int, default=50, metavar="STEPS")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write per-layer reports")
    _common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint file or train run directory")
    e.add_argument("--data", required=True)
    e.add_argument("--modes", type=int, help="decode this many modes (above the trained K extrapolates)")
    e.add_argument("--variant", choices=VARIANTS)
    e.add_argument("--rearrange", type=_on_off, metavar="on|off")
    e.add_argument("--threshold", type=float, help="match threshold in meters (default 2.0)")
    e.add_argument("--miss-rule", choices=("any", "all"), help="joint miss rule (default any)")
    e.add_argument("--workers", type=int, default=1, help="worker processes over scenes")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="decoder latency, recurrent versus parallel")
    _common(b)
    b.add_argument("--checkpoint", help="checkpoint file or train run directory (default: untrained desk net)")
    b.add_argument("--data", help="scenes to time on (default: 200 generated fork3 scenes)")
    b.add_argument("--modes", type=_k_list, default=[1, 2, 4, 8, 16, 32], metavar="K,K,...")
    b.add_argument("--scenes", type=int, default=200)
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="comparison table over eval run directories")
    _common(r)
    r.add_argument("runs", nargs="+", help="eval run directories")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
