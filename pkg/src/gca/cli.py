"""Command line: ``gca {sbm-gen,train,augment,eval,pipeline}``.

Every option can also come from an INI file given with ``--config``::

    [common]
    seed = 3

    [augment]
    delta0 = 10
    delta1 = 2dmax

Keys are option names with dashes or underscores.  Sections ``common``
and the running command's own section apply; ``pipeline`` also reads the
stage sections, skipping keys it has no option for.  Flags given on the
command line win over the file.

Exit codes: 0 success, 2 configuration error, 3 stage failure,
4 augmentation did not converge (or the K re-check never passed).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .augment import (AugmentConfig, NotConvergedError, ResampleExhaustedError,
                      augment_graph, place_new_component)
from .embedder import EncoderConfig, LatentEmbedding, TrainedDecoder
from .gmm import GmmModel
from .graph import FLOAT_FMT, Graph, SbmSpec, generate_sbm, load_graph, save_graph
from .metrics import MetricsReport, anomaly_score, evaluate
from .mdl import SelectionGrid
from .pipeline import train

logger = logging.getLogger("gca")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_NOT_CONVERGED = 0, 2, 3, 4
STAGE_SECTIONS = ("sbm-gen", "train", "augment", "eval")
COMMAND_NAMES = (*STAGE_SECTIONS, "pipeline")
_OPEN_MANIFESTS: List["RunManifest"] = []


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage, self.cause = stage, cause


# --------------------------------------------------------------------------
# value parsing

def int_list(text: str) -> List[int]:
    """``"2-10"``, ``"4,8,16"`` or mixtures like ``"2-4,8"``."""
    out = []
    try:
        for part in str(text).replace(" ", "").split(","):
            if not part:
                continue
            if "-" in part[1:]:
                lo, hi = part.split("-", 1) if part[0] != "-" else part[1:].split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return sorted(set(out))


def community_count(text: str):
    vals = int_list(text)
    return vals[0] if len(vals) == 1 else (vals[0], vals[-1])


def delta1_value(text: str):
    t = str(text).strip().lower()
    if t.endswith("dmax"):
        try:
            float(t[:-4] or "1")
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad delta1 token {text!r}") from None
        return t
    try:
        v = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"delta1 must be a number or a dmax token, got {text!r}") \
            from None
    if v < 0:
        raise argparse.ArgumentTypeError("delta1 must be >= 0")
    return v


def optional_float(text: str) -> Optional[float]:
    if str(text).strip().lower() in ("none", "off", ""):
        return None
    return float(text)


def _truthy(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _default_seed() -> int:
    raw = os.environ.get("GCA_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"GCA_SEED must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# manifest

class RunManifest:
    """JSON run record, rewritten atomically after every change."""

    def __init__(self, path: Path, command: str, config: dict):
        self.path = Path(path)
        self.data = {"tool": "gca", "version": __version__, "command": command,
                     "argv": sys.argv[1:], "config": config, "status": "running",
                     "stages": {}, "artifacts": []}
        self.write()
        _OPEN_MANIFESTS.append(self)

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".manifest.")
        with os.fdopen(fd, "w") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True, default=_json_default)
        os.replace(tmp, self.path)

    def start(self, stage: str, seed: Optional[int] = None):
        self.data["stages"][stage] = {"status": "running", "seed": seed, "seconds": None,
                                      "artifacts": []}
        self._t0 = time.perf_counter()
        self.write()

    def add(self, stage: str, *paths):
        for p in paths:
            p = str(p)
            self.data["stages"][stage]["artifacts"].append(p)
            if p not in self.data["artifacts"]:
                self.data["artifacts"].append(p)
        self.write()

    def finish(self, stage: str, status: str = "done", **extra):
        rec = self.data["stages"][stage]
        rec.update(status=status, seconds=time.perf_counter() - self._t0, **extra)
        self.write()

    def close(self, status: str):
        self.data["status"] = status
        self.write()
        if self in _OPEN_MANIFESTS:
            _OPEN_MANIFESTS.remove(self)


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set, range)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _prepare_out(path: Path, force: bool):
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"{path} exists and is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def _run_stage(manifest: Optional[RunManifest], stage: str, fn, seed=None):
    if manifest is not None:
        manifest.start(stage, seed)
    try:
        out = fn()
    except (NotConvergedError, ResampleExhaustedError) as exc:
        if manifest is not None:
            manifest.finish(stage, "not_converged", error=str(exc))
        raise
    except ConfigError:
        raise
    except Exception as exc:
        if manifest is not None:
            manifest.finish(stage, "failed", error=f"{type(exc).__name__}: {exc}")
        raise StageError(stage, exc) from exc
    if manifest is not None:
        manifest.finish(stage)
    return out


# --------------------------------------------------------------------------
# stages (library-level, used by the subcommands and by pipeline)

def _sbm_spec(args, seed: int) -> SbmSpec:
    return SbmSpec(n_communities=args.communities,
                   community_size_range=(args.size_min, args.size_max),
                   intra_p=args.intra_p, inter_p=args.inter_p, seed=seed)


def stage_sbm_gen(args, out: Path, manifest: Optional[RunManifest]) -> List[Path]:
    splits = (("train", args.train), ("val", args.val), ("test", args.test))
    seeds = np.random.SeedSequence(args.seed).spawn(sum(n for _, n in splits))
    written, idx = [], 0
    for name, count in splits:
        for i in range(count):
            seed = int(seeds[idx].generate_state(1)[0])
            idx += 1
            g = generate_sbm(_sbm_spec(args, seed))
            d = out / name
            d.mkdir(parents=True, exist_ok=True)
            paths = save_graph(g, d / f"graph_{i:03d}")
            written.extend(paths)
            if manifest is not None:
                manifest.add("sbm-gen", *paths)
    return written


def _encoder_config(args) -> EncoderConfig:
    return EncoderConfig(epochs=args.epochs, learning_rate=args.lr,
                         hidden_dim=args.hidden_dim or None,
                         prior_kl_weight=args.prior_kl_weight,
                         negative_sampling=args.negative_sampling)


def resolve_graph(path: Path, index: int = 0, split: str = "train") -> Path:
    """A graph stem, an ``.edges`` file, or a dataset directory."""
    path = Path(path)
    if path.is_dir():
        if (path / "augmented.edges").exists():
            return path / "augmented"
        if (path / "graph.edges").exists():
            return path / "graph"
        return path / split / f"graph_{index:03d}"
    return path.with_suffix("") if path.suffix == ".edges" else path


def stage_train(args, graph: Graph, out: Path, manifest: Optional[RunManifest]):
    grid = SelectionGrid(tuple(args.k_candidates), tuple(args.d_candidates))
    trained = train(graph, grid, _encoder_config(args), seed=args.seed, jobs=args.jobs)
    paths = list(save_graph(graph, out / "graph"))
    emb_dir = out / "embeddings"
    emb_dir.mkdir(exist_ok=True)
    for d, run in sorted(trained.runs.items()):
        csv_p, meta_p = emb_dir / f"d{d}.csv", emb_dir / f"d{d}.json"
        run.embedding.save(csv_p, meta_p, {"decoder_threshold": run.decoder.edge_threshold,
                                           "loss_trace": run.loss_trace})
        paths += [csv_p, meta_p]
    trained.gmm.save(out / "gmm.json")
    trained.selection.to_csv(out / "selection.csv")
    _write_json(out / "selection.json", {"k": trained.k, "d": trained.d,
                                         "k_candidates": grid.k_candidates,
                                         "d_candidates": grid.d_candidates,
                                         "seed": args.seed})
    paths += [out / "gmm.json", out / "selection.csv", out / "selection.json"]
    if manifest is not None:
        manifest.add("train", *paths)
    logger.info("selected K=%d D=%d", trained.k, trained.d)
    return trained


def load_model_dir(model: Path):
    """``(graph, embedding, decoder, gmm, selection)`` from a train output dir."""
    sel = json.loads((model / "selection.json").read_text())
    d = int(sel["d"])
    emb = LatentEmbedding.load(model / "embeddings" / f"d{d}.csv",
                               model / "embeddings" / f"d{d}.json")
    decoder = TrainedDecoder(float(emb.provenance["decoder_threshold"]))
    return load_graph(model / "graph"), emb, decoder, GmmModel.load(model / "gmm.json"), sel


def _augment_config(args, m: int) -> AugmentConfig:
    return AugmentConfig(delta0=args.delta0, delta1=args.delta1, eta=args.eta,
                         m_new_nodes=m, max_outer_iter=args.max_outer_iter,
                         max_resample=args.max_resample, seed=args.seed,
                         k_candidates=tuple(args.recheck_k),
                         decode_mode=args.decode_mode, jitter_shape=args.jitter_shape,
                         max_step=args.max_step)


def stage_augment(args, model_dir: Path, m: int, out: Path, manifest: Optional[RunManifest],
                  stage: str = "augment") -> dict:
    graph, emb, decoder, gmm, sel = load_model_dir(model_dir)
    cfg = _augment_config(args, m)
    state = place_new_component(gmm, cfg, emb)
    if not state.converged and not args.allow_partial:
        _write_json(out / "augment_report.json", {"state": state.report(), "converged": False})
        raise NotConvergedError(
            f"conditions unmet after {state.iterations} iterations "
            f"(novelty {state.novelty_min:.4g} >= {state.delta0}: {state.novelty_ok}, "
            f"bound {state.reliability_bound:.4g} <= {state.delta1:.4g}: {state.reliability_ok})")
    res = augment_graph(graph, emb, decoder, gmm, state, cfg,
                        allow_partial=args.allow_partial, em_seed=args.seed)
    g_new = res.graph
    if graph.node_labels is not None:
        new_label = int(graph.node_labels.max()) + 1
        g_new = replace(g_new, node_labels=np.r_[graph.node_labels,
                                                  np.full(m, new_label)])
    paths = list(save_graph(g_new, out / "augmented"))
    full = res.augmented_embedding(emb).vectors
    is_new = np.r_[np.zeros(len(emb)), np.ones(m)]
    emb_path = out / "embedding.csv"
    header = ",".join([f"v{i}" for i in range(full.shape[1])] + ["is_new"])
    np.savetxt(emb_path, np.column_stack([full, is_new]), delimiter=",",
               fmt=[FLOAT_FMT] * full.shape[1] + ["%d"], header=header, comments="")
    anomaly = anomaly_score(gmm, res.new_points)
    report = {"model_dir": str(model_dir), "k": gmm.k, "d": gmm.dim, "m_new_nodes": m,
              "k_est": res.k_est, "k_est_attempts": res.attempts, "sample_seeds": res.seeds,
              "k_check_passed": res.k_check_passed, "converged": state.converged,
              "anomaly_mean": anomaly.mean, "anomaly_std": anomaly.std,
              "n_nodes": g_new.n_nodes, "n_edges": g_new.n_edges,
              "config": asdict(cfg), "state": state.report()}
    _write_json(out / "augment_report.json", report)
    paths += [emb_path, out / "augment_report.json"]
    if manifest is not None:
        manifest.add(stage, *paths)
    return report


def _load_generated(entry: Path):
    """Graph plus (optionally) the latent points of its new nodes."""
    entry = Path(entry)
    if entry.is_dir() and (entry / "augmented.edges").exists():
        g = load_graph(entry / "augmented")
        pts = None
        emb = entry / "embedding.csv"
        if emb.exists():
            arr = np.loadtxt(emb, delimiter=",", skiprows=1, ndmin=2)
            pts = arr[arr[:, -1] == 1, :-1]
        rep = entry / "augment_report.json"
        meta = json.loads(rep.read_text()) if rep.exists() else {}
        return g, pts, meta
    return load_graph(resolve_graph(entry)), None, {}


def stage_eval(original: Graph, generated: Sequence[Path], model: Optional[GmmModel],
               out_csv: Path, kernel_sigma: float = 1.0,
               labels: Optional[Sequence[str]] = None) -> List[MetricsReport]:
    rows = []
    for i, entry in enumerate(generated):
        g, pts, meta = _load_generated(entry)
        gmm = model
        if gmm is None and "model_dir" in meta:
            p = Path(meta["model_dir"]) / "gmm.json"
            gmm = GmmModel.load(p) if p.exists() else None
        rows.append(evaluate(original, g, gmm, pts, kernel_sigma))
    names = list(labels) if labels else [str(p) for p in generated]
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run"] + list(MetricsReport.COLUMNS))
        for name, r in zip(names, rows):
            w.writerow([name] + ["" if v is None else (repr(v) if isinstance(v, float) else v)
                                 for v in r.row().values()])
    return rows


def format_table(names: Sequence[str], rows: Sequence[MetricsReport]) -> str:
    cols = ("anomaly_mean", "mmd_degree", "mmd_clustering", "mmd_orbit", "mmd_spectral")
    heads = ("Anomaly", "Deg.", "Clus.", "Orbit", "Spec.")
    width = max([len(n) for n in names] + [4])
    lines = [f"{'run':<{width}}  " + "  ".join(f"{h:>10}" for h in heads)]
    for n, r in zip(names, rows):
        vals = []
        for c in cols:
            v = getattr(r, c)
            vals.append(f"{'---':>10}" if v is None else f"{v:>10.4f}")
        lines.append(f"{n:<{width}}  " + "  ".join(vals))
    return "\n".join(lines)


def trend_lines(rows: Sequence[MetricsReport], tol: float = 1e-12) -> List[str]:
    """Whether each metric is nondecreasing in row order."""
    out = []
    for c in ("anomaly_mean", "mmd_degree", "mmd_clustering", "mmd_orbit", "mmd_spectral"):
        vals = [getattr(r, c) for r in rows]
        if any(v is None for v in vals):
            continue
        ok = all(b >= a - tol for a, b in zip(vals, vals[1:]))
        out.append(f"{c}: {'nondecreasing' if ok else 'not monotone'} "
                   f"({', '.join(f'{v:.4g}' for v in vals)})")
    return out


# --------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    g = p.add_argument_group("common")
    g.add_argument("--config", type=Path, help="INI file with per-stage sections")
    g.add_argument("--seed", type=int, default=None, help="default: $GCA_SEED or 0")
    g.add_argument("--jobs", type=int, default=1, help="worker processes for grid fits")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output dir")
    g.add_argument("--dry-run", action="store_true", help="print the plan and exit")
    g.add_argument("--log-level", default="INFO")


def _add_sbm(p, communities="2-5"):
    g = p.add_argument_group("sbm")
    g.add_argument("--communities", type=community_count, default=communities,
                   help="count or range, e.g. 2 or 2-5")
    g.add_argument("--size-min", type=int, default=20)
    g.add_argument("--size-max", type=int, default=40)
    g.add_argument("--intra-p", type=float, default=0.3)
    g.add_argument("--inter-p", type=float, default=0.005)


def _add_train(p):
    g = p.add_argument_group("train")
    g.add_argument("--k-candidates", type=int_list, default="2-10")
    g.add_argument("--d-candidates", type=int_list, default="4,8,16,24,32")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--hidden-dim", type=int, default=0, help="0: twice the feature count")
    g.add_argument("--prior-kl-weight", type=float, default=0.0)
    g.add_argument("--negative-sampling", choices=("auto", "dense_full", "sampled"),
                   default="auto")


def _add_augment(p):
    g = p.add_argument_group("augment")
    g.add_argument("--delta0", type=float, default=5.0)
    g.add_argument("--delta1", type=delta1_value, default="dmax",
                   help="number or dmax, 0.5dmax, 2dmax, ...")
    g.add_argument("--eta", type=float, default=0.01)
    g.add_argument("--max-outer-iter", type=int, default=5000)
    g.add_argument("--max-resample", type=int, default=20)
    g.add_argument("--recheck-k", type=int_list, default="2-10",
                   help="candidate counts for the K re-check (K+1 is always added)")
    g.add_argument("--decode-mode", choices=("all_pairs", "preserve_original"),
                   default="all_pairs")
    g.add_argument("--jitter-shape", choices=("covariance", "isotropic"), default="covariance")
    g.add_argument("--max-step", type=optional_float, default=1.0,
                   help="per-step trust region; 'none' for plain steps")
    g.add_argument("--allow-partial", action="store_true",
                   help="accept unmet conditions or a failed K re-check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gca", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gca {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sbm-gen", help="generate an SBM dataset")
    _add_common(p)
    _add_sbm(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train", type=int, default=1)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--test", type=int, default=0)

    p = sub.add_parser("train", help="embed, fit mixtures, select (K, D)")
    _add_common(p)
    _add_train(p)
    p.add_argument("--graph", type=Path, required=True,
                   help="graph stem, .edges file or dataset dir")
    p.add_argument("--index", type=int, default=0, help="graph index inside a dataset dir")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("augment", help="place a new community and decode")
    _add_common(p)
    _add_augment(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--m", type=int, default=5, help="number of new nodes")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="MMD statistics and anomaly scores")
    _add_common(p)
    p.add_argument("--original", type=Path, required=True)
    p.add_argument("--generated", type=Path, nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--model", type=Path, help="train output dir, for anomaly scores")
    p.add_argument("--kernel-sigma", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True, help="metrics CSV")

    p = sub.add_parser("pipeline", help="sbm-gen, train, augment and eval in one go")
    _add_common(p)
    _add_sbm(p, communities="2")
    _add_train(p)
    _add_augment(p)
    p.add_argument("--graph", type=Path, help="use this graph instead of generating one")
    p.add_argument("--m", type=int_list, default="5", help="one or more M values")
    p.add_argument("--kernel-sigma", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def apply_config_file(sub: argparse.ArgumentParser, command: str, path: Path):
    """Turn INI entries into parser defaults; command-line flags still win."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    sections = ["common", command]
    if command == "pipeline":
        sections = ["common", *STAGE_SECTIONS, "pipeline"]
    for extra in cp.sections():
        if extra not in ("common", *STAGE_SECTIONS, "pipeline"):
            raise ConfigError(f"unknown config section [{extra}]")
    defaults = {}
    for section in sections:
        if not cp.has_section(section):
            continue
        strict = section in ("common", command)
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            action = known.get(dest)
            if action is None:
                if strict:
                    raise ConfigError(f"[{section}] unknown key {key!r}")
                continue
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[dest] = _truthy(raw)
            elif action.type is not None:
                try:
                    defaults[dest] = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            else:
                defaults[dest] = raw
    # required options may now be satisfied by the file
    for dest in defaults:
        if dest in known:
            known[dest].required = False
    sub.set_defaults(**defaults)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMAND_NAMES), None)
    if known.config is not None and command is not None:
        apply_config_file(_subparser(parser, command), command, known.config)
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = _default_seed()
    if getattr(args, "jobs", 1) < 1:
        raise ConfigError("--jobs must be >= 1")
    return args


# --------------------------------------------------------------------------
# commands

def _config_snapshot(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("dry_run",)}


def cmd_sbm_gen(args) -> int:
    _sbm_spec(args, args.seed)          # validate before touching the disk
    if args.dry_run:
        print(f"would write {args.train}/{args.val}/{args.test} SBM graphs to {args.out}")
        return EXIT_OK
    _prepare_out(args.out, args.force)
    man = RunManifest(args.out / "manifest.json", "sbm-gen", _config_snapshot(args))
    _run_stage(man, "sbm-gen", lambda: stage_sbm_gen(args, args.out, man), args.seed)
    man.close("done")
    return EXIT_OK


def cmd_train(args) -> int:
    stem = resolve_graph(args.graph, args.index)
    if args.dry_run:
        print(f"would train on {stem} over k={args.k_candidates} d={args.d_candidates} "
              f"into {args.out}")
        return EXIT_OK
    _prepare_out(args.out, args.force)
    man = RunManifest(args.out / "manifest.json", "train", _config_snapshot(args))
    graph = _run_stage(man, "load", lambda: load_graph(stem))
    trained = _run_stage(man, "train", lambda: stage_train(args, graph, args.out, man), args.seed)
    man.data["result"] = {"k": trained.k, "d": trained.d}
    man.close("done")
    print(f"selected K={trained.k} D={trained.d}")
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.dry_run:
        print(f"would augment {args.model} with M={args.m} delta0={args.delta0} "
              f"delta1={args.delta1} into {args.out}")
        return EXIT_OK
    if not (args.model / "selection.json").exists():
        raise ConfigError(f"{args.model} is not a train output directory")
    _prepare_out(args.out, args.force)
    man = RunManifest(args.out / "manifest.json", "augment", _config_snapshot(args))
    rep = _run_stage(man, "augment",
                     lambda: stage_augment(args, args.model, args.m, args.out, man), args.seed)
    man.data["result"] = {k: rep[k] for k in ("k_est", "k_check_passed", "converged",
                                               "anomaly_mean")}
    man.close("done")
    print(f"K_est={rep['k_est']} anomaly={rep['anomaly_mean']:.4f} "
          f"nodes={rep['n_nodes']} edges={rep['n_edges']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.labels and len(args.labels) != len(args.generated):
        raise ConfigError("--labels needs one name per --generated entry")
    if args.dry_run:
        print(f"would evaluate {len(args.generated)} graph(s) against {args.original}")
        return EXIT_OK
    args.out.parent.mkdir(parents=True, exist_ok=True)
    original = load_graph(resolve_graph(args.original))
    model = GmmModel.load(args.model / "gmm.json") if args.model else None
    names = args.labels or [str(p) for p in args.generated]
    rows = _run_stage(None, "eval", lambda: stage_eval(original, args.generated, model,
                                                      args.out, args.kernel_sigma, names))
    print(format_table(names, rows))
    if len(rows) > 1:
        print("\n".join(trend_lines(rows)))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    ms = list(args.m)
    plan = ["sbm-gen (1 graph)" if args.graph is None else f"load {args.graph}",
            f"train k={args.k_candidates} d={args.d_candidates}",
            *[f"augment M={m}" for m in ms], "eval"]
    if args.dry_run:
        print("plan:\n" + "\n".join(f"  {i + 1}. {s}" for i, s in enumerate(plan)))
        return EXIT_OK
    _prepare_out(args.out, args.force)
    man = RunManifest(args.out / "manifest.json", "pipeline", _config_snapshot(args))
    man.data["plan"] = plan
    if args.graph is None:
        data = args.out / "data"
        gen_args = argparse.Namespace(**{**vars(args), "train": 1, "val": 0, "test": 0})
        _run_stage(man, "sbm-gen", lambda: stage_sbm_gen(gen_args, data, man), args.seed)
        stem = data / "train" / "graph_000"
    else:
        stem = resolve_graph(args.graph)
    graph = _run_stage(man, "load", lambda: load_graph(stem))
    model_dir = args.out / "model"
    model_dir.mkdir(exist_ok=True)
    _run_stage(man, "train", lambda: stage_train(args, graph, model_dir, man), args.seed)
    aug_dirs = []
    for m in ms:
        d = args.out / f"augment_m{m}"
        d.mkdir(exist_ok=True)
        stage = f"augment_m{m}"
        _run_stage(man, stage, lambda: stage_augment(args, model_dir, m, d, man, stage),
                   args.seed)
        aug_dirs.append(d)
    out_csv = args.out / "metrics.csv"
    names = [f"M={m}" for m in ms]
    rows = _run_stage(man, "eval", lambda: stage_eval(graph, aug_dirs, None, out_csv,
                                                      args.kernel_sigma, names))
    man.add("eval", out_csv)
    table = format_table(names, rows)
    if len(rows) > 1:
        table += "\n" + "\n".join(trend_lines(rows))
    (args.out / "metrics.txt").write_text(table + "\n")
    man.add("eval", args.out / "metrics.txt")
    man.close("done")
    print(table)
    return EXIT_OK


COMMANDS = {"sbm-gen": cmd_sbm_gen, "train": cmd_train, "augment": cmd_augment,
            "eval": cmd_eval, "pipeline": cmd_pipeline}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"gca: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:          # argparse usage errors exit with 2 already
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except BaseException as exc:
        status = ("not_converged" if isinstance(exc, (NotConvergedError, ResampleExhaustedError))
                  else "interrupted" if isinstance(exc, KeyboardInterrupt) else "failed")
        for man in list(_OPEN_MANIFESTS):
            man.close(status)
        return _exit_code(exc)


def _exit_code(exc: BaseException) -> int:
    try:
        raise exc
    except ConfigError as exc:
        print(f"gca: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        # raised before any stage started: bad values or missing inputs
        print(f"gca: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotConvergedError, ResampleExhaustedError) as exc:
        print(f"gca: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except StageError as exc:
        print(f"gca: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except KeyboardInterrupt:
        print("gca: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
