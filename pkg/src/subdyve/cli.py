"""Command-line pipeline driver.

Every subcommand reads its declared inputs, writes its outputs into the
``--out`` directory and records a JSON manifest next to them
(``<stage>.manifest.json``) holding input/output hashes, the configuration
slice it used and library versions. A stage whose manifest still matches its
inputs, configuration and outputs is skipped. An input that an upstream
manifest in the same directory describes must still carry the hash recorded
there.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

__all__ = ["ConfigError", "DataError", "RunConfig", "SCHEMA", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


class DataError(ValueError):
    """Missing, malformed or hash-mismatched input."""


# ---------------------------------------------------------------------------
# configuration schema


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "pi0") else float(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    doc: str


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, list):
        return ", ".join(_fmt(v) for v in value)
    if value is None:
        return "none"
    return str(value)


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key(int, 0, "rng seed shared by every stochastic stage"),
    },
    "paths": {
        "compounds": Key(str, "", "screening pool, <id>\\t<smiles>"),
        "seeds": Key(str, "", "known actives, one compound id per line"),
        "negatives": Key(str, "", "curated negatives for mining, <id>\\t<smiles>"),
        "external": Key(str, "", "optional external embedding TSV"),
        "truth": Key(str, "", "evaluation labels, <id>\\t<0|1>"),
    },
    "mining": {
        "walk_length": Key(int, 6, "random-walk length L"),
        "restarts": Key(int, 20, "walks per start atom R"),
        "rounds": Key(int, 5, "policy-update rounds T"),
        "eps": Key(float, 1.0, "smoothing of the doublet ratio"),
        "holdout_frac": Key(float, 0.2, "fold used to pick the best round"),
        "min_importance": Key(float, 1e-4, "information-gain floor for alerts"),
        "max_entropy": Key(float, 0.5, "support-entropy ceiling"),
        "d": Key(int, 100, "fingerprint dimension"),
        "k_max": Key(int, 3, "largest subgraph combination"),
        "min_supp": Key(float, 0.02, "minimum positive support"),
        "beam": Key(int, 64, "combinations extended per level"),
    },
    "network": {
        "k": Key(int, 10, "neighbours kept per node"),
        "sim_min": Key(float, 0.0, "cosine floor for an edge"),
    },
    "propagation": {
        "alpha": Key(float, 0.2, "restart probability"),
        "tol": Key(float, 1e-9, "L1 convergence tolerance"),
        "max_iter": Key(int, 1000, "iteration cap"),
    },
    "gnn": {
        "lambda_rank": Key(float, 0.3, "pairwise ranking weight"),
        "lambda_contrast": Key(float, 0.6, "contrastive weight"),
        "margin": Key(float, 0.5, "ranking margin"),
        "gamma_np": Key(float, 5.0, "propagation-score node weighting"),
        "temperature": Key(float, 0.5, "contrastive temperature"),
        "lr": Key(float, 8e-4, "Adam learning rate"),
        "weight_decay": Key(float, 1.57e-5, "L2 weight decay"),
        "epochs": Key(int, 50, "epochs per refinement iteration"),
        "pos_weight_on": Key(str, "positive", "class carrying the imbalance weight"),
    },
    "refine": {
        "max_iter": Key(int, 6, "refinement iterations M"),
        "patience": Key(int, 3, "early-stopping patience"),
        "n_splits": Key(int, 2, "stratified splits N"),
        "holdout_frac": Key(float, 0.1, "held-out seed fraction"),
        "tau_fdr": Key(float, 0.1, "lfdr threshold"),
        "beta": Key(float, 0.7, "seed-weight update rate"),
        "baseline": Key(_opt_float, None, "sigmoid baseline b; none means pi0"),
        "sigmoid_arg": Key(str, "logit", "logit or z"),
        "one_sided": Key(_bool, True, "only positive z-scores may enter"),
        "mask_train_seeds": Key(_bool, True, "exclude s1 from the loss"),
        "include_initial": Key(_bool, True, "initial propagation competes as iteration 0"),
        "pca_k": Key(int, 16, "PCA components for seed similarity"),
        "lfdr_bins": Key(int, 50, "histogram bins"),
        "lfdr_degree": Key(int, 7, "Poisson polynomial degree"),
        "lfdr_ridge": Key(float, 1e-4, "Poisson ridge"),
        "pi0": Key(float, 0.9, "prior null fraction"),
        "ef_pct": Key(float, 1.0, "EF cut-off used for early stopping"),
        "bedroc_alpha": Key(float, 20.0, "BEDROC tie-breaker alpha"),
    },
    "metrics": {
        "bedroc_alpha": Key(_floats, [20.0, 85.0], "BEDROC alphas to report"),
        "ef_pct": Key(_floats, [1.0, 5.0], "EF cut-offs in percent"),
        "bootstrap": Key(int, 0, "bootstrap resamples; 0 disables"),
    },
    "synth": {
        "n_active": Key(int, 20, "planted actives in the pool"),
        "n_inactive": Key(int, 180, "motif-free pool compounds"),
        "n_seeds": Key(int, 8, "actives revealed as seeds"),
        "n_negatives": Key(int, 20, "motif-free negatives for mining"),
        "motif": Key(str, "NC=O", "planted motif"),
        "scaffold_len": Key(int, 10, "scaffold atoms"),
    },
}


class RunConfig:
    """Sectioned configuration with schema defaults; unknown keys are rejected."""

    def __init__(self, values: dict[str, dict[str, object]] | None = None):
        self.values = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
        for section, entries in (values or {}).items():
            for k, v in entries.items():
                self.set(section, k, v)

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]; known: {', '.join(SCHEMA)}")
        if key not in SCHEMA[section]:
            raise ConfigError(
                f"unknown key '{key}' in [{section}]; known: {', '.join(SCHEMA[section])}"
            )
        if isinstance(value, str):
            try:
                value = SCHEMA[section][key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
        self.values[section][key] = value

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_ini(text)

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for k, key in keys.items():
                lines.append(f"# {key.doc}")
                lines.append(f"{k} = {_fmt(self.values[section][k])}")
            lines.append("")
        return "\n".join(lines)

    def snapshot(self, *sections: str) -> dict:
        return {s: dict(self.values[s]) for s in ("run",) + sections}

    def validate(self) -> None:
        r, g = self.values["refine"], self.values["gnn"]
        checks = [
            (0 < r["holdout_frac"] < 1, "[refine] holdout_frac must lie in (0, 1)"),
            (0 < r["tau_fdr"] < 1, "[refine] tau_fdr must lie in (0, 1)"),
            (0 < r["pi0"] <= 1, "[refine] pi0 must lie in (0, 1]"),
            (r["max_iter"] >= 1 and r["patience"] >= 1 and r["n_splits"] >= 1, "[refine] max_iter, patience and n_splits must be >= 1"),
            (r["sigmoid_arg"] in ("logit", "z"), "[refine] sigmoid_arg must be 'logit' or 'z'"),
            (0 <= g["lambda_rank"] <= 1 and 0 <= g["lambda_contrast"] <= 1, "[gnn] lambda_* must lie in [0, 1]"),
            (g["temperature"] > 0, "[gnn] temperature must be positive"),
            (g["pos_weight_on"] in ("positive", "negative"), "[gnn] pos_weight_on must be 'positive' or 'negative'"),
            (0 <= self.values["propagation"]["alpha"] <= 1, "[propagation] alpha must lie in [0, 1]"),
            (self.values["propagation"]["tol"] > 0, "[propagation] tol must be positive"),
            (self.values["mining"]["d"] >= 1, "[mining] d must be >= 1"),
            (self.values["metrics"]["bootstrap"] >= 0, "[metrics] bootstrap must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def refine_config(self):
        from .gnn import LossWeights
        from .refine import RefineConfig

        r, g, p = self.values["refine"], self.values["gnn"], self.values["propagation"]
        loss = LossWeights(
            lambda_rank=g["lambda_rank"],
            lambda_contrast=g["lambda_contrast"],
            margin=g["margin"],
            gamma_np=g["gamma_np"],
            temperature=g["temperature"],
            lr=g["lr"],
            weight_decay=g["weight_decay"],
            pos_weight_on=g["pos_weight_on"],
        )
        return RefineConfig(
            **{k: r[k] for k in r},
            epochs=g["epochs"],
            alpha=p["alpha"],
            tol=p["tol"],
            loss=loss,
        )


# ---------------------------------------------------------------------------
# manifests


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "subdyve": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
    }


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def check_upstream(path: Path) -> None:
    """Compare ``path`` against any manifest in its directory that produced it."""
    for manifest in sorted(path.parent.glob("*.manifest.json")):
        try:
            data = json.loads(manifest.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        want = data.get("outputs", {}).get(path.name)
        if want is not None and want != sha256(path):
            raise DataError(
                f"{path} changed since stage '{data.get('stage')}' wrote it "
                f"(hash differs from {manifest.name}); rerun that stage"
            )


class Stage:
    """Input resolution, cache check and manifest writing for one subcommand."""

    def __init__(self, name: str, out: Path, cfg: RunConfig, sections: tuple[str, ...]):
        self.name = name
        self.out = out
        self.config = cfg.snapshot(*sections)
        self.inputs: dict[str, Path] = {}

    def need(self, role: str, path) -> Path:
        if not path:
            raise DataError(f"{self.name}: no {role} file given (flag or [paths] {role})")
        p = Path(path)
        if not p.is_file():
            raise DataError(f"{self.name}: {role} file {p} does not exist")
        check_upstream(p)
        if p.name in {q.name for q in self.inputs.values()}:
            raise DataError(f"{self.name}: two inputs share the basename {p.name}")
        self.inputs[role] = p
        return p

    @property
    def manifest_path(self) -> Path:
        return self.out / f"{self.name}.manifest.json"

    def _input_hashes(self) -> dict:
        return {p.name: sha256(p) for p in self.inputs.values()}

    def cached(self) -> bool:
        if not self.manifest_path.is_file():
            return False
        try:
            old = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if old.get("inputs") != self._input_hashes():
            return False
        if old.get("config") != json.loads(json.dumps(self.config)):
            return False
        if old.get("versions") != _versions():
            return False
        for name, digest in old.get("outputs", {}).items():
            p = self.out / name
            if not p.is_file() or sha256(p) != digest:
                return False
        return True

    def finish(self, outputs: list[Path]) -> None:
        _dump_json(
            self.manifest_path,
            {
                "stage": self.name,
                "inputs": self._input_hashes(),
                "outputs": {p.name: sha256(p) for p in outputs},
                "config": self.config,
                "versions": _versions(),
            },
        )


# ---------------------------------------------------------------------------
# small readers


def read_ids(path) -> list[str]:
    ids = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                ids.append(line.split("\t")[0])
    return ids


def read_truth(path) -> dict[str, bool]:
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected '<id>\\t<0|1>'")
            truth[parts[0]] = parts[1] == "1"
    return truth


def read_ranking(path) -> tuple[list[str], list[float]]:
    ids, scores = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                ids.append(parts[0])
                scores.append(float(parts[1]))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: expected '<id>\\t<score>\\t<rank>'") from exc
    return ids, scores


def _parse_all(records) -> list:
    from .chem import parse_smiles

    return [parse_smiles(smi, cid) for cid, smi in records]


def _index_of(ids: list[str], wanted: list[str], what: str) -> list[int]:
    pos = {cid: i for i, cid in enumerate(ids)}
    missing = [cid for cid in wanted if cid not in pos]
    if missing:
        raise DataError(f"{len(missing)} {what} ids not found, first: {missing[0]}")
    return sorted({pos[cid] for cid in wanted})


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig, out: Path) -> list[Path]:
    import numpy as np

    from .chem import write_compounds
    from .synth import gen_planted_corpus

    s = cfg["synth"]
    seed = cfg["run"]["seed"]
    corpus = gen_planted_corpus(s["n_active"], s["n_inactive"] + s["n_negatives"], s["motif"], s["scaffold_len"], seed)
    if s["n_seeds"] > s["n_active"]:
        raise ConfigError("[synth] n_seeds exceeds n_active")
    records = corpus.records()
    actives = records[: s["n_active"]]
    inactive = records[s["n_active"] :]
    negatives, pool_inactive = inactive[: s["n_negatives"]], inactive[s["n_negatives"] :]
    rng = np.random.default_rng([seed, 0x5E])
    pool = actives + pool_inactive
    pool = [pool[i] for i in rng.permutation(len(pool))]
    seeds = sorted(actives[i][0] for i in rng.permutation(len(actives))[: s["n_seeds"]])
    active_ids = {cid for cid, _ in actives}

    paths = [out / "compounds.tsv", out / "negatives.tsv", out / "seeds.txt", out / "truth.tsv"]
    write_compounds(paths[0], pool)
    write_compounds(paths[1], negatives)
    paths[2].write_text("".join(f"{cid}\n" for cid in seeds), encoding="utf-8")
    paths[3].write_text("".join(f"{cid}\t{int(cid in active_ids)}\n" for cid, _ in pool), encoding="utf-8")
    return paths


def cmd_mine(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    from .chem import read_compounds
    from .mining import build_discs, mine_patterns, select_structural_alerts, write_discs

    m = cfg["mining"]
    pool = dict(read_compounds(stage.inputs["compounds"]))
    seeds = read_ids(stage.inputs["seeds"])
    missing = [cid for cid in seeds if cid not in pool]
    if missing:
        raise DataError(f"seed {missing[0]} is not in the compound file")
    pos = _parse_all([(cid, pool[cid]) for cid in seeds])
    neg = _parse_all(read_compounds(stage.inputs["negatives"]))
    patterns = mine_patterns(pos, neg, m["walk_length"], m["restarts"], m["rounds"], cfg["run"]["seed"], m["eps"], m["holdout_frac"])
    alerts = select_structural_alerts(patterns, [True] * len(pos) + [False] * len(neg), m["min_importance"], m["max_entropy"])
    if not alerts:
        raise DataError("no mined pattern passed the structural-alert filter; lower [mining] min_importance or raise max_entropy")
    discs = build_discs(alerts, pos, neg, m["d"], m["k_max"], m["min_supp"], m["max_entropy"], m["beam"])
    if not discs:
        raise DataError("no subgraph combination reached [mining] min_supp")
    path = stage.out / "discs.tsv"
    write_discs(path, discs)
    return [path]


def cmd_fingerprint(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    from .chem import read_compounds
    from .mining import fingerprint_matrix, read_discs, write_fingerprints

    records = read_compounds(stage.inputs["compounds"])
    discs = read_discs(stage.inputs["discs"])
    fps = fingerprint_matrix(_parse_all(records), discs)
    path = stage.out / "fingerprints.tsv"
    write_fingerprints(path, [cid for cid, _ in records], fps)
    return [path]


def cmd_network(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    from .mining import read_fingerprints
    from .simnet import build_graph, write_graph

    ids, fps = read_fingerprints(stage.inputs["fingerprints"])
    n = cfg["network"]
    g = build_graph(fps, n["k"], n["sim_min"], ids)
    paths = [stage.out / "edges.tsv", stage.out / "nodes.tsv"]
    write_graph(paths[0], paths[1], g)
    return paths


def cmd_propagate(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    import numpy as np

    from .propagate import propagate, write_scores
    from .simnet import column_normalize, read_graph

    g = read_graph(stage.inputs["edges"], stage.inputs["nodes"])
    seeds = _index_of(g.node_ids, read_ids(stage.inputs["seeds"]), "seed")
    p0 = np.zeros(g.n_nodes)
    p0[seeds] = 1.0
    p = cfg["propagation"]
    scores = propagate(column_normalize(g), p0, p["alpha"], p["tol"], p["max_iter"])
    path = stage.out / "propagation.tsv"
    write_scores(path, g.node_ids, scores, exclude=seeds)
    return [path]


def cmd_refine(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    from .features import read_embeddings
    from .mining import read_fingerprints
    from .propagate import write_scores
    from .refine import run_subdyve, write_trace
    from .simnet import read_graph

    g = read_graph(stage.inputs["edges"], stage.inputs["nodes"])
    fp_ids, fps = read_fingerprints(stage.inputs["fingerprints"])
    _index_of(fp_ids, g.node_ids, "network node")
    row = {cid: i for i, cid in enumerate(fp_ids)}
    fps = fps[[row[cid] for cid in g.node_ids]]
    seeds = _index_of(g.node_ids, read_ids(stage.inputs["seeds"]), "seed")
    if len(seeds) < 2:
        raise DataError("refinement needs at least two seeds to split")
    external = None
    if "external" in stage.inputs:
        external, _ = read_embeddings(stage.inputs["external"])
    res = run_subdyve(g, fps, seeds, cfg.refine_config(), seed=cfg["run"]["seed"], external=external)
    paths = [stage.out / "ranking.tsv", stage.out / "trace.tsv", stage.out / "weights.tsv"]
    write_scores(paths[0], g.node_ids, res.scores, exclude=seeds)
    write_trace(paths[1], res.splits)
    with open(paths[2], "w", encoding="utf-8") as fh:
        for cid, w in zip(g.node_ids, res.weights):
            if w > 0:
                fh.write(f"{cid}\t{float(w):.17g}\n")
    return paths


def cmd_eval(args, cfg: RunConfig, stage: Stage) -> list[Path]:
    from functools import partial

    from .metrics import auroc, bedroc, bootstrap, enrichment_factor, ranked_list

    ids, scores = read_ranking(stage.inputs["ranking"])
    truth = read_truth(stage.inputs["truth"])
    unknown = [cid for cid in ids if cid not in truth]
    if unknown:
        raise DataError(f"{len(unknown)} ranked ids have no label, first: {unknown[0]}")
    rl = ranked_list(ids, scores, [cid for cid in ids if truth[cid]])
    m = cfg["metrics"]
    metrics = {}
    for a in m["bedroc_alpha"]:
        metrics[f"bedroc_{_fmt(a)}"] = partial(bedroc, alpha=a)
    for x in m["ef_pct"]:
        metrics[f"ef_{_fmt(x)}pct"] = partial(enrichment_factor, pct=x)
    metrics["auroc"] = auroc
    report = {"N": rl.N, "n_active": rl.n, "metrics": {k: f(rl) for k, f in metrics.items()}}
    if m["bootstrap"]:
        report["bootstrap"] = {
            k: dict(zip(("mean", "sd"), bootstrap(rl, f, m["bootstrap"], cfg["run"]["seed"])))
            for k, f in metrics.items()
        }
    report["config"] = stage.config
    path = stage.out / "report.json"
    _dump_json(path, report)
    return [path]


# inputs per stage: role -> (flag, [paths] key or None, default basename in --out)
STAGES = {
    "mine": (cmd_mine, ("mining",), {
        "compounds": ("paths", "compounds.tsv"),
        "seeds": ("paths", "seeds.txt"),
        "negatives": ("paths", "negatives.tsv"),
    }),
    "fingerprint": (cmd_fingerprint, (), {
        "compounds": ("paths", "compounds.tsv"),
        "discs": (None, "discs.tsv"),
    }),
    "network": (cmd_network, ("network",), {"fingerprints": (None, "fingerprints.tsv")}),
    "propagate": (cmd_propagate, ("propagation",), {
        "edges": (None, "edges.tsv"),
        "nodes": (None, "nodes.tsv"),
        "seeds": ("paths", "seeds.txt"),
    }),
    "refine": (cmd_refine, ("propagation", "gnn", "refine"), {
        "edges": (None, "edges.tsv"),
        "nodes": (None, "nodes.tsv"),
        "fingerprints": (None, "fingerprints.tsv"),
        "seeds": ("paths", "seeds.txt"),
        "external": ("paths", None),
    }),
    "eval": (cmd_eval, ("metrics",), {
        "ranking": (None, "ranking.tsv"),
        "truth": ("paths", "truth.tsv"),
    }),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; their copies must not reset values
    # given before the subcommand name
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="INI configuration file")
    common.add_argument("--seed", type=int, default=d(None), help="rng seed (overrides [run] seed)")
    common.add_argument("--out", default=d("."), help="output directory (default: current)")
    common.add_argument("--threads", type=int, default=d(None), help="BLAS thread cap")
    common.add_argument("--force", action="store_true", default=d(False), help="ignore a matching manifest and rerun")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="subdyve", description=__doc__.split("\n")[0], parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("synth", parents=[common], help="write a planted-motif screening problem")
    sp.add_argument("--n-active", type=int)
    sp.add_argument("--n-inactive", type=int)
    sp.add_argument("--n-seeds", type=int)
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    for name, (_, _, roles) in STAGES.items():
        sp = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        for role in roles:
            sp.add_argument(f"--{role}", help=f"{role} file")
        if name == "eval":
            sp.add_argument("--bootstrap", type=int, help="bootstrap resamples (overrides [metrics])")
    return parser


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.command == "synth":
        for key in ("n_active", "n_inactive", "n_seeds"):
            if getattr(args, key) is not None:
                cfg.set("synth", key, getattr(args, key))
    if getattr(args, "bootstrap", None) is not None:
        cfg.set("metrics", "bootstrap", args.bootstrap)
    cfg.validate()

    if args.command == "config":
        sys.stdout.write(cfg.to_ini())
        return EXIT_OK

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "synth":
        stage = Stage("synth", out, cfg, ("synth",))
        if not args.force and stage.cached():
            print("synth: up to date")
            return EXIT_OK
        stage.finish(cmd_synth(args, cfg, out))
        print(f"synth: wrote {out}")
        return EXIT_OK

    func, sections, roles = STAGES[args.command]
    stage = Stage(args.command, out, cfg, sections)
    for role, (section, default) in roles.items():
        path = getattr(args, role, None) or (cfg[section].get(role) if section else None)
        if not path and default:
            path = out / default
        if role == "external" and not path:
            continue
        stage.need(role, path)
    if not args.force and stage.cached():
        print(f"{args.command}: up to date")
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        outputs = func(args, cfg, stage)
    stage.finish(outputs)
    print(f"{args.command}: wrote {', '.join(p.name for p in outputs)}")
    return EXIT_OK


def main(argv=None) -> int:
    from .gnn import GcnDivergenceError
    from .lfdr import DegenerateScoreError, LfdrFitError
    from .metrics import DegenerateMetricError
    from .propagate import NonConvergenceError

    numerical = (GcnDivergenceError, LfdrFitError, DegenerateScoreError, NonConvergenceError, FloatingPointError)
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except numerical as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DegenerateMetricError as exc:
        print(f"degenerate metric: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
