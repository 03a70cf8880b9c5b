"""Experiment configuration, model caching and the end-to-end experiment runners."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import __version__, baselines, data, independence, levelset, mfep, svg
from .data import ConfigError
from .dpa import DpaModel, TrainConfig, train_dpa

log = logging.getLogger(__name__)

EXPERIMENTS = ("score_alignment", "mueller_brown", "mfep_table", "independence_table", "crt")
ALIGNMENT_DATASETS = ("standard_normal", "trimodal_mixture")
MODEL_KINDS = ("dpa", *baselines.PRESETS)
OUT_ENV = "DPA_LAB_OUT"


# --- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dataset: str | None = None
    seeds: tuple = (42,)
    models: tuple = ("dpa",)
    beta: float | None = None
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    lr_schedule: str = "constant"
    hidden: int | None = None
    hidden_layers: int | None = None
    m: int = 2
    n_samples: int = 10_000
    kT: float = 8.0
    density_cutoff: float = 0.005
    method: str = "root_find"
    step: float = 0.02
    crt_b: int = 200
    crt_reps: int = 50
    crt_subsample: int = 200
    crt_alt_noise: float = 0.05
    n_trees: int = 500
    out: str | None = None
    parallel_seeds: int = 1

    NON_SEMANTIC = ("out", "parallel_seeds")

    def semantic(self) -> dict:
        d = dataclasses.asdict(self)
        for k in self.NON_SEMANTIC:
            d.pop(k)
        d["seeds"], d["models"] = list(self.seeds), list(self.models)
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def header(self) -> str:
        return f"config_hash={self.config_hash} version={__version__}"

    def out_dir(self) -> FsPath:
        if self.out:
            return FsPath(self.out)
        root = FsPath(os.environ.get(OUT_ENV, "runs"))
        return root / f"{self.experiment}-{self.config_hash}"


# per-experiment network and training defaults
PRESETS = {
    "score_alignment": dict(dataset="standard_normal", beta=2.0, epochs=150, batch_size=500, lr=1e-3,
                            hidden=256, hidden_layers=2),
    "mueller_brown": dict(dataset="mueller_brown", beta=2.0, epochs=200, batch_size=1000, lr=1e-3,
                          hidden=100, hidden_layers=2),
    "mfep_table": dict(dataset="mueller_brown", beta=2.0, epochs=200, batch_size=1000, lr=1e-3,
                       hidden=100, hidden_layers=2, models=("dpa", "ae")),
    "independence_table": dict(dataset="s_curve", beta=1.0, epochs=1000, batch_size=128, lr=1e-3,
                               hidden=100, hidden_layers=2),
    "crt": dict(dataset="gaussian_line", beta=1.0, epochs=1000, batch_size=128, lr=1e-3,
                hidden=100, hidden_layers=2),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_seeds(text: str) -> tuple:
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(s) for s in text.split(",") if s.strip())


def _coerce(name: str, value):
    if value is None:
        return None
    t = str(_FIELD_TYPES[name])
    if name == "seeds":
        return value if isinstance(value, tuple) else parse_seeds(value)
    if name == "models":
        return value if isinstance(value, tuple) else tuple(s.strip() for s in str(value).split(",") if s.strip())
    if t.startswith("int"):
        return int(value)
    if t.startswith("float"):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        parser.read_string("[run]\n" + fh.read())
    return dict(parser["run"])


def make_config(experiment: str, values: dict) -> ExperimentConfig:
    """Merge preset defaults with ``values``; raises ConfigError listing every bad field."""
    errors = []
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    merged = dict(PRESETS[experiment])
    for k, v in values.items():
        if v is None:
            continue
        k = k.replace("-", "_")
        if k not in _FIELD_TYPES or k == "experiment":
            errors.append(f"{k}: unknown field")
            continue
        try:
            merged[k] = _coerce(k, v)
        except (TypeError, ValueError) as exc:
            errors.append(f"{k}: cannot parse {v!r} ({exc})")
    cfg = ExperimentConfig(experiment=experiment, **merged)
    errors += validate(cfg)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def validate(cfg: ExperimentConfig) -> list[str]:
    errs = []
    if not cfg.seeds:
        errs.append("seeds: must be nonempty")
    if cfg.experiment == "score_alignment" and cfg.dataset not in ALIGNMENT_DATASETS:
        errs.append(f"dataset: {cfg.dataset!r} has no analytic score; choose from {', '.join(ALIGNMENT_DATASETS)}")
    if cfg.experiment in ("independence_table", "crt") and cfg.dataset not in data.MANIFOLDS:
        errs.append(f"dataset: unknown manifold {cfg.dataset!r}; choose from {', '.join(sorted(data.MANIFOLDS))}")
    if cfg.experiment in ("mueller_brown", "mfep_table") and cfg.dataset != "mueller_brown":
        errs.append("dataset: must be mueller_brown")
    bad = [m for m in cfg.models if m not in MODEL_KINDS]
    if bad:
        errs.append(f"models: unknown {', '.join(bad)}; choose from {', '.join(MODEL_KINDS)}")
    if cfg.experiment == "mfep_table" and len(cfg.seeds) < 2:
        errs.append("seeds: the seed protocol drops the worst seed, give at least 2")
    if not 0 < cfg.beta <= 2:
        errs.append("beta: must lie in (0, 2]")
    for name in ("epochs", "batch_size", "hidden", "hidden_layers", "n_samples", "parallel_seeds", "n_trees"):
        if getattr(cfg, name) < 1:
            errs.append(f"{name}: must be >= 1")
    if cfg.m < 2:
        errs.append("m: must be >= 2")
    if cfg.lr <= 0:
        errs.append("lr: must be positive")
    if cfg.lr_schedule not in ("constant", "cosine"):
        errs.append("lr_schedule: choose constant or cosine")
    if cfg.method not in ("root_find", "gradient_follow"):
        errs.append("method: choose root_find or gradient_follow")
    if cfg.crt_b < 100:
        errs.append("crt_b: must be >= 100")
    return errs


# --- manifests --------------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    seeds: list
    seconds: float
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, out_dir: FsPath):
        missing = [a for a in self.artifacts if not (out_dir / a).exists()]
        if missing:
            raise RuntimeError(f"artifacts missing on completion: {missing}")
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, default=float)


# --- datasets and cached training ------------------------------------------------------


def load_dataset(cfg: ExperimentConfig, seed: int):
    if cfg.dataset == "standard_normal":
        return data.standard_normal(2, cfg.n_samples, seed), data.standard_normal_distribution(2)
    if cfg.dataset == "trimodal_mixture":
        return data.trimodal_mixture(cfg.n_samples, seed), data.gaussian_mixture_distribution()
    if cfg.dataset == "mueller_brown":
        ds = data.mueller_brown_dataset(cfg.n_samples, seed, kT=cfg.kT)
        return ds, ds.distribution
    return data.manifold_dataset(cfg.dataset, cfg.n_samples, seed), None


def _cache_key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:16]


def fit_dpa(cfg: ExperimentConfig, X: np.ndarray, k_max: int, seed: int, cache_dir: FsPath | None,
            tag: str) -> tuple[DpaModel, np.ndarray | None]:
    """Train a DPA, or load it from ``cache_dir`` when an identical run exists."""
    settings = dict(beta=cfg.beta, hidden=cfg.hidden, hidden_layers=cfg.hidden_layers, epochs=cfg.epochs,
                    batch_size=cfg.batch_size, lr=cfg.lr, m=cfg.m, k_max=k_max)
    if cfg.lr_schedule != "constant":
        settings["lr_schedule"] = cfg.lr_schedule
    path = None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        key = _cache_key("dpa", tag, settings, seed, X.shape, float(X.sum()), __version__)
        path = cache_dir / f"dpa-{tag}-{seed}-{key}.json"
        if path.exists():
            model = DpaModel.load(path)
            curves = np.loadtxt(path.with_suffix(".curves.csv"), delimiter=",", ndmin=2)
            return model, curves
    model = DpaModel(X.shape[1], k_max, beta=cfg.beta, hidden=cfg.hidden, hidden_layers=cfg.hidden_layers,
                     seed=seed)
    res = train_dpa(model, X, TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, m=cfg.m,
                                          seed=seed, lr_schedule=cfg.lr_schedule))
    model.meta = {"tag": tag, "seed": seed, "train_seconds": res.seconds, **settings}
    if path is not None:
        model.save(path, model.meta)
        np.savetxt(path.with_suffix(".curves.csv"), res.curves, delimiter=",")
    return model, res.curves


def fit_baseline(cfg: ExperimentConfig, kind: str, X: np.ndarray, seed: int, cache_dir: FsPath | None):
    preset = baselines.PRESETS[kind]
    # same number of optimizer updates as the DPA, whatever the baseline's own batch size
    updates = cfg.epochs * -(-len(X) // cfg.batch_size)
    config = dataclasses.replace(preset, epochs=max(1, round(updates / -(-len(X) // preset.batch_size))))
    path = None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        key = _cache_key(kind, config.__dict__, seed, X.shape, float(X.sum()), __version__)
        path = cache_dir / f"{kind}-{seed}-{key}.json"
        if path.exists():
            return baselines.BaselineModel.load(path)
    t0 = time.perf_counter()
    model, _ = baselines.train_baseline(kind, X, seed=seed, config=config)
    model.meta = {"train_seconds": time.perf_counter() - t0}
    if path is not None:
        model.save(path, model.meta)
    return model


def _write_curves(path, curves: np.ndarray, header: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "k", "L_k"])
        for e, row in enumerate(curves):
            for k, v in enumerate(row):
                w.writerow([e, k, repr(float(v))])


# --- experiments ------------------------------------------------------------------------


def run_score_alignment(cfg: ExperimentConfig, out: FsPath, cache_dir=None) -> RunManifest:
    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    ds, dist = load_dataset(cfg, seed)
    model, curves = fit_dpa(cfg, ds.samples, 3, seed, cache_dir, cfg.dataset)
    results = levelset.score_alignment(model, dist, density_cutoff=cfg.density_cutoff)
    levelset.write_alignment_csv(out / "alignment_points.csv", results, cfg.header)
    levelset.write_alignment_summary_csv(out / "table1.csv", cfg.dataset, results, cfg.header)
    write_level_sets_csv(out / "level_sets.csv", model, cfg.header)
    model.save(out / "model.json", {"config_hash": cfg.config_hash})
    _write_curves(out / "curves.csv", curves, cfg.header)
    render_alignment(out, out / "alignment.svg")
    summary = {f"component_{r.component}": r.summary for r in results}
    return RunManifest(cfg.config_hash, [seed], time.perf_counter() - t0,
                       ["alignment_points.csv", "table1.csv", "level_sets.csv", "model.json", "curves.csv",
                        "alignment.svg"], summary)


def write_level_sets_csv(path, model, header: str, n_levels: int = 12, grid=None):
    grid = grid or levelset.GridField()
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["component", "level", "polyline", "x", "y"])
        codes = model.encode(grid.points())
        for comp in range(codes.shape[1]):
            levels = np.quantile(codes[:, comp], np.linspace(0.04, 0.96, n_levels))
            for ls in levelset.extract_level_sets(model, comp, levels, grid):
                for pid, poly in enumerate(ls.polylines):
                    for x, y in poly:
                        w.writerow([comp, repr(float(ls.level)), pid, f"{x:.6f}", f"{y:.6f}"])


def reference_mfep(kT: float = 8.0) -> mfep.Path:
    mb = data.MuellerBrown(kT=kT)
    m = mb.minima()
    return mfep.string_method(mb, [m[0], m[2]])


def _encoder_for(cfg, kind, X, seed, cache_dir):
    if kind == "dpa":
        return fit_dpa(cfg, X, 2, seed, cache_dir, "mueller_brown")[0]
    return fit_baseline(cfg, kind, X, seed, cache_dir)


def _write_path_csv(path, pts: np.ndarray, header: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in pts])


def run_mueller_brown(cfg: ExperimentConfig, out: FsPath, cache_dir=None) -> RunManifest:
    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    ds, _ = load_dataset(cfg, seed)
    ref = reference_mfep(cfg.kT)
    model = _encoder_for(cfg, "dpa", ds.samples, seed, cache_dir)
    metrics, path = mfep.evaluate_encoder(model, ref, cfg.method, cfg.step)
    _write_path_csv(out / "mfep.csv", ref.points, cfg.header)
    _write_path_csv(out / "path.csv", path.points, cfg.header)
    data.save_samples_csv(out / "samples.csv", ds.samples, {"seed": seed, "kT": cfg.kT})
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write(f"# {cfg.header}\n")
        w = csv.DictWriter(fh, fieldnames=["truncated", *metrics.as_dict()])
        w.writeheader()
        w.writerow({"truncated": path.truncated, **metrics.as_dict()})
    model.save(out / "model.json", {"config_hash": cfg.config_hash})
    render_mfep(out, out / "mfep.svg")
    return RunManifest(cfg.config_hash, [seed], time.perf_counter() - t0,
                       ["mfep.csv", "path.csv", "samples.csv", "metrics.csv", "model.json", "mfep.svg"],
                       metrics.as_dict())


def run_mfep_table(cfg: ExperimentConfig, out: FsPath, cache_dir=None) -> RunManifest:
    t0 = time.perf_counter()
    ref = reference_mfep(cfg.kT)
    cache_dir = cache_dir or out / "models"
    datasets = {}

    def samples(seed):
        if seed not in datasets:
            datasets[seed] = load_dataset(cfg, seed)[0].samples
        return datasets[seed]

    for s in cfg.seeds:  # generate up front so worker threads only train
        samples(s)

    def train_and_evaluate(kind, seed):
        model = _encoder_for(cfg, kind, samples(seed), seed, cache_dir)
        return mfep.evaluate_encoder(model, ref, cfg.method, cfg.step)[0]

    ordered = sorted(cfg.seeds)
    if ordered != list(range(ordered[0], ordered[0] + len(ordered))):
        raise ConfigError("seeds: the seed protocol needs a contiguous range")
    if cfg.parallel_seeds > 1:
        with ThreadPoolExecutor(cfg.parallel_seeds) as pool:
            summaries, results = mfep.seed_protocol(cfg.models, len(ordered), train_and_evaluate, ordered[0],
                                                    map_fn=pool.map)
    else:
        summaries, results = mfep.seed_protocol(cfg.models, len(ordered), train_and_evaluate, ordered[0])
    mfep.write_table2_csv(out / "table2.csv", summaries, cfg.header)
    with open(out / "seeds.csv", "w", newline="") as fh:
        fh.write(f"# {cfg.header}\n")
        w = csv.writer(fh)
        w.writerow(["model", "seed", *mfep.METRIC_FIELDS, "r2", "error"])
        for r in results:
            vals = [getattr(r.metrics, f) for f in mfep.METRIC_FIELDS] + [r.metrics.r2] if r.metrics else \
                [""] * (len(mfep.METRIC_FIELDS) + 1)
            w.writerow([r.kind, r.seed, *vals, r.error or ""])
    summary = {s.kind: {"mean": s.mean, "sd": s.sd, "kept": s.kept_seeds, "dropped": s.dropped_seed,
                        "failed": s.failed_seeds} for s in summaries}
    summary["per_seed_components"] = {s.kind: [r.metrics.component for r in results
                                               if r.kind == s.kind and r.seed in s.kept_seeds]
                                      for s in summaries}
    return RunManifest(cfg.config_hash, list(cfg.seeds), time.perf_counter() - t0, ["table2.csv", "seeds.csv"],
                       summary)


def latent_split(model: DpaModel, X: np.ndarray, K: int):
    codes = model.encode(X)
    return codes[:, :K], codes[:, K:]


def dependence_extras(Z: np.ndarray, U: np.ndarray, X: np.ndarray, seed: int = 0, max_n: int = 2000) -> list[dict]:
    """Per latent: dcor and MI_max with the data, raw and conditioned on the other latents."""
    from sklearn.preprocessing import StandardScaler

    rng = np.random.default_rng(seed)
    idx = rng.choice(len(X), min(max_n, len(X)), replace=False)
    codes = StandardScaler().fit_transform(np.hstack([Z, U])[idx])
    Xs = StandardScaler().fit_transform(X[idx])
    rows = []
    for i in range(codes.shape[1]):
        others = np.delete(codes, i, axis=1)
        zi = codes[:, i]
        rows.append({
            "latent": i,
            "role": "informative" if i < Z.shape[1] else "extraneous",
            "dcor": independence.distance_correlation(zi, Xs),
            "dcor_cond": independence.distance_correlation(zi, Xs, conditional_on=others),
            "mi_max": independence.knn_mutual_information(zi, Xs),
            "mi_max_cond": independence.knn_mutual_information(independence._residualize(zi[:, None], others),
                                                               independence._residualize(Xs, others)),
        })
    return rows


def run_independence_table(cfg: ExperimentConfig, out: FsPath, cache_dir=None) -> RunManifest:
    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    ds, _ = load_dataset(cfg, seed)
    K = ds.intrinsic_dim
    model, curves = fit_dpa(cfg, ds.samples, K + 1, seed, cache_dir, f"{cfg.dataset}-b{cfg.beta}")
    test, _ = load_dataset(cfg, seed + 1000)
    Z, U = latent_split(model, test.samples, K)
    rep = independence.determinism_report(cfg.dataset, cfg.beta, Z, U, seed=seed, n_trees=cfg.n_trees)
    independence.write_table3_csv(out / "table3.csv", [rep], cfg.header)
    extras = dependence_extras(Z, U, test.samples, seed)
    with open(out / "extras.csv", "w", newline="") as fh:
        fh.write(f"# {cfg.header}\n")
        w = csv.DictWriter(fh, fieldnames=list(extras[0]))
        w.writeheader()
        w.writerows(extras)
    losses = model.per_k_losses(test.samples, m=8, noise_seed=seed)
    _write_curves(out / "curves.csv", curves, cfg.header)
    model.save(out / "model.json", {"config_hash": cfg.config_hash})
    summary = {"r2": rep.r2, "id_drop": list(rep.id_drop), "h_u_given_z": rep.h_u_given_z,
               "r2_by_family": rep.r2_by_family, "test_losses": losses.tolist()}
    return RunManifest(cfg.config_hash, [seed], time.perf_counter() - t0,
                       ["table3.csv", "extras.csv", "curves.csv", "model.json"], summary)


def dpa_decoder(model: DpaModel):
    k = model.k_max
    return lambda lat: model.decode(lat[:, :k], noise_seed=0)


def run_crt(cfg: ExperimentConfig, out: FsPath, cache_dir=None) -> RunManifest:
    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    ds, _ = load_dataset(cfg, seed)
    K = ds.intrinsic_dim
    model, _ = fit_dpa(cfg, ds.samples, K + 1, seed, cache_dir, f"{cfg.dataset}-b{cfg.beta}")
    test, _ = load_dataset(cfg, seed + 1000)
    X = test.samples
    Z, U = latent_split(model, X, K)
    decode = dpa_decoder(model)
    kw = dict(B=cfg.crt_b, n_reps=cfg.crt_reps, n_sub=cfg.crt_subsample, seed=seed)
    rep = independence.double_crt(decode, X, Z, U[:, :1], **kw)
    rng = np.random.default_rng(seed + 1)
    U_alt = X[:, :1] + cfg.crt_alt_noise * rng.standard_normal((len(X), 1))
    alt = independence.double_crt(decode, X, Z, U_alt, **kw)
    independence.write_crt_csv(out / "crt.csv", rep, cfg.header)
    independence.write_crt_csv(out / "crt_alternative.csv", alt, cfg.header)
    model.save(out / "model.json", {"config_hash": cfg.config_hash})
    summary = {"ks_D": rep.ks_D, "ks_p": rep.ks_p, "frac_below": rep.frac_below,
               "alternative_frac_below": alt.frac_below}
    return RunManifest(cfg.config_hash, [seed], time.perf_counter() - t0,
                       ["crt.csv", "crt_alternative.csv", "model.json"], summary)


RUNNERS = {
    "score_alignment": run_score_alignment,
    "mueller_brown": run_mueller_brown,
    "mfep_table": run_mfep_table,
    "independence_table": run_independence_table,
    "crt": run_crt,
}


def run(cfg: ExperimentConfig, cache_dir=None) -> RunManifest:
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump({"experiment": cfg.experiment, **cfg.semantic()}, fh, indent=2, sort_keys=True)
    manifest = RUNNERS[cfg.experiment](cfg, out, cache_dir)
    manifest.artifacts.insert(0, "config.json")
    manifest.write(out)
    return manifest


# --- figures -----------------------------------------------------------------------------


class MissingInput(FileNotFoundError):
    pass


def _require(folder: FsPath, names, producer: str):
    missing = [n for n in names if not (folder / n).exists()]
    if missing:
        raise MissingInput(f"{folder}: missing {', '.join(missing)}; produce them with `dpa-lab {producer}`")


def _read_rows(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def render_alignment(folder, out_path):
    folder = FsPath(folder)
    _require(folder, ["config.json", "level_sets.csv"], "run score_alignment --dataset standard_normal")
    dataset = json.loads((folder / "config.json").read_text())["dataset"]
    dist = data.standard_normal_distribution(2) if dataset == "standard_normal" else \
        data.gaussian_mixture_distribution()
    rows = _read_rows(folder / "level_sets.csv")
    bounds = ((-4.0, 4.0), (-4.0, 4.0))
    comps = sorted({int(r["component"]) for r in rows}) or [0, 1]
    grid = levelset.GridField(bounds, 15)
    pts = grid.points()
    keep = dist.density(pts) > 0.005 * dist.density(np.zeros((1, 2)))[0]
    top = float(dist.density(levelset.GridField(bounds, 100).points()).max())
    panels = []
    for comp in comps[:2]:
        panel = svg.Panel(f"latent {comp}", bounds)
        panel.contours(dist.density, top * np.linspace(0.1, 0.9, 5))
        lines: dict = {}
        for r in rows:
            if int(r["component"]) == comp:
                lines.setdefault((r["level"], r["polyline"]), []).append((float(r["x"]), float(r["y"])))
        for poly in lines.values():
            panel.polyline(np.array(poly), stroke="black", width=1.0)
        panel.arrows(pts[keep], dist.score(pts[keep]), stroke="#333")
        panels.append(panel)
    svg.write_svg(out_path, panels)


def render_mfep(folder, out_path):
    folder = FsPath(folder)
    _require(folder, ["mfep.csv", "path.csv"], "run mueller_brown")
    mb = data.MuellerBrown()
    ref = np.array([[float(r["x"]), float(r["y"])] for r in _read_rows(folder / "mfep.csv")])
    path = np.array([[float(r["x"]), float(r["y"])] for r in _read_rows(folder / "path.csv")])
    panel = svg.Panel("Mueller-Brown", ((-1.6, 1.2), (-0.5, 2.1)))
    panel.contours(lambda p: np.minimum(mb.potential(p), 50.0), np.linspace(-140, 40, 13), stroke="#999")
    panel.polyline(ref, stroke="purple", width=2.5)
    panel.polyline(path, stroke="orange", width=1.5, dash="5,3")
    panel.points(mb.minima(), fill="black")
    svg.write_svg(out_path, [panel])


FIGURES = {"alignment": render_alignment, "mfep": render_mfep}
