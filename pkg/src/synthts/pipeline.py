"""End-to-end orchestration: segment -> embed -> encode -> finetune ->
generate -> filter -> decode -> evaluate, with artifacts persisted between
stages so each stage can also run standalone."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backends import (
    BackendError,
    FaultModes,
    GaussianCopulaModel,
    ReferenceBackend,
    RemoteBackend,
    SamplingParams,
    TrainingParams,
)
from .core import (
    DataError,
    InstanceSet,
    ScalerState,
    apply_scaler,
    fit_scaler,
    invert_scaler,
    load_dataset,
)
from .embedding import (
    BasisSystem,
    EmbeddingTable,
    embed,
    fit_basis,
    load_basis,
    load_table,
    reconstruct,
    save_basis,
    save_table,
    variance_retained,
    select_k,
)
from .filtering import FilterState, StopDecision, diversity_score, filter_batch, should_stop
from .metrics import ALL_METRICS, compute_report
from .segmentation import segment
from .textcodec import PromptTemplate, make_inference_prompt, encode_finetune, parse_generation, sample_permutation


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


MODES = ("multisample", "univariate", "multivariate")
BACKENDS = ("reference", "remote")


@dataclass
class RunConfig:
    input_path: str
    out_dir: str
    mode: str = "univariate"
    channels: list[str] | None = None
    length: int = 250
    instances: int = 30
    period: int | str | None = "auto"
    method: str = "fica"
    k: int | None = 3
    variance_target: float | None = None
    conditional: bool = False
    backend: str = "reference"
    remote_url: str | None = None
    temperature: float = 1.0
    batch_size: int = 16
    max_new_tokens: int | None = None
    training: TrainingParams = field(default_factory=TrainingParams)
    stop_threshold: float = 0.1
    target_count: int | None = 100
    max_count: int | None = None            # default 10 * target_count
    max_steps: int = 1000
    precision: int = 4
    metrics: tuple[str, ...] = ALL_METRICS
    bins: int | None = None
    max_lag: int | None = None
    band: int | None = None
    seed: int = 0
    faults: FaultModes = field(default_factory=FaultModes)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.backend == "remote" and not self.remote_url:
            raise ConfigError("remote backend requires remote_url")
        if self.k is None and self.variance_target is None:
            raise ConfigError("either k or variance_target must be set")
        if self.max_count is None:
            cap = self.target_count if self.target_count else 100
            self.max_count = 10 * cap
        if self.conditional and self.mode != "multivariate":
            raise ConfigError("conditional mode requires multivariate input")

    @classmethod
    def from_json(cls, path, **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if "training" in doc and isinstance(doc["training"], dict):
            doc["training"] = TrainingParams(**doc["training"])
        if "faults" in doc and isinstance(doc["faults"], dict):
            doc["faults"] = FaultModes(**doc["faults"])
        if "metrics" in doc:
            doc["metrics"] = tuple(doc["metrics"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["metrics"] = list(self.metrics)
        return doc

    def template(self, condition: str | None = None) -> PromptTemplate:
        return PromptTemplate(precision=self.precision, condition=condition)

    def stage_seed(self, stage: str) -> int:
        h = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(h[:8], "little") % (2**63)


# --- artifact helpers -------------------------------------------------------

def _write_instances(dirpath: Path, x: InstanceSet) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    header = ",".join(x.channel_names)
    for i in range(x.n_instances):
        arr = x.data[i].T  # (L, C)
        np.savetxt(dirpath / f"instance_{i:04d}.csv", arr, delimiter=",",
                   header=header, comments="", fmt="%.17g")


def read_instances(dirpath) -> InstanceSet:
    files = sorted(Path(dirpath).glob("instance_*.csv"))
    if not files:
        raise DataError(f"no instance CSVs under {dirpath}")
    with open(files[0], encoding="utf-8") as fh:
        names = tuple(fh.readline().strip().split(","))
    mats = [np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2).T for f in files]
    return InstanceSet(np.stack(mats, axis=0), names)


def _save_scaler(path: Path, s: ScalerState) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"mean": s.mean.tolist(), "std": s.std.tolist()}, fh)


def _load_scaler(path: Path) -> ScalerState:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ScalerState(np.asarray(doc["mean"]), np.asarray(doc["std"]))


def _require(path: Path, stage: str):
    if not path.exists():
        raise StageError(stage, f"missing upstream artifact: {path}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# --- stages -----------------------------------------------------------------

def stage_segment(config: RunConfig) -> dict:
    """Produce windows/ (raw-unit instance CSVs), plan.json, scaler.json."""
    out = Path(config.out_dir)
    raw = load_dataset(config.input_path, config.channels)
    if config.mode == "multisample":
        # Each input column is one instance of a univariate series.
        data = raw.values[:, None, :]
        x = InstanceSet(data, ("value",))
        plan_doc = {"mode": "multisample", "length": raw.length,
                    "n_windows": raw.n_channels, "period": None,
                    "step": None, "offsets": None}
    else:
        x, plan = segment(raw, config.length, config.instances, config.period)
        plan_doc = plan.to_dict()
        plan_doc["mode"] = config.mode
    wdir = out / "windows"
    _write_instances(wdir, x)
    scaler = fit_scaler(x)
    _save_scaler(wdir / "scaler.json", scaler)
    with open(wdir / "plan.json", "w", encoding="utf-8") as fh:
        json.dump(plan_doc, fh, indent=2)
    return {"n_instances": x.n_instances, "plan": plan_doc}


def _load_scaled_windows(config: RunConfig) -> tuple[InstanceSet, ScalerState]:
    out = Path(config.out_dir)
    _require(out / "windows" / "plan.json", "embed")
    x = read_instances(out / "windows")
    scaler = _load_scaler(out / "windows" / "scaler.json")
    return apply_scaler(x, scaler), scaler


def stage_embed(config: RunConfig) -> dict:
    """Fit the basis on scaled windows and write basis/ and table/."""
    out = Path(config.out_dir)
    scaled, _ = _load_scaled_windows(config)
    seed = config.stage_seed("embed")
    if config.conditional:
        # Shared basis: pool all channels' windows as instances of one
        # pseudo-channel; rows are labelled by their source channel.
        pooled = InstanceSet(
            scaled.data.transpose(1, 0, 2).reshape(-1, 1, scaled.length),
            ("shared",),
        )
        k = config.k if config.k is not None else select_k(
            pooled, config.method, config.variance_target, seed=seed)[0]
        basis = fit_basis(pooled, config.method, k, seed=seed)
        table = embed(pooled, basis)
        conditions = [
            name for name in scaled.channel_names for _ in range(scaled.n_instances)
        ]
        vr = variance_retained(pooled, basis).tolist()
    else:
        if config.k is not None:
            ks: int | list[int] = config.k
        else:
            ks = select_k(scaled, config.method, config.variance_target, seed=seed)
        basis = fit_basis(scaled, config.method, ks, seed=seed)
        table = embed(scaled, basis)
        conditions = None
        vr = variance_retained(scaled, basis).tolist()
    bdir = out / "basis"
    bdir.mkdir(parents=True, exist_ok=True)
    save_basis(basis, bdir / "basis.json")
    tdir = out / "table"
    tdir.mkdir(parents=True, exist_ok=True)
    save_table(table, tdir / "table.csv", tdir / "spans.json")
    if conditions is not None:
        with open(tdir / "conditions.json", "w", encoding="utf-8") as fh:
            json.dump(conditions, fh)
    return {"variance_retained": vr, "K": table.width}


def stage_encode(config: RunConfig) -> dict:
    """Serialize the embedding table into fine-tune prompts."""
    out = Path(config.out_dir)
    _require(out / "table" / "table.csv", "encode")
    table = load_table(out / "table" / "table.csv", out / "table" / "spans.json")
    cond_path = out / "table" / "conditions.json"
    conditions = json.loads(cond_path.read_text()) if cond_path.exists() else None
    rng = np.random.default_rng(config.stage_seed("encode"))
    prompts = []
    for i in range(table.n_rows):
        label = conditions[i] if conditions else None
        tmpl = config.template(label)
        perm = sample_permutation(table.width, rng)
        prompts.append(encode_finetune(table.values[i], perm, tmpl))
    pdir = out / "prompts"
    pdir.mkdir(parents=True, exist_ok=True)
    (pdir / "finetune.txt").write_text("\n".join(prompts) + "\n", encoding="utf-8")
    meta = {
        "K": table.width,
        "precision": config.precision,
        "conditions": sorted(set(conditions)) if conditions else None,
    }
    with open(pdir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return meta


def _make_backend(config: RunConfig, spans) -> ReferenceBackend | RemoteBackend:
    if config.backend == "reference":
        return ReferenceBackend(config.template(), config.faults, spans)
    return RemoteBackend(config.remote_url)


def stage_finetune(config: RunConfig) -> dict:
    """Fit the generation backend on the prompt corpus; persist its state."""
    out = Path(config.out_dir)
    _require(out / "prompts" / "finetune.txt", "finetune")
    prompts = (out / "prompts" / "finetune.txt").read_text(encoding="utf-8").splitlines()
    prompts = [p for p in prompts if p.strip()]
    table = load_table(out / "table" / "table.csv", out / "table" / "spans.json")
    backend = _make_backend(config, list(table.channel_spans))
    backend.fine_tune(prompts, config.training)
    gdir = out / "generated"
    gdir.mkdir(parents=True, exist_ok=True)
    if isinstance(backend, ReferenceBackend):
        state = {"kind": "reference", "model": backend.model.to_dict(), "K": backend.k}
    else:
        state = {"kind": "remote", "model_id": backend.model_id, "url": config.remote_url}
    with open(gdir / "backend.json", "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    return {"backend": state["kind"], "corpus_size": len(prompts)}


def _load_backend(config: RunConfig, spans) -> ReferenceBackend | RemoteBackend:
    out = Path(config.out_dir)
    _require(out / "generated" / "backend.json", "generate")
    with open(out / "generated" / "backend.json", encoding="utf-8") as fh:
        state = json.load(fh)
    if state["kind"] == "reference":
        backend = ReferenceBackend(config.template(), config.faults, spans)
        backend.model = GaussianCopulaModel.from_dict(state["model"])
        backend.k = state["K"]
        return backend
    backend = RemoteBackend(state["url"])
    backend.model_id = state["model_id"]
    return backend


def _generation_loop(config, backend, orig_table, conditions, log_fh):
    state = FilterState.from_table(orig_table)
    accepted_labels: list[str] = []
    rng = np.random.default_rng(config.stage_seed("generate"))
    labels = sorted(set(conditions)) if conditions else [None]
    k = orig_table.width
    decision = StopDecision.CONTINUE
    counter = 0
    for step in range(1, config.max_steps + 1):
        prompts = []
        batch_labels = []
        for _ in range(config.batch_size):
            label = labels[counter % len(labels)]
            counter += 1
            batch_labels.append(label)
            perm = sample_permutation(k, rng)
            prompts.append(make_inference_prompt(k, perm, config.template(label)))
        params = SamplingParams(
            temperature=config.temperature,
            batch_size=config.batch_size,
            max_new_tokens=config.max_new_tokens,
            seed=int(rng.integers(0, 2**31)),
        )
        completions = backend.generate(prompts, params)
        rows = [parse_generation(c, k, config.template()) for c in completions]
        disp = filter_batch(rows, state)
        record = {
            "step": step,
            "G": len(prompts),
            "accepted": len(disp.accepted),
            "rejected_missing": disp.counts["missing"],
            "rejected_dup": disp.counts["duplicate"],
            "rejected_norm": disp.counts["norm"],
            "diversity": diversity_score(state).tolist(),
            "total_accepted": state.accepted_count,
        }
        log_fh.write(json.dumps(record) + "\n")
        accepted_labels.extend(batch_labels[i] for i in disp.accepted)
        decision = should_stop(
            state, config.stop_threshold, config.max_count, config.target_count
        )
        if decision is not StopDecision.CONTINUE:
            break
    log_fh.write(json.dumps({"stop": decision.value}) + "\n")
    return state, accepted_labels


def stage_generate(config: RunConfig) -> dict:
    """Sample completions in batches, filter online, persist accepted rows."""
    out = Path(config.out_dir)
    _require(out / "table" / "table.csv", "generate")
    orig_table = load_table(out / "table" / "table.csv", out / "table" / "spans.json")
    cond_path = out / "table" / "conditions.json"
    conditions = json.loads(cond_path.read_text()) if cond_path.exists() else None
    backend = _load_backend(config, list(orig_table.channel_spans))
    gdir = out / "generated"
    gdir.mkdir(parents=True, exist_ok=True)
    with open(gdir / "filter_log.jsonl", "w", encoding="utf-8") as log_fh:
        state, accepted_labels = _generation_loop(
            config, backend, orig_table, conditions, log_fh
        )
    if state.accepted_count == 0:
        raise StageError("generate", "no rows accepted; backend likely undertrained")
    gen_table = state.accepted_table()
    if config.target_count is not None and gen_table.n_rows > config.target_count:
        gen_table = EmbeddingTable(
            gen_table.values[: config.target_count], gen_table.channel_spans
        )
        accepted_labels = accepted_labels[: config.target_count]
    save_table(gen_table, gdir / "table.csv", gdir / "spans.json")
    if conditions is not None:
        with open(gdir / "conditions.json", "w", encoding="utf-8") as fh:
            json.dump(accepted_labels, fh)
    return {
        "accepted": gen_table.n_rows,
        "rejected_missing": state.nan_count,
        "rejected_dup": state.dup_count,
        "rejected_norm": state.norm_reject_count,
    }


def stage_decode(config: RunConfig) -> dict:
    """Reconstruct series from generated embeddings and invert scaling."""
    out = Path(config.out_dir)
    _require(out / "generated" / "table.csv", "decode")
    _require(out / "basis" / "basis.json", "decode")
    basis = load_basis(out / "basis" / "basis.json")
    gen_table = load_table(out / "generated" / "table.csv", out / "generated" / "spans.json")
    scaler = _load_scaler(out / "windows" / "scaler.json")
    recon = reconstruct(gen_table, basis)
    if config.conditional:
        # Shared basis: regroup labelled rows into (I, C, L).
        x = read_instances(out / "windows")
        chan_names = x.channel_names
        labels_path = out / "generated" / "conditions.json"
        _require(labels_path, "decode")
        row_labels = json.loads(labels_path.read_text())
        cond_rows: dict[str, list[np.ndarray]] = {name: [] for name in chan_names}
        for i, label in enumerate(row_labels):
            cond_rows[label].append(recon.data[i, 0])
        n_keep = min(len(v) for v in cond_rows.values())
        if n_keep == 0:
            raise StageError("decode", "some channel label received no accepted rows")
        data = np.stack(
            [np.stack(cond_rows[name][:n_keep]) for name in chan_names], axis=1
        )
        decoded = InstanceSet(data, chan_names)
    else:
        decoded = recon
    decoded = invert_scaler(decoded, scaler)
    _write_instances(out / "decoded", decoded)
    return {"n_decoded": decoded.n_instances, "shape": list(decoded.data.shape)}


def stage_evaluate(config: RunConfig) -> dict:
    """Score decoded series against the original windows."""
    out = Path(config.out_dir)
    _require(out / "decoded", "evaluate")
    orig = read_instances(out / "windows")
    gen = read_instances(out / "decoded")
    report = compute_report(
        orig, gen, config.metrics,
        bins=config.bins, max_lag=config.max_lag, band=config.band,
    )
    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    with open(rdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return report.scores


STAGES = (
    ("segment", stage_segment),
    ("embed", stage_embed),
    ("encode", stage_encode),
    ("finetune", stage_finetune),
    ("generate", stage_generate),
    ("decode", stage_decode),
    ("evaluate", stage_evaluate),
)


def run_pipeline(config: RunConfig) -> dict:
    """Run all stages in order and write a manifest with artifact hashes."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "config": config.to_dict(),
        "versions": {"synthts": __version__, "numpy": np.__version__},
        "stages": {},
    }
    before: set[Path] = set(out.rglob("*"))
    for name, fn in STAGES:
        t0 = time.perf_counter()
        wall0 = time.time()
        try:
            summary = fn(config)
        except (StageError, BackendError, ConfigError):
            _write_manifest(out, manifest)
            raise
        except Exception as exc:
            _write_manifest(out, manifest)
            raise StageError(name, str(exc)) from exc
        after = set(out.rglob("*"))
        new_files = {p for p in after - before if p.is_file()}
        changed = {
            p for p in after
            if p.is_file() and p not in new_files and p.stat().st_mtime >= wall0
        }
        arts = {}
        for p in new_files | changed:
            if p.name == "manifest.json":
                continue
            arts[str(p.relative_to(out))] = _sha256(p)
        manifest["stages"][name] = {
            "summary": summary,
            "seconds": round(time.perf_counter() - t0, 4),
            "artifacts": dict(sorted(arts.items())),
        }
        before = after
    _write_manifest(out, manifest)
    return manifest


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
