"""End-to-end orchestration over an artifact directory.

Stage outputs (dataset, checkpoints, metric reports) live under a home
directory. Each artifact gets a manifest recording its content checksum,
the config hash that produced it and the checksums of its prerequisites;
stage ordering is enforced through these manifests, never timestamps.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import toydata as td
from .bridging import PromptEncoders, retrieval_eval, train_alignment
from .checkpoint import file_checksum, load_checkpoint, save_checkpoint
from .conditioning import SubsetSampler, combine
from .config import config_hash
from .diffusion import (Denoiser, ImageCodec, TextCodec, make_schedule,
                        noise_stream, sample, train_ldm)
from .errors import ArtifactError, ConfigError, MissingPrerequisiteError
from .evalkit import train_classifier, FeatureExtractor
from .jointgen import JointComponents, build_joint, joint_sample, train_joint
from .rng import stream

JOINT_PAIRS = (("view_a", "view_b"), ("view_a", "report"), ("view_b", "report"))


# ---------------------------------------------------------------------------
# layout and manifests

def dataset_path(home) -> Path:
    return Path(home) / "data" / "toy.xgtd"


def checkpoint_path(home, stage: str) -> Path:
    return Path(home) / "checkpoints" / (stage.replace(":", "_").replace("+", "_") + ".xgck")


def history_path(home, stage: str) -> Path:
    return Path(home) / "history" / (stage.replace(":", "_").replace("+", "_") + ".csv")


def report_dir(home) -> Path:
    return Path(home) / "reports"


def manifest_path(home, stage: str) -> Path:
    return Path(home) / "manifests" / (stage.replace(":", "_").replace("+", "_") + ".json")


def write_manifest(home, stage: str, artifact: Path, cfg_hash: str,
                   prerequisites: dict[str, str]) -> None:
    path = manifest_path(home, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"stage": stage, "artifact": artifact.name,
               "checksum": file_checksum(artifact), "config_hash": cfg_hash,
               "prerequisites": prerequisites}
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))


def read_manifest(home, stage: str, cfg_hash: str) -> dict:
    path = manifest_path(home, stage)
    if not path.exists():
        raise MissingPrerequisiteError(stage)
    manifest = json.loads(path.read_text())
    if manifest["config_hash"] != cfg_hash:
        raise ArtifactError(
            f"{stage}: artifact was produced under config {manifest['config_hash'][:12]}..., "
            f"the active config hashes to {cfg_hash[:12]}...")
    return manifest


def _write_history_csv(path: Path, rows, header) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# stage: dataset

def run_gen_data(cfg: dict, home, force: bool = False) -> Path:
    path = dataset_path(home)
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists (pass force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = td.generate_dataset(cfg["seed"], cfg["dataset"]["n"],
                             cfg["dataset"]["positive_rates"])
    td.save_dataset(ds, path)
    write_manifest(home, "dataset", path, config_hash(cfg), {})
    return path


def load_data(cfg: dict, home) -> td.Dataset:
    manifest = read_manifest(home, "dataset", config_hash(cfg))
    path = dataset_path(home)
    if file_checksum(path) != manifest["checksum"]:
        raise ArtifactError(f"{path}: content does not match its manifest")
    return td.load_dataset(path)


# ---------------------------------------------------------------------------
# stage: alignment

def run_train_align(cfg: dict, home) -> Path:
    ds = load_data(cfg, home)
    ec = cfg["encoder"]
    encoders = PromptEncoders(dim=ec["dim"], hidden=ec["hidden"],
                              text_embed=ec["text_embed"], seed=cfg["seed"])
    history = train_alignment(ds, encoders, epochs=ec["epochs"],
                              batch_size=ec["batch_size"], lr=ec["lr"],
                              weight_decay=ec["weight_decay"],
                              tau=ec["temperature"], seed=cfg["seed"])
    _write_history_csv(history_path(home, "alignment"),
                       [(h["epoch"], h["pair"], h["loss"]) for h in history],
                       ("epoch", "pair", "loss"))
    path = checkpoint_path(home, "alignment")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"dim": ec["dim"], "hidden": ec["hidden"], "text_embed": ec["text_embed"]}
    save_checkpoint(path, "alignment", config_hash(cfg),
                    encoders.params.state_arrays(), meta)
    write_manifest(home, "alignment", path, config_hash(cfg),
                   {"dataset": read_manifest(home, "dataset", config_hash(cfg))["checksum"]})
    return path


def load_encoders(cfg: dict, home) -> PromptEncoders:
    read_manifest(home, "alignment", config_hash(cfg))
    ck = load_checkpoint(checkpoint_path(home, "alignment"), "alignment",
                         config_hash(cfg))
    meta = ck["metadata"]
    encoders = PromptEncoders(dim=meta["dim"], hidden=meta["hidden"],
                              text_embed=meta["text_embed"], seed=0)
    encoders.params.load_state_arrays(ck["arrays"])
    return encoders


# ---------------------------------------------------------------------------
# stage: per-modality diffusion

def _schedule(cfg):
    d = cfg["diffusion"]
    return make_schedule(d["timesteps"], d["beta_min"], d["beta_max"])


def _fit_codec(cfg: dict, ds: td.Dataset, modality: str):
    """Codecs are retrained deterministically inside each LDM stage so every
    checkpoint is self-contained."""
    d = cfg["diffusion"]
    train = ds.subset("train")
    if modality == "report":
        tc = d["text_codec"]
        codec = TextCodec(seed=cfg["seed"], latent_dim=tc["latent_dim"],
                          hidden=tc["hidden"])
        codec.fit([r.report for r in train], epochs=tc["epochs"], lr=tc["lr"],
                  seed=cfg["seed"])
    else:
        ic = d["image_codec"]
        codec = ImageCodec(seed=cfg["seed"], hidden=ic["hidden"])
        images = np.stack([r.view_a for r in train] + [r.view_b for r in train])
        codec.fit(images, epochs=ic["epochs"], lr=ic["lr"], seed=cfg["seed"])
    return codec


def _codec_arrays(codec, prefix: str) -> dict:
    arrays = {f"{prefix}.param.{k}": v for k, v in codec.params.state_arrays().items()}
    arrays[f"{prefix}.stats.mu"] = codec.mu
    arrays[f"{prefix}.stats.sd"] = codec.sd
    return arrays


def _codec_from_arrays(cfg: dict, modality: str, arrays: dict, prefix: str):
    d = cfg["diffusion"]
    if modality == "report":
        tc = d["text_codec"]
        codec = TextCodec(seed=0, latent_dim=tc["latent_dim"], hidden=tc["hidden"])
    else:
        codec = ImageCodec(seed=0, hidden=d["image_codec"]["hidden"])
    codec.params.load_state_arrays(
        {k[len(prefix) + 7:]: v for k, v in arrays.items()
         if k.startswith(f"{prefix}.param.")})
    codec.mu = arrays[f"{prefix}.stats.mu"]
    codec.sd = arrays[f"{prefix}.stats.sd"]
    return codec


def run_train_ldm(cfg: dict, home, target: str) -> Path:
    if target not in td.MODALITIES:
        raise ConfigError(f"unknown target modality {target!r}")
    ds = load_data(cfg, home)
    encoders = load_encoders(cfg, home)
    codec = _fit_codec(cfg, ds, target)
    d = cfg["diffusion"]
    denoiser, history = train_ldm(
        ds, target, encoders, codec, _schedule(cfg), epochs=d["epochs"],
        batch_size=d["batch_size"], lr=d["lr"], weight_decay=d["weight_decay"],
        hidden=d["hidden"], n_blocks=d["blocks"], attn_dim=d["attn_dim"],
        seed=cfg["seed"], weight_mode=cfg["conditioning"]["weights"])
    stage = f"ldm:{target}"
    _write_history_csv(history_path(home, stage),
                       list(enumerate(history)), ("epoch", "loss"))
    arrays = {f"denoiser.{k}": v for k, v in denoiser.params.state_arrays().items()}
    arrays.update(_codec_arrays(codec, "codec"))
    meta = {"target": target, "latent_dim": codec.latent_dim,
            "cond_dim": encoders.dim, "timesteps": _schedule(cfg).T,
            "hidden": d["hidden"], "blocks": d["blocks"], "attn_dim": d["attn_dim"],
            "denoiser_checksum": denoiser.params.checksum()}
    path = checkpoint_path(home, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, stage, config_hash(cfg), arrays, meta)
    write_manifest(home, stage, path, config_hash(cfg),
                   {"alignment": read_manifest(home, "alignment", config_hash(cfg))["checksum"]})
    return path


def load_ldm(cfg: dict, home, target: str):
    stage = f"ldm:{target}"
    read_manifest(home, stage, config_hash(cfg))
    ck = load_checkpoint(checkpoint_path(home, stage), stage, config_hash(cfg))
    meta = ck["metadata"]
    d = cfg["diffusion"]
    denoiser = Denoiser(meta["latent_dim"], meta["cond_dim"], meta["timesteps"],
                        hidden=meta["hidden"], n_blocks=meta["blocks"],
                        attn_dim=meta["attn_dim"], seed=0)
    denoiser.params.load_state_arrays(
        {k[len("denoiser."):]: v for k, v in ck["arrays"].items()
         if k.startswith("denoiser.")})
    codec = _codec_from_arrays(cfg, target, ck["arrays"], "codec")
    return denoiser, codec, meta


# ---------------------------------------------------------------------------
# stage: joint coupling

def run_train_joint(cfg: dict, home, pair: tuple[str, str]) -> Path:
    pair = tuple(pair)
    if pair not in JOINT_PAIRS:
        raise ConfigError(f"unknown joint pair {pair!r}; valid: {JOINT_PAIRS}")
    ds = load_data(cfg, home)
    encoders = load_encoders(cfg, home)
    bases, codecs, base_checksums = {}, {}, {}
    for m in pair:
        bases[m], codecs[m], meta = load_ldm(cfg, home, m)
        base_checksums[m] = bases[m].params.checksum()
    j = cfg["joint"]
    components, history = train_joint(
        ds, pair, encoders, codecs, bases, _schedule(cfg), epochs=j["epochs"],
        batch_size=j["batch_size"], lr=j["lr"], weight_decay=j["weight_decay"],
        coupling_dim=j["coupling_dim"], proj_hidden=j["proj_hidden"],
        lam=j["contrastive_weight"], tau=j["temperature"], seed=cfg["seed"])
    stage = f"joint:{pair[0]}+{pair[1]}"
    _write_history_csv(history_path(home, stage),
                       list(enumerate(history)), ("epoch", "loss"))
    meta = {"pair": list(pair), "coupling_dim": j["coupling_dim"],
            "proj_hidden": j["proj_hidden"], "base_checksums": base_checksums}
    path = checkpoint_path(home, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, stage, config_hash(cfg),
                    components.trainable.state_arrays(), meta)
    prereqs = {f"ldm:{m}": read_manifest(home, f"ldm:{m}", config_hash(cfg))["checksum"]
               for m in pair}
    write_manifest(home, stage, path, config_hash(cfg), prereqs)
    return path


def load_joint(cfg: dict, home, pair: tuple[str, str]):
    pair = tuple(pair)
    stage = f"joint:{pair[0]}+{pair[1]}"
    read_manifest(home, stage, config_hash(cfg))
    ck = load_checkpoint(checkpoint_path(home, stage), stage, config_hash(cfg))
    meta = ck["metadata"]
    bases, codecs = {}, {}
    for m in pair:
        bases[m], codecs[m], _ = load_ldm(cfg, home, m)
        if bases[m].params.checksum() != meta["base_checksums"][m]:
            raise ArtifactError(
                f"{stage}: base denoiser for {m} does not match the checksum "
                "recorded at joint training time")
    components = build_joint(pair, bases, coupling_dim=meta["coupling_dim"],
                             proj_hidden=meta["proj_hidden"], seed=0)
    components.trainable.load_state_arrays(ck["arrays"])
    return components, codecs


# ---------------------------------------------------------------------------
# stage: evaluation classifier

def run_train_classifier(cfg: dict, home) -> Path:
    ds = load_data(cfg, home)
    train, test = ds.subset("train"), ds.subset("test")
    e = cfg["eval"]
    model, report = train_classifier(
        np.stack([r.view_a for r in train]), np.stack([r.labels for r in train]),
        np.stack([r.view_a for r in test]), np.stack([r.labels for r in test]),
        seed=cfg["seed"], epochs=e["classifier_epochs"],
        hidden=tuple(e["classifier_hidden"]))
    path = checkpoint_path(home, "classifier")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"hidden": list(e["classifier_hidden"]),
            "test_macro_f1": report["f1"]["macro"],
            "test_micro_auroc": report["auroc"]["micro"]}
    save_checkpoint(path, "classifier", config_hash(cfg),
                    model.params.state_arrays(), meta)
    write_manifest(home, "classifier", path, config_hash(cfg),
                   {"dataset": read_manifest(home, "dataset", config_hash(cfg))["checksum"]})
    return path


def load_classifier(cfg: dict, home) -> tuple[FeatureExtractor, dict]:
    read_manifest(home, "classifier", config_hash(cfg))
    ck = load_checkpoint(checkpoint_path(home, "classifier"), "classifier",
                         config_hash(cfg))
    hidden = tuple(ck["metadata"]["hidden"])
    from .nn import Linear, ParameterSet
    params = ParameterSet()
    rng = stream(0, "classifier-init")
    Linear(params, "l1", td.VIEW_SIZE * td.VIEW_SIZE, hidden[0], rng)
    Linear(params, "l2", hidden[0], hidden[1], rng)
    Linear(params, "out", hidden[1], td.NUM_CONDITIONS, rng)
    params.load_state_arrays(ck["arrays"])
    return FeatureExtractor(params, hidden, dict(ck["metadata"])), ck["metadata"]


# ---------------------------------------------------------------------------
# generation

def save_payload(path, modality: str, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if modality == "report":
        doc = {"modality": modality, "tokens": list(payload)}
    else:
        doc = {"modality": modality, "pixels": np.asarray(payload).tolist()}
    path.write_text(json.dumps(doc))


def load_payload(path):
    doc = json.loads(Path(path).read_text())
    modality = doc.get("modality")
    if modality == "report":
        return modality, tuple(doc["tokens"])
    if modality in ("view_a", "view_b"):
        pixels = np.asarray(doc["pixels"], dtype=np.float64)
        if pixels.shape != (td.VIEW_SIZE, td.VIEW_SIZE):
            raise ArtifactError(f"{path}: pixel grid must be "
                                f"{td.VIEW_SIZE}x{td.VIEW_SIZE}, got {pixels.shape}")
        return modality, pixels
    raise ArtifactError(f"{path}: unknown payload modality {modality!r}")


def conditioning_from_prompts(encoders: PromptEncoders, prompts: dict):
    """Combine the provided prompt payloads into one conditioning vector."""
    if not prompts:
        raise ConfigError("at least one prompt payload is required")
    embeddings = [encoders.encode(m, p) for m, p in sorted(prompts.items())]
    return combine(embeddings)


def generate_samples(cfg: dict, home, prompts: dict, targets: list[str],
                     joint: bool, seed: int, count: int) -> tuple[list[dict], dict]:
    """Generate ``count`` samples for the targets from fixed prompt payloads.

    Returns (samples, provenance): samples is a list of {target: payload},
    provenance records subset, weights, seed and step count.
    """
    for t in targets:
        if t in prompts:
            raise ConfigError(f"target {t!r} is also a prompt modality")
    encoders = load_encoders(cfg, home)
    cv = conditioning_from_prompts(encoders, prompts)
    omega = np.tile(cv.omega, (count, 1))
    schedule = _schedule(cfg)
    sigma_mode = cfg["diffusion"]["sigma_mode"]
    outputs: dict[str, list] = {}
    if joint:
        if len(targets) != 2:
            raise ConfigError("joint generation needs exactly two targets")
        pair = tuple(sorted(targets, key=td.MODALITIES.index))
        components, codecs = load_joint(cfg, home, pair)
        decoded = joint_sample(components, schedule, omega, codecs, seed=seed,
                               sigma_mode=sigma_mode)
        outputs = {m: list(decoded[m]) for m in pair}
        targets = list(pair)
    else:
        for m in targets:
            denoiser, codec, _ = load_ldm(cfg, home, m)
            decoded = sample(denoiser, schedule, omega, codec,
                             noise_stream(seed, m), sigma_mode=sigma_mode)
            outputs[m] = list(decoded)
    samples = [{m: outputs[m][i] for m in targets} for i in range(count)]
    provenance = {"subset": list(cv.subset), "weights": cv.weights.tolist(),
                  "seed": int(seed), "timesteps": schedule.T,
                  "joint": bool(joint), "targets": list(targets),
                  "config_hash": config_hash(cfg)}
    return samples, provenance


def generate_views_from_label_prompts(encoders, denoiser, codec, schedule,
                                      label_rows, seed: int, tag: str,
                                      sigma_mode: str = "beta") -> np.ndarray:
    """Synthesize view_a images for given label vectors by rendering prompt
    reports (random style buckets) and conditioning on their embeddings."""
    rng = stream(seed, f"styles:{tag}")
    reports = [td.render_report(lab, int(rng.integers(0, td.NUM_FACTOR_BUCKETS)))
               for lab in label_rows]
    omega = encoders.encode_batch("report", reports)
    return sample(denoiser, schedule, omega, codec,
                  noise_stream(seed, f"util:{tag}"), sigma_mode=sigma_mode)


# ---------------------------------------------------------------------------
# metric report files

def write_metric_report(home, name: str, payload: dict, cfg: dict, seed: int,
                        csv_rows=None, csv_header=None) -> Path:
    out = report_dir(home)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"metric": name, "config_hash": config_hash(cfg), "seed": int(seed)}
    doc.update(payload)
    path = out / f"{name}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, default=_jsonify))
    if csv_rows is not None:
        with (out / f"{name}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            if csv_header:
                writer.writerow(csv_header)
            writer.writerows(csv_rows)
    return path


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
