"""Alternating GAN training, checkpoints and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import Config
from .data import Sample, SegMetrics, confusion_matrix, image_grid, metrics_from_confusion, segment_by_palette, write_image_ppm
from .discriminator import build_discriminator
from .errors import ArgumentError, FormatError, TrainingDivergedError
from .generator import Generator
from .losses import (FixedFeatureExtractor, LossWeights, d_hinge_loss, feature_matching_loss, g_adv_loss,
                     g_total_loss, perceptual_loss)
from .nn import AdamState, ParamStore, adam_step, init_params
from .tensor import Tensor
from .weightnet import WeightNet

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "loss_d", "loss_g", "adv", "perc", "fm"]
MAGIC = b"CCFP"
VERSION = 1


@dataclass
class TrainState:
    config: Config
    generator: Generator
    weightnet: WeightNet
    discriminator: object
    extractor: FixedFeatureExtractor
    opt_g: AdamState
    opt_d: AdamState
    rng: np.random.Generator
    step: int = 0

    @property
    def g_stores(self) -> List[ParamStore]:
        return [self.generator.store, self.weightnet.store]

    @property
    def stores(self) -> Dict[str, ParamStore]:
        return {"G": self.generator.store, "W": self.weightnet.store, "D": self.discriminator.store}


def build_state(config: Config) -> TrainState:
    tc = config.train
    if config.generator.image_hw != (config.task.height, config.task.width):
        raise ArgumentError(
            f"generator produces {config.generator.image_hw}, task images are {config.task.height}x{config.task.width}"
        )
    gen = Generator(config.generator, tc.generator)
    wnet = WeightNet(config.generator, config.task.num_labels, config.weightnet, tc.predictor, tc.generator)
    disc = build_discriminator(tc.discriminator, config.discriminator, config.task.num_labels, tc.embeddings)
    for k, store in enumerate((gen.store, wnet.store, disc.store)):
        init_params(store, [tc.seed, k])
        store.zero_grad()
    extractor = FixedFeatureExtractor(seed=tc.extractor_seed)
    opt_g = AdamState(tc.lr_g, tc.beta1, tc.beta2, tc.adam_eps)
    opt_d = AdamState(tc.lr_d, tc.beta1, tc.beta2, tc.adam_eps)
    return TrainState(config, gen, wnet, disc, extractor, opt_g, opt_d, np.random.default_rng([tc.seed, 7]))


def synthesize(state: TrainState, labels: np.ndarray, z: Tensor) -> Tensor:
    return state.generator(z, state.weightnet(labels))


def _grad_norms(state: TrainState) -> Dict[str, float]:
    out = {}
    for key, store in state.stores.items():
        sq = sum(float(np.sum(np.square(t.grad, dtype=np.float64))) for t in store.tensors() if t.grad is not None)
        out[key] = math.sqrt(sq)
    return out


def _check_finite(state: TrainState, losses: Dict[str, float]) -> None:
    if all(math.isfinite(v) for v in losses.values()):
        return
    diag = {"step": state.step, "losses": losses, "grad_norms": _grad_norms(state)}
    raise TrainingDivergedError(f"non-finite loss at step {state.step}: {losses}", diag)


def train_step(state: TrainState, labels: np.ndarray, images: np.ndarray) -> Dict[str, float]:
    """One discriminator update followed by one generator update."""
    tc = state.config.train
    real = Tensor(images)
    n = len(labels)
    gen, wnet, disc = state.generator, state.weightnet, state.discriminator
    gen.set_training(True)

    for _ in range(tc.d_steps):
        z = Tensor(state.rng.standard_normal(gen.noise_shape(n)))
        with T.no_grad():
            fake = synthesize(state, labels, z)
        loss_d = d_hinge_loss(disc(real, labels).total, disc(fake, labels).total)
        loss_d.backward()
        _check_finite(state, {"loss_d": loss_d.item()})
        adam_step([disc.store], state.opt_d)
        disc.store.zero_grad()

    z = Tensor(state.rng.standard_normal(gen.noise_shape(n)))
    fake = synthesize(state, labels, z)
    with disc.store.frozen():
        out_fake = disc(fake, labels)
    with T.no_grad():
        out_real = disc(real, labels)
    adv = g_adv_loss(out_fake.total)
    perc = perceptual_loss(fake, real, state.extractor)
    fm = feature_matching_loss(out_fake.features, out_real.features)
    loss_g = g_total_loss(adv, perc, fm, LossWeights(tc.lambda_p, tc.lambda_fm))
    loss_g.backward()
    losses = {"loss_d": loss_d.item(), "loss_g": loss_g.item(), "adv": adv.item(),
              "perc": perc.item(), "fm": fm.item()}
    _check_finite(state, losses)
    adam_step(state.g_stores, state.opt_g)
    for store in state.g_stores:
        store.zero_grad()
    state.step += 1
    return losses


def sample_batch(state: TrainState, dataset: Sequence[Sample]):
    size = min(state.config.train.batch_size, len(dataset))
    idx = state.rng.choice(len(dataset), size=size, replace=False)
    labels = np.stack([dataset[i].label for i in idx])
    images = np.stack([dataset[i].image for i in idx]).astype(T.get_default_dtype())
    return labels, images


# -- checkpoints -----------------------------------------------------------------------

def _named_arrays(state: TrainState) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    for key, store in state.stores.items():
        for name, t in store.items():
            arrays[f"{key}/{name}"] = t.data
        for name, b in store.buffers.items():
            arrays[f"{key}.buffer/{name}"] = b
    for key, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for name in opt.m:
            arrays[f"{key}.m/{name}"] = opt.m[name]
            arrays[f"{key}.v/{name}"] = opt.v[name]
    return arrays


def save_checkpoint(state: TrainState, path) -> Path:
    """Write ``CCFP | u32 version | u64 json length | json | f32 payloads`` (little-endian)."""
    path = Path(path)
    arrays = dict(sorted(_named_arrays(state).items()))  # canonical payload order
    index, offset = {}, 0
    for name, arr in arrays.items():
        index[name] = {"shape": list(arr.shape), "dtype": "<f4", "offset": offset}
        offset += arr.size * 4
    meta = {
        "step": state.step,
        "config": state.config.to_dict(),
        "rng": state.rng.bit_generator.state,
        "adam": {k: {"t": o.t} for k, o in (("opt_g", state.opt_g), ("opt_d", state.opt_d))},
        "tensors": index,
    }
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Parse and validate a checkpoint file into ``(metadata, arrays)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    blob = path.read_bytes()
    if len(blob) < 16:
        raise OSError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise OSError(f"{path}: truncated metadata")
    try:
        meta = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata ({exc})") from exc
    payload = memoryview(blob)[16 + hlen:]
    arrays = {}
    for name, info in meta["tensors"].items():
        count = int(np.prod(info["shape"])) if info["shape"] else 1
        start, stop = info["offset"], info["offset"] + 4 * count
        if stop > len(payload):
            raise OSError(f"{path}: truncated payload for {name}")
        arrays[name] = np.frombuffer(payload[start:stop], dtype="<f4").reshape(info["shape"])
    return meta, arrays


def load_checkpoint(path) -> TrainState:
    meta, arrays = read_checkpoint(path)
    config = Config.from_dict(meta["config"])
    state = build_state(config)
    dtype = T.get_default_dtype()
    missing = set(_named_arrays(state)) - set(arrays)
    if missing:
        raise FormatError(f"{path}: missing tensors {sorted(missing)[:3]}")
    for key, store in state.stores.items():
        for name, t in store.items():
            t.data[...] = arrays[f"{key}/{name}"]
        for name, b in store.buffers.items():
            b[...] = arrays[f"{key}.buffer/{name}"]
    for key, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt.t = meta["adam"][key]["t"]
        for name in arrays:
            if name.startswith(f"{key}.m/"):
                pname = name.split("/", 1)[1]
                opt.m[pname] = arrays[name].astype(dtype)
                opt.v[pname] = arrays[f"{key}.v/{pname}"].astype(dtype)
    state.rng.bit_generator.state = meta["rng"]
    state.step = meta["step"]
    return state


# -- loops -----------------------------------------------------------------------------

def generate_images(state: TrainState, labels: np.ndarray, seed: int, batch_size: int = 16) -> np.ndarray:
    """Eval-mode synthesis with noise drawn from ``seed`` (training RNG untouched)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    gen = state.generator
    gen.set_training(False)
    out = []
    try:
        with T.no_grad():
            for i in range(0, len(labels), batch_size):
                y = labels[i:i + batch_size]
                z = Tensor(rng.standard_normal(gen.noise_shape(len(y))))
                out.append(synthesize(state, y, z).data)
    finally:
        gen.set_training(True)
    return np.concatenate(out)


def evaluate(state: TrainState, samples: Sequence[Sample], seed: int = 0) -> SegMetrics:
    """Segment synthesized images by palette and score against their layouts."""
    spec = state.config.task
    labels = np.stack([s.label for s in samples])
    fakes = generate_images(state, labels, seed)
    conf = confusion_matrix(segment_by_palette(fakes, spec), labels, spec.num_labels)
    return metrics_from_confusion(conf)


def _fmt(v: float) -> str:
    return repr(float(v))


def run_training(config: Config, dataset: Sequence[Sample], out_dir=None, eval_set: Optional[Sequence[Sample]] = None,
                 state: Optional[TrainState] = None, progress_every: int = 100) -> dict:
    """Train to ``config.train.steps`` and return a summary.

    With ``out_dir`` set, writes ``train_log.csv``, ``checkpoint_XXXXXX.ccfp``
    files on the configured cadence (plus the initial and final state),
    ``latest.ccfp`` and sample contact sheets under ``samples/``.  Passing a
    loaded ``state`` resumes from its step.
    """
    if not dataset:
        raise ArgumentError("training dataset is empty")
    tc = config.train
    state = state or build_state(config)
    out = Path(out_dir) if out_dir is not None else None
    rows: List[list] = []
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        log_path = out / "train_log.csv"
        fresh = state.step == 0 or not log_path.exists()
        if not fresh:
            _truncate_log(log_path, state.step)
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_HEADER)
        save_checkpoint(state, out / f"checkpoint_{state.step:06d}.ccfp")
    preview = [s.label for s in (eval_set or dataset)[:8]]
    started = time.perf_counter()
    losses = {}
    try:
        while state.step < tc.steps:
            labels, images = sample_batch(state, dataset)
            try:
                losses = train_step(state, labels, images)
            except TrainingDivergedError as exc:
                if out is not None:
                    (out / "diverged.json").write_text(json.dumps(exc.diagnostics, indent=2) + "\n")
                raise
            row = [state.step] + [_fmt(losses[k]) for k in LOG_HEADER[1:]]
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if progress_every and state.step % progress_every == 0:
                log.info("step %d  L_D %.4f  L_G %.4f  (%.1fs)", state.step, losses["loss_d"],
                         losses["loss_g"], time.perf_counter() - started)
            if out is not None:
                if tc.checkpoint_every and state.step % tc.checkpoint_every == 0:
                    save_checkpoint(state, out / f"checkpoint_{state.step:06d}.ccfp")
                if tc.sample_every and state.step % tc.sample_every == 0:
                    _write_samples(state, preview, out / "samples" / f"step_{state.step:06d}.ppm")
    finally:
        if fh is not None:
            fh.close()
    summary = {"steps": state.step, "final_losses": losses, "elapsed_s": time.perf_counter() - started,
               "log": rows}
    if out is not None:
        summary["checkpoint"] = str(save_checkpoint(state, out / "latest.ccfp"))
    if eval_set:
        m = evaluate(state, eval_set)
        summary["eval"] = {"miou": m.miou, "accuracy": m.accuracy, "per_class_iou": m.per_class_iou}
    summary["state"] = state
    return summary


def _truncate_log(path: Path, step: int) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def _write_samples(state: TrainState, labels: Sequence[np.ndarray], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fakes = generate_images(state, np.stack(labels), seed=0)
    write_image_ppm(path, image_grid(list(fakes), cols=4))
