"""User-facing layer: configs, datasets, the runner and CSV metrics.

Configs are flat ``key = value`` text (one pair per line, ``#`` starts a
comment). Every key has a documented default, unknown keys are rejected,
and parsing returns a fully-resolved config, so serialize/parse round-trips
are stable. A run is completely determined by (config, seed): the metrics
CSV is byte-identical across repeats.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

from .channel import EnergyLedger, OtaConfig
from .federation import (
    ClientState,
    Dataset,
    FederationState,
    RoundConfig,
    partition_iid,
    partition_label_limited,
    run_round,
)
from .model import MlpArch, init_params
from .optimizer import EmaState, SophiaConfig

CSV_HEADER = "round,slots,bits,energy_j,slots_cum,bits_cum,energy_j_cum,train_loss,test_accuracy"

_CHOICES = {
    "algo": ("fed_sophia", "fedavg", "fedprox"),
    "link": ("ota", "digital", "ideal"),
    "dataset": ("synthetic", "mnist"),
    "partition": ("iid", "label_limited"),
    "activation": ("tanh", "relu"),
}

# (train, test) sizes applied when the config leaves them at 0
_AUTO_SPLIT = {"synthetic": (768, 256), "mnist": (2000, 500)}


@dataclass
class ExperimentConfig:
    algo: str = "fed_sophia"
    link: str = "ota"
    rounds: int = 50
    n_clients: int = 32
    batch_size: int = 64
    arch: tuple[int, ...] = (16, 16, 4)
    activation: str = "tanh"
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    gamma: float = 0.01
    epsilon: float = 1e-12
    tau: int = 10
    mu: float = 0.01
    eta_baseline: float = 0.0  # 0 resolves to eta
    local_steps: int = 10
    bits_per_param: int = 32
    b: int = 1200
    w_sub: float = 15_000.0
    tau_sym: float = 1e-3
    h_th: float = 0.1
    snr_db: float = 25.0
    p_n: float = 1e-3
    n0: float = 1e-9
    normalize_by_participants: bool = False
    dataset: str = "synthetic"
    mnist_images: str = ""
    mnist_labels: str = ""
    train_size: int = 0  # 0 resolves to the dataset default
    test_size: int = 0
    input_dim: int = 16
    classes: int = 4
    center_scale: float = 3.0
    partition: str = "iid"
    max_labels: int = 3
    seed: int = 0
    e_compute_round: float = 1e-3
    e_per_bit: float = 1e-6
    out: str = "metrics.csv"


@dataclass(frozen=True)
class MetricsRow:
    round: int
    slots: int
    bits: int
    energy_j: float
    slots_cum: int
    bits_cum: int
    energy_j_cum: float
    train_loss: float
    test_accuracy: float


class ConfigError(ValueError):
    """Raised for unknown keys, unparsable or out-of-range values."""


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str, line_no: int):
    ftype = _FIELDS[key].type
    try:
        if key == "arch":
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            return tuple(int(p) for p in parts)
        if ftype == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse {key} value {raw!r}") from None


def _require(cond: bool, line_no: int, message: str) -> None:
    if not cond:
        where = f"line {line_no}: " if line_no else ""
        raise ConfigError(where + message)


def _validate(cfg: ExperimentConfig, lines: dict[str, int]) -> None:
    ln = lambda key: lines.get(key, 0)
    for key, choices in _CHOICES.items():
        _require(getattr(cfg, key) in choices, ln(key), f"{key} must be one of {choices}")
    _require(cfg.rounds >= 0, ln("rounds"), f"rounds must be >= 0 (got {cfg.rounds})")
    for key in ("n_clients", "batch_size", "tau", "local_steps", "bits_per_param", "b", "max_labels"):
        v = getattr(cfg, key)
        _require(v >= 1, ln(key), f"{key} must be >= 1 (got {v})")
    _require(
        len(cfg.arch) >= 2 and all(s >= 1 for s in cfg.arch),
        ln("arch"),
        f"arch needs >= 2 positive layer sizes (got {cfg.arch})",
    )
    for key in ("eta", "gamma", "epsilon", "w_sub", "tau_sym", "snr_db", "p_n", "n0", "center_scale"):
        v = getattr(cfg, key)
        _require(v > 0, ln(key), f"{key} must be > 0 (got {v})")
    for key in ("beta1", "beta2"):
        v = getattr(cfg, key)
        _require(0.0 <= v < 1.0, ln(key), f"{key} must be in [0, 1) (got {v})")
    for key in ("mu", "eta_baseline", "h_th", "e_compute_round", "e_per_bit"):
        v = getattr(cfg, key)
        _require(v >= 0, ln(key), f"{key} must be >= 0 (got {v})")
    for key in ("train_size", "test_size", "seed"):
        v = getattr(cfg, key)
        _require(v >= 0, ln(key), f"{key} must be >= 0 (got {v})")
    _require(cfg.input_dim >= 1, ln("input_dim"), f"input_dim must be >= 1 (got {cfg.input_dim})")
    _require(cfg.classes >= 2, ln("classes"), f"classes must be >= 2 (got {cfg.classes})")
    if cfg.dataset == "mnist":
        _require(bool(cfg.mnist_images), ln("mnist_images"), "mnist dataset needs mnist_images")
        _require(bool(cfg.mnist_labels), ln("mnist_labels"), "mnist dataset needs mnist_labels")


def load_config(text: str) -> ExperimentConfig:
    """Parse flat key=value text; missing keys take the documented defaults."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, line_no)
        lines[key] = line_no

    cfg = ExperimentConfig(**values)
    _validate(cfg, lines)

    # resolve the 0 = "use default" placeholders so the config is concrete
    if cfg.eta_baseline == 0.0:
        cfg.eta_baseline = cfg.eta
    auto_train, auto_test = _AUTO_SPLIT[cfg.dataset]
    if cfg.train_size == 0:
        cfg.train_size = auto_train
    if cfg.test_size == 0:
        cfg.test_size = auto_test
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit the config as parseable key = value text."""
    out = []
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if f.name == "arch":
            text = ",".join(str(s) for s in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        out.append(f"{f.name} = {text}")
    return "\n".join(out) + "\n"


def gen_synthetic(
    n: int, input_dim: int, classes: int, seed: int, center_scale: float = 3.0
) -> Dataset:
    """Gaussian class clusters: fixed random centers, unit covariance.

    Labels are balanced to within one sample and shuffled; everything is
    a pure function of the seed.
    """
    if classes < 2 or input_dim < 1:
        raise ValueError("need classes >= 2 and input_dim >= 1")
    if n < classes:
        raise ValueError(f"need at least one sample per class ({n} < {classes})")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, input_dim)) * center_scale
    labels = np.arange(n, dtype=np.int64) % classes
    rng.shuffle(labels)
    inputs = centers[labels] + rng.standard_normal((n, input_dim))
    return Dataset(inputs, labels, classes)


_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


def load_mnist_idx(images_path: str, labels_path: str, limit: int | None = None) -> Dataset:
    """Read big-endian IDX image/label files; pixels scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IMAGE_MAGIC:
            raise ValueError(
                f"{images_path}: bad image magic {magic}, expected {_IMAGE_MAGIC}"
            )
        take = count if limit is None else min(limit, count)
        raw = fh.read(take * rows * cols)
        if len(raw) < take * rows * cols:
            raise ValueError(f"{images_path}: truncated image data")
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{labels_path}: truncated IDX header")
        magic, label_count = struct.unpack(">II", header)
        if magic != _LABEL_MAGIC:
            raise ValueError(
                f"{labels_path}: bad label magic {magic}, expected {_LABEL_MAGIC}"
            )
        if label_count != count:
            raise ValueError(
                f"count mismatch: {images_path} has {count} images, "
                f"{labels_path} has {label_count} labels"
            )
        raw_labels = fh.read(take)
        if len(raw_labels) < take:
            raise ValueError(f"{labels_path}: truncated label data")

    inputs = np.frombuffer(raw, dtype=np.uint8).reshape(take, rows * cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(inputs, labels, 10)


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    total = cfg.train_size + cfg.test_size
    if cfg.dataset == "synthetic":
        full = gen_synthetic(total, cfg.input_dim, cfg.classes, cfg.seed, cfg.center_scale)
    else:
        full = load_mnist_idx(cfg.mnist_images, cfg.mnist_labels, limit=total)
        if full.size < total:
            raise ValueError(
                f"dataset has {full.size} samples, config needs {total}"
            )
    perm = np.random.default_rng([cfg.seed, 777]).permutation(full.size)
    tr = perm[: cfg.train_size]
    te = perm[cfg.train_size : total]
    train = Dataset(full.inputs[tr], full.labels[tr], full.class_count)
    test = Dataset(full.inputs[te], full.labels[te], full.class_count)
    return train, test


def build_initial_state(cfg: ExperimentConfig, train: Dataset) -> FederationState:
    """Initial model, shards and per-client state for a config."""
    arch = MlpArch(cfg.arch, cfg.activation)
    if arch.input_dim != train.inputs.shape[1]:
        raise ValueError(
            f"arch input dim {arch.input_dim} != data dim {train.inputs.shape[1]}"
        )
    if arch.class_count != train.class_count:
        raise ValueError(
            f"arch class count {arch.class_count} != data classes {train.class_count}"
        )
    if cfg.partition == "iid":
        shards = partition_iid(train, cfg.n_clients, cfg.seed)
    else:
        shards = partition_label_limited(train, cfg.n_clients, cfg.max_labels, cfg.seed)
    theta = init_params(arch, cfg.seed)
    clients = [
        ClientState(shard, EmaState.zeros(arch.param_count), EnergyLedger(), cfg.p_n)
        for shard in shards
    ]
    return FederationState(theta, arch, clients)


def round_config(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> RoundConfig:
    return RoundConfig(
        sophia=SophiaConfig(cfg.eta, cfg.beta1, cfg.beta2, cfg.gamma, cfg.epsilon, cfg.tau),
        ota=OtaConfig(cfg.b, cfg.w_sub, cfg.tau_sym, cfg.h_th, cfg.snr_db, cfg.p_n, cfg.n0),
        master_seed=cfg.seed,
        train_eval=train,
        test_eval=test,
        batch_size=cfg.batch_size,
        local_steps=cfg.local_steps,
        mu=cfg.mu,
        eta_baseline=cfg.eta_baseline if cfg.eta_baseline > 0 else None,
        bits_per_param=cfg.bits_per_param,
        e_compute_round=cfg.e_compute_round,
        e_per_bit=cfg.e_per_bit,
        normalize_by_participants=cfg.normalize_by_participants,
    )


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRow]:
    """Run the configured experiment; one metrics row per round."""
    train, test = build_datasets(cfg)
    state = build_initial_state(cfg, train)
    ctx = round_config(cfg, train, test)

    rows: list[MetricsRow] = []
    slots_cum = 0
    bits_cum = 0
    energy_cum = 0.0
    for _ in range(cfg.rounds):
        state, rep = run_round(state, cfg.algo, cfg.link, ctx)
        slots_cum += rep.slots
        bits_cum += rep.bits
        energy_cum += rep.energy_j
        rows.append(
            MetricsRow(
                round=rep.round,
                slots=rep.slots,
                bits=rep.bits,
                energy_j=rep.energy_j,
                slots_cum=slots_cum,
                bits_cum=bits_cum,
                energy_j_cum=energy_cum,
                train_loss=rep.train_loss,
                test_accuracy=rep.test_accuracy,
            )
        )
    return rows


def write_metrics_csv(rows: list[MetricsRow], path: str) -> None:
    """Plain CSV, repr() floats: byte-stable for identical runs."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.round},{r.slots},{r.bits},{r.energy_j!r},{r.slots_cum},"
                f"{r.bits_cum},{r.energy_j_cum!r},{r.train_loss!r},{r.test_accuracy!r}\n"
            )


def read_metrics_csv(path: str) -> list[MetricsRow]:
    """Inverse of write_metrics_csv."""
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 9:
                raise ValueError(f"{path}: malformed row {line!r}")
            rows.append(
                MetricsRow(
                    round=int(parts[0]),
                    slots=int(parts[1]),
                    bits=int(parts[2]),
                    energy_j=float(parts[3]),
                    slots_cum=int(parts[4]),
                    bits_cum=int(parts[5]),
                    energy_j_cum=float(parts[6]),
                    train_loss=float(parts[7]),
                    test_accuracy=float(parts[8]),
                )
            )
    return rows
