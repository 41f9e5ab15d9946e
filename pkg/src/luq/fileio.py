"""File formats and model persistence.

Two little-endian binary containers: "LUQ1" matrix files (raw float64
feature matrices) and "LUQM" model files (typed, length-prefixed, CRC-32
checked sections holding an optional PCA, the density model, and the
output prior).  CSV is accepted as an alternate feature input and is the
output format for scores and metrics: `.` decimal, LF line endings, 17
significant digits so every float64 round-trips exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .flow import CondNet, ConditionalFlow, CouplingLayer, Subnet
from .gmm import ClassConditionalGmm, GaussianComponent, Gmm
from .linalg import CholeskyFactor, FeatureMatrix, PcaModel
from .priors import (
    BetaPrimePrior,
    CategoricalPrior,
    HistogramPrior,
    OutputPrior,
    UniformPrior,
)

MATRIX_MAGIC = b"LUQ1"
MODEL_MAGIC = b"LUQM"
FORMAT_VERSION = 1

SECTION_PCA = b"PCA "
SECTION_GMMS = b"GMMS"
SECTION_FLOW = b"FLOW"
SECTION_PRIOR = b"PRIR"

_PRIOR_KINDS = {"categorical": 0, "uniform": 1, "betaprime": 2, "histogram": 3}


class _Reader:
    """Cursor over bytes that reports the offset of any short read."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(
                f"{self.name}: truncated at byte offset {self.pos} "
                f"(needed {n} more bytes, file has {len(self.data)})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    parts = [struct.pack("<B", a.ndim)]
    for d in a.shape:
        parts.append(struct.pack("<I", d))
    parts.append(a.tobytes())
    return b"".join(parts)


def _unpack_array(r: _Reader) -> np.ndarray:
    (ndim,) = r.unpack("B")
    shape = tuple(r.unpack("I" * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    raw = r.take(8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def write_matrix(path, data, layer: int | None = None) -> None:
    """Write a feature matrix in the binary container."""
    if isinstance(data, FeatureMatrix):
        layer = data.layer if layer is None else layer
        data = data.data
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"matrix file holds 2-D data, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<HII", FORMAT_VERSION, rows, cols))
        fh.write(arr.tobytes())


def read_matrix(path) -> FeatureMatrix:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    magic = r.take(4)
    if magic != MATRIX_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    version, rows, cols = r.unpack("HII")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unrecognized version {version}")
    payload = r.take(8 * rows * cols)
    if r.pos != len(r.data):
        raise DataFormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after payload "
            f"(offset {r.pos})"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    return FeatureMatrix(data, source=str(path))


def _read_csv_matrix(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty CSV")
    start = 0
    first = lines[0].split(",")
    try:
        [float(tok) for tok in first]
    except ValueError:
        start = 1  # header row
    rows = []
    for i, line in enumerate(lines[start:], start=start + 1):
        toks = line.split(",")
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {i}: {exc}") from exc
        if len(rows[-1]) != len(rows[0]):
            raise DataFormatError(
                f"{path}: row {i} has {len(rows[-1])} columns, expected {len(rows[0])}"
            )
    return FeatureMatrix(np.asarray(rows, dtype=np.float64), source=str(path))


def read_features(path) -> FeatureMatrix:
    """Read features from either the binary container or a CSV file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MATRIX_MAGIC:
        return read_matrix(path)
    return _read_csv_matrix(path)


def read_values(path) -> np.ndarray:
    """Read a single column of values (predictions or labels)."""
    fm = read_features(path)
    if fm.cols != 1:
        raise DataFormatError(f"{path}: expected a single column, found {fm.cols}")
    return fm.data[:, 0]


# --- model file sections -------------------------------------------------


def _pack_pca(p: PcaModel) -> bytes:
    return (
        struct.pack("<B", int(p.whiten))
        + _pack_array(p.mean)
        + _pack_array(p.basis)
        + _pack_array(p.eigenvalues)
    )


def _unpack_pca(r: _Reader) -> PcaModel:
    (whiten,) = r.unpack("B")
    mean = _unpack_array(r)
    basis = _unpack_array(r)
    eig = _unpack_array(r)
    return PcaModel(mean=mean, basis=basis, eigenvalues=eig, whiten=bool(whiten))


def _pack_gmms(m: ClassConditionalGmm) -> bytes:
    parts = [struct.pack("<I", len(m.classes))]
    for c in m.classes:
        g = m.per_class[c]
        parts.append(struct.pack("<qII", c, len(g.components), g.dim))
        for comp in g.components:
            parts.append(struct.pack("<d", comp.log_weight))
            parts.append(_pack_array(comp.mean))
            parts.append(_pack_array(comp.cov_chol.lower))
    return b"".join(parts)


def _unpack_gmms(r: _Reader) -> ClassConditionalGmm:
    (n_classes,) = r.unpack("I")
    per_class = {}
    classes = []
    dim = None
    for _ in range(n_classes):
        c, n_comp, d = r.unpack("qII")
        comps = []
        for _ in range(n_comp):
            (log_w,) = r.unpack("d")
            mean = _unpack_array(r)
            lower = _unpack_array(r)
            comps.append(
                GaussianComponent(
                    log_weight=log_w, mean=mean,
                    cov_chol=CholeskyFactor(dim=d, lower=lower),
                )
            )
        classes.append(int(c))
        per_class[int(c)] = Gmm(dim=int(d), components=tuple(comps))
        dim = int(d)
    return ClassConditionalGmm(dim=dim, classes=tuple(classes), per_class=per_class)


def _pack_net(weights, biases) -> bytes:
    parts = [struct.pack("<B", len(weights))]
    for w, b in zip(weights, biases):
        parts.append(_pack_array(w))
        parts.append(_pack_array(b))
    return b"".join(parts)


def _unpack_net(r: _Reader):
    (n,) = r.unpack("B")
    weights, biases = [], []
    for _ in range(n):
        weights.append(_unpack_array(r))
        biases.append(_unpack_array(r))
    return weights, biases


def _pack_subnet(s: Subnet) -> bytes:
    return _pack_net(s.weights, s.biases) + _pack_array(s.lift)


def _unpack_subnet(r: _Reader) -> Subnet:
    weights, biases = _unpack_net(r)
    lift = _unpack_array(r)
    return Subnet(weights=weights, biases=biases, lift=lift)


def _pack_flow(f: ConditionalFlow) -> bytes:
    parts = [struct.pack("<III", f.dim, f.cond_dim, len(f.layers))]
    for layer in f.layers:
        parts.append(struct.pack("<d", layer.scale_clamp))
        for part in (layer.part1, layer.part2):
            parts.append(struct.pack("<I", part.size))
            parts.append(np.asarray(part, dtype="<u4").tobytes())
        parts.append(_pack_subnet(layer.scale_net))
        parts.append(_pack_subnet(layer.translate_net))
        parts.append(_pack_net(layer.cond_net.weights, layer.cond_net.biases))
    return b"".join(parts)


def _unpack_flow(r: _Reader) -> ConditionalFlow:
    dim, cond_dim, n_layers = r.unpack("III")
    layers = []
    for _ in range(n_layers):
        (clamp,) = r.unpack("d")
        parts = []
        for _ in range(2):
            (size,) = r.unpack("I")
            raw = r.take(4 * size)
            parts.append(np.frombuffer(raw, dtype="<u4").astype(np.intp))
        scale = _unpack_subnet(r)
        translate = _unpack_subnet(r)
        cw, cb = _unpack_net(r)
        layers.append(
            CouplingLayer(
                part1=parts[0], part2=parts[1], scale_net=scale,
                translate_net=translate, cond_net=CondNet(cw, cb),
                scale_clamp=float(clamp),
            )
        )
    return ConditionalFlow(dim=int(dim), cond_dim=int(cond_dim), layers=layers)


def _pack_prior(p: OutputPrior) -> bytes:
    if isinstance(p, CategoricalPrior):
        body = struct.pack("<I", len(p.classes))
        body += np.asarray(p.classes, dtype="<i8").tobytes()
        body += _pack_array(p.log_probs)
        return struct.pack("<B", 0) + body
    if isinstance(p, UniformPrior):
        return struct.pack("<Bdd", 1, p.lo, p.hi)
    if isinstance(p, BetaPrimePrior):
        return struct.pack("<Bdd", 2, p.alpha, p.beta)
    if isinstance(p, HistogramPrior):
        return struct.pack("<B", 3) + _pack_array(p.edges) + _pack_array(p.log_densities)
    raise TypeError(f"unknown prior type {type(p).__name__}")


def _unpack_prior(r: _Reader) -> OutputPrior:
    (kind,) = r.unpack("B")
    if kind == 0:
        (n,) = r.unpack("I")
        classes = tuple(int(c) for c in np.frombuffer(r.take(8 * n), dtype="<i8"))
        log_probs = _unpack_array(r)
        return CategoricalPrior(classes=classes, log_probs=log_probs)
    if kind == 1:
        lo, hi = r.unpack("dd")
        return UniformPrior(lo=lo, hi=hi)
    if kind == 2:
        a, b = r.unpack("dd")
        return BetaPrimePrior(alpha=a, beta=b)
    if kind == 3:
        edges = _unpack_array(r)
        log_d = _unpack_array(r)
        return HistogramPrior(edges=edges, log_densities=log_d)
    raise DataFormatError(f"{r.name}: unknown prior kind {kind}")


@dataclass
class ModelBundle:
    """Everything a scoring run needs: optional stored PCA, one density
    model (per-class GMMs or a conditional flow), and the output prior."""

    prior: OutputPrior
    class_gmms: ClassConditionalGmm | None = None
    flow: ConditionalFlow | None = None
    pca: PcaModel | None = None

    def __post_init__(self):
        if self.class_gmms is None and self.flow is None:
            raise ValueError("model bundle needs a density section")

    @property
    def feature_dim(self) -> int:
        if self.class_gmms is not None:
            return self.class_gmms.dim
        return self.flow.dim


def write_model(path, bundle: ModelBundle) -> None:
    sections = []
    if bundle.pca is not None:
        sections.append((SECTION_PCA, _pack_pca(bundle.pca)))
    if bundle.class_gmms is not None:
        sections.append((SECTION_GMMS, _pack_gmms(bundle.class_gmms)))
    if bundle.flow is not None:
        sections.append((SECTION_FLOW, _pack_flow(bundle.flow)))
    sections.append((SECTION_PRIOR, _pack_prior(bundle.prior)))
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, len(sections)))
        for tag, payload in sections:
            fh.write(tag)
            fh.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
            fh.write(payload)


def read_model(path) -> ModelBundle:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    magic = r.take(4)
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    version, n_sections = r.unpack("HH")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unrecognized version {version}")
    pca = gmms = flow = prior = None
    for _ in range(n_sections):
        tag = r.take(4)
        length, checksum = r.unpack("QI")
        at = r.pos
        payload = r.take(length)
        if zlib.crc32(payload) != checksum:
            raise DataFormatError(
                f"{path}: checksum mismatch in section {tag!r} at byte offset {at}"
            )
        sec = _Reader(payload, f"{path}[{tag.decode().strip()}]")
        if tag == SECTION_PCA:
            pca = _unpack_pca(sec)
        elif tag == SECTION_GMMS:
            gmms = _unpack_gmms(sec)
        elif tag == SECTION_FLOW:
            flow = _unpack_flow(sec)
        elif tag == SECTION_PRIOR:
            prior = _unpack_prior(sec)
        else:
            raise DataFormatError(f"{path}: unknown section tag {tag!r}")
    if prior is None:
        raise DataFormatError(f"{path}: missing prior section")
    if gmms is None and flow is None:
        raise DataFormatError(f"{path}: missing density section")
    return ModelBundle(prior=prior, class_gmms=gmms, flow=flow, pca=pca)


# --- text formats --------------------------------------------------------


def format_float(x: float) -> str:
    """17 significant digits: exact round-trip for any float64."""
    return f"{x:.17g}"


def write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    """CSV with `.` decimals, LF endings, and round-trip-exact floats."""
    n = len(columns[0])
    lines = [",".join(header)]
    for i in range(n):
        cells = []
        for col in columns:
            v = col[i]
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(format_float(float(v)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_scores_csv(path, epistemic, aleatoric) -> None:
    index = np.arange(len(epistemic))
    write_csv(path, ["index", "epistemic_nats", "aleatoric_nats"],
              [index, np.asarray(epistemic), np.asarray(aleatoric)])


def read_csv_columns(path, required: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing columns {missing}, found {header}")
    data = {h: [] for h in header}
    for i, line in enumerate(lines[1:], start=2):
        toks = line.split(",")
        if len(toks) != len(header):
            raise DataFormatError(
                f"{path}: row {i} has {len(toks)} cells, expected {len(header)}"
            )
        for h, tok in zip(header, toks):
            try:
                data[h].append(float(tok))
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {i}: {exc}") from exc
    return {h: np.asarray(v) for h, v in data.items()}


# --- run configuration ---------------------------------------------------


def parse_config(path) -> list[tuple[int, str, str]]:
    """Parse `key = value` lines; returns (line number, key, value) tuples.

    Blank lines and `#` comments are skipped; malformed lines raise with
    their line number.
    """
    path = Path(path)
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}: line {i}: expected `key = value`")
            key, value = line.split("=", 1)
            out.append((i, key.strip(), value.strip()))
    return out


def load_config(path, allowed_keys) -> dict[str, str]:
    """Config dict validated against the known flag set.

    Unknown keys are rejected with the offending line number.
    """
    allowed = set(allowed_keys)
    out = {}
    for lineno, key, value in parse_config(path):
        if key not in allowed:
            raise DataFormatError(f"{path}: line {lineno}: unknown key {key!r}")
        out[key] = value
    return out
