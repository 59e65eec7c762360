"""
Dimensionality reduction behind one interface: none, PCA, autoencoder, VAE and VAE-LSTM.
"""
import logging
import math
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from artifacts import atomic_write_text, write_frame
from errors import ConfigError, DegenerateData, KindMismatch, NonFiniteValue, ParseError, ShapeMismatch
from models import EmbeddingTable, FilteredVocabulary, ReducerModel, ReducerSpec, TraceRow
from nnkit import (AdamState, LstmCellParams, Tensor, adam_step, concat, dense_forward, gaussian_kl,
                   lstm_cell, mse_loss, parameter, relu, reparameterize)

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


# PCA

def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the largest off-diagonal magnitude is below
    tol * max(1, largest entry magnitude).

    Returns:
        (eigenvalues descending, eigenvectors as columns in the same order)
    """
    A = np.array(matrix, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ShapeMismatch(f"jacobi_eigh needs a square matrix, got {A.shape}")
    V = np.eye(n)
    threshold = tol * max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)

    for sweep in range(max_sweeps):
        off = np.abs(A - np.diag(np.diag(A)))
        if n < 2 or off.max() < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0

                vec_p, vec_q = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vec_p - s * vec_q
                V[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("jacobi_eigh did not converge in %d sweeps", max_sweeps)

    values = np.diag(A).copy()
    order = sorted(range(n), key=lambda k: (-values[k], k))
    return values[order], V[:, order]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude coordinate of each component positive."""
    fixed = components.copy()
    for row in fixed:
        if row[int(np.argmax(np.abs(row)))] < 0:
            row *= -1.0
    return fixed


def fit_pca(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    X = table.vectors
    n, dim = X.shape
    latent = spec.latent_dim
    if dim < latent:
        raise DegenerateData(f"cannot project {dim}-d vectors onto {latent} components")

    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / max(n - 1, 1)
    values, vectors = jacobi_eigh(covariance)

    top = max(float(values[0]), 0.0)
    rank = int(np.sum(values > top * 1e-10)) if top > 0 else 0
    degenerate = rank < latent
    if degenerate:
        logger.warning("covariance rank %d is below latent dimension %d; padding with an orthonormal complement",
                       rank, latent)

    components = _fix_signs(vectors[:, :latent].T)
    model = ReducerModel(spec=spec, input_dim=dim,
                         parameters={"mean": mean, "components": components,
                                     "eigenvalues": values[:latent].copy()},
                         degenerate=degenerate)
    model.recon_mse = reconstruction_mse(model, X)
    return model


# networks

def _dense_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tuple[np.ndarray, np.ndarray]:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)


def _lstm_init(rng: np.random.Generator, hidden: int, inputs: int) -> Dict[str, np.ndarray]:
    limit = 1.0 / math.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return {
        "W": rng.uniform(-limit, limit, size=(4 * hidden, inputs)),
        "U": rng.uniform(-limit, limit, size=(4 * hidden, hidden)),
        "b": b,
    }


def _mlp(x: Tensor, p: Dict[str, Tensor], prefix: str, layers: int, final_activation: bool = False) -> Tensor:
    for k in range(layers):
        x = dense_forward(x, p[f"{prefix}.{k}.W"], p[f"{prefix}.{k}.b"])
        if k < layers - 1 or final_activation:
            x = relu(x)
    return x


class Autoencoder:
    """Dense encoder input -> hidden_dims -> latent with a mirrored decoder."""
    variational = False

    def __init__(self, spec: ReducerSpec, input_dim: int):
        self.spec = spec
        self.input_dim = input_dim
        self.encoder_dims = [input_dim] + list(spec.hidden_dims) + [spec.latent_dim]
        self.decoder_dims = list(reversed(self.encoder_dims))

    def init_parameters(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        for prefix, dims in (("enc", self.encoder_dims), ("dec", self.decoder_dims)):
            for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
                params[f"{prefix}.{k}.W"], params[f"{prefix}.{k}.b"] = _dense_init(rng, fan_out, fan_in)
        return params

    def encode(self, x: Tensor, p: Dict[str, Tensor]) -> Tuple[Tensor, Optional[Tensor]]:
        return _mlp(x, p, "enc", len(self.encoder_dims) - 1), None

    def decode(self, z: Tensor, p: Dict[str, Tensor]) -> Tensor:
        return _mlp(z, p, "dec", len(self.decoder_dims) - 1)

    def loss(self, x: Tensor, p: Dict[str, Tensor], noise: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor, Tensor]:
        """(total, reconstruction, kl) for one batch."""
        z, _ = self.encode(x, p)
        recon = mse_loss(self.decode(z, p), x)
        return recon, recon, Tensor(0.0)


class VariationalAutoencoder(Autoencoder):
    """Same trunk as the autoencoder, ending in mu and logvar heads."""
    variational = True

    def init_parameters(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        trunk = self.encoder_dims[:-1]
        for k, (fan_in, fan_out) in enumerate(zip(trunk, trunk[1:])):
            params[f"enc.{k}.W"], params[f"enc.{k}.b"] = _dense_init(rng, fan_out, fan_in)
        for head in ("mu", "logvar"):
            params[f"{head}.W"], params[f"{head}.b"] = _dense_init(rng, self.spec.latent_dim, trunk[-1])
        for k, (fan_in, fan_out) in enumerate(zip(self.decoder_dims, self.decoder_dims[1:])):
            params[f"dec.{k}.W"], params[f"dec.{k}.b"] = _dense_init(rng, fan_out, fan_in)
        return params

    def _trunk(self, x: Tensor, p: Dict[str, Tensor]) -> Tensor:
        return _mlp(x, p, "enc", len(self.encoder_dims) - 2, final_activation=True)

    def encode(self, x: Tensor, p: Dict[str, Tensor]) -> Tuple[Tensor, Optional[Tensor]]:
        h = self._trunk(x, p)
        mu = dense_forward(h, p["mu.W"], p["mu.b"])
        logvar = dense_forward(h, p["logvar.W"], p["logvar.b"])
        return mu, logvar

    def loss(self, x: Tensor, p: Dict[str, Tensor], noise: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor, Tensor]:
        mu, logvar = self.encode(x, p)
        if noise is None:
            noise = np.zeros(mu.shape)
        z = reparameterize(mu, logvar, noise)
        recon = mse_loss(self.decode(z, p), x)
        kl = gaussian_kl(mu, logvar)
        return recon + kl * self.spec.kl_weight, recon, kl


class VaeLstm(VariationalAutoencoder):
    """
    VAE whose encoder reads the vector as a steps x features sequence with an LSTM,
    and whose decoder unrolls an LSTM seeded from the latent code.
    """

    def __init__(self, spec: ReducerSpec, input_dim: int):
        super().__init__(spec, input_dim)
        if spec.lstm_steps * spec.lstm_features != input_dim:
            raise ConfigError(f"lstm chunking {spec.lstm_steps} x {spec.lstm_features} "
                              f"does not cover input dimension {input_dim}")

    def init_parameters(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        H, L, F = self.spec.lstm_hidden, self.spec.latent_dim, self.spec.lstm_features
        params = {f"enc.lstm.{k}": v for k, v in _lstm_init(rng, H, F).items()}
        for head in ("mu", "logvar"):
            params[f"{head}.W"], params[f"{head}.b"] = _dense_init(rng, L, H)
        params["dec.h0.W"], params["dec.h0.b"] = _dense_init(rng, H, L)
        params["dec.c0.W"], params["dec.c0.b"] = _dense_init(rng, H, L)
        params.update({f"dec.lstm.{k}": v for k, v in _lstm_init(rng, H, L).items()})
        params["dec.out.W"], params["dec.out.b"] = _dense_init(rng, F, H)
        return params

    @staticmethod
    def _cell(p: Dict[str, Tensor], prefix: str) -> LstmCellParams:
        return LstmCellParams(W=p[f"{prefix}.W"], U=p[f"{prefix}.U"], b=p[f"{prefix}.b"])

    def encode(self, x: Tensor, p: Dict[str, Tensor]) -> Tuple[Tensor, Optional[Tensor]]:
        F, H = self.spec.lstm_features, self.spec.lstm_hidden
        cell = self._cell(p, "enc.lstm")
        h = Tensor(np.zeros((x.shape[0], H)))
        c = Tensor(np.zeros((x.shape[0], H)))
        for t in range(self.spec.lstm_steps):
            h, c = lstm_cell(x.columns(t * F, (t + 1) * F), h, c, cell)
        mu = dense_forward(h, p["mu.W"], p["mu.b"])
        logvar = dense_forward(h, p["logvar.W"], p["logvar.b"])
        return mu, logvar

    def decode(self, z: Tensor, p: Dict[str, Tensor]) -> Tensor:
        cell = self._cell(p, "dec.lstm")
        h = dense_forward(z, p["dec.h0.W"], p["dec.h0.b"]).tanh()
        c = dense_forward(z, p["dec.c0.W"], p["dec.c0.b"])
        steps = []
        for _ in range(self.spec.lstm_steps):
            h, c = lstm_cell(z, h, c, cell)
            steps.append(dense_forward(h, p["dec.out.W"], p["dec.out.b"]))
        return concat(steps, axis=1)


NETWORKS = {"ae": Autoencoder, "vae": VariationalAutoencoder, "vae-lstm": VaeLstm}


def build_network(spec: ReducerSpec, input_dim: int):
    if spec.kind not in NETWORKS:
        raise ConfigError(f"'{spec.kind}' is not a network reducer")
    return NETWORKS[spec.kind](spec, input_dim)


def _as_tensors(params: Dict[str, np.ndarray], trainable: bool) -> Dict[str, Tensor]:
    if trainable:
        return {name: parameter(value) for name, value in params.items()}
    return {name: Tensor(value) for name, value in params.items()}


def network_loss(net, params: Dict[str, Tensor], x: np.ndarray,
                 noise: Optional[np.ndarray] = None) -> Tensor:
    """Total loss of a batch; the scalar function the gradient checks differentiate."""
    total, _, _ = net.loss(Tensor(x), params, noise)
    return total


def _evaluate(net, params: Dict[str, np.ndarray], X: np.ndarray) -> Tuple[float, float, float]:
    """Loss terms of the whole table through the mean path (no sampling noise)."""
    total, recon, kl = net.loss(Tensor(X), _as_tensors(params, trainable=False), None)
    return total.item(), recon.item(), kl.item()


def _fit_network(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    spec.validate()
    X = table.vectors
    n, dim = X.shape
    net = build_network(spec, dim)
    rng = np.random.default_rng(spec.seed)
    params = net.init_parameters(rng)
    state = AdamState()

    loss, recon, kl = _evaluate(net, params, X)
    trace = [TraceRow(epoch=0, loss=loss, recon=recon, kl=kl)]

    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        try:
            for start in range(0, n, spec.batch_size):
                batch = X[order[start:start + spec.batch_size]]
                noise = rng.standard_normal((len(batch), spec.latent_dim)) if net.variational else None
                leaves = _as_tensors(params, trainable=True)
                total, recon_t, kl_t = net.loss(Tensor(batch), leaves, noise)
                total.backward()
                grads = {name: leaf.grad for name, leaf in leaves.items()}
                params, state = adam_step(params, grads, state, lr=spec.lr)
                sums += len(batch) * np.array([total.item(), recon_t.item(), kl_t.item()])
        except NonFiniteValue as e:
            raise NonFiniteValue(f"{spec.kind} training diverged in epoch {epoch}: {e}")

        loss, recon, kl = sums / n
        trace.append(TraceRow(epoch=epoch, loss=loss, recon=recon, kl=kl))
        logger.debug("%s epoch %d/%d loss %.6f recon %.6f kl %.6f", spec.kind, epoch, spec.epochs, loss, recon, kl)

    model = ReducerModel(spec=spec, input_dim=dim, parameters=params, training_trace=trace)
    model.recon_mse = reconstruction_mse(model, X)
    logger.info("fitted %s: final loss %.6f, reconstruction mse %.6f", spec.kind, trace[-1].loss, model.recon_mse)
    return model


def fit_autoencoder(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    return _fit_network(table, _with_kind(spec, "ae"))


def fit_vae(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    return _fit_network(table, _with_kind(spec, "vae"))


def fit_vae_lstm(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    return _fit_network(table, _with_kind(spec, "vae-lstm"))


def fit_identity(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    return ReducerModel(spec=_with_kind(spec, "none"), input_dim=table.dim)


def _with_kind(spec: ReducerSpec, kind: str) -> ReducerSpec:
    if spec.kind == kind:
        return spec
    return ReducerSpec(**{**spec.__dict__, "kind": kind})


FITTERS = {"none": fit_identity, "pca": fit_pca, "ae": fit_autoencoder, "vae": fit_vae, "vae-lstm": fit_vae_lstm}


def fit_reducer(table: EmbeddingTable, spec: ReducerSpec) -> ReducerModel:
    spec.validate()
    return FITTERS[spec.kind](table, spec)


# inference

def _check_input(model: ReducerModel, vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != model.input_dim:
        raise ShapeMismatch(f"{model.kind} model expects (N, {model.input_dim}) input, got {vectors.shape}")
    return vectors


def transform(model: ReducerModel, vectors: np.ndarray) -> np.ndarray:
    """Map N x dim vectors into the model's output space; deterministic for every kind."""
    vectors = _check_input(model, vectors)
    if model.kind == "none":
        return vectors.copy()
    if model.kind == "pca":
        return (vectors - model.parameters["mean"]) @ model.parameters["components"].T
    net = build_network(model.spec, model.input_dim)
    mu, _ = net.encode(Tensor(vectors), _as_tensors(model.parameters, trainable=False))
    return mu.numpy()


def reconstruct(model: ReducerModel, vectors: np.ndarray) -> np.ndarray:
    """Encode then decode through the mean path."""
    vectors = _check_input(model, vectors)
    if model.kind == "none":
        return vectors.copy()
    if model.kind == "pca":
        components = model.parameters["components"]
        return transform(model, vectors) @ components + model.parameters["mean"]
    net = build_network(model.spec, model.input_dim)
    params = _as_tensors(model.parameters, trainable=False)
    mu, _ = net.encode(Tensor(vectors), params)
    return net.decode(mu, params).numpy()


def reconstruction_mse(model: ReducerModel, vectors: np.ndarray) -> float:
    vectors = _check_input(model, vectors)
    return float(np.mean((reconstruct(model, vectors) - vectors) ** 2))


def export_latent(model: ReducerModel, table: EmbeddingTable, fvocab: FilteredVocabulary, path) -> Path:
    """Write the reduced coordinates of every filtered word (word, x, y, is_city)."""
    words = [w for w in fvocab.words if w in table]
    points = transform(model, np.array([table.vector(w) for w in words]).reshape(len(words), table.dim))
    columns = ["x", "y"] if points.shape[1] == 2 else [f"z{k + 1}" for k in range(points.shape[1])]
    frame = pd.DataFrame(points, columns=columns)
    frame.insert(0, "word", words)
    frame["is_city"] = [int(bool(fvocab.cities_for(w))) for w in words]
    return write_frame(path, frame)


def trace_frame(model: ReducerModel) -> pd.DataFrame:
    return pd.DataFrame([r.__dict__ for r in model.training_trace], columns=["epoch", "loss", "recon", "kl"])


# persistence

_MODEL_HEADER = re.compile(r"^#reducer kind=(\S+) dim=(\d+) latent=(\d+) seed=(-?\d+)\s*$")
_SPEC_FIELDS = ("hidden_dims", "epochs", "batch_size", "lr", "kl_weight",
                "lstm_steps", "lstm_features", "lstm_hidden")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def save_model(model: ReducerModel, path) -> Path:
    spec = model.spec
    lines = [f"#reducer kind={spec.kind} dim={model.input_dim} latent={spec.latent_dim} seed={spec.seed}"]
    settings = {
        "hidden_dims": ",".join(str(d) for d in spec.hidden_dims),
        "epochs": spec.epochs,
        "batch_size": spec.batch_size,
        "lr": _fmt(spec.lr),
        "kl_weight": _fmt(spec.kl_weight),
        "lstm_steps": spec.lstm_steps,
        "lstm_features": spec.lstm_features,
        "lstm_hidden": spec.lstm_hidden,
        "recon_mse": _fmt(model.recon_mse),
        "degenerate": int(model.degenerate),
    }
    lines.append("@spec " + " ".join(f"{k}={v}" for k, v in settings.items()))

    for name, value in model.parameters.items():
        array = np.atleast_2d(value) if value.ndim < 2 else value
        lines.append(f"@param {name} {' '.join(str(s) for s in value.shape)}")
        for row in array.reshape(array.shape[0], -1):
            lines.append("\t".join(_fmt(v) for v in row))

    lines.append(f"@trace {len(model.training_trace)}")
    for row in model.training_trace:
        lines.append("\t".join([str(row.epoch), _fmt(row.loss), _fmt(row.recon), _fmt(row.kl)]))
    lines.append("@end")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _floats(path, line_no: int, text: str, count: int) -> List[float]:
    fields = text.split("\t") if text else []
    if len(fields) != count:
        raise ParseError(path, line_no, f"expected {count} values, got {len(fields)}")
    try:
        return [float(v) for v in fields]
    except ValueError:
        raise ParseError(path, line_no, "non-numeric value")


def load_model(path, expected_kind: Optional[str] = None) -> ReducerModel:
    """
    Read a model written by save_model.

    Raises:
        ParseError: malformed or truncated file
        KindMismatch: the file holds a different kind than expected_kind
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(path, 1, "empty model file")
    header = _MODEL_HEADER.match(lines[0])
    if not header:
        raise ParseError(path, 1, "expected '#reducer kind=<k> dim=<D> latent=<L> seed=<s>' header")
    kind, dim, latent, seed = header.group(1), int(header.group(2)), int(header.group(3)), int(header.group(4))
    if expected_kind is not None and kind != expected_kind:
        raise KindMismatch(f"{path} holds a '{kind}' model, expected '{expected_kind}'")

    cursor = 1

    def next_line() -> Tuple[int, str]:
        nonlocal cursor
        if cursor >= len(lines):
            raise ParseError(path, cursor + 1, "unexpected end of file")
        cursor += 1
        return cursor, lines[cursor - 1]

    line_no, line = next_line()
    if not line.startswith("@spec "):
        raise ParseError(path, line_no, "expected @spec line")
    try:
        settings = dict(item.split("=", 1) for item in line[len("@spec "):].split())
        spec = ReducerSpec(
            kind=kind, latent_dim=latent, seed=seed,
            hidden_dims=tuple(int(d) for d in settings["hidden_dims"].split(",") if d),
            epochs=int(settings["epochs"]), batch_size=int(settings["batch_size"]),
            lr=float(settings["lr"]), kl_weight=float(settings["kl_weight"]),
            lstm_steps=int(settings["lstm_steps"]), lstm_features=int(settings["lstm_features"]),
            lstm_hidden=int(settings["lstm_hidden"]),
        )
        recon_mse = float(settings["recon_mse"])
        degenerate = bool(int(settings["degenerate"]))
    except (KeyError, ValueError):
        raise ParseError(path, line_no, "malformed @spec line")

    parameters: Dict[str, np.ndarray] = {}
    trace: List[TraceRow] = []
    while True:
        line_no, line = next_line()
        if line == "@end":
            break
        fields = line.split()
        if fields[:1] == ["@param"] and len(fields) >= 2:
            try:
                shape = tuple(int(s) for s in fields[2:])
            except ValueError:
                raise ParseError(path, line_no, "bad parameter shape")
            rows = shape[0] if len(shape) >= 2 else 1
            width = int(np.prod(shape[1:])) if len(shape) >= 2 else int(np.prod(shape))
            values = []
            for _ in range(rows):
                row_no, row = next_line()
                values.extend(_floats(path, row_no, row, width))
            parameters[fields[1]] = np.array(values, dtype=np.float64).reshape(shape)
        elif fields[:1] == ["@trace"] and len(fields) == 2 and fields[1].isdigit():
            for _ in range(int(fields[1])):
                row_no, row = next_line()
                parts = row.split("\t")
                if len(parts) != 4:
                    raise ParseError(path, row_no, "expected epoch, loss, recon, kl")
                try:
                    trace.append(TraceRow(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise ParseError(path, row_no, "non-numeric trace value")
        else:
            raise ParseError(path, line_no, "expected @param, @trace or @end")

    model = ReducerModel(spec=spec, input_dim=dim, parameters=parameters, training_trace=trace,
                         recon_mse=recon_mse, degenerate=degenerate)
    _check_parameters(model, path)
    return model


def _check_parameters(model: ReducerModel, path):
    """The loaded parameter set must match what the kind's architecture expects."""
    if model.kind == "none":
        expected = {}
    elif model.kind == "pca":
        expected = {"mean": (model.input_dim,), "components": (model.spec.latent_dim, model.input_dim),
                    "eigenvalues": (model.spec.latent_dim,)}
    else:
        try:
            template = build_network(model.spec, model.input_dim).init_parameters(np.random.default_rng(0))
        except ConfigError as e:
            raise ParseError(path, 2, str(e))
        expected = {name: value.shape for name, value in template.items()}

    actual = {name: value.shape for name, value in model.parameters.items()}
    if actual != expected:
        raise ParseError(path, 0, f"parameters do not match a {model.kind} model")
