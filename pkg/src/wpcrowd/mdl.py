"""Learned strategyproof deployment: per-axis monotone max-min networks.

Each axis has a network ``nu`` that maps a worker subset (encoded as a
+-1 vector) to a phantom value, monotonically in the subset. Along an
axis the mechanism sorts reports in descending order and returns

    max_k min(nu(top-k set), k-th largest report)

which is a generalized median and therefore strategyproof whatever the
parameters are. Training fits the phantoms so the deployment cost tracks
the cost-optimal deployment (squared cost difference), with manual
backpropagation through the selected max/min branches.

Everything runs in float64 numpy so results are bit-reproducible.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .deploy import opt_deploy_batch
from .model import Rect, SystemConfig, UNIT_SQUARE

log = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
PARAM_NAMES = ("w1", "b1", "w2", "b2")
AXES = ("x", "y")


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


class TrainingDiverged(RuntimeError):
    pass


class TiedSampleError(RuntimeError):
    """Every resampled point still sits on a max/min kink."""


# --- activation ------------------------------------------------------------

def shifted_logsigmoid(t):
    """``log(1 / (1 + exp(-t))) + 1``; increasing, bounded above by 1."""
    return 1.0 - np.logaddexp(0.0, -np.asarray(t, dtype=float))


def _dshifted(t):
    return expit(-t)


def shifted_logsigmoid_inv(v):
    v = np.asarray(v, dtype=float)
    if np.any(v >= 1):
        raise ValueError("shifted log-sigmoid only reaches values below 1")
    return -np.log(np.expm1(1.0 - v))


# --- parameters ------------------------------------------------------------

@dataclass
class AxisParams:
    """Log-weights and biases of one axis network.

    ``w1`` is ``(J, K, N)``, ``b1`` ``(J, K)``, ``w2`` ``(J, K, K)`` and
    ``b2`` ``(J, K)``; effective weights are ``exp`` of the log-weights.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "AxisParams":
        return AxisParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    @classmethod
    def zeros_like(cls, other: "AxisParams") -> "AxisParams":
        return cls(*(np.zeros_like(getattr(other, n)) for n in PARAM_NAMES))


@dataclass
class MdlModel:
    x: AxisParams
    y: AxisParams
    J: int
    K: int
    n: int
    norm: Rect = UNIT_SQUARE
    seed: int = 0
    version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.J < 1 or self.K < 1 or self.n < 1:
            raise ValueError("J, K and N must be >= 1")
        for axis in AXES:
            for name, arr in self.axis(axis).arrays().items():
                if arr.shape != self.expected_shape(name):
                    raise ModelShapeError(
                        f"{name}.{axis} has shape {arr.shape}, expected {self.expected_shape(name)}")
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name}.{axis} has non-finite entries")

    def expected_shape(self, name: str) -> tuple[int, ...]:
        return {"w1": (self.J, self.K, self.n), "b1": (self.J, self.K),
                "w2": (self.J, self.K, self.K), "b2": (self.J, self.K)}[name]

    def axis(self, axis: str) -> AxisParams:
        return self.x if axis == "x" else self.y

    def copy(self) -> "MdlModel":
        return replace(self, x=self.x.copy(), y=self.y.copy())

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for axis in AXES:
            for name, arr in self.axis(axis).arrays().items():
                yield f"{name}.{axis}", arr

    def place_batch(self, points) -> np.ndarray:
        """Deploy for ``(G, N, 2)`` reports given in task-area units."""
        pts = np.asarray(points, dtype=float)
        out = mechanism_forward(self, self.norm.normalize(pts))
        return self.norm.denormalize(out)


def init_model(n: int, J: int = 8, K: int = 8, norm: Rect = UNIT_SQUARE,
               seed: int = 0) -> MdlModel:
    """Random initial model.

    Log-weights are uniform on ``[-1, 0]``, with the first layer shifted by
    ``-ln N`` so its pre-activations stay out of saturation for any worker
    count. First-layer biases are uniform on ``[-0.5, 0.5]`` and second-layer
    biases sit on deciles of the unit interval, so the initial phantom
    values ramp across it instead of collapsing to one branch.
    """
    rng = np.random.default_rng(seed)
    deciles = np.linspace(0.1, 0.9, 9)

    def one_axis():
        w1 = rng.uniform(-1.0, 0.0, (J, K, n)) - math.log(n)
        b1 = rng.uniform(-0.5, 0.5, (J, K))
        w2 = rng.uniform(-1.0, 0.0, (J, K, K))
        q = deciles[rng.integers(0, len(deciles), (J, K))]
        b2 = shifted_logsigmoid_inv(q)
        return AxisParams(w1, b1, w2, b2)

    return MdlModel(one_axis(), one_axis(), J, K, n, norm, seed)


# --- forward ---------------------------------------------------------------

def encode_subset(t, n: int) -> np.ndarray:
    """+-1 membership vector of a set of 1-based worker ids."""
    z = -np.ones(n)
    for i in t:
        if not 1 <= i <= n:
            raise ValueError(f"worker id {i} outside 1..{n}")
        z[i - 1] = 1.0
    return z


def _nu(p: AxisParams, Z: np.ndarray, keep: bool = False):
    E1, E2 = np.exp(p.w1), np.exp(p.w2)
    A1 = np.einsum("jki,mi->mjk", E1, Z) + p.b1
    H1 = shifted_logsigmoid(A1)
    A2 = np.einsum("jkl,mjl->mjk", E2, H1) + p.b2
    H2 = shifted_logsigmoid(A2)
    ksel = np.argmin(H2, axis=2)
    mins = np.take_along_axis(H2, ksel[..., None], axis=2)[..., 0]
    jsel = np.argmax(mins, axis=1)
    nu = mins[np.arange(len(Z)), jsel]
    if not keep:
        return nu, None
    return nu, dict(Z=Z, A1=A1, H1=H1, A2=A2, H2=H2, mins=mins, ksel=ksel, jsel=jsel,
                    E1=E1, E2=E2)


def monotonic_forward(params: AxisParams, z) -> np.ndarray | float:
    """Max-min network output for one ``(N,)`` or many ``(M, N)`` inputs."""
    Z = np.asarray(z, dtype=float)
    n = params.w1.shape[2]
    if Z.shape[-1] != n:
        raise ValueError(f"input length {Z.shape[-1]} does not match N={n}")
    nu, _ = _nu(params, Z.reshape(-1, n))
    return float(nu[0]) if Z.ndim == 1 else nu.reshape(Z.shape[:-1])


def _axis_forward(p: AxisParams, coords: np.ndarray, keep: bool = False):
    G, N = coords.shape
    order = np.argsort(-coords, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(N)[None].repeat(G, 0), axis=1)
    # Z[g, k, i] = +1 iff worker i is among the k+1 largest reports
    Z = np.where(rank[:, None, :] <= np.arange(N)[None, :, None], 1.0, -1.0)
    xs = np.take_along_axis(coords, order, axis=1)
    nu, cache = _nu(p, Z.reshape(G * N, N), keep)
    nu = nu.reshape(G, N)
    via_nu = nu <= xs
    terms = np.where(via_nu, nu, xs)
    ksel = np.argmax(terms, axis=1)
    rows = np.arange(G)
    out = terms[rows, ksel]
    if not keep:
        return out, None
    cache.update(nu=nu, xs=xs, terms=terms, out_k=ksel, via_nu=via_nu[rows, ksel])
    return out, cache


def mechanism_forward(model: MdlModel, locations) -> np.ndarray:
    """Deployment in normalized coordinates for ``(N, 2)`` or ``(G, N, 2)`` reports."""
    pts = np.asarray(locations, dtype=float)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    if pts.shape[1:] != (model.n, 2):
        raise ValueError(f"expected {model.n} two-dimensional locations, got {pts.shape[1:]}")
    ox, _ = _axis_forward(model.x, pts[..., 0])
    oy, _ = _axis_forward(model.y, pts[..., 1])
    out = np.stack([ox, oy], axis=-1)
    return out[0] if single else out


# --- labels ----------------------------------------------------------------

@dataclass
class LabeledSample:
    locations: np.ndarray
    weights: np.ndarray
    label: np.ndarray


@dataclass
class LabeledSet:
    """Normalized samples with their cost weights and OPT labels."""

    points: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    config: SystemConfig

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.points[i], self.weights[i], self.labels[i])

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.points[idx], self.weights[idx], self.labels[idx], self.config)


def label_dataset(samples, weights, cfg: SystemConfig) -> LabeledSet:
    """Attach the cost-optimal deployment to each normalized sample.

    OPT is solved in task-area units and mapped back to ``[0, 1]^2``.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 3 or pts.shape[-1] != 2:
        raise ValueError("samples must be (G, N, 2)")
    w = np.broadcast_to(np.asarray(weights, dtype=float), pts.shape[:-1]).copy()
    area = cfg.task_area
    opt = opt_deploy_batch(area.denormalize(pts), w, cfg)
    return LabeledSet(pts, w, area.normalize(opt), cfg)


# --- loss and gradients ----------------------------------------------------

def _costs(out_norm, pts_norm, w, cfg: SystemConfig):
    area = cfg.task_area
    X = area.denormalize(out_norm)
    P = area.denormalize(pts_norm)
    diff = X[:, None, :] - P
    d2 = (diff ** 2).sum(-1) + cfg.h ** 2
    cost = (w * d2 ** (cfg.alpha / 2)).sum(-1)
    grad = ((w * cfg.alpha * d2 ** (cfg.alpha / 2 - 1))[..., None] * diff).sum(1)
    return cost, grad * np.array([area.width, area.height])


def _label_costs(data: LabeledSet) -> np.ndarray:
    c, _ = _costs(data.labels, data.points, data.weights, data.config)
    return c


def _axis_backward(p: AxisParams, cache: dict, dout: np.ndarray) -> AxisParams:
    g = AxisParams.zeros_like(p)
    G, N = cache["nu"].shape
    sel = np.flatnonzero(cache["via_nu"] & (dout != 0))
    if len(sel) == 0:
        return g
    m = sel * N + cache["out_k"][sel]
    jj = cache["jsel"][m]
    kk = cache["ksel"][m, jj]
    E1, E2 = cache["E1"], cache["E2"]
    dA2 = dout[sel] * _dshifted(cache["A2"][m, jj, kk])
    np.add.at(g.b2, (jj, kk), dA2)
    H1 = cache["H1"][m, jj, :]
    np.add.at(g.w2, (jj, kk), dA2[:, None] * E2[jj, kk, :] * H1)
    dA1 = dA2[:, None] * E2[jj, kk, :] * _dshifted(cache["A1"][m, jj, :])
    np.add.at(g.b1, jj, dA1)
    np.add.at(g.w1, jj, dA1[:, :, None] * E1[jj] * cache["Z"][m][:, None, :])
    return g


def loss_and_grad(model: MdlModel, data: LabeledSet, target_costs=None,
                  need_grad: bool = True):
    """Mean squared cost difference and its parameter (sub)gradient.

    Ties inside max/min go to the first index.
    """
    if target_costs is None:
        target_costs = _label_costs(data)
    pts = data.points
    ox, cx = _axis_forward(model.x, pts[..., 0], keep=need_grad)
    oy, cy = _axis_forward(model.y, pts[..., 1], keep=need_grad)
    out = np.stack([ox, oy], axis=-1)
    cost, dcost = _costs(out, pts, data.weights, data.config)
    resid = cost - target_costs
    loss = float(np.mean(resid ** 2))
    if not need_grad:
        return loss, None
    dout = (2.0 / len(pts)) * resid[:, None] * dcost
    grads = {"x": _axis_backward(model.x, cx, dout[:, 0]),
             "y": _axis_backward(model.y, cy, dout[:, 1])}
    return loss, grads


# --- training --------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 0.005
    batch: int = 200
    epochs: int = 50
    seed: int = 0
    val_fraction: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    model: MdlModel
    curve: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


class _Adam:
    def __init__(self, model: MdlModel, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {a: AxisParams.zeros_like(model.axis(a)) for a in AXES}
        self.v = {a: AxisParams.zeros_like(model.axis(a)) for a in AXES}
        self.t = 0

    def step(self, model: MdlModel, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for a in AXES:
            params, m, v, g = model.axis(a), self.m[a], self.v[a], grads[a]
            for name in PARAM_NAMES:
                gi = getattr(g, name)
                mi = getattr(m, name)
                vi = getattr(v, name)
                mi *= self.b1
                mi += (1 - self.b1) * gi
                vi *= self.b2
                vi += (1 - self.b2) * gi * gi
                update = self.lr * (mi / c1) / (np.sqrt(vi / c2) + self.eps)
                getattr(params, name)[...] -= update


def train(dataset: LabeledSet, settings: TrainSettings, init: MdlModel) -> TrainResult:
    """Adam on the squared cost difference; keeps the best-validation model.

    A ``val_fraction`` share of the data (at least one sample, when there
    are two or more) is held out for model selection.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.points.shape[1] != init.n:
        raise ValueError(f"dataset has {dataset.points.shape[1]} workers, model expects {init.n}")
    rng = np.random.default_rng(settings.seed)
    perm = rng.permutation(len(dataset))
    n_val = int(round(settings.val_fraction * len(dataset)))
    if len(dataset) >= 2:
        n_val = min(max(n_val, 1), len(dataset) - 1)
    else:
        n_val = 0
    train_set = dataset.subset(np.sort(perm[n_val:]))
    val_set = dataset.subset(np.sort(perm[:n_val])) if n_val else train_set
    train_targets = _label_costs(train_set)
    val_targets = _label_costs(val_set)

    model = init.copy()
    opt = _Adam(model, settings.learning_rate, settings.betas, settings.eps)
    best_val, _ = loss_and_grad(model, val_set, val_targets, need_grad=False)
    best = model.copy()
    curve = [{"epoch": 0, "train_loss": math.nan, "val_loss": best_val, "best_val_loss": best_val}]
    best_epoch, steps = 0, 0

    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(order), settings.batch):
            idx = order[start:start + settings.batch]
            loss, grads = loss_and_grad(model, train_set.subset(idx), train_targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {steps}")
            # the output is clipped by reported coordinates, so a blown-up
            # network can still give a finite loss; check the parameters too
            if not all(np.all(np.isfinite(a)) for g in grads.values() for a in g.arrays().values()):
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}, step {steps}")
            opt.step(model, grads)
            steps += 1
            if not all(np.all(np.isfinite(e)) and np.max(np.abs(e), initial=0.0) < 700.0
                       for _, e in model.named_parameters()):
                raise TrainingDiverged(f"parameters left the representable range at step {steps}")
            batch_losses.append(loss)
        val_loss, _ = loss_and_grad(model, val_set, val_targets, need_grad=False)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if val_loss < best_val:
            best_val, best, best_epoch = val_loss, model.copy(), epoch
        curve.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                      "val_loss": val_loss, "best_val_loss": best_val})
        log.debug("epoch %d train %.6g val %.6g", epoch, curve[-1]["train_loss"], val_loss)
    return TrainResult(best, curve, best_epoch, steps)


# --- gradient verification -------------------------------------------------

def _selection_margin(cache: dict) -> float:
    """Smallest gap between a selected max/min branch and its runner-up."""
    G, N = cache["nu"].shape
    rows = np.arange(G)
    k = cache["out_k"]
    gaps = [np.abs(cache["nu"][rows, k] - cache["xs"][rows, k])]
    if N > 1:
        t = np.sort(cache["terms"], axis=1)
        gaps.append(t[:, -1] - t[:, -2])
    m = rows * N + k
    mins = cache["mins"][m]
    if mins.shape[1] > 1:
        s = np.sort(mins, axis=1)
        gaps.append(s[:, -1] - s[:, -2])
    H2 = cache["H2"][m, cache["jsel"][m], :]
    if H2.shape[1] > 1:
        s = np.sort(H2, axis=1)
        gaps.append(s[:, 1] - s[:, 0])
    return float(min(g.min() for g in gaps))


def subgradient_check(model: MdlModel, sample: LabeledSet, rng=None, n_probes: int = 50,
                      step: float = 1e-6, tie_margin: float = 1e-5,
                      max_resamples: int = 10, jitter: float = 1e-3):
    """Max relative error between analytic and central-difference gradients.

    ``sample`` holds one or more labeled samples. When a max/min selection
    is within ``tie_margin`` of switching, the sample is jittered and
    relabeled up to ``max_resamples`` times; with ``max_resamples=0`` a
    tied sample returns ``None``. Relative errors use a denominator floor
    of ``1e-5`` times the loss-gradient scale to keep round-off in the
    finite differences from dominating near-zero components.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    data = sample
    for attempt in range(max_resamples + 1):
        _, cx = _axis_forward(model.x, data.points[..., 0], keep=True)
        _, cy = _axis_forward(model.y, data.points[..., 1], keep=True)
        if min(_selection_margin(cx), _selection_margin(cy)) > tie_margin:
            break
        if attempt == max_resamples:
            if max_resamples == 0:
                return None
            raise TiedSampleError(f"sample still tied after {max_resamples} resamples")
        pts = np.clip(data.points + rng.uniform(-jitter, jitter, data.points.shape), 0, 1)
        data = label_dataset(pts, data.weights, data.config)

    targets = _label_costs(data)
    loss, grads = loss_and_grad(model, data, targets)
    cost, dcost = _costs(mechanism_forward(model, data.points), data.points,
                         data.weights, data.config)
    scale = float(np.max(2 * np.abs(cost - targets) * np.abs(dcost).max(axis=-1)))
    floor = max(1e-5 * scale, 1e-300)

    names = [(a, name) for a in AXES for name in PARAM_NAMES]
    flat = []
    for a, name in names:
        size = getattr(model.axis(a), name).size
        flat.extend((a, name, j) for j in range(size))
    analytic = np.array([getattr(grads[a], name).reshape(-1)[j] for a, name, j in flat])
    nonzero = np.flatnonzero(analytic != 0)
    take = rng.choice(nonzero, size=min(len(nonzero), n_probes // 2), replace=False) \
        if len(nonzero) else np.array([], dtype=int)
    rest = np.setdiff1d(np.arange(len(flat)), take)
    take = np.concatenate([take, rng.choice(rest, size=n_probes - len(take), replace=False)])

    worst = 0.0
    for idx in take:
        a, name, j = flat[idx]
        arr = getattr(model.axis(a), name).reshape(-1)
        orig = arr[j]
        arr[j] = orig + step
        lp, _ = loss_and_grad(model, data, targets, need_grad=False)
        arr[j] = orig - step
        lm, _ = loss_and_grad(model, data, targets, need_grad=False)
        arr[j] = orig
        numeric = (lp - lm) / (2 * step)
        denom = max(abs(analytic[idx]), abs(numeric), floor)
        worst = max(worst, abs(analytic[idx] - numeric) / denom)
    return worst


# --- persistence -----------------------------------------------------------

def save_model(model: MdlModel, path) -> None:
    lines = [f"MDLMODEL {model.version} J={model.J} K={model.K} N={model.n}"]
    for label, arr in model.named_parameters():
        lines.append(f"{label} " + " ".join(str(d) for d in arr.shape))
        rows = arr.reshape(-1, arr.shape[-1])
        for row in rows:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    lines.append("norm " + " ".join(f"{v:.17g}" for v in model.norm.as_tuple()))
    lines.append(f"seed {model.seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> MdlModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ModelFormatError("empty model file")
    head = text[0].split()
    if len(head) != 5 or head[0] != "MDLMODEL":
        raise ModelFormatError(f"bad header: {text[0]!r}")
    if head[1] != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model version {head[1]!r}")
    try:
        dims = dict(kv.split("=") for kv in head[2:])
        J, K, n = int(dims["J"]), int(dims["K"]), int(dims["N"])
    except (ValueError, KeyError) as exc:
        raise ModelFormatError(f"bad header: {text[0]!r}") from exc

    pos = 1
    blocks: dict[str, np.ndarray] = {}
    shapes = {"w1": (J, K, n), "b1": (J, K), "w2": (J, K, K), "b2": (J, K)}
    for axis in AXES:
        for name in PARAM_NAMES:
            label = f"{name}.{axis}"
            if pos >= len(text) or text[pos].split()[:1] != [label]:
                raise ModelFormatError(f"expected block {label} at line {pos + 1}")
            shape = tuple(int(v) for v in text[pos].split()[1:])
            if shape != shapes[name]:
                raise ModelShapeError(f"{label} declares shape {shape}, expected {shapes[name]}")
            n_rows = int(np.prod(shape[:-1]))
            rows = text[pos + 1:pos + 1 + n_rows]
            # a short block runs into the next label; report it as truncation
            for k, row in enumerate(rows):
                head_tok = row.split()[:1]
                if head_tok and (head_tok[0] in ("norm", "seed") or "." in head_tok[0]
                                 and head_tok[0].split(".")[0] in PARAM_NAMES):
                    rows = rows[:k]
                    break
            try:
                values = [[float(v) for v in row.split()] for row in rows]
            except ValueError as exc:
                raise ModelFormatError(f"non-numeric entry in {label}") from exc
            if len(values) != n_rows or any(len(r) != shape[-1] for r in values):
                raise ModelShapeError(f"{label} is truncated or ragged")
            blocks[label] = np.array(values, dtype=float).reshape(shape)
            pos += 1 + n_rows
    try:
        norm_line = text[pos].split()
        seed_line = text[pos + 1].split()
    except IndexError as exc:
        raise ModelFormatError("missing norm/seed trailer") from exc
    if norm_line[0] != "norm" or len(norm_line) != 5 or seed_line[0] != "seed" or len(seed_line) != 2:
        raise ModelFormatError("malformed norm/seed trailer")
    norm = Rect(*(float(v) for v in norm_line[1:]))
    axes = {a: AxisParams(*(blocks[f"{name}.{a}"] for name in PARAM_NAMES)) for a in AXES}
    return MdlModel(axes["x"], axes["y"], J, K, n, norm, int(seed_line[1]), FORMAT_VERSION)


def mdl_deploy(model: MdlModel, points: Sequence) -> np.ndarray:
    """Deploy for one ``(N, 2)`` report set in task-area units."""
    return model.place_batch(np.asarray(points, dtype=float)[None])[0]
