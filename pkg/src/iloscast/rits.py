"""Recurrent imputation + classification model and its bidirectional pair.

One directional model runs, per step: temporal decay of the hidden state,
a history-based regression estimate, a feature-based regression estimate
(zero-diagonal weight, so a feature never predicts itself), a learned
convex combination of the two, complement formation, and an LSTM cell
consuming the complement concatenated with the mask. A classifier head
reads the last hidden state. The bidirectional wrapper runs a second model
on time-reversed input and averages outputs; a consistency penalty ties
the two directions' imputation matrices together.

Everything is float64 numpy with hand-written backpropagation, verified
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import DataError, NumericError
from .missing import compute_time_gaps

DEFAULT_HIDDEN = 256
LOGIT_CLAMP = 15.0

#: Parameter blocks of one direction; the classifier blocks are the ones
#: fine-tuning may single out.
PARAM_BLOCKS = (
    "decay_h_W",
    "decay_h_b",
    "decay_x_W",
    "decay_x_b",
    "hist_W",
    "hist_b",
    "feat_W",
    "feat_b",
    "comb_W",
    "comb_b",
    "lstm_W",
    "lstm_U",
    "lstm_b",
    "cls_W",
    "cls_b",
)
CLASSIFIER_BLOCKS = ("cls_W", "cls_b")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_rits_params(
    n_features: int, hidden_size: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(H) weights, zero biases, forget-gate bias 1."""
    f, h = n_features, hidden_size
    k = 1.0 / np.sqrt(h)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-k, k, size=shape)

    params = {
        "decay_h_W": u(h, f),
        "decay_h_b": np.zeros(h),
        "decay_x_W": u(f, f),
        "decay_x_b": np.zeros(f),
        "hist_W": u(f, h),
        "hist_b": np.zeros(f),
        "feat_W": u(f, f),
        "feat_b": np.zeros(f),
        "comb_W": u(f, 2 * f),
        "comb_b": np.zeros(f),
        "lstm_W": u(4 * h, 2 * f),
        "lstm_U": u(4 * h, h),
        "lstm_b": np.zeros(4 * h),
        "cls_W": u(h),
        "cls_b": np.zeros(1),
    }
    np.fill_diagonal(params["feat_W"], 0.0)
    params["lstm_b"][h : 2 * h] = 1.0
    return params


@dataclass
class BritsModel:
    """Forward and backward directional parameter sets plus loss weights."""

    fwd: dict[str, np.ndarray]
    bwd: dict[str, np.ndarray]
    n_features: int
    hidden_size: int
    loss_weights: dict[str, float] = field(
        default_factory=lambda: {"estimation": 1.0, "consistency": 1.0, "classification": 1.0}
    )

    def copy(self) -> "BritsModel":
        return BritsModel(
            fwd={k: v.copy() for k, v in self.fwd.items()},
            bwd={k: v.copy() for k, v in self.bwd.items()},
            n_features=self.n_features,
            hidden_size=self.hidden_size,
            loss_weights=dict(self.loss_weights),
        )

    def save(self, path: str | Path) -> None:
        arrays = {}
        for tag, params in (("fwd", self.fwd), ("bwd", self.bwd)):
            for name, arr in params.items():
                arrays[f"{tag}.{name}"] = arr
        meta = {
            "format": "iloscast-brits",
            "version": 1,
            "n_features": self.n_features,
            "hidden_size": self.hidden_size,
            "loss_weights": self.loss_weights,
        }
        write_container(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "BritsModel":
        arrays, meta = read_container(path)
        if meta.get("format") != "iloscast-brits" or meta.get("version") != 1:
            raise DataError(f"{path}: not a version-1 model file")
        fwd = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("fwd.")}
        bwd = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("bwd.")}
        return cls(
            fwd=fwd,
            bwd=bwd,
            n_features=int(meta["n_features"]),
            hidden_size=int(meta["hidden_size"]),
            loss_weights=dict(meta["loss_weights"]),
        )


def init_brits(n_features: int, hidden_size: int = DEFAULT_HIDDEN, seed: int = 0) -> BritsModel:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB1D1)))
    return BritsModel(
        fwd=init_rits_params(n_features, hidden_size, rng),
        bwd=init_rits_params(n_features, hidden_size, rng),
        n_features=n_features,
        hidden_size=hidden_size,
    )


@dataclass
class RitsOutput:
    """Outputs of one direction, in that direction's time order."""

    x_prime: np.ndarray  # combined per-step estimates, (B, T, F)
    x_comp: np.ndarray  # complements m*x + (1-m)*x_prime, (B, T, F)
    hidden: np.ndarray  # hidden states, (B, T, H)
    logit: np.ndarray  # (B,)
    probability: np.ndarray  # (B,)
    estimation_loss: float
    classification_loss: float | None = None


def _check_batch(x: np.ndarray, mask: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, ...]:
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x.ndim == 2:
        x, mask, delta = x[None], mask[None], delta[None]
    if x.ndim != 3 or x.shape != mask.shape or x.shape != delta.shape:
        raise DataError(f"x/mask/delta shapes disagree: {x.shape} {mask.shape} {delta.shape}")
    if not (np.isfinite(x).all() and np.isfinite(delta).all()):
        raise DataError("model input must be finite (zero-fill absent entries)")
    return x, mask, delta


def _rits_forward_cached(
    params: dict[str, np.ndarray], x: np.ndarray, mask: np.ndarray, delta: np.ndarray
) -> dict:
    """Forward pass retaining per-step intermediates for backprop."""
    B, T, F = x.shape
    H = params["cls_W"].shape[0]
    offdiag = 1.0 - np.eye(F)
    w_off = params["feat_W"] * offdiag

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    hidden = np.empty((B, T, H))
    x_prime = np.empty((B, T, F))
    x_comp = np.empty((B, T, F))

    for t in range(T):
        xt, mt, dt = x[:, t], mask[:, t], delta[:, t]
        s_h = dt @ params["decay_h_W"].T + params["decay_h_b"]
        gamma_h = np.exp(-np.maximum(0.0, s_h))
        s_x = dt @ params["decay_x_W"].T + params["decay_x_b"]
        gamma_x = np.exp(-np.maximum(0.0, s_x))
        h_dec = gamma_h * h
        xhat = h_dec @ params["hist_W"].T + params["hist_b"]
        xh = mt * xt + (1.0 - mt) * xhat
        zhat = xh @ w_off.T + params["feat_b"]
        comb_in = np.concatenate([gamma_x, mt], axis=1)
        beta = _sigmoid(comb_in @ params["comb_W"].T + params["comb_b"])
        chat = beta * zhat + (1.0 - beta) * xhat
        xc = mt * xt + (1.0 - mt) * chat
        u = np.concatenate([xc, mt], axis=1)
        a = u @ params["lstm_W"].T + h_dec @ params["lstm_U"].T + params["lstm_b"]
        gi = _sigmoid(a[:, :H])
        gf = _sigmoid(a[:, H : 2 * H])
        gg = np.tanh(a[:, 2 * H : 3 * H])
        go = _sigmoid(a[:, 3 * H :])
        c_prev = c
        c = gf * c_prev + gi * gg
        tanh_c = np.tanh(c)
        h_prev = h
        h = go * tanh_c

        hidden[:, t] = h
        x_prime[:, t] = chat
        x_comp[:, t] = xc
        steps.append(
            {
                "gamma_h": gamma_h,
                "s_h_pos": s_h > 0,
                "gamma_x": gamma_x,
                "s_x_pos": s_x > 0,
                "h_prev": h_prev,
                "h_dec": h_dec,
                "xhat": xhat,
                "xh": xh,
                "zhat": zhat,
                "beta": beta,
                "chat": chat,
                "u": u,
                "gi": gi,
                "gf": gf,
                "gg": gg,
                "go": go,
                "c_prev": c_prev,
                "tanh_c": tanh_c,
            }
        )

    logit_raw = hidden[:, -1] @ params["cls_W"] + params["cls_b"][0]
    logit = np.clip(logit_raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    prob = _sigmoid(logit)

    m_count = mask.reshape(B, -1).sum(axis=1)
    est_norm = 3.0 * np.maximum(m_count, 1.0)
    abs_err = np.zeros(B)
    for t in range(T):
        st = steps[t]
        mt = mask[:, t]
        err = (
            np.abs(st["xhat"] - x[:, t])
            + np.abs(st["zhat"] - x[:, t])
            + np.abs(st["chat"] - x[:, t])
        )
        abs_err += (mt * err).sum(axis=1)
    est_per_sample = abs_err / est_norm

    return {
        "x": x,
        "mask": mask,
        "delta": delta,
        "w_off": w_off,
        "offdiag": offdiag,
        "steps": steps,
        "hidden": hidden,
        "x_prime": x_prime,
        "x_comp": x_comp,
        "logit_raw": logit_raw,
        "logit": logit,
        "prob": prob,
        "est_per_sample": est_per_sample,
        "est_norm": est_norm,
    }


def rits_forward(
    params: dict[str, np.ndarray], x: np.ndarray, mask: np.ndarray, delta: np.ndarray
) -> RitsOutput:
    """Run one direction; accepts (T, F) or (B, T, F) input."""
    x, mask, delta = _check_batch(x, mask, delta)
    cache = _rits_forward_cached(params, x, mask, delta)
    return RitsOutput(
        x_prime=cache["x_prime"],
        x_comp=cache["x_comp"],
        hidden=cache["hidden"],
        logit=cache["logit"],
        probability=cache["prob"],
        estimation_loss=float(cache["est_per_sample"].mean()),
    )


def _rits_backward(
    params: dict[str, np.ndarray],
    cache: dict,
    d_chat_extra: np.ndarray,
    d_logit: np.ndarray,
    est_weight: float,
) -> dict[str, np.ndarray]:
    """BPTT for one direction.

    ``d_chat_extra`` carries upstream gradient on the combined estimates
    (consistency term); ``d_logit`` the classification gradient on the
    clamped logit; ``est_weight`` scales the estimation-loss sign terms.
    """
    x, mask = cache["x"], cache["mask"]
    steps = cache["steps"]
    B, T, F = x.shape
    H = params["cls_W"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    # Per-sample estimation normalization, batch-averaged.
    alpha = (est_weight / (cache["est_norm"] * B))[:, None]

    inside_clamp = np.abs(cache["logit_raw"]) < LOGIT_CLAMP
    dz = d_logit * inside_clamp
    grads["cls_W"] += cache["hidden"][:, -1].T @ dz
    grads["cls_b"][0] += dz.sum()

    dh = dz[:, None] * params["cls_W"][None, :]
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        st = steps[t]
        xt, mt, dt = x[:, t], mask[:, t], cache["delta"][:, t]

        # LSTM cell
        do = dh * st["tanh_c"]
        dc = dc + dh * st["go"] * (1.0 - st["tanh_c"] ** 2)
        di = dc * st["gg"]
        dgg = dc * st["gi"]
        df = dc * st["c_prev"]
        dc_prev = dc * st["gf"]
        da = np.concatenate(
            [
                di * st["gi"] * (1.0 - st["gi"]),
                df * st["gf"] * (1.0 - st["gf"]),
                dgg * (1.0 - st["gg"] ** 2),
                do * st["go"] * (1.0 - st["go"]),
            ],
            axis=1,
        )
        grads["lstm_W"] += da.T @ st["u"]
        grads["lstm_U"] += da.T @ st["h_dec"]
        grads["lstm_b"] += da.sum(axis=0)
        du = da @ params["lstm_W"]
        dh_dec = da @ params["lstm_U"]
        dxc = du[:, :F]

        # Complement and the three estimates with their masked-MAE terms.
        dchat = (1.0 - mt) * dxc + mt * np.sign(st["chat"] - xt) * alpha + d_chat_extra[:, t]
        dbeta = dchat * (st["zhat"] - st["xhat"])
        dzhat = dchat * st["beta"] + mt * np.sign(st["zhat"] - xt) * alpha
        dxhat = dchat * (1.0 - st["beta"]) + mt * np.sign(st["xhat"] - xt) * alpha

        ds_b = dbeta * st["beta"] * (1.0 - st["beta"])
        comb_in = np.concatenate([st["gamma_x"], mt], axis=1)
        grads["comb_W"] += ds_b.T @ comb_in
        grads["comb_b"] += ds_b.sum(axis=0)
        dgamma_x = ds_b @ params["comb_W"][:, :F]

        grads["feat_W"] += (dzhat.T @ st["xh"]) * cache["offdiag"]
        grads["feat_b"] += dzhat.sum(axis=0)
        dxh = dzhat @ cache["w_off"]
        dxhat += (1.0 - mt) * dxh

        grads["hist_W"] += dxhat.T @ st["h_dec"]
        grads["hist_b"] += dxhat.sum(axis=0)
        dh_dec += dxhat @ params["hist_W"]

        dgamma_h = dh_dec * st["h_prev"]
        dh_prev = dh_dec * st["gamma_h"]
        ds_h = -dgamma_h * st["gamma_h"] * st["s_h_pos"]
        grads["decay_h_W"] += ds_h.T @ dt
        grads["decay_h_b"] += ds_h.sum(axis=0)
        ds_x = -dgamma_x * st["gamma_x"] * st["s_x_pos"]
        grads["decay_x_W"] += ds_x.T @ dt
        grads["decay_x_b"] += ds_x.sum(axis=0)

        dh = dh_prev
        dc = dc_prev

    return grads


def _bce(logit: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stable binary cross-entropy from (already clamped) logits."""
    return np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))


@dataclass
class BritsOutput:
    """Combined bidirectional outputs, in forward time order."""

    probability: np.ndarray
    prob_fwd: np.ndarray
    prob_bwd: np.ndarray
    imputed: np.ndarray  # m*x + (1-m)*mean of directional estimates
    x_prime_fwd: np.ndarray
    x_prime_bwd: np.ndarray  # re-reversed into forward time order
    estimation_fwd: float
    estimation_bwd: float
    consistency: float


def backward_inputs(x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-reverse x and mask; gaps are recomputed on the reversed mask."""
    xb = x[:, ::-1].copy()
    mb = mask[:, ::-1].copy()
    return xb, mb, compute_time_gaps(mb)


def brits_forward(
    model: BritsModel, x: np.ndarray, mask: np.ndarray, delta: np.ndarray
) -> BritsOutput:
    """Run both directions and average their outputs."""
    x, mask, delta = _check_batch(x, mask, delta)
    fwd = _rits_forward_cached(model.fwd, x, mask, delta)
    xb, mb, db = backward_inputs(x, mask)
    bwd = _rits_forward_cached(model.bwd, xb, mb, db)

    chat_b_aligned = bwd["x_prime"][:, ::-1]
    # Consistency ties the two directions' imputation matrices (the
    # complements) together; observed entries agree by construction, so the
    # penalty acts on the filled-in cells only.
    consistency = float(np.mean(np.abs(fwd["x_comp"] - bwd["x_comp"][:, ::-1])))
    mean_prime = 0.5 * (fwd["x_prime"] + chat_b_aligned)
    imputed = mask * x + (1.0 - mask) * mean_prime
    return BritsOutput(
        probability=0.5 * (fwd["prob"] + bwd["prob"]),
        prob_fwd=fwd["prob"],
        prob_bwd=bwd["prob"],
        imputed=imputed,
        x_prime_fwd=fwd["x_prime"],
        x_prime_bwd=chat_b_aligned,
        estimation_fwd=float(fwd["est_per_sample"].mean()),
        estimation_bwd=float(bwd["est_per_sample"].mean()),
        consistency=consistency,
    )


def brits_loss(outputs: BritsOutput, label: np.ndarray, weights: dict[str, float] | None = None) -> dict[str, float]:
    """Loss components and total for a labeled batch.

    Classification is per-direction binary cross-entropy on clamped
    logits; the total sums estimation (both directions), consistency, and
    classification (both directions).
    """
    w = weights or {"estimation": 1.0, "consistency": 1.0, "classification": 1.0}
    y = np.asarray(label, dtype=np.float64).reshape(-1)

    def bce_from_prob(p: np.ndarray) -> float:
        logit = np.log(p / (1.0 - p))
        logit = np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP)
        return float(_bce(logit, y).mean())

    comps = {
        "estimation_fwd": outputs.estimation_fwd,
        "estimation_bwd": outputs.estimation_bwd,
        "consistency": outputs.consistency,
        "classification_fwd": bce_from_prob(outputs.prob_fwd),
        "classification_bwd": bce_from_prob(outputs.prob_bwd),
    }
    comps["total"] = (
        w["estimation"] * (comps["estimation_fwd"] + comps["estimation_bwd"])
        + w["consistency"] * comps["consistency"]
        + w["classification"] * (comps["classification_fwd"] + comps["classification_bwd"])
    )
    return comps


def brits_loss_and_grads(
    model: BritsModel,
    x: np.ndarray,
    mask: np.ndarray,
    delta: np.ndarray,
    label: np.ndarray,
    phase: int = 2,
) -> tuple[dict[str, float], dict[str, dict[str, np.ndarray]]]:
    """Loss components plus analytic gradients for both directions.

    Phase 1 trains the imputation objective only (estimation both ways plus
    consistency); phase 2 adds per-direction classification.
    """
    x, mask, delta = _check_batch(x, mask, delta)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    B, T, F = x.shape
    w = model.loss_weights
    w_cls = w["classification"] if phase == 2 else 0.0

    fwd = _rits_forward_cached(model.fwd, x, mask, delta)
    xb, mb, db = backward_inputs(x, mask)
    bwd = _rits_forward_cached(model.bwd, xb, mb, db)

    # Consistency between the aligned complements; observed entries cancel,
    # so the gradient reaches the combined estimates through (1 - mask).
    diff = fwd["x_comp"] - bwd["x_comp"][:, ::-1]
    consistency = float(np.mean(np.abs(diff)))

    cons_scale = w["consistency"] / diff.size
    d_chat_fwd = (1.0 - mask) * np.sign(diff) * cons_scale
    d_chat_bwd = ((1.0 - mask) * -np.sign(diff) * cons_scale)[:, ::-1].copy()

    def class_grad(cache: dict) -> tuple[float, np.ndarray]:
        loss = float(_bce(cache["logit"], y).mean())
        dlogit = (cache["prob"] - y) / B
        return loss, dlogit

    bce_f, dlogit_f = class_grad(fwd)
    bce_b, dlogit_b = class_grad(bwd)

    grads = {
        "fwd": _rits_backward(
            model.fwd, fwd, d_chat_fwd, w_cls * dlogit_f, w["estimation"]
        ),
        "bwd": _rits_backward(
            model.bwd, bwd, d_chat_bwd, w_cls * dlogit_b, w["estimation"]
        ),
    }

    comps = {
        "estimation_fwd": float(fwd["est_per_sample"].mean()),
        "estimation_bwd": float(bwd["est_per_sample"].mean()),
        "consistency": consistency,
        "classification_fwd": bce_f,
        "classification_bwd": bce_b,
    }
    comps["total"] = (
        w["estimation"] * (comps["estimation_fwd"] + comps["estimation_bwd"])
        + w["consistency"] * comps["consistency"]
        + w_cls * (comps["classification_fwd"] + comps["classification_bwd"])
    )
    if not np.isfinite(comps["total"]):
        raise NumericError(f"non-finite loss: {comps}")
    return comps, grads


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainSchedule:
    """Two-phase training plan: imputation warm-up, then the full objective."""

    batch_size: int = 1024
    learning_rate: float = 1e-3
    max_epochs_phase1: int = 20
    max_epochs_phase2: int = 20
    patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0
    trainable: tuple[str, ...] | None = None  # None = all blocks
    shuffle: bool = True


class AdamState:
    """Adam with per-block first/second moment accumulators."""

    def __init__(self, model: BritsModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {d: {k: np.zeros_like(v) for k, v in params.items()} for d, params in (("fwd", model.fwd), ("bwd", model.bwd))}
        self.v = {d: {k: np.zeros_like(v) for k, v in params.items()} for d, params in (("fwd", model.fwd), ("bwd", model.bwd))}

    def step(
        self,
        model: BritsModel,
        grads: dict[str, dict[str, np.ndarray]],
        lr: float,
        trainable: tuple[str, ...] | None,
    ) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for d, params in (("fwd", model.fwd), ("bwd", model.bwd)):
            for k, p in params.items():
                if trainable is not None and k not in trainable:
                    continue
                g = grads[d][k]
                m = self.m[d][k]
                v = self.v[d][k]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            # A feature never predicts itself: keep the diagonal at zero.
            np.fill_diagonal(params["feat_W"], 0.0)


@dataclass
class RitsData:
    """Model-ready tensors: zero-filled x, mask, delta, labels."""

    x: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    label: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def take(self, idx: np.ndarray) -> "RitsData":
        return RitsData(self.x[idx], self.mask[idx], self.delta[idx], self.label[idx])


def evaluate_losses(model: BritsModel, data: RitsData, phase: int, batch_size: int = 1024) -> dict[str, float]:
    """Batched loss evaluation without gradients; components sample-averaged."""
    total = {
        "estimation_fwd": 0.0,
        "estimation_bwd": 0.0,
        "consistency": 0.0,
        "classification_fwd": 0.0,
        "classification_bwd": 0.0,
    }
    n = data.n
    y = data.label.astype(np.float64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = brits_forward(model, data.x[lo:hi], data.mask[lo:hi], data.delta[lo:hi])
        b = hi - lo
        total["estimation_fwd"] += out.estimation_fwd * b
        total["estimation_bwd"] += out.estimation_bwd * b
        total["consistency"] += out.consistency * b
        yb = y[lo:hi]
        for key, p in (("classification_fwd", out.prob_fwd), ("classification_bwd", out.prob_bwd)):
            logit = np.clip(np.log(p / (1.0 - p)), -LOGIT_CLAMP, LOGIT_CLAMP)
            total[key] += float(_bce(logit, yb).sum())
    comps = {k: v / n for k, v in total.items()}
    w = model.loss_weights
    w_cls = w["classification"] if phase == 2 else 0.0
    comps["estimation"] = comps["estimation_fwd"] + comps["estimation_bwd"]
    comps["total"] = (
        w["estimation"] * comps["estimation"]
        + w["consistency"] * comps["consistency"]
        + w_cls * (comps["classification_fwd"] + comps["classification_bwd"])
    )
    return comps


def train_brits(
    model: BritsModel,
    train: RitsData,
    validation: RitsData,
    schedule: TrainSchedule,
) -> tuple[BritsModel, list[dict]]:
    """Two-phase Adam training; returns a trained copy plus epoch history.

    Phase 1 optimizes estimation + consistency until the validation
    estimation loss stops improving by ``min_delta`` for ``patience``
    epochs; phase 2 optimizes the full loss under the same policy on the
    validation total. The input model is left untouched.
    """
    model = model.copy()
    opt = AdamState(model)
    rng = np.random.default_rng(np.random.SeedSequence((schedule.seed, 0x7E41)))
    history: list[dict] = []

    def run_phase(phase: int, max_epochs: int, monitor: str) -> None:
        best = np.inf
        stale = 0
        for epoch in range(max_epochs):
            order = rng.permutation(train.n) if schedule.shuffle else np.arange(train.n)
            sums = {"total": 0.0, "estimation": 0.0, "consistency": 0.0, "classification": 0.0}
            for lo in range(0, train.n, schedule.batch_size):
                idx = order[lo : lo + schedule.batch_size]
                comps, grads = brits_loss_and_grads(
                    model,
                    train.x[idx],
                    train.mask[idx],
                    train.delta[idx],
                    train.label[idx],
                    phase=phase,
                )
                opt.step(model, grads, schedule.learning_rate, schedule.trainable)
                b = idx.size
                sums["total"] += comps["total"] * b
                sums["estimation"] += (comps["estimation_fwd"] + comps["estimation_bwd"]) * b
                sums["consistency"] += comps["consistency"] * b
                sums["classification"] += (
                    comps["classification_fwd"] + comps["classification_bwd"]
                ) * b
            val = evaluate_losses(model, validation, phase, schedule.batch_size)
            history.append(
                {
                    "phase": phase,
                    "epoch": epoch,
                    "train_total": sums["total"] / train.n,
                    "train_estimation": sums["estimation"] / train.n,
                    "train_consistency": sums["consistency"] / train.n,
                    "train_classification": sums["classification"] / train.n,
                    "val_total": val["total"],
                    "val_estimation": val["estimation"],
                    "val_consistency": val["consistency"],
                    "val_classification": val["classification_fwd"] + val["classification_bwd"],
                }
            )
            monitored = val[monitor]
            if monitored < best - schedule.min_delta:
                best = monitored
                stale = 0
            else:
                stale += 1
                if stale >= schedule.patience:
                    break

    run_phase(1, schedule.max_epochs_phase1, "estimation")
    run_phase(2, schedule.max_epochs_phase2, "total")
    return model, history


def brits_predict(model: BritsModel, data: RitsData, batch_size: int = 1024) -> np.ndarray:
    """Mean of the two directions' probabilities, batched."""
    out = np.empty(data.n, dtype=np.float64)
    for lo in range(0, data.n, batch_size):
        hi = min(lo + batch_size, data.n)
        res = brits_forward(model, data.x[lo:hi], data.mask[lo:hi], data.delta[lo:hi])
        out[lo:hi] = res.probability
    return out


def brits_impute(model: BritsModel, data: RitsData, batch_size: int = 1024) -> np.ndarray:
    """Dense matrices: observed entries pass through, absent ones are filled
    with the mean of the two directions' combined estimates."""
    out = np.empty_like(data.x)
    for lo in range(0, data.n, batch_size):
        hi = min(lo + batch_size, data.n)
        res = brits_forward(model, data.x[lo:hi], data.mask[lo:hi], data.delta[lo:hi])
        out[lo:hi] = res.imputed
    return out


def finite_difference_block_errors(
    model: BritsModel,
    x: np.ndarray,
    mask: np.ndarray,
    delta: np.ndarray,
    label: np.ndarray,
    phase: int = 2,
    eps: float = 1e-6,
) -> dict[str, float]:
    """Relative error per parameter block between analytic and central
    finite-difference gradients.

    The error is ||fd - analytic|| / max(||fd||, ||analytic||) over each
    block, which keeps float64 roundoff on near-zero entries from
    swamping the comparison. The constrained diagonal of the
    feature-regression weight is excluded (it does not affect the loss).
    """
    _, grads = brits_loss_and_grads(model, x, mask, delta, label, phase=phase)
    errors: dict[str, float] = {}
    for dname in ("fwd", "bwd"):
        params = getattr(model, dname)
        for name, arr in params.items():
            flat = arr.ravel()
            fd = np.zeros_like(flat)
            skip_diag = name == "feat_W"
            f_dim = arr.shape[0] if skip_diag else 0
            for i in range(flat.size):
                if skip_diag and i % (f_dim + 1) == 0:
                    continue
                orig = flat[i]
                flat[i] = orig + eps
                lp = brits_loss_and_grads(model, x, mask, delta, label, phase=phase)[0]["total"]
                flat[i] = orig - eps
                lm = brits_loss_and_grads(model, x, mask, delta, label, phase=phase)[0]["total"]
                flat[i] = orig
                fd[i] = (lp - lm) / (2.0 * eps)
            g = grads[dname][name].ravel()
            denom = max(float(np.linalg.norm(fd)), float(np.linalg.norm(g)), 1e-12)
            errors[f"{dname}.{name}"] = float(np.linalg.norm(fd - g) / denom)
    return errors
