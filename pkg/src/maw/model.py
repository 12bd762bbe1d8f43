"""The mixture-latent autoencoder: posterior reduction, losses, training, scoring.

Training alternates three updates per batch: an Adam step on the least
absolute deviation reconstruction loss (encoder, reduction matrix, decoder),
an RMSprop step on the clipped critic's Wasserstein-1 surrogate, and an Adam
step pushing the generator (encoder + reduction matrix) against the critic.
Scoring draws from the inlier mode only and averages cosine similarity
between a test point and its decodes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import linalg, nets
from .autodiff import Tape
from .errors import ConfigError, DomainError, NumericalError, ShapeError

VARIANTS = (
    "maw",
    "maw-mse",
    "maw-kl",
    "maw-same-rank",
    "maw-single-gaussian",
    "maw-diagonal-cov",
    "vae",
)

DEFAULT_ETA = 5.0 / 6.0


@dataclass
class Hyperparams:
    d: int = 2
    dprime: int = 128
    eta: float = DEFAULT_ETA
    samples: int = 5
    epochs: int = 100
    batch_size: int = 128
    lr_vae: float = 5e-5
    lr_critic: float = 5e-4
    variant: str = "maw"
    encoder_widths: tuple = (32, 64, 128)
    decoder_widths: tuple = (128, 64, 32)
    critic_widths: tuple = (32, 64, 128)

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)
        self.decoder_widths = tuple(self.decoder_widths)
        self.critic_widths = tuple(self.critic_widths)
        if self.d < 2 or self.d % 2 != 0:
            raise ConfigError("latent dimension d must be even and >= 2")
        if not (0.5 < self.eta < 1.0):
            raise ConfigError("mixture weight eta must lie in (0.5, 1)")
        if self.dprime < 1 or self.samples < 1 or self.epochs < 0:
            raise ConfigError("dprime >= 1, samples >= 1, epochs >= 0 required")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 (batch norm)")
        if self.lr_vae <= 0.0 or self.lr_critic <= 0.0:
            raise ConfigError("learning rates must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("encoder_widths", "decoder_widths", "critic_widths"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class MixturePosterior:
    """Per-sample latent mixture: means, factors, covariances, inlier weight."""

    mu1: np.ndarray
    mu2: np.ndarray
    mtilde1: np.ndarray
    m2: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    eta: float


def truncation_mask(d: int) -> np.ndarray:
    """Keep the d/2 largest (by signed value) of d descending eigenvalues."""
    keep = d // 2
    return np.concatenate([np.ones(keep), np.zeros(d - keep)])


def reduce(mu01, mu02, s01, s02, a, eta: float = DEFAULT_ETA, truncate: bool = True) -> MixturePosterior:
    """Map encoder features through the reduction matrix to mixture parameters.

    mu_j = A^T mu0_j; M_j = A^T diag(s0_j) A; the inlier factor is M_1 with its
    bottom d/2 eigenvalues (signed, descending) zeroed; covariances get an
    identity floor: Sigma_j = M_j M_j^T + I.
    """
    a = linalg.as_matrix(a)
    mu01, mu02 = linalg.as_vector(mu01), linalg.as_vector(mu02)
    s01, s02 = linalg.as_vector(s01), linalg.as_vector(s02)
    dprime, d = a.shape
    if d % 2 != 0:
        raise DomainError("reduction matrix must have an even number of columns")
    for v in (mu01, mu02, s01, s02):
        if v.shape != (dprime,):
            raise ShapeError(f"feature vector shape {v.shape} does not match A {a.shape}")
    mu1 = a.T @ mu01
    mu2 = a.T @ mu02
    m1 = a.T @ (s01[:, None] * a)
    m2 = a.T @ (s02[:, None] * a)
    if truncate:
        eig = linalg.sym_eig(m1)
        kept = eig.eigenvalues * truncation_mask(d)
        mtilde1 = (eig.eigenvectors * kept) @ eig.eigenvectors.T
    else:
        mtilde1 = m1
    sigma1 = mtilde1 @ mtilde1.T + np.eye(d)
    sigma2 = m2 @ m2.T + np.eye(d)
    return MixturePosterior(mu1, mu2, mtilde1, m2, sigma1, sigma2, float(eta))


def sample_latent(post: MixturePosterior, n_draws: int, rng: np.random.Generator, mode=None):
    """Reparameterized draws from the latent mixture.

    Each draw picks component 1 with probability eta (or always `mode` when
    forced, as the single-Gaussian ablation does) and returns
    z = mu_j + M_j e1 + e2 with e1, e2 ~ N(0, I), so Cov(z | j) = M_j M_j^T + I
    exactly.  Returns (draws, component labels).
    """
    if n_draws < 1:
        raise DomainError("need at least one draw")
    d = post.mu1.shape[0]
    if mode is None:
        labels = np.where(rng.random(n_draws) < post.eta, 1, 2)
    else:
        if mode not in (1, 2):
            raise DomainError("mode must be 1 or 2")
        labels = np.full(n_draws, mode, dtype=int)
    eps1 = rng.standard_normal((n_draws, d))
    eps2 = rng.standard_normal((n_draws, d))
    pick1 = labels == 1
    mu = np.where(pick1[:, None], post.mu1, post.mu2)
    factor = np.where(pick1[:, None, None], post.mtilde1, post.m2)
    z = mu + np.einsum("kde,ke->kd", factor, eps1) + eps2
    return z, labels


# --------------------------------------------------------------------- losses


def loss_vae(x, decoded, squared: bool = False) -> float:
    """(1 / LT) sum of ||x_i - decode(z_it)||_2 over the batch and draws.

    decoded has shape (L, T, D); squared=True gives the mean-squared variant.
    """
    x = np.asarray(x, dtype=np.float64)
    decoded = np.asarray(decoded, dtype=np.float64)
    if decoded.ndim != 3 or x.ndim != 2 or decoded.shape[0] != x.shape[0] or decoded.shape[2] != x.shape[1]:
        raise ShapeError(f"loss_vae shapes x{x.shape} decoded{decoded.shape} incompatible")
    norms = np.linalg.norm(x[:, None, :] - decoded, axis=2)
    return float(np.mean(norms**2 if squared else norms))


def loss_w1_critic(d_gen, d_hyp) -> float:
    """mean(critic on generated) - mean(critic on prior draws)."""
    d_gen = np.asarray(d_gen, dtype=np.float64).reshape(-1)
    d_hyp = np.asarray(d_hyp, dtype=np.float64).reshape(-1)
    if d_gen.shape != d_hyp.shape:
        raise ShapeError("generated and prior critic outputs must have equal counts")
    return float(np.mean(d_gen) - np.mean(d_hyp))


def loss_gen(d_gen) -> float:
    """-mean(critic on generated); the generator's objective."""
    return float(-np.mean(np.asarray(d_gen, dtype=np.float64)))


def cosine_score(y, decodes) -> float:
    """Mean cosine similarity between y and each decode; zero vectors score 0."""
    y = np.asarray(y, dtype=np.float64)
    decodes = np.atleast_2d(np.asarray(decodes, dtype=np.float64))
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return 0.0
    norms = np.linalg.norm(decodes, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    cos = np.where(norms > 0.0, (decodes @ y) / (safe * ny), 0.0)
    return float(np.mean(cos))


# --------------------------------------------------------------------- model


class MawModel:
    """Trainable parameters plus hyperparameters for one detector instance."""

    def __init__(self, hp: Hyperparams, feature_dim: int, store: nets.ParamStore,
                 specs: dict, optimizers: dict):
        self.hp = hp
        self.feature_dim = feature_dim
        self.store = store
        self.specs = specs
        self.optimizers = optimizers

    def to_payload(self) -> dict:
        return {
            "format": "maw-checkpoint",
            "version": 1,
            "hyperparams": self.hp.to_dict(),
            "feature_dim": self.feature_dim,
            "params": {k: v.tolist() for k, v in self.store.params.items()},
            "state": {k: v.tolist() for k, v in self.store.state.items()},
            "optimizers": {
                name: {
                    "step": opt.slots["step"],
                    "m": {k: v.tolist() for k, v in opt.slots["m"].items()},
                    "v": {k: v.tolist() for k, v in opt.slots["v"].items()},
                }
                for name, opt in self.optimizers.items()
            },
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MawModel":
        if payload.get("format") != "maw-checkpoint":
            raise ConfigError("not a model checkpoint payload")
        hp = Hyperparams.from_dict(payload["hyperparams"])
        model = init_model(hp, int(payload["feature_dim"]), np.random.default_rng(0))
        for k, v in payload["params"].items():
            model.store.params[k] = np.asarray(v, dtype=np.float64)
        for k, v in payload["state"].items():
            model.store.state[k] = np.asarray(v, dtype=np.float64)
        for name, slot in payload["optimizers"].items():
            opt = model.optimizers[name]
            opt.slots["step"] = int(slot["step"])
            for k, v in slot["m"].items():
                opt.slots["m"][k] = np.asarray(v, dtype=np.float64)
            for k, v in slot["v"].items():
                opt.slots["v"][k] = np.asarray(v, dtype=np.float64)
        return model


def _network_specs(hp: Hyperparams, feature_dim: int) -> dict:
    enc_out = 4 * (hp.d if hp.variant == "maw-diagonal-cov" else hp.dprime)
    specs = {
        "enc": nets.mlp(
            feature_dim,
            hp.encoder_widths + (enc_out,),
            "relu",
            final_transform="none" if hp.variant == "vae" else "split4",
        ),
        "dec": nets.mlp(
            hp.d,
            hp.decoder_widths + (feature_dim,),
            "relu",
            final_transform="unit_normalize",
        ),
    }
    if hp.variant != "vae":
        specs["cri"] = nets.mlp(hp.d, hp.critic_widths + (1,), "leaky_relu")
    return specs


def init_model(hp: Hyperparams, feature_dim: int, rng: np.random.Generator) -> MawModel:
    """Glorot-initialized model; parameter creation order is fixed for determinism."""
    if feature_dim < 1:
        raise ConfigError("feature dimension must be positive")
    specs = _network_specs(hp, feature_dim)
    store = nets.ParamStore()
    nets.build_mlp_params(store, "enc", specs["enc"], rng)
    uses_reduction = hp.variant not in ("vae", "maw-diagonal-cov")
    if uses_reduction:
        store.add("A", nets.glorot_init(hp.dprime, hp.d, rng))
    if hp.variant == "vae":
        store.add("head.W", nets.glorot_init(4 * hp.dprime, 2 * hp.d, rng))
        store.add("head.b", np.zeros(2 * hp.d))
    nets.build_mlp_params(store, "dec", specs["dec"], rng)
    if "cri" in specs:
        nets.build_mlp_params(store, "cri", specs["cri"], rng)

    gen_names = store.names("enc.") + (["A"] if uses_reduction else [])
    if hp.variant == "vae":
        vae_names = store.names("enc.") + store.names("head.") + store.names("dec.")
    else:
        vae_names = gen_names + store.names("dec.")
    optimizers = {
        "vae": nets.Optimizer(nets.OptimizerConfig("adam", hp.lr_vae), vae_names, store)
    }
    if "cri" in specs:
        optimizers["critic"] = nets.Optimizer(
            nets.OptimizerConfig("rmsprop", hp.lr_critic), store.names("cri."), store
        )
        optimizers["gen"] = nets.Optimizer(
            nets.OptimizerConfig("adam", hp.lr_vae), gen_names, store
        )
    return MawModel(hp, feature_dim, store, specs, optimizers)


def _forward_generated(tape: Tape, model: MawModel, xb: np.ndarray,
                       labels, point_idx, eps1, eps2, train: bool):
    """Encoder -> reduction -> reparameterized latent draws, on the tape."""
    hp = model.hp
    store = model.store
    x = tape.const(xb)
    if hp.variant == "maw-diagonal-cov":
        mu1, mu2, s1, s2 = nets.mlp_forward(tape, store, "enc", model.specs["enc"], x, train)
        keep = np.concatenate([np.ones(hp.d // 2), np.zeros(hp.d - hp.d // 2)])
        s1 = tape.hadamard(s1, tape.const(keep))
        m1 = tape.rows_to_diag_blocks(s1)
        m2 = tape.rows_to_diag_blocks(s2)
    else:
        mu01, mu02, s01, s02 = nets.mlp_forward(tape, store, "enc", model.specs["enc"], x, train)
        a = tape.param(store.params["A"], "A")
        mu1 = tape.matmul(mu01, a)
        mu2 = tape.matmul(mu02, a)
        m1 = tape.batch_diag_sandwich(a, s01)
        m2 = tape.batch_diag_sandwich(a, s02)
        if hp.variant != "maw-same-rank":
            w, u = tape.batch_sym_eig(m1, hp.d)
            w = tape.hadamard(w, tape.const(truncation_mask(hp.d)))
            m1 = tape.batch_recompose(u, w)
    return tape.mixture_sample(mu1, mu2, m1, m2, labels, point_idx, eps1, eps2)


def _decode(tape: Tape, model: MawModel, z, train: bool):
    return nets.mlp_forward(tape, model.store, "dec", model.specs["dec"], z, train)


def _critic(tape: Tape, model: MawModel, z, train: bool):
    return nets.mlp_forward(tape, model.store, "cri", model.specs["cri"], z, train)


def _draw_batch_noise(hp: Hyperparams, rng: np.random.Generator, batch_rows: int):
    """Per-batch noise in a fixed order: labels, eps1, eps2, prior draws."""
    total = batch_rows * hp.samples
    if hp.variant == "maw-single-gaussian":
        labels = np.full(total, 2, dtype=int)
    else:
        labels = np.where(rng.random(total) < hp.eta, 1, 2)
    eps1 = rng.standard_normal((total, hp.d))
    eps2 = rng.standard_normal((total, hp.d))
    z_hyp = rng.standard_normal((total, hp.d))
    point_idx = np.repeat(np.arange(batch_rows), hp.samples)
    return labels, point_idx, eps1, eps2, z_hyp


def _maw_batch_update(model: MawModel, xb: np.ndarray, noise) -> tuple[float, float, float]:
    hp = model.hp
    labels, point_idx, eps1, eps2, z_hyp = noise
    x_rep = xb[point_idx]
    squared = hp.variant == "maw-mse"
    bce = hp.variant == "maw-kl"

    # reconstruction step: encoder, reduction matrix, decoder
    tape = Tape()
    z = _forward_generated(tape, model, xb, labels, point_idx, eps1, eps2, True)
    decoded = _decode(tape, model, z, True)
    l_vae = tape.mean_rowwise_norm_diff(decoded, tape.const(x_rep), squared=squared)
    grads = tape.backward(l_vae)
    model.optimizers["vae"].step(model.store, grads)

    # critic step on fresh draws from the updated generator
    tape = Tape()
    z = _forward_generated(tape, model, xb, labels, point_idx, eps1, eps2, True)
    d_gen = _critic(tape, model, z, True)
    d_hyp = _critic(tape, model, tape.const(z_hyp), True)
    if bce:
        l_cri = tape.add(
            tape.mean_all(tape.softplus(tape.scale(d_hyp, -1.0))),
            tape.mean_all(tape.softplus(d_gen)),
        )
    else:
        l_cri = tape.add(tape.mean_all(d_gen), tape.scale(tape.mean_all(d_hyp), -1.0))
    grads = tape.backward(l_cri)
    model.optimizers["critic"].step(model.store, grads)
    if not bce:
        nets.clip_weights(model.store, model.store.names("cri."))

    # generator step against the updated critic
    tape = Tape()
    z = _forward_generated(tape, model, xb, labels, point_idx, eps1, eps2, True)
    d_gen = _critic(tape, model, z, True)
    if bce:
        l_gen = tape.mean_all(tape.softplus(tape.scale(d_gen, -1.0)))
    else:
        l_gen = tape.scale(tape.mean_all(d_gen), -1.0)
    grads = tape.backward(l_gen)
    model.optimizers["gen"].step(model.store, grads)

    return float(l_vae.value), float(l_cri.value), float(l_gen.value)


def _vae_batch_update(model: MawModel, xb: np.ndarray, noise) -> tuple[float, float, float]:
    hp = model.hp
    _, point_idx, eps1, _, _ = noise
    x_rep = xb[point_idx]

    tape = Tape()
    feats = nets.mlp_forward(tape, model.store, "enc", model.specs["enc"], tape.const(xb), True)
    head = tape.affine(
        feats,
        tape.param(model.store.params["head.W"], "head.W"),
        tape.param(model.store.params["head.b"], "head.b"),
    )
    mu = tape.col_block(head, 0, hp.d)
    logvar = tape.col_block(head, hp.d, 2 * hp.d)
    sigma = tape.exp(tape.scale(logvar, 0.5))
    z = tape.add(
        tape.gather_rows(mu, point_idx),
        tape.hadamard(tape.gather_rows(sigma, point_idx), tape.const(eps1)),
    )
    decoded = _decode(tape, model, z, True)
    recon = tape.mean_rowwise_norm_diff(decoded, tape.const(x_rep), squared=True)
    kl = tape.vae_kl_diag(mu, logvar)
    total = tape.add(recon, kl)
    grads = tape.backward(total)
    model.optimizers["vae"].step(model.store, grads)
    return float(recon.value), float(kl.value), 0.0


def train(features, hp: Hyperparams, seed: int):
    """Train a detector; returns (model, per-epoch loss trace).

    features is an (n, D) array (rows are unit-normalized on entry).  The run
    is fully determined by (features, hp, seed).  Trace entries are dicts with
    the per-epoch means of the three loss streams; for the plain-VAE variant
    the critic column carries the KL term and the generator column is zero.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("training data must be an (n >= 2, D) matrix")
    if not np.all(np.isfinite(x)):
        raise DomainError("training data must be finite")
    x = _normalize_rows(x)

    rng = np.random.default_rng(seed)
    model = init_model(hp, x.shape[1], rng)
    update = _vae_batch_update if hp.variant == "vae" else _maw_batch_update

    trace = []
    n = x.shape[0]
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        count = 0
        for start in range(0, n, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            if idx.size < 2:
                continue  # a trailing singleton cannot be batch-normalized
            noise = _draw_batch_noise(hp, rng, idx.size)
            losses = update(model, x[idx], noise)
            if not np.all(np.isfinite(losses)):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {start // hp.batch_size}"
                )
            sums += losses
            count += 1
        if count == 0:
            raise DomainError("no usable batch (need >= 2 points)")
        trace.append({
            "epoch": epoch,
            "loss_vae": sums[0] / count,
            "loss_critic": sums[1] / count,
            "loss_gen": sums[2] / count,
        })
    return model, trace


# --------------------------------------------------------------------- scoring


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0.0, x / np.where(norms > 0.0, norms, 1.0), 0.0)


def _inlier_mode_factors(model: MawModel, y_rows: np.ndarray):
    """Per-point inlier-mode mean and covariance factor for scoring.

    Returns (mu (n, d), factors (n, d, d), add_unit_noise).  The single
    Gaussian ablation scores with its only (full covariance) mode; the plain
    VAE samples N(mu, diag(sigma^2)) without the identity floor.
    """
    hp = model.hp
    store = model.store
    n = y_rows.shape[0]
    d = hp.d
    if hp.variant == "vae":
        feats = nets.mlp_apply(store, "enc", model.specs["enc"], y_rows)
        head = feats @ store.params["head.W"] + store.params["head.b"]
        mu, logvar = head[:, :d], head[:, d:]
        factors = np.zeros((n, d, d))
        idx = np.arange(d)
        factors[:, idx, idx] = np.exp(0.5 * logvar)
        return mu, factors, False
    if hp.variant == "maw-diagonal-cov":
        mu1, _, s1, _ = nets.mlp_apply(store, "enc", model.specs["enc"], y_rows)
        keep = np.concatenate([np.ones(d // 2), np.zeros(d - d // 2)])
        factors = np.zeros((n, d, d))
        idx = np.arange(d)
        factors[:, idx, idx] = s1 * keep
        return mu1, factors, True

    mu01, mu02, s01, s02 = nets.mlp_apply(store, "enc", model.specs["enc"], y_rows)
    a = store.params["A"]
    if hp.variant == "maw-single-gaussian":
        mu = mu02 @ a
        s_rows = s02
        truncate = False
    else:
        mu = mu01 @ a
        s_rows = s01
        truncate = hp.variant != "maw-same-rank"
    blocks = np.einsum("pk,lp,pq->lkq", a, s_rows, a)
    if truncate:
        mask = truncation_mask(d)
        out = np.empty_like(blocks)
        for j in range(n):
            eig = linalg.sym_eig(blocks[j])
            kept = eig.eigenvalues * mask
            out[j] = (eig.eigenvectors * kept) @ eig.eigenvectors.T
        blocks = out
    return mu, blocks, True


def score_batch(model: MawModel, y_rows, samples: int | None = None, seed: int = 0) -> np.ndarray:
    """Normality scores in [-1, 1] for each row of y_rows (higher = more normal).

    Each point gets an independent child RNG stream spawned from the seed, so
    results do not depend on how the batch is split.
    """
    y = np.asarray(y_rows, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != model.feature_dim:
        raise ShapeError(f"expected (n, {model.feature_dim}) test matrix, got {y.shape}")
    y = _normalize_rows(y)
    t = model.hp.samples if samples is None else int(samples)
    if t < 1:
        raise DomainError("need at least one scoring draw")
    n, d = y.shape[0], model.hp.d
    mu, factors, add_unit = _inlier_mode_factors(model, y)
    children = np.random.SeedSequence(seed).spawn(n)
    z = np.empty((n * t, d))
    for j in range(n):
        rng = np.random.default_rng(children[j])
        eps1 = rng.standard_normal((t, d))
        z_j = mu[j] + eps1 @ factors[j].T
        if add_unit:
            z_j = z_j + rng.standard_normal((t, d))
        z[j * t:(j + 1) * t] = z_j
    decoded = nets.mlp_apply(model.store, "dec", model.specs["dec"], z)
    scores = np.empty(n)
    for j in range(n):
        scores[j] = cosine_score(y[j], decoded[j * t:(j + 1) * t])
    return scores


def score(model: MawModel, y, samples: int | None = None,
          rng: np.random.Generator | None = None) -> float:
    """Single-point normality score; see score_batch."""
    y = linalg.as_vector(y)
    if rng is None:
        rng = np.random.default_rng(0)
    t = model.hp.samples if samples is None else int(samples)
    if t < 1:
        raise DomainError("need at least one scoring draw")
    yn = y / np.linalg.norm(y) if np.linalg.norm(y) > 0.0 else y
    mu, factors, add_unit = _inlier_mode_factors(model, yn[None, :])
    eps1 = rng.standard_normal((t, model.hp.d))
    z = mu[0] + eps1 @ factors[0].T
    if add_unit:
        z = z + rng.standard_normal((t, model.hp.d))
    decoded = nets.mlp_apply(model.store, "dec", model.specs["dec"], z)
    return cosine_score(yn, decoded)
