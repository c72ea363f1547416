"""Bottleneck autoencoders trained with Adam, written directly in numpy.

Three variants share the layer notation ``d -> ... -> b -> ... -> d``:

* ``linear``          encoder ``d->b``, decoder ``b->d``
* ``deep``            encoder ``d->h1->h2->b``, decoder ``b->h2->h1->d``
* ``shallow_decoder`` the deep encoder with a single ``b->d`` decoder layer

``tanh`` sits between consecutive layers of the same stack; the bottleneck
and the reconstruction are linear. Only the encoder is used to compress.
All training arithmetic is float64 and fully seeded, so a serial run is
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import pairwise

import numpy as np
from sklearn.base import (
    BaseEstimator,
    ClassNamePrefixFeaturesOutMixin,
    TransformerMixin,
)
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float, check_positive_int
from .exceptions import DimensionMismatchError, DivergenceError

LINEAR = "linear"
DEEP = "deep"
SHALLOW_DECODER = "shallow_decoder"
VARIANTS = (LINEAR, DEEP, SHALLOW_DECODER)
_VARIANT_ALIASES = {"linear": LINEAR, "single_layer": LINEAR, "1": LINEAR,
                    "deep": DEEP, "full": DEEP, "2": DEEP,
                    "shallow_decoder": SHALLOW_DECODER, "shallow": SHALLOW_DECODER, "3": SHALLOW_DECODER}

L1_DEFAULT = 10 ** -5.9
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def canonical_variant(variant):
    try:
        return _VARIANT_ALIASES[str(variant).lower()]
    except KeyError:
        raise ValueError(f"unknown autoencoder variant {variant!r}") from None


def layer_sizes(variant, in_dim, bottleneck, hidden=(512, 256)):
    """``(encoder_sizes, decoder_sizes)`` as chains of widths."""
    variant = canonical_variant(variant)
    h1, h2 = hidden
    if variant == LINEAR:
        return [in_dim, bottleneck], [bottleneck, in_dim]
    encoder = [in_dim, h1, h2, bottleneck]
    if variant == DEEP:
        return encoder, [bottleneck, h2, h1, in_dim]
    return encoder, [bottleneck, in_dim]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(enc_sizes, dec_sizes, rng):
    """Flat list ``[W0, b0, W1, b1, ...]``; weights are ``(out, in)``."""
    params = []
    for sizes in (enc_sizes, dec_sizes):
        for fan_in, fan_out in pairwise(sizes):
            params.append(_glorot(rng, fan_in, fan_out))
            params.append(np.zeros(fan_out))
    return params


def _activations(n_enc, n_dec):
    return [True] * (n_enc - 1) + [False] + [True] * (n_dec - 1) + [False]


class _Network:
    """Forward/backward over a parameter list; parameters are not copied."""

    def __init__(self, params, n_enc, n_dec):
        self.params = params
        self.n_enc = n_enc
        self.n_dec = n_dec
        self.act = _activations(n_enc, n_dec)

    def layers(self, start, stop):
        for j in range(start, stop):
            yield j, self.params[2 * j], self.params[2 * j + 1], self.act[j]

    def run(self, X, start, stop):
        a = X
        for _, W, b, act in self.layers(start, stop):
            a = a @ W.T + b
            if act:
                a = np.tanh(a)
        return a

    def encode(self, X):
        return self.run(X, 0, self.n_enc)

    def decode(self, Z):
        return self.run(Z, self.n_enc, self.n_enc + self.n_dec)

    def decoder_weights(self):
        return [self.params[2 * j] for j in range(self.n_enc, self.n_enc + self.n_dec)]

    def loss(self, X, l1=0.0):
        """``(total, mse, l1_term)`` for batch ``X``."""
        Y = self.decode(self.encode(X))
        mse = float(np.mean((Y - X) ** 2))
        l1_term = float(l1 * sum(np.abs(W).sum() for W in self.decoder_weights())) if l1 else 0.0
        return mse + l1_term, mse, l1_term

    def gradients(self, X, l1=0.0):
        """Analytic gradients of :meth:`loss` plus the batch MSE."""
        inputs = [X]
        a = X
        n_layers = self.n_enc + self.n_dec
        for _, W, b, act in self.layers(0, n_layers):
            a = a @ W.T + b
            if act:
                a = np.tanh(a)
            inputs.append(a)
        Y = inputs[-1]
        diff = Y - X
        mse = float(np.mean(diff ** 2))
        grad = 2.0 * diff / diff.size
        grads = [None] * len(self.params)
        for j in reversed(range(n_layers)):
            W = self.params[2 * j]
            if self.act[j]:
                grad = grad * (1.0 - inputs[j + 1] ** 2)
            grads[2 * j] = grad.T @ inputs[j]
            grads[2 * j + 1] = grad.sum(axis=0)
            if j:
                grad = grad @ W
        if l1:
            for j in range(self.n_enc, n_layers):
                grads[2 * j] = grads[2 * j] + l1 * np.sign(self.params[2 * j])
        return grads, mse


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    l1_coeff: float | None = None
    epochs: int = 50
    seed: int = 0
    train_source: str = "documents"
    early_stop_tol: float = 1e-4
    patience: int = 5
    hidden: tuple = (512, 256)


class AutoencoderReducer(ClassNamePrefixFeaturesOutMixin, TransformerMixin, BaseEstimator):
    """Autoencoder whose encoder serves as the dimension reducer.

    Parameters
    ----------
    variant : {"linear", "deep", "shallow_decoder"}
    bottleneck : int
        Code dimension.
    hidden : tuple of two ints
        Widths of the two hidden encoder layers (deep variants).
    batch_size, learning_rate : Adam mini-batch settings.
    l1 : float or None
        Coefficient of the L1 penalty on decoder weights; ``None`` disables
        it. ``True`` selects the default ``10**-5.9``.
    epochs : int
        Upper bound on epochs; training stops early once the relative
        improvement of the epoch loss over ``patience`` epochs drops below
        ``early_stop_tol``. ``early_stop_tol=None`` always runs every epoch.
    random_state : int
        Seeds initialization and per-epoch shuffling.

    Attributes
    ----------
    params_ : list of ndarray
        ``[W0, b0, ...]`` encoder layers followed by decoder layers.
    loss_trace_ : list of tuple
        ``(epoch, train_mse, l1_term)`` per completed epoch.
    """

    def __init__(self, variant=LINEAR, bottleneck=128, hidden=(512, 256), batch_size=128,
                 learning_rate=1e-3, l1=None, epochs=50, early_stop_tol=1e-4, patience=5,
                 random_state=0):
        self.variant = variant
        self.bottleneck = bottleneck
        self.hidden = hidden
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.l1 = l1
        self.epochs = epochs
        self.early_stop_tol = early_stop_tol
        self.patience = patience
        self.random_state = random_state

    @property
    def l1_coeff(self):
        if self.l1 is None or self.l1 is False:
            return 0.0
        if self.l1 is True:
            return L1_DEFAULT
        return float(self.l1)

    def _network(self):
        return _Network(self.params_, self.n_encoder_layers_, self.n_decoder_layers_)

    def _init(self, in_dim, rng):
        enc, dec = layer_sizes(self.variant, in_dim, self.bottleneck, tuple(self.hidden))
        self.variant_ = canonical_variant(self.variant)
        self.params_ = init_params(enc, dec, rng)
        self.n_encoder_layers_ = len(enc) - 1
        self.n_decoder_layers_ = len(dec) - 1
        self.n_features_in_ = in_dim
        self._n_features_out = self.bottleneck

    def fit(self, X, y=None):
        X = as_2d_float(X)
        n, d = X.shape
        batch = check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.bottleneck, "bottleneck")
        check_positive_int(self.epochs, "epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if n < batch:
            raise ValueError(f"need at least batch_size={batch} rows, got {n}")
        rng = np.random.default_rng(self.random_state)
        self._init(d, rng)
        net = self._network()
        l1 = self.l1_coeff
        beta1, beta2 = ADAM_BETAS
        m = [np.zeros_like(p) for p in self.params_]
        v = [np.zeros_like(p) for p in self.params_]
        step = 0
        self.loss_trace_ = []
        n_batches = n // batch
        for epoch in range(1, self.epochs + 1):
            perm = rng.permutation(n)
            batch_mse = np.empty(n_batches)
            for bi in range(n_batches):
                Xb = X[perm[bi * batch:(bi + 1) * batch]]
                grads, batch_mse[bi] = net.gradients(Xb, l1)
                step += 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for p, g, mp, vp in zip(self.params_, grads, m, v):
                    mp *= beta1
                    mp += (1.0 - beta1) * g
                    vp *= beta2
                    vp += (1.0 - beta2) * g * g
                    p -= self.learning_rate * (mp / c1) / (np.sqrt(vp / c2) + ADAM_EPS)
            epoch_mse = float(batch_mse.mean())
            l1_term = float(l1 * sum(np.abs(W).sum() for W in net.decoder_weights())) if l1 else 0.0
            if not np.isfinite(epoch_mse) or not all(np.all(np.isfinite(p)) for p in self.params_):
                raise DivergenceError(epoch)
            self.loss_trace_.append((epoch, epoch_mse, l1_term))
            if self.early_stop_tol is not None and len(self.loss_trace_) > self.patience:
                before = self.loss_trace_[-1 - self.patience][1]
                if before > 0 and (before - epoch_mse) / before < self.early_stop_tol:
                    break
                if before == 0:
                    break
        self.n_epochs_ = len(self.loss_trace_)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = as_2d_float(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"input has dimension {X.shape[1]}, encoder expects {self.n_features_in_}")
        return self._network().encode(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "params_")
        Z = as_2d_float(Z)
        if Z.shape[1] != self.bottleneck:
            raise DimensionMismatchError(
                f"codes have dimension {Z.shape[1]}, decoder expects {self.bottleneck}")
        return self._network().decode(Z)

    def batch_loss(self, X):
        """``(total, mse, l1_term)`` of the current model on ``X``."""
        check_is_fitted(self, "params_")
        return self._network().loss(as_2d_float(X), self.l1_coeff)

    def reconstruction_loss(self, X):
        return self.batch_loss(X)[1]

    @property
    def encoder_params(self):
        return self.params_[:2 * self.n_encoder_layers_]

    @property
    def decoder_params(self):
        return self.params_[2 * self.n_encoder_layers_:]

    def parameter_counts(self):
        """``(encoder_count, decoder_count)``."""
        return (sum(p.size for p in self.encoder_params),
                sum(p.size for p in self.decoder_params))

    def write_trace(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\ttrain_mse\tl1_term\n")
            fh.writelines(f"{epoch}\t{mse:.12g}\t{l1_term:.12g}\n"
                          for epoch, mse, l1_term in self.loss_trace_)


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def train(data, variant=LINEAR, config=None, bottleneck=128):
    config = config or TrainConfig()
    model = AutoencoderReducer(variant=variant, bottleneck=bottleneck, hidden=config.hidden,
                               batch_size=config.batch_size, learning_rate=config.learning_rate,
                               l1=config.l1_coeff, epochs=config.epochs,
                               early_stop_tol=config.early_stop_tol, patience=config.patience,
                               random_state=config.seed)
    return model.fit(data)


def initialized(variant, in_dim, bottleneck, hidden=(512, 256), l1=None, seed=0):
    """An untrained model with seeded initial weights (for checks and tests)."""
    model = AutoencoderReducer(variant=variant, bottleneck=bottleneck, hidden=hidden, l1=l1,
                               random_state=seed)
    model._init(in_dim, np.random.default_rng(seed))
    model.loss_trace_ = []
    return model


def encode(model, matrix):
    out = model.transform(matrix)
    return matrix.with_vectors(out) if hasattr(matrix, "with_vectors") else out


def decode(model, codes):
    out = model.inverse_transform(codes)
    return codes.with_vectors(out) if hasattr(codes, "with_vectors") else out


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    n_checked: int
    n_skipped_kinks: int
    worst_param: tuple


def grad_check(model, batch, epsilon=1e-5, max_params=2000, seed=0, floor=1e-8,
               return_details=False):
    """Compare analytic gradients with central finite differences.

    Every parameter is checked when the model has at most ``max_params``;
    otherwise a seeded sample of ``max(max_params, 1000)`` entries is used.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``. With L1 enabled,
    decoder weights within ``10 * epsilon`` of zero straddle the kink and are
    skipped (counted in the details).
    """
    check_is_fitted(model, "params_")
    X = as_2d_float(batch)
    l1 = model.l1_coeff
    params = [p.copy() for p in model.params_]
    net = _Network(params, model.n_encoder_layers_, model.n_decoder_layers_)
    analytic, _ = net.gradients(X, l1)
    decoder_ids = set(range(2 * model.n_encoder_layers_, len(params), 2))

    coords = [(pi, flat) for pi, p in enumerate(params) for flat in range(p.size)]
    if len(coords) > max_params:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=max(max_params, 1000), replace=False))
        coords = [coords[i] for i in pick]

    worst, worst_at, checked, skipped = 0.0, None, 0, 0
    for pi, flat in coords:
        p = params[pi].reshape(-1)
        original = p[flat]
        if l1 and pi in decoder_ids and abs(original) < 10 * epsilon:
            skipped += 1
            continue
        p[flat] = original + epsilon
        up = net.loss(X, l1)[0]
        p[flat] = original - epsilon
        down = net.loss(X, l1)[0]
        p[flat] = original
        numeric = (up - down) / (2 * epsilon)
        exact = analytic[pi].reshape(-1)[flat]
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
        checked += 1
        if err > worst:
            worst, worst_at = err, (pi, flat)
    if return_details:
        return GradCheckResult(worst, checked, skipped, worst_at)
    return worst
