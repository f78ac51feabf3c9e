"""NumPy lane of the hot kernels.

Every function here has a twin in the compiled extension (`_ext.pyx`)
with the same signature and the same math, so either lane can back the
tensor engine. Inputs are float32 and C-contiguous; kernels that take a
2D view expect the caller to have flattened leading axes already.
"""

import numpy as np

# tanh-based GELU; both lanes use the same approximation so they agree
# to float32 round-off.
_GELU_C = np.float32(0.7978845608028654)  # sqrt(2/pi)
_GELU_A = np.float32(0.044715)


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Row softmax of a (N, D) array, max-shifted for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Backward of row softmax given the forward output y."""
    inner = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def cross_entropy_fwd(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row -log softmax(logits)[target] via log-sum-exp.

    Returns (losses (N,), probs (N, V)); probs are cached for backward.
    """
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(logits.shape[0])
    losses = np.log(z[:, 0]) - (logits[rows, targets] - m[:, 0])
    return losses.astype(np.float32, copy=False), probs


def cross_entropy_bwd(probs: np.ndarray, targets: np.ndarray, gloss: np.ndarray) -> np.ndarray:
    """d(losses)/d(logits): (softmax - one_hot) scaled per row by gloss."""
    g = probs * gloss[:, None]
    rows = np.arange(probs.shape[0])
    g[rows, targets] -= gloss
    return g


def layernorm_fwd(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row layer norm of (N, D): y = (x - mean)/std * gain + bias.

    Moments accumulate in float64 so near-constant rows keep their
    output mean at true zero instead of eps-amplified rounding noise.
    Returns (y, xhat, inv_std); xhat and inv_std are cached for backward.
    """
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = np.square(x64 - mu).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((x64 - mu) * inv_std).astype(np.float32)
    y = xhat * gain + bias
    return y.astype(np.float32, copy=False), xhat, inv_std[:, 0].astype(np.float32)


def layernorm_bwd(
    xhat: np.ndarray, inv_std: np.ndarray, gain: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of layer norm. Returns (gx, ggain, gbias)."""
    n = xhat.shape[1]
    gh = gy * gain
    m1 = gh.mean(axis=1, keepdims=True)
    m2 = (gh * xhat).mean(axis=1, keepdims=True)
    gx = (gh - m1 - xhat * m2) * inv_std[:, None]
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    _ = n
    return gx.astype(np.float32, copy=False), ggain, gbias


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    """Elementwise GELU, tanh approximation."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))


def gelu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Backward of tanh-approximated GELU."""
    x2 = x * x
    inner = _GELU_C * (x + _GELU_A * x * x2)
    t = np.tanh(inner)
    dinner = _GELU_C * (np.float32(1.0) + np.float32(3.0) * _GELU_A * x2)
    dgelu = np.float32(0.5) * (np.float32(1.0) + t) + np.float32(0.5) * x * (np.float32(1.0) - t * t) * dinner
    return gy * dgelu


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
    bc1: float,
    bc2: float,
) -> None:
    """Fused in-place AdamW step on flat float32 buffers.

    bc1/bc2 are the bias-correction factors 1/(1-beta^t), precomputed by
    the caller so both lanes use identical scalars.
    """
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    m *= b1
    m += (np.float32(1.0) - b1) * g
    v *= b2
    v += (np.float32(1.0) - b2) * g * g
    mhat = m * np.float32(bc1)
    vhat = v * np.float32(bc2)
    p -= np.float32(lr) * (mhat / (np.sqrt(vhat) + np.float32(eps)) + np.float32(weight_decay) * p)
