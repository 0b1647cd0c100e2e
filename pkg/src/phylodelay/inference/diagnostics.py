"""Multi-chain convergence diagnostics: split R-hat and effective sample size."""
import numpy as np


def _autocov(x):
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def split_rhat(draws) -> float:
    """
    Potential scale reduction on split chains.

    :param draws: array ``(chains, n)``.
    """
    x = np.asarray(draws, dtype=float)
    n = x.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([x[:, :n], x[:, n:2 * n]], axis=0)
    w = halves.var(axis=1, ddof=1).mean()
    b = n * halves.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def ess(draws) -> float:
    """
    Effective sample size pooling chains, with Geyer's initial monotone
    sequence truncation of the autocorrelation sum.

    :param draws: array ``(chains, n)``.
    """
    x = np.asarray(draws, dtype=float)
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    b_over_n = x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * w + b_over_n
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, forced monotone
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(m * n + 10))
    return float(m * n / tau)


def summarize_diagnostics(named_draws: dict) -> dict:
    """R-hat and ESS for each ``name -> (chains, n)`` array."""
    out = {}
    for name, d in named_draws.items():
        out[name] = {"rhat": split_rhat(d), "ess": ess(d)}
    return out
