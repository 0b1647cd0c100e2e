"""
Compiled single-chain sampler.

One iteration is a blocked update:

1. ``gamma`` by Hamiltonian Monte Carlo with a tridiagonal mass matrix equal to
   the random-walk precision plus the expected information of each cell
   (``C_d + beta_1^2 m_d``). The matrix depends only on the other blocks, so
   the update leaves the conditional invariant.
2. ``kappa`` by its conjugate Gamma conditional.
3. free ``beta`` by Metropolis-Hastings with a multivariate-t proposal built
   from the Laplace approximation of ``beta | gamma``.

The step size is tuned by dual averaging during burn-in and frozen after.
"""
import math

import numpy as np
from numba import njit

_T_DF = 6.0
_TINY = 1e-300


@njit(cache=True)
def gamma_logpost_grad(gamma, beta, kappa, C, E, m, w, inc, off, X, sig2, use_s, grad):
    """Log conditional of ``gamma`` (up to constants); writes its gradient into ``grad``."""
    K = gamma.size
    lp = 0.0
    for d in range(K):
        e = E[d] * math.exp(-gamma[d])
        lp += -C[d] * gamma[d] - e
        grad[d] = -C[d] + e
    if use_s:
        b1 = beta[1]
        q = X.shape[1]
        for d in range(K):
            if inc[d]:
                eta = off[d] + beta[0] + b1 * gamma[d]
                for j in range(q):
                    eta += X[d, j] * beta[2 + j]
                mu = w[d] * math.exp(eta)
                lp += m[d] * eta - mu
                grad[d] += b1 * (m[d] - mu)
    lp += -0.5 * gamma[0] * gamma[0] / sig2
    grad[0] -= gamma[0] / sig2
    for d in range(1, K):
        diff = gamma[d] - gamma[d - 1]
        lp -= 0.5 * kappa * diff * diff
        grad[d] -= kappa * diff
        grad[d - 1] += kappa * diff
    return lp


@njit(cache=True)
def _beta_logpost(beta, gamma, m, w, inc, off, X, mu_b, sd_b):
    lp = 0.0
    K = gamma.size
    q = X.shape[1]
    for d in range(K):
        if inc[d]:
            eta = off[d] + beta[0] + beta[1] * gamma[d]
            for j in range(q):
                eta += X[d, j] * beta[2 + j]
            lp += m[d] * eta - w[d] * math.exp(eta)
    for j in range(beta.size):
        z = (beta[j] - mu_b[j]) / sd_b[j]
        lp -= 0.5 * z * z
    return lp


@njit(cache=True)
def _design_row(d, gamma, X, row):
    row[0] = 1.0
    row[1] = gamma[d]
    for j in range(X.shape[1]):
        row[2 + j] = X[d, j]


@njit(cache=True)
def beta_mode(beta_start, gamma, m, w, inc, off, X, mu_b, sd_b, free):
    """Newton ascent on ``log p(beta | gamma)`` over the free coordinates."""
    P = beta_start.size
    idx = np.flatnonzero(free)
    nf = idx.size
    b = beta_start.copy()
    row = np.empty(P)
    cur = _beta_logpost(b, gamma, m, w, inc, off, X, mu_b, sd_b)
    H = np.zeros((nf, nf))
    for it in range(100):
        g = np.zeros(nf)
        H[:, :] = 0.0
        for d in range(gamma.size):
            if not inc[d]:
                continue
            _design_row(d, gamma, X, row)
            eta = off[d]
            for j in range(P):
                eta += row[j] * b[j]
            mu = w[d] * math.exp(eta)
            r = m[d] - mu
            for a in range(nf):
                g[a] += row[idx[a]] * r
                for c in range(nf):
                    H[a, c] += mu * row[idx[a]] * row[idx[c]]
        for a in range(nf):
            j = idx[a]
            g[a] -= (b[j] - mu_b[j]) / (sd_b[j] * sd_b[j])
            H[a, a] += 1.0 / (sd_b[j] * sd_b[j])
        step = np.linalg.solve(H, g)
        t = 1.0
        trial = b.copy()
        accepted = False
        for _ in range(60):
            for a in range(nf):
                trial[idx[a]] = b[idx[a]] + t * step[a]
            new = _beta_logpost(trial, gamma, m, w, inc, off, X, mu_b, sd_b)
            if new >= cur - 1e-12 * abs(cur):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        b[:] = trial
        size = np.max(np.abs(t * step))
        gain = new - cur
        cur = new
        if size < 1e-9 or (t == 1.0 and gain < 1e-12):
            break
    # Hessian at the final point
    H[:, :] = 0.0
    for d in range(gamma.size):
        if not inc[d]:
            continue
        _design_row(d, gamma, X, row)
        eta = off[d]
        for j in range(P):
            eta += row[j] * b[j]
        mu = w[d] * math.exp(eta)
        for a in range(nf):
            for c in range(nf):
                H[a, c] += mu * row[idx[a]] * row[idx[c]]
    for a in range(nf):
        j = idx[a]
        H[a, a] += 1.0 / (sd_b[j] * sd_b[j])
    return b, H


@njit(cache=True)
def _t_logq(x, center, H, idx):
    nf = idx.size
    quad = 0.0
    for a in range(nf):
        for c in range(nf):
            quad += (x[idx[a]] - center[idx[a]]) * H[a, c] * (x[idx[c]] - center[idx[c]])
    return -0.5 * (_T_DF + nf) * math.log1p(quad / _T_DF)


@njit(cache=True)
def _tridiag_factor(kappa, h, sig2, Ld, Lo):
    K = h.size
    for d in range(K):
        deg = 0.0
        if d > 0:
            deg += 1.0
        if d < K - 1:
            deg += 1.0
        diag = kappa * deg + h[d]
        if d == 0:
            diag += 1.0 / sig2
        if d == 0:
            Ld[0] = math.sqrt(diag)
        else:
            Lo[d] = -kappa / Ld[d - 1]
            Ld[d] = math.sqrt(diag - Lo[d] * Lo[d])


@njit(cache=True)
def _tridiag_solve(Ld, Lo, p, out):
    K = p.size
    out[0] = p[0] / Ld[0]
    for d in range(1, K):
        out[d] = (p[d] - Lo[d] * out[d - 1]) / Ld[d]
    out[K - 1] = out[K - 1] / Ld[K - 1]
    for d in range(K - 2, -1, -1):
        out[d] = (out[d] - Lo[d + 1] * out[d + 1]) / Ld[d]


@njit(cache=True, nogil=True)
def run_chain(rng, gamma0, kappa0, beta0, C, E, m, w, inc, off, X, sig2, a_k, b_k,
              mu_b, sd_b, free_b, use_s, n_iter, n_burn, thin, n_leap, target, eps0,
              update_gamma, update_kappa, update_beta,
              out_gamma, out_kappa, out_beta, info):
    K = gamma0.size
    gamma = gamma0.copy()
    kappa = kappa0
    beta = beta0.copy()
    grad = np.empty(K)
    grad_new = np.empty(K)
    prop = np.empty(K)
    p = np.empty(K)
    v = np.empty(K)
    h = np.empty(K)
    Ld = np.empty(K)
    Lo = np.zeros(K)
    idx = np.flatnonzero(free_b)
    nf = idx.size
    # Newton restarts from the last mode, never the current beta, so the
    # proposal stays independent of the state being updated
    mode_start = beta0.copy()

    log_eps = math.log(eps0)
    mu_da = math.log(10.0 * eps0)
    h_bar = 0.0
    log_eps_bar = 0.0
    eps = eps0
    acc_g = 0.0
    acc_b = 0.0
    n_post = 0
    k_out = 0
    shape_post = a_k + 0.5 * (K - 1)
    nc_step = 0.5

    for it in range(n_iter):
        # --- gamma: HMC ---
        if update_gamma:
            for d in range(K):
                h[d] = C[d]
                if use_s and inc[d]:
                    h[d] += beta[1] * beta[1] * m[d]
            _tridiag_factor(kappa, h, sig2, Ld, Lo)
            for d in range(K):
                v[d] = rng.standard_normal()
            p[0] = Ld[0] * v[0]
            for d in range(1, K):
                p[d] = Lo[d] * v[d - 1] + Ld[d] * v[d]
            lp0 = gamma_logpost_grad(gamma, beta, kappa, C, E, m, w, inc, off, X, sig2, use_s, grad)
            _tridiag_solve(Ld, Lo, p, v)
            h0 = -lp0 + 0.5 * np.dot(p, v)
            step = eps * (0.8 + 0.4 * rng.random())
            prop[:] = gamma
            for d in range(K):
                p[d] += 0.5 * step * grad[d]
            lp1 = 0.0
            for l in range(n_leap):
                _tridiag_solve(Ld, Lo, p, v)
                for d in range(K):
                    prop[d] += step * v[d]
                lp1 = gamma_logpost_grad(prop, beta, kappa, C, E, m, w, inc, off, X, sig2, use_s, grad_new)
                if not math.isfinite(lp1):
                    break
                scale = step if l < n_leap - 1 else 0.5 * step
                for d in range(K):
                    p[d] += scale * grad_new[d]
            alpha = 0.0
            if math.isfinite(lp1):
                _tridiag_solve(Ld, Lo, p, v)
                h1 = -lp1 + 0.5 * np.dot(p, v)
                if math.isfinite(h1):
                    alpha = 1.0 if h0 - h1 >= 0 else math.exp(h0 - h1)
            if rng.random() < alpha:
                gamma[:] = prop
            if it < n_burn:
                t = it + 1.0
                h_bar = (1.0 - 1.0 / (t + 10.0)) * h_bar + (target - alpha) / (t + 10.0)
                log_eps = mu_da - math.sqrt(t) / 0.05 * h_bar
                weight = t ** -0.75
                log_eps_bar = weight * log_eps + (1.0 - weight) * log_eps_bar
                eps = math.exp(log_eps)
                if it == n_burn - 1:
                    eps = math.exp(log_eps_bar)
            else:
                acc_g += alpha

        # --- kappa: conjugate Gamma ---
        if update_kappa:
            ss = 0.0
            for d in range(1, K):
                diff = gamma[d] - gamma[d - 1]
                ss += diff * diff
            kappa = rng.standard_gamma(shape_post) / (b_k + 0.5 * ss)
            if kappa < _TINY:
                kappa = _TINY
            # non-centred move: rescale the increments jointly with kappa so
            # that whitened increments stay fixed (only the likelihood changes)
            if update_gamma and K > 1:
                u = rng.standard_normal() * nc_step
                kappa_new = kappa * math.exp(u)
                scale = math.exp(-0.5 * u)
                prop[0] = gamma[0]
                for d in range(1, K):
                    prop[d] = prop[d - 1] + (gamma[d] - gamma[d - 1]) * scale
                lp_old = gamma_logpost_grad(gamma, beta, kappa, C, E, m, w, inc, off, X, sig2, use_s, grad)
                lp_new = gamma_logpost_grad(prop, beta, kappa_new, C, E, m, w, inc, off, X, sig2, use_s, grad_new)
                log_r = (lp_new - lp_old + a_k * u - b_k * (kappa_new - kappa))
                a_nc = 0.0
                if math.isfinite(log_r):
                    a_nc = 1.0 if log_r >= 0 else math.exp(log_r)
                if rng.random() < a_nc and kappa_new > _TINY:
                    kappa = kappa_new
                    gamma[:] = prop
                if it < n_burn:
                    nc_step *= math.exp((a_nc - 0.44) / math.sqrt(it + 1.0))

        # --- beta: Laplace-t independence Metropolis ---
        if use_s and update_beta and nf > 0:
            center, H = beta_mode(mode_start, gamma, m, w, inc, off, X, mu_b, sd_b, free_b)
            mode_start[:] = center
            L = np.linalg.cholesky(H)
            z = np.empty(nf)
            for a in range(nf):
                z[a] = rng.standard_normal()
            # delta = L^{-T} z has covariance H^{-1}
            delta = np.linalg.solve(L.T, z)
            chi = 2.0 * rng.standard_gamma(0.5 * _T_DF)
            sc = math.sqrt(_T_DF / chi)
            cand = beta.copy()
            for a in range(nf):
                cand[idx[a]] = center[idx[a]] + sc * delta[a]
            log_r = (_beta_logpost(cand, gamma, m, w, inc, off, X, mu_b, sd_b)
                     - _beta_logpost(beta, gamma, m, w, inc, off, X, mu_b, sd_b)
                     + _t_logq(beta, center, H, idx) - _t_logq(cand, center, H, idx))
            a_b = 1.0 if log_r >= 0 else math.exp(log_r)
            if rng.random() < a_b:
                beta[:] = cand
            if it >= n_burn:
                acc_b += a_b

        if it >= n_burn:
            n_post += 1
            if (it - n_burn) % thin == 0 and k_out < out_kappa.size:
                out_gamma[k_out, :] = gamma
                out_kappa[k_out] = kappa
                out_beta[k_out, :] = beta
                k_out += 1

    info[0] = eps
    info[1] = acc_g / max(n_post, 1)
    info[2] = acc_b / max(n_post, 1)
    info[3] = k_out
