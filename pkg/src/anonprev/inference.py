"""Posterior sampling, prediction, and areal aggregation.

The sampler is adaptive Metropolis-within-Gibbs targeting the joint
posterior of the hierarchical model: a joint Gaussian random-walk block for
beta, per-region scalar walks for the structured and unstructured effects
(with sum-to-zero re-centering of w after each sweep, compensated through
the intercept so the posterior is left exactly invariant), and scalar walks
on log tau, logit phi, and log sigma_eps^2 with the matching Jacobians.
Proposal scales adapt toward the target acceptance rates during burn-in only
and freeze afterwards.  Given a seed, runs are bit-reproducible.

Likelihood terms are evaluated through a vectorized batch evaluator that
regroups clusters by the regions their schemes touch, so single-region
updates only recompute the clusters they affect.  numpy's pairwise
reductions keep the summation order fixed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigError, DataError, NumericError
from .grid import FineGrid
from .model import (
    ClusterRecord,
    LatentField,
    ModelParams,
    binomial_logcoef,
    DEFAULT_GH_ORDER,
    _gauss_hermite,
)
from .priors import (
    PriorSet,
    pc_phi_log_density,
    pc_precision_log_density,
    pc_variance_log_density,
)

_SCALE_BOUNDS = (math.log(1e-6), math.log(1e6))
_LOGIT_CLAMP = math.log(1.0 - 1e-9) - math.log(1e-9)
_LOG_CLAMP = 46.0


@dataclass
class McmcConfig:
    """Sampler settings; burn-in must be shorter than the run."""

    n_iterations: int
    n_burnin: int
    thin: int = 1
    seed: int = 0
    adapt_window: int = 50
    target_accept_scalar: float = 0.44
    target_accept_vector: float = 0.234
    gh_order: int = DEFAULT_GH_ORDER

    def __post_init__(self):
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ConfigError("require 0 <= n_burnin < n_iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.gh_order < 1:
            raise ConfigError("gh_order must be >= 1")


@dataclass(eq=False)
class PosteriorSamples:
    """Thinned post-burn-in draws plus per-block acceptance diagnostics."""

    beta: np.ndarray          # (S, p+1)
    w: np.ndarray             # (S, R)
    v: np.ndarray             # (S, R)
    tau: np.ndarray           # (S,)
    phi: np.ndarray           # (S,)
    sigma_eps_sq: np.ndarray  # (S,)
    acceptance: dict

    @property
    def n_draws(self) -> int:
        return self.tau.size

    def params_at(self, s: int) -> ModelParams:
        return ModelParams(self.beta[s], float(self.tau[s]), float(self.phi[s]),
                           float(self.sigma_eps_sq[s]))

    def latent_at(self, s: int) -> LatentField:
        return LatentField(self.w[s], self.v[s])


class _LikelihoodEvaluator:
    """Vectorized position-marginalized binomial likelihood over clusters."""

    def __init__(self, data: Sequence[ClusterRecord], grid: FineGrid, gh_order: int,
                 n_regions: Optional[int] = None):
        self.n_records = len(data)
        self.gh_x, self.gh_logw = _gauss_hermite(gh_order)
        all_points = (
            np.concatenate([r.scheme.points for r in data])
            if data else np.zeros(0, dtype=int)
        )
        self.used_cells = np.unique(all_points)
        self.X = np.column_stack(
            [np.ones(self.used_cells.size), grid.covariates[self.used_cells]]
        )
        self.cell_region = grid.region[self.used_cells]
        if n_regions is None:
            n_regions = grid.n_regions
        self.region_cells = [
            np.flatnonzero(self.cell_region == r) for r in range(n_regions)
        ]

        groups: dict = {}
        for i, rec in enumerate(data):
            groups.setdefault(rec.survey, []).append(i)
        self.batches = []
        self.record_batch = np.zeros(self.n_records, dtype=int)
        self.record_row = np.zeros(self.n_records, dtype=int)
        region_sets = [set() for _ in range(n_regions)]
        for b, (_, ids) in enumerate(sorted(groups.items())):
            kmax = max(data[i].scheme.k for i in ids)
            c = len(ids)
            idx = np.zeros((c, kmax), dtype=int)
            logom = np.full((c, kmax), -np.inf)
            y = np.zeros(c)
            n = np.zeros(c)
            logcomb = np.zeros(c)
            for row, i in enumerate(ids):
                rec = data[i]
                k = rec.scheme.k
                idx[row, :k] = np.searchsorted(self.used_cells, rec.scheme.points)
                with np.errstate(divide="ignore"):
                    logom[row, :k] = np.log(rec.scheme.omega)
                y[row] = rec.y
                n[row] = rec.n
                logcomb[row] = binomial_logcoef(rec.y, rec.n)
                self.record_batch[i] = b
                self.record_row[i] = row
                for rg in np.unique(grid.region[rec.scheme.points]):
                    region_sets[rg].add(i)
            # parameter-independent part of the log terms, (c, K, J)
            base = logom[:, :, None] + self.gh_logw[None, None, :]
            self.batches.append(
                {"ids": np.asarray(ids), "idx": idx, "base": base,
                 "y": y[:, None, None], "n": n[:, None, None], "logcomb": logcomb}
            )
        self.region_records = [np.array(sorted(s), dtype=int) for s in region_sets]

    def _eval_batch_rows(self, batch, rows, eta_used, sigma_eps_sq):
        # log Binom(y | n, expit(z)) = logcomb + y z - n softplus(z), so one
        # transcendental pass covers both success and failure terms
        idx = batch["idx"][rows]
        z = eta_used[idx][:, :, None] + math.sqrt(2.0 * sigma_eps_sq) * self.gh_x
        sp = np.logaddexp(0.0, z)
        terms = batch["base"][rows] + batch["y"][rows] * z - batch["n"][rows] * sp
        flat = terms.reshape(terms.shape[0], -1)
        m = flat.max(axis=1)
        out = m + np.log(np.exp(flat - m[:, None]).sum(axis=1))
        return batch["logcomb"][rows] + out

    def eval_all(self, eta_used, sigma_eps_sq) -> np.ndarray:
        out = np.zeros(self.n_records)
        for batch in self.batches:
            rows = np.arange(batch["ids"].size)
            out[batch["ids"]] = self._eval_batch_rows(batch, rows, eta_used, sigma_eps_sq)
        return out

    def eval_subset(self, record_ids, eta_used, sigma_eps_sq) -> np.ndarray:
        out = np.zeros(record_ids.size)
        for b, batch in enumerate(self.batches):
            sel = np.flatnonzero(self.record_batch[record_ids] == b)
            if sel.size == 0:
                continue
            rows = self.record_row[record_ids[sel]]
            out[sel] = self._eval_batch_rows(batch, rows, eta_used, sigma_eps_sq)
        return out


def _initial_intercept(data: Sequence[ClusterRecord]) -> float:
    tot_y = sum(r.y for r in data)
    tot_n = sum(r.n for r in data)
    if tot_n == 0:
        return 0.0
    p = min(max(tot_y / tot_n, 0.5 / tot_n), 1.0 - 0.5 / tot_n)
    return math.log(p / (1.0 - p))


def fit(data: Sequence[ClusterRecord], grid: FineGrid, priors: PriorSet,
        config: McmcConfig, *, beta_likelihood_hook=None) -> PosteriorSamples:
    """Run the adaptive Metropolis-within-Gibbs sampler.

    ``beta_likelihood_hook`` replaces the cluster likelihood with a Gaussian
    likelihood (X, y, sigma^2) on beta alone (testing hook for the conjugate
    cross-check); ``data`` must then be empty.
    """
    R = priors.structured.n_regions
    if int(grid.region.max()) >= R:
        raise ConfigError("region labels exceed the prior graph size")
    for rec in data:
        if rec.scheme is None:
            raise DataError("all records must carry integration schemes before fitting")
    if beta_likelihood_hook is not None and data:
        raise ConfigError("the Gaussian beta hook requires an empty data list")

    p = grid.n_covariates
    rng = np.random.default_rng(config.seed)
    ev = _LikelihoodEvaluator(data, grid, config.gh_order, n_regions=R)

    beta = np.zeros(p + 1)
    beta[0] = _initial_intercept(data)
    w = np.zeros(R)
    v = np.zeros(R)
    log_tau = 0.0
    logit_phi = 0.0
    log_sig = 0.0

    hook = None
    if beta_likelihood_hook is not None:
        hx, hy, hs2 = beta_likelihood_hook
        hx = np.asarray(hx, dtype=float)
        hy = np.asarray(hy, dtype=float)
        if hx.shape[1] != p + 1:
            raise ConfigError("hook design matrix must have p+1 columns")
        hook = (hx, hy, float(hs2))

    def hook_ll(b):
        if hook is None:
            return 0.0
        resid = hook[1] - hook[0] @ b
        return float(-0.5 * np.sum(resid ** 2) / hook[2])

    def beta_log_prior(b):
        if priors.beta_variance is None:
            return 0.0
        return float(-0.5 * np.sum(b ** 2) / priors.beta_variance)

    def w_log_prior(wv):
        return -0.5 * float(wv @ priors.structured.q_star @ wv)

    def u_region(w_, v_, tau_, phi_):
        return (math.sqrt(phi_) * w_ + math.sqrt(1.0 - phi_) * v_) / math.sqrt(tau_)

    tau = math.exp(log_tau)
    phi = expit(logit_phi)
    sig = math.exp(log_sig)
    xb = ev.X @ beta
    u_used = u_region(w, v, tau, phi)[ev.cell_region]
    rec_ll = ev.eval_all(xb + u_used, sig)
    if not np.all(np.isfinite(rec_ll)):
        raise NumericError("bad initialization: non-finite posterior")

    block_names = (["beta"] + [f"w[{r}]" for r in range(R)]
                   + [f"v[{r}]" for r in range(R)]
                   + ["log_tau", "logit_phi", "log_sigma_eps"])
    log_scale = {name: math.log(0.1) if name == "beta" else 0.0 for name in block_names}
    targets = {name: (config.target_accept_vector if name == "beta"
                      else config.target_accept_scalar) for name in block_names}
    window_prop = {name: 0 for name in block_names}
    window_acc = {name: 0 for name in block_names}
    total_prop = {name: 0 for name in block_names}
    total_acc = {name: 0 for name in block_names}

    n_stored = (config.n_iterations - config.n_burnin + config.thin - 1) // config.thin
    out_beta = np.empty((n_stored, p + 1))
    out_w = np.empty((n_stored, R))
    out_v = np.empty((n_stored, R))
    out_tau = np.empty(n_stored)
    out_phi = np.empty(n_stored)
    out_sig = np.empty(n_stored)

    def accept(name, delta):
        window_prop[name] += 1
        total_prop[name] += 1
        ok = math.log(rng.uniform()) < delta if delta < 0 else True
        if ok:
            window_acc[name] += 1
            total_acc[name] += 1
        return ok

    stored = 0
    batch_no = 0
    for it in range(config.n_iterations):
        # --- beta block (joint Gaussian random walk) ---
        step = math.exp(log_scale["beta"]) * rng.standard_normal(p + 1)
        beta_prop = beta + step
        xb_prop = ev.X @ beta_prop
        ll_prop = ev.eval_all(xb_prop + u_used, sig)
        delta = (float(ll_prop.sum() - rec_ll.sum())
                 + beta_log_prior(beta_prop) - beta_log_prior(beta)
                 + hook_ll(beta_prop) - hook_ll(beta))
        if accept("beta", delta):
            beta, xb, rec_ll = beta_prop, xb_prop, ll_prop

        # --- structured effects, one scalar walk per region ---
        s_phi_tau = math.sqrt(phi / tau)
        for r in range(R):
            name = f"w[{r}]"
            dw = math.exp(log_scale[name]) * rng.standard_normal()
            w_prop = w.copy()
            w_prop[r] += dw
            delta = w_log_prior(w_prop) - w_log_prior(w)
            ids = ev.region_records[r]
            if ids.size:
                eta = xb + u_used
                eta_prop = eta.copy()
                eta_prop[ev.region_cells[r]] += s_phi_tau * dw
                ll_sub = ev.eval_subset(ids, eta_prop, sig)
                delta += float(ll_sub.sum() - rec_ll[ids].sum())
            else:
                ll_sub = None
            if accept(name, delta):
                w = w_prop
                u_used = u_used.copy()
                u_used[ev.region_cells[r]] += s_phi_tau * dw
                if ll_sub is not None:
                    rec_ll[ids] = ll_sub

        # Re-center w; the intercept absorbs the shift so the linear
        # predictor (and thus the likelihood) is untouched.  With a flat
        # beta prior the move is exactly posterior-invariant; with a
        # Gaussian prior it is accepted through the prior ratio.
        mean_w = float(w.mean())
        if mean_w != 0.0:
            beta_shift = beta.copy()
            beta_shift[0] += s_phi_tau * mean_w
            d_prior = beta_log_prior(beta_shift) - beta_log_prior(beta) \
                + hook_ll(beta_shift) - hook_ll(beta)
            if d_prior >= 0 or math.log(rng.uniform()) < d_prior:
                w = w - mean_w
                beta = beta_shift
                xb = xb + s_phi_tau * mean_w
                u_used = u_used - s_phi_tau * mean_w

        # --- unstructured effects ---
        s_psi_tau = math.sqrt((1.0 - phi) / tau)
        for r in range(R):
            name = f"v[{r}]"
            dv = math.exp(log_scale[name]) * rng.standard_normal()
            delta = -0.5 * ((v[r] + dv) ** 2 - v[r] ** 2)
            ids = ev.region_records[r]
            if ids.size:
                eta = xb + u_used
                eta_prop = eta.copy()
                eta_prop[ev.region_cells[r]] += s_psi_tau * dv
                ll_sub = ev.eval_subset(ids, eta_prop, sig)
                delta += float(ll_sub.sum() - rec_ll[ids].sum())
            else:
                ll_sub = None
            if accept(name, delta):
                v = v.copy()
                v[r] += dv
                u_used = u_used.copy()
                u_used[ev.region_cells[r]] += s_psi_tau * dv
                if ll_sub is not None:
                    rec_ll[ids] = ll_sub

        # --- log tau ---
        lt_prop = log_tau + math.exp(log_scale["log_tau"]) * rng.standard_normal()
        if abs(lt_prop) <= _LOG_CLAMP:
            tau_prop = math.exp(lt_prop)
            u_prop = u_region(w, v, tau_prop, phi)[ev.cell_region]
            ll_prop = ev.eval_all(xb + u_prop, sig)
            delta = (float(ll_prop.sum() - rec_ll.sum())
                     + pc_precision_log_density(tau_prop, priors.tau)
                     - pc_precision_log_density(tau, priors.tau)
                     + lt_prop - log_tau)
        else:
            delta = -math.inf
        if accept("log_tau", delta):
            log_tau, tau, u_used, rec_ll = lt_prop, tau_prop, u_prop, ll_prop

        # --- logit phi ---
        lp_prop = logit_phi + math.exp(log_scale["logit_phi"]) * rng.standard_normal()
        if abs(lp_prop) <= _LOGIT_CLAMP:
            phi_prop = float(expit(lp_prop))
            u_prop = u_region(w, v, tau, phi_prop)[ev.cell_region]
            ll_prop = ev.eval_all(xb + u_prop, sig)
            delta = (float(ll_prop.sum() - rec_ll.sum())
                     + pc_phi_log_density(phi_prop, priors.phi)
                     - pc_phi_log_density(phi, priors.phi)
                     + math.log(phi_prop) + math.log1p(-phi_prop)
                     - math.log(phi) - math.log1p(-phi))
        else:
            delta = -math.inf
        if accept("logit_phi", delta):
            logit_phi, phi, u_used, rec_ll = lp_prop, phi_prop, u_prop, ll_prop

        # --- log sigma_eps^2 (linear predictor unchanged) ---
        ls_prop = log_sig + math.exp(log_scale["log_sigma_eps"]) * rng.standard_normal()
        if abs(ls_prop) <= _LOG_CLAMP:
            sig_prop = math.exp(ls_prop)
            ll_prop = ev.eval_all(xb + u_used, sig_prop)
            delta = (float(ll_prop.sum() - rec_ll.sum())
                     + pc_variance_log_density(sig_prop, priors.sigma_eps)
                     - pc_variance_log_density(sig, priors.sigma_eps)
                     + ls_prop - log_sig)
        else:
            delta = -math.inf
        if accept("log_sigma_eps", delta):
            log_sig, sig, rec_ll = ls_prop, sig_prop, ll_prop

        # --- adaptation (burn-in only) ---
        if it < config.n_burnin and (it + 1) % config.adapt_window == 0:
            batch_no += 1
            step = min(0.05, 1.0 / math.sqrt(batch_no))
            for name in block_names:
                if window_prop[name] == 0:
                    continue
                rate = window_acc[name] / window_prop[name]
                log_scale[name] += step if rate > targets[name] else -step
                log_scale[name] = min(max(log_scale[name], _SCALE_BOUNDS[0]),
                                      _SCALE_BOUNDS[1])
                window_prop[name] = 0
                window_acc[name] = 0

        if it >= config.n_burnin and (it - config.n_burnin) % config.thin == 0:
            out_beta[stored] = beta
            out_w[stored] = w
            out_v[stored] = v
            out_tau[stored] = tau
            out_phi[stored] = phi
            out_sig[stored] = sig
            stored += 1

    acceptance = {
        name: (total_acc[name] / total_prop[name]) if total_prop[name] else 0.0
        for name in block_names
    }
    return PosteriorSamples(out_beta[:stored], out_w[:stored], out_v[:stored],
                            out_tau[:stored], out_phi[:stored], out_sig[:stored],
                            acceptance)


def predict_risk(samples: PosteriorSamples, grid: FineGrid,
                 n_draws: Optional[int] = None) -> np.ndarray:
    """Per-cell risk draws expit(eta) for the last ``n_draws`` stored draws.

    The cluster nugget is excluded: this is the risk surface, not the
    cluster-level risk.
    """
    S = samples.n_draws
    if n_draws is None:
        n_draws = S
    if n_draws > S:
        raise ConfigError(f"requested {n_draws} draws but only {S} stored")
    sel = np.arange(S - n_draws, S)
    X = np.column_stack([np.ones(grid.n_cells), grid.covariates])
    out = np.empty((n_draws, grid.n_cells))
    for i, s in enumerate(sel):
        mix = (np.sqrt(samples.phi[s]) * samples.w[s]
               + np.sqrt(1.0 - samples.phi[s]) * samples.v[s]) / np.sqrt(samples.tau[s])
        out[i] = expit(X @ samples.beta[s] + mix[grid.region])
    return out


def aggregate(cell_draws: np.ndarray, grid: FineGrid, level="region",
              n_areas: Optional[int] = None) -> np.ndarray:
    """Population-weighted areal averages of per-cell draws.

    ``level`` is 'region', 'admin2', or an explicit per-cell label array.
    Areas without populated cells come back as nan.
    """
    if isinstance(level, str):
        if level == "region":
            labels = grid.region
        elif level == "admin2":
            labels = grid.admin2
        else:
            raise ConfigError(f"unknown aggregation level {level!r}")
    else:
        labels = np.asarray(level, dtype=int)
        if labels.shape != (grid.n_cells,):
            raise ConfigError("labels must cover all populated cells")
    if n_areas is None:
        n_areas = int(labels.max()) + 1
    q = grid.population
    den = np.bincount(labels, weights=q, minlength=n_areas)
    out = np.empty((cell_draws.shape[0], n_areas))
    for i in range(cell_draws.shape[0]):
        num = np.bincount(labels, weights=q * cell_draws[i], minlength=n_areas)
        with np.errstate(invalid="ignore"):
            out[i] = num / den
    return out


def predictive_cluster_draws(samples: PosteriorSamples, record: ClusterRecord,
                             grid: FineGrid, rng: np.random.Generator,
                             n_pred: int) -> np.ndarray:
    """Posterior predictive draws of a cluster's observed prevalence y/n.

    Marginalizes the position over the record's scheme weights, draws the
    nugget, and adds binomial sampling noise, one prediction per retained
    posterior draw.
    """
    if record.scheme is None:
        raise DataError("record carries no integration scheme")
    S = samples.n_draws
    sel = np.linspace(0, S - 1, num=min(n_pred, S)).round().astype(int)
    k_idx = rng.choice(record.scheme.k, size=sel.size, p=record.scheme.omega)
    cells = record.scheme.points[k_idx]
    Xc = np.column_stack([np.ones(sel.size), grid.covariates[cells]])
    mix = (np.sqrt(samples.phi[sel])[:, None] * samples.w[sel]
           + np.sqrt(1.0 - samples.phi[sel])[:, None] * samples.v[sel])
    u = mix[np.arange(sel.size), grid.region[cells]] / np.sqrt(samples.tau[sel])
    eta = np.einsum("ij,ij->i", Xc, samples.beta[sel]) + u
    eps = rng.normal(0.0, np.sqrt(samples.sigma_eps_sq[sel]))
    p = expit(eta + eps)
    return rng.binomial(record.n, p) / record.n


def write_samples_csv(samples: PosteriorSamples, path) -> None:
    """One row per draw, named columns, 17 significant digits."""
    p1 = samples.beta.shape[1]
    R = samples.w.shape[1]
    header = ([f"beta_{j}" for j in range(p1)] + [f"w_{r}" for r in range(R)]
              + [f"v_{r}" for r in range(R)] + ["tau", "phi", "sigma_eps_sq"])
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in range(samples.n_draws):
            row = np.concatenate([samples.beta[s], samples.w[s], samples.v[s],
                                  [samples.tau[s], samples.phi[s],
                                   samples.sigma_eps_sq[s]]])
            writer.writerow(["%.17g" % x for x in row])


def read_samples_csv(path) -> PosteriorSamples:
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader if row]
    p1 = sum(1 for h in header if h.startswith("beta_"))
    R = sum(1 for h in header if h.startswith("w_"))
    arr = np.asarray(rows)
    return PosteriorSamples(
        beta=arr[:, :p1],
        w=arr[:, p1:p1 + R],
        v=arr[:, p1 + R:p1 + 2 * R],
        tau=arr[:, p1 + 2 * R],
        phi=arr[:, p1 + 2 * R + 1],
        sigma_eps_sq=arr[:, p1 + 2 * R + 2],
        acceptance={},
    )
