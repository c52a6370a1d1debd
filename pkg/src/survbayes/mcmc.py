"""Blockwise adaptive random-walk Metropolis with optional exact Gibbs blocks.

The engine is generic: it samples any log-posterior callable over a real
vector, with the dimensions partitioned into update blocks. Each Metropolis
block uses an isotropic Gaussian proposal whose log step size is adapted
during burn-in by Robbins-Monro toward a target acceptance rate (0.234 for
multivariate blocks, 0.44 for scalar blocks) and frozen afterwards. Blocks
may instead be driven by exact conditional samplers (Metropolis-within-Gibbs).

Determinism: all randomness for chain c of a run with seed s comes from
``SeedSequence(s + c)`` (two child streams: proposals and exact
conditionals), so results are bit-reproducible and independent of the order
in which chains are executed.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import _atomic_write_text
from .errors import ConfigError, ConvergenceError, ModelError

# Consecutive -inf/nan proposal evaluations tolerated before aborting a chain.
_MAX_NONFINITE_STREAK = 10_000

# Robbins-Monro exponent and adaptation clamp for the log step size.
_RM_EXPONENT = 0.7
_LOG_SCALE_BOUNDS = (-15.0, 8.0)


@dataclass(frozen=True)
class McmcConfig:
    """Sampler run parameters.

    ``iterations_total`` counts per-chain iterations including burn-in,
    before thinning. Defaults mirror the optimized settings used for the
    semiparametric fits: 4 chains, half discarded as burn-in, thin 10,
    leaving 1000 saved draws per chain.
    """

    chains: int = 4
    iterations_total: int = 20_000
    burnin_fraction: float = 0.5
    thin: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ConfigError(f"chains must be >= 1, got {self.chains}")
        if self.iterations_total < 1:
            raise ConfigError(f"iterations_total must be >= 1, got {self.iterations_total}")
        if not 0.0 < self.burnin_fraction < 1.0:
            raise ConfigError(f"burnin_fraction must be in (0, 1), got {self.burnin_fraction}")
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.saved_per_chain < 1:
            raise ConfigError(
                "no draws would be saved: iterations_total * (1 - burnin_fraction) / thin < 1"
            )

    @property
    def burnin(self) -> int:
        post = math.floor(self.iterations_total * (1.0 - self.burnin_fraction) + 1e-9)
        return self.iterations_total - post

    @property
    def saved_per_chain(self) -> int:
        return (self.iterations_total - self.burnin) // self.thin


@dataclass
class ChainSet:
    """Draws from one sampler run: chains x saved iterations x dimension.

    ``acceptance_rates`` holds post-burn-in Metropolis acceptance per chain
    and block (exact Gibbs blocks report 1.0); it is None for ChainSets
    reloaded from CSV, which stores draws only. ``proposal_scales`` are the
    frozen per-block step scales in effect after burn-in.
    """

    draws: np.ndarray
    parameter_names: tuple[str, ...]
    acceptance_rates: np.ndarray | None = None
    proposal_scales: np.ndarray | None = None
    blocks: tuple[tuple[int, ...], ...] | None = None
    scale_trace: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.draws.ndim != 3:
            raise ValueError(f"draws must be 3-d (chains, saved, dim), got {self.draws.shape}")
        if len(self.parameter_names) != self.draws.shape[2]:
            raise ValueError("parameter_names length must match draw dimension")
        if self.acceptance_rates is not None:
            a = self.acceptance_rates
            if np.any(a < 0.0) or np.any(a > 1.0):
                raise ValueError("acceptance rates must lie in [0, 1]")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def saved_per_chain(self) -> int:
        return self.draws.shape[1]

    def pooled(self, name: str) -> np.ndarray:
        """All chains' draws of one parameter, concatenated."""
        j = self.parameter_names.index(name)
        return self.draws[:, :, j].reshape(-1)

    def to_csv(self, path: str | os.PathLike[str]) -> None:
        """Write draws as chain,iteration,<param...> rows (repr floats)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["chain", "iteration", *self.parameter_names])
        for c in range(self.n_chains):
            for i in range(self.saved_per_chain):
                writer.writerow([c, i, *[repr(float(x)) for x in self.draws[c, i]]])
        _atomic_write_text(path, buf.getvalue())

    @classmethod
    def from_csv(cls, path: str | os.PathLike[str]) -> "ChainSet":
        try:
            fh = open(path, encoding="utf-8", newline="")
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such file") from None
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 3 or header[:2] != ["chain", "iteration"]:
                raise ConfigError(f"{path}: not a chain CSV (expected chain,iteration,<params>)")
            names = tuple(header[2:])
            rows: dict[int, list[list[float]]] = {}
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    chain = int(row[0])
                    vals = [float(x) for x in row[2:]]
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
                rows.setdefault(chain, []).append(vals)
        if not rows:
            raise ConfigError(f"{path}: no draws")
        counts = {len(v) for v in rows.values()}
        if len(counts) != 1:
            raise ConfigError(f"{path}: chains have unequal draw counts {sorted(counts)}")
        chains = sorted(rows)
        draws = np.array([rows[c] for c in chains], dtype=float)
        return cls(draws=draws, parameter_names=names)


def _validate_blocks(blocks: Sequence[Sequence[int]], dim: int) -> tuple[tuple[int, ...], ...]:
    flat = sorted(i for b in blocks for i in b)
    if flat != list(range(dim)):
        raise ConfigError(f"blocks must partition dimensions 0..{dim - 1}, got {blocks!r}")
    if any(len(b) == 0 for b in blocks):
        raise ConfigError("empty block")
    return tuple(tuple(int(i) for i in b) for b in blocks)


def _run_chain(
    logpost: Callable[[np.ndarray], float],
    init: np.ndarray,
    blocks: tuple[tuple[int, ...], ...],
    cfg: McmcConfig,
    chain_index: int,
    conditional_samplers: Mapping[int, Callable[[np.ndarray, np.random.Generator], np.ndarray]],
    record_scale_trace: bool = False,
):
    dim = init.size
    seed_seq = np.random.SeedSequence((cfg.seed + chain_index) % 2**64)
    prop_ss, cond_ss = seed_seq.spawn(2)
    prop_rng = np.random.default_rng(prop_ss)
    cond_rng = np.random.default_rng(cond_ss)

    n_blocks = len(blocks)
    metro = [b_idx for b_idx in range(n_blocks) if b_idx not in conditional_samplers]
    target = {b_idx: (0.44 if len(blocks[b_idx]) == 1 else 0.234) for b_idx in metro}
    log_scale = {b_idx: math.log(2.38 / math.sqrt(len(blocks[b_idx]))) for b_idx in metro}
    adapt_n = {b_idx: 0 for b_idx in metro}
    accepted = np.zeros(n_blocks)

    total = cfg.iterations_total
    burnin = cfg.burnin
    # All proposal randomness pre-drawn so the draw sequence is a pure
    # function of the seed, not of acceptance history.
    normals = prop_rng.standard_normal((total, dim))
    uniforms = prop_rng.uniform(size=(total, n_blocks))

    x = np.array(init, dtype=float, copy=True)
    lp = float(logpost(x))
    if not np.isfinite(lp):
        raise ModelError(f"log-posterior not finite at the initial point (chain {chain_index})")

    saved = np.empty((cfg.saved_per_chain, dim))
    save_slot = 0
    nonfinite_streak = 0
    trace = np.full((total, n_blocks), np.nan) if record_scale_trace else None

    for it in range(total):
        adapting = it < burnin
        for b_idx, block in enumerate(blocks):
            cond = conditional_samplers.get(b_idx)
            if cond is not None:
                new_vals = np.asarray(cond(x, cond_rng), dtype=float)
                if new_vals.shape != (len(block),):
                    raise ConfigError(
                        f"conditional sampler for block {b_idx} returned shape "
                        f"{new_vals.shape}, expected ({len(block)},)"
                    )
                x[list(block)] = new_vals
                lp = float(logpost(x))
                accepted[b_idx] += 1
                continue
            scale = math.exp(log_scale[b_idx])
            x_prop = x.copy()
            for j in block:
                x_prop[j] += scale * normals[it, j]
            lp_prop = float(logpost(x_prop))
            if np.isnan(lp_prop):
                lp_prop = -np.inf
            if lp_prop == -np.inf:
                nonfinite_streak += 1
                if nonfinite_streak > _MAX_NONFINITE_STREAK:
                    raise ConvergenceError(
                        f"chain {chain_index}: {_MAX_NONFINITE_STREAK} consecutive proposals "
                        "had non-finite log-posterior; model or scales are degenerate"
                    )
            else:
                nonfinite_streak = 0
            log_ratio = lp_prop - lp
            alpha = 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)
            if uniforms[it, b_idx] < alpha:
                x, lp = x_prop, lp_prop
                if not adapting:
                    accepted[b_idx] += 1
            if adapting:
                adapt_n[b_idx] += 1
                gain = adapt_n[b_idx] ** (-_RM_EXPONENT)
                log_scale[b_idx] = min(
                    max(log_scale[b_idx] + gain * (alpha - target[b_idx]), _LOG_SCALE_BOUNDS[0]),
                    _LOG_SCALE_BOUNDS[1],
                )
        if trace is not None:
            for b_idx in metro:
                trace[it, b_idx] = math.exp(log_scale[b_idx])
        if it >= burnin and (it - burnin + 1) % cfg.thin == 0:
            saved[save_slot] = x
            save_slot += 1

    post = total - burnin
    rates = np.empty(n_blocks)
    for b_idx in range(n_blocks):
        if b_idx in conditional_samplers:
            rates[b_idx] = 1.0
        else:
            rates[b_idx] = accepted[b_idx] / post if post > 0 else 0.0
    scales = np.array([math.exp(log_scale[b]) if b in log_scale else np.nan for b in range(n_blocks)])
    return saved, rates, scales, trace


def gibbs_extend(
    logpost: Callable[[np.ndarray], float],
    init: np.ndarray | Sequence[float],
    blocks: Sequence[Sequence[int]],
    cfg: McmcConfig,
    conditional_samplers: Mapping[int, Callable[[np.ndarray, np.random.Generator], np.ndarray]] | None = None,
    parameter_names: Sequence[str] | None = None,
    record_scale_trace: bool = False,
) -> ChainSet:
    """Metropolis-within-Gibbs: blocks listed in ``conditional_samplers``
    (keyed by block index) are drawn exactly from their full conditional,
    the rest by adaptive random-walk Metropolis.

    A conditional sampler is called as f(x, rng) with the full current state
    and must return the new values for its block. ``record_scale_trace``
    stores the per-iteration proposal scales (chains x iterations x blocks,
    NaN for exact-conditional blocks) on the returned ChainSet.
    """
    init = np.asarray(init, dtype=float)
    if init.ndim != 1 or init.size == 0:
        raise ConfigError("init must be a non-empty 1-d vector")
    blocks_t = _validate_blocks(blocks, init.size)
    conditionals = dict(conditional_samplers or {})
    for b_idx in conditionals:
        if not 0 <= b_idx < len(blocks_t):
            raise ConfigError(f"conditional sampler references unknown block {b_idx}")
    if parameter_names is None:
        names = tuple(f"param_{j}" for j in range(init.size))
    else:
        names = tuple(parameter_names)
        if len(names) != init.size:
            raise ConfigError("parameter_names length must match init")

    all_draws = np.empty((cfg.chains, cfg.saved_per_chain, init.size))
    all_rates = np.empty((cfg.chains, len(blocks_t)))
    all_scales = np.empty((cfg.chains, len(blocks_t)))
    all_traces = (
        np.empty((cfg.chains, cfg.iterations_total, len(blocks_t)))
        if record_scale_trace
        else None
    )
    for c in range(cfg.chains):
        draws, rates, scales, trace = _run_chain(
            logpost, init, blocks_t, cfg, c, conditionals, record_scale_trace
        )
        all_draws[c], all_rates[c], all_scales[c] = draws, rates, scales
        if all_traces is not None:
            all_traces[c] = trace
    return ChainSet(
        draws=all_draws,
        parameter_names=names,
        acceptance_rates=all_rates,
        proposal_scales=all_scales,
        blocks=blocks_t,
        scale_trace=all_traces,
    )


def sample(
    logpost: Callable[[np.ndarray], float],
    init: np.ndarray | Sequence[float],
    blocks: Sequence[Sequence[int]],
    cfg: McmcConfig,
    parameter_names: Sequence[str] | None = None,
    record_scale_trace: bool = False,
) -> ChainSet:
    """Adaptive random-walk Metropolis over all blocks (no exact conditionals)."""
    return gibbs_extend(logpost, init, blocks, cfg, None, parameter_names, record_scale_trace)
