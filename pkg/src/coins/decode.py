"""Greedy and beam-search decoding over any next-token log-prob source.

The decoder only needs a callable ``logprob_fn(ids) -> (V,) log-probs``,
so trained transformers and hand-built tabular test models share the
same code path. Everything is deterministic: candidate ordering breaks
score ties by token id, then lexicographically by sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import Lm, forward

LogprobFn = Callable[[tuple[int, ...]], np.ndarray]


@dataclass
class DecodeConfig:
    beam_width: int = 5
    max_new_tokens: int = 16
    stop_token: int | None = None
    length_normalization: bool = False

    def __post_init__(self):
        if self.beam_width < 1 or self.max_new_tokens < 1:
            raise ValueError("beam_width and max_new_tokens must be >= 1")

    def to_json(self) -> dict:
        return {
            "beam_width": self.beam_width,
            "max_new_tokens": self.max_new_tokens,
            "stop_token": self.stop_token,
            "length_normalization": self.length_normalization,
        }


@dataclass
class BeamHypothesis:
    ids: tuple[int, ...]
    logprob: float
    finished: bool = False


@dataclass
class DecodeResult:
    ids: list[int]  # prefix + generated tokens (stop token included)
    score: float  # sum of generated-token log-probs (normalized if configured)
    finished: bool
    n_generated: int = 0


def _ranked(cands: list[BeamHypothesis], normalize: bool, prefix_len: int) -> list[BeamHypothesis]:
    def key(h: BeamHypothesis):
        n = max(1, len(h.ids) - prefix_len)
        s = h.logprob / n if normalize else h.logprob
        return (-s, h.ids)

    return sorted(cands, key=key)


def beam_search(logprob_fn: LogprobFn, prefix: Sequence[int], config: DecodeConfig) -> DecodeResult:
    """Best finished hypothesis under sum-of-log-probs beam search.

    Finished hypotheses collect in a separate pool and compete with the
    live beam at the end; if nothing finishes within the token budget the
    best live hypothesis is returned flagged unfinished.
    """
    prefix = tuple(int(i) for i in prefix)
    width = config.beam_width
    live: list[BeamHypothesis] = [BeamHypothesis(ids=prefix, logprob=0.0)]
    finished: list[BeamHypothesis] = []

    for _ in range(config.max_new_tokens):
        cands: list[BeamHypothesis] = []
        for hyp in live:
            lp = np.asarray(logprob_fn(hyp.ids), dtype=np.float64)
            order = np.lexsort((np.arange(lp.shape[0]), -lp))[:width]
            for tok in order:
                tok = int(tok)
                cands.append(
                    BeamHypothesis(
                        ids=hyp.ids + (tok,),
                        logprob=hyp.logprob + float(lp[tok]),
                        finished=config.stop_token is not None and tok == config.stop_token,
                    )
                )
        cands = _ranked(cands, config.length_normalization, len(prefix))
        finished.extend(h for h in cands if h.finished)
        live = [h for h in cands if not h.finished][:width]
        if not live:
            break
        if finished and not config.length_normalization:
            # live scores can only decrease, so a strictly better finished
            # hypothesis can never be overtaken
            best_fin = _ranked(finished, False, len(prefix))[0]
            if best_fin.logprob > live[0].logprob:
                break

    pool = finished if finished else live
    best = _ranked(pool, config.length_normalization, len(prefix))[0]
    n_gen = len(best.ids) - len(prefix)
    score = best.logprob / max(1, n_gen) if config.length_normalization else best.logprob
    return DecodeResult(ids=list(best.ids), score=score, finished=best.finished, n_generated=n_gen)


def greedy(logprob_fn: LogprobFn, prefix: Sequence[int], config: DecodeConfig) -> DecodeResult:
    """Width-1 beam: argmax token each step, ties to the lowest token id."""
    cfg = DecodeConfig(
        beam_width=1,
        max_new_tokens=config.max_new_tokens,
        stop_token=config.stop_token,
        length_normalization=config.length_normalization,
    )
    return beam_search(logprob_fn, prefix, cfg)


def lm_logprob_fn(lm: Lm) -> LogprobFn:
    """Adapter: next-token log-probs from a transformer, grads disabled."""

    def fn(ids: tuple[int, ...]) -> np.ndarray:
        with T.no_grad():
            logits = forward(lm.params, lm.config, np.asarray(ids, dtype=np.intp))
        z = logits.data[-1].astype(np.float64)
        return T.log_softmax_rows(z[None, :])[0]

    return fn
