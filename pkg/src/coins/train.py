"""Teacher-forced sequence building and the training loops.

Training always conditions on gold context: at iteration i the context
holds the gold sentences up to s_i, and the rule targets come from gold
annotations or precomputed silver rules. Generated text only enters the
context at inference time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data.rules import aggregate_rules
from .data.serialize import (
    MODE_FULL,
    MODE_IR_ONLY,
    MODE_IR_WO_SE,
    MODE_NO_IR_WO_SE,
    baseline_example,
    csi_source,
    join_rules,
    sentence_example,
    serialize_csi_example,
)
from .data.types import (
    Flavor,
    GlucoseRecord,
    NscExample,
    RelationType,
    SegExample,
    StoryState,
    initial_state,
)
from .errors import ConfigError, SchemaError
from .model import JointItem, LmConfig, TrainSeq, make_train_seq, masked_nll
from .optim import AdamState, adam_update, zero_grads
from .tensor import Tensor
from .vocab import Vocab, encode

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    grad_clip: float | None = 1.0
    max_steps: int | None = None  # optional hard cap on optimizer updates
    target_nll: float | None = None  # early stop once mean per-token NLL dips below

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size, epochs and learning_rate must be positive")

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "max_steps": self.max_steps,
            "target_nll": self.target_nll,
        }


def _encode_pair(prompt: str, full: str, vocab: Vocab) -> TrainSeq:
    prompt_ids = encode(prompt, vocab)
    full_ids = encode(full, vocab)
    if full_ids[: len(prompt_ids)] != prompt_ids:
        raise SchemaError("prompt is not a token prefix of its training line")
    return make_train_seq(prompt_ids, full_ids[len(prompt_ids) :])


def teacher_state(example: NscExample, iteration: int) -> StoryState:
    """Context before iteration i (1-based): beginning + gold middles so far."""
    return StoryState(
        prefix=(*example.beginning, *example.targets[: iteration - 1]),
        ending=example.ending,
    )


def gold_rule_texts(
    records: list[GlucoseRecord],
    example: NscExample,
    iteration: int,
    relation: RelationType,
    flavor: Flavor,
) -> list[str]:
    """Rules for one iteration from gold annotations: Effect rules attach to
    the current sentence, Cause rules to the ending sentence."""
    story_records = [r for r in records if r.story_id == example.id]
    index = (iteration + 1) if relation is RelationType.EFFECT else example.n_sentences
    return aggregate_rules(story_records, index, relation, flavor).texts


def iteration_rules(
    example: NscExample,
    iteration: int,
    relation: RelationType,
    flavor: Flavor,
    records: list[GlucoseRecord] | None,
    use_silver: bool,
) -> list[str]:
    if use_silver:
        if not example.silver_rules or iteration not in example.silver_rules:
            raise SchemaError(f"example {example.id!r}: no silver rules for iteration {iteration}")
        pair = example.silver_rules[iteration]
        return (pair.effect if relation is RelationType.EFFECT else pair.cause).texts
    if records is None:
        raise ConfigError("gold rule records required when not training on silver rules")
    return gold_rule_texts(records, example, iteration, relation, flavor)


def build_csi_seqs(
    example: NscExample,
    iteration: int,
    vocab: Vocab,
    flavor: Flavor,
    records: list[GlucoseRecord] | None,
    use_silver: bool = False,
    csi_context: str = "incomplete",
) -> tuple[TrainSeq, TrainSeq]:
    """(effect_seq, cause_seq) for one iteration of one example."""
    state = teacher_state(example, iteration)
    full = " ".join(example.all_sentences) if csi_context == "full" else None
    out = []
    for relation, selected in (
        (RelationType.EFFECT, state.current_sentence),
        (RelationType.CAUSE, example.ending),
    ):
        rules = iteration_rules(example, iteration, relation, flavor, records, use_silver)
        prompt = csi_source(state, selected, relation, full_story=full)
        line = serialize_csi_example(state, selected, relation, rules, full_story=full)
        out.append(_encode_pair(prompt, line, vocab))
    return out[0], out[1]


def build_sentence_seq(
    example: NscExample,
    iteration: int,
    vocab: Vocab,
    flavor: Flavor,
    records: list[GlucoseRecord] | None,
    use_silver: bool = False,
    mode: str = MODE_FULL,
) -> TrainSeq:
    state = teacher_state(example, iteration)
    rules: list[str] = []
    if mode != MODE_NO_IR_WO_SE:
        rules = iteration_rules(example, iteration, RelationType.EFFECT, flavor, records, use_silver)
        rules += iteration_rules(example, iteration, RelationType.CAUSE, flavor, records, use_silver)
    prompt, line = sentence_example(join_rules(rules), state, example.targets[iteration - 1], mode=mode)
    return _encode_pair(prompt, line, vocab)


def build_joint_items(
    examples: list[NscExample],
    vocab: Vocab,
    flavor: Flavor,
    records: list[GlucoseRecord] | None,
    use_silver: bool = False,
    csi_context: str = "incomplete",
    ablation_mix: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[JointItem]:
    """All teacher-forced iterations of a corpus.

    ``ablation_mix`` > 0 appends that fraction of extra sentence-model
    items in the reduced-input serializations (rules-only, no-ending,
    rule-free) so inference-time input ablations stay in-distribution;
    the rule sequences are reused unchanged.
    """
    if ablation_mix and rng is None:
        raise ConfigError("ablation_mix needs an rng")
    items: list[JointItem] = []
    extras: list[JointItem] = []
    variants = (MODE_IR_ONLY, MODE_IR_WO_SE, MODE_NO_IR_WO_SE)
    for ex in examples:
        for it in range(1, len(ex.targets) + 1):
            eff, cau = build_csi_seqs(ex, it, vocab, flavor, records, use_silver, csi_context)
            sent = build_sentence_seq(ex, it, vocab, flavor, records, use_silver)
            items.append(JointItem(sentence_seq=sent, effect_seq=eff, cause_seq=cau))
            if ablation_mix and rng.random() < ablation_mix:
                mode = variants[int(rng.integers(len(variants)))]
                alt = build_sentence_seq(ex, it, vocab, flavor, records, use_silver, mode=mode)
                extras.append(JointItem(sentence_seq=alt, effect_seq=eff, cause_seq=cau))
    return items + extras


def build_baseline_seqs(examples: list[NscExample], vocab: Vocab) -> list[TrainSeq]:
    out = []
    for ex in examples:
        prompt, line = baseline_example(initial_state(ex), ex.targets)
        out.append(_encode_pair(prompt, line, vocab))
    return out


def decoded_rule_items(
    examples: list[NscExample],
    vocab: Vocab,
    flavor: Flavor,
    records: list[GlucoseRecord],
    beta: dict[str, Tensor],
    config_beta: LmConfig,
    max_rule_tokens: int = 48,
) -> list[JointItem]:
    """Joint items whose sentence inputs carry the rule model's own greedy
    decodes instead of gold rules; no gradient crosses the discrete token
    boundary. Rule targets stay gold so the rule model keeps learning."""
    from .data.silver import enrich_with_silver
    from .decode import DecodeConfig
    from .model import Lm

    role = "csi_gen" if flavor is Flavor.GENERAL else "csi_spec"
    csi = Lm(params=beta, config=config_beta, role=role)
    cfg = DecodeConfig(beam_width=1, max_new_tokens=max_rule_tokens, stop_token=vocab.eos)
    enriched = enrich_with_silver(csi, examples, vocab, flavor, decode_cfg=cfg)
    items = []
    for ex, silver_ex in zip(examples, enriched):
        for it in range(1, len(ex.targets) + 1):
            eff, cau = build_csi_seqs(ex, it, vocab, flavor, records)
            sent = build_sentence_seq(silver_ex, it, vocab, flavor, None, use_silver=True)
            items.append(JointItem(sentence_seq=sent, effect_seq=eff, cause_seq=cau))
    return items


def build_seg_items(
    examples: list[SegExample],
    vocab: Vocab,
    flavor: Flavor,
    records: list[GlucoseRecord],
) -> list[JointItem]:
    """SEG trains on one iteration per story: Effect rules for the last
    context sentence; the Cause sequence degenerates to an empty target."""
    items = []
    for ex in examples:
        state = StoryState(prefix=ex.context, ending="")
        story_records = [r for r in records if r.story_id == ex.id]
        rules = aggregate_rules(story_records, 4, RelationType.EFFECT, flavor).texts
        eff_prompt = csi_source(state, state.current_sentence, RelationType.EFFECT)
        eff_line = serialize_csi_example(state, state.current_sentence, RelationType.EFFECT, rules)
        prompt, line = sentence_example(join_rules(rules), state, ex.target)
        items.append(
            JointItem(
                sentence_seq=_encode_pair(prompt, line, vocab),
                effect_seq=_encode_pair(eff_prompt, eff_line, vocab),
                cause_seq=None,
            )
        )
    return items


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_nll: list[float] = field(default_factory=list)  # per-token, target spans only
    steps: int = 0
    stopped_early: bool = False


def _epoch_order(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def train_lm(
    params: dict[str, Tensor],
    config: LmConfig,
    seqs: list[TrainSeq],
    tcfg: TrainConfig,
    role: str = "model",
) -> TrainHistory:
    """Single-model loop (rule model alone, or the rule-free baseline)."""
    if not seqs:
        raise ConfigError("no training sequences")
    rng = np.random.default_rng(tcfg.seed)
    opt = AdamState(lr=tcfg.learning_rate)
    hist = TrainHistory()
    for epoch in range(tcfg.epochs):
        order = _epoch_order(len(seqs), rng)
        total_loss, total_nll, total_tok = 0.0, 0.0, 0
        batch = 0
        zero_grads(params)
        for j, idx in enumerate(order):
            seq = seqs[int(idx)]
            loss = masked_nll(params, config, seq, train=True, rng=rng)
            T.backward(T.scale(loss, 1.0 / tcfg.batch_size))
            total_loss += loss.item()
            total_nll += loss.item() * seq.n_target_tokens
            total_tok += seq.n_target_tokens
            batch += 1
            if batch == tcfg.batch_size or j == len(order) - 1:
                adam_update(params, opt, grad_clip=tcfg.grad_clip)
                zero_grads(params)
                batch = 0
                hist.steps += 1
                if tcfg.max_steps is not None and hist.steps >= tcfg.max_steps:
                    break
        hist.epoch_loss.append(total_loss / len(order))
        hist.epoch_nll.append(total_nll / max(1, total_tok))
        log.info("%s epoch %d: loss %.4f nll/tok %.4f", role, epoch + 1, hist.epoch_loss[-1], hist.epoch_nll[-1])
        if tcfg.target_nll is not None and hist.epoch_nll[-1] < tcfg.target_nll:
            hist.stopped_early = True
            break
        if tcfg.max_steps is not None and hist.steps >= tcfg.max_steps:
            break
    return hist


def train_joint(
    theta: dict[str, Tensor],
    beta: dict[str, Tensor],
    config_theta: LmConfig,
    config_beta: LmConfig,
    items: list[JointItem],
    tcfg: TrainConfig,
    refresh_items=None,
) -> TrainHistory:
    """Joint loop: one optimizer per model, losses added, graphs disjoint.

    A "joint step" is one simultaneous Adam update of both models over a
    batch of iterations. ``refresh_items(epoch)``, when given, rebuilds
    the item list at the start of every epoch (used to condition the
    sentence model on the rule model's current decodes).
    """
    if not items and refresh_items is None:
        raise ConfigError("no training items")
    rng = np.random.default_rng(tcfg.seed)
    opt_t = AdamState(lr=tcfg.learning_rate)
    opt_b = AdamState(lr=tcfg.learning_rate)
    hist = TrainHistory()
    for epoch in range(tcfg.epochs):
        if refresh_items is not None:
            items = refresh_items(epoch)
            if not items:
                raise ConfigError("refresh_items produced no training items")
        order = _epoch_order(len(items), rng)
        total_loss, total_nll, total_tok = 0.0, 0.0, 0
        batch = 0
        zero_grads(theta)
        zero_grads(beta)
        for j, idx in enumerate(order):
            item = items[int(idx)]
            parts = [
                (masked_nll(theta, config_theta, item.sentence_seq, train=True, rng=rng),
                 item.sentence_seq.n_target_tokens),
                (masked_nll(beta, config_beta, item.effect_seq, train=True, rng=rng),
                 item.effect_seq.n_target_tokens),
            ]
            if item.cause_seq is not None:
                parts.append(
                    (masked_nll(beta, config_beta, item.cause_seq, train=True, rng=rng),
                     item.cause_seq.n_target_tokens)
                )
            total = parts[0][0]
            for p, _ in parts[1:]:
                total = T.add(total, p)
            T.backward(T.scale(total, 1.0 / tcfg.batch_size))
            total_loss += total.item()
            total_nll += sum(p.item() * n for p, n in parts)
            total_tok += sum(n for _, n in parts)
            batch += 1
            if batch == tcfg.batch_size or j == len(order) - 1:
                adam_update(theta, opt_t, grad_clip=tcfg.grad_clip)
                adam_update(beta, opt_b, grad_clip=tcfg.grad_clip)
                zero_grads(theta)
                zero_grads(beta)
                batch = 0
                hist.steps += 1
                if tcfg.max_steps is not None and hist.steps >= tcfg.max_steps:
                    break
        hist.epoch_loss.append(total_loss / len(order))
        hist.epoch_nll.append(total_nll / max(1, total_tok))
        log.info(
            "joint epoch %d: loss %.4f nll/tok %.4f (%d steps)",
            epoch + 1,
            hist.epoch_loss[-1],
            hist.epoch_nll[-1],
            hist.steps,
        )
        if tcfg.target_nll is not None and hist.epoch_nll[-1] < tcfg.target_nll:
            hist.stopped_early = True
            break
        if tcfg.max_steps is not None and hist.steps >= tcfg.max_steps:
            break
    return hist


def corpus_nll(params: dict[str, Tensor], config: LmConfig, seqs: list[TrainSeq]) -> float:
    """Mean per-target-token NLL with dropout off (evaluation mode)."""
    total, count = 0.0, 0
    with T.no_grad():
        for seq in seqs:
            total += masked_nll(params, config, seq, reduction="sum").item()
            count += seq.n_target_tokens
    return total / max(1, count)
