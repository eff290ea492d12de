"""Gradient verification suite over every differentiable component.

Each check builds a small randomly initialized component, reduces its output
to a scalar, and compares tape gradients against central finite differences.
The CLI's gradcheck subcommand and the test suite both run this.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import LabelSet
from .encoders import encode_feedback, encode_query, init_encoder_params
from .numerics import GradCheckResult, Tensor, grad_check, tsum
from .policy import MaskState, init_policy_params, mask_log_prob, mask_logits
from .reward import init_reward_params, reward
from .tagger import init_tagger_params, sequence_nll

TOLERANCE = 1e-5

# Central differences lose roughly half the float64 mantissa to cancellation,
# so coordinates whose true gradient is ~1e-9 cannot be resolved at a relative
# level. A step of 1e-4 balances truncation against roundoff for losses of
# order 1, and the 1e-6 floor turns the comparison absolute below that scale.
FD_STEP = 1e-4
REL_FLOOR = 1e-6


@dataclass
class SuiteResult:
    component: str
    result: GradCheckResult

    @property
    def ok(self) -> bool:
        return self.result.max_rel_err < TOLERANCE


def _demo_vocab() -> dict[str, int]:
    words = ["<unk>", "flights", "from", "boston", "to", "denver", "on", "monday", "show", "me"]
    return {w: i for i, w in enumerate(words)}


def run_gradient_suite(seed: int = 0, k: int = 6, m: int = 8) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    vocab = _demo_vocab()
    labels = LabelSet([f"slot{i}" for i in range(k)])
    tokens = ["show", "me", "flights", "from", "boston", "to", "denver"]
    results = []

    enc = init_encoder_params(vocab, m, hidden=5, rng=rng, attn_dim=4)

    def f_query(params):
        e = replace(enc)
        e.load_named("enc", params)
        return tsum(encode_query(tokens, e))

    results.append(SuiteResult("query encoder", grad_check(f_query, enc.named("enc"), h=FD_STEP, rel_floor=REL_FLOOR)))

    enc_f = init_encoder_params(vocab, m, hidden=5, rng=rng, attn_dim=4)

    def f_feedback(params):
        e = replace(enc_f)
        e.load_named("enc", params)
        return tsum(encode_feedback(tokens[:5], 2, e))

    results.append(SuiteResult("feedback encoder", grad_check(f_feedback, enc_f.named("enc"), h=FD_STEP, rel_floor=REL_FLOOR)))

    tagger = init_tagger_params(vocab, labels, m, hidden=5, rng=rng, attn_dim=4)
    tags = ["O", "O", "O", "O", f"B-slot{0}", "O", f"B-slot{min(1, k - 1)}"]

    def f_tagger(params):
        t = replace(tagger)
        t.load_named("tagger", params)
        return sequence_nll(tokens, tags, t)

    results.append(SuiteResult("tagger", grad_check(f_tagger, tagger.named("tagger"), h=FD_STEP, rel_floor=REL_FLOOR)))

    policy = init_policy_params(m, k, g_hidden=5, lstm_hidden=6, rng=rng)
    c_q = Tensor(rng.normal(size=m))
    c_f = Tensor(rng.normal(size=m))
    prev_mask = (rng.random(k) < 0.5).astype(np.int8)
    hidden = (Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6)))
    target_mask = (rng.random(k) < 0.5).astype(np.int8)

    def f_policy(params):
        p = replace(policy)
        p.load_named("policy", params)
        prev = MaskState(prev_mask, np.ones(k), hidden)
        logits, _ = mask_logits(c_q, c_f, prev, p)
        return mask_log_prob(logits, target_mask)

    results.append(SuiteResult("policy log-prob", grad_check(f_policy, policy.named("policy"), h=FD_STEP, rel_floor=REL_FLOOR)))

    rparams = init_reward_params(m, k, hidden=5, rng=rng)
    masked = rng.normal(size=(k, m))
    masked[rng.random(k) < 0.3] = 0.0
    c_fb = rng.normal(size=m)

    def f_reward(params):
        rp = replace(rparams)
        rp.load_named("reward", params)
        return reward(masked, c_fb, rp)

    results.append(SuiteResult("reward estimator", grad_check(f_reward, rparams.named("reward"), h=FD_STEP, rel_floor=REL_FLOOR)))
    return results


def format_suite(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        status = "pass" if r.ok else "FAIL"
        lines.append(
            f"{status}  {r.component:<20} max rel err {r.result.max_rel_err:.3e}"
            f"  (worst: {r.result.worst_param}{list(r.result.worst_index)})"
        )
    return "\n".join(lines)
