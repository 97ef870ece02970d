"""Synonym-substitution attacks: greedy saliency-weighted (PWWS-style) and genetic.

Both attacks are black-box.  They see the victim only through a query
function mapping a list of id sequences to an (n, C) array of class
probabilities, wrapped in ``QueryCounter`` so every sentence scored is
counted.  Substitutions are restricted to ``S(x_i)`` of the *original* word
at each position and to at most ``floor(ratio * length)`` positions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lexicon import PAD_ID, UNK_ID, Lexicon
from .models import softmax_np
from .seeding import derive_rng

logger = logging.getLogger(__name__)

QueryFn = Callable[[Sequence[np.ndarray]], np.ndarray]


class AttackError(ValueError):
    pass


@dataclass
class AttackBudget:
    max_substitution_ratio: float = 0.25
    ga_population: int = 20
    ga_generations: int = 20
    mutation_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_substitution_ratio <= 1:
            raise AttackError("max_substitution_ratio must lie in [0, 1]")
        if self.ga_population < 1 or self.ga_generations < 1:
            raise AttackError("population and generations must be >= 1")

    def max_substitutions(self, length: int) -> int:
        # small epsilon so that e.g. 0.25 * 12 is not floored to 2 by rounding
        return int(math.floor(self.max_substitution_ratio * length + 1e-9))


@dataclass
class AttackResult:
    original_ids: list
    adversarial_ids: list
    label: int
    substitutions: dict
    success: bool
    queries: int
    probs_before: list
    probs_after: list
    skipped: bool = False
    generations: int | None = None

    @property
    def correct_after(self) -> bool:
        """Whether the victim still predicts the gold label after the attack."""
        return (not self.skipped) and (not self.success)

    def as_dict(self) -> dict:
        return {
            "original_ids": [int(x) for x in self.original_ids],
            "adversarial_ids": [int(x) for x in self.adversarial_ids],
            "label": int(self.label),
            "substitutions": {str(k): [int(a), int(b)] for k, (a, b) in sorted(self.substitutions.items())},
            "success": bool(self.success),
            "skipped": bool(self.skipped),
            "queries": int(self.queries),
            "generations": self.generations,
            "probs_before": [float(p) for p in self.probs_before],
            "probs_after": [float(p) for p in self.probs_after],
        }


class QueryCounter:
    def __init__(self, fn: QueryFn):
        self.fn = fn
        self.count = 0

    def __call__(self, seqs: Sequence[np.ndarray]) -> np.ndarray:
        seqs = [np.asarray(s, dtype=np.int64) for s in seqs]
        if not seqs:
            return np.zeros((0, 0))
        self.count += len(seqs)
        return np.asarray(self.fn(seqs), dtype=np.float64)


def _top(p: np.ndarray) -> int:
    return int(np.argmax(p))


def _result(orig, adv, label, success, counter, before, after, skipped=False, generations=None):
    subs = {i: (int(o), int(a)) for i, (o, a) in enumerate(zip(orig, adv)) if o != a}
    return AttackResult(list(map(int, orig)), list(map(int, adv)), int(label), subs, bool(success),
                        counter.count, list(before), list(after), skipped, generations)


def candidate_sets(ids: np.ndarray, lexicon: Lexicon) -> list[list[int]]:
    return [lexicon.substitutes(int(w)) if w != PAD_ID else [] for w in ids]


def pwws_attack(predict: QueryFn, ids, label: int, lexicon: Lexicon, budget: AttackBudget) -> AttackResult:
    """Greedy substitution ordered by softmax(saliency) * best probability drop.

    Saliency of position i is the drop in p_label when the word becomes UNK;
    the best substitute at i is the synonym with the largest drop in p_label.
    Positions are then rewritten in decreasing score order until the
    prediction changes or the substitution budget is spent.
    """
    query = QueryCounter(predict)
    x = np.asarray(ids, dtype=np.int64)
    p0 = query([x])[0]
    if _top(p0) != label:
        return _result(x, x, label, True, query, p0, p0, skipped=True)
    limit = budget.max_substitutions(len(x))
    cands = candidate_sets(x, lexicon)
    if limit == 0 or not any(cands):
        return _result(x, x, label, False, query, p0, p0)

    unk = []
    for i in range(len(x)):
        xi = x.copy()
        xi[i] = UNK_ID
        unk.append(xi)
    saliency = p0[label] - query(unk)[:, label]
    weight = softmax_np(saliency)

    best_sub, best_probs, score = {}, {}, {}
    for i, cs in enumerate(cands):
        if not cs:
            continue
        trials = []
        for c in cs:
            xi = x.copy()
            xi[i] = c
            trials.append(xi)
        probs = query(trials)
        drops = p0[label] - probs[:, label]
        j = int(np.argmax(drops))
        best_sub[i], best_probs[i] = cs[j], probs[j]
        score[i] = weight[i] * drops[j]

    order = sorted(score, key=lambda i: (-score[i], i))
    adv = x.copy()
    p = p0
    used = 0
    for i in order:
        if used >= limit:
            break
        adv[i] = best_sub[i]
        used += 1
        # the first rewrite is a single substitution that was already scored above
        p = best_probs[i] if used == 1 else query([adv])[0]
        if _top(p) != label:
            return _result(x, adv, label, True, query, p0, p)
    return _result(x, adv, label, False, query, p0, p)


def genetic_attack(predict: QueryFn, ids, label: int, lexicon: Lexicon, budget: AttackBudget,
                   example_index: int = 0) -> AttackResult:
    """Population-based search over synonym substitutions.

    Individuals are full sentences.  ``perturb`` picks a random modifiable
    position and writes the synonym there that maximizes fitness
    ``1 - p_label`` (evaluating every option).  The initial population is
    ``population`` independent perturbations of the input.  Each generation
    keeps the fittest individual and breeds the rest by uniform per-position
    crossover of two parents drawn with probability proportional to fitness,
    followed by a perturbation with probability ``mutation_rate``.  Children
    over the substitution budget are repaired by reverting random positions.
    """
    rng = derive_rng(budget.seed, "ga", example_index)
    query = QueryCounter(predict)
    x = np.asarray(ids, dtype=np.int64)
    p0 = query([x])[0]
    if _top(p0) != label:
        return _result(x, x, label, True, query, p0, p0, skipped=True, generations=0)
    limit = budget.max_substitutions(len(x))
    cands = candidate_sets(x, lexicon)
    modifiable = np.array([i for i, cs in enumerate(cands) if cs], dtype=np.int64)
    if limit == 0 or modifiable.size == 0:
        return _result(x, x, label, False, query, p0, p0, generations=0)

    def repair(ind: np.ndarray) -> np.ndarray:
        changed = np.flatnonzero(ind != x)
        if changed.size > limit:
            revert = rng.choice(changed, size=changed.size - limit, replace=False)
            ind = ind.copy()
            ind[revert] = x[revert]
        return ind

    def perturb(ind: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        changed = np.flatnonzero(ind != x)
        pool = changed if changed.size >= limit else modifiable
        i = int(rng.choice(pool))
        options = [w for w in [int(x[i])] + cands[i] if w != ind[i]]
        trials = []
        for w in options:
            t = ind.copy()
            t[i] = w
            trials.append(t)
        probs = query(trials)
        j = int(np.argmax(1.0 - probs[:, label]))
        return trials[j], probs[j]

    pop, probs = [], []
    for _ in range(budget.ga_population):
        ind, pr = perturb(x)
        pop.append(ind)
        probs.append(pr)
    probs = np.array(probs)

    for gen in range(budget.ga_generations):
        fitness = 1.0 - probs[:, label]
        elite = int(np.argmax(fitness))
        if _top(probs[elite]) != label:
            return _result(x, pop[elite], label, True, query, p0, probs[elite], generations=gen)
        if gen == budget.ga_generations - 1:
            break
        total = fitness.sum()
        sel = fitness / total if total > 0 else np.full(len(pop), 1.0 / len(pop))
        children = [pop[elite]]
        fresh = []
        for _ in range(len(pop) - 1):
            a, b = rng.choice(len(pop), size=2, p=sel)
            take = rng.random(len(x)) < 0.5
            child = repair(np.where(take, pop[a], pop[b]))
            if rng.random() < budget.mutation_rate:
                child, _ = perturb(child)
            children.append(child)
            fresh.append(child)
        pop = children
        probs = np.vstack([probs[elite][None], query(fresh)])
    return _result(x, pop[elite], label, False, query, p0, probs[elite], generations=budget.ga_generations)


ATTACKS = {"pwws": pwws_attack, "ga": genetic_attack}


def run_attack(name: str, predict: QueryFn, ids, label, lexicon, budget, example_index=0) -> AttackResult:
    if name == "pwws":
        return pwws_attack(predict, ids, label, lexicon, budget)
    if name == "ga":
        return genetic_attack(predict, ids, label, lexicon, budget, example_index)
    raise AttackError(f"unknown attack {name!r}; expected one of {sorted(ATTACKS)}")


def evaluate_robustness(victim, examples, attack: str, lexicon: Lexicon, budget: AttackBudget,
                        indices: Sequence[int] | None = None) -> dict:
    """Attack every example and report clean and robust accuracy.

    ``victim`` must expose ``query_fn(example_index)`` (``SmoothedClassifier``
    or ``BaseClassifier``).  ``examples`` is a sequence of ``(ids, label)``;
    ``indices`` (default: all) are the positions attacked, and each example's
    noise and attack randomness are keyed by its index.  Examples already
    misclassified count as failures for robust accuracy.
    """
    if indices is None:
        indices = range(len(examples))
    results = []
    for i in indices:
        ids, label = examples[i]
        res = run_attack(attack, victim.query_fn(int(i)), ids, int(label), lexicon, budget, int(i))
        results.append((int(i), res))
    n = len(results)
    clean = sum(not r.skipped for _, r in results)
    robust = sum(r.correct_after for _, r in results)
    attacked = [r for _, r in results if not r.skipped]
    return {
        "summary": {
            "attack": attack,
            "n": n,
            "clean_acc": clean / n if n else 0.0,
            "robust_acc": robust / n if n else 0.0,
            "avg_substitutions": float(np.mean([len(r.substitutions) for r in attacked])) if attacked else 0.0,
            "avg_queries": float(np.mean([r.queries for _, r in results])) if results else 0.0,
        },
        "examples": [dict(index=i, **r.as_dict()) for i, r in results],
    }
