"""Two finite-state-machine store distilling analyst feedback on
interpretations into reusable rules.

The value range of every feature dimension splits into M equal intervals,
giving M*N abstract states. An interpretation's K entries map to K states
ordered by decreasing effectiveness; a rule is that state sequence plus a
feedback label. The first FSM counts transitions between consecutive
states of stored rules, the second counts transitions from each state to
its feedback label. A query's matching probability against label r is

    P(r | s_1..s_K) = (1/K) * sum_i P2(r | s_i) * prod_{j<i} P1(s_{j+1} | s_j)

Counts are stored as sparse integer maps (probabilities derived on
demand), so updates are O(K) and persistence round-trips exactly.

Unseen-transition semantics: a state with no recorded feedback transitions
contributes P2 = 0; a chain factor from a state with no recorded outgoing
transitions is 1 (neutral); a recorded source transiting to an unrecorded
target contributes 0. This is the unique simple rule reproducing the
shared-state generalization value of 1/3 for a three-state query matching
one stored rule in its last state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datahub import register_artifact
from .errors import DataFormatError

UNKNOWN = "UNKNOWN"
NORMAL = "NORMAL"


@dataclass(frozen=True)
class StateSpace:
    """Index function over M*N abstract states."""

    intervals: int                     # M
    n_dims: int                        # N

    def __post_init__(self):
        if self.intervals < 1 or self.n_dims < 1:
            raise DataFormatError("intervals and n_dims must be >= 1")

    @property
    def total(self) -> int:
        return self.intervals * self.n_dims

    def state(self, dim: int, value: float) -> int:
        """State index for a dimension and a value in [0, 1]; 1.0 clamps
        into the top interval."""
        if not 0 <= dim < self.n_dims:
            raise DataFormatError(f"dimension {dim} outside [0, {self.n_dims})")
        if not 0.0 <= value <= 1.0:
            raise DataFormatError(f"state value {value} outside [0, 1]")
        interval = min(int(value * self.intervals), self.intervals - 1)
        return dim * self.intervals + interval


@dataclass
class Rule:
    states: list            # ordered by decreasing effectiveness
    label: str

    def __post_init__(self):
        if not self.states:
            raise DataFormatError("a rule needs at least one state")


def map_to_states(interp, space: StateSpace) -> list:
    """Map an interpretation's entries to states, ordered by decreasing
    effectiveness. Difference values x° - x* lie in [-1, 1] for normalized
    features and are rescaled to [0, 1] so the sign survives."""
    states = []
    for e in interp.entries:
        diff = float(e.anomaly_value - e.reference_value)
        if not -1.0 <= diff <= 1.0:
            raise DataFormatError(f"difference {diff} outside [-1, 1]")
        states.append(space.state(e.dim, (diff + 1.0) / 2.0))
    return states


@register_artifact("distiller")
class Distiller:
    """Mutable two-FSM store; single-writer, snapshot-consistent readers."""

    def __init__(self, space: StateSpace, theta_match: float = 0.2,
                 theta_fp: float = 0.5, theta_drift: float = 0.1):
        self.space = space
        self.theta_match = float(theta_match)
        self.theta_fp = float(theta_fp)
        self.theta_drift = float(theta_drift)
        self.labels: list = [UNKNOWN]
        self.chain_counts: dict = {}      # (from_state, to_state) -> int
        self.label_counts: dict = {}      # (state, label) -> int
        self._chain_out: dict = {}        # from_state -> total outgoing
        self._label_out: dict = {}        # state -> total outgoing
        self.rule_log: list = []          # in-memory only (conflict diagnostics)
        self.conflicts = {"state": 0, "transition": 0, "complete": 0}
        self.drift_log: list = []         # flagged state sequences

    # ---------------------------------------------------------------- update

    def register_label(self, label: str) -> None:
        if label not in self.labels:
            self.labels.append(label)

    def update_rule(self, rule: Rule) -> None:
        """Count the rule's chain transitions and state->label transitions."""
        for s in rule.states:
            if not 0 <= s < self.space.total:
                raise DataFormatError(f"state {s} outside the state space")
        self.register_label(rule.label)
        for a, b in zip(rule.states, rule.states[1:]):
            self.chain_counts[(a, b)] = self.chain_counts.get((a, b), 0) + 1
            self._chain_out[a] = self._chain_out.get(a, 0) + 1
        for s in rule.states:
            self.label_counts[(s, rule.label)] = \
                self.label_counts.get((s, rule.label), 0) + 1
            self._label_out[s] = self._label_out.get(s, 0) + 1
        self._count_conflicts(rule)
        self.rule_log.append((list(rule.states), rule.label))

    def _count_conflicts(self, rule: Rule) -> None:
        new_states = set(rule.states)
        new_trans = set(zip(rule.states, rule.states[1:]))
        for states, label in self.rule_log:
            if label == rule.label:
                continue
            shared_states = len(new_states & set(states))
            shared_trans = len(new_trans & set(zip(states, states[1:])))
            self.conflicts["state"] += shared_states
            self.conflicts["transition"] += shared_trans
            if (shared_states == len(rule.states) == len(states)
                    and shared_trans == len(rule.states) - 1):
                self.conflicts["complete"] += 1

    def add_feedback(self, interp, label: str) -> Rule:
        """Convert an interpretation into a rule and store it."""
        rule = Rule(map_to_states(interp, self.space), label)
        self.update_rule(rule)
        return rule

    def suppress_false_positive(self, interp) -> Rule:
        """Store the interpretation as a rule pointing at the reserved
        NORMAL label; matches above theta_fp downstream suppress the alert."""
        return self.add_feedback(interp, NORMAL)

    # ----------------------------------------------------------------- query

    def p1(self, a: int, b: int) -> float:
        total = self._chain_out.get(a, 0)
        if total == 0:
            return 1.0    # neutral: nothing recorded from this state
        return self.chain_counts.get((a, b), 0) / total

    def p2(self, state: int, label: str) -> float:
        total = self._label_out.get(state, 0)
        if total == 0:
            return 0.0
        return self.label_counts.get((state, label), 0) / total

    def match_query(self, states: list) -> dict:
        """Eq.-style matching probability for every registered label."""
        if not states:
            raise DataFormatError("query needs at least one state")
        k = len(states)
        chain = np.ones(k)
        acc = 1.0
        for i in range(1, k):
            acc *= self.p1(states[i - 1], states[i])
            chain[i] = acc
        out = {}
        for label in self.labels:
            if label == UNKNOWN:
                continue
            total = 0.0
            for i, s in enumerate(states):
                total += self.p2(s, label) * chain[i]
            out[label] = total / k
        return out

    def match(self, states: list) -> tuple[str, dict]:
        """(routing decision, per-label probabilities). The decision is
        UNKNOWN below theta_match, NORMAL when the reserved label wins with
        probability >= theta_fp."""
        probs = self.match_query(states)
        if not probs:
            return UNKNOWN, probs
        best = max(probs, key=lambda l: (probs[l], l))
        if probs[best] < self.theta_match:
            return UNKNOWN, probs
        if best == NORMAL and probs[best] < self.theta_fp:
            return UNKNOWN, probs
        return best, probs

    def drift_score(self, states: list) -> float:
        """Mean first-FSM chain factor; unseen sources count 0 here."""
        if len(states) < 2:
            raise DataFormatError("drift scoring needs at least two states")
        factors = []
        for a, b in zip(states, states[1:]):
            factors.append(0.0 if self._chain_out.get(a, 0) == 0 else self.p1(a, b))
        return float(np.mean(factors))

    def flag_concept_drift(self, states: list) -> tuple[bool, float]:
        score = self.drift_score(states)
        flagged = score < self.theta_drift
        if flagged:
            self.drift_log.append(list(states))
        return flagged, score

    def drift_retraining_set(self) -> list:
        return [list(s) for s in self.drift_log]

    # ----------------------------------------------------------- persistence

    def to_doc(self) -> dict:
        return {
            "intervals": self.space.intervals,
            "n_dims": self.space.n_dims,
            "theta_match": self.theta_match,
            "theta_fp": self.theta_fp,
            "theta_drift": self.theta_drift,
            "labels": self.labels,
            "chain_counts": sorted([a, b, c] for (a, b), c in self.chain_counts.items()),
            "label_counts": sorted([s, l, c] for (s, l), c in self.label_counts.items()),
            "conflicts": self.conflicts,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "Distiller":
        dist = cls(StateSpace(int(d["intervals"]), int(d["n_dims"])),
                   d["theta_match"], d["theta_fp"], d["theta_drift"])
        dist.labels = list(d["labels"])
        if UNKNOWN not in dist.labels:
            dist.labels.insert(0, UNKNOWN)
        for a, b, c in d["chain_counts"]:
            dist.chain_counts[(int(a), int(b))] = int(c)
            dist._chain_out[int(a)] = dist._chain_out.get(int(a), 0) + int(c)
        for s, l, c in d["label_counts"]:
            dist.label_counts[(int(s), str(l))] = int(c)
            dist._label_out[int(s)] = dist._label_out.get(int(s), 0) + int(c)
        dist.conflicts = dict(d.get("conflicts", dist.conflicts))
        return dist

    def dense_chain_matrix(self) -> np.ndarray:
        """Dense (M*N)^2 count matrix, materialized only on request."""
        m = np.zeros((self.space.total, self.space.total), dtype=np.int64)
        for (a, b), c in self.chain_counts.items():
            m[a, b] = c
        return m


def match_query_reference(dist: Distiller, states: list, label: str) -> float:
    """Independent recomputation of the matching probability from raw
    counts (test oracle; mirrors the formula, not the implementation)."""
    if label == UNKNOWN:
        return 0.0
    k = len(states)
    total = 0.0
    for i in range(k):
        prod = 1.0
        for j in range(i):
            a, b = states[j], states[j + 1]
            out = sum(c for (x, _), c in dist.chain_counts.items() if x == a)
            prod *= 1.0 if out == 0 else dist.chain_counts.get((a, b), 0) / out
        out2 = sum(c for (s, _), c in dist.label_counts.items() if s == states[i])
        p2 = 0.0 if out2 == 0 else dist.label_counts.get((states[i], label), 0) / out2
        total += p2 * prod
    return total / k


__all__ = [
    "UNKNOWN", "NORMAL", "StateSpace", "Rule", "Distiller",
    "map_to_states", "match_query_reference",
]
