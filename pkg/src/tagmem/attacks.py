"""Scripted attack scenarios and their success-probability estimates.

Each scenario replays one of the surveyed exploit gadgets (crafted
pointer tags plus tag-checked accesses) against a policy, many times
with fresh randomness, counting how often the access slips through.
Closed-form expectations are computed by enumerating the small tag
probability spaces rather than hard-coding folklore numbers.
"""

import csv
import random
from dataclasses import dataclass
from fractions import Fraction

from .memmodel import CheckConfig, CheckMode, TaggedAddress, TaggedMemory
from .policies import make_policy, on_free, on_malloc, step_tag

PAGE_BASE = 0x100000
# allocations used by the UAF-style trials sit in an odd-numbered chunk so
# the odd-even policies draw from the 8-tag odd half-space
UAF_ADDR = PAGE_BASE + 80
ADJ_ATTACKER = PAGE_BASE + 16   # chunk 0 for 48-byte allocations
ADJ_VICTIM = PAGE_BASE + 80     # chunk 1
FAR_VICTIM = PAGE_BASE + 0x800

SCENARIOS = (
    "metadata-overwrite",
    "uaf-zero-tag",
    "uaf-increment",
    "uaf-realloc",
    "adjacent-overflow",
    "non-adjacent-overflow",
    "stack-neighbor-overflow",
    "match-all-escalation",
    "slack-granule-access",
    "double-free",
)


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    policy: str
    trials: int = 100_000
    match_all: bool = True   # only consulted by match-all-escalation

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario: {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class AttackOutcome:
    kind: str
    policy: str
    trials: int
    successes: int
    expected: Fraction | None

    @property
    def rate(self):
        return self.successes / self.trials


# -- trial gadgets -----------------------------------------------------------


def _known_free_tag(policy_name):
    return 0xE if policy_name == "slub" else 0


def _alloc_tag_space(policy_name):
    """Tag values the policy can put on a live allocation, as the
    attacker (who knows the system) sees them."""
    if policy_name == "slub":
        return list(range(14))
    if policy_name.startswith("chrome"):
        return list(range(16))
    return list(range(1, 16))


def _trial_metadata_overwrite(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    on_malloc(pol, UAF_ADDR, 48, rng, mem)
    # iteratively lower the pointer tag to zero, step 16 bytes left, write
    crafted = TaggedAddress(UAF_ADDR - 16, 0)
    return mem.checked_access(crafted, 16, "store").ok


def _trial_uaf_zero_tag(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 48, rng, mem)
    on_free(pol, rec, rng, mem, rec.pointer_tag)
    crafted = TaggedAddress(UAF_ADDR, _known_free_tag(policy_name))
    return mem.checked_access(crafted, 16, "store").ok


def _trial_uaf_increment(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 64, rng, mem)
    dangling = TaggedAddress(UAF_ADDR, rec.pointer_tag)
    on_free(pol, rec, rng, mem, rec.pointer_tag)
    crafted = TaggedAddress(dangling.address, (dangling.tag + 1) & 0xF)
    return mem.checked_access(crafted, 16, "store").ok


def _trial_uaf_realloc(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 48, rng, mem)
    dangling = TaggedAddress(UAF_ADDR, rec.pointer_tag)
    on_free(pol, rec, rng, mem, rec.pointer_tag)
    on_malloc(pol, UAF_ADDR, 48, rng, mem)   # same start address re-used
    return mem.checked_access(dangling, 16, "store").ok


def _adjacent_guess(policy_name, rng):
    if policy_name == "scudo-odd-even":
        return rng.randrange(8) * 2 + 1      # victim chunk parity is odd
    return rng.choice(_alloc_tag_space(policy_name))


def _trial_adjacent_overflow(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    on_malloc(pol, ADJ_ATTACKER, 48, rng, mem)
    on_malloc(pol, ADJ_VICTIM, 48, rng, mem)
    crafted = TaggedAddress(ADJ_VICTIM, _adjacent_guess(policy_name, rng))
    return mem.checked_access(crafted, 16, "store").ok


def _trial_non_adjacent_overflow(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    on_malloc(pol, ADJ_ATTACKER, 48, rng, mem)
    on_malloc(pol, FAR_VICTIM, 48, rng, mem)
    crafted = TaggedAddress(FAR_VICTIM, rng.randrange(16))
    return mem.checked_access(crafted, 16, "store").ok


def _trial_stack_neighbor_overflow(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    pol.new_frame()
    rec0 = on_malloc(pol, PAGE_BASE, 48, rng, mem)        # e.g. int arr1[12]
    rec1 = on_malloc(pol, PAGE_BASE + 48, 16, rng, mem)   # e.g. int a
    del rec0
    # attacker holds &a, assumes the baseline one-step tagging and walks
    # the tag back by one (skipping the excluded zero value)
    t1 = rec1.pointer_tag
    guess = 15 if t1 == 1 else t1 - 1
    crafted = TaggedAddress(PAGE_BASE, guess)
    return mem.checked_access(crafted, 16, "store").ok


def _trial_match_all_escalation(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 640, rng, mem)
    del rec
    crafted = TaggedAddress(UAF_ADDR, 0xF)
    return mem.checked_access(crafted, 16, "store").ok


def _trial_slack_granule_access(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 36, rng, mem)   # 64-byte class, 1 slack granule
    assert rec.slack_granules >= 1
    crafted = TaggedAddress(UAF_ADDR + rec.granules * 16, 0xE)
    return mem.checked_access(crafted, 16, "store").ok


def _trial_double_free(policy_name, rng, mem):
    pol = make_policy(policy_name, rng)
    rec = on_malloc(pol, UAF_ADDR, 48, rng, mem)
    stale_tag = rec.pointer_tag
    on_free(pol, rec, rng, mem, stale_tag)
    rejected = on_free(pol, rec, rng, mem, stale_tag)
    return not rejected


_TRIALS = {
    "metadata-overwrite": _trial_metadata_overwrite,
    "uaf-zero-tag": _trial_uaf_zero_tag,
    "uaf-increment": _trial_uaf_increment,
    "uaf-realloc": _trial_uaf_realloc,
    "adjacent-overflow": _trial_adjacent_overflow,
    "non-adjacent-overflow": _trial_non_adjacent_overflow,
    "stack-neighbor-overflow": _trial_stack_neighbor_overflow,
    "match-all-escalation": _trial_match_all_escalation,
    "slack-granule-access": _trial_slack_granule_access,
    "double-free": _trial_double_free,
}

_STACK_ONLY = frozenset(("llvm-stack", "llvm-stack-odd-delta"))
_SLUB_ONLY = frozenset(("slub",))
_HEAP = frozenset(("glibc", "glibc-improved", "slub", "scudo", "scudo-odd-even",
                   "chrome", "chrome-odd-delta", "chrome-delta-table"))

SUPPORTED = {
    "metadata-overwrite": frozenset(("glibc", "glibc-improved", "scudo")),
    "uaf-zero-tag": _HEAP,
    "uaf-increment": _HEAP,
    "uaf-realloc": _HEAP,
    "adjacent-overflow": _HEAP,
    "non-adjacent-overflow": _HEAP,
    "stack-neighbor-overflow": _STACK_ONLY,
    "match-all-escalation": _SLUB_ONLY,
    "slack-granule-access": _SLUB_ONLY,
    "double-free": _HEAP,
}


def run_attack(scenario, seed=0):
    """Monte Carlo over independent trials, one derived generator each."""
    if scenario.policy not in SUPPORTED[scenario.kind]:
        raise ValueError(
            f"scenario {scenario.kind!r} is not defined for policy "
            f"{scenario.policy!r}")
    trial = _TRIALS[scenario.kind]
    privileged = scenario.kind == "match-all-escalation"
    cfg = CheckConfig(mode=CheckMode.SYNC,
                      match_all_enabled=privileged and scenario.match_all,
                      privileged=privileged)
    mem = TaggedMemory(4, cfg)
    successes = 0
    for i in range(scenario.trials):
        rng = random.Random(seed * 1_000_003 + i)
        mem.reset()
        successes += trial(scenario.policy, rng, mem)
    return AttackOutcome(scenario.kind, scenario.policy, scenario.trials,
                         successes,
                         expected_rate(scenario.kind, scenario.policy,
                                       scenario.match_all))


# -- closed-form expectations ------------------------------------------------


def _match_probability(victim_space, guess_space):
    """P(victim == guess) for independent uniform draws from two spaces."""
    overlap = len(set(victim_space) & set(guess_space))
    return Fraction(overlap, len(victim_space) * len(guess_space))


def _uaf_increment_expected(policy):
    if policy == "chrome":
        return Fraction(1)
    if policy in ("chrome-odd-delta", "chrome-delta-table"):
        # the attacker's fixed +1 guess matches the hidden odd step for
        # exactly one of the eight odd values
        odd = range(1, 16, 2)
        return Fraction(sum(1 for d in odd if d == 1), len(odd))
    alloc = _alloc_tag_space(policy)
    hits = Fraction(0)
    for t in alloc:
        probe = (t + 1) & 0xF
        free_space = _free_tag_space(policy, t)
        hits += Fraction(1, len(alloc)) * \
            Fraction(sum(1 for f in free_space if f == probe), len(free_space))
    return hits


def _free_tag_space(policy, current):
    """Values a policy can re-tag freed granules with."""
    if policy == "glibc":
        return [0]
    if policy == "glibc-improved":
        return [t for t in range(1, 16) if t != current]
    if policy == "slub":
        return [0xE]
    if policy == "scudo":
        return list(range(1, 16))
    if policy == "scudo-odd-even":
        parity = current & 1   # free keeps the chunk's parity
        return [t for t in range(1, 16) if t & 1 == parity]
    if policy.startswith("chrome"):
        raise ValueError("chrome free tags are arithmetic, not drawn")
    raise ValueError(policy)


def _uaf_zero_tag_expected(policy):
    guess = _known_free_tag(policy)
    if policy in ("glibc", "slub"):
        return Fraction(1)   # deterministic freed-state tag
    if policy.startswith("chrome"):
        # freed tag is (alloc + delta) mod 16 with alloc uniform over 16
        return Fraction(1, 16)
    alloc = _alloc_tag_space(policy)
    hits = Fraction(0)
    for t in alloc:
        space = _free_tag_space(policy, t)
        hits += Fraction(1, len(alloc)) * \
            Fraction(sum(1 for f in space if f == guess), len(space))
    return hits


def _uaf_realloc_expected(policy):
    if policy.startswith("chrome"):
        return Fraction(0)   # re-use hands out the advanced tag, never the old
    if policy == "scudo-odd-even":
        victim = [t for t in range(1, 16) if t & 1]   # odd chunk
        return _match_probability(victim, victim)
    if policy == "scudo":
        space = list(range(1, 16))
        return _match_probability(space, space)
    # glibc-style: a fresh random allocation tag must hit the dangling one
    alloc = _alloc_tag_space(policy)
    return _match_probability(alloc, alloc)


def _stack_neighbor_expected(policy):
    bases = range(1, 16)
    deltas = range(1, 16, 2) if policy == "llvm-stack-odd-delta" else (1,)
    hits = 0
    for base in bases:
        for d in deltas:
            t1 = step_tag(base, d)
            guess = 15 if t1 == 1 else t1 - 1
            hits += guess == base
    return Fraction(hits, len(bases) * len(deltas))


def expected_rate(kind, policy, match_all=True):
    """Analytic success probability, or None when no closed form applies."""
    if policy not in SUPPORTED.get(kind, ()):  # undefined pairing
        return None
    if kind == "metadata-overwrite":
        if policy in ("glibc", "scudo"):
            return Fraction(1)
        # improved: the metadata tag is uniform over the 15 values that are
        # not the allocation's tag; zero is one of them
        return Fraction(1, 15)
    if kind == "uaf-zero-tag":
        return _uaf_zero_tag_expected(policy)
    if kind == "uaf-increment":
        return _uaf_increment_expected(policy)
    if kind == "uaf-realloc":
        return _uaf_realloc_expected(policy)
    if kind == "adjacent-overflow":
        if policy == "scudo-odd-even":
            odd = [t for t in range(16) if t & 1]
            return _match_probability(odd, odd)
        space = _alloc_tag_space(policy)
        return _match_probability(space, space)
    if kind == "non-adjacent-overflow":
        return _match_probability(_alloc_tag_space(policy), range(16))
    if kind == "stack-neighbor-overflow":
        return _stack_neighbor_expected(policy)
    if kind == "match-all-escalation":
        return Fraction(1) if match_all else Fraction(0)
    if kind == "slack-granule-access":
        return Fraction(1)
    if kind == "double-free":
        return Fraction(0) if policy in ("glibc", "glibc-improved", "slub") \
            else Fraction(1)
    return None


def binomial_sigma(p, trials):
    """Standard deviation of a Monte Carlo success rate."""
    p = float(p)
    return (p * (1.0 - p) / trials) ** 0.5


def write_outcomes_csv(outcomes, fp):
    writer = csv.writer(fp)
    writer.writerow(["scenario", "policy", "trials", "successes", "rate",
                     "expected", "detection"])
    for o in outcomes:
        expected = "" if o.expected is None else f"{float(o.expected):.10g}"
        detection = "" if o.expected is None \
            else f"{float(1 - o.expected):.10g}"
        writer.writerow([o.kind, o.policy, o.trials, o.successes,
                         f"{o.rate:.10g}", expected, detection])
