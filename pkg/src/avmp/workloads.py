"""Deterministic request-stream generators and conversation-trace ingestion.

Every generator is a pure function of its spec: the portable PCG stream is
keyed by (seed, kind), so identical specs produce byte-identical streams on
any platform.  Arrival schedules are built by deterministic accumulator
walks, never by wall-clock sampling.

Stream shapes:

* ``uniform_short``   - evenly staggered arrivals at a constant rate; prompts
  uniform over a short-token band (KV-heavy, low concurrency variance).
* ``mixed_long``      - mostly short prompts with a deterministic cadence of
  genuinely long ones; the arrival rate ramps up and then sustains, so the
  concurrent set grows into sustained pressure waves.
* ``agentic_burst``   - a quiet baseline punctuated by seeded bursts of many
  requests in a single tick; prompt lengths are bimodal with a hard gap.
* ``sharegpt_replay`` - prompt-token counts resampled from an ingested
  conversation corpus; generation lengths are lognormal, arrivals staggered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from avmp.errors import ConfigError, TraceIngestError
from avmp.rng import Pcg32

KINDS = ("uniform_short", "mixed_long", "agentic_burst", "sharegpt_replay")


@dataclass(frozen=True)
class Request:
    req_id: int
    arrival_tick: int
    prompt_tokens: int
    gen_tokens: int


@dataclass(frozen=True)
class WorkloadSpec:
    """Generator selection plus its kind-specific parameters."""

    kind: str
    n_requests: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown workload kind {self.kind!r}")
        if self.n_requests < 1:
            raise ConfigError("n_requests must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_requests": self.n_requests,
            "seed": self.seed,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadSpec":
        return cls(
            kind=data["kind"],
            n_requests=int(data["n_requests"]),
            seed=int(data["seed"]),
            params=dict(data.get("params", {})),
        )


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------

UNIFORM_SHORT_DEFAULTS = {
    "prompt_lo": 128,
    "prompt_hi": 1024,
    "gen_lo": 32,
    "gen_hi": 128,
    "arrival_rate": 0.08,     # requests per tick, evenly staggered
}


def gen_uniform_short(spec: WorkloadSpec) -> list[Request]:
    p = {**UNIFORM_SHORT_DEFAULTS, **spec.params}
    rng = Pcg32(spec.seed, "uniform_short")
    rate = float(p["arrival_rate"])
    out = []
    for i in range(spec.n_requests):
        out.append(Request(
            req_id=i,
            arrival_tick=int(i / rate),
            prompt_tokens=rng.randint(int(p["prompt_lo"]), int(p["prompt_hi"])),
            gen_tokens=rng.randint(int(p["gen_lo"]), int(p["gen_hi"])),
        ))
    return out


MIXED_LONG_DEFAULTS = {
    "short_prompt_lo": 232,
    "short_prompt_hi": 264,
    "long_prompt_lo": 640,
    "long_prompt_hi": 896,
    "long_every": 20,          # deterministic cadence: every Nth request is long
    "long_front_fraction": 0.20,   # long-context sessions open early in the trace
    "short_gen_lo": 44,
    "short_gen_hi": 44,        # constant decode length keeps release flow smooth
    "long_gen_lo": 36,
    "long_gen_hi": 36,
    "rate_start": 0.42,
    "rate_peak": 0.74,
    "ramp_ticks": 3000,        # linear rate ramp, then sustained at the peak
}


def gen_mixed_long(spec: WorkloadSpec) -> list[Request]:
    p = {**MIXED_LONG_DEFAULTS, **spec.params}
    rng = Pcg32(spec.seed, "mixed_long")
    rate_start = float(p["rate_start"])
    rate_peak = float(p["rate_peak"])
    ramp = int(p["ramp_ticks"])
    long_every = int(p["long_every"])
    long_cutoff = int(float(p["long_front_fraction"]) * spec.n_requests)
    out = []
    tick = 0
    acc = 0.0
    while len(out) < spec.n_requests:
        frac = min(1.0, tick / ramp) if ramp > 0 else 1.0
        acc += rate_start + (rate_peak - rate_start) * frac
        while acc >= 1.0 and len(out) < spec.n_requests:
            acc -= 1.0
            i = len(out)
            is_long = (long_every > 0 and i % long_every == long_every - 1
                       and i < long_cutoff)
            if is_long:
                prompt = rng.randint(int(p["long_prompt_lo"]), int(p["long_prompt_hi"]))
                gen = rng.randint(int(p["long_gen_lo"]), int(p["long_gen_hi"]))
            else:
                prompt = rng.randint(int(p["short_prompt_lo"]), int(p["short_prompt_hi"]))
                gen = rng.randint(int(p["short_gen_lo"]), int(p["short_gen_hi"]))
            out.append(Request(i, tick, prompt, gen))
        tick += 1
    return out


AGENTIC_BURST_DEFAULTS = {
    "short_prompt_lo": 64,
    "short_prompt_hi": 256,
    "long_prompt_lo": 1024,
    "long_prompt_hi": 1408,
    "long_every": 20,
    "long_front_fraction": 0.20,
    "short_gen_lo": 24,
    "short_gen_hi": 56,
    "long_gen_lo": 24,
    "long_gen_hi": 48,
    "base_rate": 0.28,
    "burst_gap_lo": 60,
    "burst_gap_hi": 80,
    "burst_size_start": 4,     # bursts grow as the agent fleet scales up
    "burst_size_step": 0.6,
    "burst_size_max": 22,
    "burst_size_jitter": 2,
}


def gen_agentic_burst(spec: WorkloadSpec) -> list[Request]:
    p = {**AGENTIC_BURST_DEFAULTS, **spec.params}
    rng = Pcg32(spec.seed, "agentic_burst")
    long_every = int(p["long_every"])
    long_cutoff = int(float(p["long_front_fraction"]) * spec.n_requests)

    def make(i: int, tick: int) -> Request:
        if (long_every > 0 and i % long_every == long_every - 1
                and i < long_cutoff):
            prompt = rng.randint(int(p["long_prompt_lo"]), int(p["long_prompt_hi"]))
            gen = rng.randint(int(p["long_gen_lo"]), int(p["long_gen_hi"]))
        else:
            prompt = rng.randint(int(p["short_prompt_lo"]), int(p["short_prompt_hi"]))
            gen = rng.randint(int(p["short_gen_lo"]), int(p["short_gen_hi"]))
        return Request(i, tick, prompt, gen)

    out = []
    tick = 0
    acc = 0.0
    burst_index = 0
    next_burst = rng.randint(int(p["burst_gap_lo"]), int(p["burst_gap_hi"]))
    base_rate = float(p["base_rate"])
    while len(out) < spec.n_requests:
        if tick == next_burst:
            size = min(float(p["burst_size_max"]),
                       float(p["burst_size_start"])
                       + float(p["burst_size_step"]) * burst_index)
            size = int(size) + rng.randint(0, int(p["burst_size_jitter"]))
            burst_index += 1
            for _ in range(size):
                if len(out) >= spec.n_requests:
                    break
                out.append(make(len(out), tick))
            next_burst = tick + rng.randint(int(p["burst_gap_lo"]),
                                            int(p["burst_gap_hi"]))
        acc += base_rate
        while acc >= 1.0 and len(out) < spec.n_requests:
            acc -= 1.0
            out.append(make(len(out), tick))
        tick += 1
    return out


# ---------------------------------------------------------------------------
# conversation-trace ingestion and replay
# ---------------------------------------------------------------------------

TOKENS_PER_WORD = 1.3
PROMPT_CLAMP_LO = 16
PROMPT_CLAMP_HI = 4096
MAX_TRACE_PROMPTS = 5000

_HUMAN_ROLES = {"human", "user"}


def words_to_tokens(word_count: int) -> int:
    """Word-count proxy: round(1.3 * words), clamped to [16, 4096]."""
    tokens = _round_half_up(TOKENS_PER_WORD * word_count)
    return max(PROMPT_CLAMP_LO, min(PROMPT_CLAMP_HI, tokens))


def _iter_turns(conversation):
    if isinstance(conversation, dict):
        for key in ("conversations", "turns", "messages"):
            if key in conversation:
                conversation = conversation[key]
                break
        else:
            return
    if not isinstance(conversation, list):
        return
    for turn in conversation:
        if not isinstance(turn, dict):
            continue
        role = turn.get("from") or turn.get("role") or ""
        text = turn.get("value") or turn.get("text") or turn.get("content") or ""
        yield str(role).lower(), str(text)


def load_sharegpt(path: str | Path,
                  max_prompts: int = MAX_TRACE_PROMPTS) -> list[int]:
    """Extract first-human-turn prompt token counts from a conversation corpus."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TraceIngestError(f"cannot read trace corpus {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise TraceIngestError(f"trace corpus {path} is not an array of conversations")
    counts = []
    skipped = 0
    for conversation in raw:
        first_human = None
        for role, text in _iter_turns(conversation):
            if role in _HUMAN_ROLES:
                first_human = text
                break
        if first_human is None:
            skipped += 1
            continue
        counts.append(words_to_tokens(len(first_human.split())))
        if len(counts) >= max_prompts:
            break
    if not counts:
        raise TraceIngestError(
            f"no human turns found in {path} ({skipped} records skipped)",
            skipped=skipped)
    return counts


SHAREGPT_REPLAY_DEFAULTS = {
    "gen_log_mean": 4.5,
    "gen_log_sigma": 1.0,
    "gen_clip_lo": 32,
    "gen_clip_hi": 2048,
    "arrival_rate": 0.2,
}


def gen_sharegpt_replay(counts: list[int], spec: WorkloadSpec) -> list[Request]:
    """Replay ingested prompt sizes with lognormal generation lengths."""
    if not counts:
        raise ConfigError("sharegpt replay needs a nonempty prompt-count list")
    p = {**SHAREGPT_REPLAY_DEFAULTS, **spec.params}
    rng = Pcg32(spec.seed, "sharegpt_replay")
    rate = float(p["arrival_rate"])
    lo, hi = int(p["gen_clip_lo"]), int(p["gen_clip_hi"])
    out = []
    for i in range(spec.n_requests):
        prompt = counts[rng.choice_index(len(counts))]
        gen = _round_half_up(math.exp(rng.normal(float(p["gen_log_mean"]),
                                                 float(p["gen_log_sigma"]))))
        out.append(Request(
            req_id=i,
            arrival_tick=int(i / rate),
            prompt_tokens=prompt,
            gen_tokens=max(lo, min(hi, gen)),
        ))
    return out


def generate(spec: WorkloadSpec, trace_counts: list[int] | None = None) -> list[Request]:
    """Produce the full request stream for one cell."""
    if spec.kind == "uniform_short":
        return gen_uniform_short(spec)
    if spec.kind == "mixed_long":
        return gen_mixed_long(spec)
    if spec.kind == "agentic_burst":
        return gen_agentic_burst(spec)
    if spec.kind == "sharegpt_replay":
        if trace_counts is None:
            raise ConfigError("sharegpt_replay requires ingested trace counts")
        return gen_sharegpt_replay(trace_counts, spec)
    raise ConfigError(f"unknown workload kind {spec.kind!r}")
