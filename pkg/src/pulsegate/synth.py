"""Labelled synthetic message streams calibrated to measured tweet-response
statistics, plus a calibration checker."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import GroundTruthEvent, GroupKey, Message, bin_timestamps
from .grouping import ActivityState, DeviceClass, Markers, classify_activity, classify_device, split_streams, word_count
from .ingest import serialize, write_ground_truth

BASE_EPOCH_MS = 1_296_950_400_000  # 2011-02-06 00:00 UTC
GAME_SPACING_MS = 7 * 24 * 3600 * 1000

MOBILE_CLIENTS = ("Twitter for iPhone", "Twitter for Android", "Twitter for BlackBerry",
                  "txt", "Mobile Web", "Twitter for iPad", "HTC Peep", "MOTO Blur")
NON_MOBILE_CLIENTS = ("web", "Twitter for Mac", "Twitter for Windows")
AMBIGUOUS_CLIENTS = ("TweetDeck", "HootSuite", "Echofon", "Seesmic", "Tweetbot")

KEYWORD_FORMS = ("touchdown", "Touchdown!!", "TOUCHDOWN", "TD", "td!", "Touchdownnnnn!!!",
                 "#touchdown", "TD!!")
FILLER = ("what", "a", "play", "by", "the", "defense", "jets", "giants", "packers", "steelers",
          "patriots", "cowboys", "bears", "saints", "let's", "go", "yes", "again", "that",
          "was", "amazing", "catch", "run", "pass", "drive", "score", "game", "on", "now",
          "quarterback", "huge", "wow", "finally", "another", "for", "in", "end", "zone", "is",
          "this", "so", "good", "!!!", "lol", "omg", "baby", "team", "win", "fans", "today")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResponseKernel:
    """Expected event-related post rate after an event.

    The rate is zero until a per-event onset delay, then rises and decays as
    a function of the time ``tau`` since onset, peaking ``rise_s`` seconds
    after onset at ``amplitude`` messages/s.  Two shapes are available:

    * ``gamma``: ``amplitude * (tau/rise_s)**spread * exp(spread * (1 - tau/rise_s))``
    * ``lognormal``: ``amplitude * exp(-ln(tau/rise_s)**2 / (2 * spread**2))``
    """

    shape: str = "gamma"
    onset_min_s: float = 7.0
    onset_max_s: float = 50.0
    onset_shape: float = 2.0
    onset_scale_s: float = 6.0
    rise_s: float = 54.0
    spread: float = 1.0
    amplitude: float = 6.0
    amplitude_sigma: float = 0.45

    def __post_init__(self) -> None:
        if self.shape not in ("gamma", "lognormal"):
            raise ConfigError(f"unknown kernel shape {self.shape!r}")
        if not 0 <= self.onset_min_s <= self.onset_max_s:
            raise ConfigError("need 0 <= onset_min_s <= onset_max_s")
        if self.rise_s <= 0 or self.spread <= 0 or self.amplitude < 0:
            raise ConfigError("rise_s and spread must be > 0, amplitude >= 0")

    def rate(self, tau: np.ndarray, amplitude: float | None = None) -> np.ndarray:
        tau = np.asarray(tau, float)
        a = self.amplitude if amplitude is None else amplitude
        out = np.zeros_like(tau)
        pos = tau > 0
        x = tau[pos] / self.rise_s
        if self.shape == "gamma":
            out[pos] = a * x ** self.spread * np.exp(self.spread * (1 - x))
        else:
            out[pos] = a * np.exp(-np.log(x) ** 2 / (2 * self.spread ** 2))
        return out

    def expected_count(self, amplitude: float | None = None) -> float:
        a = self.amplitude if amplitude is None else amplitude
        k, s = self.spread, self.rise_s
        if self.shape == "gamma":
            return a * s * math.exp(k) * math.gamma(k + 1) / k ** (k + 1)
        return a * math.sqrt(2 * math.pi) * k * s * math.exp(k ** 2 / 2)

    def sample_onset(self, rng: np.random.Generator) -> float:
        o = self.onset_min_s + rng.gamma(self.onset_shape, self.onset_scale_s)
        return float(min(o, self.onset_max_s))

    def sample_delays(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Delays after onset distributed proportionally to the rate curve."""
        k, s = self.spread, self.rise_s
        if self.shape == "gamma":
            return rng.gamma(k + 1, s / k, n)
        # tau * lognormal-pdf(tau; ln s, k) is lognormal with mean-log shifted by k**2
        return rng.lognormal(math.log(s) + k ** 2, k, n)


@dataclass(frozen=True)
class PopulationConfig:
    n_users: int = 50_000
    activity_skew: float = 0.7
    device_mix: tuple[float, float, float] = (0.40, 0.30, 0.30)
    mobile_ratio: float = 2.0            # event response, mobile : non-mobile
    response_ambiguous_share: float = 0.25
    short_ratio: float = 2.0             # event response, short : long
    bot_device_mix: tuple[float, float, float] = (0.10, 0.45, 0.45)
    bot_pool: int = 200                  # spikes are posted by the top-ranked users
    baseline_words_mean: float = 12.0
    post_event_words_mean: float = 6.0
    depressed_s: float = 60.0
    recovery_s: float = 120.0
    short_words: tuple[float, float] = (5.0, 3.5)   # mean words of short posts, calm -> excited
    long_words: tuple[float, float] = (15.0, 11.0)  # mean words of long posts, calm -> excited
    mobile_delay_s: float = 4.0
    active_delay_s: float = 1.5
    long_delay_s: float = 2.0

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if abs(sum(self.device_mix) - 1.0) > 1e-9 or min(self.device_mix) < 0:
            raise ConfigError("device_mix must be non-negative and sum to 1")
        if self.mobile_ratio <= 0 or self.short_ratio <= 0 or self.activity_skew <= 0:
            raise ConfigError("ratios and skew must be > 0")
        if not 0 <= self.response_ambiguous_share < 1:
            raise ConfigError("response_ambiguous_share must be in [0, 1)")

    @property
    def response_device_mix(self) -> tuple[float, float, float]:
        rest = 1.0 - self.response_ambiguous_share
        non = rest / (1.0 + self.mobile_ratio)
        return (rest - non, non, self.response_ambiguous_share)

    @property
    def response_short_share(self) -> float:
        return self.short_ratio / (1.0 + self.short_ratio)


@dataclass(frozen=True)
class GameScript:
    duration_s: int = 10_800
    events_per_game: int | None = None   # None: drawn from {5, 6}
    noise_rate: float = 0.25
    distractors_per_game: float = 1.5
    distractor_scale: tuple[float, float] = (0.05, 0.30)
    spikes_per_game: float = 4.0
    spike_size: tuple[int, int] = (10, 30)
    spike_duration_s: tuple[float, float] = (3.0, 12.0)
    audience_sigma: float = 0.2   # log-normal spread of per-game audience size
    min_separation_s: int = 300
    lead_s: int = 300
    tail_s: int = 600
    seed: int = 0
    start_ms: int = BASE_EPOCH_MS
    kind: str = "touchdown"

    def __post_init__(self) -> None:
        if self.duration_s <= self.lead_s + self.tail_s:
            raise ConfigError("duration too short")
        if min(self.noise_rate, self.distractors_per_game, self.spikes_per_game, self.audience_sigma) < 0:
            raise ConfigError("rates must be >= 0")
        if self.events_per_game is not None and self.events_per_game < 0:
            raise ConfigError("events_per_game must be >= 0")
        if self.min_separation_s < 300:
            raise ConfigError("events must be at least 300 s apart")

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.duration_s * 1000


def _spaced_times(rng, k: int, lo: float, hi: float, gap: float) -> np.ndarray:
    span = hi - lo - (k - 1) * gap
    if k and span < 0:
        raise ConfigError(f"cannot fit {k} plays {gap} s apart in {hi - lo} s")
    u = np.sort(rng.uniform(0, span, k))
    return lo + u + gap * np.arange(k)


def _regime(t: np.ndarray, events_s: np.ndarray, pop: PopulationConfig) -> np.ndarray:
    """1 during the depressed window after an event, decaying linearly to 0."""
    r = np.zeros_like(t)
    for e in events_s:
        d = t - e
        part = np.where(d < 0, 0.0,
                        np.where(d < pop.depressed_s, 1.0,
                                 np.clip(1.0 - (d - pop.depressed_s) / pop.recovery_s, 0.0, 1.0)))
        np.maximum(r, part, out=r)
    return r


def _lerp(pair: tuple[float, float], r: float) -> float:
    return pair[0] + (pair[1] - pair[0]) * r


BACKGROUND, RESPONSE, DISTRACTOR, SPIKE = 0, 1, 2, 3


def generate_game(script: GameScript, pop: PopulationConfig = PopulationConfig(),
                  kernel: ResponseKernel = ResponseKernel()
                  ) -> tuple[list[Message], list[GroundTruthEvent]]:
    """One game: a time-sorted message stream and its ground-truth events.

    Messages come from four sources: homogeneous background chatter, the
    response to each true event, weaker responses to non-event plays
    (distractors), and short bursts posted by a pool of very active users
    (spikes).  Every message contains an event keyword.
    """
    rng = np.random.default_rng(script.seed)
    audience = rng.lognormal(-script.audience_sigma ** 2 / 2, script.audience_sigma)
    n_events = script.events_per_game
    if n_events is None:
        n_events = int(rng.integers(5, 7))
    n_distr = int(rng.poisson(script.distractors_per_game))
    plays = _spaced_times(rng, n_events + n_distr, script.lead_s,
                          script.duration_s - script.tail_s, script.min_separation_s)
    is_event = np.zeros(len(plays), bool)
    is_event[rng.choice(len(plays), n_events, replace=False)] = True
    events_s, distr_s = plays[is_event], plays[~is_event]

    resp_mix, bot_mix = np.asarray(pop.response_device_mix), np.asarray(pop.bot_device_mix)
    p_short = pop.response_short_share
    ev_amp = audience * kernel.amplitude * rng.lognormal(-kernel.amplitude_sigma ** 2 / 2, kernel.amplitude_sigma,
                                             n_events)
    ds_amp = audience * kernel.amplitude * rng.uniform(*script.distractor_scale, n_distr)

    times, origin = [], []
    n_bg = rng.poisson(audience * script.noise_rate * script.duration_s)
    times.append(rng.uniform(0, script.duration_s, n_bg))
    origin.append(np.full(n_bg, BACKGROUND))
    for amps, starts, code in ((ev_amp, events_s, RESPONSE), (ds_amp, distr_s, DISTRACTOR)):
        for a, e in zip(amps, starts):
            n = rng.poisson(kernel.expected_count(a))
            times.append(e + kernel.sample_onset(rng) + kernel.sample_delays(rng, n))
            origin.append(np.full(n, code))
    spike_vol = 0
    for _ in range(int(rng.poisson(script.spikes_per_game))):
        n = int(rng.integers(script.spike_size[0], script.spike_size[1] + 1))
        t0 = rng.uniform(0, script.duration_s)
        times.append(t0 + rng.uniform(0, rng.uniform(*script.spike_duration_s), n))
        origin.append(np.full(n, SPIKE))
        spike_vol += n
    t = np.concatenate(times)
    org = np.concatenate(origin)
    keep = t < script.duration_s
    t, org = t[keep], org[keep]

    # Background mix chosen so the whole stream matches the configured device mix.
    e_vol = sum(kernel.expected_count(a) for a in ev_amp)
    b_vol = audience * script.noise_rate * script.duration_s + sum(kernel.expected_count(a) for a in ds_amp)
    target = np.asarray(pop.device_mix)
    if b_vol > 0:
        total = e_vol + b_vol + spike_vol
        bg_mix = np.clip((target * total - resp_mix * e_vol - bot_mix * spike_vol) / b_vol, 0.01, None)
    else:
        bg_mix = target
    bg_mix = bg_mix / bg_mix.sum()
    u = rng.random(len(t))
    device = np.select([org == RESPONSE, org == SPIKE],
                       [np.searchsorted(np.cumsum(resp_mix), u, side="right"),
                        np.searchsorted(np.cumsum(bot_mix), u, side="right")],
                       np.searchsorted(np.cumsum(bg_mix), u, side="right"))
    device = np.minimum(device, 2)
    short = rng.random(len(t)) < p_short

    # Users and activeness, evaluated in base-time order.
    order = np.argsort(t, kind="stable")
    t, org, device, short = t[order], org[order], device[order], short[order]
    ranks = np.arange(1, pop.n_users + 1, dtype=float) ** -pop.activity_skew
    users = rng.choice(pop.n_users, size=len(t), p=ranks / ranks.sum())
    bots = org == SPIKE
    users[bots] = rng.integers(0, min(pop.bot_pool, pop.n_users), int(bots.sum()))
    user_ids = np.array([f"u{i:06d}" for i in range(pop.n_users)], dtype=object)[users]
    act = ActivityState()
    active = np.zeros(len(t), bool)
    for i, uid in enumerate(user_ids):
        active[i] = classify_activity(act, uid) is GroupKey.ACTIVE
        act.record_post(uid)

    # Reaction-delay offsets for event responses, jittered +-50% around their means.
    resp = org == RESPONSE
    jit = lambda: rng.uniform(0.5, 1.5, len(t))
    offset = (pop.mobile_delay_s * jit() * (device == 0) + pop.active_delay_s * jit() * active
              + pop.long_delay_s * jit() * ~short)
    t = np.where(resp, t + offset, t)
    keep = t < script.duration_s
    t, org, device, short, user_ids = t[keep], org[keep], device[keep], short[keep], user_ids[keep]
    ts_ms = script.start_ms + np.floor(t * 1000).astype(np.int64)
    order = np.argsort(ts_ms, kind="stable")
    ts_ms, org, device, short, user_ids = ts_ms[order], org[order], device[order], short[order], user_ids[order]
    t_s = (ts_ms - script.start_ms) / 1000.0

    regime = _regime(t_s, events_s, pop)
    words = _draw_word_counts(rng, regime, org, short, pop)
    texts = _render_texts(rng, words)
    client_pools = (MOBILE_CLIENTS, NON_MOBILE_CLIENTS, AMBIGUOUS_CLIENTS)
    pick = rng.integers(0, 1 << 30, len(ts_ms))
    msgs = [Message(int(ts), uid, client_pools[d][p % len(client_pools[d])], txt)
            for ts, uid, d, p, txt in zip(ts_ms.tolist(), user_ids.tolist(), device.tolist(),
                                          pick.tolist(), texts)]
    truth = [GroundTruthEvent(script.start_ms + int(round(e * 1000)), script.kind) for e in events_s]
    return msgs, truth


def _draw_word_counts(rng, regime, origin, want_short, pop: PopulationConfig) -> list[int]:
    """Word counts drawn against the running mean the length classifier sees.

    A short post gets at most floor(mean) words, a long one more than the
    mean, so the classifier reproduces the intended class exactly.  Class
    probabilities and class means are interpolated between the calm and
    excited regimes so the overall mean tracks the configured word targets.
    Spike posts are always long.
    """
    total_words, total_msgs = 0, 0
    out = []
    for r, org, ws in zip(regime.tolist(), origin.tolist(), want_short.tolist()):
        mean_target = pop.baseline_words_mean + (pop.post_event_words_mean - pop.baseline_words_mean) * r
        s_mean, l_mean = _lerp(pop.short_words, r), _lerp(pop.long_words, r)
        if total_msgs == 0:
            cap = int(pop.baseline_words_mean)
            is_short = True
        else:
            cap = max(1, total_words // total_msgs)  # floor of the running mean
            if org == RESPONSE:
                is_short = ws
            elif org == SPIKE:
                is_short = False
            else:
                q = (l_mean - mean_target) / (l_mean - s_mean)
                is_short = rng.random() < min(max(q, 0.0), 1.0)
        if is_short:
            p = 0.0 if cap <= 1 else min(max((s_mean - 1) / (cap - 1), 0.0), 1.0)
            wc = 1 + int(rng.binomial(cap - 1, p)) if cap > 1 else 1
        else:
            wc = cap + 1 + int(rng.poisson(max(l_mean - cap - 1, 0.0)))
        out.append(wc)
        total_words += wc
        total_msgs += 1
    return out


def _render_texts(rng, words: Sequence[int]) -> list[str]:
    kw = rng.integers(0, len(KEYWORD_FORMS), len(words))
    filler = rng.integers(0, len(FILLER), int(sum(words)))
    texts, pos = [], 0
    for n, k in zip(words, kw.tolist()):
        toks = [FILLER[j] for j in filler[pos:pos + n - 1].tolist()]
        pos += n
        toks.insert(len(toks) // 2, KEYWORD_FORMS[k])
        texts.append(" ".join(toks))
    return texts


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class CorpusConfig:
    script: GameScript = field(default_factory=GameScript)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    kernel: ResponseKernel = field(default_factory=ResponseKernel)
    events_per_game_mean: float = 100 / 18

    def to_json(self) -> dict:
        return {"script": asdict(self.script), "population": asdict(self.population),
                "kernel": asdict(self.kernel), "events_per_game_mean": self.events_per_game_mean}

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusConfig":
        pop = dict(obj.get("population", {}))
        for key in ("device_mix", "bot_device_mix", "short_words", "long_words"):
            if key in pop:
                pop[key] = tuple(pop[key])
        script = dict(obj.get("script", {}))
        for key in ("distractor_scale", "spike_size", "spike_duration_s"):
            if key in script:
                script[key] = tuple(script[key])
        return cls(GameScript(**script), PopulationConfig(**pop), ResponseKernel(**obj.get("kernel", {})),
                   obj.get("events_per_game_mean", 100 / 18))


def game_seeds(seed: int, n_games: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n_games)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def event_allocation(seed: int, n_games: int, mean: float) -> list[int]:
    """Per-game event counts of floor(mean) or floor(mean)+1 summing to round(n*mean)."""
    lo = int(math.floor(mean))
    n_hi = int(round(n_games * mean)) - lo * n_games
    n_hi = min(max(n_hi, 0), n_games)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    hi = np.zeros(n_games, bool)
    hi[rng.choice(n_games, n_hi, replace=False)] = True
    return [lo + int(h) for h in hi]


def generate_corpus(n_games: int, seed: int, out_dir: str | Path,
                    config: CorpusConfig = CorpusConfig()) -> dict:
    """Write ``<out>/<game_id>/stream.ndjson``, ``truth.ndjson`` and ``manifest.json``."""
    if n_games < 1:
        raise ConfigError("n_games must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = game_seeds(seed, n_games)
    counts = ([config.script.events_per_game] * n_games if config.script.events_per_game is not None
              else event_allocation(seed, n_games, config.events_per_game_mean))
    games = []
    for i, (s, k) in enumerate(zip(seeds, counts)):
        gid = f"game{i + 1:02d}"
        script = replace(config.script, seed=s, events_per_game=k,
                         start_ms=config.script.start_ms + i * GAME_SPACING_MS)
        msgs, truth = generate_game(script, config.population, config.kernel)
        gdir = out / gid
        gdir.mkdir(exist_ok=True)
        with open(gdir / "stream.ndjson", "w", encoding="utf-8", newline="\n") as fh:
            serialize(msgs, fh)
        with open(gdir / "truth.ndjson", "w", encoding="utf-8", newline="\n") as fh:
            write_ground_truth(truth, fh)
        games.append({"game_id": gid, "seed": s, "start_ms": script.start_ms,
                      "duration_s": script.duration_s, "n_events": len(truth), "n_messages": len(msgs)})
    manifest = {"seed": seed, "n_games": n_games, "total_events": sum(g["n_events"] for g in games),
                "config": config.to_json(), "games": games}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationTargets:
    peak_s: float = 75.0
    peak_tol_s: float = 10.0
    onset_range_s: tuple[float, float] = (7.0, 50.0)
    onset_min_share: float = 0.90
    mobile_ratio: float = 2.0
    short_ratio: float = 2.0
    ratio_tol: float = 0.4
    device_mix: tuple[float, float, float] = (0.40, 0.30, 0.30)
    device_tol: float = 0.05
    pre_words: float = 12.0
    post_words: float = 6.0
    words_tol: float = 1.5
    mobile_delay_gap_s: float = 4.0
    active_delay_gap_s: float = 5.0
    long_delay_gap_s: float = 3.0
    delay_gap_tol_s: float = 3.0


PRE_S, POST_S, SMOOTH_S = 120, 300, 9


def _smooth(x: np.ndarray, k: int = SMOOTH_S) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, pad, mode="edge")
    return np.convolve(xp, np.ones(k) / k, mode="valid")


def _responses(games) -> dict[GroupKey, np.ndarray]:
    """Baseline-subtracted mean response per group over ``POST_S`` seconds."""
    out = {}
    for g in GroupKey:
        post, pre = [], []
        for game in games:
            s = game.series[g]
            for e in game.truth:
                i = s.bin_index(e.ts_ms)
                if i - PRE_S < 0 or i + POST_S > len(s):
                    continue
                post.append(s.counts[i:i + POST_S])
                pre.append(s.counts[i - PRE_S:i].mean())
        out[g] = np.mean(post, axis=0) - np.mean(pre)
    return out


DELAY_WINDOW_S = 240


def _mean_delay(resp: np.ndarray) -> float:
    """Excess-weighted mean delay; negative excess is kept so noise cancels."""
    w = resp[:DELAY_WINDOW_S]
    return float((np.arange(len(w)) * w).sum() / w.sum()) if w.sum() > 0 else float("nan")


def first_response_delays(games) -> list[float]:
    """Per event, delay of the first message in the first 5 s window whose count
    stands clearly above the pre-event baseline (mean + 3 sd + 2, Poisson)."""
    out = []
    for game in games:
        ts = np.asarray([m.ts_ms for m in game.messages], np.int64)
        for e in game.truth:
            pre = np.count_nonzero((ts >= e.ts_ms - PRE_S * 1000) & (ts < e.ts_ms)) / PRE_S
            need = 5 * pre + 3 * math.sqrt(5 * pre) + 2
            lo = np.searchsorted(ts, e.ts_ms)
            found = float("nan")
            for k in range(0, 180):
                a = np.searchsorted(ts, e.ts_ms + k * 1000)
                b = np.searchsorted(ts, e.ts_ms + (k + 5) * 1000)
                if b - a >= need:
                    found = (ts[a] - e.ts_ms) / 1000.0
                    break
            out.append(found)
    return out


def validate_calibration(games, targets: CalibrationTargets = CalibrationTargets(),
                         markers: Markers | None = None) -> dict:
    """Measure response statistics of a labelled corpus against targets.

    ``games`` is a sequence of :class:`pulsegate.corpus.Game`.  Returns a
    report with one entry per check (measured value, target, tolerance,
    pass flag) and an overall ``passed`` flag.
    """
    n_events = sum(len(g.truth) for g in games)
    if n_events < 20:
        raise ValueError(f"too few events for calibration ({n_events} < 20)")
    markers = markers or Markers.load()
    resp = _responses(games)
    sm = {g: _smooth(r) for g, r in resp.items()}
    win = slice(0, 180)
    peak = float(np.argmax(sm[GroupKey.ALL][win]))
    ratio = lambda a, b: float(sm[a][win].max() / sm[b][win].max())

    onsets = np.asarray(first_response_delays(games))
    lo, hi = targets.onset_range_s
    onset_share = float(np.mean((onsets >= lo) & (onsets <= hi)))

    dev = np.zeros(3)
    pre_w, post_w = [], []
    for game in games:
        for m in game.messages:
            d = classify_device(m.client, markers.mobile, markers.non_mobile)
            dev[(DeviceClass.MOBILE, DeviceClass.NON_MOBILE, DeviceClass.AMBIGUOUS).index(d)] += 1
        ts = np.asarray([m.ts_ms for m in game.messages], np.int64)
        wc = np.asarray([word_count(m.text) for m in game.messages])
        for e in game.truth:
            pre_w.append(wc[(ts >= e.ts_ms - 60_000) & (ts < e.ts_ms)])
            post_w.append(wc[(ts >= e.ts_ms) & (ts < e.ts_ms + 60_000)])
    dev = dev / dev.sum()
    pre_mean = float(np.concatenate(pre_w).mean())
    post_mean = float(np.concatenate(post_w).mean())

    delay = {g: _mean_delay(r) for g, r in resp.items()}
    checks = []

    def check(name, value, target, tol):
        checks.append({"name": name, "value": value, "target": target, "tol": tol,
                       "passed": bool(abs(value - target) <= tol)})

    check("peak_s", peak, targets.peak_s, targets.peak_tol_s)
    checks.append({"name": "onset_in_range_share", "value": onset_share,
                   "target": targets.onset_min_share, "range_s": list(targets.onset_range_s),
                   "passed": bool(onset_share >= targets.onset_min_share)})
    check("mobile_non_mobile_peak_ratio", ratio(GroupKey.MOBILE, GroupKey.NON_MOBILE),
          targets.mobile_ratio, targets.ratio_tol)
    check("short_long_peak_ratio", ratio(GroupKey.SHORT, GroupKey.LONG), targets.short_ratio, targets.ratio_tol)
    for name, v, t in zip(("mobile_share", "non_mobile_share", "ambiguous_share"), dev, targets.device_mix):
        check(name, float(v), t, targets.device_tol)
    check("pre_event_words", pre_mean, targets.pre_words, targets.words_tol)
    check("post_event_words", post_mean, targets.post_words, targets.words_tol)
    check("mobile_delay_gap_s", delay[GroupKey.MOBILE] - delay[GroupKey.NON_MOBILE],
          targets.mobile_delay_gap_s, targets.delay_gap_tol_s)
    check("active_delay_gap_s", delay[GroupKey.ACTIVE] - delay[GroupKey.INACTIVE],
          targets.active_delay_gap_s, targets.delay_gap_tol_s)
    check("long_delay_gap_s", delay[GroupKey.LONG] - delay[GroupKey.SHORT],
          targets.long_delay_gap_s, targets.delay_gap_tol_s)
    return {"n_games": len(games), "n_events": n_events, "checks": checks,
            "passed": all(c["passed"] for c in checks)}
