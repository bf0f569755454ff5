"""Per-message user-group classification along device, activeness and length axes."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .core import GroupKey, Message


class DeviceClass(str, enum.Enum):
    MOBILE = "mobile"
    NON_MOBILE = "non_mobile"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class Markers:
    mobile: frozenset[str]
    non_mobile: frozenset[str]

    def __post_init__(self) -> None:
        mob = frozenset(m.lower() for m in self.mobile)
        non = frozenset(m.lower() for m in self.non_mobile)
        if mob & non:
            raise ValueError(f"marker sets overlap: {sorted(mob & non)}")
        object.__setattr__(self, "mobile", mob)
        object.__setattr__(self, "non_mobile", non)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Markers":
        if path is None:
            text = resources.files("pulsegate").joinpath("data/markers.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        obj = json.loads(text)
        return cls(frozenset(obj["mobile"]), frozenset(obj["non_mobile"]))


def _spans(text: str, markers: Iterable[str]) -> list[tuple[int, int]]:
    out = []
    for m in markers:
        pos = text.find(m)
        while pos != -1:
            out.append((pos, pos + len(m)))
            pos = text.find(m, pos + 1)
    return out


def _hit(own: list[tuple[int, int]], other: list[tuple[int, int]]) -> bool:
    # A marker occurrence nested inside a longer marker of the other class
    # ("web" inside "mobile web") does not count.
    return any(not any(c <= a and b <= d and (d - c) > (b - a) for c, d in other)
               for a, b in own)


def classify_device(client: str, mobile_markers: Iterable[str],
                    non_mobile_markers: Iterable[str]) -> DeviceClass:
    low = client.lower()
    mob = _spans(low, mobile_markers)
    non = _spans(low, non_mobile_markers)
    is_mobile, is_non = _hit(mob, non), _hit(non, mob)
    if is_mobile and not is_non:
        return DeviceClass.MOBILE
    if is_non and not is_mobile:
        return DeviceClass.NON_MOBILE
    return DeviceClass.AMBIGUOUS


@dataclass
class ActivityState:
    counts: dict[str, int] = field(default_factory=dict)
    total_posts: int = 0

    @property
    def distinct_users(self) -> int:
        return len(self.counts)

    def record_post(self, user_id: str) -> None:
        self.counts[user_id] = self.counts.get(user_id, 0) + 1
        self.total_posts += 1


def classify_activity(state: ActivityState, user_id: str) -> GroupKey:
    """Active iff the user's prior posts exceed the mean over users seen so far."""
    if state.distinct_users == 0:
        return GroupKey.INACTIVE
    # count > total/distinct, kept in integers to avoid rounding at ties
    if state.counts.get(user_id, 0) * state.distinct_users > state.total_posts:
        return GroupKey.ACTIVE
    return GroupKey.INACTIVE


@dataclass
class LengthState:
    total_words: int = 0
    total_msgs: int = 0

    def record(self, words: int) -> None:
        self.total_words += words
        self.total_msgs += 1

    @property
    def mean(self) -> float:
        return self.total_words / self.total_msgs if self.total_msgs else 0.0


def word_count(text: str) -> int:
    return len(text.split())


def classify_length(state: LengthState, text: str) -> GroupKey:
    if state.total_msgs == 0:
        return GroupKey.SHORT
    if word_count(text) * state.total_msgs > state.total_words:
        return GroupKey.LONG
    return GroupKey.SHORT


@dataclass
class Classifier:
    """Stream-order classifier holding the running per-game state."""

    markers: Markers = field(default_factory=Markers.load)
    activity: ActivityState = field(default_factory=ActivityState)
    length: LengthState = field(default_factory=LengthState)

    def classify(self, msg: Message) -> tuple[GroupKey, ...]:
        """Return the group keys of ``msg`` and advance the running states."""
        keys = [GroupKey.ALL]
        dev = classify_device(msg.client, self.markers.mobile, self.markers.non_mobile)
        if dev is DeviceClass.MOBILE:
            keys.append(GroupKey.MOBILE)
        elif dev is DeviceClass.NON_MOBILE:
            keys.append(GroupKey.NON_MOBILE)
        keys.append(classify_activity(self.activity, msg.user_id))
        keys.append(classify_length(self.length, msg.text))
        self.activity.record_post(msg.user_id)
        self.length.record(word_count(msg.text))
        return tuple(keys)


def split_streams(msgs: Sequence[Message], markers: Markers | None = None
                  ) -> dict[GroupKey, list[Message]]:
    out: dict[GroupKey, list[Message]] = {g: [] for g in GroupKey}
    prev = None
    clf = Classifier(markers or Markers.load())
    for m in msgs:
        if prev is not None and m.ts_ms < prev:
            raise ValueError("input not sorted by ts_ms")
        prev = m.ts_ms
        for key in clf.classify(m):
            out[key].append(m)
    return out
