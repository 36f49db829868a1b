"""Synthetic app-review corpora with a planted, retrieval-only fact.

Every app gets a made-up two-word feature name (its "fact") that appears in
the app description and in some of its unanswered reviews. Developer
responses mention the fact, but the review being answered never does, so a
model can only produce it by reading retrieved snippets. Responses also
carry a rating-specific opener and a category-specific phrase, while review
wording is independent of rating, category and app.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .numcore.rng import make_rng

CATEGORIES = ("games", "finance", "health", "music", "travel", "photo", "weather", "news",
              "education", "shopping", "sports", "food")

RATING_OPENERS = {
    1: "we are very sorry about this bad experience",
    2: "we are sorry the app let you down",
    3: "we appreciate your honest review",
    4: "we are glad you enjoy the app",
    5: "we are thrilled you love the app",
}

TOPICS = {
    "crash": ["the app keeps crashing when i open it", "it crashes every time i start it",
              "constant crashes make it hard to use"],
    "login": ["i can not log in to my account", "the login page never loads",
              "it keeps asking me to sign in again"],
    "sync": ["my data does not sync between devices", "sync stopped working after the update",
             "changes on my phone never show up on my tablet"],
    "ads": ["there are way too many ads", "an ad pops up after every single tap",
            "the video ads are very long and loud"],
    "battery": ["it drains my battery really fast", "my phone gets hot and the battery dies",
                "battery use is much higher than it should be"],
    "speed": ["the app is very slow to load", "everything takes forever to open",
              "scrolling is slow and choppy"],
    "notifications": ["i do not get any notifications", "notifications arrive hours late",
                      "i get too many notifications every day"],
    "payment": ["my payment did not go through", "i was charged twice for one purchase",
                "the checkout screen shows an error"],
}

OPENERS = ["", "honestly", "well", "so", "ok", "sadly", "lately", "today"]
CLOSERS = ["", "please fix this", "hope this gets better", "what is going on", "any help would be nice",
           "i use it every day"]

_SYLLABLES = ("ka", "lo", "mi", "ru", "zen", "tor", "vex", "qua", "nim", "bel", "dro", "sup",
              "fen", "gal", "hox", "jir", "pom", "wex", "yul", "zar")


@dataclass(frozen=True)
class SynthConfig:
    n_apps: int = 20
    reviews_per_app: int = 200
    fact_vocab: int = 64
    unpaired_fraction: float = 0.2
    apps_per_category: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_apps < 1 or self.reviews_per_app < 1:
            raise ValueError("need at least one app and one review per app")
        if self.fact_vocab * (self.fact_vocab - 1) // 2 < self.n_apps:
            raise ValueError("fact vocabulary too small for a distinct fact per app")
        if not 0.0 <= self.unpaired_fraction < 1.0:
            raise ValueError("unpaired_fraction must lie in [0, 1)")
        if self.apps_per_category < 1:
            raise ValueError("apps_per_category must be positive")


@dataclass(frozen=True)
class AppSpec:
    app_id: str
    name: str
    category: str
    fact: tuple


def _pseudo_words(rng, n, forbidden=()):
    out, seen = [], set(forbidden)
    while len(out) < n:
        w = "".join(rng.choice(_SYLLABLES, size=int(rng.integers(2, 4))))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def make_apps(config: SynthConfig) -> list[AppSpec]:
    rng = make_rng(config.seed)
    facts = _pseudo_words(rng, config.fact_vocab)
    names = _pseudo_words(rng, config.n_apps, forbidden=facts)
    pairs = [(a, b) for i, a in enumerate(facts) for b in facts[i + 1:]]
    chosen = rng.choice(len(pairs), size=config.n_apps, replace=False)
    n_cat = min(len(CATEGORIES), max(1, -(-config.n_apps // config.apps_per_category)))
    return [AppSpec(f"app{i:03d}", names[i], CATEGORIES[i % n_cat], pairs[int(chosen[i])])
            for i in range(config.n_apps)]


def description(app: AppSpec) -> str:
    f1, f2 = app.fact
    return (f"{app.name} is a simple {app.category} app for everyone. "
            f"it now comes with {f1} {f2} support and a clean new look.")


def response_text(app: AppSpec, rating: int, topic: str) -> str:
    f1, f2 = app.fact
    return (f"{RATING_OPENERS[rating]}. our {app.category} team is fixing the {topic} problem. "
            f"try the new {f1} {f2} mode.")


def _review_text(rng, topic: str) -> str:
    parts = [str(rng.choice(OPENERS)), str(rng.choice(TOPICS[topic])), str(rng.choice(CLOSERS))]
    return ", ".join(p for p in parts if p) + "."


def _fact_review_text(rng, app: AppSpec, topic: str) -> str:
    f1, f2 = app.fact
    return f"i really like the {f1} {f2} feature but {rng.choice(TOPICS[topic])}."


def generate(config: SynthConfig = SynthConfig()) -> list[dict]:
    """Raw JSON-lines records: descriptions, categories, reviews and responses."""
    apps = make_apps(config)
    rng = make_rng(config.seed + 1)
    topics = sorted(TOPICS)
    records = []
    for app in apps:
        records.append({"app_id": app.app_id, "kind": "description", "text": description(app)})
        records.append({"app_id": app.app_id, "kind": "category", "text": app.category})
        for k in range(config.reviews_per_app):
            rid = f"{app.app_id}-r{k:05d}"
            rating = int(rng.integers(1, 6))
            topic = str(rng.choice(topics))
            if rng.random() < config.unpaired_fraction:
                records.append({"app_id": app.app_id, "kind": "review", "id": rid, "rating": rating,
                                "text": _fact_review_text(rng, app, topic)})
                continue
            records.append({"app_id": app.app_id, "kind": "review", "id": rid, "rating": rating,
                            "text": _review_text(rng, topic)})
            records.append({"app_id": app.app_id, "kind": "response", "link_id": rid,
                            "text": response_text(app, rating, topic)})
    return records


def write_jsonl(path, records) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
