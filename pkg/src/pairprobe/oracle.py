"""Oracles that answer matching questions, plus accuracy estimation.

Three interchangeable implementations share the ``ask`` contract: a remote
chat-completion client, a seeded simulator with planted ground truth, and a
scripted replay oracle. An oracle is characterized by a single expected
accuracy theta: the probability its verdict on a question is correct.
Verdicts are strictly binary; a response that cannot be normalized to
MATCH or NO_MATCH is an error, never a silent guess.
"""
from __future__ import annotations

import csv
import hashlib
import os
import random
import re
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol, Sequence

from .core import Partition, RecordPair, same_cluster
from .errors import (
    AuthenticationError,
    ConfigError,
    InputError,
    OracleParseError,
    OracleTransportError,
)
from .selection import MatchQuestion

#: Accuracy at or below this makes answers nearly worthless; the CLI warns.
LOW_THETA_WARNING = 0.55

_CLARIFY_SUFFIX = "\nAnswer with exactly one word: MATCH or NO_MATCH."


class Verdict(Enum):
    MATCH = "MATCH"
    NON_MATCH = "NO_MATCH"

    def flipped(self) -> "Verdict":
        return Verdict.NON_MATCH if self is Verdict.MATCH else Verdict.MATCH


@dataclass(frozen=True)
class OracleAnswer:
    """One verdict with its verbatim transcript and billed token count."""

    pair: RecordPair
    verdict: Verdict
    raw: str
    tokens_billed: int


@dataclass(frozen=True)
class GroundTruth:
    """The planted correct partition, for simulation and evaluation."""

    true_partition: Partition

    def verdict_for(self, pair: RecordPair) -> Verdict:
        return (
            Verdict.MATCH
            if same_cluster(self.true_partition, pair)
            else Verdict.NON_MATCH
        )


@dataclass(frozen=True)
class OracleProfile:
    """Expected accuracy plus transport configuration.

    theta must lie strictly in (0, 1); a perfect oracle is only meaningful
    for simulation and needs ``allow_perfect``.
    """

    theta: float = 0.9
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    api_key_env: str = "PAIRPROBE_API_KEY"
    seed: int = 0
    retries: int = 2
    timeout: float = 30.0
    allow_perfect: bool = False

    def __post_init__(self) -> None:
        if not (self.allow_perfect and self.theta == 1.0) and not 0.0 < self.theta < 1.0:
            raise ConfigError(
                f"theta must lie strictly in (0, 1), got {self.theta} "
                "(theta=1 requires allow_perfect)"
            )
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")


class Oracle(Protocol):
    def ask(self, question: MatchQuestion) -> OracleAnswer: ...


_VERDICT_WORDS: Mapping[str, Verdict] = {
    "MATCH": Verdict.MATCH,
    "NO_MATCH": Verdict.NON_MATCH,
    "NO MATCH": Verdict.NON_MATCH,
    "NOMATCH": Verdict.NON_MATCH,
}


def parse_verdict(text: str) -> Verdict:
    """Normalize a response to a binary verdict: case-folded, punctuation stripped.

    The whole normalized response must be one of the accepted forms;
    anything else raises OracleParseError.
    """
    normalized = re.sub(r"[^A-Z_ ]", "", text.upper()).strip()
    normalized = re.sub(r"\s+", " ", normalized)
    try:
        return _VERDICT_WORDS[normalized]
    except KeyError:
        raise OracleParseError(f"cannot read a MATCH/NO_MATCH verdict from {text!r}") from None


def _pair_stream_seed(master_seed: int, pair: RecordPair) -> int:
    digest = hashlib.sha256(f"{master_seed}|{pair.a}|{pair.b}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class SimulatedOracle:
    """Answers truthfully with probability theta, flipped otherwise.

    Each pair gets its own random stream derived from (master seed, pair),
    so the order questions are asked in — including concurrent asking —
    cannot perturb any other pair's answers, while repeated calls on one
    pair still draw independent errors.
    """

    def __init__(
        self,
        truth: GroundTruth | Partition,
        theta: float = 0.9,
        seed: int = 0,
        allow_perfect: bool = False,
    ):
        if isinstance(truth, Partition):
            truth = GroundTruth(truth)
        if theta == 1.0 and allow_perfect:
            pass
        elif not 0.0 < theta < 1.0:
            raise ConfigError(
                f"theta must lie strictly in (0, 1), got {theta} "
                "(theta=1 requires allow_perfect)"
            )
        self.truth = truth
        self.theta = theta
        self.seed = seed
        self._streams: dict[RecordPair, random.Random] = {}
        self._lock = threading.Lock()

    def ask(self, question: MatchQuestion) -> OracleAnswer:
        with self._lock:
            stream = self._streams.get(question.pair)
            if stream is None:
                stream = random.Random(_pair_stream_seed(self.seed, question.pair))
                self._streams[question.pair] = stream
            draw = stream.random()
        truthful = self.truth.verdict_for(question.pair)
        verdict = truthful if draw < self.theta else truthful.flipped()
        return OracleAnswer(
            pair=question.pair,
            verdict=verdict,
            raw=verdict.value,
            tokens_billed=question.cost,
        )


class ScriptedOracle:
    """Replays a fixed pair -> verdict mapping; asking an unscripted pair fails.

    Replaying the answers recorded in a refinement trace reproduces the
    refiner's final distribution bit for bit.
    """

    def __init__(self, answers: Mapping[RecordPair, Verdict]):
        self.answers = dict(answers)

    @classmethod
    def from_answers(cls, answers: Iterable[OracleAnswer]) -> "ScriptedOracle":
        return cls({a.pair: a.verdict for a in answers})

    @classmethod
    def from_csv(cls, path: str) -> "ScriptedOracle":
        mapping: dict[RecordPair, Verdict] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise InputError(f"{path}: empty script file")
            if [c.strip().lower() for c in header[:3]] != ["id_a", "id_b", "verdict"]:
                raise InputError(f"{path}: expected header id_a,id_b,verdict")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) < 3:
                    raise InputError(f"{path}:{lineno}: expected 3 columns")
                try:
                    verdict = parse_verdict(row[2])
                except OracleParseError as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from None
                mapping[RecordPair(row[0].strip(), row[1].strip())] = verdict
        return cls(mapping)

    def ask(self, question: MatchQuestion) -> OracleAnswer:
        verdict = self.answers.get(question.pair)
        if verdict is None:
            raise OracleParseError(
                f"no scripted answer for pair ({question.pair.a!r}, {question.pair.b!r})"
            )
        return OracleAnswer(
            pair=question.pair,
            verdict=verdict,
            raw=verdict.value,
            tokens_billed=question.cost,
        )


class RemoteOracle:
    """Client for a chat-completion style endpoint.

    Temperature is pinned to 0 and the response is expected to be a single
    word. Transport failures retry up to ``profile.retries`` times; a
    response that fails to parse is re-asked with a clarifying suffix up to
    twice before raising. Billed tokens come from the endpoint's reported
    usage when present, else the question's estimate.
    """

    def __init__(self, profile: OracleProfile, cost_model=None, session=None):
        self.profile = profile
        self.cost_model = cost_model
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def _api_key(self) -> str:
        key = os.environ.get(self.profile.api_key_env, "")
        if not key:
            raise AuthenticationError(
                f"environment variable {self.profile.api_key_env} is not set"
            )
        return key

    def _post(self, prompt: str) -> tuple[str, int | None]:
        url = self.profile.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.profile.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        last_error: Exception | None = None
        for _ in range(self.profile.retries + 1):
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=self.profile.timeout
                )
            except Exception as exc:  # connection/timeout errors from the transport
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthenticationError(f"endpoint rejected credentials ({response.status_code})")
            if response.status_code >= 400:
                last_error = OracleTransportError(
                    f"endpoint returned HTTP {response.status_code}"
                )
                continue
            body = response.json()
            try:
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise OracleTransportError(f"malformed endpoint response: {exc}") from exc
            usage = body.get("usage", {})
            total = usage.get("total_tokens") if isinstance(usage, dict) else None
            return content, total
        raise OracleTransportError(f"endpoint unreachable: {last_error}")

    def ask(self, question: MatchQuestion) -> OracleAnswer:
        prompt = question.prompt
        transcript: list[str] = []
        billed_total = 0
        saw_usage = False
        for attempt in range(3):  # initial ask plus two clarifying retries
            content, billed = self._post(prompt)
            transcript.append(content)
            if billed is not None:
                saw_usage = True
                billed_total += billed
            try:
                verdict = parse_verdict(content)
            except OracleParseError:
                prompt = question.prompt + _CLARIFY_SUFFIX
                continue
            return OracleAnswer(
                pair=question.pair,
                verdict=verdict,
                raw="\n---\n".join(transcript),
                tokens_billed=billed_total if saw_usage else question.cost,
            )
        raise OracleParseError(
            f"no usable verdict after {len(transcript)} attempts; last response "
            f"{transcript[-1]!r}"
        )


def estimate_accuracy(
    oracle: Oracle, sample: Sequence[tuple[MatchQuestion, Verdict]]
) -> float:
    """Laplace-smoothed accuracy from a labeled sample: (correct + 1) / (n + 2).

    Smoothing keeps the estimate strictly inside (0, 1), which the Bayes
    update requires.
    """
    if not sample:
        raise InputError("accuracy estimation needs a non-empty labeled sample")
    correct = 0
    for question, expected in sample:
        answer = oracle.ask(question)
        if answer.verdict is expected:
            correct += 1
    return (correct + 1) / (len(sample) + 2)
