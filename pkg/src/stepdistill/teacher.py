"""Rationale extraction: prompts, completion parsing, oracle and remote teachers.

A "teacher" maps a task input to (rationale, label). Two implementations:
    * oracle_teach — reuses the task rules directly, with an optional seeded
      corruption rate modeling an imperfect teacher;
    * remote_teach — POSTs few-shot prompts to a completion endpoint, with a
      byte-level response cache, bounded parallelism, and per-item retries.
Both feed the same downstream training path, so experiments can swap one for
the other without touching the trainer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import requests

from .data import Dataset, solve_arithmetic, solve_entailment, format_rationale
from .tokenizer import normalize

log = logging.getLogger(__name__)


class ParseFailure(ValueError):
    """Completion did not contain a usable label."""


class UnparsableInput(ValueError):
    """oracle_teach received an input the task rules cannot interpret."""


class TransportError(RuntimeError):
    """Remote request failed after exhausting the retry budget."""


class AuthMissing(RuntimeError):
    """No auth token available and the cache cannot cover all inputs."""


@dataclass(frozen=True)
class PromptTemplate:
    """Few-shot prompt: preamble, worked (input, rationale, label) triplets, markers."""

    preamble: str
    demonstrations: tuple[tuple[str, str, str], ...]
    input_marker: str = "Q:"
    rationale_marker: str = "R:"
    label_marker: str = "A:"

    def __post_init__(self):
        if not self.demonstrations:
            raise ValueError("template needs at least one demonstration")
        for demo in self.demonstrations:
            if len(demo) != 3 or not all(part.strip() for part in demo):
                raise ValueError(f"demonstration fields must be nonempty: {demo!r}")


@dataclass(frozen=True)
class TeacherOutput:
    rationale: str
    label: str
    raw_completion: str


@dataclass(frozen=True)
class RemoteTeacherConfig:
    endpoint: str
    cache_dir: str | Path
    auth_env: str = "TEACHER_API_TOKEN"
    max_parallel: int = 4
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_tokens: int = 256

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def build_prompt(template: PromptTemplate, x: str) -> str:
    """Render the few-shot prompt for input ``x``.

    Grammar (documented in docs/prompt_grammar.md, golden fixture under
    tests/fixtures/): preamble, blank line, each demonstration as three
    marker-prefixed lines followed by a blank line, then the query input and
    a bare rationale marker inviting the completion.
    """
    if not x:
        raise ValueError("x must be nonempty")
    parts = [template.preamble, ""]
    for demo_x, demo_r, demo_y in template.demonstrations:
        parts += [
            f"{template.input_marker} {demo_x}",
            f"{template.rationale_marker} {demo_r}",
            f"{template.label_marker} {demo_y}",
            "",
        ]
    parts += [f"{template.input_marker} {x}", template.rationale_marker]
    return "\n".join(parts)


def parse_completion(text: str, template: PromptTemplate) -> TeacherOutput:
    """Split a completion into rationale (before the label marker) and label.

    The label is the first line after the first label marker, whitespace-
    collapsed and lowercased so it can be compared against student output
    from the same normalizing tokenizer.
    """
    marker = template.label_marker
    if marker not in text:
        raise ParseFailure(f"no label marker {marker!r} in completion")
    before, after = text.split(marker, 1)
    label = normalize(after.split("\n", 1)[0])
    if not label:
        raise ParseFailure("label empty after marker")
    return TeacherOutput(
        rationale=before.strip(), label=label, raw_completion=text
    )


def render_completion(output: TeacherOutput, template: PromptTemplate) -> str:
    """Inverse of parse_completion for outputs whose fields are marker-free."""
    return f"{output.rationale}\n{template.label_marker} {output.label}"


# ---------------------------------------------------------------------------
# rule-based oracle


def _unit_hash(seed: int, x: str, salt: str = "") -> float:
    """Stable per-(seed, input) uniform draw in [0, 1); process-independent."""
    digest = hashlib.sha256(f"{seed}:{salt}:{x}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def _corrupt_arithmetic(label: str, seed: int, x: str) -> str:
    offset = 1 + int(_unit_hash(seed, x, "offset") * 5)
    return str(int(label) + offset)


def _corrupt_entailment(label: str, seed: int, x: str) -> str:
    others = [c for c in ("entailment", "contradiction", "neutral") if c != label]
    return others[int(_unit_hash(seed, x, "offset") * len(others))]


def oracle_teach(task: str, x: str, noise_rate: float = 0.0, seed: int = 0) -> TeacherOutput:
    """Rule-based teacher for the synthetic tasks.

    With probability ``noise_rate`` (decided per input by a stable hash, so
    repeated calls agree) the label is replaced with a wrong value and the
    rationale is truncated after its first step: a corrupted teacher tends to
    start reasoning correctly and then slip, so the early chain stays clean.
    """
    if not 0.0 <= noise_rate < 1.0:
        raise ValueError(f"noise_rate must be in [0, 1), got {noise_rate}")
    try:
        if task == "arithmetic":
            steps, label = solve_arithmetic(x)
        elif task == "entailment":
            rationale_text, label = solve_entailment(x)
            steps = rationale_text.split(" ; ")
        else:
            raise ValueError(f"unknown task {task!r}")
    except ValueError as exc:
        raise UnparsableInput(str(exc)) from None

    if noise_rate > 0.0 and _unit_hash(seed, x, "corrupt") < noise_rate:
        steps = steps[:1]
        if task == "arithmetic":
            label = _corrupt_arithmetic(label, seed, x)
        else:
            label = _corrupt_entailment(label, seed, x)
    rationale = format_rationale(steps)
    return TeacherOutput(
        rationale=rationale,
        label=label,
        raw_completion=f"{rationale}\nA: {label}",
    )


def annotate_with_oracle(
    dataset: Dataset, task: str, noise_rate: float = 0.0, seed: int = 0
) -> Dataset:
    """New dataset with teacher fields filled by oracle_teach; gold untouched."""
    annotated = []
    for ex in dataset.examples:
        out = oracle_teach(task, ex.input, noise_rate, seed)
        annotated.append(
            replace(ex, teacher_label=out.label, teacher_rationale=out.rationale)
        )
    return Dataset(dataset.name, annotated, dataset.split)


# ---------------------------------------------------------------------------
# remote teacher


def cache_key(template: PromptTemplate, x: str) -> str:
    """sha256 over the full template serialization plus the input.

    Including every template byte means editing a demonstration invalidates
    previously cached extractions instead of silently reusing them.
    """
    material = json.dumps(
        {
            "preamble": template.preamble,
            "demonstrations": template.demonstrations,
            "markers": [
                template.input_marker,
                template.rationale_marker,
                template.label_marker,
            ],
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode() + b"\x00" + x.encode()).hexdigest()


def _cache_path(config: RemoteTeacherConfig, key: str) -> Path:
    return Path(config.cache_dir) / key


def _cache_write(config: RemoteTeacherConfig, key: str, payload: bytes) -> None:
    directory = Path(config.cache_dir)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = directory / f".tmp-{key}-{uuid.uuid4().hex}"
    tmp.write_bytes(payload)
    os.replace(tmp, directory / key)


def _fetch_completion(config: RemoteTeacherConfig, prompt: str, token: str) -> str:
    """One POST with retries; returns the completion text."""
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    body = {"prompt": prompt, "max_tokens": config.max_tokens, "temperature": 0}
    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                config.endpoint, json=body, headers=headers, timeout=config.timeout
            )
            if resp.status_code != 200:
                last_error = f"HTTP {resp.status_code}"
                continue
            payload = resp.json()
            if "completion" not in payload:
                last_error = "response missing 'completion'"
                continue
            return str(payload["completion"])
        except (requests.RequestException, ValueError) as exc:
            last_error = str(exc)
    raise TransportError(
        f"giving up after {config.max_retries + 1} attempts: {last_error}"
    )


def remote_teach(
    config: RemoteTeacherConfig,
    template: PromptTemplate,
    inputs: list[str],
) -> list[tuple[str, TeacherOutput | Exception]]:
    """Teach a batch of inputs via the remote endpoint.

    Results are positionally aligned with ``inputs``. Cached completions are
    reused byte-for-byte; uncached inputs are fetched with bounded
    parallelism, one request per unique input. A failed item carries its
    TransportError/ParseFailure in place of an output; the batch continues.
    """
    unique = list(dict.fromkeys(inputs))
    keys = {x: cache_key(template, x) for x in unique}
    misses = [x for x in unique if not _cache_path(config, keys[x]).exists()]

    token = os.environ.get(config.auth_env, "")
    if misses and not token:
        raise AuthMissing(
            f"{len(misses)} inputs uncached and ${config.auth_env} is unset"
        )

    failures: dict[str, Exception] = {}
    if misses:
        def fetch(x: str) -> None:
            try:
                completion = _fetch_completion(config, build_prompt(template, x), token)
                _cache_write(config, keys[x], completion.encode())
            except TransportError as exc:
                log.warning("teacher request failed for %r: %s", x, exc)
                failures[x] = exc

        with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
            list(pool.map(fetch, misses))

    results: list[tuple[str, TeacherOutput | Exception]] = []
    for x in inputs:
        if x in failures:
            results.append((x, failures[x]))
            continue
        raw = _cache_path(config, keys[x]).read_bytes().decode()
        try:
            results.append((x, parse_completion(raw, template)))
        except ParseFailure as exc:
            log.warning("unparsable completion for %r: %s", x, exc)
            results.append((x, exc))
    return results


def annotate_with_remote(
    dataset: Dataset, config: RemoteTeacherConfig, template: PromptTemplate
) -> Dataset:
    """Fill teacher fields from the remote teacher, dropping failed examples.

    Order is preserved for every example that parsed; drops are logged.
    """
    results = remote_teach(config, template, [ex.input for ex in dataset.examples])
    annotated = []
    for ex, (_, out) in zip(dataset.examples, results):
        if isinstance(out, Exception):
            log.warning("dropping example %r: %s", ex.input, out)
            continue
        annotated.append(
            replace(ex, teacher_label=out.label, teacher_rationale=out.rationale)
        )
    return Dataset(dataset.name, annotated, dataset.split)


# Worked demonstrations for the synthetic tasks, derived from the task rules
# so prompt and oracle can never disagree.
def _arithmetic_demo(x: str) -> tuple[str, str, str]:
    steps, label = solve_arithmetic(x)
    return (x, format_rationale(steps), label)


def _entailment_demo(x: str) -> tuple[str, str, str]:
    rationale, label = solve_entailment(x)
    return (x, rationale, label)


ARITHMETIC_TEMPLATE = PromptTemplate(
    preamble=(
        "Solve each expression one operation at a time, multiplications first, "
        "then give the final value."
    ),
    demonstrations=(
        _arithmetic_demo("7 − 2 × 3"),
        _arithmetic_demo("4 + 5 × 2"),
        _arithmetic_demo("9 − 3 − 1"),
    ),
)

ENTAILMENT_TEMPLATE = PromptTemplate(
    preamble=(
        "Decide whether the hypothesis follows from the premise: answer "
        "entailment, contradiction, or neutral, citing the deciding fact."
    ),
    demonstrations=(
        _entailment_demo("premise : the box is red . hypothesis : the box is blue ."),
        _entailment_demo("premise : the cat is big . hypothesis : the cat is big ."),
        _entailment_demo("premise : the car is metal . hypothesis : the car is tiny ."),
    ),
)

TEMPLATES = {"arithmetic": ARITHMETIC_TEMPLATE, "entailment": ENTAILMENT_TEMPLATE}
