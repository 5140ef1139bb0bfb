"""Vocabulary layout, prompt templates, and score-string rendering.

The vocabulary has a fixed reserved layout so every dataset/checkpoint pair
agrees on where the special machinery lives:

    0..3    <pad> <bos> <eos> <unk>
    4..15   score characters "-.0123456789" (one token per character)
    16..31  emotion label slots <label_0> .. <label_15>
    32..    prompt words, then <filler_k> padding up to vocab_size

Prompt templates are plain text with two placeholders: {PSEUDO} marks where
the pseudo tokens are injected and {TASK} where the task phrase goes, e.g.

    utterance : {PSEUDO} question {TASK} answer :

which yields the wrapped order [prefix; pseudo; suffix; task-phrase+tail].
Sentiment scores are rendered on a 0.1 grid as fixed-format strings
("-1.4", "0.0", "2.7") and decoded character-token by character-token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from egmf.errors import ConfigError, VocabularyError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SCORE_CHARS = "-.0123456789"
SCORE_BASE = 4
LABEL_BASE = 16
MAX_LABELS = 16
WORD_BASE = 32

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

DEFAULT_TEMPLATE = "utterance : {PSEUDO} question {TASK} answer :"
TASK_PHRASES = {
    "classification": "name the emotion",
    "regression": "give the sentiment score",
}

# words any default prompt can use; kept small and stable so vocabularies
# built by different runs agree token-for-token
DEFAULT_PROMPT_WORDS = (
    "utterance : question answer name the emotion give sentiment score "
    "speaker says of is what a an and"
).split()


class Vocabulary:
    def __init__(self, tokens: list):
        if len(tokens) < WORD_BASE:
            raise VocabularyError(
                f"vocabulary needs at least {WORD_BASE} entries, got {len(tokens)}"
            )
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate token strings in vocabulary")
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise VocabularyError(f"ids 0..3 must be {SPECIAL_TOKENS}")
        if "".join(tokens[SCORE_BASE : SCORE_BASE + 12]) != SCORE_CHARS:
            raise VocabularyError(f"ids 4..15 must be the characters {SCORE_CHARS!r}")
        for k in range(MAX_LABELS):
            if tokens[LABEL_BASE + k] != f"<label_{k}>":
                raise VocabularyError(f"id {LABEL_BASE + k} must be <label_{k}>")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, vocab_size: int = 512, words=()) -> "Vocabulary":
        tokens = list(SPECIAL_TOKENS)
        tokens.extend(SCORE_CHARS)
        tokens.extend(f"<label_{k}>" for k in range(MAX_LABELS))
        seen = set(tokens)
        for w in list(DEFAULT_PROMPT_WORDS) + list(words):
            if w not in seen:
                tokens.append(w)
                seen.add(w)
        if len(tokens) > vocab_size:
            raise VocabularyError(
                f"{len(tokens)} tokens do not fit in vocab_size={vocab_size}"
            )
        tokens.extend(f"<filler_{k}>" for k in range(vocab_size - len(tokens)))
        return cls(tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens)

    def token_to_id(self, tok: str) -> int:
        if tok not in self._ids:
            raise VocabularyError(f"unknown token {tok!r}")
        return self._ids[tok]

    def id_to_token(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise VocabularyError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[i]

    def encode_words(self, words) -> list:
        return [self._ids.get(w, UNK_ID) for w in words]

    def label_token(self, label: int) -> int:
        if not 0 <= label < MAX_LABELS:
            raise VocabularyError(
                f"label {label} outside the reserved range 0..{MAX_LABELS - 1}"
            )
        return LABEL_BASE + label

    def label_from_token(self, token_id: int) -> int:
        if not LABEL_BASE <= token_id < LABEL_BASE + MAX_LABELS:
            raise VocabularyError(f"token id {token_id} is not a label token")
        return token_id - LABEL_BASE

    def score_char_id(self, ch: str) -> int:
        idx = SCORE_CHARS.find(ch)
        if idx < 0:
            raise VocabularyError(f"character {ch!r} is not a score character")
        return SCORE_BASE + idx

    def score_string_ids(self, text: str) -> list:
        return [self.score_char_id(c) for c in text]

    def decode_score_ids(self, ids) -> str:
        chars = []
        for i in ids:
            if not SCORE_BASE <= i < SCORE_BASE + 12:
                raise VocabularyError(f"token id {i} is not a score character")
            chars.append(SCORE_CHARS[i - SCORE_BASE])
        return "".join(chars)


def render_score(x: float) -> str:
    """Fixed one-decimal rendering used for both training targets and output."""
    return f"{float(x):.1f}"


def parse_score(text: str) -> float:
    """Inverse of render_score; raises ValueError on malformed strings."""
    return float(text)


@dataclass
class TaskPrompt:
    task: str
    prefix_ids: list
    suffix_ids: list
    task_ids: list
    label_token_map: dict = field(default_factory=dict)
    score_range: tuple | None = None
    score_grid: float = 0.1

    @property
    def label_token_ids(self) -> list:
        return [self.label_token_map[k] for k in sorted(self.label_token_map)]

    @property
    def prompt_length(self) -> int:
        return len(self.prefix_ids) + len(self.suffix_ids) + len(self.task_ids)


def parse_template(text: str):
    """Split template words into (prefix, suffix, tail) around the placeholders."""
    words = text.split()
    if words.count("{PSEUDO}") != 1 or words.count("{TASK}") != 1:
        raise ConfigError("template needs exactly one {PSEUDO} and one {TASK}")
    p, t = words.index("{PSEUDO}"), words.index("{TASK}")
    if p > t:
        raise ConfigError("{PSEUDO} must come before {TASK} in the template")
    return words[:p], words[p + 1 : t], words[t + 1 :]


def build_task_prompt(
    vocab: Vocabulary,
    task: str,
    template_text: str = DEFAULT_TEMPLATE,
    n_labels: int | None = None,
    score_range: tuple | None = None,
    score_grid: float = 0.1,
) -> TaskPrompt:
    if task not in TASK_PHRASES:
        raise ConfigError(f"task must be one of {sorted(TASK_PHRASES)}, got {task!r}")
    prefix_w, suffix_w, tail_w = parse_template(template_text)
    task_w = TASK_PHRASES[task].split() + tail_w

    prompt = TaskPrompt(
        task=task,
        prefix_ids=[BOS_ID] + vocab.encode_words(prefix_w),
        suffix_ids=vocab.encode_words(suffix_w),
        task_ids=vocab.encode_words(task_w),
    )
    if task == "classification":
        if not n_labels or n_labels < 2:
            raise ConfigError("classification prompt needs n_labels >= 2")
        prompt.label_token_map = {k: vocab.label_token(k) for k in range(n_labels)}
    else:
        if score_range is None:
            raise ConfigError("regression prompt needs a score range")
        lo, hi = float(score_range[0]), float(score_range[1])
        if lo >= hi:
            raise ConfigError(f"empty score range [{lo}, {hi}]")
        for edge in (lo, hi):
            steps = edge / score_grid
            if abs(steps - round(steps)) > 1e-9:
                raise ConfigError(
                    f"score range edge {edge} not on the {score_grid} grid"
                )
        prompt.score_range = (lo, hi)
        prompt.score_grid = score_grid
    return prompt
