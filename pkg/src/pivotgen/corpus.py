"""Deterministic synthetic corpus: one semantic world, five surface domains.

A Scene is a tuple (agent, action, object, modifier) drawn from fixed
inventories. It is rendered into:

* a pivot language L0 (fixed template with function words),
* three toy languages L1..L3, each a letter-substitution cipher of L0
  plus a fixed word-order permutation (so cross-lingual ground truth is
  exact and surface vocabularies are disjoint), and
* a vision item: the scene's multi-hot attribute vector pushed through
  one frozen random projection, with per-frame Gaussian jitter.

Training pairs are pivot-centric: D1 = (vision, L0), D2 = (L0, L1),
D3 = (L0, L2), D4 = (L0, L3), built on four disjoint scene subsets, so
no two non-pivot domains (and no vision/non-pivot combination) are ever
paired. Held-out test scenes are rendered into every domain.

Everything is a pure function of (seed, size parameters).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AGENTS = (
    "cat", "dog", "bird", "fox", "bear", "owl",
    "horse", "sheep", "robot", "child", "man", "woman",
)
ACTIONS = ("sees", "chases", "holds", "finds", "likes", "paints", "draws", "carries")
OBJECTS = (
    "ball", "box", "tree", "car", "book", "cup",
    "door", "stone", "lamp", "kite", "drum", "shell",
)
MODIFIERS = ("red", "blue", "small", "large", "old", "shiny")
FUNCTION_WORDS = ("the",)

LANGS = ("L0", "L1", "L2", "L3")
CIPHER_SHIFT = {"L0": 0, "L1": 7, "L2": 13, "L3": 19}

# Surface word order per language, as positions into the L0 template
# [the, agent, action, the, modifier, object].
WORD_ORDER = {
    "L0": (0, 1, 2, 3, 4, 5),
    "L1": (0, 1, 3, 4, 5, 2),
    "L2": (2, 0, 1, 3, 4, 5),
    "L3": (3, 4, 5, 0, 1, 2),
}

PAD_ID = 0
EOS_ID = 1
MASK_ID = 2
BOS_IDS = {"L0": 3, "L1": 4, "L2": 5, "L3": 6}
N_SPECIALS = 7

ATTR_DIM = len(AGENTS) + len(ACTIONS) + len(OBJECTS) + len(MODIFIERS)
SCENE_SPACE = len(AGENTS) * len(ACTIONS) * len(OBJECTS) * len(MODIFIERS)


def cipher_word(word: str, lang: str) -> str:
    """Letter-rotate a pivot word into one of the toy languages."""
    shift = CIPHER_SHIFT[lang]
    if shift == 0:
        return word
    return "".join(chr((ord(c) - 97 + shift) % 26 + 97) for c in word)


@dataclass(frozen=True)
class Scene:
    agent_id: int
    action_id: int
    object_id: int
    modifier_id: int

    def __post_init__(self):
        bounds = (len(AGENTS), len(ACTIONS), len(OBJECTS), len(MODIFIERS))
        ids = (self.agent_id, self.action_id, self.object_id, self.modifier_id)
        for value, bound in zip(ids, bounds):
            if not 0 <= value < bound:
                raise ValueError(f"scene id {value} outside inventory of size {bound}")

    def key(self) -> int:
        """Canonical flat index; stable scene_id across the corpus files."""
        return ((self.agent_id * len(ACTIONS) + self.action_id) * len(OBJECTS) + self.object_id) * len(
            MODIFIERS
        ) + self.modifier_id

    @staticmethod
    def from_key(key: int) -> "Scene":
        key, modifier_id = divmod(key, len(MODIFIERS))
        key, object_id = divmod(key, len(OBJECTS))
        agent_id, action_id = divmod(key, len(ACTIONS))
        return Scene(agent_id, action_id, object_id, modifier_id)


@dataclass(frozen=True)
class TokenSequence:
    lang: str
    ids: tuple[int, ...]

    def surface(self) -> tuple[int, ...]:
        return tuple(i for i in self.ids if i >= N_SPECIALS)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class VisionItem:
    frames: np.ndarray  # (F, v_dim) float32

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"vision item needs (F, v_dim) frames, got {self.frames.shape}")


class Vocab:
    """Shared multilingual vocabulary: specials first, then one disjoint
    surface block per language (line index = token id in vocab.txt)."""

    def __init__(self):
        tokens = ["<pad>", "<eos>", "<mask>", "<L0>", "<L1>", "<L2>", "<L3>"]
        base_words = FUNCTION_WORDS + AGENTS + ACTIONS + MODIFIERS + OBJECTS
        self.lang_ranges: dict[str, range] = {}
        for lang in LANGS:
            start = len(tokens)
            tokens.extend(cipher_word(w, lang) for w in base_words)
            self.lang_ranges[lang] = range(start, len(tokens))
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("cipher collision: surface vocabularies are not disjoint")
        self._n_base = len(base_words)

    def __len__(self) -> int:
        return len(self.tokens)

    def lang_of(self, token_id: int) -> str | None:
        for lang, rng in self.lang_ranges.items():
            if token_id in rng:
                return lang
        return None

    def translate_id(self, token_id: int, target: str) -> int:
        """Map a surface id to the same base word in another language."""
        src = self.lang_of(token_id)
        if src is None:
            raise ValueError(f"token id {token_id} is not a surface token")
        return self.lang_ranges[target].start + (token_id - self.lang_ranges[src].start)

    def encode(self, text: str, lang: str) -> TokenSequence:
        ids = []
        for word in text.split():
            tid = self.index.get(word)
            if tid is None or tid not in self.lang_ranges[lang]:
                raise ValueError(f"unknown {lang} token: {word!r}")
            ids.append(tid)
        return TokenSequence(lang, tuple(ids) + (EOS_ID,))

    def decode(self, seq: TokenSequence) -> str:
        return " ".join(self.tokens[i] for i in seq.surface())


VOCAB = Vocab()
VOCAB_SIZE = len(VOCAB)


def gen_scenes(seed: int, n: int) -> list[Scene]:
    """First n of a seed-shuffled enumeration of the full scene space."""
    if n < 4:
        raise ValueError(f"need at least 4 scenes for the four pair sets, requested {n}")
    if n > SCENE_SPACE:
        raise ValueError(f"requested {n} scenes but the inventory product is {SCENE_SPACE}")
    keys = np.arange(SCENE_SPACE)
    np.random.default_rng(seed).shuffle(keys)
    return [Scene.from_key(int(k)) for k in keys[:n]]


def render_text(scene: Scene, lang: str) -> TokenSequence:
    """Deterministic surface rendering: cipher of the pivot template in
    the language's fixed word order, terminated by EOS."""
    pivot_words = [
        "the",
        AGENTS[scene.agent_id],
        ACTIONS[scene.action_id],
        "the",
        MODIFIERS[scene.modifier_id],
        OBJECTS[scene.object_id],
    ]
    ordered = [pivot_words[i] for i in WORD_ORDER[lang]]
    ids = tuple(VOCAB.index[cipher_word(w, lang)] for w in ordered)
    return TokenSequence(lang, ids + (EOS_ID,))


def scene_attributes(scene: Scene) -> np.ndarray:
    """Multi-hot attribute vector over the four inventories."""
    vec = np.zeros(ATTR_DIM, dtype=np.float32)
    offset = 0
    for value, bound in (
        (scene.agent_id, len(AGENTS)),
        (scene.action_id, len(ACTIONS)),
        (scene.object_id, len(OBJECTS)),
        (scene.modifier_id, len(MODIFIERS)),
    ):
        vec[offset + value] = 1.0
        offset += bound
    return vec


class World:
    """Holds the frozen vision projection; rendering goes through here."""

    def __init__(self, seed: int, v_dim: int = 64):
        self.seed = seed
        self.v_dim = v_dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
        self.projection = rng.normal(0.0, 0.5, size=(ATTR_DIM, v_dim)).astype(np.float32)

    def render_vision(self, scene: Scene, frames: int, jitter: float, seed: int) -> VisionItem:
        if frames < 1:
            raise ValueError(f"frames must be >= 1, got {frames}")
        if jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {jitter}")
        base = scene_attributes(scene) @ self.projection
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, jitter, size=(frames, self.v_dim)) if jitter > 0 else 0.0
        stack = np.broadcast_to(base, (frames, self.v_dim)) + noise
        return VisionItem(stack.astype(np.float32))


def mask_tokens(
    seq: TokenSequence,
    r: float,
    seed: int,
    probs: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> TokenSequence:
    """BERT-style corruption of surface tokens at rate r percent.

    A selected token becomes MASK / a random same-language surface token
    / itself with the given probabilities. EOS (and any special) is
    never selected.
    """
    if not 0 <= r <= 100:
        raise ValueError(f"mask rate must be in [0, 100], got {r}")
    if r == 0:
        return seq
    rng = np.random.default_rng(seed)
    lang_range = VOCAB.lang_ranges[seq.lang]
    out = []
    for tid in seq.ids:
        if tid < N_SPECIALS or rng.random() >= r / 100.0:
            out.append(tid)
            continue
        roll = rng.random()
        if roll < probs[0]:
            out.append(MASK_ID)
        elif roll < probs[0] + probs[1]:
            out.append(int(rng.integers(lang_range.start, lang_range.stop)))
        else:
            out.append(tid)
    return TokenSequence(seq.lang, tuple(out))


@dataclass(frozen=True)
class CorpusParams:
    scenes: int = 2000
    test: int = 200
    frames: int = 8
    v_dim: int = 64
    jitter: float = 0.05
    max_len: int = 24
    seed: int = 1


@dataclass
class PairSet:
    name: str
    a_domain: str
    b_domain: str
    scene_ids: list[int]
    a_items: list  # VisionItem for D1, TokenSequence otherwise
    b_items: list[TokenSequence]

    def __len__(self) -> int:
        return len(self.scene_ids)


@dataclass
class TestSplit:
    scene_ids: list[int]
    vision: list[VisionItem]
    text: dict[str, list[TokenSequence]] = field(default_factory=dict)


@dataclass
class Corpus:
    params: CorpusParams
    pairsets: dict[str, PairSet]
    test: TestSplit

    @property
    def vocab(self) -> Vocab:
        return VOCAB


PAIRSET_LANG = {"D1": "L0", "D2": "L1", "D3": "L2", "D4": "L3"}


def build_pairsets(scenes: list[Scene], params: CorpusParams, world: World) -> tuple[dict[str, PairSet], TestSplit]:
    """Partition scenes into test + four equal disjoint training subsets
    and render the pivot-centric pairs."""
    if len(scenes) < 8 * params.test:
        raise ValueError(f"{len(scenes)} scenes cannot support a test split of {params.test} (need >= 8x)")
    test_scenes = scenes[: params.test]
    train = scenes[params.test :]
    per_set = len(train) // 4

    pairsets: dict[str, PairSet] = {}
    for i, name in enumerate(("D1", "D2", "D3", "D4")):
        subset = train[i * per_set : (i + 1) * per_set]
        ids = [s.key() for s in subset]
        pivot = [render_text(s, "L0") for s in subset]
        if name == "D1":
            a_items: list = [
                world.render_vision(s, params.frames, params.jitter, frame_seed(params.seed, s, "train"))
                for s in subset
            ]
            pairsets[name] = PairSet(name, "vision", "L0", ids, a_items, pivot)
        else:
            lang = PAIRSET_LANG[name]
            other = [render_text(s, lang) for s in subset]
            pairsets[name] = PairSet(name, "L0", lang, ids, pivot, other)

    test = TestSplit(
        scene_ids=[s.key() for s in test_scenes],
        vision=[
            world.render_vision(s, params.frames, params.jitter, frame_seed(params.seed, s, "test"))
            for s in test_scenes
        ],
        text={lang: [render_text(s, lang) for s in test_scenes] for lang in LANGS},
    )
    return pairsets, test


def frame_seed(corpus_seed: int, scene: Scene, split: str) -> int:
    salt = 1 if split == "train" else 2
    return int(np.random.SeedSequence([corpus_seed, salt, scene.key()]).generate_state(1)[0])


def build_corpus(params: CorpusParams) -> Corpus:
    world = World(params.seed, params.v_dim)
    scenes = gen_scenes(params.seed, params.scenes)
    pairsets, test = build_pairsets(scenes, params, world)
    return Corpus(params, pairsets, test)


# -- file layout -----------------------------------------------------------------
#
# D1.jsonl .. D4.jsonl   one pair per line:
#     {scene_id, a_domain, b_domain, a_tokens | a_frames, b_tokens}
# vocab.txt              one token per line, line index = id
# test_vision.jsonl      {scene_id, frames}
# test_L0.jsonl .. test_L3.jsonl   {scene_id, tokens}
# meta.json              the CorpusParams used


def _frames_to_json(item: VisionItem) -> list[list[float]]:
    return [[float(x) for x in row] for row in item.frames]


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ps in corpus.pairsets.items():
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for i, sid in enumerate(ps.scene_ids):
                rec: dict = {"scene_id": sid, "a_domain": ps.a_domain, "b_domain": ps.b_domain}
                if ps.a_domain == "vision":
                    rec["a_frames"] = _frames_to_json(ps.a_items[i])
                else:
                    rec["a_tokens"] = list(ps.a_items[i].ids)
                rec["b_tokens"] = list(ps.b_items[i].ids)
                fh.write(json.dumps(rec) + "\n")
    with open(out / "vocab.txt", "w", encoding="utf-8") as fh:
        for token in VOCAB.tokens:
            fh.write(token + "\n")
    with open(out / "test_vision.jsonl", "w", encoding="utf-8") as fh:
        for sid, item in zip(corpus.test.scene_ids, corpus.test.vision):
            fh.write(json.dumps({"scene_id": sid, "frames": _frames_to_json(item)}) + "\n")
    for lang in LANGS:
        with open(out / f"test_{lang}.jsonl", "w", encoding="utf-8") as fh:
            for sid, seq in zip(corpus.test.scene_ids, corpus.test.text[lang]):
                fh.write(json.dumps({"scene_id": sid, "tokens": list(seq.ids)}) + "\n")
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(vars(corpus.params) | {"format": "pivotgen-corpus-v1"}, fh, indent=2)
        fh.write("\n")


def load_corpus(in_dir: str | Path) -> Corpus:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    meta.pop("format", None)
    params = CorpusParams(**meta)

    stored = (src / "vocab.txt").read_text(encoding="utf-8").splitlines()
    if tuple(stored) != VOCAB.tokens:
        raise ValueError(f"vocab.txt in {src} does not match this build's vocabulary")

    pairsets: dict[str, PairSet] = {}
    for name in ("D1", "D2", "D3", "D4"):
        ids, a_items, b_items = [], [], []
        a_domain = b_domain = None
        with open(src / f"{name}.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                a_domain, b_domain = rec["a_domain"], rec["b_domain"]
                ids.append(rec["scene_id"])
                if a_domain == "vision":
                    a_items.append(VisionItem(np.asarray(rec["a_frames"], dtype=np.float32)))
                else:
                    a_items.append(TokenSequence(a_domain, tuple(rec["a_tokens"])))
                b_items.append(TokenSequence(b_domain, tuple(rec["b_tokens"])))
        if a_domain is None:
            raise ValueError(f"empty pair file: {name}.jsonl")
        pairsets[name] = PairSet(name, a_domain, b_domain, ids, a_items, b_items)

    test = TestSplit(scene_ids=[], vision=[])
    with open(src / "test_vision.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            test.scene_ids.append(rec["scene_id"])
            test.vision.append(VisionItem(np.asarray(rec["frames"], dtype=np.float32)))
    for lang in LANGS:
        seqs = []
        with open(src / f"test_{lang}.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                seqs.append(TokenSequence(lang, tuple(rec["tokens"])))
        test.text[lang] = seqs
    return Corpus(params, pairsets, test)
