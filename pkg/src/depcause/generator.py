"""Templated synthetic corpus generator for cause/effect tagging.

Sentences come from a fixed inventory of active and passive templates whose
dependency scaffolds are hand-authored, so every generated tree is correct by
construction and no external parser is involved. Slots are filled from a
medical-flavored phrase lexicon; multi-word phrases use a head chain (each
word attaches to the next, the last word attaches to the template's anchor).

The phrase lists are illustrative vocabulary for a toy corpus, not clinical
statements.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import AnnotatedSentence, CorpusError

WORD = "word"
SLOT = "slot"


@dataclass(frozen=True)
class Unit:
    """One template position: a literal scaffold word or a phrase slot."""

    kind: str
    head: int  # unit index, -1 for the root unit
    deprel: str
    text: str = ""
    pos: str = ""
    role: str = ""

    def __post_init__(self):
        if self.kind == WORD:
            if not self.text or not self.pos:
                raise ValueError("word unit needs text and pos")
        elif self.kind == SLOT:
            if self.role not in ("cause", "effect"):
                raise ValueError(f"slot role must be cause or effect, got {self.role!r}")
        else:
            raise ValueError(f"unknown unit kind {self.kind!r}")


@dataclass(frozen=True)
class Template:
    name: str
    voice: str
    units: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if self.voice not in ("active", "passive"):
            raise ValueError(f"voice must be active or passive, got {self.voice!r}")
        roles = [u.role for u in self.units if u.kind == SLOT]
        if sorted(roles) != ["cause", "effect"]:
            raise ValueError(f"template {self.name!r} must have exactly one cause "
                             f"slot and one effect slot, got {roles}")
        roots = [i for i, u in enumerate(self.units) if u.head == -1]
        if len(roots) != 1:
            raise ValueError(f"template {self.name!r} must have exactly one root unit")
        n = len(self.units)
        for i, u in enumerate(self.units):
            if u.head != -1 and not (0 <= u.head < n and u.head != i):
                raise ValueError(f"template {self.name!r}: unit {i} has bad head {u.head}")
        for i in range(n):  # every unit must reach the root
            seen, j = set(), i
            while self.units[j].head != -1:
                if j in seen:
                    raise ValueError(f"template {self.name!r} has a head cycle at unit {i}")
                seen.add(j)
                j = self.units[j].head

    @property
    def pattern(self) -> str:
        return " ".join(u.text if u.kind == WORD else u.role.upper() for u in self.units)


def _w(text, pos, head, deprel):
    return Unit(kind=WORD, head=head, deprel=deprel, text=text, pos=pos)


def _s(role, head, deprel):
    return Unit(kind=SLOT, head=head, deprel=deprel, role=role)


DEFAULT_TEMPLATES = (
    Template("lead_to", "active", (
        _s("cause", 2, "nsubj"), _w("can", "AUX", 2, "aux"),
        _w("lead", "VERB", -1, "root"), _w("to", "ADP", 4, "case"),
        _s("effect", 2, "obl"))),
    Template("causes", "active", (
        _s("cause", 1, "nsubj"), _w("causes", "VERB", -1, "root"),
        _s("effect", 1, "obj"))),
    Template("result_in", "active", (
        _s("cause", 2, "nsubj"), _w("can", "AUX", 2, "aux"),
        _w("result", "VERB", -1, "root"), _w("in", "ADP", 4, "case"),
        _s("effect", 2, "obl"))),
    Template("triggers", "active", (
        _s("cause", 2, "nsubj"), _w("often", "ADV", 2, "advmod"),
        _w("triggers", "VERB", -1, "root"), _s("effect", 2, "obj"))),
    Template("risk_of", "active", (
        _s("cause", 1, "nsubj"), _w("increases", "VERB", -1, "root"),
        _w("the", "DET", 3, "det"), _w("risk", "NOUN", 1, "obj"),
        _w("of", "ADP", 5, "case"), _s("effect", 3, "nmod"))),
    Template("contribute_to", "active", (
        _s("cause", 2, "nsubj"), _w("may", "AUX", 2, "aux"),
        _w("contribute", "VERB", -1, "root"), _w("to", "ADP", 4, "case"),
        _s("effect", 2, "obl"))),
    Template("caused_by", "passive", (
        _s("effect", 2, "nsubj:pass"), _w("is", "AUX", 2, "aux:pass"),
        _w("caused", "VERB", -1, "root"), _w("by", "ADP", 4, "case"),
        _s("cause", 2, "obl"))),
    Template("triggered_by", "passive", (
        _s("effect", 3, "nsubj:pass"), _w("is", "AUX", 3, "aux:pass"),
        _w("often", "ADV", 3, "advmod"), _w("triggered", "VERB", -1, "root"),
        _w("by", "ADP", 5, "case"), _s("cause", 3, "obl"))),
    Template("brought_on_by", "passive", (
        _s("effect", 3, "nsubj:pass"), _w("can", "AUX", 3, "aux"),
        _w("be", "AUX", 3, "aux:pass"), _w("brought", "VERB", -1, "root"),
        _w("on", "ADP", 3, "compound:prt"), _w("by", "ADP", 6, "case"),
        _s("cause", 3, "obl"))),
    Template("linked_to", "passive", (
        _s("effect", 2, "nsubj:pass"), _w("is", "AUX", 2, "aux:pass"),
        _w("linked", "VERB", -1, "root"), _w("to", "ADP", 4, "case"),
        _s("cause", 2, "obl"))),
)

_CAUSE_PHRASES = (
    (("diabetes", "NOUN"),),
    (("smoking", "NOUN"),),
    (("obesity", "NOUN"),),
    (("hypertension", "NOUN"),),
    (("high", "ADJ"), ("cholesterol", "NOUN")),
    (("chronic", "ADJ"), ("stress", "NOUN")),
    (("iron", "NOUN"), ("deficiency", "NOUN")),
    (("sleep", "NOUN"), ("deprivation", "NOUN")),
    (("air", "NOUN"), ("pollution", "NOUN")),
    (("poor", "ADJ"), ("diet", "NOUN")),
    (("gum", "NOUN"), ("disease", "NOUN")),
    (("tobacco", "NOUN"), ("use", "NOUN")),
    (("asbestos", "NOUN"), ("exposure", "NOUN")),
    (("radiation", "NOUN"), ("exposure", "NOUN")),
    (("insulin", "NOUN"), ("resistance", "NOUN")),
    (("calcium", "NOUN"), ("deficiency", "NOUN")),
    (("nerve", "NOUN"), ("damage", "NOUN")),
    (("food", "NOUN"), ("allergies", "NOUN")),
    (("thyroid", "NOUN"), ("dysfunction", "NOUN")),
    (("viral", "ADJ"), ("infections", "NOUN")),
    (("physical", "ADJ"), ("inactivity", "NOUN")),
    (("genetic", "ADJ"), ("mutations", "NOUN")),
    (("hormonal", "ADJ"), ("imbalance", "NOUN")),
    (("severe", "ADJ"), ("dehydration", "NOUN")),
    (("chronic", "ADJ"), ("inflammation", "NOUN")),
    (("untreated", "ADJ"), ("infections", "NOUN")),
    (("unmanaged", "ADJ"), ("hypertension", "NOUN")),
    (("blocked", "ADJ"), ("arteries", "NOUN")),
    (("antibiotic", "NOUN"), ("overuse", "NOUN")),
    (("vitamin", "NOUN"), ("d", "NOUN"), ("deficiency", "NOUN")),
    (("vitamin", "NOUN"), ("b12", "NOUN"), ("deficiency", "NOUN")),
    (("high", "ADJ"), ("blood", "NOUN"), ("pressure", "NOUN")),
    (("excessive", "ADJ"), ("alcohol", "NOUN"), ("consumption", "NOUN")),
    (("prolonged", "ADJ"), ("sun", "NOUN"), ("exposure", "NOUN")),
    (("repeated", "ADJ"), ("head", "NOUN"), ("trauma", "NOUN")),
    (("heavy", "ADJ"), ("metal", "NOUN"), ("poisoning", "NOUN")),
    (("low", "ADJ"), ("bone", "NOUN"), ("density", "NOUN")),
    (("a", "DET"), ("sedentary", "ADJ"), ("lifestyle", "NOUN")),
    (("persistent", "ADJ"), ("acid", "NOUN"), ("reflux", "NOUN")),
    (("chronic", "ADJ"), ("obstructive", "ADJ"), ("pulmonary", "ADJ"), ("disease", "NOUN")),
)

_EFFECT_PHRASES = (
    (("blindness", "NOUN"),),
    (("osteoporosis", "NOUN"),),
    (("stroke", "NOUN"),),
    (("anemia", "NOUN"),),
    (("depression", "NOUN"),),
    (("fatigue", "NOUN"),),
    (("lung", "NOUN"), ("cancer", "NOUN")),
    (("heart", "NOUN"), ("disease", "NOUN")),
    (("kidney", "NOUN"), ("failure", "NOUN")),
    (("liver", "NOUN"), ("damage", "NOUN")),
    (("memory", "NOUN"), ("loss", "NOUN")),
    (("hearing", "NOUN"), ("loss", "NOUN")),
    (("hair", "NOUN"), ("loss", "NOUN")),
    (("skin", "NOUN"), ("cancer", "NOUN")),
    (("bone", "NOUN"), ("fractures", "NOUN")),
    (("vision", "NOUN"), ("problems", "NOUN")),
    (("joint", "NOUN"), ("pain", "NOUN")),
    (("muscle", "NOUN"), ("weakness", "NOUN")),
    (("heart", "NOUN"), ("attacks", "NOUN")),
    (("tooth", "NOUN"), ("decay", "NOUN")),
    (("weight", "NOUN"), ("gain", "NOUN")),
    (("asthma", "NOUN"), ("attacks", "NOUN")),
    (("sleep", "NOUN"), ("disorders", "NOUN")),
    (("birth", "NOUN"), ("defects", "NOUN")),
    (("stomach", "NOUN"), ("ulcers", "NOUN")),
    (("skin", "NOUN"), ("rashes", "NOUN")),
    (("organ", "NOUN"), ("failure", "NOUN")),
    (("blood", "NOUN"), ("clots", "NOUN")),
    (("chronic", "ADJ"), ("pain", "NOUN")),
    (("cognitive", "ADJ"), ("decline", "NOUN")),
    (("respiratory", "ADJ"), ("failure", "NOUN")),
    (("digestive", "ADJ"), ("problems", "NOUN")),
    (("irregular", "ADJ"), ("heartbeat", "NOUN")),
    (("severe", "ADJ"), ("headaches", "NOUN")),
    (("premature", "ADJ"), ("aging", "NOUN")),
    (("chronic", "ADJ"), ("bronchitis", "NOUN")),
    (("high", "ADJ"), ("blood", "NOUN"), ("sugar", "NOUN")),
    (("low", "ADJ"), ("blood", "NOUN"), ("pressure", "NOUN")),
    (("type", "NOUN"), ("2", "NUM"), ("diabetes", "NOUN")),
    (("severe", "ADJ"), ("lower", "ADJ"), ("back", "NOUN"), ("pain", "NOUN")),
)


@dataclass(frozen=True)
class Lexicon:
    """Cause and effect phrase lists; each phrase is ((word, pos), ...)."""

    cause: tuple
    effect: tuple

    def __post_init__(self):
        for side, phrases in (("cause", self.cause), ("effect", self.effect)):
            if not phrases:
                raise ValueError(f"{side} phrase list is empty")
            seen = set()
            for phrase in phrases:
                if not phrase:
                    raise ValueError(f"{side} lexicon contains an empty phrase")
                words = tuple(w for w, _ in phrase)
                if words in seen:
                    raise ValueError(f"duplicate {side} phrase {' '.join(words)!r}")
                seen.add(words)
                for word, pos in phrase:
                    if not word or not pos:
                        raise ValueError(
                            f"{side} phrase {' '.join(words)!r} has a missing word or pos")


def default_lexicon() -> Lexicon:
    return Lexicon(cause=_CAUSE_PHRASES, effect=_EFFECT_PHRASES)


def instantiate(template: Template, cause, effect, sent_id: str) -> AnnotatedSentence:
    """Fill a template's slots with (word, pos) phrases.

    Phrase-internal heads chain forward; the last word carries the slot's
    dependency relation to the anchor unit. The sentence-initial token is
    capitalized.
    """
    tokens, pos_tags, heads, deprels = [], [], [], []
    unit_token = []  # token index that stands for each unit when it is a head
    spans = {}
    for unit in template.units:
        if unit.kind == WORD:
            unit_token.append(len(tokens))
            tokens.append(unit.text)
            pos_tags.append(unit.pos)
            heads.append(None)
            deprels.append(unit.deprel)
        else:
            phrase = cause if unit.role == "cause" else effect
            start = len(tokens)
            for k, (word, tag) in enumerate(phrase):
                tokens.append(word)
                pos_tags.append(tag)
                if k < len(phrase) - 1:
                    heads.append(start + k + 1)
                    deprels.append("compound")
                else:
                    heads.append(None)
                    deprels.append(unit.deprel)
            unit_token.append(len(tokens) - 1)
            spans[unit.role] = (start, len(tokens) - 1)
    for u, unit in enumerate(template.units):
        t = unit_token[u]
        heads[t] = -1 if unit.head == -1 else unit_token[unit.head]
    tokens[0] = tokens[0][:1].upper() + tokens[0][1:]
    return AnnotatedSentence(
        sent_id=sent_id, tokens=tokens, pos_tags=pos_tags, heads=heads,
        deprels=deprels, cause=spans["cause"], effect=spans["effect"])


def capacity(templates, lexicon: Lexicon) -> int:
    return len(templates) * len(lexicon.cause) * len(lexicon.effect)


def generate(n: int, seed: int = 0, templates=None, lexicon: Lexicon | None = None):
    """Sample n distinct annotated sentences.

    Voice is drawn 50/50, then a template within the voice, then one phrase
    per slot, all from a single seeded generator. Exact duplicates (same
    token sequence) are rejected and resampled.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    templates = DEFAULT_TEMPLATES if templates is None else tuple(templates)
    lexicon = default_lexicon() if lexicon is None else lexicon
    if not templates:
        raise ValueError("no templates")
    cap = capacity(templates, lexicon)
    if n > cap:
        raise ValueError(
            f"requested {n} sentences but templates and lexicon can produce "
            f"at most {cap} distinct ones")
    by_voice = {
        "active": [t for t in templates if t.voice == "active"],
        "passive": [t for t in templates if t.voice == "passive"],
    }
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    attempts, max_attempts = 0, 50 * n + 1000
    while len(out) < n:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(
                f"gave up after {max_attempts} draws with {len(out)} of {n} "
                f"distinct sentences; the lexicon is close to exhausted")
        voice = "active" if rng.random() < 0.5 else "passive"
        pool = by_voice[voice] or by_voice["passive" if voice == "active" else "active"]
        template = pool[int(rng.integers(len(pool)))]
        cause = lexicon.cause[int(rng.integers(len(lexicon.cause)))]
        effect = lexicon.effect[int(rng.integers(len(lexicon.effect)))]
        sentence = instantiate(template, cause, effect, f"gen-{len(out):05d}")
        if sentence.tokens in seen:
            continue
        sentence.validate()
        seen.add(sentence.tokens)
        out.append(sentence)
    return out


def identify_template(sentence: AnnotatedSentence, templates) -> Template:
    """Find the template a generated sentence came from, by re-expansion."""
    if sentence.cause is None or sentence.effect is None:
        raise CorpusError(f"sentence {sentence.sent_id!r} has no spans")
    # verbatim extraction is exact: instantiate re-capitalizes token 0 anyway
    cause = tuple((sentence.tokens[i], sentence.pos_tags[i])
                  for i in range(sentence.cause[0], sentence.cause[1] + 1))
    effect = tuple((sentence.tokens[i], sentence.pos_tags[i])
                   for i in range(sentence.effect[0], sentence.effect[1] + 1))
    for template in templates:
        candidate = instantiate(template, cause, effect, sentence.sent_id)
        if (candidate.tokens == sentence.tokens
                and candidate.heads == sentence.heads
                and candidate.cause == sentence.cause
                and candidate.effect == sentence.effect):
            return template
    raise CorpusError(f"sentence {sentence.sent_id!r} matches no template")


def corpus_manifest(sentences, seed: int, templates=None, lexicon=None) -> dict:
    """Describe a generated corpus: counts per template and voice, hashes."""
    templates = DEFAULT_TEMPLATES if templates is None else tuple(templates)
    lexicon = default_lexicon() if lexicon is None else lexicon
    template_counts = {t.name: 0 for t in templates}
    voice_counts = {"active": 0, "passive": 0}
    for s in sentences:
        t = identify_template(s, templates)
        template_counts[t.name] += 1
        voice_counts[t.voice] += 1
    return {
        "seed": seed,
        "sentences": len(sentences),
        "voice_counts": voice_counts,
        "template_counts": template_counts,
        "templates_sha256": _digest(templates_to_json(templates)),
        "lexicon_sha256": _digest(lexicon_to_json(lexicon)),
    }


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class ValidationReport:
    """Violation counts over a corpus; all zeros for generated data."""

    sentences: int = 0
    tree_violations: int = 0
    span_violations: int = 0
    pos_violations: int = 0
    bad_ids: tuple = ()

    @property
    def total_violations(self) -> int:
        return self.tree_violations + self.span_violations + self.pos_violations

    @property
    def ok(self) -> bool:
        return self.total_violations == 0

    def format_text(self) -> str:
        lines = [
            f"sentences        {self.sentences}",
            f"tree violations  {self.tree_violations}",
            f"span violations  {self.span_violations}",
            f"pos violations   {self.pos_violations}",
        ]
        if self.bad_ids:
            shown = ", ".join(self.bad_ids[:10])
            more = "" if len(self.bad_ids) <= 10 else f" (+{len(self.bad_ids) - 10} more)"
            lines.append(f"offending ids    {shown}{more}")
        return "\n".join(lines)


def validate_corpus(sentences) -> ValidationReport:
    """Check tree validity, span sanity, and POS coverage for each sentence."""
    report = ValidationReport(sentences=len(sentences))
    bad = []
    for s in sentences:
        n = len(s.tokens)
        offending = False

        if len(s.pos_tags) != n or any(not isinstance(p, str) or not p for p in s.pos_tags):
            report.pos_violations += 1
            offending = True

        span_ok = True
        for span in (s.cause, s.effect):
            if span is None or not (0 <= span[0] <= span[1] < n):
                span_ok = False
        if span_ok:
            lo, hi = sorted((s.cause, s.effect))
            if hi[0] <= lo[1]:
                span_ok = False
        if not span_ok:
            report.span_violations += 1
            offending = True

        try:
            replace(s, cause=None, effect=None).validate()
        except CorpusError:
            report.tree_violations += 1
            offending = True

        if offending:
            bad.append(s.sent_id)
    report.bad_ids = tuple(bad)
    return report


def templates_to_json(templates) -> list:
    out = []
    for t in templates:
        units = []
        for u in t.units:
            if u.kind == WORD:
                units.append({"kind": WORD, "text": u.text, "pos": u.pos,
                              "head": u.head, "deprel": u.deprel})
            else:
                units.append({"kind": SLOT, "role": u.role,
                              "head": u.head, "deprel": u.deprel})
        out.append({"name": t.name, "voice": t.voice, "pattern": t.pattern,
                    "units": units})
    return out


def templates_from_json(data) -> tuple:
    templates = []
    for i, entry in enumerate(data):
        try:
            units = []
            for u in entry["units"]:
                if u["kind"] == WORD:
                    units.append(_w(u["text"], u["pos"], u["head"], u["deprel"]))
                else:
                    units.append(_s(u["role"], u["head"], u["deprel"]))
            templates.append(Template(entry["name"], entry["voice"], tuple(units)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"template {i}: {exc}") from exc
    return tuple(templates)


def load_templates(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        return templates_from_json(json.load(fh))


def save_templates(path, templates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(templates_to_json(templates), fh, indent=2, sort_keys=True)
        fh.write("\n")


def lexicon_to_json(lexicon: Lexicon) -> dict:
    return {
        "cause": [[[w, p] for w, p in phrase] for phrase in lexicon.cause],
        "effect": [[[w, p] for w, p in phrase] for phrase in lexicon.effect],
    }


def lexicon_from_json(data) -> Lexicon:
    try:
        return Lexicon(
            cause=tuple(tuple((w, p) for w, p in phrase) for phrase in data["cause"]),
            effect=tuple(tuple((w, p) for w, p in phrase) for phrase in data["effect"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad lexicon: {exc}") from exc


def load_lexicon(path) -> Lexicon:
    with open(path, "r", encoding="utf-8") as fh:
        return lexicon_from_json(json.load(fh))


def save_lexicon(path, lexicon: Lexicon) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(lexicon_to_json(lexicon), fh, indent=2, sort_keys=True)
        fh.write("\n")
