"""Vocabulary management and prompt rendering.

A vocabulary holds base/novel/extra object and attribute class sets plus a
class-group compatibility map.  Rendered prompt text is canonical (single
spaces, lowercase classes/attributes) so embedding lookups are byte-exact;
the spatial template keeps its documented leading capital.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import IncompatibleAttribute, ValidationError
from .geometry import SpatialRelation

VOCAB_SCHEMA = "ovoda-vocab/1"
SPATIAL_GROUP = "spatial"

_WS = re.compile(r"\s+")


def canonical_term(s: str) -> str:
    """Lowercase, single-space form used for classes and attributes."""
    return _WS.sub(" ", s.strip().lower())


@dataclass(frozen=True)
class PromptConfig:
    """Prompt toggles and templates.

    `spatial_template` must contain {subject}, {relation} and {reference};
    `nonspatial_template` must contain {class} and {attribute}.  The
    perspective prefix names the reference object and is prepended only when
    `perspective_prefix_enabled` is true.
    """

    perspective_prefix_enabled: bool = True
    spatial_template: str = "{subject} {relation} {reference}"
    nonspatial_template: str = "{class} {attribute}"
    perspective_prefix: str = "From the perspective of {reference}, "
    trailing_period: bool = True

    def __post_init__(self):
        for ph in ("{subject}", "{relation}", "{reference}"):
            if ph not in self.spatial_template:
                raise ValidationError(f"spatial template missing {ph}")
        for ph in ("{class}", "{attribute}"):
            if ph not in self.nonspatial_template:
                raise ValidationError(f"non-spatial template missing {ph}")
        if "{reference}" not in self.perspective_prefix:
            raise ValidationError("perspective prefix missing {reference}")


@dataclass(frozen=True)
class Vocabulary:
    """Base/novel/extra class sets with a group compatibility map.

    `class_groups` maps an object class to a group name ("vehicle", "cycle",
    "pedestrian", ...); `compat` maps a group to the non-spatial attributes
    it may carry.  The reserved group "spatial" lists pair relations, which
    are compatible with every class pair.
    """

    name: str
    base_objects: tuple[str, ...]
    novel_objects: tuple[str, ...]
    extra_objects: tuple[str, ...]
    base_attributes: tuple[str, ...]
    novel_attributes: tuple[str, ...]
    extra_attributes: tuple[str, ...]
    class_groups: dict[str, str] = field(default_factory=dict)
    compat: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for fam in (
            ("base_objects", "novel_objects", "extra_objects"),
            ("base_attributes", "novel_attributes", "extra_attributes"),
        ):
            seen: dict[str, str] = {}
            for attr_name in fam:
                canon = tuple(canonical_term(s) for s in getattr(self, attr_name))
                if len(set(canon)) != len(canon):
                    raise ValidationError(f"duplicate entries inside {attr_name}")
                for s in canon:
                    if s in seen:
                        raise ValidationError(
                            f"{s!r} appears in both {seen[s]} and {attr_name}"
                        )
                    seen[s] = attr_name
                object.__setattr__(self, attr_name, canon)
        groups = {canonical_term(k): canonical_term(v) for k, v in self.class_groups.items()}
        compat = {
            canonical_term(k): tuple(canonical_term(a) for a in v)
            for k, v in self.compat.items()
        }
        covered = {a for attrs in compat.values() for a in attrs}
        missing = set(self.all_attributes()) - covered
        if missing:
            raise ValidationError(f"attributes missing from compat map: {sorted(missing)}")
        object.__setattr__(self, "class_groups", groups)
        object.__setattr__(self, "compat", compat)

    # -- class/attribute set views ------------------------------------------

    def all_objects(self) -> tuple[str, ...]:
        return self.base_objects + self.novel_objects + self.extra_objects

    def all_attributes(self) -> tuple[str, ...]:
        return self.base_attributes + self.novel_attributes + self.extra_attributes

    def spatial_attributes(self) -> tuple[str, ...]:
        return self.compat.get(SPATIAL_GROUP, ())

    def group_of(self, class_name: str) -> str | None:
        return self.class_groups.get(canonical_term(class_name))

    def nonspatial_attributes_for(self, class_name: str) -> tuple[str, ...]:
        """Attributes the class may carry, in the order they appear in the
        vocabulary lists (stable for distribution indexing)."""
        group = self.group_of(class_name)
        if group is None:
            return ()
        allowed = set(self.compat.get(group, ()))
        return tuple(a for a in self.all_attributes() if a in allowed)

    def is_compatible(self, class_name: str, attribute: str) -> bool:
        attribute = canonical_term(attribute)
        if attribute in self.spatial_attributes():
            return True
        return attribute in self.nonspatial_attributes_for(class_name)


def training_vocab(v: Vocabulary, family: str) -> list[str]:
    """Base, novel then extra classes, each block alphabetical."""
    if family == "object":
        blocks = (v.base_objects, v.novel_objects, v.extra_objects)
    elif family == "attribute":
        blocks = (v.base_attributes, v.novel_attributes, v.extra_attributes)
    else:
        raise ValidationError(f"unknown vocabulary family {family!r}")
    out: list[str] = []
    for block in blocks:
        out.extend(sorted(block))
    return out


def testing_vocab(v: Vocabulary, family: str) -> list[str]:
    """Base then novel classes only (extras dropped at test time)."""
    if family == "object":
        blocks = (v.base_objects, v.novel_objects)
    elif family == "attribute":
        blocks = (v.base_attributes, v.novel_attributes)
    else:
        raise ValidationError(f"unknown vocabulary family {family!r}")
    out: list[str] = []
    for block in blocks:
        out.extend(sorted(block))
    return out


# ---------------------------------------------------------------------------
# Prompt rendering


def render_nonspatial(
    class_name: str,
    attribute: str,
    vocab: Vocabulary | None = None,
    cfg: PromptConfig | None = None,
) -> str:
    """"<class> <attribute>" with canonical spacing and case.

    When a vocabulary is supplied the pair is checked against the
    compatibility map; e.g. a rider attribute on a car is rejected.
    """
    cfg = cfg or PromptConfig()
    class_name = canonical_term(class_name)
    attribute = canonical_term(attribute)
    if vocab is not None and not vocab.is_compatible(class_name, attribute):
        raise IncompatibleAttribute(f"{attribute!r} is not valid for {class_name!r}")
    return cfg.nonspatial_template.format(**{"class": class_name, "attribute": attribute})


def render_spatial(
    subject_class: str,
    reference_class: str,
    rel: SpatialRelation,
    cfg: PromptConfig | None = None,
) -> str:
    """Pair prompt, optionally prefixed with the reference perspective."""
    cfg = cfg or PromptConfig()
    subject_class = canonical_term(subject_class)
    reference_class = canonical_term(reference_class)
    body = cfg.spatial_template.format(
        subject=subject_class, relation=rel.phrase, reference=reference_class
    )
    if cfg.perspective_prefix_enabled:
        body = cfg.perspective_prefix.format(reference=reference_class) + body
    if cfg.trailing_period:
        body += "."
    return body


def render_ovad_label(class_i: str, class_j: str, rel: SpatialRelation) -> str:
    """Ground-truth pair label: "<class_i> <relation> <class_j>" (no prefix)."""
    return f"{canonical_term(class_i)} {rel.phrase} {canonical_term(class_j)}"


def parse_relation(text: str) -> SpatialRelation:
    """Recover the relation from a rendered spatial string.

    Left/right phrases are matched before the bare front/behind substrings so
    each relation's phrase identifies it uniquely.
    """
    for rel in (
        SpatialRelation.ON_LEFT_OF,
        SpatialRelation.ON_RIGHT_OF,
        SpatialRelation.IN_FRONT_OF,
        SpatialRelation.BEHIND,
    ):
        if rel.phrase in text:
            return rel
    raise ValidationError(f"no relation phrase found in {text!r}")


# ---------------------------------------------------------------------------
# Serialization and bundled presets

_FIELDS = (
    "base_objects",
    "novel_objects",
    "extra_objects",
    "base_attributes",
    "novel_attributes",
    "extra_attributes",
)


def vocabulary_from_dict(d: dict) -> Vocabulary:
    if d.get("schema") != VOCAB_SCHEMA:
        raise ValidationError(f"unsupported vocabulary schema {d.get('schema')!r}")
    missing = [k for k in ("name", *_FIELDS, "class_groups", "compat") if k not in d]
    if missing:
        raise ValidationError(f"vocabulary file missing fields: {missing}")
    return Vocabulary(
        name=d["name"],
        base_objects=tuple(d["base_objects"]),
        novel_objects=tuple(d["novel_objects"]),
        extra_objects=tuple(d["extra_objects"]),
        base_attributes=tuple(d["base_attributes"]),
        novel_attributes=tuple(d["novel_attributes"]),
        extra_attributes=tuple(d["extra_attributes"]),
        class_groups=dict(d["class_groups"]),
        compat={k: tuple(v) for k, v in d["compat"].items()},
    )


def vocabulary_to_dict(v: Vocabulary) -> dict:
    d: dict = {"schema": VOCAB_SCHEMA, "name": v.name}
    for f in _FIELDS:
        d[f] = list(getattr(v, f))
    d["class_groups"] = dict(v.class_groups)
    d["compat"] = {k: list(vals) for k, vals in v.compat.items()}
    return d


def load_vocabulary(name_or_path: str) -> Vocabulary:
    """Load a bundled preset by name or a vocabulary JSON file by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return vocabulary_from_dict(json.loads(path.read_text()))
    try:
        text = (
            resources.files("ovoda").joinpath(f"vocabs/{name_or_path}.json").read_text()
        )
    except FileNotFoundError:
        raise ValidationError(
            f"unknown vocabulary {name_or_path!r}: not a file and not a bundled preset"
        ) from None
    return vocabulary_from_dict(json.loads(text))


def bundled_presets() -> list[str]:
    base = resources.files("ovoda").joinpath("vocabs")
    return sorted(p.name[: -len(".json")] for p in base.iterdir() if p.name.endswith(".json"))
