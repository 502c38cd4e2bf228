# Behavior-tree text codec
# Grammar of the analyzer's instruction payload:
#   node  := kind [':' name] '{' entry* '}'
#   entry := node | kind ':' name '=' value | key '=' value
#   value := "string" | number
# '#' starts a comment running to end of line. Only the first `root { ... }`
# block of a text is read; prose around it is ignored.

import json
import math
import re
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from codriver.core.errors import (
    BadEnum,
    DuplicateKey,
    MalformedEntry,
    MissingField,
    NoRootBlock,
    OutOfRange,
    UnbalancedBraces,
)
from codriver.models.schemas import (
    CATEGORIES,
    CATEGORY_ENUMS,
    DIRECTIVE_NUMERIC_FIELDS,
    BehaviorDirective,
    ControlType,
    SceneLabels,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class NodeKind(str, Enum):
    ROOT = "root"
    SEQUENCE = "sequence"
    CONDITION = "condition"
    ACTION = "action"


LeafValue = Union[int, float, str]


class BehaviorLeaf(BaseModel):
    """A `kind:key = value` (condition/action) or plain `key = value` entry"""
    model_config = ConfigDict(frozen=True)

    kind: Optional[NodeKind] = None
    key: str
    value: LeafValue

    @field_validator("kind")
    @classmethod
    def _leaf_kind(cls, kind: Optional[NodeKind]) -> Optional[NodeKind]:
        if kind not in (None, NodeKind.CONDITION, NodeKind.ACTION):
            raise ValueError(f"{kind.value} cannot be a leaf")
        return kind

    @field_validator("key")
    @classmethod
    def _identifier(cls, key: str) -> str:
        if not _IDENT.match(key):
            raise ValueError(f"invalid key {key!r}")
        return key

    @field_validator("value", mode="before")
    @classmethod
    def _not_bool(cls, value):
        if isinstance(value, bool):
            raise ValueError("booleans are not leaf values")
        return value

    @field_validator("value")
    @classmethod
    def _finite(cls, value: LeafValue) -> LeafValue:
        if isinstance(value, float) and not math.isfinite(value):
            raise ValueError("numeric values must be finite")
        return value

    @property
    def slot(self) -> Tuple[Optional[NodeKind], str]:
        return self.kind, self.key


class BehaviorNode(BaseModel):
    """A root or sequence block with ordered child entries"""
    model_config = ConfigDict(frozen=True)

    kind: NodeKind
    name: str = ""
    entries: Tuple[Union["BehaviorNode", BehaviorLeaf], ...] = ()

    @model_validator(mode="after")
    def _check_node(self):
        if self.kind not in (NodeKind.ROOT, NodeKind.SEQUENCE):
            raise ValueError(f"{self.kind.value} cannot hold entries")
        if self.name and not _IDENT.match(self.name):
            raise ValueError(f"invalid node name {self.name!r}")
        seen: Set[Tuple[Optional[NodeKind], str]] = set()
        for entry in self.entries:
            if isinstance(entry, BehaviorNode) and entry.kind is NodeKind.ROOT:
                raise ValueError("root may only appear at the top")
            if isinstance(entry, BehaviorLeaf):
                if entry.slot in seen:
                    raise ValueError(f"duplicate key {entry.key!r}")
                seen.add(entry.slot)
        return self


class BehaviorTree(BaseModel):
    """Parsed analyzer instruction: exactly one root node"""
    model_config = ConfigDict(frozen=True)

    root: BehaviorNode

    @field_validator("root")
    @classmethod
    def _is_root(cls, root: BehaviorNode) -> BehaviorNode:
        if root.kind is not NodeKind.ROOT:
            raise ValueError("tree must start with a root node")
        return root

    def leaves(self) -> List[BehaviorLeaf]:
        """All leaves in document order"""
        found: List[BehaviorLeaf] = []

        def walk(node: BehaviorNode) -> None:
            for entry in node.entries:
                if isinstance(entry, BehaviorLeaf):
                    found.append(entry)
                else:
                    walk(entry)

        walk(self.root)
        return found


BehaviorNode.model_rebuild()


# ================================================================
# PARSER
# ================================================================

_TOKEN = re.compile(
    r"""
     (?P<ws>\s+)
    |(?P<comment>\#[^\n]*)
    |(?P<string>"(?:[^"\\\n]|\\.)*")
    |(?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    |(?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    |(?P<punct>[{}:=])
    """,
    re.VERBOSE,
)
_ROOT_START = re.compile(r"root\s*(?::\s*[A-Za-z_][A-Za-z0-9_]*\s*)?\{")
_INTEGER = re.compile(r"-?\d+\Z")


class _Token(NamedTuple):
    kind: str
    text: str
    offset: int


def _tokenize_root_block(text: str) -> List[_Token]:
    """Tokens of the first root block, stopping at its closing brace"""
    match = _ROOT_START.search(text)
    if match is None:
        raise NoRootBlock("no `root {` block found in analyzer output")

    tokens: List[_Token] = []
    depth = 0
    pos = match.start()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise MalformedEntry(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        if m.lastgroup in ("ws", "comment"):
            continue
        token = _Token(m.lastgroup, m.group(), m.start())
        tokens.append(token)
        if token.text == "{" and token.kind == "punct":
            depth += 1
        elif token.text == "}" and token.kind == "punct":
            depth -= 1
            if depth == 0:
                return tokens
    raise UnbalancedBraces(f"root block opened at offset {match.start()} is never closed")


class _Parser:
    def __init__(self, tokens: List[_Token]):
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self) -> _Token:
        token = self._peek()
        if token is None:
            raise UnbalancedBraces("unexpected end of root block")
        self.pos += 1
        return token

    def _expect(self, punct: str) -> _Token:
        token = self._next()
        if token.kind != "punct" or token.text != punct:
            raise MalformedEntry(f"expected {punct!r} at offset {token.offset}, got {token.text!r}")
        return token

    def _ident(self) -> _Token:
        token = self._next()
        if token.kind != "ident":
            raise MalformedEntry(f"expected a name at offset {token.offset}, got {token.text!r}")
        return token

    def tree(self) -> BehaviorTree:
        self._ident()  # `root`, guaranteed by the block search
        name = ""
        if self._peek().text == ":":
            self._expect(":")
            name = self._ident().text
        self._expect("{")
        return BehaviorTree(root=self._body(NodeKind.ROOT, name))

    def _body(self, kind: NodeKind, name: str) -> BehaviorNode:
        entries: List[Union[BehaviorNode, BehaviorLeaf]] = []
        seen: Set[Tuple[Optional[NodeKind], str]] = set()
        while True:
            token = self._peek()
            if token is None:
                raise UnbalancedBraces(f"block {kind.value}:{name} is never closed")
            if token.kind == "punct" and token.text == "}":
                self.pos += 1
                return BehaviorNode(kind=kind, name=name, entries=tuple(entries))
            entry = self._entry()
            if isinstance(entry, BehaviorLeaf):
                if entry.slot in seen:
                    raise DuplicateKey(f"key {entry.key!r} repeated in {kind.value}:{name}")
                seen.add(entry.slot)
            entries.append(entry)

    def _entry(self) -> Union[BehaviorNode, BehaviorLeaf]:
        head = self._ident()
        follow = self._next()
        if follow.kind != "punct":
            raise MalformedEntry(f"entry {head.text!r} at offset {head.offset} is neither a node nor key = value")

        if follow.text == ":":
            kind = self._kind(head)
            name = self._ident().text
            opener = self._next()
            if opener.text == "{" and kind is NodeKind.SEQUENCE:
                return self._body(kind, name)
            if opener.text == "=" and kind in (NodeKind.CONDITION, NodeKind.ACTION):
                return BehaviorLeaf(kind=kind, key=name, value=self._value())
            raise MalformedEntry(f"{kind.value}:{name} at offset {head.offset} has the wrong shape")

        if follow.text == "{":
            if head.text != NodeKind.SEQUENCE.value:
                raise MalformedEntry(f"only sequences may open a block, got {head.text!r} at offset {head.offset}")
            return self._body(NodeKind.SEQUENCE, "")

        if follow.text == "=":
            return BehaviorLeaf(key=head.text, value=self._value())

        raise MalformedEntry(f"unexpected {follow.text!r} at offset {follow.offset}")

    @staticmethod
    def _kind(token: _Token) -> NodeKind:
        try:
            kind = NodeKind(token.text)
        except ValueError:
            raise MalformedEntry(f"unknown node kind {token.text!r} at offset {token.offset}") from None
        if kind is NodeKind.ROOT:
            raise MalformedEntry(f"nested root at offset {token.offset}")
        return kind

    def _value(self) -> LeafValue:
        token = self._next()
        if token.kind == "string":
            try:
                return json.loads(token.text)
            except json.JSONDecodeError as exc:
                raise MalformedEntry(f"bad string literal at offset {token.offset}: {exc}") from None
        if token.kind == "number":
            if _INTEGER.match(token.text):
                return int(token.text)
            value = float(token.text)
            if not math.isfinite(value):
                raise MalformedEntry(f"number out of range at offset {token.offset}")
            return value
        raise MalformedEntry(f"expected a value at offset {token.offset}, got {token.text!r}")


def parse_behavior_tree(text: str) -> BehaviorTree:
    """
    Parse the first `root { ... }` block found in text

    Raises:
        NoRootBlock, UnbalancedBraces, MalformedEntry, DuplicateKey
    """
    if not text:
        raise NoRootBlock("empty analyzer output")
    return _Parser(_tokenize_root_block(text)).tree()


# ================================================================
# SERIALIZER
# ================================================================

def _format_value(value: LeafValue) -> str:
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _emit(node: BehaviorNode, depth: int, lines: List[str]) -> None:
    indent = "  " * depth
    header = f"{node.kind.value}:{node.name}" if node.name else node.kind.value
    lines.append(f"{indent}{header} {{")
    for entry in node.entries:
        if isinstance(entry, BehaviorNode):
            _emit(entry, depth + 1, lines)
        else:
            key = f"{entry.kind.value}:{entry.key}" if entry.kind else entry.key
            lines.append(f"{indent}  {key} = {_format_value(entry.value)}")
    lines.append(f"{indent}}}")


def serialize_behavior_tree(tree: BehaviorTree) -> str:
    """Canonical text: 2-space indent, one entry per line, trailing newline"""
    lines: List[str] = []
    _emit(tree.root, 0, lines)
    return "\n".join(lines) + "\n"


# ================================================================
# DIRECTIVE EXTRACTION
# ================================================================

def tree_from_reading(labels: SceneLabels, directive: BehaviorDirective) -> BehaviorTree:
    """Build the two-sequence analysis/suggestion tree"""
    environment = tuple(
        BehaviorLeaf(kind=NodeKind.CONDITION, key=category, value=labels.label(category))
        for category in CATEGORIES
    )
    max_speed = directive.max_speed
    suggestion = [
        BehaviorLeaf(kind=NodeKind.ACTION, key="control_type", value=directive.control_type.value),
        # Integral speeds are written as integers (`max_speed = 60`)
        BehaviorLeaf(kind=NodeKind.ACTION, key="max_speed",
                     value=int(max_speed) if float(max_speed).is_integer() else max_speed),
    ]
    suggestion.extend(
        BehaviorLeaf(kind=NodeKind.ACTION, key=field, value=float(getattr(directive, field)))
        for field in DIRECTIVE_NUMERIC_FIELDS[1:]
    )
    return BehaviorTree(root=BehaviorNode(kind=NodeKind.ROOT, entries=(
        BehaviorNode(kind=NodeKind.SEQUENCE, name="environment_analysis", entries=environment),
        BehaviorNode(kind=NodeKind.SEQUENCE, name="driving_suggestion", entries=tuple(suggestion)),
    )))


def _first_values(tree: BehaviorTree, kind: NodeKind) -> Dict[str, LeafValue]:
    values: Dict[str, LeafValue] = {}
    for leaf in tree.leaves():
        if leaf.kind is kind:
            values.setdefault(leaf.key, leaf.value)
    return values


def _enum_value(category: str, raw: LeafValue, enum_type):
    text = str(raw).strip().lower()
    try:
        return enum_type(text)
    except ValueError:
        allowed = ", ".join(member.value for member in enum_type)
        raise BadEnum(f"{category}={raw!r} is not one of {allowed}") from None


def _number(field: str, raw: LeafValue) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise OutOfRange(f"{field}={raw!r} is not a number") from None
    if not math.isfinite(value):
        raise OutOfRange(f"{field}={raw!r} is not finite")
    if field in ("max_brake", "max_throttle"):
        if not 0.0 <= value <= 1.0:
            raise OutOfRange(f"{field}={value} outside [0, 1]")
    elif value <= 0.0:
        raise OutOfRange(f"{field}={value} must be > 0")
    return value


def directive_from_tree(tree: BehaviorTree) -> Tuple[SceneLabels, BehaviorDirective]:
    """
    Read the five condition labels and six action values from a parsed tree

    Unknown extra keys are ignored; enum strings match case-insensitively.

    Raises:
        MissingField, BadEnum, OutOfRange
    """
    conditions = _first_values(tree, NodeKind.CONDITION)
    actions = _first_values(tree, NodeKind.ACTION)

    required_actions = ("control_type",) + DIRECTIVE_NUMERIC_FIELDS
    missing = [f"condition:{c}" for c in CATEGORIES if c not in conditions]
    missing += [f"action:{a}" for a in required_actions if a not in actions]
    if missing:
        raise MissingField(f"missing {', '.join(missing)}")

    labels = SceneLabels(**{
        category: _enum_value(category, conditions[category], CATEGORY_ENUMS[category])
        for category in CATEGORIES
    })
    directive = BehaviorDirective(
        control_type=_enum_value("control_type", actions["control_type"], ControlType),
        **{field: _number(field, actions[field]) for field in DIRECTIVE_NUMERIC_FIELDS},
    )
    return labels, directive
