"""Static source metrics used as algorithm meta-features.

Fourteen values per implementation file: size (sloc, lloc), cyclomatic
complexity, Halstead volume/difficulty/effort and seven statistics of the
syntax tree viewed as an undirected graph.

Lexing is driven by a ``Profile`` (comment syntax, string quotes, operator
symbols, keyword classes, decision points, block and tree style), so the same
analyzer handles Python and brace-delimited languages.

Token classes:

* operand  - identifiers, numbers, strings, literal keywords (True, null, ...)
* operator - operator/punctuation symbols, opening brackets (counted as the
  pair, e.g. ``()``), and keywords listed in ``keyword_operators``
* keyword  - remaining reserved words (not counted by Halstead)
* comment  - comments (never counted)
* other    - closing brackets and line continuations

Line counts:

* sloc - physical lines spanned by at least one non-comment token
* lloc - lines on which an operator, operand or keyword token starts
"""

from __future__ import annotations

import ast
import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

FEATURE_NAMES = (
    "sloc",
    "lloc",
    "average_cc_file",
    "num_complexity_blocks",
    "hal_volume",
    "hal_difficulty",
    "hal_effort",
    "ast_node_count",
    "ast_edge_count",
    "ast_avg_degree",
    "ast_max_degree",
    "ast_transitivity",
    "ast_avg_clustering",
    "ast_depth",
)

OPEN = {"(": ")", "[": "]", "{": "}"}
CLOSE = {v: k for k, v in OPEN.items()}


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    name: str
    line_comments: tuple[str, ...]
    block_comments: tuple[tuple[str, str], ...]
    quotes: tuple[str, ...]  # longest first; triple quotes may span lines
    string_prefix: str  # characters allowed directly before a quote, e.g. "rbfu"
    operators: tuple[str, ...]
    keywords: frozenset[str]
    keyword_operators: frozenset[str]
    literal_keywords: frozenset[str]
    decision_points: frozenset[str]
    blocks: str  # "indent" (def-introduced) or "brace" (heuristic function bodies)
    tree: str  # "python-ast" or "brackets"
    function_keywords: frozenset[str] = frozenset()
    control_keywords: frozenset[str] = frozenset()


def _ops(*groups: str) -> tuple[str, ...]:
    ops = {o for g in groups for o in g.split()}
    return tuple(sorted(ops, key=lambda o: (-len(o), o)))


PYTHON = Profile(
    name="python",
    line_comments=("#",),
    block_comments=(),
    quotes=('"""', "'''", '"', "'"),
    string_prefix="rbfuRBFU",
    operators=_ops(
        "**= //= >>= <<= ... -> := ** // == != <= >= += -= *= /= %= &= |= ^= @= << >>",
        "+ - * / % @ = < > ~ & | ^ : , . ;",
    ),
    keywords=frozenset(
        "False None True and as assert async await break class continue def del elif else except "
        "finally for from global if import in is lambda nonlocal not or pass raise return try "
        "while with yield".split()
    ),
    keyword_operators=frozenset(
        "and or not in is if elif else for while return yield lambda await raise assert del "
        "with try except finally break continue".split()
    ),
    literal_keywords=frozenset({"True", "False", "None"}),
    decision_points=frozenset({"if", "elif", "for", "while", "except", "and", "or"}),
    blocks="indent",
    tree="python-ast",
    function_keywords=frozenset({"def"}),
)

BRACE = Profile(
    name="brace",
    line_comments=("//",),
    block_comments=(("/*", "*/"),),
    quotes=('"', "'", "`"),
    string_prefix="LuUR8",
    operators=_ops(
        ">>>= <<= >>= ... ->* === !== >>> &&= ||= ??= && || == != <= >= ++ -- += -= *= /= %= &= |= ^=",
        "<< >> -> :: => ?? ?. + - * / % = < > ! ~ & | ^ ? : ; , . @ #",
    ),
    keywords=frozenset(
        "auto break case catch class const constexpr continue default delete do else enum export "
        "extends final finally for function goto if import inline let new noexcept override package "
        "private protected public return sizeof static struct switch template this throw throws try "
        "typedef typename union using var virtual void volatile while yield async await "
        "false true null nullptr NULL undefined".split()
    ),
    keyword_operators=frozenset(
        "break case catch continue default delete do else for goto if new return sizeof switch throw "
        "try while yield await".split()
    ),
    literal_keywords=frozenset({"false", "true", "null", "nullptr", "NULL", "undefined", "this"}),
    decision_points=frozenset({"if", "for", "while", "case", "catch", "&&", "||", "?"}),
    blocks="brace",
    tree="brackets",
    function_keywords=frozenset({"function"}),
    control_keywords=frozenset({"if", "for", "while", "switch", "catch", "return", "sizeof", "do", "else"}),
)

PROFILES = {"python": PYTHON, "brace": BRACE, "c": BRACE, "java": BRACE, "js": BRACE}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int
    end_line: int


@dataclass(frozen=True)
class Tree:
    """Rooted graph: ``children[n]`` lists node n's children, root is 0.

    Built-in trees are proper trees; trees loaded from JSON may add
    cross-edges through shared children.
    """

    children: tuple[tuple[int, ...], ...]
    root: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.children)


@dataclass(frozen=True)
class CodeUnit:
    tokens: tuple[Token, ...]
    blocks: tuple[int, ...]  # decision-point count per function block
    tree: Tree
    sloc: int = 0
    lloc: int = 0


@dataclass(frozen=True)
class AlgoFeatureVector:
    algo_id: str
    sloc: float
    lloc: float
    average_cc_file: float
    num_complexity_blocks: float
    hal_volume: float
    hal_difficulty: float
    hal_effort: float
    ast_node_count: float
    ast_edge_count: float
    ast_avg_degree: float
    ast_max_degree: float
    ast_transitivity: float
    ast_avg_clustering: float
    ast_depth: float

    def values(self) -> list[float]:
        return [getattr(self, n) for n in FEATURE_NAMES]


# lexing -------------------------------------------------------------------

_IDENT = re.compile(r"[^\W\d]\w*")
_NUMBER = re.compile(r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?\w*")
_SPACE = re.compile(r"[ \t\f\r]+")


def tokenize(source: str, profile: Profile = PYTHON) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)

    def emit(kind, text, start, end):
        nonlocal line, line_start
        newlines = source.count("\n", start, end)
        tokens.append(Token(kind, text, line, start - line_start, line + newlines))
        if newlines:
            line += newlines
            line_start = source.rindex("\n", start, end) + 1

    while pos < n:
        ch = source[pos]
        if ch == "\n":
            pos += 1
            line += 1
            line_start = pos
            continue
        m = _SPACE.match(source, pos)
        if m:
            pos = m.end()
            continue
        if ch == "\\" and source.startswith("\n", pos + 1):
            emit("other", "\\", pos, pos + 1)
            pos += 1
            continue

        lc = next((c for c in profile.line_comments if source.startswith(c, pos)), None)
        if lc is not None:
            end = source.find("\n", pos)
            end = n if end < 0 else end
            emit("comment", source[pos:end], pos, end)
            pos = end
            continue
        bc = next((b for b in profile.block_comments if source.startswith(b[0], pos)), None)
        if bc is not None:
            end = source.find(bc[1], pos + len(bc[0]))
            if end < 0:
                raise ParseError("unterminated block comment", line)
            end += len(bc[1])
            emit("comment", source[pos:end], pos, end)
            pos = end
            continue

        start = pos
        p = pos
        while p < n and p - pos < 3 and source[p] in profile.string_prefix:
            p += 1
        quote = next((q for q in profile.quotes if source.startswith(q, p)), None)
        # a quote directly after prefix letters only (r"", b'', f"""...)
        if quote is not None and (p == pos or _IDENT.match(source, pos).end() == p):
            end = _string_end(source, p, quote, line)
            emit("operand", source[start:end], start, end)
            pos = end
            continue

        m = _IDENT.match(source, pos)
        if m:
            word = m.group()
            if word in profile.literal_keywords:
                kind = "operand"
            elif word in profile.keyword_operators:
                kind = "operator"
            elif word in profile.keywords:
                kind = "keyword"
            else:
                kind = "operand"
            emit(kind, word, pos, m.end())
            pos = m.end()
            continue
        m = _NUMBER.match(source, pos)
        if m:
            emit("operand", m.group(), pos, m.end())
            pos = m.end()
            continue
        if ch in OPEN:
            emit("operator", ch + OPEN[ch], pos, pos + 1)
            pos += 1
            continue
        if ch in CLOSE:
            emit("other", ch, pos, pos + 1)
            pos += 1
            continue
        op = next((o for o in profile.operators if source.startswith(o, pos)), None)
        if op is not None:
            emit("operator", op, pos, pos + len(op))
            pos += len(op)
            continue
        emit("other", ch, pos, pos + 1)
        pos += 1
    return tokens


def _string_end(source: str, start: int, quote: str, line: int) -> int:
    p = start + len(quote)
    multiline = len(quote) == 3 or quote == "`"
    while p < len(source):
        c = source[p]
        if c == "\\":
            p += 2
            continue
        if source.startswith(quote, p):
            return p + len(quote)
        if c == "\n" and not multiline:
            raise ParseError("unterminated string literal", line)
        p += 1
    raise ParseError("unterminated string literal", line)


# blocks -------------------------------------------------------------------

def _indent_blocks(tokens: Sequence[Token], profile: Profile) -> list[int]:
    """Owner block of every token for def-introduced, indentation-scoped blocks (-1: none)."""
    owner = [-1] * len(tokens)
    stack: list[tuple[int, int]] = []  # (indent column, block id)
    n_blocks = 0
    depth = 0
    last_line = 0
    continued = False
    line_start_col = 0
    for n, tok in enumerate(tokens):
        if tok.kind == "comment":
            owner[n] = stack[-1][1] if stack else -1
            continue
        at_line_start = tok.line != last_line and depth == 0 and not continued
        if at_line_start:
            line_start_col = tok.col
            while stack and stack[-1][0] >= tok.col:
                stack.pop()
        last_line = tok.end_line
        continued = tok.text == "\\"
        if tok.text in profile.function_keywords:
            stack.append((line_start_col, n_blocks))
            n_blocks += 1
        if tok.kind == "operator" and tok.text[0] in OPEN:
            depth += 1
        elif tok.kind == "other" and tok.text in CLOSE:
            depth = max(0, depth - 1)
        owner[n] = stack[-1][1] if stack else -1
    return owner


def _matching_open(tokens: Sequence[Token], close_idx: int) -> int | None:
    depth = 0
    for n in range(close_idx, -1, -1):
        t = tokens[n]
        if t.kind == "other" and t.text in CLOSE:
            depth += 1
        elif t.kind == "operator" and t.text[0] in OPEN:
            depth -= 1
            if depth == 0:
                return n
    return None


def _is_function_brace(tokens: Sequence[Token], idx: int, profile: Profile) -> bool:
    n = idx - 1
    # skip trailing qualifiers such as `const`, `noexcept`, `throws A, B`
    while n >= 0 and tokens[n].kind == "comment":
        n -= 1
    if n >= 0 and tokens[n].text == "=>":
        return True
    while n >= 0 and (
        tokens[n].kind in ("keyword", "comment")
        or (tokens[n].kind == "operand" and _IDENT.fullmatch(tokens[n].text))
        or tokens[n].text in (",", "::", ".")
    ):
        if tokens[n].text in profile.control_keywords:
            return False
        n -= 1
    if n < 0 or tokens[n].text != ")":
        return False
    op = _matching_open(tokens, n)
    if op is None or op == 0:
        return False
    before = tokens[op - 1]
    if before.text in profile.function_keywords:
        return True
    if before.text in profile.control_keywords or before.text in profile.keyword_operators:
        return False
    return before.kind == "operand" and bool(_IDENT.fullmatch(before.text))


def _brace_blocks(tokens: Sequence[Token], profile: Profile) -> list[int]:
    owner = [-1] * len(tokens)
    stack: list[tuple[int, int | None]] = []  # (token index of "{", block id or None)
    n_blocks = 0
    for n, tok in enumerate(tokens):
        if tok.text == "{}":
            block = None
            if _is_function_brace(tokens, n, profile):
                block = n_blocks
                n_blocks += 1
            stack.append((n, block))
        current = next((b for _, b in reversed(stack) if b is not None), -1)
        owner[n] = current
        if tok.kind == "other" and tok.text == "}" and stack:
            stack.pop()
    return owner


def _decision_counts(tokens: Sequence[Token], owner: Sequence[int], profile: Profile) -> tuple[int, ...]:
    n_blocks = max(owner, default=-1) + 1
    counts = [0] * n_blocks
    for tok, b in zip(tokens, owner):
        if b >= 0 and tok.kind in ("operator", "keyword") and tok.text in profile.decision_points:
            counts[b] += 1
    return tuple(counts)


# trees --------------------------------------------------------------------

def _python_tree(source: str) -> Tree:
    try:
        root = ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    children: list[list[int]] = [[]]
    stack = [(root, 0)]
    while stack:
        node, nid = stack.pop()
        for child in ast.iter_child_nodes(node):
            cid = len(children)
            children.append([])
            children[nid].append(cid)
            stack.append((child, cid))
    return Tree(tuple(tuple(c) for c in children))


def _bracket_tree(tokens: Sequence[Token]) -> Tree:
    children: list[list[int]] = [[]]
    stack: list[tuple[int, str, int]] = [(0, "", 0)]  # (node id, closing char, line)
    for tok in tokens:
        if tok.kind == "comment":
            continue
        if tok.kind == "other" and tok.text in CLOSE:
            if len(stack) == 1:
                raise ParseError(f"unbalanced {tok.text!r}", tok.line)
            if stack[-1][1] != tok.text:
                opener = CLOSE[stack[-1][1]]
                raise ParseError(f"unbalanced {tok.text!r}, {opener!r} from line {stack[-1][2]} is still open", tok.line)
            stack.pop()
            continue
        nid = len(children)
        children.append([])
        children[stack[-1][0]].append(nid)
        if tok.kind == "operator" and tok.text[0] in OPEN:
            stack.append((nid, OPEN[tok.text[0]], tok.line))
    if len(stack) > 1:
        raise ParseError(f"unclosed {CLOSE[stack[-1][1]]!r}", stack[-1][2])
    return Tree(tuple(tuple(c) for c in children))


def load_tree_json(path: str | Path) -> Tree:
    """Read a syntax tree exported as ``{"root": id, "nodes": [{"id", "children"}]}``.

    Node ids may be any JSON scalars; ``root`` defaults to the first node.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    nodes = data["nodes"] if isinstance(data, dict) else data
    if not nodes:
        raise ParseError("tree has no nodes")
    ids = {}
    for node in nodes:
        if node["id"] in ids:
            raise ParseError(f"duplicate node id {node['id']!r}")
        ids[node["id"]] = len(ids)
    root = ids[data.get("root", nodes[0]["id"])] if isinstance(data, dict) else 0
    children: list[tuple[int, ...]] = []
    for node in nodes:
        try:
            children.append(tuple(ids[c] for c in node.get("children", [])))
        except KeyError as exc:
            raise ParseError(f"unknown child id {exc.args[0]!r}") from None
    return Tree(tuple(children), root)


# analysis -----------------------------------------------------------------

def _line_counts(tokens: Sequence[Token]) -> tuple[int, int]:
    code_lines: set[int] = set()
    logical: set[int] = set()
    for t in tokens:
        if t.kind == "comment":
            continue
        code_lines.update(range(t.line, t.end_line + 1))
        if t.kind in ("operator", "operand", "keyword"):
            logical.add(t.line)
    return len(code_lines), len(logical)


def analyze_text(source: str, profile: Profile | str = PYTHON, tree: Tree | None = None) -> CodeUnit:
    if isinstance(profile, str):
        profile = PROFILES[profile]
    tokens = tokenize(source, profile)
    if profile.blocks == "indent":
        owner = _indent_blocks(tokens, profile)
    else:
        owner = _brace_blocks(tokens, profile)
    if tree is None:
        if profile.tree == "python-ast":
            tree = _python_tree(source)
        else:
            tree = _bracket_tree(tokens)
    sloc, lloc = _line_counts(tokens)
    return CodeUnit(tuple(tokens), _decision_counts(tokens, owner, profile), tree, sloc, lloc)


def analyze_source(path: str | Path, profile: Profile | str = PYTHON, ast_json: str | Path | None = None) -> CodeUnit:
    source = Path(path).read_text(encoding="utf-8")
    tree = load_tree_json(ast_json) if ast_json is not None else None
    return analyze_text(source, profile, tree)


def halstead_counts(unit: CodeUnit) -> tuple[int, int, int, int]:
    """(n1, n2, N1, N2): distinct/total operators and operands."""
    ops = [t.text for t in unit.tokens if t.kind == "operator"]
    opnds = [t.text for t in unit.tokens if t.kind == "operand"]
    return len(set(ops)), len(set(opnds)), len(ops), len(opnds)


def halstead_from_counts(n1: int, n2: int, N1: int, N2: int) -> tuple[float, float, float]:
    vocabulary = n1 + n2
    length = N1 + N2
    volume = length * math.log2(vocabulary) if vocabulary > 1 else 0.0
    difficulty = (n1 / 2.0) * (N2 / max(n2, 1))
    return volume, difficulty, difficulty * volume


def halstead(unit: CodeUnit) -> tuple[float, float, float]:
    """(volume, difficulty, effort) over the whole file."""
    return halstead_from_counts(*halstead_counts(unit))


def cyclomatic(unit: CodeUnit) -> tuple[float, int]:
    """(mean per-block complexity, number of blocks); CC = 1 + decision points."""
    if not unit.blocks:
        return 0.0, 0
    return sum(1 + d for d in unit.blocks) / len(unit.blocks), len(unit.blocks)


def ast_graph_metrics(tree: Tree) -> dict[str, float]:
    """Node/edge counts, degrees, transitivity, clustering and depth of ``tree``
    taken as an undirected simple graph (self-loops and repeated edges dropped).

    Depth is the largest number of child steps from the root to any reachable
    node along shortest paths, which for a tree is the longest root-to-leaf
    path.
    """
    n = tree.n_nodes
    adj: list[set[int]] = [set() for _ in range(n)]
    for parent, kids in enumerate(tree.children):
        for c in kids:
            if c != parent:
                adj[parent].add(c)
                adj[c].add(parent)
    deg = [len(a) for a in adj]
    n_edges = sum(deg) // 2

    tri = [0] * n
    for u in range(n):
        if deg[u] < 2:
            continue
        nb = adj[u]
        links = sum(len(adj[v] & nb) for v in nb) // 2
        tri[u] = links
    triangles = sum(tri) // 3
    triples = sum(d * (d - 1) // 2 for d in deg)
    transitivity = 3.0 * triangles / triples if triples else 0.0
    clustering = [2.0 * tri[u] / (deg[u] * (deg[u] - 1)) if deg[u] >= 2 else 0.0 for u in range(n)]

    dist = {tree.root: 0}
    frontier = [tree.root]
    while frontier:
        nxt = []
        for u in frontier:
            for c in tree.children[u]:
                if c not in dist:
                    dist[c] = dist[u] + 1
                    nxt.append(c)
        frontier = nxt

    return {
        "ast_node_count": float(n),
        "ast_edge_count": float(n_edges),
        "ast_avg_degree": 2.0 * n_edges / n if n else 0.0,
        "ast_max_degree": float(max(deg, default=0)),
        "ast_transitivity": transitivity,
        "ast_avg_clustering": sum(clustering) / n if n else 0.0,
        "ast_depth": float(max(dist.values())),
    }


def unit_features(unit: CodeUnit, algo_id: str) -> AlgoFeatureVector:
    avg_cc, n_blocks = cyclomatic(unit)
    volume, difficulty, effort = halstead(unit)
    return AlgoFeatureVector(
        algo_id=algo_id,
        sloc=float(unit.sloc),
        lloc=float(unit.lloc),
        average_cc_file=avg_cc,
        num_complexity_blocks=float(n_blocks),
        hal_volume=volume,
        hal_difficulty=difficulty,
        hal_effort=effort,
        **ast_graph_metrics(unit.tree),
    )


def extract_features(
    path: str | Path, algo_id: str | None = None, profile: Profile | str = PYTHON, ast_json=None
) -> AlgoFeatureVector:
    path = Path(path)
    return unit_features(analyze_source(path, profile, ast_json), algo_id or path.stem)


def portfolio_features(specs: Iterable, profile: Profile | str = PYTHON) -> list[AlgoFeatureVector]:
    return [extract_features(s.source_path, s.algo_id, profile) for s in specs]


# manifest -----------------------------------------------------------------

def validate(vec: AlgoFeatureVector, where: str = "") -> AlgoFeatureVector:
    prefix = f"{where}: " if where else ""
    for name in FEATURE_NAMES:
        v = getattr(vec, name)
        if not math.isfinite(v) or v < 0:
            raise ValidationError(f"{prefix}{name} = {v!r} must be finite and >= 0")
    if vec.lloc > vec.sloc:
        raise ValidationError(f"{prefix}lloc {vec.lloc} exceeds sloc {vec.sloc}")
    for name in ("ast_transitivity", "ast_avg_clustering"):
        if getattr(vec, name) > 1:
            raise ValidationError(f"{prefix}{name} must lie in [0, 1]")
    expected = vec.hal_difficulty * vec.hal_volume
    if not math.isclose(vec.hal_effort, expected, rel_tol=1e-9, abs_tol=1e-12):
        raise ValidationError(
            f"{prefix}hal_effort {vec.hal_effort!r} != hal_difficulty * hal_volume ({expected!r})"
        )
    return vec


def write_feature_manifest(path: str | Path, vectors: Sequence[AlgoFeatureVector]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["algo_id", *FEATURE_NAMES])
        for v in vectors:
            w.writerow([v.algo_id, *(repr(float(x)) for x in v.values())])


def load_feature_manifest(path: str | Path) -> list[AlgoFeatureVector]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = ({"algo_id"} | set(FEATURE_NAMES)) - header
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        out, seen = [], set()
        for lineno, rec in enumerate(reader, start=2):
            where = f"{path} line {lineno} ({rec['algo_id']})"
            try:
                values = {n: float(rec[n]) for n in FEATURE_NAMES}
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: {exc}") from None
            if rec["algo_id"] in seen:
                raise ValidationError(f"{where}: duplicate algo_id")
            seen.add(rec["algo_id"])
            out.append(validate(AlgoFeatureVector(rec["algo_id"], **values), where))
    return out
