"""First-order types, subtype lattice, signature unification, and indexing.

The type language is deliberately small: base types (``int``, ``float``,
``table``, ...), invariant constructors of fixed arity (``list[float]``,
``tuple[list[?T], ?T]``), and type variables (``?T``).  Subtyping is a partial
order over base types only; constructors never vary in their arguments.

Tool signatures unify against *ground* goals with contravariant inputs (a tool
may accept a supertype of what the goal supplies) and a covariant output (it
may deliver a subtype of what the goal demands).  ``input_mode="exact"``
switches inputs to exact matching for A/B comparisons.

Two lookup structures accelerate the candidate scan: a bucket map keyed by
erased ground signatures, and a trie over constructor skeletons for
polymorphic signatures.  Lookup results are always re-verified with ``unify``,
so they equal the brute-force scan by construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field


class TypeSystemError(Exception):
    pass


class MalformedType(TypeSystemError):
    """Raised by the parser; carries the character position of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownConstructorArity(TypeSystemError):
    pass


class NonGroundTerm(TypeSystemError):
    pass


class NonGroundGoal(TypeSystemError):
    pass


class DuplicateToolId(TypeSystemError):
    pass


class LatticeCycle(TypeSystemError):
    pass


# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class BaseType:
    name: str


@dataclass(frozen=True)
class TypeVar:
    id: str


@dataclass(frozen=True)
class Constructor:
    name: str
    args: tuple["TypeTerm", ...]


TypeTerm = BaseType | TypeVar | Constructor


def is_ground(term: TypeTerm) -> bool:
    if isinstance(term, TypeVar):
        return False
    if isinstance(term, Constructor):
        return all(is_ground(a) for a in term.args)
    return True


def type_vars(term: TypeTerm) -> list[str]:
    """Variable ids in first-occurrence (preorder) order."""
    out: list[str] = []

    def walk(t: TypeTerm) -> None:
        if isinstance(t, TypeVar):
            if t.id not in out:
                out.append(t.id)
        elif isinstance(t, Constructor):
            for a in t.args:
                walk(a)

    walk(term)
    return out


def format_type(term: TypeTerm) -> str:
    if isinstance(term, BaseType):
        return term.name
    if isinstance(term, TypeVar):
        return f"?{term.id}"
    inner = ", ".join(format_type(a) for a in term.args)
    return f"{term.name}[{inner}]"


@dataclass(frozen=True)
class Signature:
    inputs: tuple[TypeTerm, ...]
    output: TypeTerm

    def is_ground(self) -> bool:
        return all(is_ground(t) for t in self.inputs) and is_ground(self.output)

    def vars(self) -> list[str]:
        out: list[str] = []
        for t in (*self.inputs, self.output):
            for v in type_vars(t):
                if v not in out:
                    out.append(v)
        return out


def format_signature(sig: Signature) -> str:
    ins = ", ".join(format_type(t) for t in sig.inputs)
    return f"({ins}) -> {format_type(sig.output)}"


def erased_key(sig: Signature) -> str:
    """Signature with every TypeVar replaced by a wildcard; the index-equality
    key (two signatures are index-equal iff these strings are equal)."""

    def erase(t: TypeTerm) -> str:
        if isinstance(t, TypeVar):
            return "?"
        if isinstance(t, BaseType):
            return t.name
        return f"{t.name}[{', '.join(erase(a) for a in t.args)}]"

    ins = ", ".join(erase(t) for t in sig.inputs)
    return f"({ins}) -> {erase(sig.output)}"


# ---------------------------------------------------------------------------
# parsing


_DEFAULT_CTOR_ARITIES: dict[str, int | None] = {"list": 1}


class _Parser:
    def __init__(self, text: str, ctor_arities: dict[str, int | None] | None):
        self.text = text
        self.pos = 0
        self.arities = _DEFAULT_CTOR_ARITIES if ctor_arities is None else ctor_arities

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            raise MalformedType(f"expected {ch!r}", self.pos)
        self.pos += 1

    def ident(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] == "_"
        ):
            self.pos += 1
        if self.pos == start:
            raise MalformedType("expected identifier", start)
        return self.text[start:self.pos]

    def term(self) -> TypeTerm:
        self.skip_ws()
        if self.peek() == "?":
            self.pos += 1
            return TypeVar(self.ident())
        name = self.ident()
        self.skip_ws()
        if self.peek() != "[":
            return BaseType(name)
        self.pos += 1
        args = [self.term()]
        self.skip_ws()
        while self.peek() == ",":
            self.pos += 1
            args.append(self.term())
            self.skip_ws()
        self.expect("]")
        declared = self.arities.get(name, -1)
        if declared is not None and declared >= 0 and declared != len(args):
            raise UnknownConstructorArity(
                f"constructor {name!r} declared with arity {declared}, applied to {len(args)}"
            )
        return Constructor(name, tuple(args))

    def signature(self) -> Signature:
        self.skip_ws()
        inputs: list[TypeTerm] = []
        self.expect("(")
        self.skip_ws()
        if self.peek() != ")":
            inputs.append(self.term())
            self.skip_ws()
            while self.peek() == ",":
                self.pos += 1
                inputs.append(self.term())
                self.skip_ws()
        self.expect(")")
        self.skip_ws()
        if not self.text.startswith("->", self.pos):
            raise MalformedType("expected '->'", self.pos)
        self.pos += 2
        out = self.term()
        self.skip_ws()
        if self.pos != len(self.text):
            raise MalformedType("trailing input", self.pos)
        return Signature(tuple(inputs), out)

    def whole_term(self) -> TypeTerm:
        t = self.term()
        self.skip_ws()
        if self.pos != len(self.text):
            raise MalformedType("trailing input", self.pos)
        return t


def parse_type(text: str, ctor_arities: dict[str, int | None] | None = None) -> TypeTerm:
    """Parse ``base | ctor '[' type (',' type)* ']' | '?'ident``.

    Whitespace-insensitive; round-trips with :func:`format_type`.  Registered
    constructor arities are enforced (``None`` means variadic); unregistered
    constructors are accepted at any arity -- the alphabet is open.
    """
    return _Parser(text, ctor_arities).whole_term()


def parse_signature(text: str, ctor_arities: dict[str, int | None] | None = None) -> Signature:
    """Parse ``(t1, t2, ...) -> t``; the input list may be empty."""
    return _Parser(text, ctor_arities).signature()


# ---------------------------------------------------------------------------
# lattice


class SubtypeLattice:
    """Reflexive-transitive closure of declared base-type edges.

    Edges are (sub, super) pairs over base-type names.  The declared relation
    must be acyclic apart from reflexivity; anything not reachable is
    unrelated.  The default lattice declares int <: float and nothing else.
    """

    def __init__(self, edges: set[tuple[str, str]] | frozenset[tuple[str, str]] = frozenset()):
        self.edges = frozenset(edges)
        ups: dict[str, set[str]] = {}
        for sub, sup in self.edges:
            ups.setdefault(sub, set()).add(sup)
            ups.setdefault(sup, set())
        # transitive closure by repeated expansion; lattices are tiny
        changed = True
        while changed:
            changed = False
            for name, sups in ups.items():
                extra = set()
                for s in sups:
                    extra |= ups.get(s, set())
                if not extra <= sups:
                    sups |= extra
                    changed = True
        for name, sups in ups.items():
            if name in sups:
                raise LatticeCycle(f"subtype cycle through {name!r}")
        self._ups = {k: frozenset(v) for k, v in ups.items()}
        downs: dict[str, set[str]] = {k: set() for k in ups}
        for sub, sups in ups.items():
            for sup in sups:
                downs.setdefault(sup, set()).add(sub)
        self._downs = {k: frozenset(v) for k, v in downs.items()}

    def is_sub(self, a: str, b: str) -> bool:
        return a == b or b in self._ups.get(a, frozenset())

    def supertypes(self, name: str) -> frozenset[str]:
        """name plus everything above it."""
        return frozenset({name}) | self._ups.get(name, frozenset())

    def subtypes(self, name: str) -> frozenset[str]:
        return frozenset({name}) | self._downs.get(name, frozenset())

    def related(self, name: str) -> frozenset[str]:
        return self.supertypes(name) | self.subtypes(name)

    def join(self, names: set[str]) -> str | None:
        """Least upper bound of a non-empty set of base names, or None.

        Returns the unique minimal common supertype; ambiguous joins (two
        incomparable minimal upper bounds) yield None.
        """
        it = iter(names)
        common = set(self.supertypes(next(it)))
        for n in it:
            common &= self.supertypes(n)
        if not common:
            return None
        minimal = [c for c in common if not any(self.is_sub(o, c) and o != c for o in common)]
        return minimal[0] if len(minimal) == 1 else None


def default_lattice() -> SubtypeLattice:
    return SubtypeLattice({("int", "float")})


def subtype(a: TypeTerm, b: TypeTerm, lattice: SubtypeLattice) -> bool:
    """Ground subtype check: equality, a base-lattice edge, or the same
    constructor with pairwise *equal* arguments (invariance).  Raises
    NonGroundTerm when either side has variables."""
    if not is_ground(a) or not is_ground(b):
        raise NonGroundTerm(f"subtype over non-ground terms: {format_type(a)}, {format_type(b)}")
    if a == b:
        return True
    if isinstance(a, BaseType) and isinstance(b, BaseType):
        return lattice.is_sub(a.name, b.name)
    if isinstance(a, Constructor) and isinstance(b, Constructor):
        return a.name == b.name and a.args == b.args
    return False


# ---------------------------------------------------------------------------
# unification


@dataclass(frozen=True)
class UnifyResult:
    success: bool
    substitution: dict[str, TypeTerm] = field(default_factory=dict)
    reason: str = ""

    def __bool__(self) -> bool:
        return self.success


def apply_substitution(term: TypeTerm, subst: dict[str, TypeTerm]) -> TypeTerm:
    if isinstance(term, TypeVar):
        return subst.get(term.id, term)
    if isinstance(term, Constructor):
        return Constructor(term.name, tuple(apply_substitution(a, subst) for a in term.args))
    return term


_CONTRA, _CO, _EXACT = "contra", "co", "exact"


def unify(
    candidate: Signature,
    goal: Signature,
    lattice: SubtypeLattice,
    input_mode: str = "contravariant",
) -> UnifyResult:
    """Match a (possibly polymorphic) candidate signature against a ground goal.

    Succeeds iff arities agree and there is a substitution sigma with
    sigma(input_i) a supertype of the goal's input_i for every position
    (contravariant acceptance; exact equality under ``input_mode="exact"``)
    and sigma(output) a subtype of the goal's output (covariant delivery).
    Constructors are invariant, so variables inside them bind exactly.

    Deterministic: variables resolve in first-occurrence order (inputs then
    output); a bare input var takes the least upper bound of the goal types it
    must accept, a bare output var takes the goal output.  The result carries
    the substitution; failure carries a reason.
    """
    if not goal.is_ground():
        raise NonGroundGoal(format_signature(goal))
    if input_mode not in ("contravariant", "exact"):
        raise ValueError(f"unknown input_mode {input_mode!r}")
    if len(candidate.inputs) != len(goal.inputs):
        return UnifyResult(False, reason="arity mismatch")

    order: list[str] = []
    eq: dict[str, list[TypeTerm]] = {}
    lower: dict[str, list[TypeTerm]] = {}
    upper: dict[str, list[TypeTerm]] = {}

    def note(store: dict[str, list[TypeTerm]], var: str, term: TypeTerm) -> None:
        if var not in order:
            order.append(var)
        store.setdefault(var, []).append(term)

    def collect(cand: TypeTerm, g: TypeTerm, polarity: str) -> str | None:
        """Accumulate constraints; return a failure reason or None."""
        if isinstance(cand, TypeVar):
            note({_CONTRA: lower, _CO: upper, _EXACT: eq}[polarity], cand.id, g)
            return None
        if isinstance(cand, BaseType):
            if not isinstance(g, BaseType):
                return f"{format_type(cand)} vs {format_type(g)}"
            ok = (
                cand.name == g.name
                if polarity == _EXACT
                else lattice.is_sub(g.name, cand.name)
                if polarity == _CONTRA
                else lattice.is_sub(cand.name, g.name)
            )
            return None if ok else f"{format_type(cand)} vs {format_type(g)}"
        if not isinstance(g, Constructor) or g.name != cand.name or len(g.args) != len(cand.args):
            return f"{format_type(cand)} vs {format_type(g)}"
        for ca, ga in zip(cand.args, g.args):
            fail = collect(ca, ga, _EXACT)  # invariant arguments
            if fail:
                return fail
        return None

    in_polarity = _EXACT if input_mode == "exact" else _CONTRA
    for ci, gi in zip(candidate.inputs, goal.inputs):
        fail = collect(ci, gi, in_polarity)
        if fail:
            return UnifyResult(False, reason=f"input: {fail}")
    fail = collect(candidate.output, goal.output, _CO)
    if fail:
        return UnifyResult(False, reason=f"output: {fail}")

    subst: dict[str, TypeTerm] = {}
    for var in order:
        eqs, lbs, ubs = eq.get(var, []), lower.get(var, []), upper.get(var, [])
        if eqs:
            bound = eqs[0]
            if any(t != bound for t in eqs[1:]):
                return UnifyResult(False, reason=f"?{var} bound to conflicting terms")
        elif lbs:
            if all(isinstance(t, BaseType) for t in lbs):
                j = lattice.join({t.name for t in lbs})  # type: ignore[union-attr]
                if j is None:
                    return UnifyResult(False, reason=f"?{var} has no unique join")
                bound = BaseType(j)
            else:
                bound = lbs[0]
                if any(t != bound for t in lbs[1:]):
                    return UnifyResult(False, reason=f"?{var} bound to conflicting terms")
        else:
            bound = ubs[0]
        subst[var] = bound

    # post-hoc verification: the deterministic choice must actually satisfy
    # the variance conditions (joins interact with upper bounds).
    for ci, gi in zip(candidate.inputs, goal.inputs):
        si = apply_substitution(ci, subst)
        ok = si == gi if input_mode == "exact" else subtype(gi, si, lattice)
        if not ok:
            return UnifyResult(False, reason=f"input check: {format_type(si)} vs {format_type(gi)}")
    so = apply_substitution(candidate.output, subst)
    if not subtype(so, goal.output, lattice):
        return UnifyResult(False, reason=f"output check: {format_type(so)} vs {format_type(goal.output)}")
    return UnifyResult(True, substitution=subst)


def alpha_equivalent(a: Signature, b: Signature) -> bool:
    """True iff the signatures are equal up to a bijective variable renaming
    (the dedup notion of 'mutually unify with empty-or-renaming sigma')."""
    fwd: dict[str, str] = {}
    bwd: dict[str, str] = {}

    def walk(x: TypeTerm, y: TypeTerm) -> bool:
        if isinstance(x, TypeVar) and isinstance(y, TypeVar):
            if fwd.setdefault(x.id, y.id) != y.id:
                return False
            if bwd.setdefault(y.id, x.id) != x.id:
                return False
            return True
        if isinstance(x, BaseType) and isinstance(y, BaseType):
            return x.name == y.name
        if isinstance(x, Constructor) and isinstance(y, Constructor):
            return (
                x.name == y.name
                and len(x.args) == len(y.args)
                and all(walk(p, q) for p, q in zip(x.args, y.args))
            )
        return False

    if len(a.inputs) != len(b.inputs):
        return False
    return all(walk(p, q) for p, q in zip(a.inputs, b.inputs)) and walk(a.output, b.output)


# ---------------------------------------------------------------------------
# index


_VAR_TOKEN = ("?",)


def _tokens(sig: Signature) -> list[tuple]:
    out: list[tuple] = [("sig", len(sig.inputs))]

    def walk(t: TypeTerm) -> None:
        if isinstance(t, TypeVar):
            out.append(_VAR_TOKEN)
        elif isinstance(t, BaseType):
            out.append(("b", t.name))
        else:
            out.append(("c", t.name, len(t.args)))
            for a in t.args:
                walk(a)

    for t in sig.inputs:
        walk(t)
    walk(sig.output)
    return out


def _subtree_spans(tokens: list[tuple]) -> list[int]:
    """spans[i] = number of tokens in the subtree rooted at token i."""
    spans = [1] * len(tokens)

    def measure(i: int) -> int:
        tok = tokens[i]
        width = 1
        if tok[0] == "c":
            j = i + 1
            for _ in range(tok[2]):
                w = measure(j)
                width += w
                j += w
        elif tok[0] == "sig":
            j = i + 1
            for _ in range(tok[1] + 1):
                w = measure(j)
                width += w
                j += w
        spans[i] = width
        return width

    if tokens:
        measure(0)
    return spans


class _TrieNode:
    __slots__ = ("edges", "ids")

    def __init__(self) -> None:
        self.edges: dict[tuple, _TrieNode] = {}
        self.ids: set[str] = set()


class SignatureIndex:
    """Erased-signature buckets for ground tools plus a constructor-skeleton
    trie for polymorphic ones.  Insertion is O(signature size); ground lookup
    probes the lattice-compatible buckets and walks the trie, then re-verifies
    every candidate with ``unify`` so results exactly equal a full scan."""

    def __init__(self) -> None:
        self.ground_buckets: dict[str, set[str]] = {}
        self._root = _TrieNode()
        self._signatures: dict[str, Signature] = {}

    def __len__(self) -> int:
        return len(self._signatures)

    def signature_of(self, tool_id: str) -> Signature:
        return self._signatures[tool_id]

    def insert(self, sig: Signature, tool_id: str) -> None:
        if tool_id in self._signatures:
            raise DuplicateToolId(tool_id)
        self._signatures[tool_id] = sig
        if sig.is_ground():
            self.ground_buckets.setdefault(erased_key(sig), set()).add(tool_id)
            return
        node = self._root
        for tok in _tokens(sig):
            tok = _VAR_TOKEN if tok[0] == "?" else tok
            node = node.edges.setdefault(tok, _TrieNode())
        node.ids.add(tool_id)

    def equivalents(self, sig: Signature) -> set[str]:
        """Ids whose erased skeleton equals sig's (the dedup pre-filter)."""
        if sig.is_ground():
            return set(self.ground_buckets.get(erased_key(sig), set()))
        node = self._root
        for tok in _tokens(sig):
            tok = _VAR_TOKEN if tok[0] == "?" else tok
            nxt = node.edges.get(tok)
            if nxt is None:
                return set()
            node = nxt
        return set(node.ids)

    def lookup(
        self,
        goal: Signature,
        lattice: SubtypeLattice,
        input_mode: str = "contravariant",
    ) -> tuple[list[str], int]:
        """All tool ids whose signature unifies with the ground goal, sorted,
        plus the number of index nodes visited (bucket probes + trie nodes)."""
        if not goal.is_ground():
            raise NonGroundGoal(format_signature(goal))
        visits = 0
        candidates: set[str] = set()

        # ground buckets: enumerate the lattice-variant erased signatures
        def variants(term: TypeTerm, names: "frozenset[str] | None" = None) -> list[TypeTerm]:
            if isinstance(term, BaseType) and names is not None:
                return [BaseType(n) for n in sorted(names)]
            return [term]

        per_input = []
        for t in goal.inputs:
            ups = lattice.supertypes(t.name) if isinstance(t, BaseType) and input_mode != "exact" else None
            per_input.append(variants(t, ups))
        downs = lattice.subtypes(goal.output.name) if isinstance(goal.output, BaseType) else None
        out_variants = variants(goal.output, downs)
        for combo in itertools.product(*per_input, out_variants):
            key = erased_key(Signature(tuple(combo[:-1]), combo[-1]))
            visits += 1
            candidates |= self.ground_buckets.get(key, set())

        # polymorphic trie walk; wildcard edges skip the goal subtree
        tokens = _tokens(goal)
        spans = _subtree_spans(tokens)
        stack: list[tuple[_TrieNode, int]] = [(self._root, 0)]
        while stack:
            node, i = stack.pop()
            visits += 1
            if i == len(tokens):
                candidates |= node.ids
                continue
            tok = tokens[i]
            nxt = node.edges.get(tok)
            if nxt is not None:
                stack.append((nxt, i + 1))
            if tok[0] == "b":
                for other in lattice.related(tok[1]):
                    if other != tok[1]:
                        alt = node.edges.get(("b", other))
                        if alt is not None:
                            stack.append((alt, i + 1))
            if i > 0:  # the sig-root token cannot be a variable
                wild = node.edges.get(_VAR_TOKEN)
                if wild is not None:
                    stack.append((wild, i + spans[i]))

        hits = [
            tid
            for tid in candidates
            if unify(self._signatures[tid], goal, lattice, input_mode).success
        ]
        return sorted(hits), visits


def index_insert(index: SignatureIndex, sig: Signature, tool_id: str) -> None:
    index.insert(sig, tool_id)


def index_lookup(
    index: SignatureIndex,
    goal: Signature,
    lattice: SubtypeLattice,
    input_mode: str = "contravariant",
) -> list[str]:
    ids, _ = index.lookup(goal, lattice, input_mode)
    return ids
