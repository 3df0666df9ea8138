"""Perfect K-ary tree arena.

The tree is stored as flat numpy arrays over a breadth-first node numbering
(root is 0, the K children of node ``i`` are ``K*i + 1 .. K*i + K`` in
routing-index order), so node ids are stable across runs and serialize
byte-identically.  Inner nodes occupy ids ``0 .. n_inner-1`` and leaves
``n_inner .. n_nodes-1``.

Full subtrees (every kept inner node keeps all K children, all rooted at the
root) are the latent trees of the mixture model; :func:`enumerate_subtrees`
lists all of them and is the oracle substrate for every tree-sum check in the
test suite.  It is capped because the count grows doubly exponentially in the
depth; the production recursions never enumerate.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ParameterDomainError


def subtree_count(K: int, D: int) -> int:
    """Number of full subtrees of the perfect K-ary tree of depth D.

    Satisfies f(0) = 1 and f(d) = 1 + f(d-1)**K (a node is either a leaf of
    the subtree, or inner with an independent choice below each child).
    Exact integer arithmetic; the result overflows float64 quickly.
    """
    f = 1
    for _ in range(D):
        f = 1 + f**K
    return f


@dataclass(frozen=True)
class TreeShape:
    """Immutable arena for the perfect K-ary tree of depth D.

    Attributes
    ----------
    K, D      : branching factor and depth.
    n_nodes   : (K**(D+1) - 1) // (K - 1)
    n_inner   : (K**D - 1) // (K - 1); inner ids are 0 .. n_inner-1.
    n_leaves  : K**D; leaf ids are n_inner .. n_nodes-1.
    parent    : int64[n_nodes]; -1 for the root.
    depth     : int64[n_nodes]; 0 at the root, D at every leaf.
    children  : int64[n_inner, K]; children[s, k] is the k-th child of s.
    """

    K: int
    D: int
    n_nodes: int
    n_inner: int
    n_leaves: int
    parent: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)
    children: np.ndarray = field(repr=False)

    def is_inner(self, s: int) -> bool:
        return 0 <= s < self.n_inner

    def is_leaf(self, s: int) -> bool:
        return self.n_inner <= s < self.n_nodes

    def check_node(self, s) -> int:
        s = int(s)
        if not 0 <= s < self.n_nodes:
            raise ParameterDomainError(
                f"node id {s} out of range [0, {self.n_nodes})"
            )
        return s

    def ancestors(self, s: int):
        """Strict ancestors of s, root first."""
        chain = []
        s = self.check_node(s)
        while self.parent[s] >= 0:
            s = int(self.parent[s])
            chain.append(s)
        return chain[::-1]

    def nodes_by_depth(self, d: int) -> np.ndarray:
        """Ids of all nodes at depth d (contiguous under BFS numbering)."""
        if not 0 <= d <= self.D:
            raise ParameterDomainError(f"depth {d} out of range [0, {self.D}]")
        start = (self.K**d - 1) // (self.K - 1)
        return np.arange(start, start + self.K**d, dtype=np.int64)


def build_tree(K: int, D: int) -> TreeShape:
    """Build the perfect K-ary tree of depth D with BFS node numbering.

    Rejects K < 2 and D < 1: a root-only tree has no routing path, and a
    unary tree has no stick to break.
    """
    if int(K) != K or K < 2:
        raise ParameterDomainError(f"branching factor K must be an integer >= 2, got {K!r}")
    if int(D) != D or D < 1:
        raise ParameterDomainError(f"depth D must be an integer >= 1, got {D!r}")
    K, D = int(K), int(D)

    n_inner = (K**D - 1) // (K - 1)
    n_leaves = K**D
    n_nodes = n_inner + n_leaves

    ids = np.arange(n_nodes, dtype=np.int64)
    parent = (ids - 1) // K
    parent[0] = -1

    depth = np.zeros(n_nodes, dtype=np.int64)
    for d in range(1, D + 1):
        start = (K**d - 1) // (K - 1)
        depth[start : start + K**d] = d

    children = 1 + K * ids[:n_inner, None] + np.arange(K, dtype=np.int64)[None, :]

    return TreeShape(
        K=K, D=D, n_nodes=n_nodes, n_inner=n_inner, n_leaves=n_leaves,
        parent=parent, depth=depth, children=children,
    )


def is_ancestor_or_self(shape: TreeShape, a, b) -> bool:
    """True iff a is an ancestor of b or a == b."""
    a = shape.check_node(a)
    b = shape.check_node(b)
    while shape.depth[b] > shape.depth[a]:
        b = int(shape.parent[b])
    return a == b


def leaf_for_path(shape: TreeShape, z) -> int:
    """Leaf reached by following child indices z[0], ..., z[D-1] from the root."""
    z = np.asarray(z, dtype=np.int64)
    if z.shape != (shape.D,):
        raise ParameterDomainError(
            f"path must have length D={shape.D}, got shape {z.shape}"
        )
    if np.any(z < 0) or np.any(z >= shape.K):
        raise ParameterDomainError(
            f"path entries must lie in [0, {shape.K}), got {z.tolist()}"
        )
    s = 0
    for k in z:
        s = int(shape.children[s, k])
    return s


def path_nodes(shape: TreeShape, z) -> np.ndarray:
    """All D+1 nodes on the root-to-leaf path of z, root first."""
    z = np.asarray(z, dtype=np.int64)
    out = np.empty(shape.D + 1, dtype=np.int64)
    out[0] = 0
    s = 0
    for d, k in enumerate(z):
        s = int(shape.children[s, k])
        out[d + 1] = s
    return out


@dataclass(frozen=True)
class FullSubtree:
    """Membership mask of one full subtree of a :class:`TreeShape`.

    Every included inner node includes all K children; the root is always
    included.  ``inner`` / ``leaves`` are the inner and leaf node ids *of the
    subtree* (a subtree leaf may be an inner node of the ambient tree).
    """

    member: np.ndarray

    def inner(self, shape: TreeShape) -> np.ndarray:
        m = self.member
        out = []
        for s in range(shape.n_inner):
            if m[s] and m[shape.children[s, 0]]:
                out.append(s)
        return np.asarray(out, dtype=np.int64)

    def leaves(self, shape: TreeShape) -> np.ndarray:
        m = self.member
        out = []
        for s in np.flatnonzero(m):
            s = int(s)
            if s >= shape.n_inner or not m[shape.children[s, 0]]:
                out.append(s)
        return np.asarray(out, dtype=np.int64)

    def validate(self, shape: TreeShape) -> None:
        """Raise ParameterDomainError unless the mask is a full subtree."""
        m = np.asarray(self.member, dtype=bool)
        if m.shape != (shape.n_nodes,):
            raise ParameterDomainError("membership mask has wrong length")
        if not m[0]:
            raise ParameterDomainError("full subtree must contain the root")
        for s in range(shape.n_inner):
            kids = m[shape.children[s]]
            if m[s]:
                if kids.any() and not kids.all():
                    raise ParameterDomainError(
                        f"inner node {s} keeps only some of its children"
                    )
            elif kids.any():
                raise ParameterDomainError(
                    f"node {int(shape.children[s][kids.argmax()])} lacks its parent {s}"
                )


def enumerate_subtrees(shape: TreeShape, cap: int = 1_000_000):
    """All full subtrees of ``shape``, exactly once each.

    Oracle-only: refuses with :class:`CapacityError` when the exact count
    f(D) exceeds ``cap``.  Order is deterministic (root-only first, then
    lexicographic in the per-child choices).
    """
    total = subtree_count(shape.K, shape.D)
    if total > cap:
        raise CapacityError(
            f"{total} full subtrees at K={shape.K}, D={shape.D} "
            f"exceeds the enumeration cap of {cap}"
        )

    def expand(s: int):
        # All full subtrees of the descendant cone of s, as node-id tuples.
        if shape.is_leaf(s):
            return [(s,)]
        opts = [(s,)]
        per_child = [expand(int(c)) for c in shape.children[s]]
        idx = [0] * shape.K
        while True:
            combo = (s,)
            for k in range(shape.K):
                combo = combo + per_child[k][idx[k]]
            opts.append(combo)
            k = shape.K - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] < len(per_child[k]):
                    break
                idx[k] = 0
                k -= 1
            if k < 0:
                break
        return opts

    out = []
    for combo in expand(0):
        m = np.zeros(shape.n_nodes, dtype=bool)
        m[list(combo)] = True
        out.append(FullSubtree(member=m))
    return out
