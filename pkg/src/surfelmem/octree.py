"""Octree over 3D points supporting insertion, removal, and radius queries.

Bounds grow lazily by re-rooting when a point falls outside the current cube,
so no scene extent needs to be declared up front. Query results always match
a brute-force linear scan; the tree is only an accelerator.
"""

from __future__ import annotations

MAX_LEAF = 32
MAX_DEPTH = 12


class _Node:
    __slots__ = ("cx", "cy", "cz", "half", "children", "items")

    def __init__(self, cx: float, cy: float, cz: float, half: float):
        self.cx = cx
        self.cy = cy
        self.cz = cz
        self.half = half
        self.children = None  # list of 8 nodes once split
        self.items = []  # (id, x, y, z) while a leaf

    def octant(self, x: float, y: float, z: float) -> int:
        i = 0
        if x > self.cx:
            i |= 4
        if y > self.cy:
            i |= 2
        if z > self.cz:
            i |= 1
        return i

    def child_for(self, index: int) -> "_Node":
        q = self.half * 0.5
        cx = self.cx + (q if index & 4 else -q)
        cy = self.cy + (q if index & 2 else -q)
        cz = self.cz + (q if index & 1 else -q)
        return _Node(cx, cy, cz, q)


class Octree:
    """Point index keyed by integer ids; ids are unique, points may coincide."""

    def __init__(self, initial_half: float = 1.0):
        self._root: _Node | None = None
        self._initial_half = float(initial_half)
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def insert(self, item_id: int, point) -> None:
        x, y, z = float(point[0]), float(point[1]), float(point[2])
        if self._root is None:
            self._root = _Node(x, y, z, self._initial_half)
        while not self._contains(self._root, x, y, z):
            self._grow_towards(x, y, z)
        node = self._root
        depth = 0
        while node.children is not None:
            node = node.children[node.octant(x, y, z)]
            depth += 1
        node.items.append((item_id, x, y, z))
        self._count += 1
        if len(node.items) > MAX_LEAF and depth < MAX_DEPTH:
            self._split(node)

    def remove(self, item_id: int, point) -> None:
        """Remove one id; the point must equal the one it was inserted with."""
        x, y, z = float(point[0]), float(point[1]), float(point[2])
        node = self._root
        if node is None:
            raise KeyError(item_id)
        while node.children is not None:
            node = node.children[node.octant(x, y, z)]
        for i, (iid, _, _, _) in enumerate(node.items):
            if iid == item_id:
                node.items.pop(i)
                self._count -= 1
                return
        raise KeyError(item_id)

    def query_radius(self, center, radius: float) -> list[int]:
        """Ids of all points within `radius` of `center`, ascending."""
        if radius < 0:
            raise ValueError("radius must be >= 0")
        if self._root is None:
            return []
        cx, cy, cz = float(center[0]), float(center[1]), float(center[2])
        r2 = float(radius) * float(radius)
        out: list[int] = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            dx = cx - max(node.cx - node.half, min(cx, node.cx + node.half))
            dy = cy - max(node.cy - node.half, min(cy, node.cy + node.half))
            dz = cz - max(node.cz - node.half, min(cz, node.cz + node.half))
            if dx * dx + dy * dy + dz * dz > r2:
                continue
            if node.children is not None:
                stack.extend(node.children)
                continue
            for iid, x, y, z in node.items:
                ex, ey, ez = x - cx, y - cy, z - cz
                if ex * ex + ey * ey + ez * ez <= r2:
                    out.append(iid)
        out.sort()
        return out

    def all_ids(self) -> list[int]:
        out: list[int] = []
        if self._root is None:
            return out
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node.children is not None:
                stack.extend(node.children)
            else:
                out.extend(iid for iid, _, _, _ in node.items)
        out.sort()
        return out

    @staticmethod
    def _contains(node: _Node, x: float, y: float, z: float) -> bool:
        return (
            abs(x - node.cx) <= node.half
            and abs(y - node.cy) <= node.half
            and abs(z - node.cz) <= node.half
        )

    def _grow_towards(self, x: float, y: float, z: float) -> None:
        # Double the cube away from the old root so the old root becomes a child.
        old = self._root
        sx = 1.0 if x >= old.cx else -1.0
        sy = 1.0 if y >= old.cy else -1.0
        sz = 1.0 if z >= old.cz else -1.0
        new_root = _Node(
            old.cx + sx * old.half,
            old.cy + sy * old.half,
            old.cz + sz * old.half,
            old.half * 2.0,
        )
        new_root.children = [new_root.child_for(i) for i in range(8)]
        slot = new_root.octant(old.cx, old.cy, old.cz)
        new_root.children[slot] = old
        self._root = new_root

    @staticmethod
    def _split(node: _Node) -> None:
        node.children = [node.child_for(i) for i in range(8)]
        for iid, x, y, z in node.items:
            node.children[node.octant(x, y, z)].items.append((iid, x, y, z))
        node.items = []
