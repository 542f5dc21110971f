"""256-case marching-cubes table generated from a label-independent face rule.

Corner numbering: 0 (0,0,0), 1 (1,0,0), 2 (1,1,0), 3 (0,1,0), 4 (0,0,1), 5 (1,0,1),
6 (1,1,1), 7 (0,1,1). Edge e joins corners EDGE_CORNERS[e]. A case index sets bit c
when corner c is inside (back). Each row lists edge triples, one per triangle,
wound so the right-hand normal points toward the outside (front) corners.

On a face with four crossing edges the two corners on the diagonal through the
face's lowest corner stay connected and the other two are cut off. The rule
ignores labels, so a case and its complement produce the same segments, and two
cells sharing a face resolve it identically. Segments chain into closed loops
that are fanned from their smallest edge index; complementary cases therefore
give the same triangles with reversed winding.
"""

import numpy as np

CORNERS = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])

EDGE_CORNERS = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)

_MID = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b in EDGE_CORNERS])


def _faces():
    out = []
    for axis in range(3):
        for value in (0, 1):
            corners = [c for c in range(8) if CORNERS[c, axis] == value]
            edges = [e for e, (a, b) in enumerate(EDGE_CORNERS) if a in corners and b in corners]
            normal = np.zeros(3)
            normal[axis] = 2 * value - 1
            out.append((corners, edges, normal))
    return out


_FACES = _faces()


def _segments(inside):
    segs = []
    for corners, edges, normal in _FACES:
        cross = [e for e in edges if inside[EDGE_CORNERS[e][0]] != inside[EDGE_CORNERS[e][1]]]
        if len(cross) == 2:
            segs.append(tuple(cross))
        elif len(cross) == 4:
            low = min(corners, key=lambda c: tuple(CORNERS[c]))
            high = max(corners, key=lambda c: tuple(CORNERS[c]))
            for c in corners:
                if c not in (low, high):
                    segs.append(tuple(e for e in edges if c in EDGE_CORNERS[e]))
    oriented = []
    for p, q in segs:
        # the outside endpoint of p's edge must lie to the left of p -> q seen from outside
        a, b = EDGE_CORNERS[p]
        front = b if inside[a] else a
        normal = next(n for _, e, n in _FACES if p in e and q in e)
        s = normal @ np.cross(_MID[q] - _MID[p], CORNERS[front] - _MID[p])
        oriented.append((p, q) if s > 0 else (q, p))
    return oriented


def _case(index):
    inside = [(index >> c) & 1 for c in range(8)]
    nxt = dict(_segments(inside))
    tris = []
    while nxt:
        start = min(nxt)
        loop = [start]
        e = nxt.pop(start)
        while e != start:
            loop.append(e)
            e = nxt.pop(e)
        for i in range(1, len(loop) - 1):
            tris += [loop[0], loop[i], loop[i + 1]]
    return tuple(tris)


TRIANGLES = tuple(_case(i) for i in range(256))
