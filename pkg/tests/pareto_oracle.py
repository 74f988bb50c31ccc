"""Brute-force pairwise dominance, written independently of the library."""


def dominates(a, b):
    """a, b: tuples already oriented so that smaller is better."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def brute_front(points):
    return [i for i, p in enumerate(points)
            if not any(dominates(q, p) for j, q in enumerate(points) if j != i)]
