"""Linear-programming tests on polyhedra {x : A x <= b}."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog


def is_feasible(A, b) -> bool:
    A = np.atleast_2d(np.asarray(A, float))
    res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=np.asarray(b, float),
                  bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 0


def recession_unbounded_coords(A, b, coords) -> bool:
    """True when the (nonempty) polyhedron has a recession direction moving some coordinate in coords."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[1]
    if not is_feasible(A, b):
        return False
    for i in coords:
        for s in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -s
            res = linprog(c, A_ub=A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * n, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return True
    return False


def polyhedron_unbounded(A, b) -> bool:
    A = np.atleast_2d(np.asarray(A, float))
    return recession_unbounded_coords(A, b, range(A.shape[1]))


def recession_cone_nonzero_direction(A, direction_set=None):
    """A nonzero d with A d <= 0 (unit inf-norm) or None."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[1]
    for i in range(n):
        for s in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -s
            res = linprog(c, A_ub=A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * n, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return res.x
    return None
