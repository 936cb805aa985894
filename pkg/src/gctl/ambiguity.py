"""Volatility ambiguity sets and the sublinear function they generate.

An ambiguity set is the convex hull of finitely many symmetric PSD
covariance-rate matrices (its vertices).  The associated sublinear function

    G(A) = 1/2 * sup over the set of tr(A @ gamma)

is evaluated by vertex enumeration, exactly: the supremum of a linear
functional over a polytope is attained at a vertex.  The set is degenerate
when some matrix in it is singular; the solvers in this package are built
for that case.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NoNondegenerateComponent

SYM_TOL = 1e-12
PSD_TOL = 1e-10


class AmbiguitySet:
    """Finite-vertex representation of a bounded convex set of PSD matrices.

    Immutable after construction; every operation on it is pure.
    """

    def __init__(self, vertices):
        mats = [np.array(v, dtype=float) for v in vertices]
        if not mats:
            raise DimensionError("ambiguity set needs at least one vertex")
        d = mats[0].shape[0] if mats[0].ndim else 1
        clean = []
        for k, g in enumerate(mats):
            if g.ndim == 0:
                g = g.reshape(1, 1)
            if g.shape != (d, d):
                raise DimensionError(f"vertex {k} has shape {g.shape}, expected ({d}, {d})")
            if np.max(np.abs(g - g.T)) > SYM_TOL:
                raise DimensionError(f"vertex {k} is not symmetric within {SYM_TOL}")
            g = 0.5 * (g + g.T)
            if np.linalg.eigvalsh(g)[0] < -PSD_TOL:
                raise DimensionError(f"vertex {k} is not positive semidefinite")
            g.flags.writeable = False
            clean.append(g)
        self.dim_d = d
        self.vertices = tuple(clean)
        self._sqrts = None

    @classmethod
    def from_scalars(cls, values):
        """1-D convenience: vertices given as variance rates."""
        return cls([np.array([[float(v)]]) for v in values])

    def __repr__(self):
        return f"AmbiguitySet(d={self.dim_d}, vertices={len(self.vertices)})"

    @property
    def alpha(self):
        """Largest spectral norm over vertices (bounds the whole set)."""
        return max(float(np.linalg.norm(g, 2)) for g in self.vertices)

    @property
    def lambda_max(self):
        """Largest eigenvalue over vertices; stability bound for PDE stepping."""
        return max(float(np.linalg.eigvalsh(g)[-1]) for g in self.vertices)

    def sqrt_vertices(self):
        """Symmetric PSD square roots, eigenvalues clipped at zero.

        The clip handles rank-deficient vertices without special cases.
        """
        if self._sqrts is None:
            roots = []
            for g in self.vertices:
                w, q = np.linalg.eigh(g)
                w = np.where(w < SYM_TOL, 0.0, w)
                r = (q * np.sqrt(w)) @ q.T
                r.flags.writeable = False
                roots.append(r)
            self._sqrts = tuple(roots)
        return self._sqrts

    def vertex_array(self):
        return np.stack(self.vertices)


@dataclass(frozen=True)
class H3Certificate:
    """Witness that one Brownian component is non-degenerate.

    i_star is 1-based.  For every other component i, adding lambda_for[i]
    times component i_star yields a direction with strictly positive minimal
    variance rate; shifted_minima[i] records that minimum over vertices.
    """

    i_star: int
    sigma_low_sq_istar: float
    lambda_for: dict
    alpha: float
    shifted_minima: dict


def _check_matrix(S, A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.shape != (S.dim_d, S.dim_d):
        raise DimensionError(f"matrix shape {A.shape} does not match d={S.dim_d}")
    if np.max(np.abs(A - A.T)) > SYM_TOL:
        raise DimensionError(f"matrix is not symmetric within {SYM_TOL}")
    return A


def g_eval(S, A):
    """The sublinear function G(A) = 1/2 max over vertices of tr(A gamma)."""
    A = _check_matrix(S, A)
    return 0.5 * max(float(np.tensordot(A, g)) for g in S.vertices)


def directional_g(S, beta, a):
    """1-D sublinear function of the direction beta: G(bb')a+ + G(-bb')a-."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (S.dim_d,):
        raise DimensionError(f"direction has shape {beta.shape}, expected ({S.dim_d},)")
    bb = np.outer(beta, beta)
    a = float(a)
    return g_eval(S, bb) * max(a, 0.0) + g_eval(S, -bb) * max(-a, 0.0)


def directional_ambiguity(S, beta):
    """1-D ambiguity set of the scalar projection along beta.

    Its variance-rate range is [-2G(-bb'), 2G(bb')]; useful for evaluating
    expectations of directional payoffs when d exceeds the PDE grid limit.
    """
    beta = np.asarray(beta, dtype=float)
    bb = np.outer(beta, beta)
    hi = 2.0 * g_eval(S, bb)
    lo = -2.0 * g_eval(S, -bb)
    return AmbiguitySet.from_scalars([lo, hi])


def component_bounds(S):
    """Componentwise variance-rate bounds (sigma_bar_sq, sigma_low_sq)."""
    diags = np.stack([np.diag(g) for g in S.vertices])
    return diags.max(axis=0), diags.min(axis=0)


def is_degenerate(S):
    """Vertex-level degeneracy flag: some vertex has a near-zero eigenvalue.

    The minimum of the smallest eigenvalue over the hull is attained at a
    vertex (it is a concave function), so this decides degeneracy of the
    whole set.
    """
    return min(float(np.linalg.eigvalsh(g)[0]) for g in S.vertices) <= PSD_TOL


def check_h3(S):
    """Certify a non-degenerate component and the shifts covering the rest.

    Picks the smallest component index i* whose minimal variance rate over
    vertices is positive, and for every other component i the shift
    lambda = (2 alpha + 1) / sigma_low_sq[i*] making the combined direction
    e_i + lambda e_{i*} non-degenerate.  Positivity of the shifted quadratic
    form is re-verified by vertex enumeration before returning.
    """
    _, sigma_low_sq = component_bounds(S)
    qualifying = np.nonzero(sigma_low_sq > PSD_TOL)[0]
    if len(qualifying) == 0:
        raise NoNondegenerateComponent(
            "every Brownian component has zero minimal variance rate; "
            "the control problem is ill-posed in this regime"
        )
    i_star = int(qualifying[0])
    alpha = S.alpha
    lam = (2.0 * alpha + 1.0) / float(sigma_low_sq[i_star])
    lambda_for = {}
    shifted_minima = {}
    for i in range(S.dim_d):
        if i == i_star:
            continue
        vals = [
            float(g[i, i] + 2.0 * lam * g[i, i_star] + lam * lam * g[i_star, i_star])
            for g in S.vertices
        ]
        m = min(vals)
        if m <= 0.0:
            raise NoNondegenerateComponent(
                f"shift failed to make component {i + 1} non-degenerate (min {m})"
            )
        lambda_for[i + 1] = lam
        shifted_minima[i + 1] = m
    return H3Certificate(
        i_star=i_star + 1,
        sigma_low_sq_istar=float(sigma_low_sq[i_star]),
        lambda_for=lambda_for,
        alpha=alpha,
        shifted_minima=shifted_minima,
    )
