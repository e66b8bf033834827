"""Hyper-reduction of the four parameter-dependent operators.

The stiffness and mass matrices are vectorized on their fixed union
patterns (stacked index N*(i-1)+j) and, together with the two right-hand
side vectors, compressed by a POD in the Euclidean inner product.  A greedy
procedure picks one interpolation entry per basis column; online, the
operators are recovered from a partial assembly on a small reduced mesh
that covers exactly the selected entries, at a cost independent of the
full-order dimension.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import AssemblyContext, SparsityPattern
from .errors import NumericalError
from .levelset import CUT, OUTSIDE, LevelSetSquare, subset_geometry
from .mesh import BackgroundMesh, FaceTable, vertex_to_elements

COMPONENTS = ("A", "M", "b", "c")


@dataclass
class OperatorSnapshots:
    """Vectorized operator values over the training sample.

    Matrix components live on their union pattern, vector components on the
    full DOF range; either way ``values`` has one column per parameter.
    """

    component: str
    params: np.ndarray
    values: np.ndarray                      # (n_entries, M)
    pattern: Optional[SparsityPattern]      # None for the vector components
    n: int                                  # DOF count


def collect_operator_snapshots(params, ctx: AssemblyContext,
                               center=(1.0, 1.0)) -> dict[str, OperatorSnapshots]:
    """Assemble all four components for every training parameter."""
    from .assembly import assemble_operators

    params = np.asarray(params, dtype=float)
    n = ctx.mesh.dof_count
    vals = {
        "A": np.zeros((ctx.pattern_A.nnz, params.size)),
        "M": np.zeros((ctx.pattern_M.nnz, params.size)),
        "b": np.zeros((n, params.size)),
        "c": np.zeros((n, params.size)),
    }
    for k, mu in enumerate(params):
        ops = assemble_operators(ctx, float(mu), center)
        vals["A"][:, k] = ops.a_values
        vals["M"][:, k] = ops.m_values
        vals["b"][:, k] = ops.b
        vals["c"][:, k] = ops.c
    pats = {"A": ctx.pattern_A, "M": ctx.pattern_M, "b": None, "c": None}
    return {comp: OperatorSnapshots(comp, params, vals[comp], pats[comp], n)
            for comp in COMPONENTS}


@dataclass
class DeimBasis:
    """Euclidean POD of an operator snapshot family."""

    U: np.ndarray                  # (n_entries, n_stored)
    eigenvalues: np.ndarray        # (M,) non-increasing
    m: int                         # energy cutoff at the build tolerance
    tolerance: float


def deim_basis(snaps: OperatorSnapshots, eps: float,
               min_stored: int = 0) -> DeimBasis:
    """Method of snapshots in the Euclidean inner product."""
    from .pod import energy_cutoff

    S = snaps.values
    m_snap = S.shape[1]
    if m_snap < 1:
        raise ValueError("need at least one operator snapshot")
    C = (S.T @ S) / m_snap
    C = 0.5 * (C + C.T)
    lam, X = np.linalg.eigh(C)
    lam = np.maximum(lam[::-1], 0.0)
    X = X[:, ::-1]
    if lam[0] <= 0.0:
        raise NumericalError(
            f"component {snaps.component}: all snapshots are zero")

    rank_tol = lam[0] * m_snap * np.finfo(float).eps
    n_pos = int(np.sum(lam > rank_tol))
    m = min(energy_cutoff(lam, eps), n_pos)
    n_store = min(max(m, min_stored), n_pos)
    U = S @ X[:, :n_store]
    U /= np.sqrt(m_snap * lam[:n_store])
    # Gram-Schmidt polish: trailing modes sit near the eigensolver noise floor
    for j in range(n_store):
        v = U[:, j]
        for _ in range(2):
            v -= U[:, :j] @ (U[:, :j].T @ v)
        U[:, j] = v / np.linalg.norm(v)
    return DeimBasis(U, lam, m, eps)


def deim_select(U: np.ndarray):
    """Greedy interpolation indices and the oblique projector U (P^T U)^-1.

    The first index maximizes |u_1|; each next one maximizes the residual of
    interpolating u_l at the indices found so far.  Ties resolve to the
    lowest index.  A residual that vanishes before all columns are used
    truncates the basis with a warning.
    """
    n, m = U.shape
    indices = np.empty(m, dtype=np.int64)
    indices[0] = int(np.argmax(np.abs(U[:, 0])))
    used = 1
    for ell in range(1, m):
        sub = U[indices[:used], :used]
        coef = np.linalg.solve(sub, U[indices[:used], ell])
        r = U[:, ell] - U[:, :used] @ coef
        pick = int(np.argmax(np.abs(r)))
        if r[pick] == 0.0:
            warnings.warn(
                f"rank-deficient interpolation basis truncated at {used}")
            break
        indices[ell] = pick
        used += 1
    indices = indices[:used]
    B = U[indices, :used]
    if not np.all(np.isfinite(np.linalg.cond(B))):
        raise NumericalError("interpolation system is singular")
    projector = np.linalg.solve(B.T, U[:, :used].T).T
    return indices, projector


def _pairs_of_indices(indices: np.ndarray,
                      pattern: Optional[SparsityPattern]) -> np.ndarray:
    """Map selected offsets to DOF pairs (matrices) or DOFs (vectors)."""
    if pattern is None:
        return np.asarray(indices, dtype=np.int64)
    return np.column_stack([pattern.rows[indices], pattern.cols[indices]])


def build_reduced_mesh(pairs: np.ndarray, mesh: BackgroundMesh,
                       face_table: FaceTable, component: str,
                       cut_candidate: Optional[np.ndarray] = None):
    """Smallest element set whose partial assembly covers all entries.

    An element joins when its DOF set contains both indices of a selected
    pair (or the single index for vector components).  For the stiffness
    component, pairs coupled only through a gradient-jump facet pull in
    that facet with both its neighbors, and every potential ghost facet of
    an included element is recorded with its across-facet neighbor so the
    online jump terms are complete for any parameter value.
    """
    indptr, v2e = vertex_to_elements(mesh)

    def elems_of(v: int) -> np.ndarray:
        return v2e[indptr[v]:indptr[v + 1]]

    elements: set[int] = set()
    facets: set[int] = set()
    pairs = np.atleast_1d(np.asarray(pairs, dtype=np.int64))

    if component in ("b", "c") or pairs.ndim == 1:
        for i in pairs.ravel():
            covering = elems_of(int(i))
            if covering.size == 0:
                raise NumericalError(
                    f"selected DOF {i} is covered by no element")
            elements.update(int(e) for e in covering)
    else:
        el = mesh.elements
        ft_dofs6 = np.concatenate(
            [el[face_table.face_left],
             el[np.maximum(face_table.face_right, 0)]], axis=1)
        interior = face_table.face_right >= 0
        for i, j in pairs:
            common = np.intersect1d(elems_of(int(i)), elems_of(int(j)))
            if common.size:
                elements.update(int(e) for e in common)
                continue
            if component != "A":
                raise NumericalError(
                    f"pair ({i}, {j}) shares no element (pattern bug)")
            near = np.unique(np.concatenate([elems_of(int(i)),
                                             elems_of(int(j))]))
            cand = np.unique(face_table.element_to_faces[near].ravel())
            cand = cand[interior[cand]]
            hit = cand[np.any(ft_dofs6[cand] == i, axis=1)
                       & np.any(ft_dofs6[cand] == j, axis=1)]
            if hit.size == 0:
                raise NumericalError(
                    f"pair ({i}, {j}) is covered by no element or facet")
            facets.update(int(f) for f in hit)
            elements.update(int(e) for e in face_table.face_left[hit])
            elements.update(int(e) for e in face_table.face_right[hit])

    if component == "A":
        if cut_candidate is None:
            cut_candidate = np.ones(mesh.n_elements, dtype=bool)
        for e in sorted(elements):
            for f in face_table.element_to_faces[e]:
                left, right = face_table.face_left[f], face_table.face_right[f]
                if right < 0:
                    continue
                if cut_candidate[left] or cut_candidate[right]:
                    facets.add(int(f))
                    elements.add(int(left))
                    elements.add(int(right))

    return (np.array(sorted(elements), dtype=np.int64),
            np.array(sorted(facets), dtype=np.int64))


@dataclass
class DeimModel:
    """Everything the online stage needs for one operator component."""

    component: str
    n: int
    pattern: Optional[SparsityPattern]
    U: np.ndarray                  # (n_entries, m)
    indices: np.ndarray            # (m,) offsets into the pattern / DOFs
    pairs: np.ndarray              # (m, 2) DOF pairs or (m,) DOFs
    projector: np.ndarray          # (n_entries, m) = U (P^T U)^-1
    reduced_elements: np.ndarray
    reduced_facets: np.ndarray
    eigenvalues: np.ndarray

    @property
    def m(self) -> int:
        return self.indices.size


def make_deim_model(U: np.ndarray, eigenvalues: np.ndarray, m: int,
                    component: str, pattern: Optional[SparsityPattern],
                    n: int, mesh: BackgroundMesh, face_table: FaceTable,
                    cut_candidate: Optional[np.ndarray] = None) -> DeimModel:
    """Select indices for the first m modes and detect the reduced mesh."""
    m = min(m, U.shape[1])
    indices, projector = deim_select(U[:, :m])
    pairs = _pairs_of_indices(indices, pattern)
    elements, facets = build_reduced_mesh(pairs, mesh, face_table,
                                          component, cut_candidate)
    return DeimModel(component, n, pattern, U[:, :indices.size].copy(),
                     indices, pairs, projector, elements, facets,
                     np.asarray(eigenvalues, dtype=float))


def model_from_snapshots(basis: DeimBasis, m: int, snaps: OperatorSnapshots,
                         mesh: BackgroundMesh, face_table: FaceTable,
                         cut_candidate: Optional[np.ndarray] = None) -> DeimModel:
    return make_deim_model(basis.U, basis.eigenvalues, m, snaps.component,
                           snaps.pattern, snaps.n, mesh, face_table,
                           cut_candidate)


def truncate_model(model: DeimModel, m: int, mesh: BackgroundMesh,
                   face_table: FaceTable,
                   cut_candidate: Optional[np.ndarray] = None) -> DeimModel:
    """Rebuild a model from the first m stored modes (m <= model.m)."""
    return make_deim_model(model.U, model.eigenvalues, m, model.component,
                           model.pattern, model.n, mesh, face_table,
                           cut_candidate)


class PartialAssembler:
    """Online partial assembly restricted to a model's reduced mesh.

    All index bookkeeping is precomputed; per parameter value only the
    subset classification, clipping and contribution streams are evaluated,
    so the cost scales with the reduced mesh and not with the mesh size.
    """

    def __init__(self, model: DeimModel, ctx: AssemblyContext,
                 center=(1.0, 1.0)):
        self.model = model
        self.ctx = ctx
        self.center = center
        self.elems = model.reduced_elements
        self.facets = model.reduced_facets
        self.coords = ctx.mesh.element_coords(self.elems)
        if model.pattern is not None:
            keys = model.pattern.keys[model.indices]
            order = np.argsort(keys)
            self.sorted_keys = keys[order]
            self.slot_of_sorted = order
        else:
            self.sel_dofs = model.pairs.astype(np.int64)

    def theta(self, mu: float) -> np.ndarray:
        """Selected operator entries, identical to a full assembly there."""
        model = self.model
        ctx = self.ctx
        sub = subset_geometry(ctx.mesh, LevelSetSquare(mu, self.center),
                              self.elems, coords=self.coords)
        ghost = self._active_ghosts(sub) if model.component == "A" \
            else np.zeros(0, dtype=np.int64)
        st = ctx.streams(sub, ghost, need=frozenset((model.component,)))
        if model.component == "b":
            return st.b[self.sel_dofs]
        if model.component == "c":
            return st.c[self.sel_dofs]
        if model.component == "A":
            rows, cols, vals = st.rows_a, st.cols_a, st.vals_a
        else:
            rows, cols, vals = st.rows_m, st.cols_m, st.vals_m
        keys = rows.astype(np.int64) * model.n + cols.astype(np.int64)
        pos = np.searchsorted(self.sorted_keys, keys)
        pos_c = np.minimum(pos, self.sorted_keys.size - 1)
        hit = self.sorted_keys[pos_c] == keys
        theta = np.zeros(model.m)
        np.add.at(theta, self.slot_of_sorted[pos_c[hit]], vals[hit])
        return theta

    def _active_ghosts(self, sub) -> np.ndarray:
        """Recorded facets that are ghost facets at the current parameter."""
        ft = self.ctx.face_table
        left = ft.face_left[self.facets]
        right = ft.face_right[self.facets]
        cl = sub.classification[np.searchsorted(sub.elems, left)]
        cr = sub.classification[np.searchsorted(sub.elems, right)]
        ok = (cl != OUTSIDE) & (cr != OUTSIDE) & ((cl == CUT) | (cr == CUT))
        return self.facets[ok]

    def reconstruct(self, mu: float):
        """Full interpolatory reconstruction of the component at mu."""
        values = self.projector_apply(self.theta(mu))
        model = self.model
        if model.pattern is None:
            return values
        return model.pattern.csr_with_values(values)

    def projector_apply(self, theta: np.ndarray) -> np.ndarray:
        return self.model.projector @ theta


def deim_online(model: DeimModel, assembler: PartialAssembler, mu: float):
    """Reconstructed component at a new parameter value."""
    if assembler.model is not model:
        raise ValueError("assembler was built for a different model")
    return assembler.reconstruct(mu)


def spectral_norm(mat, iters: int = 120) -> float:
    """Deterministic power-iteration estimate of the matrix 2-norm."""
    n = mat.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    last = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - last) <= 1e-13 * max(nw, 1e-300):
            last = nw
            break
        last = nw
    return float(np.sqrt(last))
