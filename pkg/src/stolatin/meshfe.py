"""
Linear tetrahedral finite elements on small 3D meshes.

Strains are stored in Voigt order (11, 22, 33, 12, 23, 13) with engineering
shear; stresses use the same order with plain tensor components. All
element quantities use one-point quadrature (constant strain tetrahedra).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptySystemError, InvalidGeometryError

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))

# I in Voigt form
VOIGT_IDENTITY = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# deviatoric projector acting on engineering strain, returning tensor components
DEV_PROJECTOR = np.zeros((6, 6))
DEV_PROJECTOR[:3, :3] = np.eye(3) - 1.0 / 3.0
DEV_PROJECTOR[3:, 3:] = 0.5 * np.eye(3)

_SHEAR_WEIGHT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


def to_tensor(v, engineering=False):
    """Voigt vector(s) (..., 6) -> symmetric tensor(s) (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    t = np.empty(v.shape[:-1] + (3, 3))
    for a, (i, j) in enumerate(VOIGT_PAIRS):
        c = v[..., a] * (0.5 if engineering and i != j else 1.0)
        t[..., i, j] = c
        t[..., j, i] = c
    return t


def from_tensor(t, engineering=False):
    t = np.asarray(t, dtype=float)
    v = np.stack([t[..., i, j] for i, j in VOIGT_PAIRS], axis=-1)
    if engineering:
        v[..., 3:] *= 2.0
    return v


def tensor_norm(v, engineering=False):
    """Frobenius norm of the full tensor behind a Voigt vector."""
    v = np.asarray(v, dtype=float)
    if engineering:
        w = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
    else:
        w = _SHEAR_WEIGHT
    return np.sqrt(np.sum(w * v * v, axis=-1))


def deviator(v):
    """Deviatoric part of Voigt vector(s); works for both stress and strain."""
    v = np.array(v, dtype=float, copy=True)
    mean = v[..., :3].sum(axis=-1, keepdims=True) / 3.0
    v[..., :3] -= mean
    return v


@dataclass
class ElasticTensor:
    """Isotropic elasticity C = kappa I x I + 2 mu I_dev.

    ``kappa`` and ``mu`` may be arrays (one value per element or sample).
    """

    kappa: np.ndarray | float
    mu: np.ndarray | float

    @classmethod
    def from_young(cls, E, nu):
        E = np.asarray(E, dtype=float)
        return cls(E / (3.0 * (1.0 - 2.0 * nu)), E / (2.0 * (1.0 + nu)))

    @property
    def matrix(self):
        k = np.asarray(self.kappa, dtype=float)[..., None, None]
        m = np.asarray(self.mu, dtype=float)[..., None, None]
        return k * np.outer(VOIGT_IDENTITY, VOIGT_IDENTITY) + 2.0 * m * DEV_PROJECTOR


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    neumann_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.dirichlet_dofs = np.unique(np.asarray(self.dirichlet_dofs, dtype=np.int64))
        self.neumann_faces = np.asarray(self.neumann_faces, dtype=np.int64).reshape(-1, 3)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise InvalidGeometryError("nodes must be an (n, 3) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4 or len(self.elements) == 0:
            raise InvalidGeometryError("elements must be a nonempty (m, 4) array")
        n = len(self.nodes)
        for arr in (self.elements, self.neumann_faces):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise InvalidGeometryError("node index out of range")
        if self.dirichlet_dofs.size and (
            self.dirichlet_dofs[0] < 0 or self.dirichlet_dofs[-1] >= 3 * n
        ):
            raise InvalidGeometryError("dirichlet dof out of range")
        if np.any(self.volumes <= 0.0):
            raise InvalidGeometryError("element volumes must be strictly positive")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return 3 * len(self.nodes)

    @cached_property
    def free_dofs(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def _shape_data(self):
        X = np.ones((self.n_elements, 4, 4))
        X[:, :, 1:] = self.nodes[self.elements]
        det = np.linalg.det(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.linalg.inv(np.where(np.abs(det)[:, None, None] > 0, X, np.eye(4)))
        # columns of inv(X) hold the linear shape functions; rows 1..3 are gradients
        return det / 6.0, np.transpose(coef[:, 1:, :], (0, 2, 1))

    @property
    def volumes(self):
        return self._shape_data[0]

    @property
    def gradients(self):
        """Shape-function gradients, (n_elements, 4 nodes, 3)."""
        return self._shape_data[1]

    @cached_property
    def centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def element_dofs(self):
        return (3 * self.elements[:, :, None] + np.arange(3)).reshape(-1, 12)

    @cached_property
    def B(self):
        """Strain-displacement matrices, (n_elements, 6, 12)."""
        g = self.gradients
        B = np.zeros((self.n_elements, 6, 12))
        for a in range(4):
            dx, dy, dz = g[:, a, 0], g[:, a, 1], g[:, a, 2]
            c = 3 * a
            B[:, 0, c] = dx
            B[:, 1, c + 1] = dy
            B[:, 2, c + 2] = dz
            B[:, 3, c] = dy
            B[:, 3, c + 1] = dx
            B[:, 4, c + 1] = dz
            B[:, 4, c + 2] = dy
            B[:, 5, c] = dz
            B[:, 5, c + 2] = dx
        return B

    @cached_property
    def gather(self):
        """Sparse (n_dofs, n_elements*12) operator summing element vectors."""
        cols = np.arange(self.n_elements * 12)
        rows = self.element_dofs.ravel()
        return sp.csr_matrix(
            (np.ones(len(cols)), (rows, cols)), shape=(self.n_dofs, len(cols))
        )

    @cached_property
    def face_areas(self):
        if len(self.neumann_faces) == 0:
            return np.zeros(0)
        p = self.nodes[self.neumann_faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def extents(self):
        return self.nodes.max(axis=0) - self.nodes.min(axis=0)


_AXES = {"x": 0, "y": 1, "z": 2}


def _parse_face(face):
    if isinstance(face, str):
        axis, side = face[0], face[1:]
    else:
        axis, side = face
    if axis not in _AXES or side not in ("-", "+", "min", "max"):
        raise InvalidGeometryError(f"bad face spec {face!r}")
    return _AXES[axis], side in ("+", "max")


def boundary_faces_on_plane(mesh_nodes, elements, axis, value, tol=1e-9):
    local = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    faces = elements[:, local].reshape(-1, 3)
    on = np.abs(mesh_nodes[:, axis] - value) <= tol
    return faces[on[faces].all(axis=1)]


def build_box_mesh(lengths, divisions, fixed_face="x-", loaded_face="x+"):
    """Structured box [0, Lx] x [0, Ly] x [0, Lz], six tetrahedra per cell.

    Faces are given as ``"x-"``, ``"y+"`` and so on. Every node on the fixed
    face loses all three displacement components; the loaded face supplies
    the triangles used for surface tractions.
    """
    lengths = np.asarray(lengths, dtype=float)
    divisions = np.asarray(divisions)
    if lengths.shape != (3,) or divisions.shape != (3,):
        raise InvalidGeometryError("lengths and divisions need three entries")
    if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
        raise InvalidGeometryError("box lengths must be positive")
    if np.any(divisions < 1) or np.any(divisions != np.round(divisions)):
        raise InvalidGeometryError("divisions must be positive integers")
    nx, ny, nz = (int(d) for d in divisions)

    axes = [np.linspace(0.0, L, n + 1) for L, n in zip(lengths, (nx, ny, nz))]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    def idx(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    unit = np.eye(3, dtype=int)
    tets = []
    # Freudenthal split: one tet per axis ordering, conforming across cells
    for perm in itertools.permutations(range(3)):
        v = [base]
        for ax in perm:
            v.append(v[-1] + unit[ax])
        tets.append(np.stack([idx(*p.T) for p in v], axis=1))
    elements = np.stack(tets, axis=1).reshape(-1, 4)

    X = np.ones((len(elements), 4, 4))
    X[:, :, 1:] = nodes[elements]
    flip = np.linalg.det(X) < 0
    elements[flip] = elements[flip][:, [0, 1, 3, 2]]

    fax, fmax = _parse_face(fixed_face)
    fixed_nodes = np.flatnonzero(
        np.isclose(nodes[:, fax], lengths[fax] if fmax else 0.0)
    )
    dirichlet = (3 * fixed_nodes[:, None] + np.arange(3)).ravel()

    lax, lmax = _parse_face(loaded_face)
    faces = boundary_faces_on_plane(nodes, elements, lax, lengths[lax] if lmax else 0.0)
    return Mesh(nodes, elements, dirichlet, faces)


def read_mesh(path):
    """Read the plain-text mesh format (see docs/mesh_format.md)."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    pos = 0

    def take(n, conv):
        nonlocal pos
        if pos + n > len(tokens):
            raise InvalidGeometryError("truncated mesh file")
        out = [conv(t) for t in tokens[pos:pos + n]]
        pos += n
        return out

    n_nodes = take(1, int)[0]
    nodes = np.array(take(3 * n_nodes, float)).reshape(n_nodes, 3)
    n_el = take(1, int)[0]
    elements = np.array(take(4 * n_el, int)).reshape(n_el, 4)
    n_fixed = take(1, int)[0]
    fixed = np.array(take(n_fixed, int), dtype=np.int64)
    n_faces = take(1, int)[0]
    faces = np.array(take(3 * n_faces, int), dtype=np.int64).reshape(n_faces, 3)
    if pos != len(tokens):
        raise InvalidGeometryError("trailing data in mesh file")
    return Mesh(nodes, elements, (3 * fixed[:, None] + np.arange(3)).ravel(), faces)


def write_mesh(mesh, path):
    fixed = np.unique(mesh.dirichlet_dofs // 3)
    lines = [str(mesh.n_nodes)]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.nodes]
    lines.append(str(mesh.n_elements))
    lines += [" ".join(str(int(i)) for i in e) for e in mesh.elements]
    lines.append(str(len(fixed)))
    lines += [str(int(i)) for i in fixed]
    lines.append(str(len(mesh.neumann_faces)))
    lines += [" ".join(str(int(i)) for i in f) for f in mesh.neumann_faces]
    Path(path).write_text("\n".join(lines) + "\n")


def strain_from_displacement(mesh, u):
    """Constant element strains (..., n_elements, 6) from nodal vector(s) u."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("displacement contains non-finite values")
    return np.einsum("eij,...ej->...ei", mesh.B, u[..., mesh.element_dofs])


def _element_tensor(mesh, C):
    if isinstance(C, ElasticTensor):
        C = C.matrix
    C = np.asarray(C, dtype=float)
    return np.broadcast_to(C, (mesh.n_elements, 6, 6))


def element_stiffness(mesh, C):
    C = _element_tensor(mesh, C)
    return mesh.volumes[:, None, None] * np.einsum(
        "eki,ekl,elj->eij", mesh.B, C, mesh.B, optimize=True
    )


def assemble_component_stiffness(mesh, C):
    """Sparse stiffness with entries int C eps(phi_r) : eps(phi_s) dx.

    ``C`` is an ElasticTensor (scalar or per-element moduli) or a (6, 6) /
    (n_elements, 6, 6) Voigt array.
    """
    Ke = element_stiffness(mesh, C)
    dofs = mesh.element_dofs
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs))
    return K.tocsr()


def assemble_internal_force(mesh, stress):
    """Nodal vector(s) int sigma : eps(phi_s) dx for element stresses (..., ne, 6)."""
    stress = np.asarray(stress, dtype=float)
    fe = mesh.volumes[:, None] * np.einsum("eij,...ei->...ej", mesh.B, stress)
    lead = fe.shape[:-2]
    flat = fe.reshape(-1, mesh.n_elements * 12)
    out = (mesh.gather @ flat.T).T
    return out.reshape(lead + (mesh.n_dofs,))


def assemble_traction_force(mesh, traction, faces=None):
    """Nodal loads for a constant traction (force per area) on boundary triangles."""
    traction = np.asarray(traction, dtype=float).reshape(3)
    if faces is None:
        faces, areas = mesh.neumann_faces, mesh.face_areas
    else:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        p = mesh.nodes[faces]
        areas = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    f = np.zeros((mesh.n_nodes, 3))
    if len(faces):
        share = np.repeat(areas / 3.0, 3)
        np.add.at(f, faces.ravel(), share[:, None] * traction)
    return f.ravel()


@dataclass
class ReducedSystem:
    matrix: object
    vector: np.ndarray
    free: np.ndarray
    n: int
    fixed: np.ndarray
    fixed_values: np.ndarray

    def expand(self, x_free):
        x_free = np.asarray(x_free)
        out = np.zeros(x_free.shape[:-1] + (self.n,))
        out[..., self.free] = x_free
        out[..., self.fixed] = self.fixed_values
        return out

    def solve(self):
        A = self.matrix
        if sp.issparse(A):
            x = spla.spsolve(A.tocsc(), self.vector)
        else:
            x = np.linalg.solve(A, self.vector)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("singular reduced matrix")
        return self.expand(x)


def apply_dirichlet(matrix, vector, dirichlet_dofs, values=None):
    """Eliminate prescribed dofs; ``values`` defaults to homogeneous data.

    A floating structure (nothing fixed) gives a singular reduced matrix, which
    surfaces as a LinAlgError / singular-matrix warning when solved.
    """
    n = matrix.shape[0]
    fixed = np.asarray(dirichlet_dofs, dtype=np.int64)
    if fixed.size and np.any(np.diff(fixed) <= 0):
        raise ValueError("dirichlet dofs must be sorted and unique")
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise EmptySystemError("every dof is prescribed")
    vals = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    vector = np.asarray(vector, dtype=float)
    if sp.issparse(matrix):
        A = matrix.tocsr()
        Aff = A[free][:, free]
        rhs = vector[free] - A[free][:, fixed] @ vals
    else:
        A = np.asarray(matrix)
        Aff = A[np.ix_(free, free)]
        rhs = vector[free] - A[np.ix_(free, fixed)] @ vals
    return ReducedSystem(Aff, rhs, free, n, fixed, vals)
