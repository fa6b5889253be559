"""
Nonlinear least squares over parameter blocks.

Factors linearize into groups of Jacobian blocks keyed by parameter-block
keys. The Levenberg-Marquardt loop assembles the block-sparse Jacobian and
normal equations with scipy.sparse and eliminates the one-dimensional
landmark blocks by Schur complement, leaving a small dense pose system.
Marginalization works on the dense system of the few factors it touches.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import (
    Dict,
    Hashable,
    Iterable,
    List,
    Mapping,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    TypeVar,
)

import numpy as np
from scipy import linalg, sparse

Key = Tuple[Hashable, ...]

logger = logging.getLogger(__name__)

MIN_DAMPING = 1e-6
MAX_DAMPING = 1e32
HESSIAN_REGULARIZATION = 1e-12

V = TypeVar("V", bound="Values")


class Values(Protocol):
    """Parameter container the solver can update."""

    def dim(self, key: Key) -> int: ...

    def retract(self: V, deltas: Mapping[Key, np.ndarray]) -> V: ...

    def local(self, key: Key, lin: "Values") -> Tuple[np.ndarray, np.ndarray]:
        """(self ⊟ lin for one block, ∂(⊟)/∂δ at self)."""
        ...

    def snapshot(self: V, keys: Iterable[Key]) -> V: ...


@dataclass
class VectorValues:
    """Plain vector-valued blocks (additive update)."""

    blocks: Dict[Key, np.ndarray] = field(default_factory=dict)

    def dim(self, key: Key) -> int:
        return int(self.blocks[key].size)

    def retract(self, deltas: Mapping[Key, np.ndarray]) -> "VectorValues":
        out = dict(self.blocks)
        for key, delta in deltas.items():
            out[key] = self.blocks[key] + delta
        return VectorValues(out)

    def local(self, key: Key, lin: "Values") -> Tuple[np.ndarray, np.ndarray]:
        assert isinstance(lin, VectorValues)
        delta = self.blocks[key] - lin.blocks[key]
        return delta, np.eye(delta.size)

    def snapshot(self, keys: Iterable[Key]) -> "VectorValues":
        return VectorValues({k: self.blocks[k].copy() for k in keys})


@dataclass
class BlockGroup:
    """
    N Jacobian blocks of equal shape.

    Block n occupies rows ``rows[n]`` of the factor residual and the
    leading ``d`` columns of parameter block ``keys[n]``; a block narrower
    than its parameter block leaves the remaining columns zero.
    """

    keys: Sequence[Key]
    rows: np.ndarray  # (N, r)
    jac: np.ndarray  # (N, r, d)

    @classmethod
    def single(cls, key: Key, jac: np.ndarray, row_start: int = 0) -> "BlockGroup":
        r = jac.shape[0]
        return cls([key], np.arange(row_start, row_start + r)[None, :], jac[None])


@dataclass
class Linearization:
    """Whitened (and robustified) residual with its Jacobian blocks."""

    residual: np.ndarray
    groups: List[BlockGroup]
    cost: float


class Factor(ABC):
    """A cost term over a set of parameter blocks."""

    kind: str = "factor"

    @property
    @abstractmethod
    def keys(self) -> Sequence[Key]: ...

    @abstractmethod
    def linearize(self, values: Values) -> Linearization: ...

    def cost(self, values: Values) -> float:
        return self.linearize(values).cost


class LinearFactor(Factor):
    """r = Σ A_k x_k − b, whitened by sqrt_info; used for linear priors and tests."""

    kind = "linear"

    def __init__(
        self,
        blocks: Mapping[Key, np.ndarray],
        b: np.ndarray,
        sqrt_info: Optional[np.ndarray] = None,
    ) -> None:
        self._blocks = dict(blocks)
        self.b = np.asarray(b, dtype=float)
        self.sqrt_info = np.eye(self.b.size) if sqrt_info is None else sqrt_info

    @property
    def keys(self) -> Sequence[Key]:
        return list(self._blocks)

    def linearize(self, values: Values) -> Linearization:
        assert isinstance(values, VectorValues)
        r = -self.b.copy()
        for key, A in self._blocks.items():
            r += A @ values.blocks[key]
        r = self.sqrt_info @ r
        groups = [BlockGroup.single(k, self.sqrt_info @ A) for k, A in self._blocks.items()]
        return Linearization(r, groups, 0.5 * float(r @ r))


@dataclass
class MarginalizationPrior:
    """Linear prior r_p + J_p (x ⊟ x_lin) over the retained blocks."""

    keys: List[Key]
    dims: List[int]
    jacobian: np.ndarray
    residual: np.ndarray
    lin_values: Values
    regularized: bool = False

    @property
    def dim(self) -> int:
        return int(sum(self.dims))

    def information(self) -> np.ndarray:
        return self.jacobian.T @ self.jacobian


class PriorFactor(Factor):
    kind = "prior"

    def __init__(self, prior: MarginalizationPrior) -> None:
        self.prior = prior

    @property
    def keys(self) -> Sequence[Key]:
        return self.prior.keys

    def linearize(self, values: Values) -> Linearization:
        prior = self.prior
        r = prior.residual.copy()
        groups = []
        col = 0
        m = prior.residual.size
        rows = np.arange(m)[None, :]
        for key, d in zip(prior.keys, prior.dims):
            delta, d_local = values.local(key, prior.lin_values)
            J_block = prior.jacobian[:, col : col + d]
            r += J_block @ delta
            groups.append(BlockGroup([key], rows, (J_block @ d_local)[None]))
            col += d
        return Linearization(r, groups, 0.5 * float(r @ r))

    def cost(self, values: Values) -> float:
        prior = self.prior
        r = prior.residual.copy()
        col = 0
        for key, d in zip(prior.keys, prior.dims):
            delta, _ = values.local(key, prior.lin_values)
            r += prior.jacobian[:, col : col + d] @ delta
            col += d
        return 0.5 * float(r @ r)


@dataclass
class ParameterLayout:
    """Column layout of the linear system; Schur blocks come last."""

    keys: List[Key]
    offsets: Dict[Key, int]
    dims: Dict[Key, int]
    n_reduced: int  # columns before the Schur-eliminated blocks
    n: int

    @classmethod
    def build(
        cls,
        factors: Iterable[Factor],
        values: Values,
        fixed: Iterable[Key] = (),
        schur_kind: Optional[str] = None,
    ) -> "ParameterLayout":
        fixed_set = set(fixed)
        seen: Dict[Key, None] = {}
        for factor in factors:
            for key in factor.keys:
                if key not in fixed_set:
                    seen.setdefault(key, None)
        head = [k for k in seen if schur_kind is None or k[0] != schur_kind]
        tail = [k for k in seen if schur_kind is not None and k[0] == schur_kind]
        offsets: Dict[Key, int] = {}
        dims: Dict[Key, int] = {}
        col = 0
        for key in head + tail:
            offsets[key] = col
            dims[key] = values.dim(key)
            col += dims[key]
        n_reduced = sum(dims[k] for k in head)
        return cls(head + tail, offsets, dims, n_reduced, col)


def _triplets(
    linearizations: Sequence[Linearization], layout: ParameterLayout
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(row, column, value) entries of the stacked Jacobian and the residual."""
    residuals = []
    rows_out, cols_out, data_out = [], [], []
    base = 0
    for lin in linearizations:
        size = lin.residual.size
        residuals.append(np.asarray(lin.residual, dtype=float).reshape(-1))
        for group in lin.groups:
            offsets = np.fromiter(
                (layout.offsets.get(k, -1) for k in group.keys),
                dtype=np.int64,
                count=len(group.keys),
            )
            mask = offsets >= 0
            if not np.any(mask):
                continue
            jac = group.jac[mask]
            n_blocks, r, d = jac.shape
            cols = offsets[mask][:, None] + np.arange(d)[None, :]
            rows = base + group.rows[mask]
            rows_out.append(np.broadcast_to(rows[:, :, None], (n_blocks, r, d)).ravel())
            cols_out.append(np.broadcast_to(cols[:, None, :], (n_blocks, r, d)).ravel())
            data_out.append(jac.ravel())
        base += size
    residual = np.concatenate(residuals) if residuals else np.zeros(0)
    if not data_out:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0), residual
    return (
        np.concatenate(rows_out),
        np.concatenate(cols_out),
        np.concatenate(data_out),
        residual,
    )


def assemble(
    linearizations: Sequence[Linearization], layout: ParameterLayout
) -> Tuple[np.ndarray, np.ndarray]:
    """Dense Jacobian and residual of a set of linearizations."""
    rows, cols, data, r = _triplets(linearizations, layout)
    J = np.zeros((r.size, layout.n))
    np.add.at(J, (rows, cols), data)
    return J, r


def assemble_sparse(
    linearizations: Sequence[Linearization], layout: ParameterLayout
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Block-sparse Jacobian (CSR, duplicates summed) and residual."""
    rows, cols, data, r = _triplets(linearizations, layout)
    J = sparse.csr_matrix((data, (rows, cols)), shape=(r.size, layout.n))
    return J, r


def normal_equations(
    linearizations: Sequence[Linearization], layout: ParameterLayout
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Sparse Gauss-Newton Hessian JᵀJ and gradient Jᵀr."""
    J, r = assemble_sparse(linearizations, layout)
    Jt = J.T.tocsr()
    return (Jt @ J).tocsr(), np.asarray(Jt @ r).reshape(-1)


def gauge_basis(constraints: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the directions allowed by the gauge constraints C·δ = 0."""
    return linalg.null_space(constraints)


@dataclass
class SolverConfig:
    max_iterations: int = 10
    max_retries: int = 8
    initial_lambda: float = 1e-4
    use_schur: bool = True
    function_tolerance: float = 1e-6
    step_tolerance: float = 1e-12
    gradient_tolerance: float = 1e-10


@dataclass
class SolveResult:
    values: Values
    cost_before: float
    cost_after: float
    iterations: int
    converged: bool
    diverged: bool
    cost_history: List[float]


def total_cost(factors: Sequence[Factor], values: Values) -> float:
    return float(sum(f.cost(values) for f in factors))


def _solve_spd(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(H, lower=True), g)
    except linalg.LinAlgError:
        return linalg.lstsq(H, g)[0]


def _damped_step(
    H: sparse.csr_matrix,
    g: np.ndarray,
    lam: float,
    n_reduced: int,
    use_schur: bool,
    basis: Optional[np.ndarray],
) -> np.ndarray:
    """
    Solve (H + λD) δ = −g, eliminating the diagonal tail block if requested.

    The tail (inverse-depth) block of H is diagonal, so the Schur complement
    only needs the sparse coupling block and leaves a dense pose system.
    """
    diag = H.diagonal()
    D = np.clip(diag, MIN_DAMPING, MAX_DAMPING)
    n = H.shape[0]
    if use_schur and n_reduced < n:
        c = diag[n_reduced:] + lam * D[n_reduced:]
        c_inv = 1.0 / c
        A = H[:n_reduced, :n_reduced].toarray()
        A[np.diag_indices(n_reduced)] += lam * D[:n_reduced]
        B = H[:n_reduced, n_reduced:].tocsr()
        g_x, g_d = g[:n_reduced], g[n_reduced:]
        S = A - (B @ sparse.diags(c_inv) @ B.T).toarray()
        rhs = -g_x + B @ (c_inv * g_d)
        dx = _reduced_solve(S, rhs, basis)
        dd = c_inv * (-g_d - B.T @ dx)
        return np.concatenate([dx, dd])
    Hd = H.toarray()
    Hd[np.diag_indices(n)] += lam * D
    if basis is not None and n_reduced < n:
        full_basis = linalg.block_diag(basis, np.eye(n - n_reduced))
        return _reduced_solve(Hd, -g, full_basis)
    return _reduced_solve(Hd, -g, basis)


def _reduced_solve(S: np.ndarray, rhs: np.ndarray, basis: Optional[np.ndarray]) -> np.ndarray:
    if basis is None:
        return _solve_spd(S, rhs)
    y = _solve_spd(basis.T @ S @ basis, basis.T @ rhs)
    return basis @ y


def _split(delta: np.ndarray, layout: ParameterLayout) -> Dict[Key, np.ndarray]:
    return {k: delta[layout.offsets[k] : layout.offsets[k] + layout.dims[k]] for k in layout.keys}


def levenberg_marquardt(
    factors: Sequence[Factor],
    values: V,
    config: SolverConfig,
    fixed: Iterable[Key] = (),
    schur_kind: Optional[str] = None,
    gauge: Optional[Mapping[Key, np.ndarray]] = None,
) -> SolveResult:
    """
    Minimize the summed factor cost.

    Args:
        factors: Cost terms
        values: Initial values
        config: Iteration and damping settings
        fixed: Blocks held constant
        schur_kind: Key kind of scalar blocks eliminated by Schur complement
        gauge: Optional constraint rows per block (C_k, shape (c, dim_k));
            steps are restricted to the null space of C = [C_k]

    Returns:
        The solve result; accepted steps never increase the cost
    """
    layout = ParameterLayout.build(factors, values, fixed, schur_kind)
    basis = None
    if gauge:
        rows = next(iter(gauge.values())).shape[0]
        C = np.zeros((rows, layout.n_reduced))
        for key, block in gauge.items():
            if key in layout.offsets:
                C[:, layout.offsets[key] : layout.offsets[key] + block.shape[1]] = block
        basis = gauge_basis(C)
    if schur_kind is not None:
        for key in layout.keys[len(layout.keys) - (layout.n - layout.n_reduced) :]:
            if layout.dims[key] != 1:
                raise ValueError(f"Schur-eliminated block {key} must be scalar")

    lins = [f.linearize(values) for f in factors]
    cost = float(sum(lin.cost for lin in lins))
    cost_before = cost
    history = [cost]
    lam = config.initial_lambda
    converged = False
    diverged = False
    iterations = 0

    if layout.n == 0:
        return SolveResult(values, cost, cost, 0, True, False, history)

    for iterations in range(1, config.max_iterations + 1):
        H, g = normal_equations(lins, layout)
        if float(np.max(np.abs(g))) <= config.gradient_tolerance:
            converged = True
            iterations -= 1
            break

        accepted = False
        for _ in range(config.max_retries):
            delta = _damped_step(H, g, lam, layout.n_reduced, config.use_schur, basis)
            candidate = values.retract(_split(delta, layout))
            # Linearized once: the Jacobians are reused by the next iteration
            candidate_lins = [f.linearize(candidate) for f in factors]
            new_cost = float(sum(lin.cost for lin in candidate_lins))
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                break
            lam = min(lam * 10.0, 1e16)

        if not accepted:
            # No step lowers the cost: at a minimum unless the gradient says otherwise
            scale = max(1.0, float(np.max(np.abs(H.diagonal()))))
            converged = float(np.max(np.abs(g))) <= 1e-6 * scale
            diverged = not converged
            if diverged:
                logger.warning(
                    "LM failed to reduce cost",
                    extra={"operation": "optimize", "cost": cost, "iterations": iterations},
                )
            break

        values = candidate
        lam = max(lam / 10.0, 1e-12)
        decrease = cost - new_cost
        cost = new_cost
        history.append(cost)
        lins = candidate_lins
        if (
            decrease <= config.function_tolerance * max(cost, 1e-300)
            or float(np.max(np.abs(delta))) <= config.step_tolerance
            or cost <= 1e-30
        ):
            converged = True
            break

    return SolveResult(values, cost_before, cost, iterations, converged, diverged, history)


def marginalize(
    factors: Sequence[Factor],
    values: Values,
    remove: Iterable[Key],
    fixed: Iterable[Key] = (),
) -> Optional[MarginalizationPrior]:
    """
    Schur-complement the removed blocks out of the given factors.

    Args:
        factors: Every factor touching a removed block
        values: Current linearization point
        remove: Blocks to eliminate
        fixed: Blocks held constant (dropped from the prior)

    Returns:
        The prior over the remaining blocks these factors touch, or None if
        nothing remains
    """
    remove_set = set(remove)
    fixed_set = set(fixed)
    lins = [f.linearize(values) for f in factors]

    ordered: Dict[Key, None] = {}
    for factor in factors:
        for key in factor.keys:
            if key not in fixed_set:
                ordered.setdefault(key, None)
    marg = [k for k in ordered if k in remove_set]
    keep = [k for k in ordered if k not in remove_set]
    if not keep:
        return None

    offsets: Dict[Key, int] = {}
    dims: Dict[Key, int] = {}
    col = 0
    for key in marg + keep:
        offsets[key] = col
        dims[key] = values.dim(key)
        col += dims[key]
    layout = ParameterLayout(marg + keep, offsets, dims, 0, col)
    J, r = assemble(lins, layout)
    H = J.T @ J
    b = J.T @ r
    nm = sum(dims[k] for k in marg)

    H_mm = H[:nm, :nm]
    H_mk = H[:nm, nm:]
    H_kk = H[nm:, nm:]
    b_m, b_k = b[:nm], b[nm:]

    regularized = False
    if nm:
        eigvals = linalg.eigvalsh(H_mm)
        if eigvals.size and eigvals[0] < HESSIAN_REGULARIZATION * max(1.0, eigvals[-1]):
            H_mm = H_mm + HESSIAN_REGULARIZATION * np.eye(nm)
            regularized = True
            logger.warning(
                "Marginalized Hessian is rank deficient; regularizing",
                extra={"operation": "marginalize", "min_eigenvalue": float(eigvals[0])},
            )
        H_mm_inv = linalg.pinvh(H_mm)
        H_star = H_kk - H_mk.T @ H_mm_inv @ H_mk
        b_star = b_k - H_mk.T @ H_mm_inv @ b_m
    else:
        H_star, b_star = H_kk, b_k

    H_star = 0.5 * (H_star + H_star.T)
    S, Vt = linalg.eigh(H_star)
    threshold = 1e-12 * max(1.0, float(S[-1])) if S.size else 0.0
    mask = S > threshold
    S_kept = S[mask]
    V_kept = Vt[:, mask]
    sqrt_S = np.sqrt(S_kept)
    jacobian = sqrt_S[:, None] * V_kept.T
    residual = (V_kept.T @ b_star) / sqrt_S

    return MarginalizationPrior(
        keys=keep,
        dims=[dims[k] for k in keep],
        jacobian=jacobian,
        residual=residual,
        lin_values=values.snapshot(keep),
        regularized=regularized,
    )
