"""Exact information theory on small discrete joints.

A :class:`DiscreteJoint` is a dense probability table with one named axis per
variable. Every quantity is an exact sum over the table in bits, with
``0 log 0 = 0``. Arguments naming variables accept a single name or a
sequence of names (treated as one compound variable).

The restoration variables are named ``"X"`` (degraded input), ``"Y"`` (clean
target), ``"Xt"`` (latent representation) and ``"Yt"`` (restored output).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DiscreteJoint",
    "SizeCapError",
    "MarkovError",
    "entropy",
    "mutual_info",
    "cond_mutual_info",
    "interaction_info",
    "ib_objective_conventional",
    "proposed_terms",
    "proposed_objective",
    "BoundaryReport",
    "boundary_check",
    "dpi_check",
    "loss_decomposition_check",
    "random_joint",
    "random_restoration_joint",
    "markov_chain_joint",
    "random_channel",
    "quantize_activations",
    "xor_joint",
]

SUM_TOL = 1e-12
DEFAULT_CELL_CAP = 2**24
MARKOV_TOL = 1e-10


class SizeCapError(ValueError):
    """Requested joint table is too large to enumerate."""


class MarkovError(ValueError):
    """Joint does not factor as the required Markov chain."""


def _names(v) -> tuple[str, ...]:
    return (v,) if isinstance(v, str) else tuple(v)


class DiscreteJoint:
    """Dense joint pmf over named discrete variables."""

    def __init__(self, names: Sequence[str], pmf):
        pmf = np.asarray(pmf, dtype=np.float64)
        names = tuple(names)
        if pmf.ndim != len(names):
            raise ValueError(f"pmf has {pmf.ndim} axes but {len(names)} names were given")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in {names}")
        if (pmf < 0).any():
            raise ValueError("probabilities must be non-negative")
        total = pmf.sum()
        if abs(total - 1.0) > SUM_TOL * max(1, pmf.size):
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        self.names = names
        self.pmf = pmf / total

    @property
    def sizes(self) -> dict[str, int]:
        return dict(zip(self.names, self.pmf.shape))

    def _axes(self, names: Iterable[str]) -> tuple[int, ...]:
        try:
            return tuple(self.names.index(n) for n in names)
        except ValueError:
            raise KeyError(f"unknown variable among {tuple(names)}; have {self.names}") from None

    def marginal(self, *vars_) -> "DiscreteJoint":
        keep: list[str] = []
        for v in vars_:
            for n in _names(v):
                if n not in keep:
                    keep.append(n)
        axes = self._axes(keep)
        drop = tuple(i for i in range(len(self.names)) if i not in axes)
        p = self.pmf.sum(axis=drop) if drop else self.pmf
        order = sorted(range(len(keep)), key=lambda i: axes[i])  # summed array keeps original axis order
        current = [keep[i] for i in order]
        p = np.transpose(p, [current.index(n) for n in keep])
        return DiscreteJoint(keep, p)

    def entropy(self, *vars_) -> float:
        p = self.marginal(*vars_).pmf.ravel() if vars_ else self.pmf.ravel()
        p = p[p > 0]
        return float(-(p * np.log2(p)).sum())

    def rename(self, mapping: dict[str, str]) -> "DiscreteJoint":
        return DiscreteJoint([mapping.get(n, n) for n in self.names], self.pmf)

    def __repr__(self) -> str:
        return f"DiscreteJoint({', '.join(f'{n}:{s}' for n, s in self.sizes.items())})"


def entropy(joint: DiscreteJoint, vars_) -> float:
    return joint.entropy(_names(vars_))


def mutual_info(joint: DiscreteJoint, a, b) -> float:
    """I(A; B) = H(A) + H(B) - H(A, B)."""
    a, b = _names(a), _names(b)
    return joint.entropy(a) + joint.entropy(b) - joint.entropy(a + b)


def cond_mutual_info(joint: DiscreteJoint, a, b, c) -> float:
    """I(A; B | C) = H(A, C) + H(B, C) - H(A, B, C) - H(C)."""
    a, b, c = _names(a), _names(b), _names(c)
    return joint.entropy(a + c) + joint.entropy(b + c) - joint.entropy(a + b + c) - joint.entropy(c)


def interaction_info(joint: DiscreteJoint, a, b, c) -> float:
    """I(A; B; C) = I(A; B) - I(A; B | C); negative under synergy."""
    return mutual_info(joint, a, b) - cond_mutual_info(joint, a, b, c)


def ib_objective_conventional(joint: DiscreteJoint, beta: float, x="X", y="Y", xt="Xt") -> float:
    """I(X; Xt) - beta * I(Y; Xt)."""
    return mutual_info(joint, x, xt) - beta * mutual_info(joint, y, xt)


def proposed_terms(joint: DiscreteJoint, x="X", y="Y", xt="Xt", yt="Yt") -> dict[str, float]:
    """The three information paths into the restored output."""
    return {
        "I(X;Xt;Yt)": interaction_info(joint, x, xt, yt),
        "I(X|Xt;Yt)": cond_mutual_info(joint, x, yt, xt),
        "I(Y|X;Yt)": cond_mutual_info(joint, y, yt, x),
    }


def proposed_objective(joint: DiscreteJoint, beta1: float, beta2: float, x="X", y="Y", xt="Xt", yt="Yt") -> float:
    """I(X; Xt; Yt) - beta1 * I(X; Yt | Xt) - beta2 * I(Y; Yt | X)."""
    t = proposed_terms(joint, x, y, xt, yt)
    return t["I(X;Xt;Yt)"] - beta1 * t["I(X|Xt;Yt)"] - beta2 * t["I(Y|X;Yt)"]


@dataclass
class BoundaryReport:
    """Values, bounds and slacks (>= 0 means satisfied) per inequality."""

    values: dict[str, float]
    bounds: dict[str, float]
    slack: dict[str, float]

    @property
    def satisfied(self) -> dict[str, bool]:
        return {k: s >= -1e-10 for k, s in self.slack.items()}

    @property
    def ok(self) -> bool:
        return all(self.satisfied.values())

    def violated(self) -> list[str]:
        return [k for k, v in self.satisfied.items() if not v]


def boundary_check(joint: DiscreteJoint, x="X", y="Y", xt="Xt", yt="Yt") -> BoundaryReport:
    """Evaluate the five bounds on the information paths.

    1. I(X; Xt; Yt) >= -H(X | Y)
    2. I(X; Yt | Xt) <= H(X)
    3. I(Y; Yt | X) <= H(Y | X)
    4. -H(Xt) <= I(X; Xt; Yt) <= H(Xt)   (reported as two slacks)
    5. 0 <= I(X; Yt | Xt) <= H(X)
    """
    t = proposed_terms(joint, x, y, xt, yt)
    inter, low, ext = t["I(X;Xt;Yt)"], t["I(X|Xt;Yt)"], t["I(Y|X;Yt)"]
    h_x = joint.entropy(_names(x))
    h_x_given_y = joint.entropy(_names(x) + _names(y)) - joint.entropy(_names(y))
    h_y_given_x = joint.entropy(_names(x) + _names(y)) - h_x
    h_xt = joint.entropy(_names(xt))
    values = {
        "interaction>=-H(X|Y)": inter,
        "lowlevel<=H(X)": low,
        "external<=H(Y|X)": ext,
        "interaction>=-H(Xt)": inter,
        "interaction<=H(Xt)": inter,
        "lowlevel>=0": low,
    }
    bounds = {
        "interaction>=-H(X|Y)": -h_x_given_y,
        "lowlevel<=H(X)": h_x,
        "external<=H(Y|X)": h_y_given_x,
        "interaction>=-H(Xt)": -h_xt,
        "interaction<=H(Xt)": h_xt,
        "lowlevel>=0": 0.0,
    }
    slack = {
        "interaction>=-H(X|Y)": inter + h_x_given_y,
        "lowlevel<=H(X)": h_x - low,
        "external<=H(Y|X)": h_y_given_x - ext,
        "interaction>=-H(Xt)": inter + h_xt,
        "interaction<=H(Xt)": h_xt - inter,
        "lowlevel>=0": low,
    }
    return BoundaryReport(values, bounds, slack)


def dpi_check(joint: DiscreteJoint, y="Y", x="X", xt="Xt", yt="Yt", tol: float = MARKOV_TOL) -> dict:
    """Verify I(Y;X) >= I(Y;Xt) >= I(Y;Yt) on a Markov chain Y -> X -> Xt -> Yt.

    Raises :class:`MarkovError` if the joint is not Markov, i.e. if
    I(Y; Xt | X) or I(Y, X; Yt | Xt) exceeds ``tol``.
    """
    leak1 = cond_mutual_info(joint, y, xt, x)
    leak2 = cond_mutual_info(joint, _names(y) + _names(x), yt, xt)
    if leak1 > tol or leak2 > tol:
        raise MarkovError(f"joint is not Markov: I(Y;Xt|X)={leak1:.3g}, I(Y,X;Yt|Xt)={leak2:.3g}")
    i_yx = mutual_info(joint, y, x)
    i_yxt = mutual_info(joint, y, xt)
    i_yyt = mutual_info(joint, y, yt)
    return {
        "I(Y;X)": i_yx,
        "I(Y;Xt)": i_yxt,
        "I(Y;Yt)": i_yyt,
        "holds": bool(i_yx >= i_yxt - tol and i_yxt >= i_yyt - tol),
    }


def loss_decomposition_check(joint: DiscreteJoint, y="Y", x="X", yt="Yt", tol: float = 1e-12) -> dict:
    """I(Y; Yt) = I(Y; X; Yt) + I(Y; Yt | X): information shared with the input plus the rest."""
    total = mutual_info(joint, y, yt)
    shared = interaction_info(joint, y, x, yt)
    rest = cond_mutual_info(joint, y, yt, x)
    residual = total - (shared + rest)
    return {"I(Y;Yt)": total, "I(Y;X;Yt)": shared, "I(Y;Yt|X)": rest, "residual": residual, "holds": abs(residual) <= tol}


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def xor_joint() -> DiscreteJoint:
    """A, B fair independent bits and C = A xor B."""
    p = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            p[a, b, a ^ b] = 0.25
    return DiscreteJoint(("A", "B", "C"), p)


def random_joint(rng: np.random.Generator, names=("X", "Y", "Xt", "Yt"), max_alphabet: int = 4, concentration: float | None = None) -> DiscreteJoint:
    """Dirichlet-distributed joint over variables with alphabet sizes in 2..max_alphabet.

    With ``concentration=None`` the Dirichlet parameter is drawn log-uniformly
    in [0.05, 2] so that both near-deterministic and diffuse joints occur.
    """
    sizes = tuple(int(s) for s in rng.integers(2, max_alphabet + 1, size=len(names)))
    alpha = concentration if concentration is not None else float(np.exp(rng.uniform(np.log(0.05), np.log(2.0))))
    p = rng.gamma(alpha, size=int(np.prod(sizes)))
    if p.sum() == 0:
        p[0] = 1.0
    return DiscreteJoint(names, (p / p.sum()).reshape(sizes))


def random_restoration_joint(rng: np.random.Generator, max_alphabet: int = 4, concentration: float | None = None) -> DiscreteJoint:
    """Random joint over (X, Y, Xt, Yt) whose latent Xt is a deterministic function of X.

    (X, Y) and the output channel P(Yt | X, Y, Xt) are arbitrary, so the
    output may also carry target information the input lacks.
    """
    nx, ny, nxt, nyt = (int(s) for s in rng.integers(2, max_alphabet + 1, size=4))
    alpha = concentration if concentration is not None else float(np.exp(rng.uniform(np.log(0.05), np.log(2.0))))
    pxy = rng.gamma(alpha, size=(nx, ny)) + 1e-300
    pxy /= pxy.sum()
    f = rng.integers(0, nxt, size=nx)
    out = rng.gamma(alpha, size=(nx, ny, nxt, nyt)) + 1e-300
    out /= out.sum(axis=-1, keepdims=True)
    p = np.zeros((nx, ny, nxt, nyt))
    for x in range(nx):
        p[x, :, f[x], :] = pxy[x, :, None] * out[x, :, f[x], :]
    return DiscreteJoint(("X", "Y", "Xt", "Yt"), p / p.sum())


def random_channel(rng: np.random.Generator, n_in: int, n_out: int, concentration: float = 1.0) -> np.ndarray:
    """Row-stochastic matrix K[i, j] = P(out=j | in=i)."""
    k = rng.gamma(concentration, size=(n_in, n_out)) + 1e-300
    return k / k.sum(axis=1, keepdims=True)


def markov_chain_joint(p_first: np.ndarray, channels: Sequence[np.ndarray], names=("Y", "X", "Xt", "Yt")) -> DiscreteJoint:
    """Joint of a chain V0 -> V1 -> ... built by composing channel matrices."""
    p = np.asarray(p_first, dtype=np.float64)
    for k in channels:
        k = np.asarray(k, dtype=np.float64)
        p = p[..., None] * k.reshape((1,) * (p.ndim - 1) + k.shape)
    return DiscreteJoint(names[: p.ndim], p)


def quantize_activations(
    tensors: dict[str, np.ndarray],
    bins: int,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> DiscreteJoint:
    """Empirical joint of uniformly binned variables.

    ``tensors`` maps a variable name to an array whose first axis indexes
    samples; remaining axes are flattened into a vector per sample, and each
    scalar is binned into ``bins`` uniform levels over that variable's range.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    names = list(tensors)
    arrays = [np.asarray(tensors[n], dtype=np.float64) for n in names]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("all variables need the same number of samples")
    dims = [int(np.prod(a.shape[1:], dtype=np.int64)) for a in arrays]
    nominal = 1
    for d in dims:
        nominal *= bins**d
        if nominal > cell_cap:
            raise SizeCapError(
                f"joint over {names} with {bins} bins needs > {cell_cap} cells; reduce bins or variable dimensions"
            )
    codes = []
    for a, d in zip(arrays, dims):
        flat = a.reshape(n, d)
        lo, hi = flat.min(), flat.max()
        if bins == 1 or hi <= lo:
            q = np.zeros(flat.shape, dtype=np.int64)
        else:
            q = np.clip(np.floor((flat - lo) / (hi - lo) * bins), 0, bins - 1).astype(np.int64)
        # compound symbol per sample, relabelled to a compact alphabet
        sym = np.zeros(n, dtype=np.int64)
        for j in range(d):
            sym = sym * bins + q[:, j]
        _, compact = np.unique(sym, return_inverse=True)
        codes.append(compact.reshape(-1))
    sizes = [int(c.max()) + 1 for c in codes]
    table = np.zeros(sizes)
    np.add.at(table, tuple(codes), 1.0)
    return DiscreteJoint(names, table / n)
