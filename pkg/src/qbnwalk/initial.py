"""Initial-state descriptions and their textual grammar.

Grammar::

    dirac:sigma=<modes>;x=<ints>          sigma applies to every axis, or
                                          per axis as <modes>/<modes>/...
    pure:x=<ints>;amps=<mask>:<re>:<im>,...
                                          masks are ints (d=1) or
                                          per-axis m0/m1/... (d>1)
    mix:<w>*(<dirac|pure>)+<w>*(...)+...
    sep:[<1-D spec>|<1-D spec>|...]       one 1-D spec per axis

Everything here is pure parsing and validation; building the internal
vectors lives in ``init_vectors`` so the walk engines share one path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatchError, ModeBudgetError, SpecParseError
from .fock import SubsetMask

Site = tuple[int, ...]
_TOL = 1e-12


@dataclass(frozen=True)
class Dirac:
    """Basis state ``Z_sigma`` (one mask per axis) at site ``x0``."""

    sigmas: tuple[SubsetMask, ...]
    x0: Site

    @property
    def d(self) -> int:
        return len(self.x0)


@dataclass(frozen=True)
class Pure:
    """Normalized vector at one site, given by per-axis masks."""

    x0: Site
    amps: tuple[tuple[tuple[int, ...], complex], ...]

    @property
    def d(self) -> int:
        return len(self.x0)

    def __post_init__(self):
        if not self.amps:
            raise SpecParseError("pure state needs at least one amplitude", "amps")
        for masks, _ in self.amps:
            if len(masks) != len(self.x0):
                raise DimensionMismatchError(f"mask {masks} does not match site rank {len(self.x0)}")
        norm = math.fsum(abs(a) ** 2 for _, a in self.amps)
        if abs(norm - 1.0) > _TOL:
            raise SpecParseError(f"amplitudes have squared norm {norm!r}, expected 1", "amps")


@dataclass(frozen=True)
class Mixture:
    parts: tuple[tuple[float, Union[Dirac, Pure]], ...]

    @property
    def d(self) -> int:
        return self.parts[0][1].d

    def __post_init__(self):
        if not self.parts:
            raise SpecParseError("mixture needs at least one component", "mix")
        if any(w < 0 for w, _ in self.parts):
            raise SpecParseError("mixture weights must be non-negative", "mix")
        total = math.fsum(w for w, _ in self.parts)
        if abs(total - 1.0) > _TOL:
            raise SpecParseError(f"mixture weights sum to {total!r}, expected 1", "mix")
        if len({p.d for _, p in self.parts}) != 1:
            raise DimensionMismatchError("mixture components disagree on dimension")


@dataclass(frozen=True)
class Separable:
    factors: tuple["InitialSpec", ...]

    @property
    def d(self) -> int:
        return len(self.factors)

    def __post_init__(self):
        if not self.factors:
            raise SpecParseError("separable spec needs at least one factor", "sep")
        for f in self.factors:
            if isinstance(f, Separable) or f.d != 1:
                raise DimensionMismatchError("separable factors must be one-dimensional specs")


InitialSpec = Union[Dirac, Pure, Mixture, Separable]


def dirac(sigma=(), x0=0, d: int | None = None) -> Dirac:
    """Convenience constructor; ``sigma`` is a mode list or one list per axis."""
    x0 = (x0,) if np.isscalar(x0) else tuple(int(v) for v in x0)
    d = len(x0) if d is None else d
    if len(x0) != d:
        raise DimensionMismatchError(f"site {x0} has rank {len(x0)}, expected {d}")
    if len(sigma) and not np.isscalar(next(iter(sigma))):
        sigmas = tuple(SubsetMask.from_modes(s) for s in sigma)
        if len(sigmas) != d:
            raise DimensionMismatchError(f"{len(sigmas)} masks for dimension {d}")
    else:
        sigmas = (SubsetMask.from_modes(sigma),) * d
    return Dirac(sigmas, tuple(int(v) for v in x0))


# budget / dimension helpers ------------------------------------------------

def highest_mode(spec: InitialSpec) -> int:
    """Largest mode index with nonzero content on any axis, -1 if none."""
    if isinstance(spec, Dirac):
        return max(s.highest_mode() for s in spec.sigmas)
    if isinstance(spec, Pure):
        return max(int(m).bit_length() - 1 for masks, a in spec.amps if a != 0 for m in masks)
    if isinstance(spec, Mixture):
        return max(highest_mode(p) for _, p in spec.parts)
    return max(highest_mode(f) for f in spec.factors)


def required_budget(spec: InitialSpec, steps: int) -> int:
    """Smallest per-axis K covering every step's coin and the initial modes."""
    return max(int(steps), highest_mode(spec) + 1, 1)


def check_budget(spec: InitialSpec, steps: int, K: int):
    need = required_budget(spec, steps)
    if K < need:
        raise ModeBudgetError(f"mode budget K={K} too small: {steps} steps and this initial state need K>={need}")


# internal vectors -----------------------------------------------------------

def joint_index(masks, K: int) -> int:
    """Joint basis index under the canonical relabeling (axis 0 most significant)."""
    idx = 0
    for m in masks:
        bits = m.bits if isinstance(m, SubsetMask) else int(m)
        if bits >> K:
            raise ModeBudgetError(f"mask {bits:#b} needs more than K={K} modes")
        idx = (idx << K) | bits
    return idx


def _pure_vector(spec: Union[Dirac, Pure], K: int) -> np.ndarray:
    dim = 1 << (spec.d * K)
    v = np.zeros(dim, dtype=complex)
    if isinstance(spec, Dirac):
        v[joint_index(spec.sigmas, K)] = 1.0
    else:
        for masks, a in spec.amps:
            v[joint_index(masks, K)] += a
    return v


def init_vectors(spec: InitialSpec, K: int) -> dict[Site, list[np.ndarray]]:
    """Site -> list of (unnormalized) vectors whose projectors sum to the state.

    Separable specs are expanded as tensor products of their factors, so a
    vector ``v_1 (x) v_2`` appears at ``(x_1, x_2)`` with the factor weights
    multiplied into it.
    """
    if isinstance(spec, (Dirac, Pure)):
        return {spec.x0: [_pure_vector(spec, K)]}
    if isinstance(spec, Mixture):
        out: dict[Site, list[np.ndarray]] = {}
        for w, part in spec.parts:
            if w == 0:
                continue
            out.setdefault(part.x0, []).append(math.sqrt(w) * _pure_vector(part, K))
        return out
    out = {(): [np.ones(1, dtype=complex)]}
    for f in spec.factors:
        nxt: dict[Site, list[np.ndarray]] = {}
        for site, vecs in out.items():
            for (x,), fvecs in init_vectors(f, K).items():
                nxt.setdefault(site + (x,), []).extend(np.kron(a, b) for a in vecs for b in fvecs)
        out = nxt
    return out


def is_pure(spec: InitialSpec) -> bool:
    if isinstance(spec, (Dirac, Pure)):
        return True
    if isinstance(spec, Separable):
        return all(is_pure(f) for f in spec.factors)
    return False


def _factor_qubits(v: np.ndarray, n_modes: int, tol: float = 1e-12):
    """Normalized per-mode 2-vectors (index = mode) if ``v`` is a product state."""
    v = np.asarray(v, dtype=complex)
    norm = np.linalg.norm(v)
    if norm == 0:
        return None
    rest = v / norm
    qubits = []
    # reshape row index is the highest remaining mode
    for _ in range(n_modes):
        u, s, vh = np.linalg.svd(rest.reshape(2, -1), full_matrices=False)
        if s.size > 1 and s[1] > tol:
            return None
        qubits.append(u[:, 0])
        rest = s[0] * vh[0]
    return qubits[::-1]


def product_mode_states(spec: InitialSpec, K: int, d: int):
    """Per-site product decomposition used by the weights engine.

    Returns ``(sites, states)`` with ``sites`` a dict site -> weight and
    ``states[j][k]`` the 2x2 density matrix of mode ``k`` on axis ``j``,
    shared by every site; ``None`` if the state is not of that form.
    """
    if isinstance(spec, Separable):
        sites = {(): 1.0}
        states = []
        for f in spec.factors:
            sub = product_mode_states(f, K, 1)
            if sub is None:
                return None
            fsites, fstates = sub
            sites = {s + x: w * fw for s, w in sites.items() for x, fw in fsites.items()}
            states.append(fstates[0])
        return sites, states
    if not isinstance(spec, (Dirac, Pure)):
        return None
    if isinstance(spec, Dirac):
        states = []
        for s in spec.sigmas:
            axis = []
            for k in range(K):
                m = np.zeros((2, 2), dtype=complex)
                b = s.bits >> k & 1
                m[b, b] = 1.0
                axis.append(m)
            states.append(axis)
        return {spec.x0: 1.0}, states
    qubits = _factor_qubits(_pure_vector(spec, K), d * K)
    if qubits is None:
        return None
    states = []
    for j in range(d):
        axis = []
        for k in range(K):
            q = qubits[(d - 1 - j) * K + k]
            q = q / np.linalg.norm(q)
            axis.append(np.outer(q, q.conj()))
        states.append(axis)
    return {spec.x0: 1.0}, states


# parsing --------------------------------------------------------------------

def _parse_ints(text: str, key: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise SpecParseError(f"expected comma-separated integers, got {text!r}", key) from None


def _fields(body: str, kind: str) -> dict[str, str]:
    out = {}
    for part in body.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise SpecParseError(f"expected key=value, got {part!r}", kind)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _parse_dirac(body: str, d: int | None) -> Dirac:
    f = _fields(body, "dirac")
    unknown = set(f) - {"sigma", "x"}
    if unknown:
        raise SpecParseError(f"unknown keys {sorted(unknown)}", "dirac")
    if "x" not in f:
        raise SpecParseError("missing site", "x")
    x0 = _parse_ints(f["x"], "x")
    if not x0:
        raise SpecParseError("site must have at least one coordinate", "x")
    if d is not None and len(x0) != d:
        raise DimensionMismatchError(f"site {x0} has rank {len(x0)} but d={d}")
    sigma_text = f.get("sigma", "")
    if "/" in sigma_text:
        per_axis = [_parse_ints(s, "sigma") for s in sigma_text.split("/")]
        if len(per_axis) != len(x0):
            raise DimensionMismatchError(f"{len(per_axis)} sigma masks for a rank-{len(x0)} site")
        sigmas = tuple(SubsetMask.from_modes(m) for m in per_axis)
    else:
        modes = _parse_ints(sigma_text, "sigma")
        if any(m < 0 for m in modes):
            raise SpecParseError("modes must be non-negative", "sigma")
        sigmas = (SubsetMask.from_modes(modes),) * len(x0)
    return Dirac(sigmas, x0)


def _parse_pure(body: str, d: int | None) -> Pure:
    f = _fields(body, "pure")
    unknown = set(f) - {"x", "amps"}
    if unknown:
        raise SpecParseError(f"unknown keys {sorted(unknown)}", "pure")
    if "x" not in f or "amps" not in f:
        raise SpecParseError("pure spec needs x= and amps=", "pure")
    x0 = _parse_ints(f["x"], "x")
    if d is not None and len(x0) != d:
        raise DimensionMismatchError(f"site {x0} has rank {len(x0)} but d={d}")
    amps = []
    for item in f["amps"].split(","):
        parts = item.split(":")
        if len(parts) != 3:
            raise SpecParseError(f"amplitude {item!r} is not mask:re:im", "amps")
        try:
            masks = tuple(int(m) for m in parts[0].split("/"))
            a = complex(float(parts[1]), float(parts[2]))
        except ValueError:
            raise SpecParseError(f"cannot parse amplitude {item!r}", "amps") from None
        if any(m < 0 for m in masks):
            raise SpecParseError("masks must be non-negative", "amps")
        if len(masks) == 1 and len(x0) > 1:
            raise SpecParseError("use per-axis masks m0/m1/... when d>1", "amps")
        amps.append((masks, a))
    return Pure(x0, tuple(amps))


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth < 0:
                raise SpecParseError(f"unbalanced brackets in {text!r}", "initial")
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise SpecParseError(f"unbalanced brackets in {text!r}", "initial")
    parts.append("".join(cur))
    return parts


def _parse_mix(body: str, d: int | None) -> Mixture:
    parts = []
    for term in _split_top(body, "+"):
        term = term.strip()
        if "*" not in term:
            raise SpecParseError(f"mixture term {term!r} is not <weight>*(<spec>)", "mix")
        w, inner = term.split("*", 1)
        inner = inner.strip()
        if not (inner.startswith("(") and inner.endswith(")")):
            raise SpecParseError(f"mixture term {term!r} needs parentheses", "mix")
        try:
            weight = float(w)
        except ValueError:
            raise SpecParseError(f"bad weight {w!r}", "mix") from None
        spec = parse_initial(inner[1:-1], d)
        if not isinstance(spec, (Dirac, Pure)):
            raise SpecParseError("mixture components must be dirac or pure", "mix")
        parts.append((weight, spec))
    return Mixture(tuple(parts))


def _parse_sep(body: str, d: int | None) -> Separable:
    body = body.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise SpecParseError("separable spec must be sep:[...|...]", "sep")
    factors = tuple(parse_initial(p.strip(), 1) for p in _split_top(body[1:-1], "|"))
    if d is not None and len(factors) != d:
        raise DimensionMismatchError(f"{len(factors)} separable factors but d={d}")
    return Separable(factors)


def parse_initial(text: str, d: int | None = None) -> InitialSpec:
    """Parse the textual initial-state grammar; ``d`` is checked when given."""
    text = text.strip()
    if ":" not in text:
        raise SpecParseError(f"missing kind prefix in {text!r}", "initial")
    kind, body = text.split(":", 1)
    kind = kind.strip()
    if kind == "dirac":
        return _parse_dirac(body, d)
    if kind == "pure":
        return _parse_pure(body, d)
    if kind == "mix":
        return _parse_mix(body, d)
    if kind == "sep":
        return _parse_sep(body, d)
    raise SpecParseError(f"unknown initial kind {kind!r}", "initial")


def format_initial(spec: InitialSpec) -> str:
    """Inverse of ``parse_initial`` (up to float formatting)."""
    if isinstance(spec, Dirac):
        if len(set(spec.sigmas)) == 1:
            sig = ",".join(map(str, spec.sigmas[0].modes()))
        else:
            sig = "/".join(",".join(map(str, s.modes())) for s in spec.sigmas)
        return f"dirac:sigma={sig};x={','.join(map(str, spec.x0))}"
    if isinstance(spec, Pure):
        amps = ",".join(f"{'/'.join(map(str, m))}:{float(a.real)!r}:{float(a.imag)!r}" for m, a in spec.amps)
        return f"pure:x={','.join(map(str, spec.x0))};amps={amps}"
    if isinstance(spec, Mixture):
        return "mix:" + "+".join(f"{float(w)!r}*({format_initial(p)})" for w, p in spec.parts)
    return "sep:[" + "|".join(format_initial(f) for f in spec.factors) + "]"


def random_pure(d: int, n_modes: int, rng, x0=None) -> Pure:
    """Random normalized vector over the masks of the low ``n_modes`` modes per axis."""
    rng = np.random.default_rng(rng)
    x0 = (0,) * d if x0 is None else tuple(x0)
    masks = list(itertools.product(range(1 << n_modes), repeat=d))
    amps = rng.normal(size=len(masks)) + 1j * rng.normal(size=len(masks))
    amps /= np.linalg.norm(amps)
    return Pure(x0, tuple((m, complex(a)) for m, a in zip(masks, amps)))
