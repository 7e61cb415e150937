"""Verification suites behind the ``verify-*`` subcommands.

Each check records the worst residual it saw against a fixed tolerance;
a suite passes iff every check does.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModeBudgetError
from .fock import (
    InternalOperator,
    PermutedIsomorphism,
    build_LR,
    build_annihilation,
    build_coin,
    build_creation,
    displacements,
)
from .initial import dirac
from .kraus import LatticeWindow, apply_channel, build_kraus, check_completeness, dense_channel_oracle
from .openwalk import nucleus_from_spec, random_nucleus, step_d
from .stats import fmt

ALGEBRA_TOL = 1e-14
EVOLUTION_TOL = 1e-12


@dataclass
class Check:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def add(self, name: str, residual: float, tol: float):
        self.checks.append(Check(name, float(residual), tol))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"suite": self.suite, "params": self.params, "pass": self.passed,
                "checks": [{"name": c.name, "residual": fmt(c.residual), "tol": fmt(c.tol),
                            "pass": c.passed} for c in self.checks]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["name,residual,tol,pass"]
        lines += [f"{c.name},{fmt(c.residual)},{fmt(c.tol)},{int(c.passed)}" for c in self.checks]
        return "\n".join(lines) + "\n"


def _gap(a, b) -> float:
    a = a.to_dense() if isinstance(a, InternalOperator) else np.asarray(a)
    b = b.to_dense() if isinstance(b, InternalOperator) else np.asarray(b)
    return float(np.max(np.abs(a - b), initial=0.0))


def _worst(pairs) -> float:
    return max((_gap(a, b) for a, b in pairs), default=0.0)


def algebra_suite(modes: int = 6, max_d: int = 3, coin_K: int = 2, seed: int = 0) -> SuiteReport:
    """Operator identities on ``modes`` modes and coin identities for d <= max_d, K <= coin_K."""
    rep = SuiteReport("algebra", params={"modes": modes, "max_d": max_d, "coin_K": coin_K, "seed": seed})
    K = modes
    eye = np.eye(1 << K)
    zero = np.zeros((1 << K, 1 << K))
    a = [build_annihilation(k, K, "dense") for k in range(K)]
    c = [build_creation(k, K, "dense") for k in range(K)]
    LR = [build_LR(k, K) for k in range(K)]

    rep.add("annihilation: sparse = dense = factored",
            _worst(itertools.chain.from_iterable(
                ((build_annihilation(k, K, "sparse"), a[k]), (build_annihilation(k, K), a[k]),
                 (build_creation(k, K, "sparse"), c[k]), (build_creation(k, K), c[k])) for k in range(K))),
            ALGEBRA_TOL)
    rep.add("creation is the adjoint of annihilation", _worst((c[k], a[k].adjoint()) for k in range(K)), 0.0)
    rep.add("d_k d_k = 0", _worst((a[k] @ a[k], zero) for k in range(K)), ALGEBRA_TOL)
    rep.add("d*_k d*_k = 0", _worst((c[k] @ c[k], zero) for k in range(K)), ALGEBRA_TOL)
    rep.add("d_k d*_k + d*_k d_k = I", _worst((a[k] @ c[k] + c[k] @ a[k], eye) for k in range(K)), ALGEBRA_TOL)
    pairs = [(k, l) for k in range(K) for l in range(K) if k != l]
    rep.add("d_k d_l = d_l d_k", _worst((a[k] @ a[l], a[l] @ a[k]) for k, l in pairs), ALGEBRA_TOL)
    rep.add("d*_k d*_l = d*_l d*_k", _worst((c[k] @ c[l], c[l] @ c[k]) for k, l in pairs), ALGEBRA_TOL)
    rep.add("d*_k d_l = d_l d*_k", _worst((c[k] @ a[l], a[l] @ c[k]) for k, l in pairs), ALGEBRA_TOL)

    all_pairs = list(itertools.product(range(K), repeat=2))
    rep.add("L_k L_l = L_l L_k", _worst((LR[k][0] @ LR[l][0], LR[l][0] @ LR[k][0]) for k, l in all_pairs), ALGEBRA_TOL)
    rep.add("R_k L_l = L_l R_k", _worst((LR[k][1] @ LR[l][0], LR[l][0] @ LR[k][1]) for k, l in all_pairs), ALGEBRA_TOL)
    rep.add("R_k R_l = R_l R_k", _worst((LR[k][1] @ LR[l][1], LR[l][1] @ LR[k][1]) for k, l in all_pairs), ALGEBRA_TOL)
    half = 0.5 * (c[0] + a[0]).to_dense()
    rep.add("L, R from creation and annihilation",
            max(_gap(LR[0][0], half - 0.5 * eye), _gap(LR[0][1], half + 0.5 * eye)), ALGEBRA_TOL)
    for k in range(K):
        L, R = LR[k]
        Ld, Rd = L.to_dense(), R.to_dense()
        rep.add(f"L/R product rules, mode {k}",
                max(_gap(Ld @ Ld, -Ld), _gap(Ld @ Rd, zero), _gap(Rd @ Ld, zero), _gap(Rd @ Rd, Rd),
                    _gap(Ld @ Ld + Rd @ Rd, eye), _gap(Ld, Ld.conj().T), _gap(Rd, Rd.conj().T)),
                ALGEBRA_TOL)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        ops = []
        for _ in range(2):
            modes_used = rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)
            # unit-scale entries so the absolute tolerance is meaningful
            blocks = {int(m): rng.uniform(-1, 1, (2, 2)) + 1j * rng.uniform(-1, 1, (2, 2)) for m in modes_used}
            ops.append(InternalOperator.factored(n, blocks, scale=np.exp(2j * np.pi * rng.uniform())))
        f, g = ops
        worst = max(worst, _gap(f @ g, f.to_dense() @ g.to_dense()),
                    _gap(f.tensor(g), np.kron(f.to_dense(), g.to_dense())),
                    _gap(f.partial_trace(0), f.as_kind("dense").partial_trace(0)),
                    _gap(f.as_kind("sparse").partial_trace(n - 1), f.partial_trace(n - 1)))
    rep.add("factored products, tensors and partial traces match dense", worst, ALGEBRA_TOL)

    for d in range(1, max_d + 1):
        for Kc in range(1, coin_K + 1):
            dim = 1 << (d * Kc)
            eye_j = np.eye(dim)
            for n in range(Kc):
                coins = {eps: build_coin(eps, n, Kc, d).to_dense() for eps in displacements(d)}
                total = sum(m @ m for m in coins.values())
                cross = max((_gap(coins[e] @ coins[f], np.zeros((dim, dim)))
                             for e in coins for f in coins if e != f), default=0.0)
                u = sum(coins.values())
                herm = max(_gap(m, m.conj().T) for m in coins.values())
                tag = f"d={d} K={Kc} n={n}"
                rep.add(f"sum_eps C C = I ({tag})", _gap(total, eye_j), ALGEBRA_TOL)
                rep.add(f"C_eps C_eps' = 0 for eps != eps' ({tag})", cross, ALGEBRA_TOL)
                rep.add(f"coins self-adjoint ({tag})", herm, ALGEBRA_TOL)
                rep.add(f"sum_eps C unitary ({tag})", max(_gap(u @ u.conj().T, eye_j), _gap(u.conj().T @ u, eye_j)),
                        ALGEBRA_TOL)
                iso = PermutedIsomorphism.random(d * Kc, rng)
                permuted = sum((build_coin(eps, n, Kc, d, iso) @ build_coin(eps, n, Kc, d, iso)).to_dense()
                               for eps in displacements(d))
                rep.add(f"sum_eps C C = I under a permuted isomorphism ({tag})", _gap(permuted, eye_j), ALGEBRA_TOL)
    return rep


def channel_suite(d: int = 1, K: int = 3, steps: int | None = None, samples: int = 3, seed: int = 0,
                  storage: str = "factor") -> SuiteReport:
    """Completeness of every step's family and channel = nucleus map along a walk."""
    steps = K if steps is None else steps
    if steps > K:
        raise ModeBudgetError(f"{steps} steps need K>={steps}, got K={K}")
    rep = SuiteReport("channel", params={"d": d, "K": K, "steps": steps, "samples": samples, "seed": seed})
    half = steps + 3
    window = LatticeWindow(d, (-half,) * d, (half,) * d)
    families = [build_kraus(n, window, K) for n in range(steps)]
    for n, fam in enumerate(families):
        report = check_completeness(fam)
        rep.add(f"interior completeness, n={n}", report.max_interior_residual, ALGEBRA_TOL)
        per_source = {len(fam.from_source(y)) for y in window.sites() if window.is_interior(y)}
        rep.add(f"2^d operators per interior source, n={n}", 0.0 if per_source == {1 << d} else 1.0, 0.0)

    rng = np.random.default_rng(seed)
    starts = [nucleus_from_spec(dirac((), (0,) * d), K, storage)]
    starts += [random_nucleus(d, K, rng, n_sites=2, radius=1, storage=storage) for _ in range(samples)]
    for i, nuc in enumerate(starts):
        by_channel, by_map = nuc, nuc
        worst = drift = 0.0
        for fam in families:
            by_channel = apply_channel(fam, by_channel)
            by_map = step_d(by_map, fam.n)
            worst = max(worst, by_channel.max_site_gap(by_map))
            drift = max(drift, abs(by_channel.total_trace() - nuc.total_trace()))
        label = "dirac start" if i == 0 else f"random start {i}"
        rep.add(f"channel = nucleus map ({label})", worst, EVOLUTION_TOL)
        rep.add(f"channel preserves trace ({label})", drift, EVOLUTION_TOL)

    # one materialized oracle run on the smallest window
    tiny = LatticeWindow(1, -2, 2)
    nuc = nucleus_from_spec(dirac((), 0), 1, storage)
    blocks, off = dense_channel_oracle(build_kraus(0, tiny, 1), nuc)
    stepped = step_d(nuc, 0)
    gap = max(_gap(blocks.get(x, 0 * stepped.operator(x)), stepped.operator(x)) for x in set(blocks) | set(stepped.sites))
    rep.add("materialized channel: off-diagonal blocks vanish", off, EVOLUTION_TOL)
    rep.add("materialized channel: diagonal blocks = nucleus map", gap, EVOLUTION_TOL)
    return rep
