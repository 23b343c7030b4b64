"""Regenerates crates/core/fixtures/pseudo_foxp2.json."""

import json
import pathlib

import numpy as np

TOKENS = ["d", "m", "s", "u", "x"]
GENOTYPES = ["F", "W"]
CONTEXTS = ["U", "L", "A"]
SUBJECTS_PER_GENOTYPE = [8, 6]
SUBJECT_CONCENTRATION = 15.0
D, M, S, U, X = range(5)

rng = np.random.default_rng(20160521)

# Usage is dominated by the simple syllable `s`, as is typical of these repertoires.
common = np.array(
    [
        [0.20, 0.10, 0.45, 0.15, 0.10],
        [0.10, 0.25, 0.40, 0.15, 0.10],
        [0.12, 0.08, 0.55, 0.15, 0.10],
        [0.10, 0.10, 0.40, 0.30, 0.10],
        [0.12, 0.08, 0.40, 0.10, 0.30],
    ]
)


def shift(p, into, amount, rows=range(5)):
    """Moves `amount` of each row's mass into column `into`, proportionally from the rest."""
    q = p.copy()
    for r in rows:
        others = [c for c in range(5) if c != into]
        take = q[r, others] / q[r, others].sum() * amount
        q[r, others] -= take
        q[r, into] += amount
    return q


context_effect = {
    "U": lambda p: p,
    "L": lambda p: shift(p, S, 0.08, rows=[D, S, U]),
    "A": lambda p: shift(p, U, 0.09, rows=[D, M, X]),
}

base = []
for g in GENOTYPES:
    row = []
    for c in CONTEXTS:
        p = context_effect[c](common)
        if g == "F":
            p = shift(p, X, 0.08, rows=[D, M, S, U])
        if g == "W" and c == "L":
            p = shift(p, M, 0.10, rows=[D, S, U, X])
        row.append(p)
    base.append(row)

pi0 = [0.80, 0.78, 0.82, 0.79, 0.81]

subjects = []
for g, n in enumerate(SUBJECTS_PER_GENOTYPE):
    for k in range(n):
        lam = np.vstack([rng.dirichlet(SUBJECT_CONCENTRATION * r) for r in common])
        lam = np.maximum(lam, 0.005)
        lam /= lam.sum(axis=1, keepdims=True)
        subjects.append({"id": f"{GENOTYPES[g]}{k + 1}", "genotype": g, "lambda": lam.tolist()})

# Six nonzero cells per context as three +/- pairs within rows.
delta_pairs = {
    "U": [(D, X, M, 0.06), (S, M, S, 0.12), (U, S, X, 0.05)],
    "L": [(M, D, S, 0.08), (X, U, S, 0.15), (D, S, U, 0.07)],
    "A": [(U, D, S, 0.10), (S, X, S, 0.06), (M, U, X, 0.05)],
}
delta_f = []
for c in CONTEXTS:
    delta = np.zeros((5, 5))
    for row, up, down, amount in delta_pairs[c]:
        delta[row, up] += amount
        delta[row, down] -= amount
    delta_f.append(delta.tolist())

sequences = []
for i, s in enumerate(subjects):
    for c in range(len(CONTEXTS)):
        sequences.append({"subject": i, "context": c, "length": int(rng.integers(600, 6001))})

fixture = {
    "tokens": TOKENS,
    "genotypes": GENOTYPES,
    "contexts": CONTEXTS,
    "base": [[p.tolist() for p in row] for row in base],
    "pi0": pi0,
    "subjects": subjects,
    "delta_f": delta_f,
    "sequences": sequences,
}

out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/fixtures/pseudo_foxp2.json"
out.write_text(json.dumps(fixture, indent=1) + "\n")

for g in range(2):
    for c in range(3):
        assert np.allclose(base[g][c].sum(axis=1), 1.0)
        assert base[g][c].min() > 0.01
        shifted = np.array(base[0][c]) + np.array(delta_f[c])
        assert shifted.min() > 0.01, (CONTEXTS[c], np.argwhere(shifted <= 0.01), base[0][c].round(3))
print(out, sum(s["length"] for s in sequences))
