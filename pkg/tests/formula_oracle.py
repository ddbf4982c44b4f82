"""Formula enumeration and brute-force probability oracles shared by tests."""

import itertools

import numpy as np

from coco.formula import And, Implies, Not, Or, Var, truth

BINARY = (And, Or, Implies)


def formulas_up_to(height: int, n_vars: int = 3):
    """Every AST of height <= ``height`` (a bare variable has height 0)."""
    levels = [[Var(i) for i in range(n_vars)]]
    for _ in range(height):
        prev = [f for level in levels for f in level]
        new = [Not(f) for f in levels[-1]]
        lower = [f for level in levels[:-1] for f in level]
        top = levels[-1]
        for op in BINARY:
            for a, b in itertools.chain(itertools.product(top, prev), itertools.product(lower, top)):
                new.append(op(a, b))
        levels.append(new)
    return [f for level in levels for f in level]


def random_formula(rng, height: int, n_vars: int = 3):
    """A formula of height exactly ``height``."""
    if height == 0:
        return Var(int(rng.integers(n_vars)))
    kind = int(rng.integers(4))
    if kind == 0:
        return Not(random_formula(rng, height - 1, n_vars))
    op = BINARY[kind - 1]
    other = int(rng.integers(height))
    children = [random_formula(rng, height - 1, n_vars), random_formula(rng, other, n_vars)]
    if rng.random() < 0.5:
        children.reverse()
    return op(*children)


def assignments(n_vars):
    return list(itertools.product((False, True), repeat=n_vars))


def prob_from_joint(f, joint, n_vars):
    """P(f) for a distribution over all assignments (``joint`` indexed like assignments())."""
    return sum(p for p, a in zip(joint, assignments(n_vars)) if truth(f, a))


def joint_composer(joint, n_vars):
    """Exact P(A_i for all i in indices) under ``joint``; ignores the monitor values."""
    table = assignments(n_vars)

    def conj(indices, ms):
        return sum(p for p, a in zip(joint, table) if all(a[i] for i in indices))

    return conj


def independent_joint(ms):
    return np.array([np.prod([m if v else 1 - m for m, v in zip(ms, a)]) for a in assignments(len(ms))])


def fill_leaves(shape, rng, n_vars: int = 3):
    """Copy of ``shape`` with every leaf replaced by a uniformly drawn variable."""
    if isinstance(shape, Var):
        return Var(int(rng.integers(n_vars)))
    if isinstance(shape, Not):
        return Not(fill_leaves(shape.operand, rng, n_vars))
    return type(shape)(fill_leaves(shape.left, rng, n_vars), fill_leaves(shape.right, rng, n_vars))
