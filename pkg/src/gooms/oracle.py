"""Software high-precision reference arithmetic (>= 50 decimal digits).

Used to derive expected values for error benchmarking and oracle-backed
tests; never used inside the library's own numerics.
"""

import mpmath

DIGITS = 50

UNARY_OPS = ("identity", "reciprocal", "sqrt", "square", "log", "exp")
BINARY_OPS = ("add", "mul")
OPS = UNARY_OPS + BINARY_OPS + ("matmul",)


def _ctx():
    ctx = mpmath.mp.clone()
    ctx.dps = DIGITS
    return ctx


def oracle_eval(op, *inputs):
    """Evaluate one operation in >= 50-digit arithmetic.

    Scalar ops take floats and return mpf; ``matmul`` takes two nested lists
    (or arrays) and returns a nested list of mpf.
    """
    ctx = _ctx()
    if op == "matmul":
        a, b = inputs
        return _matmul(ctx, a, b)
    if op in BINARY_OPS:
        x, y = (ctx.mpf(float(v)) for v in inputs)
        return x + y if op == "add" else x * y
    if op not in UNARY_OPS:
        raise ValueError(f"unknown oracle op {op!r}")
    (x,) = inputs
    x = ctx.mpf(float(x))
    if op == "identity":
        return x
    if op == "reciprocal":
        if x == 0:
            raise ValueError("reciprocal of zero")
        return 1 / x
    if op == "sqrt":
        if x < 0:
            raise ValueError("sqrt of a negative value")
        return ctx.sqrt(x)
    if op == "square":
        return x * x
    if op == "log":
        if x <= 0:
            raise ValueError("log of a non-positive value")
        return ctx.log(x)
    return ctx.exp(x)


def _matmul(ctx, a, b):
    a = [[ctx.mpf(float(v)) for v in row] for row in a]
    b = [[ctx.mpf(float(v)) for v in row] for row in b]
    if len(a[0]) != len(b):
        raise ValueError("dimension mismatch")
    bt = list(zip(*b))
    return [[ctx.fdot(row, col) for col in bt] for row in a]


def oracle_affine_recurrence(a, b_inputs, x0):
    """x_t = A x_{t-1} + u_t iterated in 50-digit arithmetic.

    ``b_inputs`` is a sequence of T vectors (the already-applied B u_t terms);
    returns the list of T state vectors as mpf lists.
    """
    ctx = _ctx()
    a = [[ctx.mpf(float(v)) for v in row] for row in a]
    x = [ctx.mpf(float(v)) for v in x0]
    states = []
    for u in b_inputs:
        u = [ctx.mpf(float(v)) for v in u]
        x = [ctx.fdot(row, x) + u_i for row, u_i in zip(a, u)]
        states.append(x)
    return states
