"""Synthetic equation-solving logs shaped like Cognitive Tutor transactions.

Used for tests, smoke runs and demos when the released corpus is not at
hand.  Each simulated response solves one linear equation; wrong steps emit
a BUG outcome with a feedback message matching the packaged ``new19`` rules
(or an unmapped interface message).
"""

from __future__ import annotations

import math
import random
from fractions import Fraction

from .data import InteractionKind, Outcome, RawInteraction

SYSTEM_MESSAGE = "The tutor could not interpret that entry."


def _fmt(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _problem(rng: random.Random):
    kind = rng.choice(["add", "sub", "mul", "div"])
    a = rng.randint(2, 9)
    b = rng.randint(-12, 20)
    var = rng.choice("xyn")
    if kind == "add":
        return kind, f"{var} + {a} = {b}", var, a, b
    if kind == "sub":
        return kind, f"{var} - {a} = {b}", var, a, b
    if kind == "mul":
        return kind, f"{a}{var} = {b}", var, a, b
    return kind, f"{var}/{a} = {b}", var, a, b


def _correct(kind, var, a, b):
    if kind == "add":
        return f"subtract {a} from both sides", f"{var} = {b - a}"
    if kind == "sub":
        return f"add {a} to both sides", f"{var} = {b + a}"
    if kind == "mul":
        return f"divide both sides by {a}", f"{var} = {_fmt(Fraction(b, a))}"
    return f"multiply both sides by {a}", f"{var} = {b * a}"


def _bug(kind, var, a, b, rng):
    """A wrong (action, equation, feedback) for this problem, or None."""
    options = []
    if kind == "add":
        options.append(
            (
                f"add {a} to both sides",
                f"{var} + {a} + {a} = {b} + {a}",
                f"{b} + {a} is equal to {b} plus {a}. You need to calculate {b} minus {a}.",
            )
        )
        options.append(
            (
                f"subtract {a} from both sides",
                f"{var} = {a - b}",
                f"{a} - {b} is equal to {a} minus {b}. You need to calculate -{a} minus {b}.",
            )
        )
        if b - a < 0:
            options.append((f"subtract {a} from both sides", f"{var} = {a - b}", "You forgot the negative sign."))
    if kind == "sub":
        options.append((f"add {a} to both sides", f"{var} = {b - a}", "Check your sign."))
        options.append((f"subtract {a} from both sides", f"{var} - {a} - {a} = {b} - {a}", f"{b} - {a} is equal to {b} minus {a}. You need to calculate {b} plus {a}."))
    if kind == "mul":
        frac = Fraction(b, a)
        if b % a and math.gcd(a, b) > 1:
            options.append((f"divide both sides by {a}", f"{var} = {b}/{a}", f"Simplify the fraction {b}/{a}"))
        options.append((f"divide both sides by {a}", f"{var} = {_fmt(-frac)}", "Check your sign."))
    if kind == "div":
        options.append(
            (
                f"multiply both sides by {a}",
                f"{var} = {b}*{a}",
                "Put the expression in its simplest form by performing multiplication on the right side.",
            )
        )
        if b > 0:
            options.append((f"multiply both sides by {a}", f"{var} = -{b * a}", "Check your sign."))
    if rng.random() < 0.05:
        return f"add {a} to both sides", f"{var} ++ {a}", SYSTEM_MESSAGE
    return rng.choice(options) if options else None


def generate_log(
    n_students: int = 20,
    responses_per_student: int = 10,
    bug_rate: float = 0.6,
    seed: int = 0,
    with_problem: bool = True,
) -> list[RawInteraction]:
    rng = random.Random(seed)
    out: list[RawInteraction] = []
    for s in range(n_students):
        student = f"stu{s:03d}"
        for r in range(responses_per_student):
            response = f"{student}-p{r:02d}"
            kind, problem, var, a, b = _problem(rng)
            seq = 0

            def emit(k, payload, outcome, feedback=None):
                nonlocal seq
                out.append(
                    RawInteraction(
                        student, response, seq, k, payload, feedback, outcome, problem if with_problem else None
                    )
                )
                seq += 1

            if rng.random() < bug_rate:
                bug = _bug(kind, var, a, b, rng)
                if bug:
                    action, equation, feedback = bug
                    emit(InteractionKind.ACTION, action, Outcome.CORRECT)
                    emit(InteractionKind.EQUATION, equation, Outcome.BUG, feedback)
            action, equation = _correct(kind, var, a, b)
            emit(InteractionKind.ACTION, action, Outcome.CORRECT)
            emit(InteractionKind.EQUATION, equation, Outcome.CORRECT)
            if rng.random() < 0.2:
                emit(InteractionKind.OTHER, "done", Outcome.HINT, "You have solved the problem.")
    return out


def synthetic_records(n_students: int = 20, responses_per_student: int = 10, seed: int = 0, min_count: int = 0):
    """Labeled records from a synthetic log under the ``new19`` rules."""
    from dataclasses import replace

    from .data import apply_label_scheme, group_into_steps, load_scheme, select_bug_steps

    scheme = replace(load_scheme("new19"), min_count=min_count)
    steps = group_into_steps(generate_log(n_students, responses_per_student, seed=seed)).steps
    return apply_label_scheme(select_bug_steps(steps), scheme)
