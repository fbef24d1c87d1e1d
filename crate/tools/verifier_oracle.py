#!/usr/bin/env python3
"""Reference verdicts for the answer-equivalence corpus.

An independent re-implementation of the checker's documented rules on top of
Python's exact `fractions.Fraction`. Run it to regenerate the checked-in table:

    python3 tools/verifier_oracle.py > crates/core/tests/data/verifier_corpus.tsv

Columns: mode, left, right, verdict. mode `answer` compares two extracted
answers; mode `completion` extracts the final answer of the left cell first.
Newlines inside a cell are written as U+23CE.
"""

import re
import sys
from fractions import Fraction

NEWLINE = "⏎"


def matching_brace(s):
    depth = 1
    for i, c in enumerate(s):
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


def normalize(raw):
    s = raw
    for old, new in [("\\!", ""), ("\\,", ""), ("\\;", ""), ("\\ ", ""), ("\\%", "%"),
                     ("\\dfrac", "\\frac"), ("\\tfrac", "\\frac"), ("−", "-")]:
        s = s.replace(old, new)
    s = "".join(c for c in s if not c.isspace()).lower()
    while True:
        before = len(s)
        s = s.strip("$")
        for wrapper in ["\\boxed{", "\\text{", "\\mathrm{", "{"]:
            if s.startswith(wrapper):
                inner = s[len(wrapper):]
                if matching_brace(inner) == len(inner) - 1:
                    s = inner[:-1]
        if len(s) == before:
            return s


NUMBER = re.compile(r"^([+-]?)(?:(\d{1,3}(?:,\d{3})+)|(\d*))(?:\.(\d*))?$")


def number(s):
    m = NUMBER.match(s)
    if not m:
        return None
    sign, grouped, plain, frac = m.groups()
    digits = (grouped or "").replace(",", "") or plain or ""
    if frac is None and not digits:
        return None
    if frac is not None and not digits and not frac:
        return None
    v = Fraction(int(digits or "0"))
    if frac:
        v += Fraction(int(frac), 10 ** len(frac))
    return -v if sign == "-" else v


FRAC_ARG = r"(\{[^{}]*\}|\d)"
FRAC = re.compile(r"^([+-]?)\\frac" + FRAC_ARG + FRAC_ARG + "$")


def value(s):
    if s.endswith("%"):
        v = value(s[:-1])
        return None if v is None else v / 100
    m = FRAC.match(s)
    if m:
        num, den = (g[1:-1] if g.startswith("{") else g for g in m.groups()[1:])
        a, b = number(num), number(den)
        if a is None or b is None or b == 0:
            return None
        return -(a / b) if m.group(1) == "-" else a / b
    if "/" in s:
        a, b = s.split("/", 1)
        a, b = number(a), number(b)
        if a is None or b is None or b == 0:
            return None
        return a / b
    return number(s)


def equivalent(a, b):
    na, nb = normalize(a), normalize(b)
    va, vb = value(na), value(nb)
    if va is None and vb is None:
        return na == nb
    return va is not None and vb is not None and va == vb


def last_boxed(text):
    end = len(text)
    while True:
        pos = text.rfind("\\boxed", 0, end)
        if pos < 0:
            return None
        after = text[pos + len("\\boxed"):]
        stripped = after.lstrip()
        if stripped.startswith("{"):
            body = stripped[1:]
            close = matching_brace(body)
            if close is not None:
                return body[:close]
        end = pos


def extract(completion):
    boxed = last_boxed(completion)
    if boxed is not None and boxed.strip():
        return boxed.strip()
    lines = [l for l in completion.split("\n") if l.strip()]
    if lines:
        line = lines[-1]
        marks = []
        if "=" in line:
            marks.append(line.rfind("=") + 1)
        if "answer is" in line.lower():
            marks.append(line.lower().rfind("answer is") + len("answer is"))
        if marks:
            tail = line[max(marks):].strip().lstrip(":").rstrip(".,;!").strip().strip("$").strip()
            if tail:
                return tail
    for tok in reversed(completion.split()):
        tok = tok.strip("()[]\"'$*").rstrip(".,;:!?").strip("()[]\"'$*")
        if tok and value(normalize(tok)) is not None:
            return tok
    return None


ANSWER_PAIRS = [
    # integers and signs
    ("5", "5"), ("5", "6"), ("-3", "−3"), ("+7", "7"), ("0", "-0"), ("007", "7"),
    ("1,000", "1000"), ("12,345,678", "12345678"), ("1,00", "100"), ("10,000.5", "10000.50"),
    # decimals
    ("0.5", "1/2"), ("0.50", "0.5"), (".5", "0.5"), ("5.", "5"), ("2.0", "2"), ("3.14", "3.140"),
    ("3.14", "3.1416"), ("0.333", "1/3"), ("-0.25", "-1/4"), ("1.5", "3/2"), ("100.00", "1e2"),
    ("0.1", "1/10"), ("2.50", "5/2"), ("-.75", "-3/4"),
    # fractions
    ("1/2", "2/4"), ("3/4", "0.75"), ("-1/2", "1/-2"), ("6/3", "2"), ("1/3", "2/6"), ("1/3", "0.3"),
    ("5/0", "5/0"), ("1/2/3", "1/6"), ("10/4", "2.5"), ("7/8", "8/7"),
    # LaTeX fractions
    ("\\frac{1}{2}", "0.5"), ("\\dfrac{3}{4}", "3/4"), ("\\tfrac{2}{3}", "\\frac{4}{6}"),
    ("\\frac12", "1/2"), ("-\\frac{1}{4}", "-0.25"), ("\\frac{-1}{4}", "-1/4"), ("\\frac{10}{5}", "2"),
    ("\\frac{1}{0}", "1/0"), ("\\frac{1.5}{3}", "1/2"), ("\\frac{7}{2}", "3.5"), ("\\frac{2}{7}", "0.2857"),
    # percents
    ("50%", "0.5"), ("50\\%", "1/2"), ("12.5%", "1/8"), ("100%", "1"), ("5%", "5"), ("-20%", "-0.2"),
    ("\\frac{1}{2}%", "0.005"), ("33%", "1/3"),
    # boxed and math-mode wrappers
    ("\\boxed{42}", "42"), ("$42$", "42"), ("\\boxed{\\frac{1}{2}}", "0.5"), ("{{7}}", "7"),
    ("$\\boxed{3}$", "3.0"), ("\\boxed{ 1,234 }", "1234"), ("\\boxed{x+1}", "x + 1"), ("\\boxed{x+1}", "x+2"),
    ("\\text{5}", "5"), ("\\mathrm{12}", "12"), ("\\boxed{-\\dfrac{3}{2}}", "-1.5"),
    # LaTeX spacing
    ("1\\,000", "1000"), ("1\\!000", "1000"), ("3 \\; 4", "34"), ("2\\ 5", "25"),
    # text answers
    ("\\text{Yes}", "yes"), ("No", "no"), ("yes", "no"), ("Tuesday", "\\text{tuesday}"), ("(2, 3)", "(2,3)"),
    ("(2,3)", "(3,2)"), ("x^2", "x^{2}"), ("\\sqrt{2}", "\\sqrt{2}"), ("\\sqrt{2}", "1.414"), ("\\pi", "3.14"),
    ("A", "a"), ("blue", "Blue "), ("2x+2", "2(x+1)"), ("infinity", "\\infty"), ("", ""), ("abc", ""),
    # numbers against text
    ("5", "five"), ("12 apples", "12"), ("$5", "5"), ("1e3", "1000"), ("5 cm", "5"), ("3.5.1", "3.5"),
]

COMPLETION_PAIRS = [
    ("So the total is \\boxed{12}.", "12"),
    ("First 2+3=5." + NEWLINE + "Then \\boxed{5}", "5"),
    ("\\boxed{4} was wrong, the answer is \\boxed{6}", "6"),
    ("\\boxed{4} was wrong, the answer is \\boxed{6}", "4"),
    ("Nested \\boxed{\\frac{1}{2}} here", "0.5"),
    ("Unbalanced \\boxed{3 and then 4", "4"),
    ("We compute 3*4." + NEWLINE + "So x = 12", "12"),
    ("The answer is: 7.", "7"),
    ("The answer is $\\frac{3}{4}$.", "0.75"),
    ("Therefore the answer is 1,000!", "1000"),
    ("Adding gives 9, so we get 10 in the end", "10"),
    ("Adding gives 9, so we get 10 in the end", "9"),
    ("We find (15).", "15"),
    ("no numbers at all", "0"),
    ("Half of them: 50%", "1/2"),
    ("a = 3" + NEWLINE + "b = 4" + NEWLINE + NEWLINE, "4"),
    ("Final value: \\boxed{-7}", "-7"),
    ("apply +1: 3" + NEWLINE + NEWLINE + "apply ×2: 6. Final value: \\boxed{6}", "6"),
    ("\\boxed{} then 8", "8"),
    ("The answer is yes", "\\text{Yes}"),
    ("x = 2, y = 3", "3"),
    ("The price is $5.", "5"),
    ("\\boxed {9}", "9"),
    ("It equals 0.125", "1/8"),
    ("Answer Is 4", "4"),
]

# Verdicts fixed by hand; the oracle must agree with all of them.
KNOWN = {
    ("answer", "0.5", "1/2"): True,
    ("answer", "5%", "5"): False,
    ("answer", "1/3", "0.3"): False,
    ("answer", "1,00", "100"): False,
    ("answer", "\\frac{1}{2}%", "0.005"): True,
    ("answer", "2x+2", "2(x+1)"): False,
    ("completion", "\\boxed{4} was wrong, the answer is \\boxed{6}", "6"): True,
    ("completion", "Adding gives 9, so we get 10 in the end", "10"): True,
    ("completion", "no numbers at all", "0"): False,
    ("completion", "We find (15).", "15"): True,
}


def rows():
    for a, b in ANSWER_PAIRS:
        yield "answer", a, b, equivalent(a, b)
    for c, truth in COMPLETION_PAIRS:
        text = c.replace(NEWLINE, "\n")
        got = extract(text)
        yield "completion", c, truth, got is not None and equivalent(got, truth)


def main():
    table = list(rows())
    for mode, a, b, verdict in table:
        expected = KNOWN.get((mode, a, b))
        if expected is not None and expected != verdict:
            sys.exit(f"oracle disagrees with hand verdict on {mode} {a!r} {b!r}")
        if "\t" in a or "\t" in b:
            sys.exit(f"tab in cell: {a!r} {b!r}")
    print("mode\tleft\tright\tverdict")
    for mode, a, b, verdict in table:
        print(f"{mode}\t{a}\t{b}\t{'equivalent' if verdict else 'different'}")
    print(f"{len(table)} rows", file=sys.stderr)


if __name__ == "__main__":
    main()
