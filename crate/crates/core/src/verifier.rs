//! Final-answer extraction and answer equivalence.
//!
//! Numbers are normalized to exact values: integers, fractions (`a/b`,
//! `\frac{a}{b}`) and percentages become reduced rationals, decimals keep
//! their written precision as `significand · 10^exponent`. Everything else is
//! compared as normalized text. There is no symbolic algebra: `2(x+1)` and
//! `2x+2` are different answers.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerKind {
    /// `p/q`, reduced, `q > 0`.
    Rational { p: BigInt, q: BigInt },
    /// `significand · 10^exponent`, with trailing zeros folded into the exponent.
    Decimal { significand: BigInt, exponent: i64 },
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    pub raw: String,
}

impl CanonicalAnswer {
    pub fn rational(p: impl Into<BigInt>, q: impl Into<BigInt>) -> Option<Self> {
        let kind = make_rational(p.into(), q.into())?;
        let raw = render_kind(&kind);
        Some(Self { kind, raw })
    }

    pub fn decimal(significand: impl Into<BigInt>, exponent: i64) -> Self {
        let kind = make_decimal(significand.into(), exponent);
        let raw = render_kind(&kind);
        Self { kind, raw }
    }

    /// Exact value for the numeric kinds.
    pub fn value(&self) -> Option<BigRational> {
        kind_value(&self.kind)
    }

    /// Canonical textual form; parsing it yields the same kind.
    pub fn render(&self) -> String {
        render_kind(&self.kind)
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn make_rational(p: BigInt, q: BigInt) -> Option<AnswerKind> {
    if q.is_zero() {
        return None;
    }
    let g = p.gcd(&q);
    let (mut p, mut q) = if g.is_zero() { (p, q) } else { (p / &g, q / &g) };
    if q.is_negative() {
        p = -p;
        q = -q;
    }
    Some(AnswerKind::Rational { p, q })
}

fn make_decimal(mut significand: BigInt, mut exponent: i64) -> AnswerKind {
    if significand.is_zero() {
        return AnswerKind::Decimal {
            significand,
            exponent: 0,
        };
    }
    let ten = BigInt::from(10);
    loop {
        let (d, r) = significand.div_rem(&ten);
        if !r.is_zero() {
            break;
        }
        significand = d;
        exponent += 1;
    }
    AnswerKind::Decimal { significand, exponent }
}

fn pow10(e: u64) -> BigInt {
    Pow::pow(BigInt::from(10), e)
}

fn kind_value(kind: &AnswerKind) -> Option<BigRational> {
    match kind {
        AnswerKind::Rational { p, q } => Some(BigRational::new(p.clone(), q.clone())),
        AnswerKind::Decimal { significand, exponent } => Some(if *exponent >= 0 {
            BigRational::from_integer(significand * pow10(*exponent as u64))
        } else {
            BigRational::new(significand.clone(), pow10(exponent.unsigned_abs()))
        }),
        AnswerKind::Text(_) => None,
    }
}

fn render_kind(kind: &AnswerKind) -> String {
    match kind {
        AnswerKind::Rational { p, q } if q.is_one() => p.to_string(),
        AnswerKind::Rational { p, q } => format!("{p}/{q}"),
        AnswerKind::Decimal { significand, exponent } => {
            let sign = if significand.is_negative() { "-" } else { "" };
            let digits = significand.abs().to_string();
            if *exponent >= 0 {
                format!("{sign}{digits}{}.0", "0".repeat(*exponent as usize))
            } else {
                let frac_len = exponent.unsigned_abs() as usize;
                let padded = if digits.len() <= frac_len {
                    format!("{}{}", "0".repeat(frac_len - digits.len() + 1), digits)
                } else {
                    digits
                };
                let split = padded.len() - frac_len;
                format!("{sign}{}.{}", &padded[..split], &padded[split..])
            }
        }
        AnswerKind::Text(t) => t.clone(),
    }
}

/// Pulls the final answer out of a free-text completion.
///
/// Order of preference: the last balanced `\boxed{...}`; the last line's text
/// after its final `=` or `answer is` marker; the last standalone number.
pub fn extract_final_answer(completion: &str) -> Option<String> {
    if let Some(b) = last_boxed(completion) {
        let b = b.trim();
        if !b.is_empty() {
            return Some(b.to_string());
        }
    }
    if let Some(line) = completion.lines().rev().find(|l| !l.trim().is_empty()) {
        let lower = line.to_lowercase();
        // Lowercasing can change byte offsets for non-ASCII text; only trust
        // the marker position when lengths agree.
        let marker_end = [
            line.rfind('=').map(|i| i + 1),
            if lower.len() == line.len() {
                lower.rfind("answer is").map(|i| i + "answer is".len())
            } else {
                None
            },
        ]
        .into_iter()
        .flatten()
        .max();
        if let Some(end) = marker_end {
            let tail = line[end..]
                .trim()
                .trim_start_matches(':')
                .trim_end_matches(['.', ',', ';', '!'])
                .trim()
                .trim_matches('$')
                .trim();
            if !tail.is_empty() {
                return Some(tail.to_string());
            }
        }
    }
    last_numeric_token(completion)
}

/// The last whitespace-separated token that parses as a number, with
/// surrounding brackets, quotes and trailing punctuation removed.
pub fn last_numeric_token(text: &str) -> Option<String> {
    text.split_whitespace()
        .rev()
        .map(|tok| {
            let wrap = |c: char| matches!(c, '(' | ')' | '[' | ']' | '"' | '\'' | '$' | '*');
            tok.trim_matches(wrap).trim_end_matches(['.', ',', ';', ':', '!', '?']).trim_matches(wrap)
        })
        .find(|tok| !tok.is_empty() && parse_numeric(&normalize(tok)).is_some())
        .map(str::to_string)
}

/// Content of the last `\boxed{...}` whose braces balance.
fn last_boxed(text: &str) -> Option<&str> {
    let mut search_end = text.len();
    while let Some(pos) = text[..search_end].rfind("\\boxed") {
        let after = &text[pos + "\\boxed".len()..];
        let open = after.len() - after.trim_start().len();
        if after[open..].starts_with('{') {
            let body_start = pos + "\\boxed".len() + open + 1;
            if let Some(close) = matching_brace(&text[body_start..]) {
                return Some(&text[body_start..body_start + close]);
            }
        }
        search_end = pos;
    }
    None
}

/// Byte offset of the `}` closing an already-opened group.
fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses an extracted answer into its canonical form. Never fails: anything
/// that is not a recognized number becomes normalized text.
pub fn parse_answer(raw: &str) -> CanonicalAnswer {
    let norm = normalize(raw);
    let kind = parse_numeric(&norm).unwrap_or(AnswerKind::Text(norm));
    CanonicalAnswer {
        kind,
        raw: raw.to_string(),
    }
}

/// Strips presentation (whitespace, `$`, wrapping braces, `\boxed`, `\text`,
/// LaTeX spacing) and lowercases. Idempotent.
fn normalize(raw: &str) -> String {
    let mut s: String = raw
        .replace("\\!", "")
        .replace("\\,", "")
        .replace("\\;", "")
        .replace("\\ ", "")
        .replace("\\%", "%")
        .replace("\\dfrac", "\\frac")
        .replace("\\tfrac", "\\frac")
        .replace('−', "-")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_lowercase();
    loop {
        let before = s.len();
        s = s.trim_matches('$').to_string();
        for wrapper in ["\\boxed{", "\\text{", "\\mathrm{", "{"] {
            if let Some(inner) = s.strip_prefix(wrapper) {
                if matching_brace(inner) == Some(inner.len() - 1) {
                    s = inner[..inner.len() - 1].to_string();
                }
            }
        }
        if s.len() == before {
            return s;
        }
    }
}

fn parse_numeric(s: &str) -> Option<AnswerKind> {
    if let Some(body) = s.strip_suffix('%') {
        let v = kind_value(&parse_numeric(body)?)?;
        let v = v / BigRational::from_integer(BigInt::from(100));
        return make_rational(v.numer().clone(), v.denom().clone());
    }
    if let Some(kind) = parse_frac(s) {
        return Some(kind);
    }
    if let Some((a, b)) = s.split_once('/') {
        let a = kind_value(&parse_number(a)?)?;
        let b = kind_value(&parse_number(b)?)?;
        if b.is_zero() {
            return None;
        }
        let v = a / b;
        return make_rational(v.numer().clone(), v.denom().clone());
    }
    parse_number(s)
}

/// `\frac{a}{b}` or the shorthand `\frac12`, optionally signed.
fn parse_frac(s: &str) -> Option<AnswerKind> {
    let (negative, rest) = split_sign(s);
    let rest = rest.strip_prefix("\\frac")?;
    let (num, rest) = frac_arg(rest)?;
    let (den, rest) = frac_arg(rest)?;
    if !rest.is_empty() {
        return None;
    }
    let a = kind_value(&parse_number(num)?)?;
    let b = kind_value(&parse_number(den)?)?;
    if b.is_zero() {
        return None;
    }
    let v = if negative { -(a / b) } else { a / b };
    make_rational(v.numer().clone(), v.denom().clone())
}

fn frac_arg(s: &str) -> Option<(&str, &str)> {
    if let Some(inner) = s.strip_prefix('{') {
        let close = matching_brace(inner)?;
        Some((&inner[..close], &inner[close + 1..]))
    } else {
        let c = s.chars().next()?;
        c.is_ascii_digit().then(|| s.split_at(1))
    }
}

fn split_sign(s: &str) -> (bool, &str) {
    if let Some(r) = s.strip_prefix('-') {
        (true, r)
    } else if let Some(r) = s.strip_prefix('+') {
        (false, r)
    } else {
        (false, s)
    }
}

/// Signed integer or decimal, with optional comma thousands grouping.
fn parse_number(s: &str) -> Option<AnswerKind> {
    let (negative, body) = split_sign(s);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let int_digits = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let ok = (1..=3).contains(&groups[0].len())
            && groups[1..].iter().all(|g| g.len() == 3)
            && groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit()));
        if !ok {
            return None;
        }
        groups.concat()
    } else {
        int_part.to_string()
    };
    if !int_digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match frac_part {
        None => {
            if int_digits.is_empty() {
                return None;
            }
            let mut v: BigInt = int_digits.parse().ok()?;
            if negative {
                v = -v;
            }
            make_rational(v, BigInt::one())
        }
        Some(frac) => {
            if !frac.bytes().all(|b| b.is_ascii_digit()) || (int_digits.is_empty() && frac.is_empty()) {
                return None;
            }
            let digits = format!("{int_digits}{frac}");
            let mut v: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
            if negative {
                v = -v;
            }
            Some(make_decimal(v, -(frac.len() as i64)))
        }
    }
}

/// Answer equivalence: exact rational comparison for numbers, normalized
/// string equality for text. A text answer facing a number is re-tried as a number.
pub fn answers_equivalent(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (&a.kind, &b.kind) {
        (AnswerKind::Text(x), AnswerKind::Text(y)) => x == y,
        (AnswerKind::Text(t), _) => numeric_text(t).zip(b.value()).is_some_and(|(x, y)| x == y),
        (_, AnswerKind::Text(t)) => a.value().zip(numeric_text(t)).is_some_and(|(x, y)| x == y),
        _ => a.value() == b.value(),
    }
}

fn numeric_text(t: &str) -> Option<BigRational> {
    kind_value(&parse_numeric(&normalize(t))?)
}

/// Parses both raw answers and compares them.
pub fn raw_equivalent(predicted: &str, truth: &str) -> bool {
    answers_equivalent(&parse_answer(predicted), &parse_answer(truth))
}

/// Outcome of scoring one completion against a ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub extracted: Option<String>,
    pub correct: bool,
}

impl Verdict {
    pub fn reward(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Extracts the final answer of `completion` and checks it against `truth`.
/// A completion without an extractable answer is simply incorrect.
pub fn score_completion(completion: &str, truth: &str) -> Verdict {
    let extracted = extract_final_answer(completion);
    let correct = extracted.as_deref().is_some_and(|e| raw_equivalent(e, truth));
    Verdict { extracted, correct }
}
