//! Exact reals of the form `q₀ + Σ qₖ√k + q_π·π` with rational `q`.
//!
//! Square roots are kept with squarefree radicands, so the representation is
//! unique and rationality is decided by inspecting the irrational parts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Q = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExactReal {
    rational: Q,
    /// squarefree radicand (> 1) → coefficient
    roots: BTreeMap<u64, Q>,
    pi: Q,
}

fn zero() -> Q {
    Q::from_integer(0)
}

/// `n = s² · r` with `r` squarefree.
fn squarefree_split(mut n: u64) -> (u64, u64) {
    let mut s = 1u64;
    let mut r = 1u64;
    let mut p = 2u64;
    while p * p <= n {
        let mut e = 0;
        while n % p == 0 {
            n /= p;
            e += 1;
        }
        s *= p.pow(e / 2);
        if e % 2 == 1 {
            r *= p;
        }
        p += 1;
    }
    (s, r * n)
}

impl ExactReal {
    pub fn rational(q: Q) -> Self {
        ExactReal {
            rational: q,
            ..Default::default()
        }
    }

    pub fn int(n: i128) -> Self {
        ExactReal::rational(Q::from_integer(n))
    }

    pub fn frac(p: i128, q: i128) -> Result<Self> {
        if q == 0 {
            return Err(Error::domain("zero denominator"));
        }
        Ok(ExactReal::rational(Q::new(p, q)))
    }

    /// `√n`, reduced to `s·√r`.
    pub fn sqrt(n: u64) -> Self {
        let (s, r) = squarefree_split(n);
        let coeff = Q::from_integer(s as i128);
        if r == 1 || n == 0 {
            return ExactReal::rational(if n == 0 { zero() } else { coeff });
        }
        let mut roots = BTreeMap::new();
        roots.insert(r, coeff);
        ExactReal {
            rational: zero(),
            roots,
            pi: zero(),
        }
    }

    pub fn pi() -> Self {
        ExactReal {
            pi: Q::from_integer(1),
            ..Default::default()
        }
    }

    /// Floats carry no exact value; always refused.
    pub fn from_f64(v: f64) -> Result<Self> {
        Err(Error::Refused(format!(
            "floating value {v} cannot be classified exactly; give p/q, sqrt(k) or pi terms"
        )))
    }

    pub fn is_rational(&self) -> bool {
        self.roots.values().all(|q| *q == zero()) && self.pi == zero()
    }

    pub fn as_rational(&self) -> Option<Q> {
        self.is_rational().then_some(self.rational)
    }

    pub fn is_zero(&self) -> bool {
        self.is_rational() && self.rational == zero()
    }

    pub fn to_f64(&self) -> f64 {
        let q = |r: &Q| *r.numer() as f64 / *r.denom() as f64;
        let mut v = q(&self.rational);
        for (k, c) in &self.roots {
            v += q(c) * (*k as f64).sqrt();
        }
        v + q(&self.pi) * std::f64::consts::PI
    }

    fn normalize(mut self) -> Self {
        self.roots.retain(|_, c| *c != zero());
        self
    }

    pub fn add(&self, o: &ExactReal) -> ExactReal {
        let mut r = self.clone();
        r.rational += o.rational;
        r.pi += o.pi;
        for (k, c) in &o.roots {
            *r.roots.entry(*k).or_insert_with(zero) += *c;
        }
        r.normalize()
    }

    pub fn neg(&self) -> ExactReal {
        ExactReal {
            rational: -self.rational,
            roots: self.roots.iter().map(|(k, c)| (*k, -*c)).collect(),
            pi: -self.pi,
        }
    }

    pub fn sub(&self, o: &ExactReal) -> ExactReal {
        self.add(&o.neg())
    }

    pub fn scale(&self, q: Q) -> ExactReal {
        ExactReal {
            rational: self.rational * q,
            roots: self.roots.iter().map(|(k, c)| (*k, *c * q)).collect(),
            pi: self.pi * q,
        }
        .normalize()
    }

    /// Product, when it stays inside the representable class.
    pub fn mul(&self, o: &ExactReal) -> Result<ExactReal> {
        if let Some(q) = o.as_rational() {
            return Ok(self.scale(q));
        }
        if let Some(q) = self.as_rational() {
            return Ok(o.scale(q));
        }
        if self.pi != zero() || o.pi != zero() {
            return Err(Error::Refused("product involving pi and another irrational".into()));
        }
        let mut acc = ExactReal::rational(zero());
        let terms = |e: &ExactReal| -> Vec<(u64, Q)> {
            let mut v: Vec<(u64, Q)> = e.roots.iter().map(|(k, c)| (*k, *c)).collect();
            if e.rational != zero() {
                v.push((1, e.rational));
            }
            v
        };
        for (k1, c1) in terms(self) {
            for (k2, c2) in terms(o) {
                let (s, r) = squarefree_split(k1 * k2);
                let term = ExactReal::sqrt(r).scale(c1 * c2 * Q::from_integer(s as i128));
                acc = acc.add(&term);
            }
        }
        Ok(acc)
    }

    /// Quotient by a rational or by a single `q√k` term.
    pub fn div(&self, o: &ExactReal) -> Result<ExactReal> {
        if o.is_zero() {
            return Err(Error::domain("division by zero"));
        }
        if let Some(q) = o.as_rational() {
            return Ok(self.scale(q.recip()));
        }
        if o.pi == zero() && o.rational == zero() && o.roots.len() == 1 {
            let (&k, &c) = o.roots.iter().next().expect("one root");
            // 1/(c√k) = √k/(c·k)
            let inv = ExactReal::sqrt(k).scale((c * Q::from_integer(k as i128)).recip());
            return self.mul(&inv);
        }
        Err(Error::Refused("division by a compound irrational".into()))
    }
}

impl fmt::Display for ExactReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if self.rational != zero() || (self.roots.is_empty() && self.pi == zero()) {
            parts.push(format!("{}", self.rational));
        }
        for (k, c) in &self.roots {
            parts.push(format!("{c}*sqrt({k})"));
        }
        if self.pi != zero() {
            parts.push(format!("{}*pi", self.pi));
        }
        write!(f, "{}", parts.join(" + "))
    }
}

impl FromStr for ExactReal {
    type Err = Error;

    /// Sums of products of integers, `p/q`, `sqrt(k)` and `pi`, e.g.
    /// `1/3`, `-2*sqrt(2)`, `sqrt(3)/2 + 1`, `pi/4`.
    fn from_str(s: &str) -> Result<Self> {
        let src: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if src.is_empty() {
            return Err(Error::domain("empty exact value"));
        }
        if src.contains('.') || src.contains('e') && !src.contains("sqrt") {
            return Err(Error::Refused(format!(
                "{s:?} looks like a floating value; give p/q, sqrt(k) or pi terms"
            )));
        }
        let mut total = ExactReal::int(0);
        let bytes: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < bytes.len() {
            let mut sign = 1i128;
            while i < bytes.len() && (bytes[i] == '+' || bytes[i] == '-') {
                if bytes[i] == '-' {
                    sign = -sign;
                }
                i += 1;
            }
            let start = i;
            let mut depth = 0;
            while i < bytes.len() && !(depth == 0 && (bytes[i] == '+' || bytes[i] == '-') && i > start) {
                match bytes[i] {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    _ => {}
                }
                i += 1;
            }
            let term: String = bytes[start..i].iter().collect();
            total = total.add(&parse_term(&term)?.scale(Q::from_integer(sign)));
        }
        Ok(total)
    }
}

fn parse_factor(f: &str) -> Result<ExactReal> {
    if f == "pi" || f == "π" {
        return Ok(ExactReal::pi());
    }
    if let Some(inner) = f.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
        let n: u64 = inner
            .parse()
            .map_err(|_| Error::domain(format!("bad radicand {inner:?}")))?;
        return Ok(ExactReal::sqrt(n));
    }
    if let Some(inner) = f.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        return inner.parse();
    }
    let n: i128 = f
        .parse()
        .map_err(|_| Error::domain(format!("bad exact factor {f:?}")))?;
    Ok(ExactReal::int(n))
}

fn parse_term(t: &str) -> Result<ExactReal> {
    if t.is_empty() {
        return Err(Error::domain("empty term"));
    }
    let mut acc = ExactReal::int(1);
    let mut op = '*';
    let mut cur = String::new();
    let mut depth = 0;
    let flush = |acc: ExactReal, op: char, cur: &str| -> Result<ExactReal> {
        let v = parse_factor(cur)?;
        if op == '*' {
            acc.mul(&v)
        } else {
            acc.div(&v)
        }
    };
    for c in t.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth -= 1;
                cur.push(c);
            }
            '*' | '/' if depth == 0 => {
                acc = flush(acc, op, &cur)?;
                cur.clear();
                op = c;
            }
            _ => cur.push(c),
        }
    }
    flush(acc, op, &cur)
}

impl Serialize for ExactReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Least common multiple for positive integers.
pub(crate) fn lcm(a: i128, b: i128) -> i128 {
    a.lcm(&b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_rationality() {
        let a: ExactReal = "1/3".parse().unwrap();
        assert_eq!(a.as_rational(), Some(Q::new(1, 3)));
        let b: ExactReal = "sqrt(8)".parse().unwrap();
        assert!(!b.is_rational());
        assert_eq!(b.to_string(), "2*sqrt(2)");
        let c: ExactReal = "sqrt(2) - 2*sqrt(2)/2".parse().unwrap();
        assert!(c.is_zero());
        let d: ExactReal = "sqrt(2)*sqrt(2)".parse().unwrap();
        assert_eq!(d.as_rational(), Some(Q::from_integer(2)));
        let e: ExactReal = "pi/4 + 1".parse().unwrap();
        assert!((e.to_f64() - (std::f64::consts::FRAC_PI_4 + 1.0)).abs() < 1e-15);
        assert!(matches!("0.5".parse::<ExactReal>(), Err(Error::Refused(_))));
        assert!(matches!(ExactReal::from_f64(0.5), Err(Error::Refused(_))));
    }

    #[test]
    fn division_by_root() {
        let a: ExactReal = "1/sqrt(2)".parse().unwrap();
        assert_eq!(a.to_string(), "1/2*sqrt(2)");
        let b: ExactReal = "sqrt(6)/sqrt(3)".parse().unwrap();
        assert_eq!(b, ExactReal::sqrt(2));
    }

    #[test]
    fn serde_roundtrip() {
        let a: ExactReal = "3/2 + sqrt(5)".parse().unwrap();
        let s = serde_json::to_string(&a).unwrap();
        let b: ExactReal = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
