//! Sparse multivariate polynomial arithmetic.
//!
//! Polynomials are stored as maps from exponent vectors to `f64`
//! coefficients. The term order is graded lexicographic (total degree
//! first, then lexicographic with earlier variables dominating), which
//! fixes a deterministic basis indexing and a canonical text form used
//! in problem files and reports.
//!
//! Coefficients below [`PRUNE_THRESHOLD`] are dropped after every
//! arithmetic operation so that repeated products do not accumulate
//! spurious terms.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Terms with |coefficient| below this are removed after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-14;

/// A monomial: one exponent per variable of the ambient space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    /// The constant monomial in `nvars` variables.
    pub fn one(nvars: usize) -> Self {
        Self { exponents: vec![0; nvars] }
    }

    /// The monomial `x_i` in `nvars` variables.
    pub fn var(index: usize, nvars: usize) -> Self {
        let mut exponents = vec![0; nvars];
        exponents[index] = 1;
        Self { exponents }
    }

    pub fn nvars(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    /// Product of two monomials of equal arity.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.nvars(), other.nvars());
        Monomial {
            exponents: self
                .exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// Sign picked up under the diagonal ±1 transformation `diag`:
    /// `m(Λx) = sign · m(x)`. Exact integer arithmetic on exponent
    /// parities.
    pub fn sign_under(&self, diag: &[i8]) -> i8 {
        let flips: u32 = self
            .exponents
            .iter()
            .zip(diag)
            .filter(|(_, &d)| d < 0)
            .map(|(&e, _)| e)
            .sum();
        if flips % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

impl Ord for Monomial {
    /// Graded lexicographic: lower total degree first; within a degree,
    /// monomials with more weight on earlier variables come first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sign-signature constraint for basis enumeration: keep only monomials
/// whose sign under each generator equals the matching entry of `signs`.
#[derive(Debug, Clone)]
pub struct ParityFilter {
    pub generators: Vec<Vec<i8>>,
    pub signs: Vec<i8>,
}

impl ParityFilter {
    /// Invariance filter: sign +1 under every generator.
    pub fn invariant(generators: Vec<Vec<i8>>) -> Self {
        let signs = vec![1; generators.len()];
        Self { generators, signs }
    }

    pub fn accepts(&self, m: &Monomial) -> bool {
        self.generators
            .iter()
            .zip(&self.signs)
            .all(|(g, &s)| m.sign_under(g) == s)
    }
}

/// A sparse multivariate polynomial with `f64` coefficients.
///
/// The zero polynomial has degree −1 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
    nvars: usize,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { terms: BTreeMap::new(), nvars }
    }

    pub fn constant(c: f64, nvars: usize) -> Self {
        let mut p = Self::zero(nvars);
        if c.abs() >= PRUNE_THRESHOLD {
            p.terms.insert(Monomial::one(nvars), c);
        }
        p
    }

    pub fn var(index: usize, nvars: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.terms.insert(Monomial::var(index, nvars), 1.0);
        p
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let nvars = m.nvars();
        let mut p = Self::zero(nvars);
        if c.abs() >= PRUNE_THRESHOLD {
            p.terms.insert(m, c);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            if m.nvars() != nvars {
                return Err(Error::DimensionMismatch(format!(
                    "monomial arity {} does not match nvars {}",
                    m.nvars(),
                    nvars
                )));
            }
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.prune();
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; −1 for the zero polynomial.
    pub fn degree(&self) -> i32 {
        self.terms
            .keys()
            .map(|m| m.degree() as i32)
            .max()
            .unwrap_or(-1)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_THRESHOLD);
    }

    fn check_arity(&self, other: &Polynomial) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch(format!(
                "polynomials in {} and {} variables",
                self.nvars, other.nvars
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_arity(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.prune();
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let v = c * s;
            if v.abs() >= PRUNE_THRESHOLD {
                out.terms.insert(m.clone(), v);
            }
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_arity(other)?;
        let mut out = Self::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                *out.terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn pow(&self, n: u32) -> Polynomial {
        let mut out = Self::constant(1.0, self.nvars);
        for _ in 0..n {
            out = out.mul(self).expect("same arity");
        }
        out
    }

    /// Formal partial derivative with respect to variable `var_index`.
    pub fn diff(&self, var_index: usize) -> Result<Polynomial> {
        if var_index >= self.nvars {
            return Err(Error::IndexOutOfRange { index: var_index, nvars: self.nvars });
        }
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.exponents[var_index];
            if e == 0 {
                continue;
            }
            let mut exps = m.exponents.clone();
            exps[var_index] = e - 1;
            *out.terms.entry(Monomial::new(exps)).or_insert(0.0) += c * e as f64;
        }
        out.prune();
        Ok(out)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} for polynomial in {} variables",
                point.len(),
                self.nvars
            )));
        }
        Ok(self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum())
    }

    /// Returns `q` with `q(x) = p(Lx)` by exact symbolic substitution.
    pub fn linear_substitute(&self, l: &DMatrix<f64>) -> Result<Polynomial> {
        if l.nrows() != self.nvars || l.ncols() != self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for polynomial in {} variables",
                l.nrows(),
                l.ncols(),
                self.nvars
            )));
        }
        // Images of each variable under L, and their powers on demand.
        let images: Vec<Polynomial> = (0..self.nvars)
            .map(|i| {
                let mut img = Polynomial::zero(self.nvars);
                for j in 0..self.nvars {
                    let c = l[(i, j)];
                    if c.abs() >= PRUNE_THRESHOLD {
                        img.terms.insert(Monomial::var(j, self.nvars), c);
                    }
                }
                img
            })
            .collect();
        let mut powers: Vec<Vec<Polynomial>> =
            (0..self.nvars).map(|_| vec![Polynomial::constant(1.0, self.nvars)]).collect();
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(c, self.nvars);
            for (i, &e) in m.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().unwrap().mul(&images[i])?;
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][e as usize])?;
            }
            out = out.add(&term)?;
        }
        Ok(out)
    }

    /// Fast exact substitution for diagonal ±1 matrices: flips the sign of
    /// terms that are odd under `diag`.
    pub fn sign_substitute(&self, diag: &[i8]) -> Result<Polynomial> {
        if diag.len() != self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "diagonal of length {} for polynomial in {} variables",
                diag.len(),
                self.nvars
            )));
        }
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * m.sign_under(diag) as f64);
        }
        Ok(out)
    }

    /// Coefficient-wise comparison after pruning.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        if self.nvars != other.nvars {
            return false;
        }
        match self.sub(other) {
            Ok(d) => d.max_abs_coeff() <= tol,
            Err(_) => false,
        }
    }

    /// Canonical text form: terms in graded-lex order as
    /// `coeff * x1^a1*x2` joined by ` + `, coefficients printed with 17
    /// significant digits.
    pub fn to_text(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, &c)| {
                let vars: Vec<String> = m
                    .exponents
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| {
                        if e == 1 {
                            names[i].clone()
                        } else {
                            format!("{}^{}", names[i], e)
                        }
                    })
                    .collect();
                if vars.is_empty() {
                    format!("{:.16e}", c)
                } else {
                    format!("{:.16e} * {}", c, vars.join("*"))
                }
            })
            .collect();
        parts.join(" + ")
    }

    /// Parses the canonical text form (and modestly more lenient input:
    /// optional `*` before variables, `-` separators, bare variables).
    pub fn parse(text: &str, names: &[String]) -> Result<Polynomial> {
        parse_polynomial(text, names)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (1..=self.nvars).map(|i| format!("x{i}")).collect();
        write!(f, "{}", self.to_text(&names))
    }
}

/// All monomials in `nvars` variables of total degree ≤ `max_degree`, in
/// graded-lex order, optionally restricted by a sign-signature filter.
pub fn basis_monomials(
    nvars: usize,
    max_degree: u32,
    parity_filter: Option<&ParityFilter>,
) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut exps = vec![0u32; nvars];
    for d in 0..=max_degree {
        gen_degree(nvars, 0, d, &mut exps, &mut out);
    }
    match parity_filter {
        Some(f) => out.into_iter().filter(|m| f.accepts(m)).collect(),
        None => out,
    }
}

fn gen_degree(nvars: usize, var: usize, remaining: u32, exps: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if var + 1 == nvars {
        exps[var] = remaining;
        out.push(Monomial::new(exps.clone()));
        exps[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[var] = e;
        gen_degree(nvars, var + 1, remaining - e, exps, out);
        exps[var] = 0;
    }
}

/// Flattened representation for fast repeated evaluation in integrators.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, u32)>)>,
}

impl CompiledPoly {
    pub fn eval(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, vars) in &self.terms {
            let mut t = *c;
            for &(i, e) in vars {
                t *= point[i].powi(e as i32);
            }
            acc += t;
        }
        acc
    }
}

impl Polynomial {
    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| {
                    let vars = m
                        .exponents
                        .iter()
                        .enumerate()
                        .filter(|(_, &e)| e > 0)
                        .map(|(i, &e)| (i, e))
                        .collect();
                    (c, vars)
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Text parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part of a float literal
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number `{s}`")))?;
            tokens.push(Token::Number(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            match c {
                '+' => tokens.push(Token::Plus),
                '-' => tokens.push(Token::Minus),
                '*' => tokens.push(Token::Star),
                '^' => tokens.push(Token::Caret),
                _ => return Err(Error::Parse(format!("unexpected character `{c}`"))),
            }
            i += 1;
        }
    }
    Ok(tokens)
}

fn parse_polynomial(text: &str, names: &[String]) -> Result<Polynomial> {
    let nvars = names.len();
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(Error::Parse("empty polynomial".to_string()));
    }
    let mut out = Polynomial::zero(nvars);
    let mut pos = 0;
    let mut sign = 1.0;
    // optional leading sign(s); `+ -2.5e0 * x1` from the canonical writer
    // also lands here, so consecutive signs accumulate
    while let Some(tok) = tokens.get(pos) {
        match tok {
            Token::Plus => pos += 1,
            Token::Minus => {
                sign = -sign;
                pos += 1;
            }
            _ => break,
        }
    }
    loop {
        let (term, next) = parse_term(&tokens, pos, names)?;
        out = out.add(&term.scale(sign))?;
        pos = next;
        if pos == tokens.len() {
            break;
        }
        match &tokens[pos] {
            Token::Plus => sign = 1.0,
            Token::Minus => sign = -1.0,
            t => return Err(Error::Parse(format!("expected + or -, found {t:?}"))),
        }
        pos += 1;
        while let Some(tok) = tokens.get(pos) {
            match tok {
                Token::Plus => pos += 1,
                Token::Minus => {
                    sign = -sign;
                    pos += 1;
                }
                _ => break,
            }
        }
        if pos == tokens.len() {
            return Err(Error::Parse("dangling sign at end of polynomial".to_string()));
        }
    }
    Ok(out)
}

fn parse_term(tokens: &[Token], mut pos: usize, names: &[String]) -> Result<(Polynomial, usize)> {
    let nvars = names.len();
    let mut coeff = 1.0;
    let mut exps = vec![0u32; nvars];
    let mut saw_factor = false;

    if let Some(Token::Number(v)) = tokens.get(pos) {
        coeff = *v;
        pos += 1;
        saw_factor = true;
        // optional * between coefficient and variables
        if matches!(tokens.get(pos), Some(Token::Star)) {
            pos += 1;
            saw_factor = false; // a factor must follow the star
        }
    }
    loop {
        match tokens.get(pos) {
            Some(Token::Ident(name)) => {
                let idx = names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Parse(format!("unknown variable `{name}`")))?;
                pos += 1;
                let mut exp = 1u32;
                if matches!(tokens.get(pos), Some(Token::Caret)) {
                    pos += 1;
                    match tokens.get(pos) {
                        Some(Token::Number(v)) if v.fract() == 0.0 && *v >= 0.0 => {
                            exp = *v as u32;
                            pos += 1;
                        }
                        _ => return Err(Error::Parse("expected nonnegative integer exponent after ^".to_string())),
                    }
                }
                exps[idx] += exp;
                saw_factor = true;
                if matches!(tokens.get(pos), Some(Token::Star)) {
                    pos += 1;
                    saw_factor = false;
                    continue;
                }
                // allow implicit product before another identifier
                if matches!(tokens.get(pos), Some(Token::Ident(_))) {
                    continue;
                }
                break;
            }
            Some(Token::Number(_)) if !saw_factor => {
                return Err(Error::Parse("misplaced number inside term".to_string()))
            }
            _ => break,
        }
    }
    if !saw_factor {
        return Err(Error::Parse("empty term".to_string()));
    }
    Ok((Polynomial::monomial(Monomial::new(exps), coeff), pos))
}

/// `x1..xn` variable names.
pub fn state_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// `x1..xn, z1..zn` variable names for the tangent-augmented space.
pub fn xz_names(n: usize) -> Vec<String> {
    let mut names = state_names(n);
    names.extend((1..=n).map(|i| format!("z{i}")));
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize, n: usize) -> Polynomial {
        Polynomial::var(i, n)
    }

    #[test]
    fn add_cancellation_and_identity() {
        let n = 2;
        let p = x(0, n).add(&x(1, n)).unwrap();
        let q = x(0, n).sub(&x(1, n)).unwrap();
        let s = p.add(&q).unwrap();
        assert!(s.approx_eq(&x(0, n).scale(2.0), 0.0));

        assert_eq!(p.add(&Polynomial::zero(n)).unwrap(), p);

        let a = x(0, n).pow(2);
        let z = a.add(&a.neg()).unwrap();
        assert!(z.is_zero());
        assert_eq!(z.degree(), -1);
    }

    #[test]
    fn mul_difference_of_squares_and_expansion() {
        let n = 2;
        let p = x(0, n).add(&x(1, n)).unwrap();
        let q = x(0, n).sub(&x(1, n)).unwrap();
        let prod = p.mul(&q).unwrap();
        let expect = x(0, n).pow(2).sub(&x(1, n).pow(2)).unwrap();
        assert!(prod.approx_eq(&expect, 1e-15));

        let one = Polynomial::constant(1.0, n);
        assert_eq!(p.mul(&one).unwrap(), p);

        // (x1 + 1)^2 = x1^2 + 2 x1 + 1, expanded by hand
        let r = x(0, 1).add(&Polynomial::constant(1.0, 1)).unwrap().pow(2);
        let expect = Polynomial::from_terms(
            1,
            [
                (Monomial::new(vec![2]), 1.0),
                (Monomial::new(vec![1]), 2.0),
                (Monomial::new(vec![0]), 1.0),
            ],
        )
        .unwrap();
        assert!(r.approx_eq(&expect, 1e-15));
    }

    #[test]
    fn diff_power_rule_and_absent_variable() {
        let n = 2;
        // d/dx1 (x1^2 x2) = 2 x1 x2
        let p = x(0, n).pow(2).mul(&x(1, n)).unwrap();
        let d = p.diff(0).unwrap();
        let expect = x(0, n).mul(&x(1, n)).unwrap().scale(2.0);
        assert!(d.approx_eq(&expect, 1e-15));

        let q = x(0, n).pow(2);
        assert!(q.diff(1).unwrap().is_zero());

        assert!(q.diff(5).is_err());
    }

    #[test]
    fn diff_henon_heiles_hamiltonian() {
        // H = (x1^2+x2^2+x3^2+x4^2)/2 + x1^2 x2 - x2^3/3; dH/dx2 = x2 + x1^2 - x2^2
        let n = 4;
        let mut h = Polynomial::zero(n);
        for i in 0..4 {
            h = h.add(&x(i, n).pow(2).scale(0.5)).unwrap();
        }
        h = h.add(&x(0, n).pow(2).mul(&x(1, n)).unwrap()).unwrap();
        h = h.sub(&x(1, n).pow(3).scale(1.0 / 3.0)).unwrap();
        let d = h.diff(1).unwrap();
        let expect = x(1, n)
            .add(&x(0, n).pow(2))
            .unwrap()
            .sub(&x(1, n).pow(2))
            .unwrap();
        assert!(d.approx_eq(&expect, 1e-15));
        // H(0) = 0
        assert_eq!(h.eval(&[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn eval_lorenz_component() {
        // f2 = r x1 - x2 - x1 x3 at (1,1,1) with r = 28 -> 26
        let n = 3;
        let f2 = x(0, n)
            .scale(28.0)
            .sub(&x(1, n))
            .unwrap()
            .sub(&x(0, n).mul(&x(2, n)).unwrap())
            .unwrap();
        assert_eq!(f2.eval(&[1.0, 1.0, 1.0]).unwrap(), 26.0);
        // any p at 0 -> constant term
        let p = f2.add(&Polynomial::constant(3.25, n)).unwrap();
        assert_eq!(p.eval(&[0.0; 3]).unwrap(), 3.25);
        assert!(p.eval(&[0.0; 2]).is_err());
    }

    #[test]
    fn linear_substitute_signs_and_swap() {
        let p = x(0, 1);
        let l = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(p.linear_substitute(&l).unwrap().approx_eq(&p.neg(), 0.0));

        let p2 = x(0, 1).pow(2);
        assert!(p2.linear_substitute(&l).unwrap().approx_eq(&p2, 0.0));

        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p3 = x(0, 2).mul(&x(1, 2)).unwrap();
        assert!(p3.linear_substitute(&swap).unwrap().approx_eq(&p3, 0.0));
    }

    #[test]
    fn sign_substitute_matches_linear_substitute() {
        let n = 3;
        let p = x(0, n)
            .pow(2)
            .add(&x(1, n).mul(&x(2, n)).unwrap())
            .unwrap()
            .add(&x(0, n))
            .unwrap();
        let diag = [-1i8, 1, -1];
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0, -1.0]));
        let a = p.sign_substitute(&diag).unwrap();
        let b = p.linear_substitute(&l).unwrap();
        assert!(a.approx_eq(&b, 1e-15));
    }

    #[test]
    fn basis_counts_and_order() {
        // |basis(n, d)| == C(n+d, d)
        fn binom(n: u64, k: u64) -> u64 {
            let mut r = 1u64;
            for i in 0..k {
                r = r * (n - i) / (i + 1);
            }
            r
        }
        for n in 1..=8usize {
            for d in 0..=10u32 {
                let b = basis_monomials(n, d, None);
                assert_eq!(b.len() as u64, binom((n + d as usize) as u64, d as u64));
            }
        }
        assert_eq!(basis_monomials(6, 3, None).len(), 84);

        let b = basis_monomials(1, 2, None);
        assert_eq!(
            b,
            vec![
                Monomial::new(vec![0]),
                Monomial::new(vec![1]),
                Monomial::new(vec![2])
            ]
        );

        // even monomials under diag(-1,-1): {1, x1^2, x1 x2, x2^2}
        let f = ParityFilter::invariant(vec![vec![-1, -1]]);
        let b = basis_monomials(2, 2, Some(&f));
        assert_eq!(
            b,
            vec![
                Monomial::new(vec![0, 0]),
                Monomial::new(vec![2, 0]),
                Monomial::new(vec![1, 1]),
                Monomial::new(vec![0, 2])
            ]
        );
    }

    #[test]
    fn graded_lex_within_degree() {
        let b = basis_monomials(2, 2, None);
        let degree2: Vec<_> = b.iter().filter(|m| m.degree() == 2).collect();
        assert_eq!(
            degree2,
            vec![
                &Monomial::new(vec![2, 0]),
                &Monomial::new(vec![1, 1]),
                &Monomial::new(vec![0, 2])
            ]
        );
    }

    #[test]
    fn text_round_trip() {
        let names = state_names(3);
        let p = x(0, 3)
            .pow(2)
            .scale(-2.5)
            .add(&x(1, 3).mul(&x(2, 3)).unwrap().scale(1.0 / 3.0))
            .unwrap()
            .add(&Polynomial::constant(28.0, 3))
            .unwrap();
        let text = p.to_text(&names);
        let q = Polynomial::parse(&text, &names).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn parse_lenient_forms() {
        let names = state_names(2);
        let p = Polynomial::parse("2x1^2 - x2 + 1", &names).unwrap();
        let expect = x(0, 2)
            .pow(2)
            .scale(2.0)
            .sub(&x(1, 2))
            .unwrap()
            .add(&Polynomial::constant(1.0, 2))
            .unwrap();
        assert!(p.approx_eq(&expect, 1e-15));

        assert!(Polynomial::parse("x3", &names).is_err());
        assert!(Polynomial::parse("x1 +", &names).is_err());
        assert!(Polynomial::parse("x1^-2", &names).is_err());
    }

    #[test]
    fn compiled_eval_matches() {
        let n = 4;
        let p = x(0, n)
            .pow(3)
            .add(&x(1, n).mul(&x(3, n)).unwrap().scale(-2.0))
            .unwrap()
            .add(&Polynomial::constant(0.5, n))
            .unwrap();
        let c = p.compile();
        let pt = [0.3, -1.2, 2.0, 0.7];
        assert!((c.eval(&pt) - p.eval(&pt).unwrap()).abs() < 1e-15);
    }
}
