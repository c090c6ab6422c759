//! Finite sign-symmetry groups and their action on polynomials.
//!
//! Only diagonal ±1 transformations are handled by the block-diagonal
//! compilation path; general orthogonal symmetries (e.g. rotations) can
//! still be checked for equivariance but are not exploited.

use nalgebra::DMatrix;

use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::poly::{Monomial, ParityFilter, Polynomial};

/// Default tolerance for symbolic invariance/equivariance checks. The
/// coefficients involved are exact small integers in practice.
pub const SYMBOLIC_TOL: f64 = 1e-12;

/// A finite group of diagonal ±1 transformations, stored as diagonal
/// patterns. Every element is an involution, so the group is closed under
/// the products of its generators and has order a power of two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignSymmetryGroup {
    elements: Vec<Vec<i8>>,
    generators: Vec<Vec<i8>>,
    size: usize,
}

impl SignSymmetryGroup {
    /// The trivial group {I} on `size` variables.
    pub fn trivial(size: usize) -> Self {
        Self {
            elements: vec![vec![1; size]],
            generators: Vec::new(),
            size,
        }
    }

    /// Smallest group containing the given diagonal ±1 generators.
    /// Element order is deterministic (sorted by diagonal pattern).
    pub fn closure(generators: Vec<Vec<i8>>, size: usize) -> Result<Self> {
        for g in &generators {
            if g.len() != size {
                return Err(Error::BadSymmetry(format!(
                    "generator of length {} on {} variables",
                    g.len(),
                    size
                )));
            }
            if g.iter().any(|&d| d != 1 && d != -1) {
                return Err(Error::BadSymmetry("generator entries must be ±1".to_string()));
            }
        }
        let mut elements: Vec<Vec<i8>> = vec![vec![1; size]];
        let mut frontier = elements.clone();
        while let Some(e) = frontier.pop() {
            for g in &generators {
                let prod: Vec<i8> = e.iter().zip(g).map(|(a, b)| a * b).collect();
                if !elements.contains(&prod) {
                    elements.push(prod.clone());
                    frontier.push(prod);
                }
            }
        }
        elements.sort();
        let mut canonical = generators.clone();
        canonical.sort();
        canonical.dedup();
        canonical.retain(|g| g.iter().any(|&d| d == -1));
        Ok(Self {
            elements,
            generators: canonical,
            size,
        })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn elements(&self) -> &[Vec<i8>] {
        &self.elements
    }

    /// Canonicalized (sorted, deduplicated) generators; class labels from
    /// [`character_classes`] are computed against these.
    pub fn generators(&self) -> &[Vec<i8>] {
        &self.generators
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }

    /// Lifts a group acting on `x ∈ ℝⁿ` to the tangent-augmented space
    /// `(x, z) ∈ ℝ²ⁿ`: generated by `blockdiag(Λ, Λ)` for each `Λ` together
    /// with `blockdiag(I, −I)`, which reverses the tangent direction.
    pub fn lift(&self) -> SignSymmetryGroup {
        let n = self.size;
        let mut gens: Vec<Vec<i8>> = self
            .generators
            .iter()
            .map(|g| {
                let mut v = g.clone();
                v.extend_from_slice(g);
                v
            })
            .collect();
        let mut z_flip = vec![1i8; n];
        z_flip.extend(vec![-1i8; n]);
        gens.push(z_flip);
        SignSymmetryGroup::closure(gens, 2 * n).expect("lifted generators are valid")
    }

    /// Parity filter accepting exactly the invariant monomials.
    pub fn invariant_filter(&self) -> ParityFilter {
        ParityFilter::invariant(self.generators.clone())
    }

    /// Signature vector of a monomial: its sign under each canonical
    /// generator.
    pub fn signature(&self, m: &Monomial) -> Vec<i8> {
        self.generators.iter().map(|g| m.sign_under(g)).collect()
    }
}

/// True iff `f(Λx) = Λ f(x)` componentwise, to coefficient tolerance `tol`.
pub fn check_equivariance(f: &VectorField, lambda: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let n = f.dim();
    if lambda.nrows() != n || lambda.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix for a field on {} variables",
            lambda.nrows(),
            lambda.ncols(),
            n
        )));
    }
    for i in 0..n {
        let lhs = f.component(i).linear_substitute(lambda)?;
        let mut rhs = Polynomial::zero(n);
        for j in 0..n {
            rhs = rhs.add(&f.component(j).scale(lambda[(i, j)]))?;
        }
        if !lhs.approx_eq(&rhs, tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff `p(Λx) = p(x)` for every group element.
pub fn check_invariance(p: &Polynomial, group: &SignSymmetryGroup, tol: f64) -> Result<bool> {
    if group.size() != p.nvars() {
        return Err(Error::DimensionMismatch(format!(
            "group on {} variables, polynomial in {}",
            group.size(),
            p.nvars()
        )));
    }
    for g in group.generators() {
        if !p.sign_substitute(g)?.approx_eq(p, tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Group average `(1/|G|) Σ_Λ p(Λx)`; the result is G-invariant.
pub fn symmetrize(p: &Polynomial, group: &SignSymmetryGroup) -> Result<Polynomial> {
    if group.size() != p.nvars() {
        return Err(Error::DimensionMismatch(format!(
            "group on {} variables, polynomial in {}",
            group.size(),
            p.nvars()
        )));
    }
    let mut acc = Polynomial::zero(p.nvars());
    for g in group.elements() {
        acc = acc.add(&p.sign_substitute(g)?)?;
    }
    Ok(acc.scale(1.0 / group.order() as f64))
}

/// Partitions basis indices by sign signature under the group generators.
/// Classes are emitted in sorted signature order; indices within a class
/// keep the input (graded-lex) order.
pub fn character_classes(basis: &[Monomial], group: &SignSymmetryGroup) -> Vec<Vec<usize>> {
    let mut tagged: Vec<(Vec<i8>, usize)> = basis
        .iter()
        .enumerate()
        .map(|(i, m)| (group.signature(m), i))
        .collect();
    tagged.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut current_sig: Option<Vec<i8>> = None;
    for (sig, idx) in tagged {
        if current_sig.as_ref() != Some(&sig) {
            classes.push(Vec::new());
            current_sig = Some(sig);
        }
        classes.last_mut().unwrap().push(idx);
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::basis_monomials;
    use crate::problem::presets;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closure_orders() {
        let g = SignSymmetryGroup::closure(vec![vec![-1, -1, 1]], 3).unwrap();
        assert_eq!(g.order(), 2);

        let t = SignSymmetryGroup::closure(vec![], 3).unwrap();
        assert_eq!(t.order(), 1);
        assert!(t.is_trivial());

        // Lorenz G' on 6 variables from its two generators
        let gp = SignSymmetryGroup::closure(
            vec![vec![-1, -1, 1, -1, -1, 1], vec![1, 1, 1, -1, -1, -1]],
            6,
        )
        .unwrap();
        assert_eq!(gp.order(), 4);

        assert!(SignSymmetryGroup::closure(vec![vec![0, 1]], 2).is_err());
    }

    #[test]
    fn lift_orders_and_z_flip() {
        let t = SignSymmetryGroup::trivial(3);
        let lifted = t.lift();
        assert_eq!(lifted.order(), 2);
        let z_flip = vec![1i8, 1, 1, -1, -1, -1];
        assert!(lifted.elements().contains(&z_flip));

        let lorenz = SignSymmetryGroup::closure(vec![vec![-1, -1, 1]], 3).unwrap();
        assert_eq!(lorenz.lift().order(), 4);

        let hh = SignSymmetryGroup::closure(vec![vec![-1, 1, -1, 1]], 4).unwrap();
        let hh_lift = hh.lift();
        assert_eq!(hh_lift.order(), 4);
        assert_eq!(hh_lift.size(), 8);
        let z_flip8 = vec![1i8, 1, 1, 1, -1, -1, -1, -1];
        assert!(hh_lift.elements().contains(&z_flip8));
    }

    #[test]
    fn equivariance_of_presets() {
        let lorenz = presets::lorenz_field();
        let neg12 = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, -1.0, 1.0]);
        assert!(check_equivariance(&lorenz, &neg12, SYMBOLIC_TOL).unwrap());
        let neg1 = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, 1.0, 1.0]);
        assert!(!check_equivariance(&lorenz, &neg1, SYMBOLIC_TOL).unwrap());

        let hh = presets::henon_heiles_field();
        let hh_sign = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, 1.0, -1.0, 1.0]);
        assert!(check_equivariance(&hh, &hh_sign, SYMBOLIC_TOL).unwrap());
    }

    #[test]
    fn henon_heiles_rotation_equivariance() {
        // The D3 rotation by 2π/3 acting on positions and momenta is a
        // symmetry, though the compilation path does not exploit it.
        let hh = presets::henon_heiles_field();
        let (c, s) = ((2.0 * std::f64::consts::PI / 3.0).cos(), (2.0 * std::f64::consts::PI / 3.0).sin());
        let rot = DMatrix::from_row_slice(
            4,
            4,
            &[c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c],
        );
        assert!(check_equivariance(&hh, &rot, 1e-12).unwrap());
    }

    #[test]
    fn invariance_checks() {
        let g = SignSymmetryGroup::closure(vec![vec![-1]], 1).unwrap();
        let x = Polynomial::var(0, 1);
        assert!(check_invariance(&x.pow(2), &g, SYMBOLIC_TOL).unwrap());
        assert!(!check_invariance(&x, &g, SYMBOLIC_TOL).unwrap());

        // Hénon–Heiles g1 = 1/7 − H is invariant under diag(−1,1,−1,1)
        let g1 = presets::henon_heiles_set().inequalities[0].clone();
        let group = SignSymmetryGroup::closure(vec![vec![-1, 1, -1, 1]], 4).unwrap();
        assert!(check_invariance(&g1, &group, SYMBOLIC_TOL).unwrap());
    }

    #[test]
    fn symmetrize_examples_and_projection() {
        let g = SignSymmetryGroup::closure(vec![vec![-1]], 1).unwrap();
        let x = Polynomial::var(0, 1);
        assert!(symmetrize(&x, &g).unwrap().is_zero());

        let even = x.pow(2);
        assert_eq!(symmetrize(&even, &g).unwrap(), even);

        let mixed = x.pow(2).add(&x).unwrap();
        assert!(symmetrize(&mixed, &g).unwrap().approx_eq(&even, 0.0));

        // idempotence and invariance on random polynomials
        let group = SignSymmetryGroup::closure(vec![vec![-1, 1, -1], vec![1, -1, -1]], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let basis = basis_monomials(3, 4, None);
            let p = Polynomial::from_terms(
                3,
                basis
                    .iter()
                    .map(|m| (m.clone(), rng.random_range(-2.0..2.0))),
            )
            .unwrap();
            let s = symmetrize(&p, &group).unwrap();
            let ss = symmetrize(&s, &group).unwrap();
            assert!(ss.approx_eq(&s, 1e-14));
            assert!(check_invariance(&s, &group, 1e-14).unwrap());
        }
    }

    #[test]
    fn character_class_examples() {
        let g = SignSymmetryGroup::closure(vec![vec![-1]], 1).unwrap();
        let basis = basis_monomials(1, 2, None);
        let classes = character_classes(&basis, &g);
        assert_eq!(classes.len(), 2);
        let sizes: Vec<usize> = classes.iter().map(|c| c.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 3);
        // {x} in one class, {1, x^2} in the other
        assert!(classes.iter().any(|c| c == &vec![0, 2]));
        assert!(classes.iter().any(|c| c == &vec![1]));

        let t = SignSymmetryGroup::trivial(1);
        assert_eq!(character_classes(&basis, &t).len(), 1);

        // Lorenz Gram basis: 2n = 6, half-degree 3, G' of order 4
        let gp = SignSymmetryGroup::closure(vec![vec![-1, -1, 1]], 3)
            .unwrap()
            .lift();
        let basis6 = basis_monomials(6, 3, None);
        let classes = character_classes(&basis6, &gp);
        assert_eq!(classes.len(), 4);
        assert_eq!(classes.iter().map(|c| c.len()).sum::<usize>(), 84);
    }
}
