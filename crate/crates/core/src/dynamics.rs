//! Tangent-augmented dynamics of a polynomial vector field.
//!
//! For `dx/dt = f(x)` the tangent direction `z = y/|y|` of the linearized
//! flow obeys `dz/dt = ℓ(x,z) = Df(x)z − φ(x,z)z` with
//! `φ(x,z) = zᵀDf(x)z`, and the leading Lyapunov exponent of a bounded
//! trajectory is the time average of `φ`. All polynomials over the
//! augmented space use the fixed variable ordering `(x₁..xₙ, z₁..zₙ)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{Monomial, Polynomial};

/// Default residual tolerance for accepting a point as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-9;

/// A polynomial ODE right-hand side: `n` polynomials in `n` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Polynomial>,
    names: Vec<String>,
}

impl VectorField {
    pub fn new(components: Vec<Polynomial>, names: Vec<String>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty vector field".to_string()));
        }
        if names.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} components",
                names.len(),
                n
            )));
        }
        for (i, c) in components.iter().enumerate() {
            if c.nvars() != n {
                return Err(Error::DimensionMismatch(format!(
                    "component {} has {} variables, expected {}",
                    i,
                    c.nvars(),
                    n
                )));
            }
        }
        Ok(Self { components, names })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Maximum total degree over components.
    pub fn degree(&self) -> i32 {
        self.components.iter().map(|c| c.degree()).max().unwrap_or(-1)
    }
}

/// Entry `(i,j)` is `∂fᵢ/∂xⱼ`.
pub fn jacobian(f: &VectorField) -> Vec<Vec<Polynomial>> {
    let n = f.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| f.component(i).diff(j).expect("index in range"))
                .collect()
        })
        .collect()
}

/// Numeric Jacobian matrix at a point.
pub fn jacobian_at(f: &VectorField, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = f.dim();
    let jac = jacobian(f);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = jac[i][j].eval(x)?;
        }
    }
    Ok(m)
}

/// Real parts of the eigenvalues of `Df(x*)`, sorted descending. These are
/// the Lyapunov exponents of the fixed point `x*` (and of trajectories on
/// its stable manifold).
pub fn fixed_point_les(f: &VectorField, x_star: &[f64], tol: f64) -> Result<Vec<f64>> {
    let fx = f.eval(x_star)?;
    let residual = fx.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual > tol {
        return Err(Error::NotAFixedPoint { residual, tol });
    }
    let m = jacobian_at(f, x_star)?;
    let eigs = m.complex_eigenvalues();
    let mut re: Vec<f64> = eigs.iter().map(|c| c.re).collect();
    re.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(re)
}

/// The `(x, z)` dynamics built from a vector field, with the optional
/// weighted-norm variant (fixed positive-definite matrix `A`):
/// `φ = zᵀA·Df(x)z`, `ℓ = Df(x)z − φ·z`, sphere polynomial `1 − zᵀAz`.
#[derive(Debug, Clone)]
pub struct TangentSystem {
    base: VectorField,
    /// Components of `f` lifted to the 2n-variable space.
    base_lifted: Vec<Polynomial>,
    ell: Vec<Polynomial>,
    phi: Polynomial,
    sphere: Polynomial,
    weight: Option<DMatrix<f64>>,
}

/// Embeds an n-variable polynomial into the 2n-variable `(x, z)` space.
pub fn lift_to_xz(p: &Polynomial, n: usize) -> Result<Polynomial> {
    if p.nvars() != n {
        return Err(Error::DimensionMismatch(format!(
            "polynomial in {} variables, expected {}",
            p.nvars(),
            n
        )));
    }
    Polynomial::from_terms(
        2 * n,
        p.terms().map(|(m, c)| {
            let mut exps = m.exponents().to_vec();
            exps.extend(std::iter::repeat(0).take(n));
            (Monomial::new(exps), c)
        }),
    )
}

/// Builds the tangent system. A weight matrix, if given, must be symmetric
/// positive definite (checked by Cholesky factorization).
pub fn build_tangent(f: &VectorField, weight: Option<DMatrix<f64>>) -> Result<TangentSystem> {
    let n = f.dim();
    if let Some(a) = &weight {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::BadWeight(format!("{}x{} for dimension {}", a.nrows(), a.ncols(), n)));
        }
        let sym_err = (a - a.transpose()).abs().max();
        if sym_err > 1e-12 {
            return Err(Error::BadWeight(format!("asymmetry {sym_err:.3e}")));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::BadWeight("Cholesky factorization failed".to_string()));
        }
    }

    let jac = jacobian(f);
    let nv = 2 * n;
    let z = |j: usize| Polynomial::var(n + j, nv);

    // df_lifted[i][j] = ∂f_i/∂x_j in the (x,z) space
    let df_lifted: Vec<Vec<Polynomial>> = jac
        .iter()
        .map(|row| row.iter().map(|p| lift_to_xz(p, n)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    // phi = zᵀ A Df z  (A = I when unweighted): Σ_{k,i,j} A[k,i] Df[i,j] z_k z_j
    let mut phi = Polynomial::zero(nv);
    for i in 0..n {
        for j in 0..n {
            let mut row = Polynomial::zero(nv);
            match &weight {
                None => row = df_lifted[i][j].mul(&z(i))?,
                Some(a) => {
                    for k in 0..n {
                        let c = a[(k, i)];
                        if c != 0.0 {
                            row = row.add(&df_lifted[i][j].mul(&z(k))?.scale(c))?;
                        }
                    }
                }
            }
            phi = phi.add(&row.mul(&z(j))?)?;
        }
    }

    // ell_i = (Df z)_i − phi z_i
    let mut ell = Vec::with_capacity(n);
    for i in 0..n {
        let mut dfz = Polynomial::zero(nv);
        for j in 0..n {
            dfz = dfz.add(&df_lifted[i][j].mul(&z(j))?)?;
        }
        ell.push(dfz.sub(&phi.mul(&z(i))?)?);
    }

    // sphere polynomial h0 = 1 − zᵀAz
    let mut znorm = Polynomial::zero(nv);
    for i in 0..n {
        match &weight {
            None => znorm = znorm.add(&z(i).pow(2))?,
            Some(a) => {
                for j in 0..n {
                    let c = a[(i, j)];
                    if c != 0.0 {
                        znorm = znorm.add(&z(i).mul(&z(j))?.scale(c))?;
                    }
                }
            }
        }
    }
    let sphere = Polynomial::constant(1.0, nv).sub(&znorm)?;

    let base_lifted = f
        .components()
        .iter()
        .map(|p| lift_to_xz(p, n))
        .collect::<Result<_>>()?;

    Ok(TangentSystem {
        base: f.clone(),
        base_lifted,
        ell,
        phi,
        sphere,
        weight,
    })
}

impl TangentSystem {
    pub fn base(&self) -> &VectorField {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `f` components lifted to the 2n-variable space.
    pub fn base_lifted(&self) -> &[Polynomial] {
        &self.base_lifted
    }

    pub fn ell(&self) -> &[Polynomial] {
        &self.ell
    }

    pub fn phi(&self) -> &Polynomial {
        &self.phi
    }

    /// `h₀ = 1 − zᵀAz`, vanishing on the (weighted) unit sphere.
    pub fn sphere(&self) -> &Polynomial {
        &self.sphere
    }

    pub fn weight(&self) -> Option<&DMatrix<f64>> {
        self.weight.as_ref()
    }

    /// Lie derivative of `v` along the augmented field:
    /// `f·∇ₓv + ℓ·∇_zv`.
    pub fn lie_derivative(&self, v: &Polynomial) -> Result<Polynomial> {
        let n = self.dim();
        if v.nvars() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "auxiliary polynomial in {} variables, expected {}",
                v.nvars(),
                2 * n
            )));
        }
        let mut acc = Polynomial::zero(2 * n);
        for i in 0..n {
            acc = acc.add(&self.base_lifted[i].mul(&v.diff(i)?)?)?;
            acc = acc.add(&self.ell[i].mul(&v.diff(n + i)?)?)?;
        }
        Ok(acc)
    }

    /// The constraint polynomial `P = B − φ − f·∇ₓV − ℓ·∇_zV` for concrete
    /// numeric `V` and `B`.
    pub fn build_p(&self, v: &Polynomial, b: f64) -> Result<Polynomial> {
        let n = self.dim();
        Polynomial::constant(b, 2 * n)
            .sub(&self.phi)?
            .sub(&self.lie_derivative(v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{state_names, xz_names};
    use crate::problem::presets;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn linear_contraction(n: usize) -> VectorField {
        let comps = (0..n).map(|i| Polynomial::var(i, n).neg()).collect();
        VectorField::new(comps, state_names(n)).unwrap()
    }

    #[test]
    fn jacobian_of_presets() {
        let lorenz = presets::lorenz_field();
        let jac = jacobian(&lorenz);
        let names = state_names(3);
        assert_eq!(jac[0][0].to_text(&names), "-1.0000000000000000e1");
        assert_eq!(jac[0][1].to_text(&names), "1.0000000000000000e1");
        assert!(jac[0][2].is_zero());
        // row 2: [r − x3, −1, −x1]
        let r_minus_x3 = Polynomial::parse("28 - x3", &names).unwrap();
        assert!(jac[1][0].approx_eq(&r_minus_x3, 1e-15));
        assert!(jac[1][2].approx_eq(&Polynomial::var(0, 3).neg(), 1e-15));

        let id = linear_contraction(2);
        let jac = jacobian(&id);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { -1.0 } else { 0.0 };
                assert!(jac[i][j].approx_eq(&Polynomial::constant(expect, 2), 1e-15));
            }
        }

        // Hénon–Heiles row 3 = [−1 − 2x2, −2x1, 0, 0]
        let hh = presets::henon_heiles_field();
        let jac = jacobian(&hh);
        let names = state_names(4);
        assert!(jac[2][0].approx_eq(&Polynomial::parse("-1 - 2x2", &names).unwrap(), 1e-15));
        assert!(jac[2][1].approx_eq(&Polynomial::parse("-2x1", &names).unwrap(), 1e-15));
        assert!(jac[2][2].is_zero());
        assert!(jac[2][3].is_zero());
    }

    #[test]
    fn fixed_point_les_lorenz_origin() {
        let lorenz = presets::lorenz_field();
        let les = fixed_point_les(&lorenz, &[0.0; 3], FIXED_POINT_TOL).unwrap();
        let sigma: f64 = 10.0;
        let r: f64 = 28.0;
        let leading = (-1.0 - sigma + (1.0 - 2.0 * sigma + 4.0 * r * sigma + sigma * sigma).sqrt()) / 2.0;
        assert!((les[0] - leading).abs() < 1e-9);
        assert!((les[0] - 11.82772).abs() < 1e-5);
        assert!((les[1] + 8.0 / 3.0).abs() < 1e-9);
        assert!((les[2] - (-1.0 - sigma - (1.0 - 2.0 * sigma + 4.0 * r * sigma + sigma * sigma).sqrt()) / 2.0).abs() < 1e-9);

        let contraction = linear_contraction(2);
        let les = fixed_point_les(&contraction, &[0.0; 2], FIXED_POINT_TOL).unwrap();
        assert!(les.iter().all(|&l| (l + 1.0).abs() < 1e-12));

        assert!(fixed_point_les(&lorenz, &[1.0, 1.0, 1.0], FIXED_POINT_TOL).is_err());
    }

    #[test]
    fn tangent_system_isotropic_contraction() {
        let f = linear_contraction(2);
        let ts = build_tangent(&f, None).unwrap();
        let names = xz_names(2);
        // phi = −(z1² + z2²)
        let expect_phi = Polynomial::parse("-z1^2 - z2^2", &names).unwrap();
        assert!(ts.phi().approx_eq(&expect_phi, 1e-15));
        // ell = −z + (z1²+z2²)z vanishes on the unit circle
        for theta in [0.0, 0.7, 2.1] {
            let (c, s) = (f64::cos(theta), f64::sin(theta));
            let pt = [0.3, -0.4, c, s];
            for e in ts.ell() {
                assert!(e.eval(&pt).unwrap().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lorenz_phi_value_and_degrees() {
        let lorenz = presets::lorenz_field();
        let ts = build_tangent(&lorenz, None).unwrap();
        // phi at x = 0, z = e1 equals Df(0)[0][0] = −σ
        let pt = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((ts.phi().eval(&pt).unwrap() + 10.0).abs() < 1e-14);
        assert_eq!(ts.phi().degree(), 3);

        let hh = presets::henon_heiles_field();
        let ts = build_tangent(&hh, None).unwrap();
        assert_eq!(ts.phi().degree(), 3);
    }

    #[test]
    fn identity_weight_matches_unweighted() {
        let lorenz = presets::lorenz_field();
        let plain = build_tangent(&lorenz, None).unwrap();
        let weighted = build_tangent(&lorenz, Some(DMatrix::identity(3, 3))).unwrap();
        assert!(plain.phi().approx_eq(weighted.phi(), 0.0));
        for (a, b) in plain.ell().iter().zip(weighted.ell()) {
            assert!(a.approx_eq(b, 0.0));
        }
        assert!(plain.sphere().approx_eq(weighted.sphere(), 0.0));
    }

    #[test]
    fn weight_validation() {
        let lorenz = presets::lorenz_field();
        let asym = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(build_tangent(&lorenz, Some(asym)).is_err());
        let indefinite = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0, 1.0]);
        assert!(build_tangent(&lorenz, Some(indefinite)).is_err());
    }

    #[test]
    fn sphere_tangency_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lorenz = presets::lorenz_field();
        let ts = build_tangent(&lorenz, None).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-20.0..20.0)).collect();
            let mut z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            z.iter_mut().for_each(|v| *v /= nz);
            let pt: Vec<f64> = x.iter().chain(&z).copied().collect();
            let dot: f64 = (0..3).map(|i| z[i] * ts.ell()[i].eval(&pt).unwrap()).sum();
            assert!(dot.abs() < 1e-10, "tangency violated: {dot:e}");
        }
    }

    #[test]
    fn weighted_sphere_tangency() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lorenz = presets::lorenz_field();
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, 0.1, 0.0, 0.1, 1.0]);
        let ts = build_tangent(&lorenz, Some(a.clone())).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut z = DVector::from_iterator(3, (0..3).map(|_| rng.random_range(-1.0..1.0)));
            // normalize in the A-norm so that zᵀAz = 1
            let na = (z.transpose() * &a * &z)[(0, 0)].sqrt();
            z /= na;
            let pt: Vec<f64> = x.iter().chain(z.iter()).copied().collect();
            let az = &a * &z;
            let dot: f64 = (0..3).map(|i| az[i] * ts.ell()[i].eval(&pt).unwrap()).sum();
            assert!(dot.abs() < 1e-10, "weighted tangency violated: {dot:e}");
        }
    }

    #[test]
    fn equivariance_of_tangent_dynamics() {
        // Prop.-style check for the Lorenz group generator Λ = diag(−1,−1,1):
        // ell(Λx, Λz) = Λ ell(x,z) and phi(Λx, Λz) = phi(x,z).
        let lorenz = presets::lorenz_field();
        let ts = build_tangent(&lorenz, None).unwrap();
        let diag6 = [-1i8, -1, 1, -1, -1, 1];
        assert!(ts
            .phi()
            .sign_substitute(&diag6)
            .unwrap()
            .approx_eq(ts.phi(), 1e-15));
        for (i, e) in ts.ell().iter().enumerate() {
            let lhs = e.sign_substitute(&diag6).unwrap();
            let rhs = e.scale(diag6[i] as f64);
            assert!(lhs.approx_eq(&rhs, 1e-15));
        }
    }

    #[test]
    fn linear_symmetric_field_phi_max_at_top_eigenvector() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let mut m = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let comps: Vec<Polynomial> = (0..3)
                .map(|i| {
                    let mut p = Polynomial::zero(3);
                    for j in 0..3 {
                        p = p.add(&Polynomial::var(j, 3).scale(m[(i, j)])).unwrap();
                    }
                    p
                })
                .collect();
            let f = VectorField::new(comps, state_names(3)).unwrap();
            let ts = build_tangent(&f, None).unwrap();
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            let (mut top_val, mut top_idx) = (f64::NEG_INFINITY, 0);
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > top_val {
                    top_val = l;
                    top_idx = i;
                }
            }
            let v = eig.eigenvectors.column(top_idx);
            let pt: Vec<f64> = [0.0; 3].iter().chain(v.iter()).copied().collect();
            let phi_at_top = ts.phi().eval(&pt).unwrap();
            assert!((phi_at_top - top_val).abs() < 1e-8);
            // random unit z never beats the top eigenvector
            for _ in 0..50 {
                let mut z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                z.iter_mut().for_each(|v| *v /= nz);
                let pt: Vec<f64> = [0.0; 3].iter().chain(&z).copied().collect();
                assert!(ts.phi().eval(&pt).unwrap() <= top_val + 1e-8);
            }
        }
    }

    #[test]
    fn build_p_examples() {
        let lorenz = presets::lorenz_field();
        let ts = build_tangent(&lorenz, None).unwrap();
        let zero_v = Polynomial::zero(6);
        let p = ts.build_p(&zero_v, 0.0).unwrap();
        assert!(p.approx_eq(&ts.phi().neg(), 0.0));

        let const_v = Polynomial::constant(5.0, 6);
        let p2 = ts.build_p(&const_v, 0.0).unwrap();
        assert!(p2.approx_eq(&p, 0.0));

        let b = 14.02562;
        let p3 = ts.build_p(&zero_v, b).unwrap();
        let pt = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((p3.eval(&pt).unwrap() - (b + 10.0)).abs() < 1e-12);
        assert_eq!(p3.degree(), 3);
    }
}
