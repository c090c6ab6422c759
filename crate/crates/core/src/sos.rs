//! Assembly of the Lyapunov-exponent bounding SOS program and its
//! compilation to a block SDP.
//!
//! The program minimizes a scalar `B` subject to
//!
//! ```text
//! P − Σᵢ σᵢ gᵢ − Σⱼ ρⱼ hⱼ ∈ Σ₂ₙ ,    σᵢ ∈ Σ₂ₙ ,
//! P = B − φ − f·∇ₓV − ℓ·∇_zV ,
//! ```
//!
//! where `h₀ = 1 − |z|²` (or its weighted variant) is always present with
//! multiplier `ρ₀`, and the remaining `gᵢ ≥ 0`, `hⱼ = 0` describe the
//! state-space region of interest. All tunable coefficients appear
//! affinely, so coefficient matching per monomial yields linear equality
//! constraints between the free scalars (`B`, `V` and `ρ` coefficients)
//! and the Gram-matrix entries of the SOS-constrained polynomials.
//!
//! When a sign-symmetry group is supplied, every tunable polynomial is
//! restricted to invariant monomials and every Gram matrix is split into
//! one block per character class; this leaves the optimum unchanged and
//! shrinks the SDP considerably.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::dynamics::{lift_to_xz, TangentSystem};
use crate::error::{Error, Result};
use crate::poly::{basis_monomials, xz_names, Monomial, Polynomial};
use crate::sdp::{BlockSdp, SdpRow, SdpSolution};
use crate::symmetry::{character_classes, check_invariance, SignSymmetryGroup, SYMBOLIC_TOL};

/// Default Gram eigenvalue tolerance for certificate acceptance.
pub const EIG_TOL: f64 = 1e-7;
/// Default coefficient-residual tolerance for certificate acceptance.
pub const RES_TOL: f64 = 1e-6;

/// A semialgebraic region `{x : gᵢ(x) ≥ 0, hⱼ(x) = 0}` of the state
/// space. Empty lists describe all of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct SemialgebraicSet {
    pub inequalities: Vec<Polynomial>,
    pub equalities: Vec<Polynomial>,
    pub nvars: usize,
}

impl SemialgebraicSet {
    pub fn whole_space(nvars: usize) -> Self {
        Self { inequalities: Vec::new(), equalities: Vec::new(), nvars }
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.inequalities.iter().chain(&self.equalities) {
            if p.nvars() != self.nvars {
                return Err(Error::DimensionMismatch(format!(
                    "set polynomial in {} variables, expected {}",
                    p.nvars(),
                    self.nvars
                )));
            }
        }
        Ok(())
    }
}

/// Maximum total degrees of the tunable polynomials. `rho[0]` is the
/// sphere multiplier ρ₀; `rho[j]` for `j ≥ 1` matches `equalities[j−1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeSchedule {
    pub v: u32,
    pub sigma: Vec<u32>,
    pub rho: Vec<u32>,
}

impl DegreeSchedule {
    /// All tunables share one maximum degree `d` (σ degrees rounded down
    /// to even, since an SOS polynomial has even degree). An optional cap
    /// pins `deg V` below `d`.
    pub fn uniform(d: u32, set: &SemialgebraicSet, v_cap: Option<u32>) -> Self {
        let sigma_deg = d - d % 2;
        Self {
            v: v_cap.map_or(d, |c| c.min(d)),
            sigma: vec![sigma_deg; set.inequalities.len()],
            rho: vec![d; set.equalities.len() + 1],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SosOptions {
    /// Restrict tunables to invariant monomials and block-diagonalize
    /// Gram matrices by character class.
    pub use_symmetry: bool,
    /// Drop main Gram basis monomials whose squares cannot be matched by
    /// any other term of the identity (a cheap Newton-polytope-style
    /// reduction). Off by default.
    pub newton_prune: bool,
}

impl Default for SosOptions {
    fn default() -> Self {
        Self { use_symmetry: true, newton_prune: false }
    }
}

/// Basis and character-class split of one SOS-constrained polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStructure {
    pub basis: Vec<Monomial>,
    pub classes: Vec<Vec<usize>>,
}

impl GramStructure {
    fn build(nvars: usize, half_degree: u32, group: &SignSymmetryGroup) -> Self {
        let basis = basis_monomials(nvars, half_degree, None);
        let classes = character_classes(&basis, group);
        Self { basis, classes }
    }

    pub fn total_dim(&self) -> usize {
        self.basis.len()
    }
}

/// The assembled SOS program: resolved bases, multiplier data, and the
/// fixed part of the constraint identity.
#[derive(Debug, Clone)]
pub struct SosProgram {
    pub nvars: usize,
    /// Lifted group on the `(x, z)` space (trivial lift when symmetry is
    /// off — the Gram split is skipped in that case).
    pub group: SignSymmetryGroup,
    pub use_symmetry: bool,
    pub schedule: DegreeSchedule,
    /// Even Gram-closure degree `D` of the constraint identity.
    pub constraint_degree: u32,
    /// V basis monomials (invariant, nonzero Lie derivative) and the Lie
    /// derivative of each.
    pub v_basis: Vec<Monomial>,
    pub v_lie: Vec<Polynomial>,
    /// Lifted inequality/equality data; `equalities[0]` is the sphere
    /// polynomial h₀.
    pub inequalities: Vec<Polynomial>,
    pub equalities: Vec<Polynomial>,
    pub rho_bases: Vec<Vec<Monomial>>,
    pub sigma_grams: Vec<GramStructure>,
    pub main_gram: GramStructure,
    /// The non-tunable part of `P`: `−φ`.
    pub known: Polynomial,
}

/// Assembles the SOS program for a tangent system over a semialgebraic
/// region. With symmetry on, `f` must be equivariant and all set
/// polynomials invariant under the group's generators.
pub fn assemble_program(
    ts: &TangentSystem,
    set: &SemialgebraicSet,
    schedule: &DegreeSchedule,
    group_x: &SignSymmetryGroup,
    options: &SosOptions,
) -> Result<SosProgram> {
    set.validate()?;
    let n = ts.dim();
    if set.nvars != n {
        return Err(Error::DimensionMismatch(format!(
            "set on {} variables, system on {}",
            set.nvars, n
        )));
    }
    if schedule.sigma.len() != set.inequalities.len() {
        return Err(Error::Assembly(format!(
            "{} sigma degrees for {} inequalities",
            schedule.sigma.len(),
            set.inequalities.len()
        )));
    }
    if schedule.rho.len() != set.equalities.len() + 1 {
        return Err(Error::Assembly(format!(
            "{} rho degrees for {} equalities plus the sphere",
            schedule.rho.len(),
            set.equalities.len()
        )));
    }

    let lifted = if options.use_symmetry {
        if group_x.size() != n {
            return Err(Error::BadSymmetry(format!(
                "group on {} variables for a system on {}",
                group_x.size(),
                n
            )));
        }
        for gen in group_x.generators() {
            for (i, comp) in ts.base().components().iter().enumerate() {
                let lhs = comp.sign_substitute(gen)?;
                let rhs = comp.scale(gen[i] as f64);
                if !lhs.approx_eq(&rhs, SYMBOLIC_TOL) {
                    return Err(Error::Assembly(
                        "vector field is not equivariant under the declared symmetry group"
                            .to_string(),
                    ));
                }
            }
        }
        for p in set.inequalities.iter().chain(&set.equalities) {
            if !check_invariance(p, group_x, SYMBOLIC_TOL)? {
                return Err(Error::Assembly(
                    "set polynomial is not invariant under the declared symmetry group".to_string(),
                ));
            }
        }
        group_x.lift()
    } else {
        SignSymmetryGroup::trivial(2 * n)
    };

    // Tunable bases are invariant monomials when symmetry is on.
    let filter = if options.use_symmetry { Some(lifted.invariant_filter()) } else { None };

    let v_candidates = basis_monomials(2 * n, schedule.v, filter.as_ref());
    if v_candidates.is_empty() {
        return Err(Error::Assembly("empty V basis".to_string()));
    }
    let mut v_basis = Vec::new();
    let mut v_lie = Vec::new();
    for m in v_candidates {
        let lie = ts.lie_derivative(&Polynomial::monomial(m.clone(), 1.0))?;
        // constants and conserved quantities contribute nothing
        if !lie.is_zero() {
            v_basis.push(m);
            v_lie.push(lie);
        }
    }

    let mut equalities = vec![ts.sphere().clone()];
    for h in &set.equalities {
        equalities.push(lift_to_xz(h, n)?);
    }
    let inequalities: Vec<Polynomial> = set
        .inequalities
        .iter()
        .map(|g| lift_to_xz(g, n))
        .collect::<Result<_>>()?;

    let rho_bases: Vec<Vec<Monomial>> = schedule
        .rho
        .iter()
        .map(|&d| basis_monomials(2 * n, d, filter.as_ref()))
        .collect();

    // Even Gram-closure degree of the identity.
    let mut deg = ts.phi().degree().max(0) as u32;
    for lie in &v_lie {
        deg = deg.max(lie.degree().max(0) as u32);
    }
    for (g, &ds) in inequalities.iter().zip(&schedule.sigma) {
        deg = deg.max(ds + g.degree().max(0) as u32);
    }
    for (h, &dr) in equalities.iter().zip(&schedule.rho) {
        deg = deg.max(dr + h.degree().max(0) as u32);
    }
    let constraint_degree = deg + deg % 2;

    let sigma_grams: Vec<GramStructure> = schedule
        .sigma
        .iter()
        .map(|&d| GramStructure::build(2 * n, d / 2, &lifted))
        .collect();
    let mut main_gram = GramStructure::build(2 * n, constraint_degree / 2, &lifted);

    let known = ts.phi().neg();

    let mut program = SosProgram {
        nvars: 2 * n,
        group: lifted,
        use_symmetry: options.use_symmetry,
        schedule: schedule.clone(),
        constraint_degree,
        v_basis,
        v_lie,
        inequalities,
        equalities,
        rho_bases,
        sigma_grams,
        main_gram,
        known,
    };
    if options.newton_prune {
        main_gram = prune_main_basis(&program);
        program.main_gram = main_gram;
    }
    Ok(program)
}

/// Removes main-basis monomials `m` whose squared monomial `2m` is not
/// producible by anything else in the identity; positive semidefiniteness
/// then forces the whole row/column of `m` to zero. Iterates to a fixed
/// point.
fn prune_main_basis(program: &SosProgram) -> GramStructure {
    use std::collections::BTreeSet;

    // Support of everything except the main Gram.
    let mut support: BTreeSet<Monomial> = program.known.terms().map(|(m, _)| m.clone()).collect();
    support.insert(Monomial::one(program.nvars));
    for lie in &program.v_lie {
        support.extend(lie.terms().map(|(m, _)| m.clone()));
    }
    for (basis, h) in program.rho_bases.iter().zip(&program.equalities) {
        for m in basis {
            for (mh, _) in h.terms() {
                support.insert(m.mul(mh));
            }
        }
    }
    for (gram, g) in program.sigma_grams.iter().zip(&program.inequalities) {
        for class in &gram.classes {
            for (ka, &a) in class.iter().enumerate() {
                for &b in &class[ka..] {
                    let prod = gram.basis[a].mul(&gram.basis[b]);
                    for (mg, _) in g.terms() {
                        support.insert(prod.mul(mg));
                    }
                }
            }
        }
    }

    let mut alive: Vec<bool> = vec![true; program.main_gram.basis.len()];
    loop {
        let mut changed = false;
        for (i, m) in program.main_gram.basis.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let square = m.mul(m);
            if support.contains(&square) {
                continue;
            }
            // can any other alive pair produce the square?
            let producible = program.main_gram.classes.iter().any(|class| {
                class.iter().enumerate().any(|(ka, &a)| {
                    alive[a]
                        && class[ka..].iter().any(|&b| {
                            alive[b]
                                && (a, b) != (i, i)
                                && program.main_gram.basis[a].mul(&program.main_gram.basis[b]) == square
                        })
                })
            });
            if !producible {
                alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let basis: Vec<Monomial> = program
        .main_gram
        .basis
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(m, _)| m.clone())
        .collect();
    let classes = character_classes(&basis, &program.group);
    GramStructure { basis, classes }
}

/// Index bookkeeping between the SOS program and the compiled SDP.
#[derive(Debug, Clone)]
pub struct SdpLayout {
    /// Block index per main-Gram character class.
    pub main_blocks: Vec<usize>,
    /// Block indices per inequality, per character class.
    pub sigma_blocks: Vec<Vec<usize>>,
    pub b_index: usize,
    pub v_range: (usize, usize),
    pub rho_ranges: Vec<(usize, usize)>,
}

/// The compiled SDP with its layout.
#[derive(Debug, Clone)]
pub struct CompiledSdp {
    pub sdp: BlockSdp,
    pub layout: SdpLayout,
}

#[derive(Default)]
struct RowBuilder {
    entries: BTreeMap<(usize, usize, usize), f64>,
    free: BTreeMap<usize, f64>,
}

/// Compiles the program to a block SDP: one PSD block per character class
/// per SOS-constrained polynomial, one equality row per monomial of the
/// expanded identity, objective `min B`. Every row is normalized by its
/// largest absolute coefficient.
pub fn gramize(program: &SosProgram) -> Result<CompiledSdp> {
    let names = xz_names(program.nvars / 2);
    let mut block_dims = Vec::new();
    let mut block_labels = Vec::new();

    let main_blocks: Vec<usize> = program
        .main_gram
        .classes
        .iter()
        .enumerate()
        .map(|(k, class)| {
            block_dims.push(class.len());
            block_labels.push(format!("main:class{k}"));
            block_dims.len() - 1
        })
        .collect();
    let sigma_blocks: Vec<Vec<usize>> = program
        .sigma_grams
        .iter()
        .enumerate()
        .map(|(i, gram)| {
            gram.classes
                .iter()
                .enumerate()
                .map(|(k, class)| {
                    block_dims.push(class.len());
                    block_labels.push(format!("sigma{i}:class{k}"));
                    block_dims.len() - 1
                })
                .collect()
        })
        .collect();

    let mut free_labels = vec!["B".to_string()];
    let b_index = 0usize;
    let v_start = free_labels.len();
    for m in &program.v_basis {
        free_labels.push(format!("V:{}", Polynomial::monomial(m.clone(), 1.0).to_text(&names)));
    }
    let v_range = (v_start, free_labels.len());
    let mut rho_ranges = Vec::new();
    for (j, basis) in program.rho_bases.iter().enumerate() {
        let start = free_labels.len();
        for m in basis {
            free_labels.push(format!("rho{j}:{}", Polynomial::monomial(m.clone(), 1.0).to_text(&names)));
        }
        rho_ranges.push((start, free_labels.len()));
    }
    let nfree = free_labels.len();

    // Coefficient matching: for every monomial μ of the identity,
    //   s_main[μ] + Σᵢ (σᵢ gᵢ)[μ] − B·[μ = 1] + Σ_k v_k·Lie(m_k)[μ]
    //     + Σ_{j,r} ρ_{j,r}·(m_r hⱼ)[μ]  =  −φ[μ] .
    let mut rows: BTreeMap<Monomial, RowBuilder> = BTreeMap::new();

    for (k, class) in program.main_gram.classes.iter().enumerate() {
        let block = main_blocks[k];
        for (pa, &a) in class.iter().enumerate() {
            for (offset, &b) in class[pa..].iter().enumerate() {
                let pb = pa + offset;
                let mu = program.main_gram.basis[a].mul(&program.main_gram.basis[b]);
                *rows
                    .entry(mu)
                    .or_default()
                    .entries
                    .entry((block, pa, pb))
                    .or_insert(0.0) += 1.0;
            }
        }
    }
    for (i, gram) in program.sigma_grams.iter().enumerate() {
        let g = &program.inequalities[i];
        for (k, class) in gram.classes.iter().enumerate() {
            let block = sigma_blocks[i][k];
            for (pa, &a) in class.iter().enumerate() {
                for (offset, &b) in class[pa..].iter().enumerate() {
                    let pb = pa + offset;
                    let prod = gram.basis[a].mul(&gram.basis[b]);
                    for (mg, cg) in g.terms() {
                        let mu = prod.mul(mg);
                        *rows
                            .entry(mu)
                            .or_default()
                            .entries
                            .entry((block, pa, pb))
                            .or_insert(0.0) += cg;
                    }
                }
            }
        }
    }
    *rows
        .entry(Monomial::one(program.nvars))
        .or_default()
        .free
        .entry(b_index)
        .or_insert(0.0) += -1.0;
    for (k, lie) in program.v_lie.iter().enumerate() {
        for (m, c) in lie.terms() {
            *rows
                .entry(m.clone())
                .or_default()
                .free
                .entry(v_range.0 + k)
                .or_insert(0.0) += c;
        }
    }
    for (j, basis) in program.rho_bases.iter().enumerate() {
        let h = &program.equalities[j];
        for (r, m) in basis.iter().enumerate() {
            for (mh, ch) in h.terms() {
                *rows
                    .entry(m.mul(mh))
                    .or_default()
                    .free
                    .entry(rho_ranges[j].0 + r)
                    .or_insert(0.0) += ch;
            }
        }
    }

    let mut sdp_rows = Vec::new();
    let mut rhs = Vec::new();
    let mut row_labels = Vec::new();
    for (mu, builder) in rows {
        let target = program.known.coeff(&mu); // rhs = −φ[μ], and known = −φ
        let mut max_abs = target.abs();
        for v in builder.entries.values().chain(builder.free.values()) {
            max_abs = max_abs.max(v.abs());
        }
        if max_abs < 1e-13 {
            continue; // structurally empty row
        }
        let scale = 1.0 / max_abs;
        sdp_rows.push(SdpRow {
            entries: builder
                .entries
                .into_iter()
                .filter(|(_, v)| v.abs() > 1e-14)
                .map(|((b, i, j), v)| (b, i, j, v * scale))
                .collect(),
            free: builder
                .free
                .into_iter()
                .filter(|(_, v)| v.abs() > 1e-14)
                .map(|(f, v)| (f, v * scale))
                .collect(),
        });
        rhs.push(target * scale);
        row_labels.push(Polynomial::monomial(mu, 1.0).to_text(&names));
    }

    let mut objective = vec![0.0; nfree];
    objective[b_index] = 1.0;

    let sdp = BlockSdp {
        block_dims,
        rows: sdp_rows,
        rhs,
        nfree,
        objective,
        row_labels,
        block_labels,
        free_labels,
    };
    sdp.validate()?;
    Ok(CompiledSdp {
        sdp,
        layout: SdpLayout { main_blocks, sigma_blocks, b_index, v_range, rho_ranges },
    })
}

/// A numeric certificate: the bound, the tunable polynomials, and the
/// Gram blocks realizing the constraint identity.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub bound: f64,
    pub v: Polynomial,
    pub sigmas: Vec<Polynomial>,
    pub rhos: Vec<Polynomial>,
    /// Main Gram blocks with their class bases.
    pub main_grams: Vec<(Vec<Monomial>, DMatrix<f64>)>,
    /// σ Gram blocks per inequality.
    pub sigma_grams: Vec<Vec<(Vec<Monomial>, DMatrix<f64>)>>,
}

/// Maps a solver (or imported) solution back onto program polynomials.
pub fn extract_certificate(
    program: &SosProgram,
    compiled: &CompiledSdp,
    sol: &SdpSolution,
) -> Result<Certificate> {
    let layout = &compiled.layout;
    if sol.blocks.len() != compiled.sdp.block_dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} solution blocks for {} problem blocks",
            sol.blocks.len(),
            compiled.sdp.block_dims.len()
        )));
    }
    if sol.free.len() != compiled.sdp.nfree {
        return Err(Error::ShapeMismatch(format!(
            "{} free values for {} free variables",
            sol.free.len(),
            compiled.sdp.nfree
        )));
    }
    let bound = sol.free[layout.b_index];
    let nv = program.nvars;
    let v = Polynomial::from_terms(
        nv,
        program
            .v_basis
            .iter()
            .cloned()
            .zip(sol.free[layout.v_range.0..layout.v_range.1].iter().copied()),
    )?;
    let mut rhos = Vec::new();
    for (j, basis) in program.rho_bases.iter().enumerate() {
        let (s, e) = layout.rho_ranges[j];
        rhos.push(Polynomial::from_terms(
            nv,
            basis.iter().cloned().zip(sol.free[s..e].iter().copied()),
        )?);
    }
    let class_basis = |gram: &GramStructure, k: usize| -> Vec<Monomial> {
        gram.classes[k].iter().map(|&i| gram.basis[i].clone()).collect()
    };
    let main_grams: Vec<(Vec<Monomial>, DMatrix<f64>)> = layout
        .main_blocks
        .iter()
        .enumerate()
        .map(|(k, &b)| (class_basis(&program.main_gram, k), sol.blocks[b].clone()))
        .collect();
    let mut sigma_grams = Vec::new();
    let mut sigmas = Vec::new();
    for (i, blocks) in layout.sigma_blocks.iter().enumerate() {
        let per: Vec<(Vec<Monomial>, DMatrix<f64>)> = blocks
            .iter()
            .enumerate()
            .map(|(k, &b)| (class_basis(&program.sigma_grams[i], k), sol.blocks[b].clone()))
            .collect();
        let mut sigma = Polynomial::zero(nv);
        for (basis, q) in &per {
            sigma = sigma.add(&expand_gram(basis, q)?)?;
        }
        sigma_grams.push(per);
        sigmas.push(sigma);
    }
    Ok(Certificate { bound, v, sigmas, rhos, main_grams, sigma_grams })
}

/// `bᵀQb` expanded to a polynomial.
pub fn expand_gram(basis: &[Monomial], q: &DMatrix<f64>) -> Result<Polynomial> {
    if basis.is_empty() {
        return Ok(Polynomial::zero(1));
    }
    let nv = basis[0].nvars();
    if q.nrows() != basis.len() || q.ncols() != basis.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} Gram matrix for a basis of {} monomials",
            q.nrows(),
            q.ncols(),
            basis.len()
        )));
    }
    let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let c = if a == b { q[(a, a)] } else { q[(a, b)] + q[(b, a)] };
            if c == 0.0 {
                continue;
            }
            *terms.entry(basis[a].mul(&basis[b])).or_insert(0.0) += c;
        }
    }
    Polynomial::from_terms(nv, terms)
}

/// Result of an a-posteriori certificate check.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    /// Largest absolute coefficient of the reconstructed identity
    /// residual `P − Σσᵢgᵢ − Σρⱼhⱼ − Σ bᵀQb`.
    pub residual: f64,
    /// Smallest eigenvalue over all Gram blocks.
    pub min_eig: f64,
    pub pass: bool,
}

/// Recomputes the constraint identity from the certificate's numeric data
/// and checks Gram positive semidefiniteness. A bound is "certified" only
/// if this passes.
pub fn verify_certificate(
    cert: &Certificate,
    ts: &TangentSystem,
    program: &SosProgram,
    eig_tol: f64,
    res_tol: f64,
) -> Result<VerifyReport> {
    // basis compatibility
    if cert.main_grams.len() != program.main_gram.classes.len()
        || cert.sigma_grams.len() != program.sigma_grams.len()
    {
        return Err(Error::BasisMismatch("class counts differ from program".to_string()));
    }
    for (k, (basis, q)) in cert.main_grams.iter().enumerate() {
        let expected: Vec<Monomial> = program.main_gram.classes[k]
            .iter()
            .map(|&i| program.main_gram.basis[i].clone())
            .collect();
        if *basis != expected || q.nrows() != expected.len() {
            return Err(Error::BasisMismatch(format!("main Gram class {k}")));
        }
    }
    for (i, per) in cert.sigma_grams.iter().enumerate() {
        if per.len() != program.sigma_grams[i].classes.len() {
            return Err(Error::BasisMismatch(format!("sigma {i} class count")));
        }
        for (k, (basis, q)) in per.iter().enumerate() {
            let expected: Vec<Monomial> = program.sigma_grams[i].classes[k]
                .iter()
                .map(|&idx| program.sigma_grams[i].basis[idx].clone())
                .collect();
            if *basis != expected || q.nrows() != expected.len() {
                return Err(Error::BasisMismatch(format!("sigma {i} Gram class {k}")));
            }
        }
    }

    let mut identity = ts.build_p(&cert.v, cert.bound)?;
    for (sigma, g) in cert.sigmas.iter().zip(&program.inequalities) {
        identity = identity.sub(&sigma.mul(g)?)?;
    }
    for (rho, h) in cert.rhos.iter().zip(&program.equalities) {
        identity = identity.sub(&rho.mul(h)?)?;
    }
    for (basis, q) in &cert.main_grams {
        if !basis.is_empty() {
            identity = identity.sub(&expand_gram(basis, q)?)?;
        }
    }
    let residual = identity.max_abs_coeff();

    let mut min_eig = f64::INFINITY;
    let all_grams = cert
        .main_grams
        .iter()
        .chain(cert.sigma_grams.iter().flatten());
    for (_, q) in all_grams {
        if q.nrows() == 0 {
            continue;
        }
        let sym = (q + q.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        min_eig = min_eig.min(eig);
    }

    let pass = residual <= res_tol && min_eig >= -eig_tol;
    Ok(VerifyReport { residual, min_eig, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::build_tangent;
    use crate::dynamics::VectorField;
    use crate::poly::state_names;
    use crate::sdp::{solve, SolveOptions};

    /// dx/dt = −x in one dimension; the bounding program has the analytic
    /// optimum B* = −1: on z² = 1 the identity forces B + 1 ≥ 0, and
    /// ρ₀ = −1 realizes B = −1 exactly.
    fn one_var_contraction() -> TangentSystem {
        let f = VectorField::new(vec![Polynomial::var(0, 1).neg()], state_names(1)).unwrap();
        build_tangent(&f, None).unwrap()
    }

    fn assemble_toy(use_symmetry: bool) -> (TangentSystem, SosProgram, CompiledSdp) {
        let ts = one_var_contraction();
        let set = SemialgebraicSet::whole_space(1);
        let schedule = DegreeSchedule { v: 0, sigma: vec![], rho: vec![2] };
        let group = SignSymmetryGroup::trivial(1);
        let program = assemble_program(
            &ts,
            &set,
            &schedule,
            &group,
            &SosOptions { use_symmetry, newton_prune: false },
        )
        .unwrap();
        let compiled = gramize(&program).unwrap();
        (ts, program, compiled)
    }

    #[test]
    fn toy_structure() {
        let (_, program, compiled) = assemble_toy(true);
        // V basis is empty after dropping the constant (zero Lie derivative)
        assert!(program.v_basis.is_empty());
        // D = 4: main basis of degree ≤ 2 in (x, z), z-parity split 4 + 2
        assert_eq!(program.constraint_degree, 4);
        assert_eq!(program.main_gram.total_dim(), 6);
        let mut dims = compiled.sdp.block_dims.clone();
        dims.sort();
        assert_eq!(dims, vec![2, 4]);
        // equality rows = distinct monomials of the identity
        assert_eq!(compiled.sdp.num_rows(), compiled.sdp.rhs.len());
        assert!(compiled.sdp.nfree >= 2); // B and at least one rho coefficient
    }

    #[test]
    fn toy_full_stack_bound_is_minus_one() {
        for use_symmetry in [true, false] {
            let (ts, program, compiled) = assemble_toy(use_symmetry);
            let sol = solve(&compiled.sdp, &SolveOptions::default()).unwrap();
            let cert = extract_certificate(&program, &compiled, &sol).unwrap();
            assert!(
                (cert.bound + 1.0).abs() < 1e-7,
                "B* = {} (symmetry {})",
                cert.bound,
                use_symmetry
            );
            let report = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL).unwrap();
            assert!(report.pass, "verification failed: {report:?}");
        }
    }

    #[test]
    fn newton_prune_preserves_toy_bound() {
        let ts = one_var_contraction();
        let set = SemialgebraicSet::whole_space(1);
        let schedule = DegreeSchedule { v: 0, sigma: vec![], rho: vec![2] };
        let group = SignSymmetryGroup::trivial(1);
        let program = assemble_program(
            &ts,
            &set,
            &schedule,
            &group,
            &SosOptions { use_symmetry: true, newton_prune: true },
        )
        .unwrap();
        let compiled = gramize(&program).unwrap();
        let sol = solve(&compiled.sdp, &SolveOptions::default()).unwrap();
        let cert = extract_certificate(&program, &compiled, &sol).unwrap();
        assert!((cert.bound + 1.0).abs() < 1e-7, "B* = {}", cert.bound);
        assert!(program.main_gram.total_dim() <= 6);
    }

    #[test]
    fn perturbed_certificate_fails_with_matching_residual() {
        let (ts, program, compiled) = assemble_toy(true);
        let sol = solve(&compiled.sdp, &SolveOptions::default()).unwrap();
        let mut cert = extract_certificate(&program, &compiled, &sol).unwrap();
        let base = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL).unwrap();
        assert!(base.pass);

        let (idx, delta) = (0usize, 1e-2f64);
        cert.main_grams[idx].1[(0, 0)] += delta;
        let report = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL).unwrap();
        assert!(!report.pass);
        assert!(
            (report.residual - delta).abs() < 0.3 * delta,
            "residual {} should be near the injected {delta}",
            report.residual
        );
    }

    #[test]
    fn zero_certificate_fails() {
        let (ts, program, compiled) = assemble_toy(true);
        let sol = solve(&compiled.sdp, &SolveOptions::default()).unwrap();
        let mut cert = extract_certificate(&program, &compiled, &sol).unwrap();
        cert.bound = 0.0;
        cert.v = Polynomial::zero(2);
        cert.rhos = cert.rhos.iter().map(|_| Polynomial::zero(2)).collect();
        for (_, q) in cert.main_grams.iter_mut() {
            q.fill(0.0);
        }
        let report = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn non_invariant_set_rejected_in_symmetry_mode() {
        let ts = one_var_contraction();
        let set = SemialgebraicSet {
            inequalities: vec![Polynomial::var(0, 1)], // g = x, odd
            equalities: vec![],
            nvars: 1,
        };
        let schedule = DegreeSchedule { v: 0, sigma: vec![2], rho: vec![2] };
        let group = SignSymmetryGroup::closure(vec![vec![-1]], 1).unwrap();
        let err = assemble_program(&ts, &set, &schedule, &group, &SosOptions::default());
        assert!(err.is_err());
    }
}
