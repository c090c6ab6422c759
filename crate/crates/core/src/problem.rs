//! Problem definitions, compiled-in presets, and the bound/orbit
//! pipelines.
//!
//! A problem file is a single JSON document: variable names, vector-field
//! components and set polynomials in canonical text form, symmetry
//! generators in signed-variable notation (e.g. `["-x1","-x2","x3"]`), a
//! degree schedule, and options. Parsing and serialization round-trip.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_tangent, fixed_point_les, TangentSystem, VectorField, FIXED_POINT_TOL};
use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::sdp::{solve, SolveOptions};
use crate::sos::{
    assemble_program, gramize, verify_certificate, Certificate, CompiledSdp, DegreeSchedule,
    SemialgebraicSet, SosOptions, SosProgram, EIG_TOL, RES_TOL,
};
use crate::symmetry::SignSymmetryGroup;
use crate::trajectory::{
    close_return_scan, hh_scan_grid, leading_le, shooting_refine, FlowSystem, LeEstimate, Orbit,
    QpSplit, ShootingSpace, DEFAULT_ALIGN_PERIODS,
};

/// On-disk problem document (canonical text forms).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemFile {
    pub name: String,
    pub variables: Vec<String>,
    pub field: Vec<String>,
    #[serde(default)]
    pub inequalities: Vec<String>,
    #[serde(default)]
    pub equalities: Vec<String>,
    #[serde(default)]
    pub symmetries: Vec<Vec<String>>,
    #[serde(default)]
    pub degrees: Vec<u32>,
    #[serde(default)]
    pub options: ProblemOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct ProblemOptions {
    /// Fixed weighted-norm matrix A (symmetric positive definite).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<Vec<f64>>>,
    /// Adds the redundant ball constraint `R² − |x|² ≥ 0` (Archimedean
    /// augmentation).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Cap on deg V below the shared tunable degree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deg_v: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_symmetry: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_prune: Option<bool>,
    /// Declared (q, p) split for Hamiltonian systems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qp_split: Option<(Vec<usize>, Vec<usize>)>,
    /// Conserved energy in canonical text form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<String>,
    /// Energy level whose curve seeds the orbit scan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan_energy: Option<f64>,
}

/// A fully parsed problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub variables: Vec<String>,
    pub field: VectorField,
    pub set: SemialgebraicSet,
    pub group: SignSymmetryGroup,
    pub degrees: Vec<u32>,
    pub weight: Option<DMatrix<f64>>,
    pub ball_radius: Option<f64>,
    pub v_cap: Option<u32>,
    pub solver: SolveOptions,
    pub use_symmetry: bool,
    pub newton_prune: bool,
    pub split: Option<QpSplit>,
    pub hamiltonian: Option<Polynomial>,
    pub scan_energy: Option<f64>,
}

impl Problem {
    pub fn from_document(doc: &ProblemFile) -> Result<Self> {
        let names = &doc.variables;
        let n = names.len();
        if n == 0 {
            return Err(Error::Parse("no variables declared".to_string()));
        }
        let field = VectorField::new(
            doc.field
                .iter()
                .map(|t| Polynomial::parse(t, names))
                .collect::<Result<_>>()?,
            names.clone(),
        )?;
        let set = SemialgebraicSet {
            inequalities: doc
                .inequalities
                .iter()
                .map(|t| Polynomial::parse(t, names))
                .collect::<Result<_>>()?,
            equalities: doc
                .equalities
                .iter()
                .map(|t| Polynomial::parse(t, names))
                .collect::<Result<_>>()?,
            nvars: n,
        };
        let mut generators = Vec::new();
        for gen in &doc.symmetries {
            generators.push(parse_signed_generator(gen, names)?);
        }
        let group = SignSymmetryGroup::closure(generators, n)?;
        let weight = match &doc.options.weight {
            None => None,
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::BadWeight(format!("weight matrix must be {n}x{n}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Some(DMatrix::from_row_slice(n, n, &flat))
            }
        };
        let split = doc
            .options
            .qp_split
            .as_ref()
            .map(|(q, p)| QpSplit { q: q.clone(), p: p.clone() });
        let hamiltonian = doc
            .options
            .hamiltonian
            .as_ref()
            .map(|t| Polynomial::parse(t, names))
            .transpose()?;
        let mut solver = SolveOptions::default();
        if let Some(g) = doc.options.gap_tol {
            solver.gap_tol = g;
        }
        if let Some(f) = doc.options.feas_tol {
            solver.feas_tol = f;
        }
        if let Some(m) = doc.options.max_iter {
            solver.max_iter = m;
        }
        Ok(Self {
            name: doc.name.clone(),
            variables: names.clone(),
            field,
            set,
            group,
            degrees: doc.degrees.clone(),
            weight,
            ball_radius: doc.options.ball_radius,
            v_cap: doc.options.deg_v,
            solver,
            use_symmetry: doc.options.use_symmetry.unwrap_or(true),
            newton_prune: doc.options.newton_prune.unwrap_or(false),
            split,
            hamiltonian,
            scan_energy: doc.options.scan_energy,
        })
    }

    pub fn to_document(&self) -> ProblemFile {
        let names = &self.variables;
        ProblemFile {
            name: self.name.clone(),
            variables: names.clone(),
            field: self
                .field
                .components()
                .iter()
                .map(|p| p.to_text(names))
                .collect(),
            inequalities: self.set.inequalities.iter().map(|p| p.to_text(names)).collect(),
            equalities: self.set.equalities.iter().map(|p| p.to_text(names)).collect(),
            symmetries: self
                .group
                .generators()
                .iter()
                .map(|g| {
                    g.iter()
                        .zip(names)
                        .map(|(&s, name)| if s < 0 { format!("-{name}") } else { name.clone() })
                        .collect()
                })
                .collect(),
            degrees: self.degrees.clone(),
            options: ProblemOptions {
                weight: self.weight.as_ref().map(|w| {
                    (0..w.nrows())
                        .map(|i| (0..w.ncols()).map(|j| w[(i, j)]).collect())
                        .collect()
                }),
                ball_radius: self.ball_radius,
                gap_tol: Some(self.solver.gap_tol),
                feas_tol: Some(self.solver.feas_tol),
                max_iter: Some(self.solver.max_iter),
                deg_v: self.v_cap,
                use_symmetry: Some(self.use_symmetry),
                newton_prune: Some(self.newton_prune),
                qp_split: self.split.as_ref().map(|s| (s.q.clone(), s.p.clone())),
                hamiltonian: self.hamiltonian.as_ref().map(|h| h.to_text(names)),
                scan_energy: self.scan_energy,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemFile = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// The region with any Archimedean ball augmentation applied.
    pub fn effective_set(&self) -> Result<SemialgebraicSet> {
        let mut set = self.set.clone();
        if let Some(r) = self.ball_radius {
            let n = set.nvars;
            let mut ball = Polynomial::constant(r * r, n);
            for i in 0..n {
                ball = ball.sub(&Polynomial::var(i, n).pow(2))?;
            }
            set.inequalities.push(ball);
        }
        Ok(set)
    }

    pub fn tangent_system(&self) -> Result<TangentSystem> {
        build_tangent(&self.field, self.weight.clone())
    }

    pub fn flow_system(&self) -> Result<FlowSystem> {
        FlowSystem::new(&self.field, self.split.clone(), self.hamiltonian.as_ref())
    }
}

fn parse_signed_generator(entries: &[String], names: &[String]) -> Result<Vec<i8>> {
    if entries.len() != names.len() {
        return Err(Error::BadSymmetry(format!(
            "generator lists {} entries for {} variables",
            entries.len(),
            names.len()
        )));
    }
    entries
        .iter()
        .zip(names)
        .map(|(entry, name)| {
            let trimmed = entry.trim();
            let (sign, body) = match trimmed.strip_prefix('-') {
                Some(rest) => (-1i8, rest.trim()),
                None => (1i8, trimmed),
            };
            if body != name {
                return Err(Error::BadSymmetry(format!(
                    "generator entry `{entry}` does not name variable `{name}`"
                )));
            }
            Ok(sign)
        })
        .collect()
}

/// Compiled-in example systems, so tests and presets cannot drift.
pub mod presets {
    use super::*;
    use crate::poly::state_names;

    /// Lorenz at the standard chaotic parameters (β, σ, r) = (8/3, 10, 28).
    pub fn lorenz_field() -> VectorField {
        let names = state_names(3);
        VectorField::new(
            vec![
                Polynomial::parse("10x2 - 10x1", &names).unwrap(),
                Polynomial::parse("28x1 - x2 - x1*x3", &names).unwrap(),
                Polynomial::parse("x1*x2 - 2.6666666666666666667x3", &names).unwrap(),
            ],
            names,
        )
        .unwrap()
    }

    pub fn henon_heiles_field() -> VectorField {
        let names = state_names(4);
        VectorField::new(
            vec![
                Polynomial::parse("x3", &names).unwrap(),
                Polynomial::parse("x4", &names).unwrap(),
                Polynomial::parse("-x1 - 2x1*x2", &names).unwrap(),
                Polynomial::parse("-x2 - x1^2 + x2^2", &names).unwrap(),
            ],
            names,
        )
        .unwrap()
    }

    pub fn henon_heiles_energy() -> Polynomial {
        let names = state_names(4);
        Polynomial::parse(
            "0.5x1^2 + 0.5x2^2 + 0.5x3^2 + 0.5x4^2 + x1^2*x2 - 0.33333333333333333333x2^3",
            &names,
        )
        .unwrap()
    }

    pub fn henon_heiles_hamiltonian() -> (VectorField, QpSplit, Polynomial) {
        (
            henon_heiles_field(),
            QpSplit { q: vec![0, 1], p: vec![2, 3] },
            henon_heiles_energy(),
        )
    }

    /// The region 0 ≤ H ≤ 1/7 restricted to the bounded component by
    /// `x₁² + x₂² ≤ 1`.
    pub fn henon_heiles_set() -> SemialgebraicSet {
        let h = henon_heiles_energy();
        let g1 = Polynomial::constant(1.0 / 7.0, 4).sub(&h).unwrap();
        let g3 = Polynomial::parse("1 - x1^2 - x2^2", &state_names(4)).unwrap();
        SemialgebraicSet { inequalities: vec![g1, h, g3], equalities: vec![], nvars: 4 }
    }

    pub fn lorenz_problem() -> Problem {
        Problem {
            name: "lorenz".to_string(),
            variables: state_names(3),
            field: lorenz_field(),
            set: SemialgebraicSet::whole_space(3),
            group: SignSymmetryGroup::closure(vec![vec![-1, -1, 1]], 3).unwrap(),
            degrees: vec![2, 4, 6],
            weight: None,
            ball_radius: None,
            // quadratic V suffices for sharp Lorenz bounds
            v_cap: Some(2),
            solver: SolveOptions::default(),
            use_symmetry: true,
            newton_prune: false,
            split: None,
            hamiltonian: None,
            scan_energy: None,
        }
    }

    pub fn henon_heiles_problem() -> Problem {
        Problem {
            name: "henon-heiles".to_string(),
            variables: state_names(4),
            field: henon_heiles_field(),
            set: henon_heiles_set(),
            group: SignSymmetryGroup::closure(vec![vec![-1, 1, -1, 1]], 4).unwrap(),
            degrees: vec![2, 4],
            weight: None,
            ball_radius: None,
            v_cap: None,
            solver: SolveOptions::default(),
            use_symmetry: true,
            newton_prune: false,
            split: Some(QpSplit { q: vec![0, 1], p: vec![2, 3] }),
            hamiltonian: Some(henon_heiles_energy()),
            scan_energy: Some(1.0 / 7.0),
        }
    }

    pub fn by_name(name: &str) -> Result<Problem> {
        match name {
            "lorenz" => Ok(lorenz_problem()),
            "henon-heiles" => Ok(henon_heiles_problem()),
            other => Err(Error::Parse(format!(
                "unknown preset `{other}` (available: lorenz, henon-heiles)"
            ))),
        }
    }
}

/// One row of the bound table.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub degree: u32,
    pub bound: Option<f64>,
    pub status: String,
    pub gap: Option<f64>,
    pub residual: Option<f64>,
    pub min_eig: Option<f64>,
    pub wall_time_s: f64,
    pub certified: bool,
}

impl BoundRow {
    pub fn csv_header() -> &'static str {
        "degree,bound,status,gap,residual,min_eig,wall_time_s"
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "nan".to_string(), |x| format!("{x:.16e}"))
        }
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.degree,
            opt(self.bound),
            self.status,
            opt(self.gap),
            opt(self.residual),
            opt(self.min_eig),
            self.wall_time_s
        )
    }
}

/// Everything produced by one bound computation, for callers that need
/// more than the table row.
pub struct BoundOutcome {
    pub row: BoundRow,
    pub certificate: Option<Certificate>,
    pub program: SosProgram,
    pub tangent: TangentSystem,
}

/// Assembles and compiles the SOS program for one degree.
pub fn compile_for_degree(problem: &Problem, degree: u32) -> Result<(TangentSystem, SosProgram, CompiledSdp)> {
    let ts = problem.tangent_system()?;
    let set = problem.effective_set()?;
    let schedule = DegreeSchedule::uniform(degree, &set, problem.v_cap);
    let options = SosOptions {
        use_symmetry: problem.use_symmetry,
        newton_prune: problem.newton_prune,
    };
    let program = assemble_program(&ts, &set, &schedule, &problem.group, &options)?;
    let compiled = gramize(&program)?;
    Ok((ts, program, compiled))
}

/// Full pipeline for one degree: assemble → gramize → solve → verify.
pub fn bound_for_degree(problem: &Problem, degree: u32) -> Result<BoundOutcome> {
    let start = Instant::now();
    let (ts, program, compiled) = compile_for_degree(problem, degree)?;
    let sol = solve(&compiled.sdp, &problem.solver)?;
    let cert = crate::sos::extract_certificate(&program, &compiled, &sol)?;
    let report = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL)?;
    let certified = report.pass
        && matches!(
            sol.status,
            crate::sdp::SolveStatus::Optimal | crate::sdp::SolveStatus::NearOptimal
        );
    let status = if certified {
        "certified".to_string()
    } else {
        format!("uncertified_{}", sol.status)
    };
    let row = BoundRow {
        degree,
        bound: Some(cert.bound),
        status,
        gap: Some(sol.gap()),
        residual: Some(report.residual),
        min_eig: Some(report.min_eig),
        wall_time_s: start.elapsed().as_secs_f64(),
        certified,
    };
    Ok(BoundOutcome { row, certificate: Some(cert), program, tangent: ts })
}

fn bound_row(problem: &Problem, degree: u32) -> BoundRow {
    match bound_for_degree(problem, degree) {
        Ok(outcome) => outcome.row,
        Err(e) => BoundRow {
            degree,
            bound: None,
            status: format!("error: {e}").replace(',', ";"),
            gap: None,
            residual: None,
            min_eig: None,
            wall_time_s: 0.0,
            certified: false,
        },
    }
}

/// Computes bound rows for several degrees on a bounded worker pool;
/// output rows keep the input order regardless of completion order.
pub fn bound_table(problem: &Problem, degrees: &[u32], threads: usize) -> Vec<BoundRow> {
    let n = degrees.len();
    let workers = threads.max(1).min(n.max(1));
    if workers <= 1 {
        return degrees.iter().map(|&d| bound_row(problem, d)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<BoundRow>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let row = bound_row(problem, degrees[i]);
                slots.lock().unwrap()[i] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct OrbitScanOptions {
    pub n_ics: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub eps: f64,
    pub dt: f64,
    pub shoot_tol: f64,
    pub max_evals: usize,
    pub align_periods: usize,
    pub seed: u64,
}

impl Default for OrbitScanOptions {
    fn default() -> Self {
        Self {
            n_ics: 121,
            t_max: 33.0,
            t_min: 1.0,
            eps: 1e-3,
            dt: 1e-3,
            shoot_tol: 1e-10,
            max_evals: 4000,
            align_periods: DEFAULT_ALIGN_PERIODS,
            seed: 0,
        }
    }
}

/// One orbit row of the verification table.
#[derive(Debug, Clone)]
pub struct OrbitRow {
    pub x0: Vec<f64>,
    pub period: f64,
    pub residual: f64,
    pub energy: Option<f64>,
    pub mu1: Option<f64>,
    pub seed: u64,
    pub note: String,
}

impl OrbitRow {
    pub fn csv_header(dim: usize) -> String {
        let coords: Vec<String> = (1..=dim).map(|i| format!("x0_{i}")).collect();
        format!("{},T,residual,energy,mu1,seed", coords.join(","))
    }

    pub fn to_csv(&self) -> String {
        let coords: Vec<String> = self.x0.iter().map(|v| format!("{v:.16e}")).collect();
        format!(
            "{},{:.16e},{:.16e},{},{},{}",
            coords.join(","),
            self.period,
            self.residual,
            self.energy.map_or_else(|| "nan".to_string(), |e| format!("{e:.16e}")),
            self.mu1.map_or_else(|| "nan".to_string(), |m| format!("{m:.16e}")),
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct OrbitReport {
    pub rows: Vec<OrbitRow>,
    /// Representative periods of the distinct clusters, ascending.
    pub distinct_periods: Vec<f64>,
    pub max_mu1: Option<f64>,
    /// Fixed-point exponents when the problem has no Hamiltonian split.
    pub fixed_point_les: Option<Vec<f64>>,
}

/// Orbit verification pipeline. Hamiltonian problems with a scan energy
/// run the curve grid → close returns → shooting → leading-LE chain;
/// problems without a split report the fixed-point exponents at the
/// origin instead.
pub fn verify_orbits(problem: &Problem, opts: &OrbitScanOptions) -> Result<OrbitReport> {
    if problem.split.is_none() {
        let les = fixed_point_les(&problem.field, &vec![0.0; problem.field.dim()], FIXED_POINT_TOL)?;
        return Ok(OrbitReport {
            rows: Vec::new(),
            distinct_periods: Vec::new(),
            max_mu1: les.first().copied(),
            fixed_point_les: Some(les),
        });
    }
    let energy = problem.scan_energy.ok_or_else(|| {
        Error::Other("orbit scan needs a scan_energy level for the initial-condition curve".to_string())
    })?;
    let sys = problem.flow_system()?;
    let ics = hh_scan_grid(opts.n_ics, energy);
    let candidates = close_return_scan(&sys, &ics, opts.t_max, opts.t_min, opts.eps, opts.dt)?;

    let mut rows = Vec::new();
    let mut refined: Vec<Orbit> = Vec::new();
    for (idx, cand) in candidates.iter().enumerate() {
        let seed = opts.seed.wrapping_add(idx as u64);
        match shooting_refine(
            &sys,
            ShootingSpace::EnergyCurve { energy },
            cand,
            opts.shoot_tol,
            opts.max_evals,
            opts.dt,
        ) {
            Ok(orbit) => {
                let le: Result<LeEstimate> =
                    leading_le(&sys, &problem.field, &orbit, opts.align_periods, opts.dt, seed);
                match le {
                    Ok(est) => {
                        rows.push(OrbitRow {
                            x0: orbit.x0.clone(),
                            period: orbit.period,
                            residual: orbit.residual,
                            energy: orbit.energy,
                            mu1: Some(est.mu1),
                            seed,
                            note: if est.converged {
                                "ok".to_string()
                            } else {
                                format!("direction residual {:.2e}", est.direction_residual)
                            },
                        });
                        refined.push(orbit);
                    }
                    Err(e) => rows.push(OrbitRow {
                        x0: orbit.x0.clone(),
                        period: orbit.period,
                        residual: orbit.residual,
                        energy: orbit.energy,
                        mu1: None,
                        seed,
                        note: format!("le failed: {e}"),
                    }),
                }
            }
            Err(Error::ShootingStalled { residual, evals, best }) => {
                rows.push(OrbitRow {
                    x0: best.x0.clone(),
                    period: best.period,
                    residual,
                    energy: best.energy,
                    mu1: None,
                    seed,
                    note: format!("shooting stalled after {evals} evaluations"),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let distinct_periods = cluster_periods(&refined, 0.1);
    let max_mu1 = rows.iter().filter_map(|r| r.mu1).fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |a| a.max(v)))
    });
    Ok(OrbitReport { rows, distinct_periods, max_mu1, fixed_point_les: None })
}

/// Groups orbits whose periods differ by less than `tol` and returns each
/// cluster's minimum-residual representative period, ascending.
pub fn cluster_periods(orbits: &[Orbit], tol: f64) -> Vec<f64> {
    let mut sorted: Vec<&Orbit> = orbits.iter().collect();
    sorted.sort_by(|a, b| a.period.partial_cmp(&b.period).unwrap());
    let mut clusters: Vec<Vec<&Orbit>> = Vec::new();
    for orbit in sorted {
        match clusters.last_mut() {
            Some(cluster) if orbit.period - cluster.last().unwrap().period < tol => {
                cluster.push(orbit)
            }
            _ => clusters.push(vec![orbit]),
        }
    }
    clusters
        .into_iter()
        .map(|cluster| {
            cluster
                .iter()
                .min_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap())
                .unwrap()
                .period
        })
        .collect()
}
