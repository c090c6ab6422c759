//! Block semidefinite programs with free scalar variables.
//!
//! The problem form throughout this module (minimization convention):
//!
//! ```text
//! minimize    cᵀu
//! subject to  Σ_b ⟨A_{r,b}, X_b⟩ + (F u)_r = h_r ,   r = 1..m
//!             X_b ⪰ 0,   u ∈ ℝ^{nfree}
//! ```
//!
//! with Lagrangian dual
//!
//! ```text
//! maximize    hᵀy
//! subject to  Z_b = −Σ_r y_r A_{r,b} ⪰ 0,   Fᵀy = c .
//! ```
//!
//! Weak duality gives `cᵀu − hᵀy = Σ_b ⟨X_b, Z_b⟩ ≥ 0` at feasible points,
//! so the primal objective always dominates the dual objective.

mod sdpa;
mod solver;

pub use sdpa::{export_sdpa, import_solution, parse_sdpa, write_solution, RawSdpaFile};
pub use solver::{solve, SolveOptions};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative duality-gap tolerance.
pub const GAP_TOL: f64 = 1e-8;
/// Default primal/dual feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const MAX_ITER: usize = 200;

/// One equality row: sparse symmetric coefficients per block plus free
/// columns. An entry `(block, i, j, v)` with `i ≤ j` denotes the value `v`
/// at positions `(i,j)` and `(j,i)` of the symmetric coefficient matrix,
/// so its inner product with a symmetric `X` is `v·X_ii` when `i = j` and
/// `2v·X_ij` otherwise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpRow {
    pub entries: Vec<(usize, usize, usize, f64)>,
    pub free: Vec<(usize, f64)>,
}

/// A block SDP with free variables, plus labels used by reports and the
/// export sidecar.
#[derive(Debug, Clone)]
pub struct BlockSdp {
    pub block_dims: Vec<usize>,
    pub rows: Vec<SdpRow>,
    pub rhs: Vec<f64>,
    pub nfree: usize,
    /// Objective coefficients over the free variables.
    pub objective: Vec<f64>,
    /// One label per row (the matched monomial, in practice).
    pub row_labels: Vec<String>,
    /// One label per block.
    pub block_labels: Vec<String>,
    /// One label per free variable.
    pub free_labels: Vec<String>,
}

impl BlockSdp {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Structural consistency: index ranges, `i ≤ j`, matching lengths.
    pub fn validate(&self) -> Result<()> {
        if self.rhs.len() != self.rows.len() {
            return Err(Error::BadSdp(format!(
                "{} rhs values for {} rows",
                self.rhs.len(),
                self.rows.len()
            )));
        }
        if self.objective.len() != self.nfree {
            return Err(Error::BadSdp(format!(
                "{} objective coefficients for {} free variables",
                self.objective.len(),
                self.nfree
            )));
        }
        if self.row_labels.len() != self.rows.len()
            || self.block_labels.len() != self.block_dims.len()
            || self.free_labels.len() != self.nfree
        {
            return Err(Error::BadSdp("label arrays out of sync".to_string()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            for &(b, i, j, _) in &row.entries {
                if b >= self.block_dims.len() {
                    return Err(Error::BadSdp(format!("row {r}: block {b} out of range")));
                }
                if i > j || j >= self.block_dims[b] {
                    return Err(Error::BadSdp(format!(
                        "row {r}: entry ({i},{j}) invalid for block {b} of dimension {}",
                        self.block_dims[b]
                    )));
                }
            }
            for &(f, _) in &row.free {
                if f >= self.nfree {
                    return Err(Error::BadSdp(format!("row {r}: free variable {f} out of range")));
                }
            }
        }
        Ok(())
    }

    /// `Σ_b ⟨A_{r,b}, X_b⟩` for one row.
    pub fn apply_row(&self, r: usize, blocks: &[DMatrix<f64>]) -> f64 {
        let mut acc = 0.0;
        for &(b, i, j, v) in &self.rows[r].entries {
            acc += if i == j {
                v * blocks[b][(i, i)]
            } else {
                2.0 * v * blocks[b][(i, j)]
            };
        }
        acc
    }

    /// `(F u)_r` for one row.
    pub fn apply_free(&self, r: usize, u: &[f64]) -> f64 {
        self.rows[r].free.iter().map(|&(f, v)| v * u[f]).sum()
    }

    /// Accumulates `y_r · A_{r,b}` into dense per-block matrices.
    pub fn accumulate_weighted(&self, y: &[f64], out: &mut [DMatrix<f64>]) {
        for m in out.iter_mut() {
            m.fill(0.0);
        }
        for (r, row) in self.rows.iter().enumerate() {
            let w = y[r];
            if w == 0.0 {
                continue;
            }
            for &(b, i, j, v) in &row.entries {
                out[b][(i, j)] += w * v;
                if i != j {
                    out[b][(j, i)] += w * v;
                }
            }
        }
    }
}

/// Termination status of a solve (or of an imported solution re-checked
/// against the problem data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    InfeasibleDetected,
    MaxIter,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::InfeasibleDetected => "infeasible_detected",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// One line of the deterministic iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub mu: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
}

impl std::fmt::Display for IterLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "it {:3}  mu {:.16e}  pobj {:.16e}  dobj {:.16e}  pinf {:.16e}  dinf {:.16e}  ap {:.16e}  ad {:.16e}",
            self.iter,
            self.mu,
            self.primal_obj,
            self.dual_obj,
            self.primal_infeas,
            self.dual_infeas,
            self.alpha_primal,
            self.alpha_dual
        )
    }
}

/// Solver output: primal blocks (the Gram matrices), free variables, dual
/// multipliers, objectives, and the iteration log.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub blocks: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub dual: Vec<f64>,
    pub iterations: Vec<IterLog>,
}

impl SdpSolution {
    /// Relative duality gap of this solution.
    pub fn gap(&self) -> f64 {
        (self.primal_obj - self.dual_obj).abs() / (1.0 + self.primal_obj.abs() + self.dual_obj.abs())
    }

    /// Minimum eigenvalue over all primal blocks.
    pub fn min_block_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|m| m.nrows() > 0)
            .map(|m| {
                nalgebra::SymmetricEigen::new(m.clone())
                    .eigenvalues
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Measures primal and dual infeasibility of `(blocks, free, dual)`
/// against the problem data. Used both by the solver and on import.
pub fn residual_norms(p: &BlockSdp, sol: &SdpSolution) -> (f64, f64) {
    let m = p.num_rows();
    let mut pinf: f64 = 0.0;
    let hmax = p.rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for r in 0..m {
        let v = p.rhs[r] - p.apply_row(r, &sol.blocks) - p.apply_free(r, &sol.free);
        pinf = pinf.max(v.abs());
    }
    pinf /= 1.0 + hmax;

    // dual: Z_b = −Σ_r y_r A_{r,b} must be PSD; Fᵀy = c.
    let mut z: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    p.accumulate_weighted(&sol.dual, &mut z);
    let mut dinf: f64 = 0.0;
    for zb in &z {
        if zb.nrows() == 0 {
            continue;
        }
        let min_eig = nalgebra::SymmetricEigen::new(-zb.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        dinf = dinf.max((-min_eig).max(0.0));
    }
    let mut ftyc = vec![0.0; p.nfree];
    for (r, row) in p.rows.iter().enumerate() {
        for &(f, v) in &row.free {
            ftyc[f] += v * sol.dual[r];
        }
    }
    for (fv, &c) in ftyc.iter().zip(&p.objective) {
        dinf = dinf.max((fv - c).abs() / (1.0 + c.abs()));
    }
    (pinf, dinf)
}
