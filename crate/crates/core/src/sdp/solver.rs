//! Primal-dual path-following interior-point solver.
//!
//! Nesterov–Todd scaling with a Mehrotra predictor-corrector step, dense
//! per-block linear algebra, and free variables handled directly in the
//! KKT system via block elimination:
//!
//! ```text
//! [ M  F ] [Δy]   [g ]          M_{rs} = Σ_b ⟨A_{r,b}, W_b A_{s,b} W_b⟩
//! [ Fᵀ 0 ] [Δu] = [rf]
//! ```
//!
//! `W_b` is the NT scaling point (`W Z W = X`), computed per block from
//! Cholesky factors of `X` and `Z` and one SVD. The run is deterministic:
//! identical inputs produce bit-identical iterate sequences and logs.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{BlockSdp, IterLog, SdpSolution, SolveStatus, FEAS_TOL, GAP_TOL, MAX_ITER};
use crate::error::{Error, Result};

/// Fraction-to-boundary parameter for corrector steps.
const STEP_FRACTION: f64 = 0.98;
/// Dual objective magnitude beyond which, with shrinking steps, the
/// problem is declared infeasible.
const DIVERGENCE_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { gap_tol: GAP_TOL, feas_tol: FEAS_TOL, max_iter: MAX_ITER }
    }
}

struct Scaling {
    /// `G_b` with `W_b = G_b G_bᵀ`.
    g: Vec<DMatrix<f64>>,
    g_inv: Vec<DMatrix<f64>>,
    w: Vec<DMatrix<f64>>,
    /// NT spectrum: `λ_b = G⁻¹XG⁻ᵀ = GᵀZG` (diagonal).
    lambda: Vec<DVector<f64>>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    du: DVector<f64>,
}

/// Solves the block SDP. Returns a solution in every status; only
/// `Optimal` certifies the gap and feasibility tolerances.
pub fn solve(p: &BlockSdp, opts: &SolveOptions) -> Result<SdpSolution> {
    p.validate()?;
    let nb = p.block_dims.len();
    let total_dim: usize = p.block_dims.iter().sum();
    if total_dim == 0 {
        return Err(Error::BadSdp("no PSD blocks".to_string()));
    }
    let m = p.num_rows();
    let nf = p.nfree;

    // Cold start: identity scaled by the data magnitude.
    let h_max = p.rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let init = 1.0 + h_max;
    let mut x: Vec<DMatrix<f64>> = p
        .block_dims
        .iter()
        .map(|&d| DMatrix::identity(d, d) * init)
        .collect();
    let mut z = x.clone();
    let mut u = DVector::zeros(nf);
    let mut y = DVector::zeros(m);

    // Dense free-variable column matrix.
    let mut f_mat = DMatrix::zeros(m, nf);
    for (r, row) in p.rows.iter().enumerate() {
        for &(f, v) in &row.free {
            f_mat[(r, f)] += v;
        }
    }
    let c = DVector::from_vec(p.objective.clone());
    let c_max = c.iter().fold(0.0f64, |a, &b| a.max(b.abs()));

    let mut log = Vec::new();
    let mut small_step_streak = 0usize;
    let mut status = SolveStatus::MaxIter;

    let mut yacc: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();

    for iter in 0..opts.max_iter {
        // Residuals.
        let mut r_p = DVector::zeros(m);
        for r in 0..m {
            r_p[r] = p.rhs[r] - p.apply_row(r, &x) - p.apply_free(r, u.as_slice());
        }
        p.accumulate_weighted(y.as_slice(), &mut yacc);
        let r_d: Vec<DMatrix<f64>> = (0..nb).map(|b| -&z[b] - &yacc[b]).collect();
        let r_f = &c - f_mat.transpose() * &y;

        let mut xz_trace = 0.0;
        for b in 0..nb {
            xz_trace += (&x[b] * &z[b]).trace();
        }
        let mu = xz_trace / total_dim as f64;
        let pobj = c.dot(&u);
        let dobj = DVector::from_vec(p.rhs.clone()).dot(&y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = r_p.amax() / (1.0 + h_max);
        let mut dinf = r_f.amax() / (1.0 + c_max);
        for rb in &r_d {
            if rb.nrows() > 0 {
                dinf = dinf.max(rb.amax() / (1.0 + init));
            }
        }

        if gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        if dobj.abs() > DIVERGENCE_LIMIT && small_step_streak >= 2 {
            status = SolveStatus::InfeasibleDetected;
            break;
        }
        if small_step_streak >= 5 {
            status = if gap <= 100.0 * opts.gap_tol && pinf <= 100.0 * opts.feas_tol {
                SolveStatus::NearOptimal
            } else {
                SolveStatus::NumericalFailure
            };
            break;
        }

        // NT scaling.
        let scaling = match compute_scaling(&x, &z) {
            Some(s) => s,
            None => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };

        // Schur complement M and its factorization (shared by both solves).
        let schur = build_schur(p, &scaling);
        let chol_m = match factor_with_ridge(schur) {
            Some(c) => c,
            None => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };
        let minv_f = if nf > 0 { chol_m.solve(&f_mat) } else { DMatrix::zeros(m, 0) };
        let chol_s = if nf > 0 {
            match factor_with_ridge(f_mat.transpose() * &minv_f) {
                Some(c) => c,
                None => {
                    status = SolveStatus::NumericalFailure;
                    break;
                }
            }
        } else {
            Cholesky::new(DMatrix::identity(0, 0)).unwrap()
        };

        // W R_d W, reused by predictor and corrector.
        let wrdw: Vec<DMatrix<f64>> = (0..nb).map(|b| &scaling.w[b] * &r_d[b] * &scaling.w[b]).collect();

        // Predictor: pure Newton step toward XZ = 0.
        let dc_aff: Vec<DMatrix<f64>> = scaling
            .lambda
            .iter()
            .map(|l| -DMatrix::from_diagonal(&l.component_mul(l)))
            .collect();
        let aff = newton_step(p, &scaling, &chol_m, &minv_f, &chol_s, &f_mat, &wrdw, &r_d, &r_p, &r_f, &dc_aff, nf, &mut yacc);

        let (ax_aff, az_aff) = step_lengths(&x, &z, &aff, 1.0);

        // Centering parameter from the affine trial point.
        let mut trial = 0.0;
        for b in 0..nb {
            trial += ((&x[b] + &aff.dx[b] * ax_aff) * (&z[b] + &aff.dz[b] * az_aff)).trace();
        }
        let mu_aff = (trial / total_dim as f64).max(0.0);
        let sigma = ((mu_aff / mu).powi(3)).clamp(0.0, 1.0);

        // Corrector: recenters and adds the second-order term
        // (the Jordan product of the scaled affine directions).
        let dc_corr: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let l = &scaling.lambda[b];
                let dim = l.len();
                let dxh = &scaling.g_inv[b] * &aff.dx[b] * scaling.g_inv[b].transpose();
                let dzh = scaling.g[b].transpose() * &aff.dz[b] * &scaling.g[b];
                let cross = (&dxh * &dzh + &dzh * &dxh) * 0.5;
                DMatrix::from_diagonal(&DVector::from_element(dim, sigma * mu))
                    - DMatrix::from_diagonal(&l.component_mul(l))
                    - cross
            })
            .collect();
        let dir = newton_step(p, &scaling, &chol_m, &minv_f, &chol_s, &f_mat, &wrdw, &r_d, &r_p, &r_f, &dc_corr, nf, &mut yacc);

        let (ax, az) = step_lengths(&x, &z, &dir, STEP_FRACTION);

        for b in 0..nb {
            x[b] += &dir.dx[b] * ax;
            z[b] += &dir.dz[b] * az;
            // keep exact symmetry against rounding drift
            x[b] = (&x[b] + x[b].transpose()) * 0.5;
            z[b] = (&z[b] + z[b].transpose()) * 0.5;
        }
        u += &dir.du * ax;
        y += &dir.dy * az;

        log.push(IterLog {
            iter,
            mu,
            primal_obj: pobj,
            dual_obj: dobj,
            primal_infeas: pinf,
            dual_infeas: dinf,
            alpha_primal: ax,
            alpha_dual: az,
        });

        if ax < 1e-8 && az < 1e-8 {
            small_step_streak += 1;
        } else {
            small_step_streak = 0;
        }
    }

    let pobj = c.dot(&u);
    let dobj = DVector::from_vec(p.rhs.clone()).dot(&y);
    if status == SolveStatus::MaxIter {
        // classify the final iterate
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if gap <= 100.0 * opts.gap_tol {
            status = SolveStatus::NearOptimal;
        }
    }
    Ok(SdpSolution {
        status,
        primal_obj: pobj,
        dual_obj: dobj,
        blocks: x,
        free: u.as_slice().to_vec(),
        dual: y.as_slice().to_vec(),
        iterations: log,
    })
}

/// NT scaling from Cholesky factors of `X` and `Z`: with
/// `L_zᵀ L_x = U Σ Vᵀ`, the matrix `G = L_x V Σ^{-1/2}` satisfies
/// `G G ᵀ Z G Gᵀ = X` and `G⁻¹ X G⁻ᵀ = Gᵀ Z G = Σ`.
fn compute_scaling(x: &[DMatrix<f64>], z: &[DMatrix<f64>]) -> Option<Scaling> {
    let nb = x.len();
    let mut g = Vec::with_capacity(nb);
    let mut g_inv = Vec::with_capacity(nb);
    let mut w = Vec::with_capacity(nb);
    let mut lambda = Vec::with_capacity(nb);
    for b in 0..nb {
        let dim = x[b].nrows();
        if dim == 0 {
            g.push(DMatrix::zeros(0, 0));
            g_inv.push(DMatrix::zeros(0, 0));
            w.push(DMatrix::zeros(0, 0));
            lambda.push(DVector::zeros(0));
            continue;
        }
        let lx = Cholesky::new(x[b].clone())?.l();
        let lz = Cholesky::new(z[b].clone())?.l();
        let svd = nalgebra::SVD::new(lz.transpose() * &lx, true, true);
        let v = svd.v_t.as_ref()?.transpose();
        let sv = &svd.singular_values;
        if sv.iter().any(|&s| s <= 0.0) {
            return None;
        }
        let s_inv_half = DMatrix::from_diagonal(&sv.map(|s| s.powf(-0.5)));
        let s_half = DMatrix::from_diagonal(&sv.map(|s| s.sqrt()));
        let gb = &lx * &v * s_inv_half;
        // G⁻¹ = Σ^{1/2} Vᵀ L_x⁻¹
        let lx_inv = lx.solve_lower_triangular(&DMatrix::identity(dim, dim))?;
        let gb_inv = s_half * v.transpose() * lx_inv;
        w.push(&gb * gb.transpose());
        g.push(gb);
        g_inv.push(gb_inv);
        lambda.push(sv.clone_owned());
    }
    Some(Scaling { g, g_inv, w, lambda })
}

/// `M_{rs} = Σ_b ⟨A_{r,b}, W_b A_{s,b} W_b⟩`, symmetric positive
/// semidefinite. Built row by row through sparse outer-product expansions
/// of `W A W`.
fn build_schur(p: &BlockSdp, scaling: &Scaling) -> DMatrix<f64> {
    let m = p.num_rows();
    let nb = p.block_dims.len();
    let mut schur = DMatrix::zeros(m, m);
    let mut t: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    let mut touched = vec![false; nb];
    for r in 0..m {
        for flag in touched.iter_mut() {
            *flag = false;
        }
        for &(b, i, j, v) in &p.rows[r].entries {
            if !touched[b] {
                t[b].fill(0.0);
                touched[b] = true;
            }
            accumulate_waw(&scaling.w[b], i, j, v, &mut t[b]);
        }
        for s in r..m {
            let mut acc = 0.0;
            for &(b, i, j, v) in &p.rows[s].entries {
                if !touched[b] {
                    continue;
                }
                acc += if i == j { v * t[b][(i, i)] } else { 2.0 * v * t[b][(i, j)] };
            }
            schur[(r, s)] = acc;
            schur[(s, r)] = acc;
        }
    }
    schur
}

/// Adds `v · W (E_ij + E_ji) W` (or `v · W E_ii W`) to `out`.
fn accumulate_waw(w: &DMatrix<f64>, i: usize, j: usize, v: f64, out: &mut DMatrix<f64>) {
    let dim = w.nrows();
    let wi = w.column(i);
    let wj = w.column(j);
    if i == j {
        for c in 0..dim {
            let s = v * wi[c];
            let mut col = out.column_mut(c);
            for rr in 0..dim {
                col[rr] += s * wi[rr];
            }
        }
    } else {
        for c in 0..dim {
            let s1 = v * wj[c];
            let s2 = v * wi[c];
            let mut col = out.column_mut(c);
            for rr in 0..dim {
                col[rr] += s1 * wi[rr] + s2 * wj[rr];
            }
        }
    }
}

/// Cholesky with an escalating diagonal ridge for numerically singular
/// systems. The ridge sequence is fixed, keeping runs deterministic.
fn factor_with_ridge(m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let dim = m.nrows();
    if dim == 0 {
        return Cholesky::new(m);
    }
    let mean_diag = (m.diagonal().sum() / dim as f64).abs().max(1e-300);
    for &ridge in &[0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        let mut trial = m.clone();
        if ridge > 0.0 {
            for i in 0..dim {
                trial[(i, i)] += ridge * mean_diag;
            }
        }
        if let Some(c) = Cholesky::new(trial) {
            return Some(c);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn newton_step(
    p: &BlockSdp,
    scaling: &Scaling,
    chol_m: &Cholesky<f64, nalgebra::Dyn>,
    minv_f: &DMatrix<f64>,
    chol_s: &Cholesky<f64, nalgebra::Dyn>,
    f_mat: &DMatrix<f64>,
    wrdw: &[DMatrix<f64>],
    r_d: &[DMatrix<f64>],
    r_p: &DVector<f64>,
    r_f: &DVector<f64>,
    dc: &[DMatrix<f64>],
    nf: usize,
    yacc: &mut [DMatrix<f64>],
) -> Direction {
    let nb = p.block_dims.len();
    let m = p.num_rows();

    // R_b = G [ 2 dc_ij / (λ_i + λ_j) ] Gᵀ, then U_b = R_b − W R_d W.
    let u_blocks: Vec<DMatrix<f64>> = (0..nb)
        .map(|b| {
            let l = &scaling.lambda[b];
            let dim = l.len();
            let mut scaled = dc[b].clone();
            for i in 0..dim {
                for j in 0..dim {
                    scaled[(i, j)] *= 2.0 / (l[i] + l[j]);
                }
            }
            &scaling.g[b] * scaled * scaling.g[b].transpose() - &wrdw[b]
        })
        .collect();

    let mut g_vec = DVector::zeros(m);
    for r in 0..m {
        g_vec[r] = r_p[r] - p.apply_row(r, &u_blocks);
    }

    let (dy, du) = if nf > 0 {
        let minv_g = chol_m.solve(&g_vec);
        let rhs_u = f_mat.transpose() * &minv_g - r_f;
        let du = chol_s.solve(&rhs_u);
        let dy = minv_g - minv_f * &du;
        (dy, du)
    } else {
        (chol_m.solve(&g_vec), DVector::zeros(0))
    };

    // ΔZ = R_d − Σ_r Δy_r A_r ;  ΔX = U + W (Σ_r Δy_r A_r) W.
    p.accumulate_weighted(dy.as_slice(), yacc);
    let mut dx = Vec::with_capacity(nb);
    let mut dz = Vec::with_capacity(nb);
    for b in 0..nb {
        dz.push(&r_d[b] - &yacc[b]);
        dx.push(&u_blocks[b] + &scaling.w[b] * &yacc[b] * &scaling.w[b]);
    }
    Direction { dx, dz, dy, du }
}

/// Largest steps keeping `X + αΔX` and `Z + αΔZ` positive semidefinite,
/// scaled by `fraction` and capped at 1.
fn step_lengths(x: &[DMatrix<f64>], z: &[DMatrix<f64>], dir: &Direction, fraction: f64) -> (f64, f64) {
    let ax = max_psd_step(x, &dir.dx);
    let az = max_psd_step(z, &dir.dz);
    ((fraction * ax).min(1.0), (fraction * az).min(1.0))
}

fn max_psd_step(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (xb, dxb) in x.iter().zip(dx) {
        let dim = xb.nrows();
        if dim == 0 {
            continue;
        }
        let chol = match Cholesky::new(xb.clone()) {
            Some(c) => c,
            None => return 1e-12,
        };
        let l = chol.l();
        // λ_min of L⁻¹ ΔX L⁻ᵀ
        let t1 = match l.solve_lower_triangular(dxb) {
            Some(t) => t,
            None => return 1e-12,
        };
        let t2 = match l.solve_lower_triangular(&t1.transpose()) {
            Some(t) => t,
            None => return 1e-12,
        };
        let sym = (&t2 + t2.transpose()) * 0.5;
        let min_eig = nalgebra::SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < 0.0 {
            alpha = alpha.min(-1.0 / min_eig);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{residual_norms, SdpRow};

    fn toy_2x2() -> BlockSdp {
        // minimize y s.t. [[y, 1], [1, y]] ⪰ 0; optimum y* = 1.
        BlockSdp {
            block_dims: vec![2],
            rows: vec![
                SdpRow { entries: vec![(0, 0, 0, 1.0)], free: vec![(0, -1.0)] },
                SdpRow { entries: vec![(0, 1, 1, 1.0)], free: vec![(0, -1.0)] },
                SdpRow { entries: vec![(0, 0, 1, 0.5)], free: vec![] },
            ],
            rhs: vec![0.0, 0.0, 1.0],
            nfree: 1,
            objective: vec![1.0],
            row_labels: vec!["X11-y".into(), "X22-y".into(), "X12".into()],
            block_labels: vec!["main".into()],
            free_labels: vec!["y".into()],
        }
    }

    #[test]
    fn toy_psd_bound() {
        let p = toy_2x2();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.free[0] - 1.0).abs() < 1e-6, "y* = {}", sol.free[0]);
        assert!(sol.gap() <= GAP_TOL);
        let (pinf, dinf) = residual_norms(&p, &sol);
        assert!(pinf <= FEAS_TOL && dinf <= 1e-6, "pinf {pinf:e} dinf {dinf:e}");
    }

    #[test]
    fn toy_scalar_nonnegative() {
        // minimize y s.t. y ⪰ 0 as a 1×1 block: X = y, min y.
        let p = BlockSdp {
            block_dims: vec![1],
            rows: vec![SdpRow { entries: vec![(0, 0, 0, 1.0)], free: vec![(0, -1.0)] }],
            rhs: vec![0.0],
            nfree: 1,
            objective: vec![1.0],
            row_labels: vec!["X11-y".into()],
            block_labels: vec!["main".into()],
            free_labels: vec!["y".into()],
        };
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.free[0].abs() < 1e-6, "y* = {}", sol.free[0]);
    }

    #[test]
    fn weak_duality_every_iteration() {
        let p = toy_2x2();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        for row in &sol.iterations {
            assert!(
                row.primal_obj >= row.dual_obj - 1e-9,
                "weak duality violated at iter {}: {} < {}",
                row.iter,
                row.primal_obj,
                row.dual_obj
            );
        }
    }

    #[test]
    fn row_scaling_invariance_of_argmin() {
        let p = toy_2x2();
        let mut scaled = p.clone();
        for row in &mut scaled.rows {
            for e in &mut row.entries {
                e.3 *= 10.0;
            }
            for f in &mut row.free {
                f.1 *= 10.0;
            }
        }
        for v in &mut scaled.rhs {
            *v *= 10.0;
        }
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&scaled, &SolveOptions::default()).unwrap();
        assert!((a.free[0] - b.free[0]).abs() <= GAP_TOL.max(1e-8) * 10.0);
    }

    #[test]
    fn deterministic_iteration_log() {
        let p = toy_2x2();
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        let fmt = |s: &SdpSolution| {
            s.iterations
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(fmt(&a), fmt(&b));
    }

    #[test]
    fn returned_blocks_nearly_psd() {
        let p = toy_2x2();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert!(sol.min_block_eigenvalue() >= -FEAS_TOL);
    }

    #[test]
    fn rejects_invalid_input() {
        let mut p = toy_2x2();
        p.rows[0].entries[0].1 = 5; // index out of range
        assert!(solve(&p, &SolveOptions::default()).is_err());
    }
}
