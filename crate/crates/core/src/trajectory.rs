//! Numerical-integration verification suite: classical RK4 and the
//! fourth-order Forest–Ruth symplectic composition, close-return searches
//! for periodic-orbit candidates, shooting refinement, and leading
//! Lyapunov exponent measurement by per-period power iteration on the
//! tangent flow.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{jacobian, VectorField};
use crate::error::{Error, Result};
use crate::poly::{CompiledPoly, Polynomial};

/// Closure residual required before a leading-LE measurement is meaningful.
pub const LE_RESIDUAL_REQUIRED: f64 = 1e-8;
/// Periods of per-period renormalization before the exponent is read off.
pub const DEFAULT_ALIGN_PERIODS: usize = 14;

/// A numerically converged (or candidate) periodic trajectory.
#[derive(Debug, Clone)]
pub struct Orbit {
    pub x0: Vec<f64>,
    pub period: f64,
    /// Closure residual `|x(T) − x₀|`; recorded, never assumed zero.
    pub residual: f64,
    pub energy: Option<f64>,
}

/// A leading-LE measurement on one orbit.
#[derive(Debug, Clone)]
pub struct LeEstimate {
    pub orbit: Orbit,
    /// `μ₁ = (1/T) log |y(T)|` after direction alignment.
    pub mu1: f64,
    pub align_iterations: usize,
    /// Distance between the last two normalized tangent directions
    /// (modulo sign).
    pub direction_residual: f64,
    pub converged: bool,
    pub seed: u64,
}

/// Declares which coordinates are positions and which are the matching
/// momenta, in pairing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QpSplit {
    pub q: Vec<usize>,
    pub p: Vec<usize>,
}

/// A vector field compiled for integration, optionally with a separable
/// Hamiltonian structure (then stepped by Forest–Ruth) and a conserved
/// energy to track.
pub struct FlowSystem {
    field: Vec<CompiledPoly>,
    split: Option<QpSplit>,
    energy: Option<CompiledPoly>,
    dim: usize,
}

// Forest–Ruth composition constants: θ = 1/(2 − 2^{1/3}), position
// coefficients (θ/2, (1−θ)/2, (1−θ)/2, θ/2), momentum coefficients
// (θ, 1−2θ, θ, 0).
fn fr_theta() -> f64 {
    1.0 / (2.0 - 2f64.powf(1.0 / 3.0))
}

impl FlowSystem {
    pub fn new(f: &VectorField, split: Option<QpSplit>, energy: Option<&Polynomial>) -> Result<Self> {
        let n = f.dim();
        if let Some(s) = &split {
            if s.q.len() != s.p.len() {
                return Err(Error::NotSeparable(format!(
                    "{} position and {} momentum indices",
                    s.q.len(),
                    s.p.len()
                )));
            }
            let mut seen = vec![false; n];
            for &i in s.q.iter().chain(&s.p) {
                if i >= n || seen[i] {
                    return Err(Error::NotSeparable(format!("bad coordinate index {i}")));
                }
                seen[i] = true;
            }
            if !seen.iter().all(|&b| b) {
                return Err(Error::NotSeparable("split does not cover all coordinates".to_string()));
            }
            for (&qi, &pi) in s.q.iter().zip(&s.p) {
                if !f.component(qi).approx_eq(&Polynomial::var(pi, n), 1e-14) {
                    return Err(Error::NotSeparable(format!(
                        "dq{qi}/dt must equal the momentum variable x{pi}"
                    )));
                }
            }
            for &pi in &s.p {
                for (m, _) in f.component(pi).terms() {
                    if s.p.iter().any(|&pj| m.exponents()[pj] != 0) {
                        return Err(Error::NotSeparable(format!(
                            "force component {pi} depends on a momentum variable"
                        )));
                    }
                }
            }
        }
        if let Some(h) = energy {
            if h.nvars() != n {
                return Err(Error::DimensionMismatch(format!(
                    "energy in {} variables for a {}-dimensional system",
                    h.nvars(),
                    n
                )));
            }
        }
        Ok(Self {
            field: f.components().iter().map(|p| p.compile()).collect(),
            split,
            energy: energy.map(|h| h.compile()),
            dim: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_hamiltonian(&self) -> bool {
        self.split.is_some()
    }

    pub fn energy_at(&self, x: &[f64]) -> Option<f64> {
        self.energy.as_ref().map(|h| h.eval(x))
    }

    fn eval_field(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.field) {
            *o = c.eval(x);
        }
    }

    /// One step: Forest–Ruth when a (q,p) split is declared, RK4 otherwise.
    fn step(&self, x: &mut [f64], dt: f64, scratch: &mut Scratch) {
        match &self.split {
            Some(split) => self.step_forest_ruth(x, dt, split),
            None => self.step_rk4(x, dt, scratch),
        }
    }

    fn step_rk4(&self, x: &mut [f64], dt: f64, s: &mut Scratch) {
        let n = self.dim;
        self.eval_field(x, &mut s.k1);
        for i in 0..n {
            s.tmp[i] = x[i] + 0.5 * dt * s.k1[i];
        }
        self.eval_field(&s.tmp, &mut s.k2);
        for i in 0..n {
            s.tmp[i] = x[i] + 0.5 * dt * s.k2[i];
        }
        self.eval_field(&s.tmp, &mut s.k3);
        for i in 0..n {
            s.tmp[i] = x[i] + dt * s.k3[i];
        }
        self.eval_field(&s.tmp, &mut s.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
        }
    }

    fn step_forest_ruth(&self, x: &mut [f64], dt: f64, split: &QpSplit) {
        let theta = fr_theta();
        let c = [theta / 2.0, (1.0 - theta) / 2.0, (1.0 - theta) / 2.0, theta / 2.0];
        let d = [theta, 1.0 - 2.0 * theta, theta];
        for stage in 0..4 {
            for (&qi, &pi) in split.q.iter().zip(&split.p) {
                x[qi] += c[stage] * dt * x[pi];
            }
            if stage < 3 {
                for &pi in &split.p {
                    x[pi] += d[stage] * dt * self.field[pi].eval(x);
                }
            }
        }
    }

    /// Advances `x` by `nsteps` of size `dt`, checking finiteness.
    pub fn integrate(&self, x: &mut [f64], nsteps: usize, dt: f64) -> Result<()> {
        let mut scratch = Scratch::new(self.dim);
        for k in 0..nsteps {
            self.step(x, dt, &mut scratch);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState((k + 1) as f64 * dt));
            }
        }
        Ok(())
    }
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Classical RK4 trajectory of an autonomous polynomial field, sampled
/// every step. The final time is hit exactly by shortening the last step.
pub fn integrate_rk4(
    f: &VectorField,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if dt <= 0.0 {
        return Err(Error::Other("dt must be positive".to_string()));
    }
    let sys = FlowSystem::new(f, None, None)?;
    let mut scratch = Scratch::new(f.dim());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut out = vec![(0.0, x.clone())];
    while t < t_end - 1e-15 * t_end.max(1.0) {
        let step = dt.min(t_end - t);
        sys.step_rk4(&mut x, step, &mut scratch);
        t += step;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t));
        }
        out.push((t, x.clone()));
    }
    Ok(out)
}

/// Forest–Ruth trajectory of a separable Hamiltonian system, sampled every
/// step.
pub fn integrate_forest_ruth(
    f: &VectorField,
    split: QpSplit,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if dt <= 0.0 {
        return Err(Error::Other("dt must be positive".to_string()));
    }
    let sys = FlowSystem::new(f, Some(split), None)?;
    let mut x = x0.to_vec();
    let nsteps = (t_end / dt).round().max(1.0) as usize;
    let step = t_end / nsteps as f64;
    let mut out = Vec::with_capacity(nsteps + 1);
    out.push((0.0, x.clone()));
    let mut scratch = Scratch::new(f.dim());
    for k in 0..nsteps {
        sys.step(&mut x, step, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState((k + 1) as f64 * step));
        }
        out.push(((k + 1) as f64 * step, x.clone()));
    }
    Ok(out)
}

/// Hénon–Heiles energy `H = (x₁²+x₂²+x₃²+x₄²)/2 + x₁²x₂ − x₂³/3`.
fn hh_energy(x1: f64, x2: f64) -> f64 {
    0.5 * (x1 * x1 + x2 * x2) + x1 * x1 * x2 - x2 * x2 * x2 / 3.0
}

/// Completes `(x₁, ?, 0, 0)` on the energy level `H = E`: solves the cubic
/// for `x₂`, keeps real roots inside the bounded region `x₁² + x₂² < 1`,
/// and breaks ties by smallest `|x₂|`.
pub fn hh_initial_curve(x1: f64, energy: f64) -> Result<[f64; 4]> {
    // −(1/3)w³ + (1/2)w² + x₁²w + (x₁²/2 − E) = 0, made monic:
    let b = -1.5;
    let c = -3.0 * x1 * x1;
    let d = -3.0 * (x1 * x1 / 2.0 - energy);
    let roots = cubic_roots(b, c, d);
    let mut best: Option<f64> = None;
    for w in roots {
        if x1 * x1 + w * w < 1.0 {
            match best {
                Some(prev) if w.abs() >= prev.abs() => {}
                _ => best = Some(w),
            }
        }
    }
    let mut w = best.ok_or(Error::NoAdmissibleRoot(x1))?;
    // Newton polish on H(x₁, w) − E (skipped near critical points).
    for _ in 0..4 {
        let g = hh_energy(x1, w) - energy;
        let dg = w + x1 * x1 - w * w;
        if dg.abs() < 1e-8 || g.abs() < 1e-15 {
            break;
        }
        w -= g / dg;
    }
    if (hh_energy(x1, w) - energy).abs() > 1e-12 {
        return Err(Error::NoAdmissibleRoot(x1));
    }
    Ok([x1, w, 0.0, 0.0])
}

/// Real roots of `w³ + bw² + cw + d`.
fn cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = -4.0 * p * p * p - 27.0 * q * q;
    if disc >= 0.0 && p < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    } else {
        // one real root (Cardano)
        let half_q = q / 2.0;
        let inner = (half_q * half_q + p * p * p / 27.0).max(0.0).sqrt();
        let u = (-half_q + inner).cbrt();
        let v = (-half_q - inner).cbrt();
        vec![u + v + shift]
    }
}

/// Grid of initial conditions on the `(x₃,x₄) = 0`, `H = E` curve:
/// `count` values of `x₁` spanning the admissible range, each completed by
/// [`hh_initial_curve`].
pub fn hh_scan_grid(count: usize, energy: f64) -> Vec<Vec<f64>> {
    // admissible |x1| bound by bisection on root existence
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if hh_initial_curve(mid, energy).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = lo * (1.0 - 1e-9);
    (0..count)
        .filter_map(|k| {
            let x1 = if count == 1 {
                0.0
            } else {
                -a + 2.0 * a * k as f64 / (count - 1) as f64
            };
            hh_initial_curve(x1, energy).ok().map(|x| x.to_vec())
        })
        .collect()
}

/// Scans trajectories for close returns `|x(t) − x₀| < eps` at `t ≥ t_min`,
/// refining each first return by a parabola through the three samples
/// bracketing the discrete distance minimum. Initial conditions that never
/// leave the `eps`-ball (fixed points) or never return are omitted.
pub fn close_return_scan(
    sys: &FlowSystem,
    ics: &[Vec<f64>],
    t_max: f64,
    t_min: f64,
    eps: f64,
    dt: f64,
) -> Result<Vec<Orbit>> {
    if t_min >= t_max {
        return Err(Error::Other("t_min must be below t_max".to_string()));
    }
    let n = sys.dim();
    let nsteps = (t_max / dt).ceil() as usize;
    let mut out = Vec::new();
    let mut scratch = Scratch::new(n);
    for x0 in ics {
        if x0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial condition of length {} for a {}-dimensional system",
                x0.len(),
                n
            )));
        }
        let mut x = x0.clone();
        let mut departed = false;
        let mut dist_prev2 = 0.0;
        let mut dist_prev = 0.0;
        let mut inside_well = false;
        let mut found: Option<(f64, f64)> = None;
        for k in 1..=nsteps {
            sys.step(&mut x, dt, &mut scratch);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState(k as f64 * dt));
            }
            let t = k as f64 * dt;
            let dist = l2_dist(&x, x0);
            if dist >= eps {
                if inside_well {
                    // passed the minimum; refine with the bracketing triple
                    found = Some(parabola_min(t - dt, dt, dist_prev2, dist_prev, dist));
                    break;
                }
                departed = true;
            } else if departed && t >= t_min {
                if inside_well && dist > dist_prev && dist_prev < dist_prev2 {
                    found = Some(parabola_min(t - dt, dt, dist_prev2, dist_prev, dist));
                    break;
                }
                inside_well = true;
            }
            dist_prev2 = dist_prev;
            dist_prev = dist;
        }
        if found.is_none() && inside_well {
            found = Some((nsteps as f64 * dt, dist_prev));
        }
        if let Some((period, residual)) = found {
            out.push(Orbit {
                x0: x0.clone(),
                period,
                residual,
                energy: sys.energy_at(x0),
            });
        }
    }
    Ok(out)
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Vertex of the parabola through `(t−dt, d0)`, `(t, d1)`, `(t+dt, d2)`.
fn parabola_min(t_mid: f64, dt: f64, d0: f64, d1: f64, d2: f64) -> (f64, f64) {
    let denom = d0 - 2.0 * d1 + d2;
    if denom.abs() < 1e-300 {
        return (t_mid, d1);
    }
    let offset = 0.5 * dt * (d0 - d2) / denom;
    let value = d1 - (d0 - d2) * (d0 - d2) / (8.0 * denom);
    (t_mid + offset, value.max(0.0))
}

/// Which parameters the shooting method tunes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShootingSpace {
    /// Tune `(x₁, T)`; `x₂` is re-derived from the energy-curve conditions
    /// each evaluation.
    EnergyCurve { energy: f64 },
    /// Tune the full initial condition and the period.
    FullState,
}

/// Nelder–Mead refinement of a close-return candidate: minimizes the
/// closure residual `|x(T) − x₀|` with a time step near `dt_target` but
/// evenly dividing `T`. Succeeds when the residual drops below `tol`.
pub fn shooting_refine(
    sys: &FlowSystem,
    space: ShootingSpace,
    candidate: &Orbit,
    tol: f64,
    max_evals: usize,
    dt_target: f64,
) -> Result<Orbit> {
    if !candidate.residual.is_finite() {
        return Err(Error::Other("candidate residual is not finite".to_string()));
    }
    let n = sys.dim();
    let params0: Vec<f64> = match space {
        ShootingSpace::EnergyCurve { .. } => vec![candidate.x0[0], candidate.period],
        ShootingSpace::FullState => {
            let mut v = candidate.x0.clone();
            v.push(candidate.period);
            v
        }
    };

    let build_x0 = |params: &[f64]| -> Option<Vec<f64>> {
        match space {
            ShootingSpace::EnergyCurve { energy } => {
                hh_initial_curve(params[0], energy).ok().map(|x| x.to_vec())
            }
            ShootingSpace::FullState => Some(params[..n].to_vec()),
        }
    };
    let objective = |params: &[f64]| -> f64 {
        let period = *params.last().unwrap();
        if period <= 10.0 * dt_target {
            return f64::INFINITY;
        }
        let Some(x0) = build_x0(params) else {
            return f64::INFINITY;
        };
        let nsteps = (period / dt_target).round().max(1.0) as usize;
        let dt = period / nsteps as f64;
        let mut x = x0.clone();
        if sys.integrate(&mut x, nsteps, dt).is_err() {
            return f64::INFINITY;
        }
        l2_dist(&x, &x0)
    };

    // an already-converged candidate is returned unchanged
    let f0 = objective(&params0);
    let (best_params, best_residual, evals) = if f0 < tol {
        (params0, f0, 1)
    } else {
        nelder_mead(&objective, &params0, 1e-3, tol, max_evals)
    };
    let x0 = build_x0(&best_params).ok_or(Error::NoAdmissibleRoot(best_params[0]))?;
    let orbit = Orbit {
        x0: x0.clone(),
        period: *best_params.last().unwrap(),
        residual: best_residual,
        energy: sys.energy_at(&x0),
    };
    if best_residual < tol {
        Ok(orbit)
    } else {
        Err(Error::ShootingStalled {
            residual: best_residual,
            evals,
            best: Box::new(orbit),
        })
    }
}

/// Standard Nelder–Mead: reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5; stops on simplex diameter < 1e−12, objective < `target`,
/// or the evaluation budget.
fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    init_scale: f64,
    target: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const BETA: f64 = 0.5;
    const DELTA: f64 = 0.5;
    const DIAMETER_TOL: f64 = 1e-12;

    let dim = start.len();
    let mut evals = 0usize;
    let eval = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        objective(p)
    };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(dim + 1);
    simplex.push((eval(start, &mut evals), start.to_vec()));
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += init_scale;
        simplex.push((eval(&v, &mut evals), v));
    }

    loop {
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let best = &simplex[0];
        if best.0 < target || evals >= max_evals {
            break;
        }
        let diameter = simplex[1..]
            .iter()
            .map(|(_, v)| {
                v.iter()
                    .zip(&simplex[0].1)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < DIAMETER_TOL {
            break;
        }

        let worst = simplex[dim].0;
        let second_worst = simplex[dim - 1].0;
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(_, v)| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[dim].1)
            .map(|(c, w)| c + ALPHA * (c - w))
            .collect();
        let f_reflect = eval(&reflect, &mut evals);

        if f_reflect < simplex[0].0 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].1)
                .map(|(c, w)| c + GAMMA * ALPHA * (c - w))
                .collect();
            let f_expand = eval(&expand, &mut evals);
            simplex[dim] = if f_expand < f_reflect { (f_expand, expand) } else { (f_reflect, reflect) };
        } else if f_reflect < second_worst {
            simplex[dim] = (f_reflect, reflect);
        } else {
            let (f_pivot, pivot) = if f_reflect < worst { (f_reflect, &reflect) } else { (worst, &simplex[dim].1) };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(pivot)
                .map(|(c, w)| c + BETA * (w - c))
                .collect();
            let f_contract = eval(&contract, &mut evals);
            if f_contract < f_pivot {
                simplex[dim] = (f_contract, contract);
            } else {
                // shrink toward the best vertex
                let best_v = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best_v
                        .iter()
                        .zip(&entry.1)
                        .map(|(b, w)| b + DELTA * (w - b))
                        .collect();
                    *entry = (eval(&v, &mut evals), v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (f_best, best) = simplex.swap_remove(0);
    (best, f_best, evals)
}

/// Measures the leading LE on a periodic orbit: integrates the state with
/// the symplectic stepper (or RK4 when no Hamiltonian split is declared)
/// and the tangent vector with RK4 along it, renormalizing once per period
/// for `align_periods` periods, then reading `μ₁ = (1/T) log|y(T)|` from
/// one further period. The state is restarted from `x₀` each period, so
/// the per-period map on `y` is the orbit's monodromy matrix.
pub fn leading_le(
    sys: &FlowSystem,
    f: &VectorField,
    orbit: &Orbit,
    align_periods: usize,
    dt_target: f64,
    seed: u64,
) -> Result<LeEstimate> {
    if orbit.residual >= LE_RESIDUAL_REQUIRED {
        return Err(Error::OrbitResidualTooLarge {
            residual: orbit.residual,
            required: LE_RESIDUAL_REQUIRED,
        });
    }
    let n = sys.dim();
    let jac: Vec<Vec<CompiledPoly>> = jacobian(f)
        .into_iter()
        .map(|row| row.into_iter().map(|p| p.compile()).collect())
        .collect();
    let period = orbit.period;
    let nsteps = (period / dt_target).round().max(1.0) as usize;
    let dt = period / nsteps as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut y);

    let mut prev_dir = y.clone();
    let mut direction_residual = f64::INFINITY;
    for _ in 0..align_periods {
        integrate_tangent(sys, &jac, &orbit.x0, &mut y, nsteps, dt)?;
        normalize(&mut y);
        direction_residual = dir_distance(&y, &prev_dir);
        prev_dir.copy_from_slice(&y);
    }

    integrate_tangent(sys, &jac, &orbit.x0, &mut y, nsteps, dt)?;
    let growth = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mu1 = growth.ln() / period;
    if !mu1.is_finite() {
        return Err(Error::Other("leading LE is not finite".to_string()));
    }
    Ok(LeEstimate {
        orbit: orbit.clone(),
        mu1,
        align_iterations: align_periods,
        direction_residual,
        converged: direction_residual <= 1e-10,
        seed,
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

fn dir_distance(a: &[f64], b: &[f64]) -> f64 {
    let plus = l2_dist(a, b);
    let minus: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x + y) * (x + y))
        .sum::<f64>()
        .sqrt();
    plus.min(minus)
}

/// Advances `(x, y)` over one period: the state by half-steps of the
/// system stepper so the tangent RK4 has midpoint samples, the tangent by
/// RK4 on `dy/dt = Df(x(t)) y` at the full step size.
fn integrate_tangent(
    sys: &FlowSystem,
    jac: &[Vec<CompiledPoly>],
    x0: &[f64],
    y: &mut [f64],
    nsteps: usize,
    dt: f64,
) -> Result<()> {
    let n = sys.dim();
    let mut x = x0.to_vec();
    let mut scratch = Scratch::new(n);
    let mut j_start = vec![0.0; n * n];
    let mut j_mid = vec![0.0; n * n];
    let mut j_end = vec![0.0; n * n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    eval_jac(jac, &x, &mut j_start);
    for step in 0..nsteps {
        sys.step(&mut x, 0.5 * dt, &mut scratch);
        eval_jac(jac, &x, &mut j_mid);
        sys.step(&mut x, 0.5 * dt, &mut scratch);
        eval_jac(jac, &x, &mut j_end);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState((step + 1) as f64 * dt));
        }

        matvec(&j_start, y, &mut k1, n);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        matvec(&j_mid, &tmp, &mut k2, n);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        matvec(&j_mid, &tmp, &mut k3, n);
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        matvec(&j_end, &tmp, &mut k4, n);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        std::mem::swap(&mut j_start, &mut j_end);
    }
    Ok(())
}

fn eval_jac(jac: &[Vec<CompiledPoly>], x: &[f64], out: &mut [f64]) {
    let n = jac.len();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = jac[i][j].eval(x);
        }
    }
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += m[i * n + j] * v[j];
        }
        out[i] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::state_names;
    use crate::problem::presets;

    fn decay_field() -> VectorField {
        VectorField::new(vec![Polynomial::var(0, 1).neg()], state_names(1)).unwrap()
    }

    fn harmonic() -> (VectorField, QpSplit) {
        // H = (q² + p²)/2: dq/dt = p, dp/dt = −q
        let f = VectorField::new(
            vec![Polynomial::var(1, 2), Polynomial::var(0, 2).neg()],
            state_names(2),
        )
        .unwrap();
        (f, QpSplit { q: vec![0], p: vec![1] })
    }

    #[test]
    fn rk4_exponential_decay() {
        let f = decay_field();
        let traj = integrate_rk4(&f, &[1.0], 1.0, 1e-3).unwrap();
        let (t_end, x_end) = traj.last().unwrap();
        assert!((t_end - 1.0).abs() < 1e-12);
        assert!((x_end[0] - (-1.0f64).exp()).abs() < 1e-9);

        // dx/dt = 0 stays constant
        let zero = VectorField::new(vec![Polynomial::zero(1)], state_names(1)).unwrap();
        let traj = integrate_rk4(&zero, &[0.7], 2.0, 0.1).unwrap();
        assert!(traj.iter().all(|(_, x)| (x[0] - 0.7).abs() < 1e-15));
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let f = decay_field();
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let traj = integrate_rk4(&f, &[1.0], 1.0, dt).unwrap();
            (traj.last().unwrap().1[0] - exact).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((14.0..18.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn forest_ruth_energy_conservation_harmonic() {
        let (f, split) = harmonic();
        let h = Polynomial::parse("0.5x1^2 + 0.5x2^2", &state_names(2)).unwrap();
        let sys = FlowSystem::new(&f, Some(split), Some(&h)).unwrap();
        let mut x = vec![1.0, 0.0];
        let h0 = sys.energy_at(&x).unwrap();
        // 100 periods
        let t = 200.0 * std::f64::consts::PI;
        let dt = 1e-3;
        let nsteps = (t / dt).round() as usize;
        let mut scratch = Scratch::new(2);
        let mut max_drift = 0.0f64;
        for _ in 0..nsteps {
            sys.step(&mut x, dt, &mut scratch);
            max_drift = max_drift.max((sys.energy_at(&x).unwrap() - h0).abs());
        }
        assert!(max_drift <= 1e-10, "energy drift {max_drift:e}");

        // zero initial condition stays fixed
        let mut origin = vec![0.0, 0.0];
        sys.integrate(&mut origin, 100, 1e-2).unwrap();
        assert!(origin.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn henon_heiles_energy_drift_one_period() {
        let (f, split, h) = presets::henon_heiles_hamiltonian();
        let sys = FlowSystem::new(&f, Some(split), Some(&h)).unwrap();
        let x0 = [0.562878385826716, -0.053847890920149, 0.0, 0.0];
        let period: f64 = 6.966517640959103;
        let nsteps = (period / 1e-3).round() as usize;
        let dt = period / nsteps as f64;
        let h0 = sys.energy_at(&x0).unwrap();
        let mut x = x0.to_vec();
        sys.integrate(&mut x, nsteps, dt).unwrap();
        assert!((sys.energy_at(&x).unwrap() - h0).abs() <= 1e-9);
        // and the orbit data closes to scan accuracy
        assert!(l2_dist(&x, &x0) < 1e-3);
    }

    #[test]
    fn separability_validation() {
        // dq/dt must equal the paired momentum
        let bad = VectorField::new(
            vec![Polynomial::var(1, 2).scale(2.0), Polynomial::var(0, 2).neg()],
            state_names(2),
        )
        .unwrap();
        assert!(FlowSystem::new(&bad, Some(QpSplit { q: vec![0], p: vec![1] }), None).is_err());

        // force may not depend on momenta
        let names = state_names(2);
        let bad2 = VectorField::new(
            vec![
                Polynomial::var(1, 2),
                Polynomial::parse("-x1 - x2^2", &names).unwrap(),
            ],
            names.clone(),
        )
        .unwrap();
        assert!(FlowSystem::new(&bad2, Some(QpSplit { q: vec![0], p: vec![1] }), None).is_err());
    }

    #[test]
    fn hh_curve_examples() {
        let x = hh_initial_curve(0.0, 0.0).unwrap();
        assert!(x[1].abs() < 1e-12);

        let x = hh_initial_curve(0.562878385826716, 1.0 / 7.0).unwrap();
        assert!((x[1] + 0.053847890920149).abs() < 1e-9, "x2 = {}", x[1]);

        for x1 in [-0.6, -0.3, 0.0, 0.2, 0.55, 0.65] {
            let x = hh_initial_curve(x1, 1.0 / 7.0).unwrap();
            assert!((hh_energy(x[0], x[1]) - 1.0 / 7.0).abs() <= 1e-12);
            assert!(x[0] * x[0] + x[1] * x[1] < 1.0);
        }
        assert!(hh_initial_curve(0.9, 1.0 / 7.0).is_err());
    }

    #[test]
    fn close_return_finds_harmonic_period() {
        let (f, split) = harmonic();
        let sys = FlowSystem::new(&f, Some(split), None).unwrap();
        let orbits = close_return_scan(&sys, &[vec![1.0, 0.0]], 10.0, 1.0, 1e-3, 1e-3).unwrap();
        assert_eq!(orbits.len(), 1);
        assert!((orbits[0].period - 2.0 * std::f64::consts::PI).abs() < 1e-3);

        // a fixed point never departs, so it is rejected
        let fp = close_return_scan(&sys, &[vec![0.0, 0.0]], 10.0, 1.0, 1e-3, 1e-3).unwrap();
        assert!(fp.is_empty());

        // eps = 0 rejects everything
        let none = close_return_scan(&sys, &[vec![1.0, 0.0]], 10.0, 1.0, 0.0, 1e-3).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn shooting_keeps_exact_orbit() {
        // At dt = 1e-4 the integrated circle closes far below the target,
        // so the start vertex already satisfies the tolerance and the
        // candidate is returned unchanged.
        let (f, split) = harmonic();
        let sys = FlowSystem::new(&f, Some(split), None).unwrap();
        let candidate = Orbit {
            x0: vec![1.0, 0.0],
            period: 2.0 * std::f64::consts::PI,
            residual: 1e-4,
            energy: None,
        };
        let refined =
            shooting_refine(&sys, ShootingSpace::FullState, &candidate, 1e-9, 2000, 1e-4).unwrap();
        assert!(refined.residual < 1e-9);
        assert!((refined.period - 2.0 * std::f64::consts::PI).abs() < 1e-9);
        assert!((refined.x0[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leading_le_stable_focus_and_lorenz_origin() {
        // 2-D contraction: fixed point at 0, exponent −1
        let f = VectorField::new(
            vec![Polynomial::var(0, 2).neg(), Polynomial::var(1, 2).neg()],
            state_names(2),
        )
        .unwrap();
        let sys = FlowSystem::new(&f, None, None).unwrap();
        let orbit = Orbit { x0: vec![0.0, 0.0], period: 0.8, residual: 0.0, energy: None };
        let est = leading_le(&sys, &f, &orbit, 5, 1e-3, 0).unwrap();
        assert!((est.mu1 + 1.0).abs() < 1e-6, "mu1 = {}", est.mu1);

        // Lorenz origin as a degenerate orbit reproduces the fixed-point LE
        let lorenz = presets::lorenz_field();
        let sys = FlowSystem::new(&lorenz, None, None).unwrap();
        let orbit = Orbit { x0: vec![0.0; 3], period: 1.0, residual: 0.0, energy: None };
        let est = leading_le(&sys, &lorenz, &orbit, DEFAULT_ALIGN_PERIODS, 1e-3, 0).unwrap();
        assert!((est.mu1 - 11.82772).abs() < 1e-5, "mu1 = {}", est.mu1);
        assert!(est.converged);

        // residual precondition
        let bad = Orbit { x0: vec![0.0; 3], period: 1.0, residual: 1e-3, energy: None };
        assert!(leading_le(&sys, &lorenz, &bad, 3, 1e-3, 0).is_err());
    }
}
