//! Reference checks shared by the integration tests and the acceptance
//! runner. Every check compares the library against an independent oracle
//! (finite differences, closed-form values or a dense active-set QP solve).

#![allow(dead_code)]

use std::f64::consts::PI;

use gnrk::butcher::ButcherTableau;
use gnrk::irk::{sn_cost_terms, IrkIntegrator, IrkSettings};
use gnrk::model::{ExplicitOde, ImplicitOde};
use gnrk::ocp::{QpData, QpStage};
use gnrk::pendulum::{make_pendulum_cost, make_pendulum_model, PendulumCostWeights, PendulumModel, PendulumParams, NU, NX};
use gnrk::qp::{solve_qp, QpOptions};
use gnrk::ResidualCost;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn pendulum() -> (PendulumModel, ResidualCost) {
    let model = make_pendulum_model(PendulumParams::default()).unwrap();
    let cost = make_pendulum_cost(&PendulumCostWeights::default()).unwrap();
    (model, cost)
}

/// Random pendulum state and control. The cart range covers both sides of
/// the position bounds so that the penalty is active in some samples.
pub fn random_point(rng: &mut ChaCha8Rng) -> ([f64; NX], [f64; NU]) {
    let x = [
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-PI..PI),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
    ];
    (x, [rng.gen_range(-40.0..40.0)])
}

/// `xdot = -x`.
pub struct Decay;

impl ExplicitOde for Decay {
    fn nx(&self) -> usize {
        1
    }
    fn nu(&self) -> usize {
        0
    }
    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = -x[0];
    }
    fn rhs_jacobians(&self, _t: f64, _x: &[f64], _u: &[f64], jac_x: &mut DMatrix<f64>, _jac_u: &mut DMatrix<f64>) {
        jac_x[(0, 0)] = -1.0;
    }
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Empirical order of Radau IIA with `s` stages on `xdot = -x`, `x(0) = 1`
/// over `[0, 1]` with 2, 4, 8 and 16 steps.
pub fn radau_order(s: usize) -> f64 {
    let model = ImplicitOde(Decay);
    let steps = [2usize, 4, 8, 16];
    let mut h = Vec::new();
    let mut err = Vec::new();
    for &n in &steps {
        let mut integ = IrkIntegrator::new(IrkSettings::radau(s, n).unwrap(), 1, 0).unwrap();
        let out = integ.integrate(&model, None, 0.0, 1.0, &[1.0], &[]).unwrap();
        h.push(1.0 / n as f64);
        err.push((out.x_next[0] - (-1.0f64).exp()).abs());
    }
    loglog_slope(&h, &err)
}

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn perturbed(w: &[f64], i: usize, d: f64) -> ([f64; NX], [f64; NU]) {
    let mut v = [0.0; NX + NU];
    v.copy_from_slice(w);
    v[i] += d;
    let mut x = [0.0; NX];
    x.copy_from_slice(&v[..NX]);
    (x, [v[NX]])
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Largest relative deviation of the integrator sensitivities from central
/// finite differences over `samples` random points, stage counts 1..=4.
pub fn sensitivity_fd_error(samples: usize, seed: u64) -> f64 {
    let (model, _) = pendulum();
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let s = rng.gen_range(1..=4);
        let dt = rng.gen_range(0.01..0.21);
        let (x, u) = random_point(&mut rng);
        let mut integ = IrkIntegrator::new(IrkSettings::radau(s, 1).unwrap(), NX, NU).unwrap();
        let base = integ.integrate(&model, None, 0.0, dt, &x, &u).unwrap();
        let w: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let mut fd = DMatrix::zeros(NX, NX + NU);
        for i in 0..NX + NU {
            let d = fd_step(w[i]);
            let (xp, up) = perturbed(&w, i, d);
            let (xm, um) = perturbed(&w, i, -d);
            let p = integ.integrate(&model, None, 0.0, dt, &xp, &up).unwrap();
            let m = integ.integrate(&model, None, 0.0, dt, &xm, &um).unwrap();
            fd.set_column(i, &((p.x_next - m.x_next) / (2.0 * d)));
        }
        worst = worst.max(rel_err(base.sens.as_slice(), fd.as_slice()));
    }
    worst
}

/// Largest relative deviation of the GNRK cost gradient from central
/// finite differences of the integrated cost over random `(x, u, dt)`.
pub fn gradient_fd_error(samples: usize, seed: u64) -> f64 {
    let (model, cost) = pendulum();
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let s = rng.gen_range(1..=4);
        let n_steps = rng.gen_range(1..=3);
        let dt = rng.gen_range(0.01..0.21);
        let (x, u) = random_point(&mut rng);
        let mut integ = IrkIntegrator::new(IrkSettings::radau(s, n_steps).unwrap(), NX, NU).unwrap();
        let base = integ.integrate(&model, Some(&cost), 0.0, dt, &x, &u).unwrap();
        let w: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let mut fd = vec![0.0; NX + NU];
        for (i, g) in fd.iter_mut().enumerate() {
            let d = fd_step(w[i]);
            let (xp, up) = perturbed(&w, i, d);
            let (xm, um) = perturbed(&w, i, -d);
            let p = integ.integrate(&model, Some(&cost), 0.0, dt, &xp, &up).unwrap();
            let m = integ.integrate(&model, Some(&cost), 0.0, dt, &xm, &um).unwrap();
            *g = (p.cost - m.cost) / (2.0 * d);
        }
        worst = worst.max(rel_err(base.grad.as_slice(), &fd));
    }
    worst
}

/// Smallest eigenvalue over the GNRK Hessians of `samples` random
/// linearizations with stage counts 1..=4.
pub fn min_gn_eigenvalue(samples: usize, seed: u64) -> f64 {
    let (model, cost) = pendulum();
    let mut rng = rng(seed);
    let mut lowest = f64::INFINITY;
    for _ in 0..samples {
        let s = rng.gen_range(1..=4);
        let dt: f64 = rng.gen_range(0.005..0.21);
        let (x, u) = random_point(&mut rng);
        // substeps of at most 0.05 keep low-order stage equations solvable
        let n_steps = (dt / 0.05).ceil() as usize;
        let mut integ = IrkIntegrator::new(IrkSettings::radau(s, n_steps).unwrap(), NX, NU).unwrap();
        let out = integ.integrate(&model, Some(&cost), 0.0, dt, &x, &u).unwrap();
        lowest = lowest.min(out.hess.symmetric_eigen().eigenvalues.min());
    }
    lowest
}

/// Largest relative deviation between the explicit-Euler GNRK terms and
/// the single-node terms over random samples.
pub fn euler_coincidence_error(samples: usize, seed: u64) -> f64 {
    let (model, cost) = pendulum();
    let mut rng = rng(seed);
    let mut integ = IrkIntegrator::new(IrkSettings::new(ButcherTableau::explicit_euler(), 1), NX, NU).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let dt = rng.gen_range(0.005..0.21);
        let (x, u) = random_point(&mut rng);
        let gnrk = integ.integrate(&model, Some(&cost), 0.0, dt, &x, &u).unwrap();
        let sn = sn_cost_terms(&cost, dt, &x, &u).unwrap();
        worst = worst
            .max(rel_err(&[gnrk.cost], &[sn.cost]))
            .max(rel_err(gnrk.grad.as_slice(), sn.grad.as_slice()))
            .max(rel_err(gnrk.hess.as_slice(), sn.hess.as_slice()));
    }
    worst
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.gen_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

/// Random structured QP with positive definite stage Hessians. Bounds are
/// tight relative to the gradients so that many of them are active; about
/// one in five is infinite.
pub fn random_qp(rng: &mut ChaCha8Rng, bounded: bool) -> (QpData, DVector<f64>) {
    let nx = rng.gen_range(1..=4);
    let nu = rng.gen_range(1..=2);
    let n = rng.gen_range(1..=10);
    let mut qp = QpData::zeros(nx, nu, n);
    qp.x0 = random_vector(rng, nx, 1.0);
    for stage in qp.stages.iter_mut() {
        let g = random_matrix(rng, nx + nu, nx + nu, 1.0);
        let mut hess = g.transpose() * g;
        for i in 0..nx + nu {
            hess[(i, i)] += 0.1;
        }
        let mut a = random_matrix(rng, nx, nx, 0.4);
        for i in 0..nx {
            a[(i, i)] += 0.8;
        }
        let mut u_lo = DVector::from_element(nu, f64::NEG_INFINITY);
        let mut u_hi = DVector::from_element(nu, f64::INFINITY);
        if bounded {
            for i in 0..nu {
                if rng.gen_bool(0.8) {
                    u_lo[i] = rng.gen_range(-1.0..-0.05);
                }
                if rng.gen_bool(0.8) {
                    u_hi[i] = rng.gen_range(0.05..1.0);
                }
            }
        }
        *stage = QpStage {
            hess,
            grad: random_vector(rng, nx + nu, 5.0),
            a,
            b: random_matrix(rng, nx, nu, 1.0),
            c: random_vector(rng, nx, 0.5),
            u_lo,
            u_hi,
        };
    }
    let g = random_matrix(rng, nx, nx, 1.0);
    qp.terminal_hess = g.transpose() * g;
    qp.terminal_grad = random_vector(rng, nx, 5.0);
    let x0_fix = random_vector(rng, nx, 1.0);
    (qp, x0_fix)
}

/// Dense primal active-set solve of the full-space KKT system. Returns the
/// stacked primal `(dx_0, .., dx_N, du_0, .., du_{N-1})`.
pub fn dense_active_set(qp: &QpData, x0_fix: &DVector<f64>) -> DVector<f64> {
    let (nx, nu, n) = (qp.nx(), qp.nu(), qp.n_intervals());
    let nxs = (n + 1) * nx;
    let dim = nxs + n * nu;
    let xi = |k: usize| k * nx;
    let ui = |k: usize| nxs + k * nu;

    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);
    for (k, s) in qp.stages.iter().enumerate() {
        let idx: Vec<usize> = (0..nx).map(|i| xi(k) + i).chain((0..nu).map(|i| ui(k) + i)).collect();
        for (r, &ir) in idx.iter().enumerate() {
            g[ir] += s.grad[r];
            for (c, &ic) in idx.iter().enumerate() {
                h[(ir, ic)] += s.hess[(r, c)];
            }
        }
    }
    for r in 0..nx {
        g[xi(n) + r] += qp.terminal_grad[r];
        for c in 0..nx {
            h[(xi(n) + r, xi(n) + c)] += qp.terminal_hess[(r, c)];
        }
    }

    // Equalities E w = e: initial state and dynamics.
    let n_eq = nxs;
    let mut e_mat = DMatrix::zeros(n_eq, dim);
    let mut e_rhs = DVector::zeros(n_eq);
    for i in 0..nx {
        e_mat[(i, i)] = 1.0;
        e_rhs[i] = x0_fix[i] - qp.x0[i];
    }
    for (k, s) in qp.stages.iter().enumerate() {
        let row = (k + 1) * nx;
        for i in 0..nx {
            e_mat[(row + i, xi(k + 1) + i)] = 1.0;
            for j in 0..nx {
                e_mat[(row + i, xi(k) + j)] = -s.a[(i, j)];
            }
            for j in 0..nu {
                e_mat[(row + i, ui(k) + j)] = -s.b[(i, j)];
            }
            e_rhs[row + i] = s.c[i];
        }
    }

    let lo: Vec<f64> = qp.stages.iter().flat_map(|s| s.u_lo.iter().copied()).collect();
    let hi: Vec<f64> = qp.stages.iter().flat_map(|s| s.u_hi.iter().copied()).collect();

    // Feasible start: controls at the projection of zero, states rolled out.
    let mut w = DVector::zeros(dim);
    for j in 0..n * nu {
        w[nxs + j] = 0.0f64.clamp(lo[j], hi[j]);
    }
    for i in 0..nx {
        w[i] = e_rhs[i];
    }
    for (k, s) in qp.stages.iter().enumerate() {
        let next = &s.a * w.rows(xi(k), nx) + &s.b * w.rows(ui(k), nu) + &s.c;
        w.rows_mut(xi(k + 1), nx).copy_from(&next);
    }

    // Working set: (control index, true for the upper bound).
    let mut active: Vec<(usize, bool)> = Vec::new();
    let scale = h.amax().max(g.amax()).max(1.0);
    for _ in 0..100 * dim {
        let m = n_eq + active.len();
        let mut kkt = DMatrix::zeros(dim + m, dim + m);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
        kkt.view_mut((dim, 0), (n_eq, dim)).copy_from(&e_mat);
        kkt.view_mut((0, dim), (dim, n_eq)).copy_from(&e_mat.transpose());
        for (a, &(j, _)) in active.iter().enumerate() {
            kkt[(dim + n_eq + a, nxs + j)] = 1.0;
            kkt[(nxs + j, dim + n_eq + a)] = 1.0;
        }
        let mut rhs = DVector::zeros(dim + m);
        rhs.rows_mut(0, dim).copy_from(&(-(&h * &w + &g)));
        let sol = kkt.lu().solve(&rhs).expect("KKT matrix of a strictly convex QP is nonsingular");
        let p = sol.rows(0, dim).into_owned();

        if p.amax() <= 1e-13 * scale.max(w.amax()) {
            // Multiplier of a bound row: <= 0 at a lower bound, >= 0 at an upper.
            let worst = active
                .iter()
                .enumerate()
                .map(|(a, &(_, upper))| {
                    let nu_a = sol[dim + n_eq + a];
                    (a, if upper { -nu_a } else { nu_a })
                })
                .filter(|&(_, v)| v > 1e-12 * scale)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            match worst {
                Some((a, _)) => {
                    active.remove(a);
                    continue;
                }
                None => return w,
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for j in 0..n * nu {
            if active.iter().any(|&(k, _)| k == j) {
                continue;
            }
            let (uj, pj) = (w[nxs + j], p[nxs + j]);
            if pj < 0.0 && lo[j].is_finite() {
                let t = (lo[j] - uj) / pj;
                if t < alpha {
                    alpha = t;
                    blocking = Some((j, false));
                }
            } else if pj > 0.0 && hi[j].is_finite() {
                let t = (hi[j] - uj) / pj;
                if t < alpha {
                    alpha = t;
                    blocking = Some((j, true));
                }
            }
        }
        w.axpy(alpha.max(0.0), &p, 1.0);
        if let Some((j, upper)) = blocking {
            w[nxs + j] = if upper { hi[j] } else { lo[j] };
            active.push((j, upper));
        }
    }
    panic!("active-set oracle did not terminate");
}

/// Largest infinity-norm primal deviation between the interior-point solver
/// and the dense oracle over `count` random QPs.
pub fn qp_oracle_error(count: usize, seed: u64, bounded: bool) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (qp, x0_fix) = random_qp(&mut rng, bounded);
        let sol = solve_qp(&qp, &x0_fix, QpOptions::default()).unwrap();
        let reference = dense_active_set(&qp, &x0_fix);
        let (nx, nu, n) = (qp.nx(), qp.nu(), qp.n_intervals());
        let nxs = (n + 1) * nx;
        for k in 0..=n {
            let d = &sol.dx[k] - reference.rows(k * nx, nx);
            worst = worst.max(d.amax());
        }
        for k in 0..n {
            let d = &sol.du[k] - reference.rows(nxs + k * nu, nu);
            worst = worst.max(d.amax());
        }
    }
    worst
}
