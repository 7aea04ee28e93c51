//! C ABI for the pendulum MPC controller, the simulation plant and a few
//! numerical building blocks.
//!
//! Every function returns a [`GnrkStatus`]; on failure a message is kept per
//! thread and can be read with [`gnrk_last_error_message`]. Handles are
//! opaque and must be released with the matching `*_free` function.
//! Matrices are dense and row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gnrk::bench::Plant;
use gnrk::butcher::ButcherTableau;
use gnrk::controller::{build_pendulum_ocp, GridKind, PendulumMpcConfig};
use gnrk::ocp::{solve_dare, CostDiscretization, DareOptions};
use gnrk::pendulum::{PendulumCostWeights, PendulumParams, NU, NX};
use gnrk::sqp::{SqpMode, SqpOptions, SqpSolver};
use gnrk::Error;
use nalgebra::{DMatrix, DVector};

/// Number of pendulum states `(p, theta, s, omega)`.
pub const GNRK_NX: usize = 4;
/// Number of pendulum controls.
pub const GNRK_NU: usize = 1;

const _: () = assert!(GNRK_NX == NX && GNRK_NU == NU);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnrkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NewtonNonconvergence = 3,
    Singular = 4,
    QpFailure = 5,
    MaxIterations = 6,
    NonFinite = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnrkCost {
    /// Cost evaluated at the shooting nodes.
    ShootingNode = 0,
    /// Cost integrated with the Runge-Kutta scheme (GNRK).
    RungeKutta = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnrkGrid {
    Uniform = 0,
    /// First interval equal to the sampling time, the rest split equally.
    Nonuniform = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnrkAlgorithm {
    /// Full-step SQP iterated to convergence.
    Sqp = 0,
    /// One real-time iteration per call.
    Rti = 1,
}

/// Controller configuration; fill with [`gnrk_controller_config_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GnrkControllerConfig {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub q_diag: [f64; 4],
    pub r: f64,
    pub gamma: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub u_max: f64,
    pub n_intervals: usize,
    pub horizon: f64,
    pub grid: GnrkGrid,
    pub ts: f64,
    pub n_stages: usize,
    pub n_steps: usize,
    pub newton_tol: f64,
    pub cost: GnrkCost,
    pub algorithm: GnrkAlgorithm,
    pub sqp_tol: f64,
    pub sqp_max_iter: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for GnrkControllerConfig {
    fn default() -> Self {
        let mpc = PendulumMpcConfig::default();
        let sqp = SqpOptions::default();
        Self {
            cart_mass: mpc.params.cart_mass,
            pole_mass: mpc.params.pole_mass,
            length: mpc.params.length,
            gravity: mpc.params.gravity,
            q_diag: mpc.weights.q_diag,
            r: mpc.weights.r,
            gamma: mpc.weights.gamma,
            p_min: mpc.weights.p_min,
            p_max: mpc.weights.p_max,
            u_max: mpc.u_max,
            n_intervals: mpc.n_intervals,
            horizon: mpc.horizon,
            grid: GnrkGrid::Nonuniform,
            ts: mpc.ts,
            n_stages: mpc.n_stages,
            n_steps: mpc.n_steps,
            newton_tol: mpc.newton_tol,
            cost: GnrkCost::RungeKutta,
            algorithm: GnrkAlgorithm::Rti,
            sqp_tol: sqp.tol_stationarity,
            sqp_max_iter: sqp.max_iter,
            qp_tol: sqp.qp_tol,
            qp_max_iter: sqp.qp_max_iter,
        }
    }
}

impl GnrkControllerConfig {
    fn params(&self) -> PendulumParams {
        PendulumParams {
            cart_mass: self.cart_mass,
            pole_mass: self.pole_mass,
            length: self.length,
            gravity: self.gravity,
        }
    }

    fn weights(&self) -> PendulumCostWeights {
        PendulumCostWeights {
            q_diag: self.q_diag,
            r: self.r,
            gamma: self.gamma,
            p_min: self.p_min,
            p_max: self.p_max,
        }
    }

    fn mpc(&self) -> PendulumMpcConfig {
        PendulumMpcConfig {
            params: self.params(),
            weights: self.weights(),
            u_max: self.u_max,
            n_intervals: self.n_intervals,
            horizon: self.horizon,
            grid: match self.grid {
                GnrkGrid::Uniform => GridKind::Uniform,
                GnrkGrid::Nonuniform => GridKind::Nonuniform,
            },
            ts: self.ts,
            n_stages: self.n_stages,
            n_steps: self.n_steps,
            newton_tol: self.newton_tol,
            discretization: match self.cost {
                GnrkCost::ShootingNode => CostDiscretization::ShootingNode,
                GnrkCost::RungeKutta => CostDiscretization::RungeKutta,
            },
        }
    }

    fn sqp(&self) -> SqpOptions {
        SqpOptions {
            mode: match self.algorithm {
                GnrkAlgorithm::Sqp => SqpMode::Converged,
                GnrkAlgorithm::Rti => SqpMode::Rti,
            },
            tol_stationarity: self.sqp_tol,
            max_iter: self.sqp_max_iter,
            qp_tol: self.qp_tol,
            qp_max_iter: self.qp_max_iter,
        }
    }
}

/// Statistics of one controller call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GnrkSolveInfo {
    pub iterations: usize,
    /// 1 when converged SQP met its tolerance or an RTI step was taken,
    /// 0 when the SQP iteration cap was hit.
    pub converged: i32,
    /// NLP objective at the last linearization point.
    pub objective: f64,
    pub preparation_ms: f64,
    pub feedback_ms: f64,
}

/// Opaque MPC controller.
pub struct GnrkController {
    solver: SqpSolver,
}

/// Opaque simulation plant.
pub struct GnrkPlant {
    plant: Plant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> GnrkStatus {
    match e.root() {
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::NotPositiveDefinite
        | Error::Config(_)
        | Error::Io(_) => GnrkStatus::InvalidArgument,
        Error::NewtonNonConvergence { .. } => GnrkStatus::NewtonNonconvergence,
        Error::SingularStageJacobian => GnrkStatus::Singular,
        Error::NonConvexBlock { .. } | Error::QpMaxIterations { .. } => GnrkStatus::QpFailure,
        Error::DareNonConvergence { .. } => GnrkStatus::MaxIterations,
        Error::NonFinite(_) => GnrkStatus::NonFinite,
        Error::Stage { .. } | Error::Sqp { .. } | Error::ClosedLoop { .. } => unreachable!("root strips context"),
    }
}

/// Runs `f` behind a panic guard and records the error message.
fn guard(f: impl FnOnce() -> Result<(), (GnrkStatus, String)>) -> GnrkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnrkStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside the gnrk library".into());
            GnrkStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GnrkStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (GnrkStatus, String) {
    (GnrkStatus::NullPointer, format!("{name} is NULL"))
}

fn invalid(msg: &str) -> (GnrkStatus, String) {
    (GnrkStatus::InvalidArgument, msg.to_owned())
}

/// Borrows `len` values from a C array.
///
/// # Safety
/// `ptr` must be NULL or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], (GnrkStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be NULL or valid for `len` writes.
unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], (GnrkStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn finite(v: &[f64], name: &str) -> Result<(), (GnrkStatus, String)> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err((GnrkStatus::NonFinite, format!("{name} contains a non-finite value")))
    }
}

/// Short static description of a status code.
#[no_mangle]
pub extern "C" fn gnrk_status_str(status: GnrkStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        GnrkStatus::Ok => b"ok\0",
        GnrkStatus::NullPointer => b"null pointer\0",
        GnrkStatus::InvalidArgument => b"invalid argument\0",
        GnrkStatus::NewtonNonconvergence => b"stage Newton iteration did not converge\0",
        GnrkStatus::Singular => b"singular stage Jacobian\0",
        GnrkStatus::QpFailure => b"QP solver failure\0",
        GnrkStatus::MaxIterations => b"iteration limit reached\0",
        GnrkStatus::NonFinite => b"non-finite value\0",
        GnrkStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// without the terminator, or 0 when no error was recorded.
///
/// # Safety
/// `buf` must be NULL or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gnrk_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Writes the default configuration into `out`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn gnrk_controller_config_default(out: *mut GnrkControllerConfig) -> GnrkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(GnrkControllerConfig::default());
        Ok(())
    })
}

/// Builds a controller cold-started at `x_init` (length [`GNRK_NX`]).
///
/// # Safety
/// `config` must point to a valid config, `x_init` to `GNRK_NX` values and
/// `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gnrk_controller_new(
    config: *const GnrkControllerConfig,
    x_init: *const f64,
    out: *mut *mut GnrkController,
) -> GnrkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(std::ptr::null_mut());
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let x = slice(x_init, NX, "x_init")?;
        finite(x, "x_init")?;
        let options = config.sqp();
        options.validate().map_err(lib_err)?;
        let ocp = build_pendulum_ocp(&config.mpc()).map_err(lib_err)?;
        let solver = SqpSolver::new(ocp, options, &DVector::from_row_slice(x)).map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(GnrkController { solver })));
        Ok(())
    })
}

/// Computes the control for the measured state `x0` (length [`GNRK_NX`])
/// and writes it to `u_out` (length [`GNRK_NU`]). The controller keeps its
/// iterate between calls. `info` may be NULL.
///
/// # Safety
/// `ctrl` must come from [`gnrk_controller_new`]; the arrays must have the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gnrk_controller_solve(
    ctrl: *mut GnrkController,
    x0: *const f64,
    u_out: *mut f64,
    info: *mut GnrkSolveInfo,
) -> GnrkStatus {
    guard(|| {
        let ctrl = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        let x = slice(x0, NX, "x0")?;
        let u = slice_mut(u_out, NU, "u_out")?;
        finite(x, "x0")?;
        let stats = ctrl.solver.solve(&DVector::from_row_slice(x)).map_err(lib_err)?;
        u.copy_from_slice(ctrl.solver.first_control().as_slice());
        if let Some(info) = info.as_mut() {
            *info = GnrkSolveInfo {
                iterations: stats.iterations,
                converged: i32::from(stats.converged()),
                objective: stats.objective,
                preparation_ms: stats.preparation.as_secs_f64() * 1e3,
                feedback_ms: stats.feedback.as_secs_f64() * 1e3,
            };
        }
        Ok(())
    })
}

/// Discards the iterate and cold-starts from `x_init`.
///
/// # Safety
/// `ctrl` must come from [`gnrk_controller_new`]; `x_init` must hold
/// `GNRK_NX` values.
#[no_mangle]
pub unsafe extern "C" fn gnrk_controller_reset(ctrl: *mut GnrkController, x_init: *const f64) -> GnrkStatus {
    guard(|| {
        let ctrl = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        let x = slice(x_init, NX, "x_init")?;
        finite(x, "x_init")?;
        ctrl.solver.reset(&DVector::from_row_slice(x));
        Ok(())
    })
}

/// Releases a controller. NULL is ignored.
///
/// # Safety
/// `ctrl` must be NULL or come from [`gnrk_controller_new`] and not have
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn gnrk_controller_free(ctrl: *mut GnrkController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Builds the simulation plant for the model and cost weights in `config`,
/// integrating one sampling period `config.ts` with `n_stages` Radau IIA
/// stages.
///
/// # Safety
/// `config` must point to a valid config and `out` to writable storage for
/// one handle.
#[no_mangle]
pub unsafe extern "C" fn gnrk_plant_new(
    config: *const GnrkControllerConfig,
    n_stages: usize,
    out: *mut *mut GnrkPlant,
) -> GnrkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(std::ptr::null_mut());
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let plant = Plant::new(
            config.params(),
            &config.weights(),
            n_stages,
            1,
            config.newton_tol,
            config.ts,
        )
        .map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(GnrkPlant { plant })));
        Ok(())
    })
}

/// Advances `x` (length [`GNRK_NX`]) by one sampling period under the
/// constant controls `u`. Writes the next state and, when `cost` is not
/// NULL, the cost accumulated over the period.
///
/// # Safety
/// `plant` must come from [`gnrk_plant_new`]; the arrays must have the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gnrk_plant_step(
    plant: *mut GnrkPlant,
    x: *const f64,
    u: *const f64,
    x_next: *mut f64,
    cost: *mut f64,
) -> GnrkStatus {
    guard(|| {
        let plant = plant.as_mut().ok_or_else(|| null("plant"))?;
        let xs = slice(x, NX, "x")?;
        let us = slice(u, NU, "u")?;
        let out = slice_mut(x_next, NX, "x_next")?;
        finite(xs, "x")?;
        finite(us, "u")?;
        let (next, c) = plant
            .plant
            .step(&DVector::from_row_slice(xs), &DVector::from_row_slice(us))
            .map_err(lib_err)?;
        out.copy_from_slice(next.as_slice());
        if let Some(cost) = cost.as_mut() {
            *cost = c;
        }
        Ok(())
    })
}

/// Releases a plant. NULL is ignored.
///
/// # Safety
/// `plant` must be NULL or come from [`gnrk_plant_new`] and not have been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn gnrk_plant_free(plant: *mut GnrkPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Radau IIA tableau with `s` stages: `a` (s x s, row-major), `b` and `c`
/// (length s each).
///
/// # Safety
/// `a` must be valid for `s * s` writes, `b` and `c` for `s` writes each.
#[no_mangle]
pub unsafe extern "C" fn gnrk_radau_iia(s: usize, a: *mut f64, b: *mut f64, c: *mut f64) -> GnrkStatus {
    guard(|| {
        let tab = ButcherTableau::radau_iia(s).map_err(lib_err)?;
        let a_out = slice_mut(a, s * s, "a")?;
        let b_out = slice_mut(b, s, "b")?;
        let c_out = slice_mut(c, s, "c")?;
        a_out.copy_from_slice(tab.a().transpose().as_slice());
        b_out.copy_from_slice(tab.b().as_slice());
        c_out.copy_from_slice(tab.c().as_slice());
        Ok(())
    })
}

/// Solves the discrete algebraic Riccati equation for `a` (nx x nx), `b`
/// (nx x nu), `q` (nx x nx) and `r` (nu x nu), all row-major, writing `P`
/// (nx x nx) to `p_out`.
///
/// # Safety
/// Every pointer must be valid for the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn gnrk_solve_dare(
    nx: usize,
    nu: usize,
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    p_out: *mut f64,
) -> GnrkStatus {
    guard(|| {
        if nx == 0 || nu == 0 {
            return Err(invalid("nx and nu must be >= 1"));
        }
        let a = DMatrix::from_row_slice(nx, nx, slice(a, nx * nx, "a")?);
        let b = DMatrix::from_row_slice(nx, nu, slice(b, nx * nu, "b")?);
        let q = DMatrix::from_row_slice(nx, nx, slice(q, nx * nx, "q")?);
        let r = DMatrix::from_row_slice(nu, nu, slice(r, nu * nu, "r")?);
        for (m, name) in [(&a, "a"), (&b, "b"), (&q, "q"), (&r, "r")] {
            finite(m.as_slice(), name)?;
        }
        let out = slice_mut(p_out, nx * nx, "p_out")?;
        let p = solve_dare(&a, &b, &q, &r, DareOptions::default()).map_err(lib_err)?;
        out.copy_from_slice(p.transpose().as_slice());
        Ok(())
    })
}
