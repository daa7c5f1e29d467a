//! Newton-Raphson AC power flow in rectangular coordinates with a
//! current-injection (KCL) formulation, and the linear model at the solution.
//!
//! Unknowns are interleaved bus voltages `[V1r, V1i, ..., Vnr, Vni]` followed
//! by one reactive-power variable per PV bus. Rows `2k, 2k+1` hold the real
//! and imaginary KCL residual of bus `k`, except at the slack bus where they
//! pin `Vr, Vi` to the source phasor. Row `2n + p` holds the voltage
//! magnitude constraint `Vr² + Vi² = v_set²` of the `p`-th PV bus.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::case::{BusKind, GridCase, LoadModel};
use crate::error::{Error, Result};
use crate::linalg::{Factorization, SparseMatrix};
use crate::ybus::{build_ybus, AdmittanceMatrix};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 25;
const MAX_Q_LIMIT_ROUNDS: usize = 5;
const DIVERGENCE_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Convert PV buses whose generator reactive output leaves `[q_min,
    /// q_max]` to PQ buses at the limit and re-solve.
    pub enforce_q_limits: bool,
    /// Start from the case file voltages instead of a flat start.
    pub warm_start: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            enforce_q_limits: false,
            warm_start: false,
        }
    }
}

/// Interleaved rectangular bus voltages `[V1r, V1i, ..., Vnr, Vni]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoltageState(Vec<f64>);

impl VoltageState {
    pub fn from_interleaved(values: Vec<f64>) -> Self {
        assert!(values.len() % 2 == 0, "interleaved state has odd length");
        VoltageState(values)
    }

    pub fn from_phasors(v: &[Complex64]) -> Self {
        VoltageState(v.iter().flat_map(|c| [c.re, c.im]).collect())
    }

    pub fn n(&self) -> usize {
        self.0.len() / 2
    }

    pub fn phasor(&self, bus: usize) -> Complex64 {
        Complex64::new(self.0[2 * bus], self.0[2 * bus + 1])
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        (0..self.n()).map(|k| self.phasor(k)).collect()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.phasor(k).norm()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Real and reactive power entering a branch at each terminal, p.u.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BranchFlow {
    pub p_fr: f64,
    pub q_fr: f64,
    pub p_to: f64,
    pub q_to: f64,
}

/// Current flowing from each terminal bus into a branch, including its
/// charging and tap, as `[I_fr_re, I_fr_im, I_to_re, I_to_im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchTerminalCurrents {
    pub branch: usize,
    pub values: [f64; 4],
}

impl BranchTerminalCurrents {
    pub fn from_side(&self) -> Complex64 {
        Complex64::new(self.values[0], self.values[1])
    }

    pub fn to_side(&self) -> Complex64 {
        Complex64::new(self.values[2], self.values[3])
    }
}

/// Per-bus device data in the form the Newton equations use.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    /// Effective bus kinds after PV buses without generators or with bound
    /// reactive limits have become PQ.
    pub kinds: Vec<BusKind>,
    /// Constant-power net injection (generation minus constant-power load).
    /// For PV buses only the real part is fixed.
    pub s_const: Vec<Complex64>,
    /// Constant-current net injection (minus constant-current load).
    pub i_const: Vec<Complex64>,
    /// Voltage magnitude setpoint of PV and slack buses.
    pub v_set: Vec<f64>,
    /// Constant-power reactive load, used to recover generator output.
    pub q_load_const: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub slack: usize,
    pub slack_voltage: Complex64,
    /// PV buses in augmented-variable order.
    pub pv: Vec<usize>,
}

impl DeviceModel {
    pub fn from_case(case: &GridCase) -> Self {
        let n = case.n();
        let mut p_gen = vec![0.0; n];
        let mut q_min = vec![0.0; n];
        let mut q_max = vec![0.0; n];
        let mut v_gen: Vec<Option<f64>> = vec![None; n];
        for g in &case.generators {
            let k = case.idx(g.bus);
            p_gen[k] += g.p_set;
            q_min[k] += g.q_min;
            q_max[k] += g.q_max;
            v_gen[k].get_or_insert(g.v_set);
        }
        let mut kinds = Vec::with_capacity(n);
        let mut s_const = Vec::with_capacity(n);
        let mut i_const = Vec::with_capacity(n);
        let mut v_set = Vec::with_capacity(n);
        let mut q_load_const = Vec::with_capacity(n);
        for (k, bus) in case.buses.iter().enumerate() {
            let kind = match bus.kind {
                BusKind::PV if v_gen[k].is_none() => BusKind::PQ,
                other => other,
            };
            kinds.push(kind);
            let load = Complex64::new(bus.p_load, bus.q_load);
            let gen = Complex64::new(p_gen[k], 0.0);
            match bus.load_model {
                LoadModel::ConstantPower => {
                    s_const.push(gen - load);
                    i_const.push(Complex64::default());
                    q_load_const.push(bus.q_load);
                }
                LoadModel::ConstantCurrent => {
                    s_const.push(gen);
                    i_const.push(-load.conj());
                    q_load_const.push(0.0);
                }
            }
            v_set.push(v_gen[k].unwrap_or(bus.v_init));
        }
        let slack = case.slack_index();
        let slack_voltage = Complex64::from_polar(v_set[slack], case.buses[slack].theta_init);
        let pv = (0..n).filter(|&k| kinds[k] == BusKind::PV).collect();
        DeviceModel {
            kinds,
            s_const,
            i_const,
            v_set,
            q_load_const,
            q_min,
            q_max,
            slack,
            slack_voltage,
            pv,
        }
    }

    pub fn n(&self) -> usize {
        self.kinds.len()
    }

    /// Length of the Newton state: `2n` voltages plus one variable per PV bus.
    pub fn dim(&self) -> usize {
        2 * self.n() + self.pv.len()
    }

    fn bus_power(&self, k: usize, x: &[f64]) -> Complex64 {
        match self.pv.iter().position(|&b| b == k) {
            Some(p) => Complex64::new(self.s_const[k].re, x[2 * self.n() + p]),
            None => self.s_const[k],
        }
    }

    /// Current injected into the network by the devices at bus `k`.
    fn device_current(&self, k: usize, v: Complex64, s: Complex64) -> Complex64 {
        (s / v).conj() + self.i_const[k]
    }
}

/// Derivatives of the constant-power device current `I = conj(S/V)` with
/// respect to `(Vr, Vi)`: `[[dIr/dVr, dIr/dVi], [dIi/dVr, dIi/dVi]]`.
pub fn constant_power_current_jacobian(s: Complex64, v: Complex64) -> [[f64; 2]; 2] {
    let w = -s.conj() / (v.conj() * v.conj());
    [[w.re, w.im], [w.im, -w.re]]
}

/// Newton residual `F(x)` of the current-injection equations.
pub fn residual(ybus: &AdmittanceMatrix, model: &DeviceModel, x: &[f64]) -> Vec<f64> {
    let n = model.n();
    let v: Vec<Complex64> = (0..n).map(|k| Complex64::new(x[2 * k], x[2 * k + 1])).collect();
    let i_net = ybus.mul(&v);
    let mut f = vec![0.0; model.dim()];
    for k in 0..n {
        if k == model.slack {
            f[2 * k] = v[k].re - model.slack_voltage.re;
            f[2 * k + 1] = v[k].im - model.slack_voltage.im;
        } else {
            let mis = i_net[k] - model.device_current(k, v[k], model.bus_power(k, x));
            f[2 * k] = mis.re;
            f[2 * k + 1] = mis.im;
        }
    }
    for (p, &k) in model.pv.iter().enumerate() {
        f[2 * n + p] = v[k].norm_sqr() - model.v_set[k] * model.v_set[k];
    }
    f
}

fn network_triplets(ybus: &AdmittanceMatrix, slack: usize, out: &mut Vec<(usize, usize, f64)>) {
    for k in 0..ybus.n() {
        if k == slack {
            out.push((2 * k, 2 * k, 1.0));
            out.push((2 * k + 1, 2 * k + 1, 1.0));
            continue;
        }
        for (j, y) in ybus.row(k) {
            out.push((2 * k, 2 * j, y.re));
            out.push((2 * k, 2 * j + 1, -y.im));
            out.push((2 * k + 1, 2 * j, y.im));
            out.push((2 * k + 1, 2 * j + 1, y.re));
        }
    }
}

/// Newton matrix `dF/dx`: network stamps, constant-power device stamps, PV
/// reactive-power columns and magnitude rows, slack pin rows.
pub fn jacobian(ybus: &AdmittanceMatrix, model: &DeviceModel, x: &[f64]) -> SparseMatrix {
    let n = model.n();
    let mut t = Vec::with_capacity(16 * n);
    network_triplets(ybus, model.slack, &mut t);
    for k in 0..n {
        if k == model.slack {
            continue;
        }
        let v = Complex64::new(x[2 * k], x[2 * k + 1]);
        let s = model.bus_power(k, x);
        if s != Complex64::default() {
            let d = constant_power_current_jacobian(s, v);
            t.push((2 * k, 2 * k, -d[0][0]));
            t.push((2 * k, 2 * k + 1, -d[0][1]));
            t.push((2 * k + 1, 2 * k, -d[1][0]));
            t.push((2 * k + 1, 2 * k + 1, -d[1][1]));
        }
    }
    for (p, &k) in model.pv.iter().enumerate() {
        let v = Complex64::new(x[2 * k], x[2 * k + 1]);
        // F = YV - conj((P + jQ)/V): dF/dQ = j / conj(V)
        let u = Complex64::new(0.0, 1.0) / v.conj();
        t.push((2 * k, 2 * n + p, u.re));
        t.push((2 * k + 1, 2 * n + p, u.im));
        t.push((2 * n + p, 2 * k, 2.0 * v.re));
        t.push((2 * n + p, 2 * k + 1, 2.0 * v.im));
    }
    SparseMatrix::from_triplets(model.dim(), t)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub case: Arc<GridCase>,
    pub ybus: Arc<AdmittanceMatrix>,
    pub model: DeviceModel,
    pub voltage: VoltageState,
    /// Full Newton state (voltages then PV reactive powers).
    pub state: Vec<f64>,
    /// Newton updates summed over all Q-limit rounds.
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Net complex power injected into the network at each bus, p.u.
    pub injections: Vec<Complex64>,
    pub flows: Vec<BranchFlow>,
    /// PV buses converted to PQ by reactive limits, as bus positions.
    pub q_limited: Vec<usize>,
}

impl PowerFlowSolution {
    pub fn n(&self) -> usize {
        self.case.n()
    }

    pub fn phasor(&self, bus: usize) -> Complex64 {
        self.voltage.phasor(bus)
    }

    /// Active power produced by generation at each bus.
    pub fn generation(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.injections[k].re + self.load(k).re).collect()
    }

    /// Complex power drawn by the load at bus `k` at the solved voltage.
    pub fn load(&self, k: usize) -> Complex64 {
        let bus = &self.case.buses[k];
        let s = Complex64::new(bus.p_load, bus.q_load);
        match bus.load_model {
            LoadModel::ConstantPower => s,
            LoadModel::ConstantCurrent => self.phasor(k) * s,
        }
    }

    /// Series losses `Σ Re(S_fr + S_to)` over closed branches.
    pub fn branch_losses(&self) -> f64 {
        self.flows.iter().map(|f| f.p_fr + f.p_to).sum()
    }

    /// Power consumed by bus shunt conductances.
    pub fn shunt_losses(&self) -> f64 {
        self.case
            .buses
            .iter()
            .enumerate()
            .map(|(k, b)| b.g_shunt * self.phasor(k).norm_sqr())
            .sum()
    }

    /// `Σ generation − Σ load − losses`; zero up to solver tolerance.
    pub fn power_balance_error(&self) -> f64 {
        let gen: f64 = self.generation().iter().sum();
        let load: f64 = (0..self.n()).map(|k| self.load(k).re).sum();
        gen - load - self.branch_losses() - self.shunt_losses()
    }

    /// Recomputed Newton residual norm at the stored state.
    pub fn mismatch(&self) -> f64 {
        inf_norm(&residual(&self.ybus, &self.model, &self.state))
    }
}

/// Solves the AC power flow from a flat start (or the file voltages when
/// `opts.warm_start`).
pub fn solve_ac_powerflow(case: &GridCase, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    let start: Vec<Complex64> = if opts.warm_start {
        case.buses
            .iter()
            .map(|b| Complex64::from_polar(b.v_init, b.theta_init))
            .collect()
    } else {
        vec![Complex64::new(1.0, 0.0); case.n()]
    };
    solve_from(case, opts, &start)
}

/// Solves the AC power flow starting from the given bus voltages. PV bus
/// magnitudes are reset to their setpoints and the slack to its source.
pub fn solve_from(case: &GridCase, opts: &PowerFlowOptions, start: &[Complex64]) -> Result<PowerFlowSolution> {
    if start.len() != case.n() {
        return Err(Error::InvalidArgument(format!(
            "start vector has {} entries for {} buses",
            start.len(),
            case.n()
        )));
    }
    let case = Arc::new(case.clone());
    let ybus = Arc::new(build_ybus(&case));
    let mut model = DeviceModel::from_case(&case);
    let mut v0 = start.to_vec();
    let mut total_iter = 0;
    let mut q_limited = Vec::new();

    for round in 0..=MAX_Q_LIMIT_ROUNDS {
        let x0 = initial_state(&ybus, &model, &v0);
        let (x, iters, mismatch) = newton(&ybus, &model, x0, opts)?;
        total_iter += iters;
        let n = model.n();
        let converted = if opts.enforce_q_limits && round < MAX_Q_LIMIT_ROUNDS {
            clamp_q_limits(&mut model, &x)
        } else {
            Vec::new()
        };
        if converted.is_empty() {
            let voltage = VoltageState::from_interleaved(x[..2 * n].to_vec());
            let v = voltage.phasors();
            let i_net = ybus.mul(&v);
            let injections = v.iter().zip(&i_net).map(|(v, i)| v * i.conj()).collect();
            let flows = compute_flows(&ybus, &v);
            return Ok(PowerFlowSolution {
                case,
                ybus,
                model,
                voltage,
                state: x,
                iterations: total_iter,
                max_mismatch: mismatch,
                injections,
                flows,
                q_limited,
            });
        }
        q_limited.extend(converted);
        v0 = (0..n).map(|k| Complex64::new(x[2 * k], x[2 * k + 1])).collect();
    }
    unreachable!("the last Q-limit round never converts buses")
}

fn initial_state(ybus: &AdmittanceMatrix, model: &DeviceModel, v0: &[Complex64]) -> Vec<f64> {
    let n = model.n();
    let mut v = v0.to_vec();
    for k in 0..n {
        if k == model.slack {
            v[k] = model.slack_voltage;
        } else if model.kinds[k] == BusKind::PV {
            let ang = if v[k].norm() > 0.0 { v[k].arg() } else { 0.0 };
            v[k] = Complex64::from_polar(model.v_set[k], ang);
        }
    }
    let i_net = ybus.mul(&v);
    let mut x: Vec<f64> = v.iter().flat_map(|c| [c.re, c.im]).collect();
    for &k in &model.pv {
        // reactive power that balances the network at the starting point
        let s = v[k] * (i_net[k] - model.i_const[k]).conj();
        x.push(s.im);
    }
    x
}

fn newton(
    ybus: &AdmittanceMatrix,
    model: &DeviceModel,
    mut x: Vec<f64>,
    opts: &PowerFlowOptions,
) -> Result<(Vec<f64>, usize, f64)> {
    let mut f = residual(ybus, model, &x);
    let mut mismatch = inf_norm(&f);
    let mut growth = 0;
    for it in 1..=opts.max_iter {
        let jac = jacobian(ybus, model, &x);
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = jac
            .factorize()
            .and_then(|lu| lu.solve(&neg_f))
            .map_err(|e| Error::Singular(format!("Newton matrix at iteration {it}: {e} (islanded or degenerate case?)")))?;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        f = residual(ybus, model, &x);
        let next = inf_norm(&f);
        if !next.is_finite() {
            return Err(Error::Diverged { iteration: it, mismatch: next });
        }
        if next <= opts.tol {
            return Ok((x, it, next));
        }
        growth = if next > mismatch { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_STREAK {
            return Err(Error::Diverged { iteration: it, mismatch: next });
        }
        mismatch = next;
    }
    Err(Error::MaxIterations { max_iter: opts.max_iter, mismatch })
}

/// Converts PV buses violating reactive limits into PQ buses held at the
/// violated limit. Returns the converted buses.
fn clamp_q_limits(model: &mut DeviceModel, x: &[f64]) -> Vec<usize> {
    let n = model.n();
    let mut converted = Vec::new();
    for (p, &k) in model.pv.iter().enumerate() {
        let q_gen = x[2 * n + p] + model.q_load_const[k];
        let limit = if q_gen > model.q_max[k] {
            Some(model.q_max[k])
        } else if q_gen < model.q_min[k] {
            Some(model.q_min[k])
        } else {
            None
        };
        if let Some(q) = limit {
            model.kinds[k] = BusKind::PQ;
            model.s_const[k].im = q - model.q_load_const[k];
            converted.push(k);
        }
    }
    model.pv.retain(|k| !converted.contains(k));
    converted
}

fn compute_flows(ybus: &AdmittanceMatrix, v: &[Complex64]) -> Vec<BranchFlow> {
    ybus.stamps()
        .iter()
        .map(|stamp| match stamp {
            None => BranchFlow::default(),
            Some(s) => {
                let (i_fr, i_to) = s.currents(v[s.from], v[s.to]);
                let s_fr = v[s.from] * i_fr.conj();
                let s_to = v[s.to] * i_to.conj();
                BranchFlow { p_fr: s_fr.re, q_fr: s_fr.im, p_to: s_to.re, q_to: s_to.im }
            }
        })
        .collect()
}

pub fn branch_terminal_currents(sol: &PowerFlowSolution, branch: usize) -> Result<BranchTerminalCurrents> {
    sol.case.closed_branch(branch)?;
    let s = sol.ybus.stamp(branch).expect("closed branch has a stamp");
    let (i_fr, i_to) = s.currents(sol.phasor(s.from), sol.phasor(s.to));
    Ok(BranchTerminalCurrents {
        branch,
        values: [i_fr.re, i_fr.im, i_to.re, i_to.im],
    })
}

/// `S = V·conj(I)` at both ends of every branch; zero for open branches.
pub fn branch_power_flows(sol: &PowerFlowSolution) -> Vec<BranchFlow> {
    sol.flows.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinearizationMode {
    /// Newton matrix at the solution, including device stamps and PV rows.
    Full,
    /// Network admittances only; devices frozen as current sources.
    Network,
}

impl std::fmt::Display for LinearizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LinearizationMode::Full => "full",
            LinearizationMode::Network => "network",
        })
    }
}

impl std::str::FromStr for LinearizationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LinearizationMode::Full),
            "network" => Ok(LinearizationMode::Network),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// The real linear model `Ŷ x = I` at a converged operating point, factorized
/// once for repeated solves.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub mode: LinearizationMode,
    pub case: Arc<GridCase>,
    pub ybus: Arc<AdmittanceMatrix>,
    pub operating_point: VoltageState,
    /// Operating-point state in this system's variables.
    pub state: Vec<f64>,
    /// Right-hand side satisfied by the operating point (the Newton
    /// companion-model sources, `Ŷx − F(x)`).
    pub rhs: Vec<f64>,
    pub slack: usize,
    /// PV buses owning augmented rows `2n + p`.
    pub pv: Vec<usize>,
    factor: Factorization,
}

impl LinearizedSystem {
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn n(&self) -> usize {
        self.case.n()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        self.factor.matrix()
    }

    /// Row/column pair `(2k, 2k+1)` holding bus `k`.
    pub fn bus_rows(bus: usize) -> (usize, usize) {
        (2 * bus, 2 * bus + 1)
    }

    /// Augmented row/column of a PV bus, if the bus has one.
    pub fn pv_row(&self, bus: usize) -> Option<usize> {
        self.pv.iter().position(|&b| b == bus).map(|p| 2 * self.n() + p)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(rhs)
    }

    /// Right-hand sides solved against the single factorization so far.
    pub fn solve_count(&self) -> usize {
        self.factor.solve_count()
    }

    pub fn solve_many(&self, rhs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.factor.solve_many(rhs)
    }
}

/// The Newton matrix at a converged solution (full mode).
pub fn linearize_at_solution(sol: &PowerFlowSolution) -> Result<LinearizedSystem> {
    linearize(sol, LinearizationMode::Full)
}

pub fn linearize(sol: &PowerFlowSolution, mode: LinearizationMode) -> Result<LinearizedSystem> {
    let (matrix, state, pv) = match mode {
        LinearizationMode::Full => (
            jacobian(&sol.ybus, &sol.model, &sol.state),
            sol.state.clone(),
            sol.model.pv.clone(),
        ),
        LinearizationMode::Network => {
            let mut t = Vec::new();
            network_triplets(&sol.ybus, sol.model.slack, &mut t);
            (
                SparseMatrix::from_triplets(2 * sol.n(), t),
                sol.voltage.as_slice().to_vec(),
                Vec::new(),
            )
        }
    };
    let mut rhs = matrix.mul_vec(&state);
    if mode == LinearizationMode::Full {
        let f = residual(&sol.ybus, &sol.model, &sol.state);
        for (r, fi) in rhs.iter_mut().zip(f) {
            *r -= fi;
        }
    }
    let factor = matrix
        .factorize()
        .map_err(|e| Error::Singular(format!("linearized system: {e}")))?;
    // probe once so a numerically singular matrix fails here, not per outage
    factor
        .solve(&rhs)
        .map_err(|e| Error::Singular(format!("linearized system: {e}")))?;
    Ok(LinearizedSystem {
        mode,
        case: sol.case.clone(),
        ybus: sol.ybus.clone(),
        operating_point: sol.voltage.clone(),
        state,
        rhs,
        slack: sol.model.slack,
        pv,
        factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;

    fn two_bus(p_mw: f64, q_mvar: f64, b: f64) -> GridCase {
        let text = format!(
            "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0; 2 1 {p_mw} {q_mvar} 0 0 1 1 0];\n\
             mpc.gen = [1 0 0 999 -999 1 100 1];\nmpc.branch = [1 2 0 0.1 {b} 0 0 0 0 0 1];\n"
        );
        parse_case(&text).unwrap()
    }

    #[test]
    fn no_load_two_bus() {
        let sol = solve_ac_powerflow(&two_bus(0.0, 0.0, 0.0), &PowerFlowOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.phasor(1) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(sol.flows[0].p_fr.abs() < 1e-12 && sol.flows[0].q_to.abs() < 1e-12);
        let cur = branch_terminal_currents(&sol, 0).unwrap();
        assert!(cur.values.iter().all(|v| v.abs() < 1e-12));
    }

    /// Closed-form solution of the lossless 2-bus case: with `V2 = a + jb`,
    /// `S = V2 conj((1 - V2)/(jx))` for a load `P` gives
    /// `b = -P x` and `a² - a + b² = 0` (upper root).
    fn two_bus_closed_form(p: f64, x: f64) -> Complex64 {
        let b = -p * x;
        let a = 0.5 + (0.25 - b * b).sqrt();
        Complex64::new(a, b)
    }

    #[test]
    fn loaded_two_bus_matches_closed_form() {
        let sol = solve_ac_powerflow(&two_bus(50.0, 0.0, 0.0), &PowerFlowOptions::default()).unwrap();
        let v2 = two_bus_closed_form(0.5, 0.1);
        // frozen regression value from the closed form: 0.99749371855... - 0.05j
        assert!((v2.re - 0.997_493_718_553_31).abs() < 1e-12);
        assert!((sol.phasor(1) - v2).norm() < 1e-9, "{}", sol.phasor(1));
        // lossless: sending-end real power equals the load
        assert!((sol.flows[0].p_fr - 0.5).abs() < 1e-8);
        assert!((sol.flows[0].p_fr + sol.flows[0].p_to).abs() < 1e-10);
        let cur = branch_terminal_currents(&sol, 0).unwrap();
        let expected = (Complex64::new(1.0, 0.0) - v2) / Complex64::new(0.0, 0.1);
        assert!((cur.from_side() - expected).norm() < 1e-8);
        assert!((cur.to_side() + expected).norm() < 1e-8);
    }

    #[test]
    fn charging_adds_shunt_current() {
        let sol = solve_ac_powerflow(&two_bus(0.0, 0.0, 0.2), &PowerFlowOptions::default()).unwrap();
        let cur = branch_terminal_currents(&sol, 0).unwrap();
        let v1 = sol.phasor(0);
        let v2 = sol.phasor(1);
        let series = (v1 - v2) / Complex64::new(0.0, 0.1);
        let expected = series + Complex64::new(0.0, 0.1) * v1;
        assert!((cur.from_side() - expected).norm() < 1e-12);
    }

    #[test]
    fn open_branch_has_no_terminal_currents() {
        let mut case = two_bus(0.0, 0.0, 0.0);
        let extra = case.branches[0].clone();
        case.branches.push(extra);
        let case = case.with_branch_open(1).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default()).unwrap();
        assert!(matches!(branch_terminal_currents(&sol, 1), Err(Error::BranchOpen(1))));
    }

    #[test]
    fn constant_power_stamp_matches_finite_differences() {
        let s = Complex64::new(-0.7, -0.3);
        let v = Complex64::new(0.97, -0.12);
        let d = constant_power_current_jacobian(s, v);
        let i = |v: Complex64| (s / v).conj();
        let h = 1e-6;
        let dr = (i(v + h) - i(v - h)) / (2.0 * h);
        let di = (i(v + Complex64::new(0.0, h)) - i(v - Complex64::new(0.0, h))) / (2.0 * h);
        for (got, want) in [(d[0][0], dr.re), (d[1][0], dr.im), (d[0][1], di.re), (d[1][1], di.im)] {
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn islanded_bus_is_singular() {
        let case = two_bus(50.0, 0.0, 0.0).with_branch_open(0).unwrap();
        let err = solve_ac_powerflow(&case, &PowerFlowOptions::default()).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn max_iterations_reported() {
        let opts = PowerFlowOptions { max_iter: 1, tol: 1e-30, ..Default::default() };
        let err = solve_ac_powerflow(&two_bus(50.0, 10.0, 0.0), &opts).unwrap_err();
        assert!(matches!(err, Error::MaxIterations { max_iter: 1, .. }), "{err}");
    }

    #[test]
    fn unsolvable_load_diverges() {
        // far beyond the nose of the PV curve (max transfer 5 p.u.)
        let err = solve_ac_powerflow(&two_bus(5000.0, 0.0, 0.0), &PowerFlowOptions::default()).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
