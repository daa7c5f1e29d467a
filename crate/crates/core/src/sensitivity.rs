//! Line outages as equivalent current injections on the linearized circuit.
//!
//! Removing branch `l` is equivalent to keeping it in place and injecting a
//! current `γ = [γ_fr_re, γ_fr_im, γ_to_re, γ_to_im]` at its terminals such
//! that the branch's own terminal currents end up equal to `γ`:
//!
//! ```text
//! I_pre + (dI_l/dV)(dV/dγ) γ = γ   =>   I_pre = T γ,   T = I₄ − dI_l/dγ
//! ```
//!
//! `dV/dγ` comes from four solves against the factorized linear model and
//! `dI_l/dV` from the branch's π-model parameters. Every other impact
//! (`Δ|V|`, `Δ|I|`, `ΔP`) follows from `ΔV = (dV/dγ) γ` by the chain rule.

use num_complex::Complex64;
use serde::Serialize;

use crate::case::GridCase;
use crate::error::{Error, Result};
use crate::linalg::small::{self, M4};
use crate::powerflow::{branch_terminal_currents, BranchTerminalCurrents, LinearizedSystem, PowerFlowSolution, VoltageState};
use crate::ybus::BranchStamp;

/// `cond(T)` above this marks the outage as islanding.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Which end of a monitored branch magnitudes and powers are reported at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TerminalSide {
    #[default]
    From,
    To,
}

impl std::str::FromStr for TerminalSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from" => Ok(TerminalSide::From),
            "to" => Ok(TerminalSide::To),
            other => Err(Error::InvalidArgument(format!("unknown side '{other}'"))),
        }
    }
}

/// Scalar severity of one outage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Metric {
    /// `max_k |Δ|V_k||`.
    #[default]
    VmagInf,
    /// `‖Δ|V|‖₂`.
    Vmag2,
    /// `max_m |Δ|I_m||` over the remaining branches.
    ImagInf,
    /// `max_m |ΔP_m|` over the remaining branches.
    PlineInf,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::VmagInf => "vmag_inf",
            Metric::Vmag2 => "vmag_2",
            Metric::ImagInf => "imag_inf",
            Metric::PlineInf => "pline_inf",
        }
    }

    /// Reduces per-bus and per-branch deltas to a severity. The outaged
    /// branch and open branches are excluded from the branch metrics.
    pub fn evaluate(self, outage: usize, dvmag: &[f64], dimag: &[f64], dp: &[f64], closed: &[bool]) -> f64 {
        let branch_max = |d: &[f64]| {
            d.iter()
                .enumerate()
                .filter(|&(m, _)| m != outage && closed[m])
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max)
        };
        match self {
            Metric::VmagInf => dvmag.iter().map(|v| v.abs()).fold(0.0, f64::max),
            Metric::Vmag2 => dvmag.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Metric::ImagInf => branch_max(dimag),
            Metric::PlineInf => branch_max(dp),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmag_inf" | "vmag" => Ok(Metric::VmagInf),
            "vmag_2" => Ok(Metric::Vmag2),
            "imag_inf" | "imag" => Ok(Metric::ImagInf),
            "pline_inf" | "pline" => Ok(Metric::PlineInf),
            other => Err(Error::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

/// `dV/dγ` for one outage: the responses of the linear model to unit
/// injections at `(fr_re, fr_im, to_re, to_im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSensitivity {
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    /// Four columns over all variables of the linear model.
    pub columns: [Vec<f64>; 4],
}

impl InjectionSensitivity {
    /// Voltage part (first `2n` entries) of column `c`.
    pub fn dv(&self, c: usize, n: usize) -> &[f64] {
        &self.columns[c][..2 * n]
    }

    /// The 4×4 block of `dV/dγ` at the outaged branch's own terminals.
    pub fn terminal_block(&self) -> M4 {
        let vars = terminal_vars(self.from, self.to);
        let mut out = [[0.0; 4]; 4];
        for (i, &v) in vars.iter().enumerate() {
            for c in 0..4 {
                out[i][c] = self.columns[c][v];
            }
        }
        out
    }
}

fn terminal_vars(from: usize, to: usize) -> [usize; 4] {
    [2 * from, 2 * from + 1, 2 * to, 2 * to + 1]
}

/// Responses of the factorized linear model to unit current injections at
/// the terminals of branch `l`. Injections at the slack bus are absorbed by
/// the source, so their right-hand sides are zero.
pub fn dv_dgamma(lin: &LinearizedSystem, branch: usize) -> Result<InjectionSensitivity> {
    lin.case.closed_branch(branch)?;
    let (from, to) = lin.case.terminals(branch);
    let vars = terminal_vars(from, to);
    let dim = lin.dim();
    let rhs: Vec<Vec<f64>> = vars
        .iter()
        .map(|&row| {
            let mut e = vec![0.0; dim];
            if row / 2 != lin.slack {
                e[row] = 1.0;
            }
            e
        })
        .collect();
    let refs: Vec<&[f64]> = rhs.iter().map(Vec::as_slice).collect();
    let mut cols = lin.solve_many(&refs)?;
    // the slack voltage is fixed; drop round-off from the pinned rows
    for c in cols.iter_mut() {
        c[2 * lin.slack] = 0.0;
        c[2 * lin.slack + 1] = 0.0;
    }
    let mut cols = cols.into_iter();
    let mut next = || cols.next().expect("four solutions");
    Ok(InjectionSensitivity {
        branch,
        from,
        to,
        columns: [next(), next(), next(), next()],
    })
}

/// Linear map `(V_fr_re, V_fr_im, V_to_re, V_to_im) → (I_fr_re, I_fr_im,
/// I_to_re, I_to_im)` of a branch's π model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchCurrentJacobian {
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub matrix: M4,
}

impl BranchCurrentJacobian {
    pub fn from_stamp(branch: usize, s: &BranchStamp) -> Self {
        let block = |y: Complex64| [[y.re, -y.im], [y.im, y.re]];
        let mut m = [[0.0; 4]; 4];
        for (bi, row) in [[s.yff, s.yft], [s.ytf, s.ytt]].iter().enumerate() {
            for (bj, &y) in row.iter().enumerate() {
                let b = block(y);
                for i in 0..2 {
                    for j in 0..2 {
                        m[2 * bi + i][2 * bj + j] = b[i][j];
                    }
                }
            }
        }
        BranchCurrentJacobian { branch, from: s.from, to: s.to, matrix: m }
    }

    /// Terminal current change for a full-length voltage change.
    pub fn apply(&self, dv: &[f64]) -> [f64; 4] {
        let vars = terminal_vars(self.from, self.to);
        small::mul_vec(&self.matrix, &vars.map(|v| dv[v]))
    }
}

pub fn branch_current_jacobian(case: &GridCase, branch: usize) -> Result<BranchCurrentJacobian> {
    let br = case.closed_branch(branch)?;
    let (from, to) = case.terminals(branch);
    let stamp = BranchStamp::pi_model(from, to, br.r, br.x, br.b_charging, br.tap, br.shift);
    Ok(BranchCurrentJacobian::from_stamp(branch, &stamp))
}

/// `dI_l/dγ = (dI_l/dV)(dV/dγ)`, rows and columns ordered
/// `(fr_re, fr_im, to_re, to_im)`.
pub fn dline_current_dgamma(sens: &InjectionSensitivity, jac: &BranchCurrentJacobian) -> Result<M4> {
    if sens.branch != jac.branch {
        return Err(Error::InvalidArgument(format!(
            "sensitivity of branch {} paired with current map of branch {}",
            sens.branch, jac.branch
        )));
    }
    let block = sens.terminal_block();
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for c in 0..4 {
            out[i][c] = (0..4).map(|j| jac.matrix[i][j] * block[j][c]).sum();
        }
    }
    Ok(out)
}

/// `T = I₄ − dI_l/dγ` with its 2-norm condition number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutageTransferMatrix {
    pub branch: usize,
    pub matrix: M4,
    pub condition: f64,
}

impl OutageTransferMatrix {
    pub fn is_singular(&self) -> bool {
        !(self.condition <= SINGULAR_CONDITION)
    }
}

pub fn build_transfer_matrix(branch: usize, dline_dgamma: &M4) -> OutageTransferMatrix {
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = if i == j { 1.0 } else { 0.0 } - dline_dgamma[i][j];
        }
    }
    OutageTransferMatrix {
        branch,
        matrix: t,
        condition: small::condition(&t),
    }
}

/// Equivalent outage injection `[γ_fr_re, γ_fr_im, γ_to_re, γ_to_im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjectionVector(pub [f64; 4]);

pub fn solve_gamma(t: &OutageTransferMatrix, pre: &BranchTerminalCurrents) -> Result<InjectionVector> {
    if t.is_singular() {
        return Err(Error::Islanding(t.branch));
    }
    Ok(InjectionVector(small::solve(&t.matrix, &pre.values)))
}

/// `ΔV = [dV/dγ] T⁻¹ I_pre`, voltage entries only (length `2n`).
pub fn outage_delta_v(
    sens: &InjectionSensitivity,
    t: &OutageTransferMatrix,
    pre: &BranchTerminalCurrents,
    n: usize,
) -> Result<Vec<f64>> {
    let gamma = solve_gamma(t, pre)?;
    Ok(apply_injection(sens, &gamma, 2 * n))
}

/// `Σ_c γ_c · column_c` over the first `len` variables.
pub fn apply_injection(sens: &InjectionSensitivity, gamma: &InjectionVector, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (c, g) in gamma.0.iter().enumerate() {
        for (o, d) in out.iter_mut().zip(&sens.columns[c][..len]) {
            *o += g * d;
        }
    }
    out
}

/// First-order change of each bus voltage magnitude,
/// `(Vr ΔVr + Vi ΔVi) / |V|`.
pub fn delta_voltage_magnitude(dv: &[f64], op: &VoltageState) -> Result<Vec<f64>> {
    (0..op.n())
        .map(|k| {
            let v = op.phasor(k);
            let mag = v.norm();
            if mag == 0.0 {
                return Err(Error::ZeroMagnitude(k));
            }
            Ok((v.re * dv[2 * k] + v.im * dv[2 * k + 1]) / mag)
        })
        .collect()
}

fn side_current(jac: &BranchCurrentJacobian, v: &[f64], side: TerminalSide) -> Complex64 {
    let i = jac.apply(v);
    match side {
        TerminalSide::From => Complex64::new(i[0], i[1]),
        TerminalSide::To => Complex64::new(i[2], i[3]),
    }
}

/// First-order change of a branch current magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurrentMagnitudeDelta {
    pub value: f64,
    /// The operating-point current is zero, so `value` is `‖ΔI‖₂` instead of
    /// a magnitude derivative.
    pub zero_current: bool,
}

pub fn delta_current_magnitude(
    dv: &[f64],
    sol: &PowerFlowSolution,
    branch: usize,
    side: TerminalSide,
) -> Result<CurrentMagnitudeDelta> {
    let jac = branch_current_jacobian(&sol.case, branch)?;
    let i0 = side_current(&jac, sol.voltage.as_slice(), side);
    let di = side_current(&jac, dv, side);
    let mag = i0.norm();
    Ok(if mag > 0.0 {
        CurrentMagnitudeDelta {
            value: (i0.conj() * di).re / mag,
            zero_current: false,
        }
    } else {
        CurrentMagnitudeDelta {
            value: di.norm(),
            zero_current: true,
        }
    })
}

/// First-order change of `P = Re(V conj(I))` at one end of a branch.
pub fn delta_line_power(dv: &[f64], sol: &PowerFlowSolution, branch: usize, side: TerminalSide) -> Result<f64> {
    let jac = branch_current_jacobian(&sol.case, branch)?;
    let bus = match side {
        TerminalSide::From => jac.from,
        TerminalSide::To => jac.to,
    };
    let v0 = sol.phasor(bus);
    let dvb = Complex64::new(dv[2 * bus], dv[2 * bus + 1]);
    let i0 = side_current(&jac, sol.voltage.as_slice(), side);
    let di = side_current(&jac, dv, side);
    Ok((dvb * i0.conj() + v0 * di.conj()).re)
}

/// The full outage pipeline for one branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageImpact {
    pub branch: usize,
    pub islanding: bool,
    /// `+∞` when islanding.
    pub severity: f64,
    pub t_condition: f64,
    pub gamma: Option<[f64; 4]>,
    pub delta_v: Option<Vec<f64>>,
    pub delta_vmag: Option<Vec<f64>>,
    /// Per branch (zero for open branches); the outaged branch included.
    pub delta_imag: Option<Vec<f64>>,
    pub delta_p: Option<Vec<f64>>,
}

/// Steps shared by the impact and consistency computations.
pub struct OutagePrep {
    pub sens: InjectionSensitivity,
    pub transfer: OutageTransferMatrix,
    pub pre: BranchTerminalCurrents,
}

pub fn prepare_outage(sol: &PowerFlowSolution, lin: &LinearizedSystem, branch: usize) -> Result<OutagePrep> {
    let sens = dv_dgamma(lin, branch)?;
    let jac = branch_current_jacobian(&sol.case, branch)?;
    let d = dline_current_dgamma(&sens, &jac)?;
    let transfer = build_transfer_matrix(branch, &d);
    let pre = branch_terminal_currents(sol, branch)?;
    Ok(OutagePrep { sens, transfer, pre })
}

pub fn analyze_outage(
    sol: &PowerFlowSolution,
    lin: &LinearizedSystem,
    branch: usize,
    metric: Metric,
    side: TerminalSide,
) -> Result<OutageImpact> {
    let prep = prepare_outage(sol, lin, branch)?;
    if prep.transfer.is_singular() {
        return Ok(OutageImpact {
            branch,
            islanding: true,
            severity: f64::INFINITY,
            t_condition: prep.transfer.condition,
            gamma: None,
            delta_v: None,
            delta_vmag: None,
            delta_imag: None,
            delta_p: None,
        });
    }
    let gamma = solve_gamma(&prep.transfer, &prep.pre)?;
    let dv = apply_injection(&prep.sens, &gamma, 2 * sol.n());
    let dvmag = delta_voltage_magnitude(&dv, &sol.voltage)?;
    let mut dimag = vec![0.0; sol.case.branches.len()];
    let mut dp = vec![0.0; sol.case.branches.len()];
    let mut closed = vec![false; sol.case.branches.len()];
    for br in sol.case.branches.iter().filter(|b| b.is_closed()) {
        closed[br.index] = true;
        dimag[br.index] = delta_current_magnitude(&dv, sol, br.index, side)?.value;
        dp[br.index] = delta_line_power(&dv, sol, br.index, side)?;
    }
    // inside the linear model the outaged branch still carries γ; report its
    // removal instead
    let (i_fr, i_to) = (prep.pre.from_side(), prep.pre.to_side());
    let flow = &sol.flows[branch];
    (dimag[branch], dp[branch]) = match side {
        TerminalSide::From => (-i_fr.norm(), -flow.p_fr),
        TerminalSide::To => (-i_to.norm(), -flow.p_to),
    };
    let severity = metric.evaluate(branch, &dvmag, &dimag, &dp, &closed);
    Ok(OutageImpact {
        branch,
        islanding: false,
        severity,
        t_condition: prep.transfer.condition,
        gamma: Some(gamma.0),
        delta_v: Some(dv),
        delta_vmag: Some(dvmag),
        delta_imag: Some(dimag),
        delta_p: Some(dp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircuitLodfEntry {
    pub branch: usize,
    pub delta_p: f64,
    /// `ΔP_m / P_l_pre`; `None` when the outaged line carries no real power.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitLodf {
    pub outage: usize,
    pub pre_power: f64,
    pub entries: Vec<CircuitLodfEntry>,
}

/// AC analogue of the LODF: predicted real power change on each monitored
/// branch relative to the outaged branch's pre-outage real power. Powers
/// are taken at the from end.
pub fn circuit_lodf(
    sol: &PowerFlowSolution,
    lin: &LinearizedSystem,
    outage: usize,
    monitored: &[usize],
) -> Result<CircuitLodf> {
    let prep = prepare_outage(sol, lin, outage)?;
    let dv = outage_delta_v(&prep.sens, &prep.transfer, &prep.pre, sol.n())?;
    let pre_power = sol.flows[outage].p_fr;
    let entries = monitored
        .iter()
        .map(|&m| {
            let delta_p = if m == outage {
                -pre_power
            } else {
                delta_line_power(&dv, sol, m, TerminalSide::From)?
            };
            let ratio = (pre_power.abs() > 1e-12).then(|| delta_p / pre_power);
            Ok(CircuitLodfEntry { branch: m, delta_p, ratio })
        })
        .collect::<Result<_>>()?;
    Ok(CircuitLodf { outage, pre_power, entries })
}
