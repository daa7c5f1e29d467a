//! DC power flow and DC line outage distribution factors.
//!
//! Lossless branches with susceptance `1/x`, flat voltage magnitudes, taps
//! ignored and phase shifts entering as fixed angle offsets:
//! `P_m = (θ_fr − θ_to − shift_m) / x_m`.

use serde::Serialize;

use crate::case::GridCase;
use crate::error::{Error, Result};
use crate::linalg::{Factorization, SparseMatrix};

/// `|1 − PTDF_l| below this marks the outage of `l` as islanding.
pub const BRIDGE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DcBranch {
    pub from: usize,
    pub to: usize,
    /// `1/x`, zero for open branches.
    pub susceptance: f64,
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct DcModel {
    pub n: usize,
    pub slack: usize,
    /// Bus position → row of the reduced matrix (`None` for the slack).
    pub reduced: Vec<Option<usize>>,
    pub branches: Vec<DcBranch>,
    /// Net injection `P_gen − P_load` per bus, p.u.
    pub injections: Vec<f64>,
    factor: Factorization,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcFlow {
    pub theta: Vec<f64>,
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcLodfResult {
    pub outage: usize,
    /// `LODF_{m,l}` for every branch `m` (zero for open branches).
    pub lodf: Vec<f64>,
    pub pre_flows: Vec<f64>,
    /// Transfer that cancels the outaged line's flow, `P_l / (1 − PTDF_l)`.
    pub rho: f64,
    pub predicted_flows: Vec<f64>,
}

impl DcModel {
    pub fn new(case: &GridCase) -> Result<Self> {
        let n = case.n();
        let slack = case.slack_index();
        let mut reduced = vec![None; n];
        let mut next = 0;
        for (k, slot) in reduced.iter_mut().enumerate() {
            if k != slack {
                *slot = Some(next);
                next += 1;
            }
        }
        let branches: Vec<DcBranch> = case
            .branches
            .iter()
            .map(|br| {
                let (from, to) = case.terminals(br.index);
                DcBranch {
                    from,
                    to,
                    susceptance: if br.is_closed() { 1.0 / br.x } else { 0.0 },
                    shift: br.shift,
                }
            })
            .collect();
        let mut t = Vec::new();
        for br in branches.iter().filter(|b| b.susceptance != 0.0) {
            let (f, to, b) = (reduced[br.from], reduced[br.to], br.susceptance);
            if let Some(f) = f {
                t.push((f, f, b));
            }
            if let Some(to) = to {
                t.push((to, to, b));
            }
            if let (Some(f), Some(to)) = (f, to) {
                t.push((f, to, -b));
                t.push((to, f, -b));
            }
        }
        let dim = n - 1;
        let factor = if dim == 0 {
            SparseMatrix::from_triplets(0, Vec::new()).factorize()?
        } else {
            SparseMatrix::from_triplets(dim, t)
                .factorize()
                .map_err(|e| Error::Singular(format!("DC susceptance matrix: {e}")))?
        };
        let mut injections = vec![0.0; n];
        for g in &case.generators {
            injections[case.idx(g.bus)] += g.p_set;
        }
        for (k, bus) in case.buses.iter().enumerate() {
            injections[k] -= bus.p_load;
        }
        Ok(DcModel { n, slack, reduced, branches, injections, factor })
    }

    /// Angles for a nodal injection vector, with the slack angle at zero.
    fn angles(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.n - 1];
        for (k, &pk) in p.iter().enumerate() {
            if let Some(r) = self.reduced[k] {
                rhs[r] = pk;
            }
        }
        let x = if rhs.is_empty() {
            rhs
        } else {
            self.factor
                .solve(&rhs)
                .map_err(|e| Error::Singular(format!("DC susceptance matrix: {e}")))?
        };
        Ok((0..self.n).map(|k| self.reduced[k].map_or(0.0, |r| x[r])).collect())
    }

    pub fn solve(&self) -> Result<DcFlow> {
        let mut p = self.injections.clone();
        // phase shifters act as fixed injections b·shift at their terminals
        for br in &self.branches {
            let s = br.susceptance * br.shift;
            p[br.from] += s;
            p[br.to] -= s;
        }
        let theta = self.angles(&p)?;
        let flows = self
            .branches
            .iter()
            .map(|br| br.susceptance * (theta[br.from] - theta[br.to] - br.shift))
            .collect();
        Ok(DcFlow { theta, flows })
    }
}

pub fn solve_dc(case: &GridCase) -> Result<DcFlow> {
    DcModel::new(case)?.solve()
}

/// Branch flow change per unit of power injected at bus position `from` and
/// withdrawn at `to`.
pub fn dc_ptdf(model: &DcModel, from: usize, to: usize) -> Result<Vec<f64>> {
    if from == to {
        return Err(Error::InvalidArgument("PTDF transfer needs distinct buses".into()));
    }
    if from >= model.n || to >= model.n {
        return Err(Error::InvalidArgument(format!("bus position out of range 0..{}", model.n)));
    }
    let mut p = vec![0.0; model.n];
    p[from] = 1.0;
    p[to] = -1.0;
    let theta = model.angles(&p)?;
    Ok(model
        .branches
        .iter()
        .map(|br| br.susceptance * (theta[br.from] - theta[br.to]))
        .collect())
}

pub fn dc_lodf(model: &DcModel, outage: usize) -> Result<DcLodfResult> {
    let br = *model.branches.get(outage).ok_or(Error::NoSuchBranch(outage))?;
    if br.susceptance == 0.0 {
        return Err(Error::BranchOpen(outage));
    }
    let ptdf = dc_ptdf(model, br.from, br.to)?;
    let denom = 1.0 - ptdf[outage];
    if denom.abs() < BRIDGE_THRESHOLD {
        return Err(Error::Islanding(outage));
    }
    let pre_flows = model.solve()?.flows;
    let lodf: Vec<f64> = ptdf
        .iter()
        .enumerate()
        .map(|(m, p)| if m == outage { -1.0 } else { p / denom })
        .collect();
    let p_l = pre_flows[outage];
    let predicted_flows = pre_flows.iter().zip(&lodf).map(|(p, f)| p + f * p_l).collect();
    Ok(DcLodfResult {
        outage,
        lodf,
        pre_flows,
        rho: p_l / denom,
        predicted_flows,
    })
}
