//! Complex bus admittance matrix from π-model branch stamps.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::case::GridCase;

/// The 2×2 complex admittance block of one closed branch, mapping terminal
/// voltages to the currents flowing from each terminal bus into the branch:
/// `I_fr = yff V_fr + yft V_to`, `I_to = ytf V_fr + ytt V_to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchStamp {
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl BranchStamp {
    /// Series admittance `1/(r + jx)`, charging `j b/2` at both ends and a
    /// complex tap `tap·e^{j shift}` on the from side.
    pub fn pi_model(from: usize, to: usize, r: f64, x: f64, b: f64, tap: f64, shift: f64) -> Self {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let ytt = ys + Complex64::new(0.0, b / 2.0);
        let t = Complex64::from_polar(tap, shift);
        BranchStamp {
            from,
            to,
            yff: ytt / (t * t.conj()),
            yft: -ys / t.conj(),
            ytf: -ys / t,
            ytt,
        }
    }

    pub fn currents(&self, v_from: Complex64, v_to: Complex64) -> (Complex64, Complex64) {
        (
            self.yff * v_from + self.yft * v_to,
            self.ytf * v_from + self.ytt * v_to,
        )
    }
}

/// Sparse complex nodal admittance matrix in row-compressed form.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
    /// `None` for open branches.
    stamps: Vec<Option<BranchStamp>>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stamp(&self, branch: usize) -> Option<&BranchStamp> {
        self.stamps.get(branch).and_then(Option::as_ref)
    }

    pub fn stamps(&self) -> &[Option<BranchStamp>] {
        &self.stamps
    }

    /// Nonzeros of row `i` as `(column, value)` pairs in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::default(); self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, y) in self.row(i) {
                row[j] = y;
            }
        }
        out
    }
}

pub fn build_ybus(case: &GridCase) -> AdmittanceMatrix {
    build_with(case, true)
}

/// Y with bus shunts and line charging dropped, keeping taps and shifts.
pub fn build_ybus_without_shunts(case: &GridCase) -> AdmittanceMatrix {
    build_with(case, false)
}

fn build_with(case: &GridCase, shunts: bool) -> AdmittanceMatrix {
    let n = case.n();
    let mut rows: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
    let mut stamps = Vec::with_capacity(case.branches.len());
    for br in &case.branches {
        if !br.is_closed() {
            stamps.push(None);
            continue;
        }
        let (f, t) = case.terminals(br.index);
        let b = if shunts { br.b_charging } else { 0.0 };
        let s = BranchStamp::pi_model(f, t, br.r, br.x, b, br.tap, br.shift);
        *rows[f].entry(f).or_default() += s.yff;
        *rows[f].entry(t).or_default() += s.yft;
        *rows[t].entry(f).or_default() += s.ytf;
        *rows[t].entry(t).or_default() += s.ytt;
        stamps.push(Some(s));
    }
    if shunts {
        for (k, bus) in case.buses.iter().enumerate() {
            let y = Complex64::new(bus.g_shunt, bus.b_shunt);
            if y != Complex64::default() {
                *rows[k].entry(k).or_default() += y;
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for row in rows {
        for (j, y) in row {
            cols.push(j);
            vals.push(y);
        }
        row_ptr.push(cols.len());
    }
    AdmittanceMatrix { n, row_ptr, cols, vals, stamps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;

    fn two_bus(status: u8) -> GridCase {
        let text = format!(
            "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0; 2 1 0 0 0 0 1 1 0];\n\
             mpc.gen = [1 0 0 0 0 1 100 1];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 {status}];\n"
        );
        parse_case(&text).unwrap()
    }

    #[test]
    fn series_reactance_stamp() {
        let y = build_ybus(&two_bus(1));
        let c = |re, im| Complex64::new(re, im);
        assert!((y.get(0, 0) - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(1, 1) - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(0, 1) - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - c(0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn open_branch_stamps_nothing() {
        let y = build_ybus(&two_bus(0));
        assert!(y.to_dense().iter().flatten().all(|v| *v == Complex64::default()));
        assert!(y.stamp(0).is_none());
    }

    #[test]
    fn tap_and_shift_match_transformer_equations() {
        // ideal transformer t:1 feeding series admittance: I_fr = ys (V_fr/t - V_to) / conj(t)
        let (r, x, tap, shift) = (0.01, 0.2, 0.95, 0.1);
        let s = BranchStamp::pi_model(0, 1, r, x, 0.0, tap, shift);
        let vf = Complex64::from_polar(1.02, 0.05);
        let vt = Complex64::from_polar(0.98, -0.1);
        let t = Complex64::from_polar(tap, shift);
        let ys = 1.0 / Complex64::new(r, x);
        let i_series = ys * (vf / t - vt);
        let (i_fr, i_to) = s.currents(vf, vt);
        assert!((i_fr - i_series / t.conj()).norm() < 1e-12);
        assert!((i_to + i_series).norm() < 1e-12);
    }
}
