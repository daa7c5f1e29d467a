//! N-1 branch outage screening, the nonlinear re-solve oracle and ranking
//! comparison.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::case::GridCase;
use crate::error::{Error, Result};
use crate::powerflow::{solve_from, LinearizationMode, LinearizedSystem, PowerFlowOptions, PowerFlowSolution};
use crate::sensitivity::{analyze_outage, Metric, TerminalSide};

/// Closed branches whose removal disconnects the closed-branch graph.
/// Parallel branches between the same pair of buses are never bridges.
pub fn find_bridges(case: &GridCase) -> BTreeSet<usize> {
    let n = case.n();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for br in case.branches.iter().filter(|b| b.is_closed()) {
        let (f, t) = case.terminals(br.index);
        adj[f].push((t, br.index));
        adj[t].push((f, br.index));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut bridges = BTreeSet::new();
    let mut clock = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (vertex, edge used to enter it, next adjacency position)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = clock;
        low[root] = clock;
        clock += 1;
        while let Some(top) = stack.last_mut() {
            let (u, via, pos) = *top;
            if pos < adj[u].len() {
                top.2 += 1;
                let (w, edge) = adj[u][pos];
                if edge == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = clock;
                    low[w] = clock;
                    clock += 1;
                    stack.push((w, edge, 0));
                } else {
                    low[u] = low[u].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[u]);
                    if low[u] > disc[parent] {
                        bridges.insert(via);
                    }
                }
            }
        }
    }
    bridges
}

/// Whether all buses are reachable over closed branches, ignoring `skip`.
pub fn is_connected_without(case: &GridCase, skip: Option<usize>) -> bool {
    let n = case.n();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for br in case.branches.iter().filter(|b| b.is_closed() && Some(b.index) != skip) {
        let (f, t) = case.terminals(br.index);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningEntry {
    pub branch: usize,
    pub from_bus: u32,
    pub to_bus: u32,
    /// `+∞` for islanding outages, NaN when the evaluation failed.
    pub severity: f64,
    pub islanding: bool,
    pub top_k: bool,
    pub failure: Option<String>,
    pub oracle_severity: Option<f64>,
    /// Predicted per-bus `Δ|V|`, kept on request for error statistics.
    #[serde(skip)]
    pub delta_vmag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningReport {
    pub case: String,
    pub metric: Metric,
    pub mode: LinearizationMode,
    pub top_k: usize,
    /// Islanding first, then severity descending, ties by branch index.
    pub entries: Vec<ScreeningEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenOptions {
    pub metric: Metric,
    pub top_k: usize,
    pub side: TerminalSide,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub keep_profiles: bool,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions {
            metric: Metric::VmagInf,
            top_k: 10,
            side: TerminalSide::From,
            jobs: 0,
            keep_profiles: false,
        }
    }
}

pub(crate) fn run_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn rank_order(a: &ScreeningEntry, b: &ScreeningEntry) -> std::cmp::Ordering {
    let class = |e: &ScreeningEntry| {
        if e.islanding {
            0
        } else if e.severity.is_nan() {
            2
        } else {
            1
        }
    };
    class(a)
        .cmp(&class(b))
        .then_with(|| b.severity.partial_cmp(&a.severity).unwrap_or(std::cmp::Ordering::Equal))
        .then_with(|| a.branch.cmp(&b.branch))
}

/// Evaluates every closed branch outage and ranks them. Bridges are flagged
/// as islanding without evaluating their sensitivities.
pub fn screen(sol: &PowerFlowSolution, lin: &LinearizedSystem, opts: &ScreenOptions) -> ScreeningReport {
    let case = &sol.case;
    let bridges = find_bridges(case);
    let closed: Vec<usize> = case.branches.iter().filter(|b| b.is_closed()).map(|b| b.index).collect();
    let mut entries: Vec<ScreeningEntry> = run_jobs(opts.jobs, || {
        closed
            .par_iter()
            .map(|&l| {
                let br = &case.branches[l];
                let mut entry = ScreeningEntry {
                    branch: l,
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    severity: f64::INFINITY,
                    islanding: true,
                    top_k: false,
                    failure: None,
                    oracle_severity: None,
                    delta_vmag: None,
                };
                if bridges.contains(&l) {
                    return entry;
                }
                match analyze_outage(sol, lin, l, opts.metric, opts.side) {
                    Ok(impact) => {
                        entry.islanding = impact.islanding;
                        entry.severity = impact.severity;
                        if opts.keep_profiles {
                            entry.delta_vmag = impact.delta_vmag;
                        }
                    }
                    Err(e) => {
                        entry.islanding = false;
                        entry.severity = f64::NAN;
                        entry.failure = Some(e.to_string());
                    }
                }
                entry
            })
            .collect()
    });
    entries.sort_by(rank_order);
    let mut marked = 0;
    for e in entries.iter_mut() {
        if marked < opts.top_k && !e.severity.is_nan() {
            e.top_k = true;
            marked += 1;
        }
    }
    ScreeningReport {
        case: case.name.clone(),
        metric: opts.metric,
        mode: lin.mode,
        top_k: opts.top_k,
        entries,
    }
}

/// Result of re-solving the nonlinear power flow without one branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub branch: usize,
    pub converged: bool,
    pub islanded: bool,
    pub iterations: Option<usize>,
    pub failure: Option<String>,
    pub delta_vmag: Option<Vec<f64>>,
    /// Change of each branch's current magnitude (zero for open branches and
    /// the outaged branch's post-outage value of 0 included).
    pub delta_imag: Option<Vec<f64>>,
    pub delta_p: Option<Vec<f64>>,
}

impl OracleOutcome {
    /// Severity under `metric`; `None` unless the re-solve converged.
    pub fn severity(&self, metric: Metric, closed: &[bool]) -> Option<f64> {
        Some(metric.evaluate(
            self.branch,
            self.delta_vmag.as_ref()?,
            self.delta_imag.as_ref()?,
            self.delta_p.as_ref()?,
            closed,
        ))
    }
}

fn side_values(sol: &PowerFlowSolution, side: TerminalSide) -> (Vec<f64>, Vec<f64>) {
    sol.ybus
        .stamps()
        .iter()
        .zip(&sol.flows)
        .map(|(stamp, flow)| match stamp {
            None => (0.0, 0.0),
            Some(s) => {
                let (i_fr, i_to) = s.currents(sol.phasor(s.from), sol.phasor(s.to));
                match side {
                    TerminalSide::From => (i_fr.norm(), flow.p_fr),
                    TerminalSide::To => (i_to.norm(), flow.p_to),
                }
            }
        })
        .unzip()
}

/// Re-solves the power flow with `branch` removed, warm-started from the
/// base solution with twice the iteration budget.
pub fn oracle_outage(base: &PowerFlowSolution, branch: usize, opts: &PowerFlowOptions, side: TerminalSide) -> Result<OracleOutcome> {
    let case = base.case.with_branch_open(branch)?;
    base.case.closed_branch(branch)?;
    let mut out = OracleOutcome {
        branch,
        converged: false,
        islanded: false,
        iterations: None,
        failure: None,
        delta_vmag: None,
        delta_imag: None,
        delta_p: None,
    };
    if !is_connected_without(&base.case, Some(branch)) {
        out.islanded = true;
        return Ok(out);
    }
    let opts = PowerFlowOptions {
        max_iter: 2 * opts.max_iter,
        ..*opts
    };
    match solve_from(&case, &opts, &base.voltage.phasors()) {
        Ok(post) => {
            let (i0, p0) = side_values(base, side);
            let (i1, p1) = side_values(&post, side);
            out.converged = true;
            out.iterations = Some(post.iterations);
            out.delta_vmag = Some(
                post.voltage
                    .magnitudes()
                    .iter()
                    .zip(base.voltage.magnitudes())
                    .map(|(a, b)| a - b)
                    .collect(),
            );
            out.delta_imag = Some(i1.iter().zip(&i0).map(|(a, b)| a - b).collect());
            out.delta_p = Some(p1.iter().zip(&p0).map(|(a, b)| a - b).collect());
        }
        Err(e) => out.failure = Some(e.to_string()),
    }
    Ok(out)
}

/// Oracle outcomes for every closed branch, in branch order.
pub fn oracle_all(base: &PowerFlowSolution, opts: &PowerFlowOptions, side: TerminalSide, jobs: usize) -> Vec<OracleOutcome> {
    let closed: Vec<usize> = base.case.branches.iter().filter(|b| b.is_closed()).map(|b| b.index).collect();
    run_jobs(jobs, || {
        closed
            .par_iter()
            .map(|&l| oracle_outage(base, l, opts, side).expect("closed branch"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub k: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub comparable: usize,
    pub insufficient: bool,
    pub spearman: Option<f64>,
    pub overlaps: Vec<Overlap>,
    pub max_abs_vmag_error: Option<f64>,
    pub mean_abs_vmag_error: Option<f64>,
}

pub const OVERLAP_KS: [usize; 3] = [3, 5, 10];

/// Ranks with ties sharing their average position (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Size of the intersection of the top-`k` items of two severity lists over
/// the same keys. Ties break toward the lower key.
pub fn top_k_overlap(keys: &[usize], a: &[f64], b: &[f64], k: usize) -> usize {
    let top = |v: &[f64]| -> BTreeSet<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&x, &y| {
            v[y].partial_cmp(&v[x])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(keys[x].cmp(&keys[y]))
        });
        idx.into_iter().take(k).map(|i| keys[i]).collect()
    };
    top(a).intersection(&top(b)).count()
}

/// Compares severities keyed by branch. Pairs with a non-finite value on
/// either side are dropped.
pub fn compare_severities(predicted: &[(usize, f64)], truth: &[(usize, f64)]) -> ComparisonSummary {
    let truth_map: std::collections::BTreeMap<usize, f64> = truth.iter().copied().collect();
    let mut keys = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &(branch, p) in predicted {
        if let Some(&t) = truth_map.get(&branch) {
            if p.is_finite() && t.is_finite() {
                keys.push(branch);
                a.push(p);
                b.push(t);
            }
        }
    }
    let insufficient = keys.len() < 3;
    ComparisonSummary {
        comparable: keys.len(),
        insufficient,
        spearman: if insufficient { None } else { spearman(&a, &b) },
        overlaps: OVERLAP_KS
            .iter()
            .map(|&k| Overlap { k, count: top_k_overlap(&keys, &a, &b, k) })
            .collect(),
        max_abs_vmag_error: None,
        mean_abs_vmag_error: None,
    }
}

/// Compares a screening report with oracle outcomes over non-islanding,
/// converged outages, and records the oracle severities in the report.
pub fn compare(report: &mut ScreeningReport, oracle: &[OracleOutcome], case: &GridCase) -> Result<ComparisonSummary> {
    let closed: Vec<bool> = case.branches.iter().map(|b| b.is_closed()).collect();
    let by_branch: std::collections::BTreeMap<usize, &OracleOutcome> = oracle.iter().map(|o| (o.branch, o)).collect();
    if by_branch.len() != report.entries.len() || report.entries.iter().any(|e| !by_branch.contains_key(&e.branch)) {
        return Err(Error::InvalidArgument("report and oracle cover different outages".into()));
    }
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut errors = Vec::new();
    for e in report.entries.iter_mut() {
        let o = by_branch[&e.branch];
        e.oracle_severity = if o.islanded { Some(f64::INFINITY) } else { o.severity(report.metric, &closed) };
        if e.islanding || o.islanded {
            continue;
        }
        if let Some(t) = e.oracle_severity {
            predicted.push((e.branch, e.severity));
            truth.push((e.branch, t));
            if let (Some(p), Some(t)) = (&e.delta_vmag, &o.delta_vmag) {
                errors.extend(p.iter().zip(t).map(|(a, b)| (a - b).abs()));
            }
        }
    }
    let mut summary = compare_severities(&predicted, &truth);
    if !errors.is_empty() {
        summary.max_abs_vmag_error = Some(errors.iter().copied().fold(0.0, f64::max));
        summary.mean_abs_vmag_error = Some(errors.iter().sum::<f64>() / errors.len() as f64);
    }
    Ok(summary)
}
