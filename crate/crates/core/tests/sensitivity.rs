use std::path::PathBuf;

use proptest::prelude::*;

use gridsens::case::{parse_case, read_case, GridCase, LoadModel};
use gridsens::dcmodel::{dc_lodf, DcModel};
use gridsens::powerflow::{linearize, solve_ac_powerflow, solve_from, LinearizationMode, PowerFlowOptions, PowerFlowSolution};
use gridsens::screening::{find_bridges, oracle_outage};
use gridsens::sensitivity::{analyze_outage, circuit_lodf, prepare_outage, Metric, TerminalSide};

fn load(name: &str) -> GridCase {
    read_case(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)).unwrap()
}

fn non_bridges(case: &GridCase) -> Vec<usize> {
    let bridges = find_bridges(case);
    case.branches.iter().filter(|b| b.is_closed() && !bridges.contains(&b.index)).map(|b| b.index).collect()
}

fn sign(v: f64) -> i8 {
    // below the power-flow tolerance a change is indistinguishable from zero
    if v.abs() < 1e-7 {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

#[test]
fn terminal_voltage_signs_match_oracle_on_case14() {
    let case = load("case14.m");
    let opts = PowerFlowOptions::default();
    let sol = solve_ac_powerflow(&case, &opts).unwrap();
    let lin = linearize(&sol, LinearizationMode::Full).unwrap();
    for l in non_bridges(&case) {
        let impact = analyze_outage(&sol, &lin, l, Metric::VmagInf, TerminalSide::From).unwrap();
        let oracle = oracle_outage(&sol, l, &opts, TerminalSide::From).unwrap();
        let truth = oracle.delta_vmag.unwrap();
        let pred = impact.delta_vmag.unwrap();
        let (f, t) = case.terminals(l);
        for k in [f, t] {
            assert_eq!(sign(pred[k]), sign(truth[k]), "outage {l} bus {k}: {} vs {}", pred[k], truth[k]);
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn predicted_vmag_correlates_with_oracle() {
    let case = load("case14.m");
    let opts = PowerFlowOptions::default();
    let sol = solve_ac_powerflow(&case, &opts).unwrap();
    let lin = linearize(&sol, LinearizationMode::Full).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for l in non_bridges(&case) {
        pred.extend(analyze_outage(&sol, &lin, l, Metric::VmagInf, TerminalSide::From).unwrap().delta_vmag.unwrap());
        truth.extend(oracle_outage(&sol, l, &opts, TerminalSide::From).unwrap().delta_vmag.unwrap());
    }
    assert!(pearson(&pred, &truth) > 0.9, "{}", pearson(&pred, &truth));
}

#[test]
fn full_mode_beats_network_mode() {
    let case = load("case14.m");
    let opts = PowerFlowOptions::default();
    let sol = solve_ac_powerflow(&case, &opts).unwrap();
    let err = |mode| {
        let lin = linearize(&sol, mode).unwrap();
        non_bridges(&case)
            .into_iter()
            .map(|l| {
                let p = analyze_outage(&sol, &lin, l, Metric::VmagInf, TerminalSide::From).unwrap().delta_vmag.unwrap();
                let t = oracle_outage(&sol, l, &opts, TerminalSide::From).unwrap().delta_vmag.unwrap();
                p.iter().zip(&t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    assert!(err(LinearizationMode::Full) < err(LinearizationMode::Network));
}

#[test]
fn circuit_lodf_tracks_dc_lodf() {
    let case = load("case14.m");
    let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default()).unwrap();
    let lin = linearize(&sol, LinearizationMode::Full).unwrap();
    let dc = DcModel::new(&case).unwrap();
    let monitored = non_bridges(&case);
    // outage of 1-5 (branch 1), a heavily loaded line
    let ac = circuit_lodf(&sol, &lin, 1, &monitored).unwrap();
    let r = dc_lodf(&dc, 1).unwrap();
    for e in &ac.entries {
        let ratio = e.ratio.unwrap();
        if e.branch == 1 {
            assert_eq!(ratio, -1.0);
        } else if r.lodf[e.branch].abs() > 0.2 {
            assert_eq!(ratio.signum(), r.lodf[e.branch].signum(), "branch {}", e.branch);
            assert!((ratio - r.lodf[e.branch]).abs() < 0.15, "branch {}: {ratio} vs {}", e.branch, r.lodf[e.branch]);
        }
    }
}

#[test]
fn unloaded_network_has_zero_sensitivity() {
    let case = load("case14.m").scaled(0.0);
    let mut flat = case.clone();
    for b in &mut flat.buses {
        b.g_shunt = 0.0;
        b.b_shunt = 0.0;
    }
    for br in &mut flat.branches {
        br.b_charging = 0.0;
        br.tap = 1.0;
        br.shift = 0.0;
    }
    for g in &mut flat.generators {
        g.v_set = 1.0;
    }
    let sol = solve_ac_powerflow(&flat, &PowerFlowOptions::default()).unwrap();
    let lin = linearize(&sol, LinearizationMode::Full).unwrap();
    for l in non_bridges(&flat) {
        let impact = analyze_outage(&sol, &lin, l, Metric::Vmag2, TerminalSide::From).unwrap();
        assert!(impact.severity.abs() < 1e-12, "{l}: {}", impact.severity);
        assert!(impact.gamma.unwrap().iter().all(|g| g.abs() < 1e-12));
    }
}

/// Random meshed networks with constant-current loads: the outage prediction
/// equals the re-solve exactly.
fn linear_case(n: usize, loads: &[(f64, f64)], extra: &[(usize, usize, f64, f64, f64)]) -> String {
    let mut s = String::from("mpc.baseMVA = 100;\nmpc.bus = [\n");
    for k in 0..n {
        let (p, q) = loads[k];
        s.push_str(&format!("{} {} {p} {q} 0 0 1 1 0;\n", k + 1, if k == 0 { 3 } else { 1 }));
    }
    s.push_str("];\nmpc.gen = [1 0 0 0 0 1.0 100 1];\nmpc.branch = [\n");
    for k in 1..n {
        // spanning path plus random chords
        s.push_str(&format!("{} {} 0.01 0.08 0.02 0 0 0 0 0 1;\n", k, k + 1));
    }
    for &(a, b, r, x, c) in extra {
        let (a, b) = (a % n + 1, b % n + 1);
        if a != b {
            s.push_str(&format!("{a} {b} {r} {x} {c} 0 0 0 0 0 1;\n"));
        }
    }
    s.push_str("];\n");
    s
}

fn exact_error(case: &GridCase, sol: &PowerFlowSolution, mode: LinearizationMode) -> f64 {
    let opts = PowerFlowOptions { tol: 1e-13, ..PowerFlowOptions::default() };
    let lin = linearize(sol, mode).unwrap();
    let mut worst = 0.0f64;
    for l in non_bridges(case) {
        let impact = analyze_outage(sol, &lin, l, Metric::VmagInf, TerminalSide::From).unwrap();
        let post = solve_from(&case.with_branch_open(l).unwrap(), &opts, &sol.voltage.phasors()).unwrap();
        let dv = impact.delta_v.unwrap();
        for k in 0..dv.len() {
            worst = worst.max((dv[k] - (post.state[k] - sol.state[k])).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn linear_networks_are_predicted_exactly(
        n in 3usize..7,
        loads in prop::collection::vec((0.0f64..60.0, -20.0f64..20.0), 7),
        extra in prop::collection::vec((0usize..7, 0usize..7, 0.0f64..0.05, 0.02f64..0.3, 0.0f64..0.05), 1..5),
    ) {
        let mut case = parse_case(&linear_case(n, &loads, &extra)).unwrap();
        case.set_load_model(LoadModel::ConstantCurrent);
        let opts = PowerFlowOptions { tol: 1e-13, ..PowerFlowOptions::default() };
        let sol = solve_ac_powerflow(&case, &opts).unwrap();
        for mode in [LinearizationMode::Full, LinearizationMode::Network] {
            prop_assert!(exact_error(&case, &sol, mode) < 1e-10);
        }
    }
}

#[test]
fn transfer_matrix_is_identity_minus_block() {
    let case = load("case14.m");
    let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default()).unwrap();
    let lin = linearize(&sol, LinearizationMode::Full).unwrap();
    let prep = prepare_outage(&sol, &lin, 4).unwrap();
    // T γ = I_pre
    let g = gridsens::sensitivity::solve_gamma(&prep.transfer, &prep.pre).unwrap();
    for i in 0..4 {
        let row: f64 = (0..4).map(|j| prep.transfer.matrix[i][j] * g.0[j]).sum();
        assert!((row - prep.pre.values[i]).abs() < 1e-12);
    }
    assert!(prep.transfer.condition >= 1.0 && prep.transfer.condition < 1e6);
}
