use std::path::PathBuf;

use proptest::prelude::*;

use gridsens::case::{parse_case, read_case, BusKind};
use gridsens::Error;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn bundled_case_sizes() {
    for (name, buses, branches, gens) in [("case14.m", 14, 20, 5), ("case118.m", 118, 186, 54), ("case2383wp.m", 2383, 2896, 327)] {
        let case = read_case(data(name)).unwrap();
        assert_eq!(case.n(), buses, "{name}");
        assert_eq!(case.branches.len(), branches, "{name}");
        assert_eq!(case.generators.len(), gens, "{name}");
        assert_eq!(case.buses.iter().filter(|b| b.kind == BusKind::Slack).count(), 1);
    }
}

#[test]
fn case14_values_in_per_unit() {
    let case = read_case(data("case14.m")).unwrap();
    assert_eq!(case.name, "case14");
    assert_eq!(case.base_mva, 100.0);
    let b3 = &case.buses[case.bus_index(3).unwrap()];
    assert!((b3.p_load - 0.942).abs() < 1e-15 && (b3.q_load - 0.19).abs() < 1e-15);
    let b9 = &case.buses[case.bus_index(9).unwrap()];
    assert!((b9.b_shunt - 0.19).abs() < 1e-15);
    // 4-7 transformer with tap 0.978
    let t = &case.branches[7];
    assert_eq!((t.from_bus, t.to_bus, t.tap), (4, 7, 0.978));
    assert_eq!(case.branches[0].b_charging, 0.0528);
}

#[test]
fn bundled_cases_round_trip() {
    for name in ["case14.m", "case118.m", "case2383wp.m"] {
        let case = read_case(data(name)).unwrap();
        let again = parse_case(&case.to_matpower()).unwrap();
        assert_eq!(case, again, "{name}");
    }
}

#[test]
fn missing_file_is_io_error() {
    let err = read_case("/definitely/not/here.m").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(!err.is_numerical());
    assert!(err.to_string().contains("/definitely/not/here.m"));
}

#[test]
fn bad_bus_type_rejected_with_line() {
    let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0;\n2 4 0 0 0 0 1 1 0;\n];\nmpc.gen = [1 0 0 0 0 1 100 1];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];\n";
    match parse_case(text) {
        Err(Error::Syntax { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
}

fn case_text(loads: &[(f64, f64)], lines: &[(usize, f64, f64, f64, f64)]) -> String {
    let mut s = String::from("function mpc = rand\nmpc.baseMVA = 100;\nmpc.bus = [\n");
    for (k, (p, q)) in loads.iter().enumerate() {
        let kind = if k == 0 { 3 } else { 1 };
        s.push_str(&format!("\t{} {kind} {p} {q} 0 0 1 1 0;\n", k + 1));
    }
    s.push_str("];\nmpc.gen = [1 0 0 300 -300 1.02 100 1];\nmpc.branch = [\n");
    for (k, &(to, r, x, b, tap)) in lines.iter().enumerate() {
        // every bus k+2 hangs off an earlier bus so the network stays connected
        s.push_str(&format!("\t{} {} {r} {x} {b} 0 0 0 {tap} 0 1;\n", to, k + 2));
    }
    s.push_str("];\n");
    s
}

proptest! {
    #[test]
    fn random_cases_round_trip(
        loads in prop::collection::vec((-200.0f64..200.0, -50.0f64..50.0), 2..8),
        seed in prop::collection::vec((0usize..100, 0.0f64..0.1, 0.01f64..0.5, 0.0f64..0.2, prop::sample::select(vec![0.0, 0.95, 1.0, 1.05])), 7),
    ) {
        let n = loads.len();
        let lines: Vec<_> = (0..n - 1).map(|k| {
            let (pick, r, x, b, tap) = seed[k];
            (pick % (k + 1) + 1, r, x, b, tap)
        }).collect();
        let case = parse_case(&case_text(&loads, &lines)).unwrap();
        prop_assert_eq!(case.n(), n);
        let again = parse_case(&case.to_matpower()).unwrap();
        prop_assert_eq!(&case, &again);
        // and the text form is a fixed point
        prop_assert_eq!(case.to_matpower(), again.to_matpower());
    }
}
