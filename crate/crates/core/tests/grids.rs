use rtc_core::grid::{
    builtin_case, compute_ptdf, convert_matpower, injections_from_consumption, parse_case, DcPowerFlow,
};
use rtc_core::GridCase;

const MATPOWER: [(&str, &str); 3] = [
    ("case9", include_str!("../data/matpower/case9.m")),
    ("case14", include_str!("../data/matpower/case14.m")),
    ("case57", include_str!("../data/matpower/case57.m")),
];

#[test]
fn shipped_cases_match_their_matpower_sources() {
    for (name, m) in MATPOWER {
        let converted = convert_matpower(m, 1.0).unwrap();
        let a: GridCase = parse_case(&converted).unwrap();
        let b: GridCase = builtin_case(name).unwrap().unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn case_sizes() {
    // microgrids, total microgrid load in kW, buses, lines
    let expected = [
        ("case9", 3, 315.0, 9, 9),
        ("case14", 11, 259.0, 14, 20),
        ("case57", 41, 1195.8, 57, 80),
        ("caseNW", 54, 6407.0, 124, 123),
    ];
    for (name, mgs, load, buses, lines) in expected {
        let g: GridCase = builtin_case(name).unwrap().unwrap();
        assert_eq!(g.num_microgrids(), mgs, "{name}");
        let mg_load: f64 = g.microgrid_buses().iter().map(|&b| g.buses[b].load_kw).sum();
        assert!((mg_load - load).abs() < 1e-6, "{name}: {mg_load}");
        assert_eq!(g.buses.len(), buses, "{name}");
        assert_eq!(g.lines.len(), lines, "{name}");
    }
    let nw: GridCase = builtin_case("caseNW").unwrap().unwrap();
    assert!(nw.is_radial());
}

#[test]
fn unknown_builtin() {
    assert!(builtin_case::<f64>("case118").is_none());
}

#[test]
fn flows_conserve_power_at_every_bus() {
    for name in ["case9", "case14", "case57", "caseNW"] {
        let g: GridCase = builtin_case(name).unwrap().unwrap();
        let dc = DcPowerFlow::new(&g).unwrap();
        let x: Vec<f64> = (0..g.num_microgrids()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let inj = injections_from_consumption(&g, &x);
        let flows = dc.solve(&g, &inj).unwrap().flows_kw;
        let mut net = inj.clone();
        for (l, f) in g.lines.iter().zip(&flows) {
            net[l.from] -= f;
            net[l.to] += f;
        }
        assert!(net.iter().all(|r| r.abs() < 1e-8), "{name}");
    }
}

#[test]
fn ptdf_single_line_fraction() {
    // on a radial grid every line carries either all or none of a transfer
    let g: GridCase = builtin_case("caseNW").unwrap().unwrap();
    let ptdf = compute_ptdf(&g).unwrap();
    for l in 0..g.lines.len() {
        for &b in g.microgrid_buses().iter().take(10) {
            let f = ptdf.factor(l, b, g.market());
            assert!(f.abs() < 1e-9 || (f.abs() - 1.0).abs() < 1e-9, "{l} {b}: {f}");
        }
    }
}
