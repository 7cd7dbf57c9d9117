use fleetcast::backtest::{run_backtest, MethodId, ProtocolConfig};
use fleetcast::synth::{generate, MarginalFamily, SynthSpec};

fn spec(rho: f64, days: u32, seed: u64) -> SynthSpec {
    let mut s = SynthSpec::homogeneous(3, MarginalFamily::TruncatedNormal { mean: 0.5, sd: 0.15 }, rho, days, seed);
    s.system_samples = 0;
    s
}

#[test]
fn copula_cqr_covers_nominal_on_three_site_fleet() {
    let mut covered = 0;
    let mut total = 0;
    for seed in 0..10 {
        let bundle = generate(&spec(0.6, 90, seed)).unwrap().bundle;
        let cfg = ProtocolConfig {
            warmup_days: Some(30),
            samples: 1000,
            alphas: vec![0.1],
            methods: vec![MethodId::CopulaCqr],
            seed,
            ..Default::default()
        };
        let out = run_backtest(&bundle, &cfg).unwrap();
        let r = out.get("SYN", MethodId::CopulaCqr, 0.1).unwrap();
        covered += r.series.rows().iter().filter(|x| x.covered()).count();
        total += r.series.len();
    }
    let picp = covered as f64 / total as f64;
    assert!((0.86..=0.94).contains(&picp), "picp {picp}");
}

#[test]
fn independent_copula_under_covers_correlated_fleet() {
    let bundle = generate(&spec(0.9, 60, 4)).unwrap().bundle;
    let run = |independent| {
        let cfg = ProtocolConfig {
            warmup_days: Some(30),
            samples: 1000,
            alphas: vec![0.1],
            methods: vec![MethodId::Copula],
            independent_copula: independent,
            ..Default::default()
        };
        run_backtest(&bundle, &cfg).unwrap().get("SYN", MethodId::Copula, 0.1).unwrap().report.picp
    };
    let (fitted, independent) = (run(false), run(true));
    assert!(independent < 0.85, "independent copula picp {independent}");
    assert!(fitted > independent + 0.05, "fitted {fitted} vs independent {independent}");
}
