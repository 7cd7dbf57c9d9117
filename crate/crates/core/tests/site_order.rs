use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleetcast::backtest::ProtocolConfig;
use fleetcast::dataio::BundlePaths;
use fleetcast::manifest::backtest_to_dir;
use fleetcast::synth::{generate, CorrelationSpec, MarginalFamily, SynthSite, SynthSpec};

fn shuffle_rows(path: &Path, rng: &mut ChaCha8Rng) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.shuffle(rng);
    let mut out = String::from(header);
    out.push('\n');
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

#[test]
fn results_ignore_row_order_in_inputs() {
    let mut spec = SynthSpec::homogeneous(3, MarginalFamily::Uniform, 0.0, 24, 8);
    spec.sites = vec![
        SynthSite {
            id: "zeta".into(),
            capacity_mw: 30.0,
            marginal: MarginalFamily::TruncatedNormal { mean: 0.6, sd: 0.2 },
        },
        SynthSite {
            id: "alpha".into(),
            capacity_mw: 10.0,
            marginal: MarginalFamily::Uniform,
        },
        SynthSite {
            id: "mu".into(),
            capacity_mw: 5.0,
            marginal: MarginalFamily::TruncatedNormal { mean: 0.4, sd: 0.1 },
        },
    ];
    spec.correlation = CorrelationSpec::Equicorrelation { rho: 0.5 };
    spec.system_samples = 200;
    let bundle = generate(&spec).unwrap().bundle;

    let tmp = tempfile::tempdir().unwrap();
    let plain = bundle.write_dir(&tmp.path().join("plain")).unwrap();
    let shuffled = bundle.write_dir(&tmp.path().join("shuffled")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for f in [&shuffled.observations, &shuffled.site_forecasts, &shuffled.sites] {
        shuffle_rows(f, &mut rng);
    }
    assert_ne!(
        std::fs::read(&plain.site_forecasts).unwrap(),
        std::fs::read(&shuffled.site_forecasts).unwrap()
    );

    let cfg = ProtocolConfig {
        warmup_days: Some(14),
        samples: 300,
        alphas: vec![0.1, 0.3],
        ..Default::default()
    };
    let run = |paths: &BundlePaths, name: &str| {
        let out = tmp.path().join(name);
        backtest_to_dir(paths, &cfg, &out).unwrap();
        out
    };
    let a = run(&plain, "a");
    let b = run(&shuffled, "b");
    for f in ["results.csv", "hourly_coverage.csv", "intervals.csv", "metrics.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
