//! Multi-start calibration with the start points run sequentially and on the
//! rayon pool. Build with `--no-default-features` to see the fallback, where
//! both groups run sequentially.

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use epicast_core::calibrate::{fit, FitConfig, FitContext, Observed};
use epicast_core::exec::Exec;
use epicast_core::model::{DiseaseParams, Segment, Segments, RHO_DEFAULT};

const DAYS: usize = 80;

fn observed() -> Observed {
    let n = 2e5;
    let params = DiseaseParams {
        n,
        alpha: 0.25,
        gamma_a: 0.1,
        gamma_i: 0.1,
        gamma_w: 0.07,
        rho: RHO_DEFAULT,
        beta: Segments::new(vec![Segment { t: 0.0, v: 0.3 }, Segment { t: 40.0, v: 0.14 }]).unwrap(),
        xi: Segments::constant(0.4),
        omega: Segments::constant(0.03),
        mu_d: Segments::constant(0.08),
    };
    let seed = Observed {
        geo_id: "bench".into(),
        start: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
        population: n,
        active0: 60.0,
        daily: vec![0.0],
        cum: vec![60.0],
        deaths: vec![0.0],
    };
    FitContext::new(&seed, None, Default::default()).synthesize(&params, DAYS).unwrap()
}

fn multi_start(c: &mut Criterion) {
    let obs = observed();
    let mut group = c.benchmark_group("multi_start_fit");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let config = FitConfig {
            initializer_count: 8,
            exec,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &config, |b, cfg| {
            b.iter(|| fit(&obs, &[40.0], cfg, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, multi_start);
criterion_main!(benches);
