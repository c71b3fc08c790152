//! Cases file to risk score through the public API only.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use epicast_core::analytics::{build_report, r0, r0_with, risk_report, risk_score, History, RiskThresholds};
use epicast_core::calibrate::{self, fit, FitConfig, FitContext, Observed, ParamName};
use epicast_core::ingest::{self, CaseSeries};
use epicast_core::model::{DiseaseParams, Segment, Segments, RHO_DEFAULT};
use epicast_core::preprocess::{preprocess, PreprocessConfig};
use epicast_core::TimeSeries;

const N: f64 = 3e5;

fn truth() -> DiseaseParams {
    DiseaseParams {
        n: N,
        alpha: 0.25,
        gamma_a: 0.1,
        gamma_i: 0.1,
        gamma_w: 0.07,
        rho: RHO_DEFAULT,
        beta: Segments::new(vec![Segment { t: 0.0, v: 0.29 }, Segment { t: 42.0, v: 0.14 }]).unwrap(),
        xi: Segments::constant(0.4),
        omega: Segments::constant(0.03),
        mu_d: Segments::constant(0.08),
    }
}

fn cases_csv(days: usize) -> String {
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
    let seed = Observed {
        geo_id: "x".into(),
        start,
        population: N,
        active0: 40.0,
        daily: vec![0.0],
        cum: vec![40.0],
        deaths: vec![0.0],
    };
    let obs = FitContext::new(&seed, None, Default::default()).synthesize(&truth(), days).unwrap();
    let series = CaseSeries {
        cum_cases: TimeSeries::new("x", start, obs.cum.iter().map(|v| v.round()).collect()),
        cum_deaths: TimeSeries::new("x", start, obs.deaths.iter().map(|v| v.round()).collect()),
    };
    let mut out = Vec::new();
    ingest::write_cases(&mut out, &BTreeMap::from([("x".to_string(), series)])).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn cases_file_to_forecast_and_risk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cases.csv");
    std::fs::write(&path, cases_csv(90)).unwrap();
    let loaded = ingest::load_cases(&path).unwrap();
    assert!(loaded.rejected.is_empty());
    let series = &loaded.data["x"];

    let pre = preprocess(series, &PreprocessConfig::default()).unwrap();
    assert_eq!(pre.inflections.len(), 1, "{:?}", pre.inflections);
    let obs = Observed::from_preprocessed(&pre, N, None).unwrap();
    let mut config = FitConfig { initializer_count: 6, ..Default::default() };
    for (name, v) in [(ParamName::Alpha, 0.25), (ParamName::GammaA, 0.1), (ParamName::GammaI, 0.1), (ParamName::GammaW, 0.07)] {
        config.fixed.insert(name, v);
    }
    let artifact = fit(&obs, &obs.breakpoints_from(&pre), &config, None).unwrap();
    let best = artifact.best();
    assert!(best.nrmse.daily < 0.02, "{:?}", best.nrmse);
    let beta = best.params.beta.pieces();
    assert!((beta[0].v - 0.29).abs() < 0.03 && (beta[1].v - 0.14).abs() < 0.03, "{beta:?}");

    let fc = calibrate::forecast(&artifact, 28, 5).unwrap();
    assert_eq!(fc.dates.len(), obs.len() + 28);
    let history = History::from_preprocessed(&pre);
    let th = RiskThresholds::default();
    let risk = risk_report(&fc, &history, N, &th).unwrap();
    assert_eq!(risk.current_risk, risk_score(risk.weekly.history, &th));
    let report = build_report(&best.params, &best.trajectory, &fc, &history, N, &th).unwrap();
    let true_r0 = r0(&truth()).unwrap();
    assert!((report.r0 / true_r0 - 1.0).abs() < 0.05, "{} vs {true_r0}", report.r0);
    let second = r0_with(0.14, 0.4, 0.03, &truth()).unwrap();
    assert!(report.r_t < second && report.r_t > 0.5 * second, "{} vs {second}", report.r_t);
}

#[test]
fn risk_extremes() {
    let th = RiskThresholds::default();
    assert_eq!(risk_score([0.0, 0.0, 0.0], &th), 1);
    assert_eq!(risk_score([20.0, 40.0, 80.0], &th), 6);
}
