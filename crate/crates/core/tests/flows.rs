use nalgebra::DMatrix;
use taildep::coverage::{pairwise_coverage_matrix, JointSample};
use taildep::garch::{
    garch_filter_from, garch_fit, garch_forecast_path, garch_reconstruct, garch_simulate, GarchOptions, GarchParams,
};
use taildep::learning::{fit_triangular, FitOptions, QuantileGrid};
use taildep::model_io::{read_model, write_model, ModelFile};
use taildep::{JointSampler, LatentLaw, TriangularModel};

fn params() -> GarchParams {
    GarchParams {
        gamma0: 0.05,
        gamma1: 0.10,
        beta0: 0.05,
        beta1: 0.10,
        beta2: 0.85,
        nu: 6.0,
    }
}

#[test]
fn fitted_model_survives_the_file_format() {
    let truth = TriangularModel::uniform(2, (1.0, 1.0, 1.5), (0.5, 1.0, 1.5)).unwrap();
    let data = truth.sample(20_000, 3).unwrap();
    let fit = fit_triangular(&data, &QuantileGrid::coarse(), LatentLaw::StandardNormal, false, &FitOptions::default())
        .unwrap();
    let model = fit.triangular().unwrap().clone();
    let file = ModelFile::Triangular(model.clone());
    let back = read_model(&write_model(&file)).unwrap();
    assert_eq!(back.sample(1000, 9).unwrap(), model.sample(1000, 9).unwrap());
}

#[test]
fn forecast_path_residuals_rebuild_the_test_returns() {
    let r = garch_simulate(&params(), 3000, 11).unwrap();
    let (train, test) = r.split_at(2000);
    let fit = garch_fit(train, &GarchOptions::default()).unwrap();
    let f = garch_forecast_path(&fit, test);
    assert_eq!(f.residuals.len(), test.len());
    let s2 = fit.params.next_variance(&fit.last_state);
    let rebuilt = garch_reconstruct(&f.residuals, &fit.params, fit.last_state.r, s2);
    for (a, b) in rebuilt.iter().zip(test) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    let again = garch_filter_from(test, &fit.params, fit.last_state.r, s2);
    assert_eq!(again, f);
}

#[test]
fn true_model_backtest_is_calibrated() {
    let innov = TriangularModel::uniform(3, (1.0, 1.0, 1.5), (0.5, 1.0, 1.5)).unwrap();
    let t = 4000;
    let z = innov.sample(t, 21).unwrap();
    let p = params();
    let mut returns = DMatrix::zeros(t, 3);
    let mut forecasts = Vec::new();
    let r0 = p.gamma0 / (1.0 - p.gamma1);
    let s0 = p.unconditional_variance();
    for j in 0..3 {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let (m, sd) = (taildep::stats::mean(&col), taildep::stats::std_dev(&col));
        let e: Vec<f64> = col.iter().map(|x| (x - m) / sd).collect();
        let r = garch_reconstruct(&e, &p, r0, s0);
        for (k, v) in r.iter().enumerate() {
            returns[(k, j)] = *v;
        }
        forecasts.push(garch_filter_from(&r, &p, r0, s0));
    }
    let mut sample = innov.sample(400_000, 22).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let (m, sd) = (taildep::stats::mean(&col), taildep::stats::std_dev(&col));
        sample.column_mut(j).apply(|x| *x = (*x - m) / sd);
    }
    let res = pairwise_coverage_matrix(&returns, &forecasts, &JointSample(sample), 0.01, 1e-7, 5).unwrap();
    assert_eq!(res.len(), 3);
    for c in &res {
        let ideal = c.ideal_violations();
        assert!(
            (c.violations as f64 - ideal).abs() < 4.0 * ideal.sqrt(),
            "pair {:?}: {} violations, ideal {ideal}",
            c.pair,
            c.violations
        );
    }
}
