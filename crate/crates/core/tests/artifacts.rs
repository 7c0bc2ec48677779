mod common;

use common::*;
use fhcal_core::artifact::*;
use fhcal_core::calibration::{calibrate, CalibrationConfig};
use fhcal_core::{AdviConfig, Estimator, EstimatorConfig, HyperPriorSpec, ModelSpec};
use proptest::prelude::*;

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for data in [fh_data(7, 1), fhv_data(9, 2)] {
        let path = dir.path().join("d.csv");
        write_dataset_csv(&path, &data).unwrap();
        assert_eq!(read_dataset_csv(&path).unwrap(), data);
    }
}

#[test]
fn minimal_dataset_columns_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "domain_id,y,v,x_1\n1,0.5,1,1\n2,-0.25,0.5,1\n").unwrap();
    let d = read_dataset_csv(&path).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.observations()[1].n, 1);
    std::fs::write(&path, "domain_id,y\n1,0.5\n").unwrap();
    assert!(read_dataset_csv(&path).unwrap_err().to_string().contains("`v`"));
    let missing = dir.path().join("absent.csv");
    assert!(read_dataset_csv(&missing).unwrap_err().to_string().contains("absent.csv"));
}

#[test]
fn fit_artifact_round_trip_is_exact() {
    let spec = ModelSpec::fhv(HyperPriorSpec::default());
    let est = EstimatorConfig::Vb(AdviConfig {
        n_posterior_draws: 50,
        ..AdviConfig::default()
    });
    let data = fhv_data(5, 3);
    let art = FitArtifact {
        model: spec.clone(),
        estimator: est.clone(),
        seed: 3,
        fit: est.estimate(&spec, &data, 3).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.json");
    write_json(&path, &art).unwrap();
    let back: FitArtifact = read_json(&path).unwrap();
    assert_eq!(back, art);
    let slim = art.without_draws();
    assert_eq!(slim.fit.n_draws(), 0);
    assert_eq!(slim.fit.summaries, art.fit.summaries);
}

#[test]
fn adjustment_and_interval_files_round_trip() {
    let spec = ModelSpec::fh(HyperPriorSpec::default());
    let data = fh_data(6, 4);
    let est = mocks::Shrinkage::direct(200);
    let fit = est.estimate(&spec, &data, 1).unwrap();
    let cfg = CalibrationConfig {
        replicates: 25,
        ..CalibrationConfig::default()
    };
    let out = calibrate(&fit, &spec, &data, &est, &cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (adj, piv, iv) = (dir.path().join("a.csv"), dir.path().join("p.csv"), dir.path().join("i.csv"));
    write_adjustments_csv(&adj, &out.adjustment).unwrap();
    write_pivot_quantiles_csv(&piv, &out.adjustment).unwrap();
    write_intervals_csv(&iv, &out.intervals).unwrap();
    assert_eq!(read_adjustment(&adj, &piv).unwrap(), out.adjustment);
    let rows = read_intervals_csv(&iv).unwrap();
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[2], out.intervals.m[i]);
        assert_eq!(r[10], out.intervals.pivotal[i].lo);
        assert_eq!(r[11], out.intervals.pivotal[i].hi);
    }
    let text = std::fs::read_to_string(&adj).unwrap();
    assert!(text.starts_with("domain_id,a_i,c_i,A_ok\n"));
    assert_eq!(text.lines().count(), 7);
}

proptest! {
    #[test]
    fn float_text_round_trips(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}
