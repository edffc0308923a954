use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::sync::OnceLock;

use olstwin::calib::{
    build_baseline, calibrate, calibrate_with, collect_dataset, cost, dataset_settings, initial_guess, merge,
    CalibOptions, CalibResult, CalibrationDataset, DatasetDesign, DEFAULT_RECORDS,
};
use olstwin::dlm::{extract_line, DetectedLoss, DlmExtract, LumpedKind};
use olstwin::error::Error;
use olstwin::gn::{ParameterSet, Provenance};
use olstwin::line::{Element, NfCurve};
use olstwin::plant::{
    dlm_cd_report, dlm_launch_report, dlm_measure, example_plant, span_loss_report, NoiseSpec, OpticalLinePlant,
};

fn dataset1(p: &OpticalLinePlant, noise: &NoiseSpec, seed: u64) -> DlmExtract {
    let prof = dlm_measure(p, noise, seed).unwrap();
    extract_line(&prof, &p.line)
        .unwrap()
        .with_cd(&dlm_cd_report(p, noise, seed))
        .unwrap()
        .with_launch(&dlm_launch_report(p, noise, seed).unwrap())
        .unwrap()
}

struct Fixture {
    plant: OpticalLinePlant,
    dlm: DlmExtract,
    ds: CalibrationDataset,
    baseline: ParameterSet,
    init: ParameterSet,
    result: CalibResult,
}

/// One noiseless calibration shared by the tests below.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let plant = example_plant();
        let zero = NoiseSpec::zero();
        let dlm = dataset1(&plant, &zero, 0);
        let ds = collect_dataset(&plant, DEFAULT_RECORDS, DatasetDesign::Structured, &zero, 1).unwrap();
        let totals = span_loss_report(&plant, &plant.nominal_settings(), &zero, 0).unwrap();
        let baseline = build_baseline(&plant.line, &totals).unwrap();
        let init = initial_guess(&baseline, &plant.line).unwrap();
        let result = calibrate(&ds, &dlm, &init).unwrap();
        Fixture { plant, dlm, ds, baseline, init, result }
    })
}

#[test]
fn planted_truth_is_recovered_without_noise() {
    let f = fixture();
    for c in &f.result.spans {
        let t = f.plant.line.span(&c.span_id).unwrap();
        let grid = f.plant.line.grid;
        assert!((c.in_connector_db - t.in_connector_db).abs() < 0.1, "{} l0 {}", c.span_id, c.in_connector_db);
        assert!((c.out_connector_db - t.out_connector_db).abs() < 0.1, "{} lL {}", c.span_id, c.out_connector_db);
        assert!((c.alpha_mean_db_km - t.alpha_mean(&grid)).abs() < 0.002, "{} ᾱ", c.span_id);
    }
    assert_eq!(f.result.edfas.len(), 4);
    for c in &f.result.edfas {
        let t = f.plant.line.edfa(&c.edfa_id).unwrap();
        for &(g, nf) in &c.nf_curve.0 {
            let want = t.nf_curve.at(g).0;
            assert!((nf - want).abs() < 0.1, "{} NF at {g} dB: {nf} vs {want}", c.edfa_id);
        }
    }
}

#[test]
fn fit_reaches_the_noiseless_floor() {
    let f = fixture();
    let r = &f.result;
    assert!(r.final_cost.total <= r.initial_cost.total);
    assert!(r.final_cost.total < 1e-4 * r.initial_cost.total, "{:?}", r.final_cost);
    assert!(r.converged);
    let names: Vec<&str> = r.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["losses", "spectral_shape", "noise_figure", "joint", "polish"]);
    for w in r.stages.windows(2) {
        assert!(w[1].best_cost <= w[0].best_cost);
    }
    assert_eq!(r.stages.last().unwrap().best_cost, r.final_cost.total);
    assert!(r.evaluations >= r.stages.iter().map(|s| s.evaluations).sum::<usize>());
}

#[test]
fn truth_parameters_cost_nothing() {
    let f = fixture();
    let truth = ParameterSet::new(f.plant.line.clone(), Provenance::Truth);
    assert!(cost(&truth, &f.ds).unwrap().total < 1e-9);
}

#[test]
fn a_wrong_connector_raises_the_cost() {
    let f = fixture();
    let mut p = ParameterSet::new(f.plant.line.clone(), Provenance::Truth);
    p.line.span_mut("CL 2").unwrap().in_connector_db += 1.0;
    let c = cost(&p, &f.ds).unwrap();
    assert!(c.signal_average > 0.5, "{c:?}");
}

#[test]
fn baseline_spreads_the_remaining_loss_over_the_span() {
    let f = fixture();
    let grid = f.baseline.line.grid;
    let totals: BTreeMap<String, f64> =
        f.plant.line.spans().map(|s| (s.span_id.clone(), s.total_loss_db(&grid))).collect();
    let exact = build_baseline(&f.plant.line, &totals).unwrap();
    let s = exact.line.span("CL 1").unwrap();
    assert!((s.alpha_mean(&grid) - (15.7 - 2.0) / 51.86).abs() < 1e-9);
    assert_eq!((s.in_connector_db, s.out_connector_db), (1.5, 0.5));
    assert!(s.lumped_losses.is_empty());
    assert!((s.total_loss_db(&grid) - 15.7).abs() < 1e-9);
    // From telemetry the totals carry ASE and tilt, a few hundredths of a dB.
    let measured = f.baseline.line.span("CL 1").unwrap();
    assert!((measured.total_loss_db(&grid) - 15.7).abs() < 0.05);
    for e in f.baseline.line.edfas() {
        assert_eq!(e.nf_curve, NfCurve::flat(7.0));
    }
    assert!(f.baseline.line.shared_ripple.values.iter().all(|&v| v == 0.0));
    assert_eq!(f.baseline.provenance, Provenance::Baseline);
}

#[test]
fn baseline_rejects_degenerate_inputs() {
    let f = fixture();
    let mut totals: BTreeMap<String, f64> =
        f.plant.line.spans().map(|s| (s.span_id.clone(), s.total_loss_db(&f.plant.line.grid))).collect();
    let mut line = f.plant.line.clone();
    if let Some(Element::Span(s)) = line.element_mut("CL 1") {
        s.length_km = 0.0;
    }
    assert!(matches!(build_baseline(&line, &totals), Err(Error::Domain(_))));
    totals.remove("CL 3");
    assert!(matches!(build_baseline(&f.plant.line, &totals), Err(Error::Domain(_))));
}

#[test]
fn initial_guess_takes_nonlinearity_from_the_records() {
    let f = fixture();
    for s in f.init.line.spans() {
        let t = f.plant.line.span(&s.span_id).unwrap();
        assert_eq!((s.gamma_w_km, s.a_eff_um2), (t.gamma_w_km, t.a_eff_um2));
        assert_eq!(s.in_connector_db, 1.5);
    }
}

#[test]
fn merge_combines_both_datasets() {
    let f = fixture();
    let m = merge(&f.dlm, &f.result, &f.baseline).unwrap();
    assert_eq!(m.provenance, Provenance::Calibrated);
    let grid = m.line.grid;
    // Carrier link from calibration, access links from the DLM.
    let cl = m.line.span("CL 1").unwrap();
    assert!((cl.in_connector_db - 3.33).abs() < 0.1);
    assert_eq!(cl.lumped_losses.len(), 1);
    assert!((cl.lumped_losses[0].position_km - 25.3).abs() < 1.0);
    assert!((cl.lumped_losses[0].loss_db - 2.25).abs() < 0.1);
    let aal = m.line.span("AAL 1").unwrap();
    let truth = f.plant.line.span("AAL 1").unwrap();
    assert!((aal.alpha_mean(&grid) - truth.alpha_mean(&grid)).abs() < 0.002);
    assert!((aal.in_connector_db + aal.out_connector_db - truth.in_connector_db - truth.out_connector_db).abs() < 0.1);
    for s in m.line.spans() {
        let t = f.plant.line.span(&s.span_id).unwrap();
        assert!((s.dispersion_ps_nm_km - t.dispersion_ps_nm_km).abs() < 1e-6, "{}", s.span_id);
        assert!((s.gamma_w_km - t.gamma_w_km).abs() / t.gamma_w_km < 0.01, "{}", s.span_id);
    }
    assert_eq!(m.line.edfa("CL-BST").unwrap().nf_curve, f.result.edfa("CL-BST").unwrap().nf_curve);
    assert_eq!(m.line.edfa("AAL1-PRE").unwrap().nf_curve, NfCurve::flat(7.0));
    assert!(m.notes.is_empty(), "{:?}", m.notes);
}

#[test]
fn merge_flags_connector_disagreement() {
    let f = fixture();
    let mut dlm = f.dlm.clone();
    let s = dlm.spans.iter_mut().find(|s| s.span_id == "CL 1").unwrap();
    s.lumped.push(DetectedLoss { position_km: 0.0, loss_db: 2.8, kind: LumpedKind::InputConnector });
    s.lumped.push(DetectedLoss { position_km: s.length_km, loss_db: 0.95, kind: LumpedKind::OutputConnector });
    let m = merge(&dlm, &f.result, &f.baseline).unwrap();
    assert_eq!(m.notes.len(), 2, "{:?}", m.notes);
    assert!(m.notes[0].starts_with("conflict: CL 1 input connector"));
    assert!(m.notes[1].starts_with("note: CL 1 output connector"));
    // Calibration wins.
    assert!((m.line.span("CL 1").unwrap().in_connector_db - 3.33).abs() < 0.1);
}

#[test]
fn merge_reports_uncovered_elements() {
    let f = fixture();
    let mut dlm = f.dlm.clone();
    dlm.spans.retain(|s| s.span_id != "AAL 2");
    match merge(&dlm, &f.result, &f.baseline) {
        Err(Error::Merge(ids)) => assert_eq!(ids, ["AAL 2"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn a_single_gain_per_amplifier_is_not_identifiable() {
    let f = fixture();
    let ds = CalibrationDataset { comb: f.ds.comb.clone(), records: f.ds.records[..1].to_vec() };
    assert!(matches!(calibrate(&ds, &f.dlm, &f.init), Err(Error::Identifiability(_))));
    let empty = CalibrationDataset { comb: f.ds.comb.clone(), records: vec![] };
    assert!(matches!(calibrate(&empty, &f.dlm, &f.init), Err(Error::Identifiability(_))));
}

#[test]
fn calibration_can_be_cancelled() {
    let f = fixture();
    let stop = AtomicBool::new(true);
    let opts = CalibOptions { cancel: Some(&stop), ..CalibOptions::default() };
    assert!(matches!(calibrate_with(&f.ds, &f.dlm, &f.init, &opts), Err(Error::Cancelled)));
}

#[test]
fn fit_report_has_one_row_per_record() {
    let f = fixture();
    let csv = f.result.fit_report_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "record,signal_average_db,signal_ripple_db,osnr_average_db,osnr_ripple_db");
    assert_eq!(lines.count(), DEFAULT_RECORDS);
    assert!(f.result.osnr_ripple_margin_db >= 0.0);
}

#[test]
fn dataset_designs_visit_several_gains() {
    let f = fixture();
    let line = f.plant.carrier_link();
    for (design, n) in [(DatasetDesign::Structured, DEFAULT_RECORDS), (DatasetDesign::Randomized { seed: 7 }, 30)] {
        let sets = dataset_settings(&line, n, design);
        assert_eq!(sets.len(), n);
        for e in line.edfas() {
            let mut g: Vec<f64> = sets.iter().map(|s| s.resolve(e).gain_db).collect();
            g.sort_by(f64::total_cmp);
            g.dedup();
            assert!(g.len() >= 2, "{} {design:?}", e.edfa_id);
        }
    }
    assert_eq!(dataset_settings(&line, 1, DatasetDesign::Structured).len(), 1);
}
