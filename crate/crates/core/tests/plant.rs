use olstwin::dlm::{extract_line, reconstruct, rms_excluding, separate_gamma_power};
use olstwin::gn::LineState;
use olstwin::line::{AmpSetting, LineSettings};
use olstwin::plant::{dlm_measure, dlm_settings, dlm_truth, example_plant, measure, propagate_true, NoiseSpec};
use olstwin::spectral::lin_to_db;

const TABLE_TOTAL_LOSS: [(&str, f64); 5] =
    [("AAL 1", 11.7), ("CL 1", 15.7), ("CL 2", 16.8), ("CL 3", 16.4), ("AAL 2", 5.0)];

#[test]
fn example_plant_matches_span_table() {
    let p = example_plant();
    let grid = p.grid();
    for (id, total) in TABLE_TOTAL_LOSS {
        let s = p.line.span(id).unwrap();
        assert!((s.total_loss_db(&grid) - total).abs() < 0.01, "{id}");
    }
    let cl1 = p.line.span("CL 1").unwrap();
    assert_eq!(cl1.in_connector_db, 3.33);
    assert_eq!(cl1.out_connector_db, 0.93);
    assert_eq!(cl1.lumped_losses[0].loss_db, 2.25);
    let ids: Vec<&str> = p.line.edfas().map(|e| e.edfa_id.as_str()).collect();
    assert_eq!(ids, ["AAL1-PRE", "CL-BST", "CL-ILA1", "CL-ILA2", "CL-PRE", "AAL2-BST"]);
}

#[test]
fn span_output_is_input_minus_table_loss() {
    let p = example_plant();
    let grid = p.grid();
    let cl1 = p.line.span("CL 1").unwrap();
    let prop = propagate_true(&p, &p.ete_launch(), &p.nominal_settings()).unwrap();
    let stage = prop.stage("CL 1").unwrap();
    let input = prop.input_of("CL 1").unwrap();
    for i in 0..grid.n_channels {
        let drop = lin_to_db(input.signal[i] / stage.state.signal[i]);
        assert!((drop - cl1.loss_db_at(grid.frequency(i))).abs() < 1e-9);
    }
    let mean_drop: f64 = (0..grid.n_channels).map(|i| cl1.loss_db_at(grid.frequency(i))).sum::<f64>() / 40.0;
    assert!((mean_drop - 15.7).abs() < 1e-9);
}

#[test]
fn zero_noise_measurement_is_the_forward_model() {
    let p = example_plant();
    let cl = p.carrier_link();
    let settings = LineSettings::from_line(&cl);
    let rec = measure(&p, &p.comb, &settings, &NoiseSpec::zero(), 1).unwrap();
    let prop = olstwin::gn::propagate(&cl, &LineState::from_dbm(&p.comb.launch_dbm()), &settings).unwrap();
    let rx = prop.output().osa_dbm(&cl.grid);
    assert_eq!(rec.rx_spectrum.values, rx);
    for (id, pout) in &rec.edfa_pout_dbm {
        assert_eq!(*pout, prop.stage(id).unwrap().output_total_dbm);
    }
}

#[test]
fn measurement_is_deterministic_per_seed() {
    let p = example_plant();
    let settings = LineSettings::from_line(&p.carrier_link());
    let a = measure(&p, &p.comb, &settings, &p.noise, 42).unwrap();
    let b = measure(&p, &p.comb, &settings, &p.noise, 42).unwrap();
    let c = measure(&p, &p.comb, &settings, &p.noise, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.rx_spectrum, c.rx_spectrum);
}

#[test]
fn hole_slots_carry_only_noise() {
    let p = example_plant();
    let mut settings = LineSettings::from_line(&p.carrier_link());
    settings.set("CL-BST", AmpSetting::gain(19.4, -1.3));
    let rec = measure(&p, &p.comb, &settings, &NoiseSpec::zero(), 0).unwrap();
    for &h in &p.comb.blocked_slots {
        assert!(rec.rx_spectrum.values[h] < rec.rx_spectrum.values[h + 1] - 15.0);
    }
    assert!(rec.rx_osnr.values.iter().all(|v| v.is_finite() && *v > 15.0 && *v < 45.0));
}

#[test]
fn dlm_recovers_planted_losses_without_noise() {
    let p = example_plant();
    let prof = dlm_measure(&p, &NoiseSpec::zero(), 0).unwrap();
    let ex = extract_line(&prof, &p.line).unwrap();
    assert!(ex.warnings.is_empty(), "{:?}", ex.warnings);
    let f = p.grid().dlm_frequency();
    let prop = propagate_true(&p, &p.ete_launch(), &dlm_settings(&p)).unwrap();
    for (k, s) in p.line.spans().enumerate() {
        let e = &ex.spans[k];
        assert!((e.alpha_dlm_db_km - s.alpha_at(f)).abs() < 1e-4, "{}: {}", s.span_id, e.alpha_dlm_db_km);
        assert_eq!(e.lumped.len(), s.lumped_losses.len(), "{}", s.span_id);
        for (d, t) in e.lumped.iter().zip(&s.lumped_losses) {
            assert!((d.loss_db - t.loss_db).abs() < 0.01);
            assert!(
                (d.position_km - t.position_km).abs() < 0.1,
                "{} {} {:?}",
                d.position_km,
                t.position_km,
                ex.edfa_positions_km
            );
        }
        let pout = if k == 0 {
            prop.input.total_dbm(&p.grid())
        } else {
            let idx = p.line.elements.iter().position(|t| t.element.id() == s.span_id).unwrap();
            prop.stages[idx - 1].output_total_dbm
        };
        let (gamma, _) = separate_gamma_power(e.gamma_p_in, pout, s.in_connector_db).unwrap();
        assert!((gamma - s.gamma_w_km).abs() / s.gamma_w_km < 1e-3, "{}: {gamma}", s.span_id);
    }
}

#[test]
fn dlm_rms_at_default_noise() {
    let p = example_plant();
    let truth = dlm_truth(&p, p.dlm.step_km).unwrap();
    for seed in 0..3 {
        let prof = dlm_measure(&p, &p.noise, seed).unwrap();
        let ex = extract_line(&prof, &p.line).unwrap();
        let rec = reconstruct(&ex, &prof.z_km);
        let rms = rms_excluding(&prof.z_km, &rec, &truth.gamma_p_db, &ex.edfa_positions_km, 3.0);
        assert!(rms < 0.45, "seed {seed}: {rms}");
    }
}

#[test]
fn field_transparency_settings_replay() {
    let p = example_plant();
    let field = [
        ("AAL1-PRE", 21.1, 0.0),
        ("CL-BST", 19.4, -1.3),
        ("CL-ILA1", 15.5, -1.3),
        ("CL-ILA2", 14.9, -1.3),
        ("CL-PRE", 16.8, -1.3),
        ("AAL2-BST", 16.4, -1.5),
    ];
    let mut settings = LineSettings::default();
    for (id, g, t) in field {
        settings.set(id, AmpSetting::gain(g, t));
    }
    let prop = propagate_true(&p, &p.ete_launch(), &settings).unwrap();
    assert!(prop.warnings.is_empty(), "{:?}", prop.warnings);
    for (id, g, _) in field {
        let stage = prop.stage(id).unwrap();
        assert!(!stage.saturated, "{id}");
        assert!((stage.realized_gain_db.unwrap() - g).abs() < 1e-9, "{id}");
    }
    let replay = olstwin::plant::ete_snr_true(&p, &settings).unwrap();
    let nominal = olstwin::plant::ete_snr_true(&p, &p.nominal_settings()).unwrap();
    for (r, n) in replay.iter().zip(&nominal) {
        assert!(r.is_finite() && (10.0..30.0).contains(r), "{r}");
        assert!((r - n).abs() < 0.5, "replay {r} vs nominal {n}");
    }
}
