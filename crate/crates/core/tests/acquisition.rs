use photonbench::actuation::advance_drift_in_place;
use photonbench::actuation::VoiceCoilAxis;
use photonbench::emitter_sample::{generate_sample, ChargeState, EmitterSpec, SampleField, SampleSpec};
use photonbench::io::scan_to_json;
use photonbench::profile::{InstrumentProfile, DEMO_FAST_FACTOR};
use photonbench::rng::stream_rng;
use photonbench::scan_engine::{find_spots, run_hbt, run_scan, HbtConfig, PixelModel, ScanConfig, Session};
use proptest::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

fn one_emitter(x: f64, y: f64) -> SampleField {
    SampleField::from_emitters(
        SampleSpec::default(),
        vec![EmitterSpec::new(ChargeState::NvMinus, [x, y, 0.0])],
    )
}

fn small_scan() -> ScanConfig {
    ScanConfig {
        extent: [8.0, 8.0],
        resolution: [24, 24],
        integration_time_ms: 5.0,
        ..ScanConfig::default()
    }
}

fn no_cancel() -> AtomicBool {
    AtomicBool::new(false)
}

#[test]
fn same_seed_same_scan_bytes() {
    let sample = generate_sample(&SampleSpec::default()).unwrap();
    let scan = |seed| {
        let mut s = Session::new("a", InstrumentProfile::lowcost(), sample.clone(), seed).unwrap();
        scan_to_json(&run_scan(&mut s, &small_scan(), &no_cancel(), |_| {}).unwrap()).unwrap()
    };
    assert_eq!(scan(9), scan(9));
    assert_ne!(scan(9), scan(10));
}

#[test]
fn drift_free_scan_replays_exactly() {
    let mut profile = InstrumentProfile::reference();
    profile.actuator.drift_rate_rms = 0.0;
    let mut s = Session::new("a", profile, one_emitter(10.0, 10.0), 1).unwrap();
    let config = ScanConfig {
        rng_seed: Some(5),
        ..small_scan()
    };
    let first = run_scan(&mut s, &config, &no_cancel(), |_| {}).unwrap();
    let second = run_scan(&mut s, &config, &no_cancel(), |_| {}).unwrap();
    assert_eq!(first.counts, second.counts);
    assert!(second.started_at > first.started_at);
}

#[test]
fn scan_clock_advances_by_dwell() {
    let mut s = Session::new("a", InstrumentProfile::lowcost(), one_emitter(10.0, 10.0), 1).unwrap();
    let config = small_scan();
    let img = run_scan(&mut s, &config, &no_cancel(), |_| {}).unwrap();
    assert!((img.wall_duration - config.total_dwell_s()).abs() < 1e-9);
    assert!((s.clock() - config.total_dwell_s()).abs() < 1e-9);
    assert_eq!(img.drift_log.len(), config.resolution[1]);
}

#[test]
fn concurrent_sessions_match_sequential_runs() {
    let sample = generate_sample(&SampleSpec::default()).unwrap();
    let run = |seed: u64| {
        let mut s = Session::new(format!("s{seed}"), InstrumentProfile::lowcost(), sample.clone(), seed).unwrap();
        run_scan(&mut s, &small_scan(), &no_cancel(), |_| {}).unwrap().counts
    };
    let sequential: Vec<_> = (0..4).map(run).collect();
    let parallel: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4).map(|seed| scope.spawn(move || run(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}

/// Poisson fast path against the per-photon HBT chain, beam parked on the emitter.
fn fast_path_vs_photons(mut profile: InstrumentProfile, demo_fast: bool) {
    profile.actuator.drift_rate_rms = 0.0;
    let mut sample = one_emitter(10.0, 10.0);
    if demo_fast {
        profile = profile.with_demo_fast(DEMO_FAST_FACTOR);
        sample.scale_brightness(DEMO_FAST_FACTOR);
    }
    let power = profile.beam.power_mw;
    let mut session = Session::new("c", profile.clone(), sample.clone(), 3).unwrap();
    let command = session.actuator.command_for([10.0, 10.0]).unwrap();
    let beam = session.actuator.beam_position([command[0].volts, command[1].volts]).unwrap();
    let expected = PixelModel::new(&profile, &sample, power, 0.0).unwrap().detected_rate(beam);

    let config = HbtConfig {
        position: [10.0, 10.0],
        duration_s: 10.0,
        ..HbtConfig::default()
    };
    let r = run_hbt(&mut session, &config, &no_cancel(), |_| {}).unwrap();
    let measured = (r.histogram.n_a + r.histogram.n_b) as f64 / 10.0;
    assert!(
        (measured / expected - 1.0).abs() < 0.02,
        "{}: per-photon {measured:.1}/s vs fast path {expected:.1}/s",
        profile.name
    );
}

#[test]
fn fast_path_matches_per_photon_reference() {
    fast_path_vs_photons(InstrumentProfile::reference(), false);
}

#[test]
fn fast_path_matches_per_photon_lowcost() {
    fast_path_vs_photons(InstrumentProfile::lowcost(), false);
}

#[test]
fn fast_path_matches_per_photon_demo_fast() {
    fast_path_vs_photons(InstrumentProfile::reference(), true);
}

#[test]
fn cancelled_hbt_keeps_partial_histogram() {
    let mut s = Session::new("h", InstrumentProfile::reference(), one_emitter(10.0, 10.0), 2).unwrap();
    let cancel = AtomicBool::new(false);
    let config = HbtConfig {
        duration_s: 30.0,
        ..HbtConfig::default()
    };
    let mut last_total = 0;
    let r = run_hbt(&mut s, &config, &cancel, |p| {
        let total = p.histogram.total();
        assert!(total >= last_total);
        last_total = total;
        if p.elapsed_s >= 3.0 {
            cancel.store(true, Ordering::Relaxed);
        }
    })
    .unwrap();
    assert!(r.incomplete);
    assert!((r.achieved_duration_s - 3.0).abs() < 1e-9);
    assert!(r.histogram.total() >= last_total);
    assert!(r.histogram.normalized.is_some());
    assert!(s.begin(photonbench::scan_engine::Activity::Scanning).is_ok());
}

#[test]
fn piezo_drifts_five_times_more_than_opu() {
    let mean_abs_drift = |mut state: photonbench::ActuatorState, seed: u64| {
        let walks = 2000;
        let mut rng = stream_rng(seed, 3);
        let mut sum = 0.0;
        state.drift_offset = [0.0; 2];
        for _ in 0..walks {
            let mut s = state.clone();
            for _ in 0..40 {
                advance_drift_in_place(&mut s, 60.0, &mut rng).unwrap();
            }
            sum += (s.drift_offset[0].powi(2) + s.drift_offset[1].powi(2)).sqrt();
        }
        sum / walks as f64
    };
    let piezo = mean_abs_drift(InstrumentProfile::reference().actuator, 1);
    let opu = mean_abs_drift(InstrumentProfile::lowcost().actuator, 2);
    let ratio = piezo / opu;
    assert!((ratio / 5.0 - 1.0).abs() < 0.2, "ratio {ratio}");
    // Rayleigh mean of a 2D walk: σ·sqrt(π/2), σ = rate·sqrt(40 min / 1 h)
    let sigma = 0.1 * (40.0f64 / 60.0).sqrt();
    assert!((opu / (sigma * (std::f64::consts::PI / 2.0).sqrt()) - 1.0).abs() < 0.05);
}

/// Ellipticity of the spot around a single emitter.
fn spot_ellipticity(profile: InstrumentProfile) -> f64 {
    let profile = profile.with_demo_fast(DEMO_FAST_FACTOR);
    let mut sample = one_emitter(10.0, 10.0);
    sample.scale_brightness(DEMO_FAST_FACTOR);
    let mut s = Session::new("e", profile, sample, 4).unwrap();
    let config = ScanConfig {
        extent: [10.0, 10.0],
        resolution: [50, 50],
        integration_time_ms: 40.0,
        ..ScanConfig::default()
    };
    let img = run_scan(&mut s, &config, &no_cancel(), |_| {}).unwrap();
    let spots = find_spots(&img, 5.0);
    assert_eq!(spots.len(), 1);
    spots[0].ellipticity
}

#[test]
fn gain_mismatch_alone_makes_spots_oval() {
    let mut matched = InstrumentProfile::lowcost();
    matched.actuator.axes[1] = VoiceCoilAxis::opu(15.0);
    matched.actuator.drift_rate_rms = 0.0;
    let mut mismatched = InstrumentProfile::lowcost();
    mismatched.actuator.drift_rate_rms = 0.0;
    let round = spot_ellipticity(matched);
    let oval = spot_ellipticity(mismatched);
    assert!(round < 1.04, "matched gains: {round}");
    assert!((oval - 15.0 / 13.5).abs() < 0.05, "mismatched gains: {oval}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smaller_aperture_never_collects_more(
        z in -3.0f64..3.0,
        zpl in 560.0f64..700.0,
        center in 600.0f64..760.0,
        width in 10.0f64..80.0,
        px in 0.0f64..20.0,
        py in 0.0f64..20.0,
    ) {
        let reference = InstrumentProfile::reference();
        let mut narrow = reference.clone();
        narrow.objective.numerical_aperture = 0.6;
        let mut e = EmitterSpec::new(ChargeState::NvMinus, [10.0, 10.0, z]);
        e.zpl_wavelength_nm = zpl;
        e.sideband_center_nm = center;
        e.sideband_width_nm = width;
        let wide_c = reference.collection(&e, 0.0).unwrap();
        let narrow_c = narrow.collection(&e, 0.0).unwrap();
        prop_assert!(narrow_c <= wide_c);

        let sample = SampleField::from_emitters(SampleSpec::default(), vec![e]);
        let wide = PixelModel::new(&reference, &sample, 10.0, 0.0).unwrap();
        let tight = PixelModel::new(&narrow, &sample, 10.0, 0.0).unwrap();
        prop_assert!(tight.signal_incident_rate([px, py]) <= wide.signal_incident_rate([px, py]));
    }
}

#[test]
fn lowcost_preset_collects_less_than_reference() {
    let e = photonbench::profile::calibration_emitter();
    let reference = InstrumentProfile::reference().collection(&e, 0.0).unwrap();
    let lowcost = InstrumentProfile::lowcost().collection(&e, 0.0).unwrap();
    assert!(lowcost < reference);
}

#[test]
fn kept_tags_reproduce_the_run_histogram() {
    let mut s = Session::new("t", InstrumentProfile::reference(), one_emitter(10.0, 10.0), 8).unwrap();
    let config = HbtConfig {
        duration_s: 3.5,
        keep_tags: true,
        ..HbtConfig::default()
    };
    let r = run_hbt(&mut s, &config, &no_cancel(), |_| {}).unwrap();
    let [a, b] = r.tags.as_ref().unwrap();
    a.validate().unwrap();
    b.validate().unwrap();
    let h = photonbench::correlator::correlate(a, b, &config.spec).unwrap();
    assert_eq!(h.counts, r.histogram.counts);
    assert_eq!((h.n_a, h.n_b, h.duration), (r.histogram.n_a, r.histogram.n_b, r.histogram.duration));
}

#[test]
fn background_only_position_is_flat_and_not_single() {
    let profile = InstrumentProfile::lowcost().with_demo_fast(DEMO_FAST_FACTOR);
    for seed in 0..5 {
        let mut s = Session::new("b", profile.clone(), one_emitter(3.0, 3.0), seed).unwrap();
        let config = HbtConfig {
            position: [15.0, 15.0],
            duration_s: 60.0,
            ..HbtConfig::default()
        };
        let r = run_hbt(&mut s, &config, &no_cancel(), |_| {}).unwrap();
        let fit = photonbench::analysis::fit_g2::<f64>(&r.histogram).unwrap();
        assert!((fit.flat_level - 1.0).abs() < 4.0 * fit.flat_level_sigma, "seed {seed}: flat level {}", fit.flat_level);
        assert_eq!(
            photonbench::analysis::classify_single_emitter(&fit),
            photonbench::analysis::Verdict::NotSingle,
            "seed {seed}: {fit:?}"
        );
    }
}

#[test]
fn lowcost_floor_higher_and_spots_more_oval() {
    let sample = one_emitter(10.0, 10.0);
    let scan = |profile: InstrumentProfile| {
        let mut s = Session::new("f", profile, sample.clone(), 12).unwrap();
        let config = ScanConfig {
            extent: [10.0, 10.0],
            resolution: [50, 50],
            ..ScanConfig::default()
        };
        run_scan(&mut s, &config, &no_cancel(), |_| {}).unwrap()
    };
    let median = |img: &photonbench::scan_engine::ScanImage| {
        let mut v = img.counts.clone();
        v.sort_unstable();
        v[v.len() / 2]
    };
    let reference = scan(InstrumentProfile::reference());
    let lowcost = scan(InstrumentProfile::lowcost());
    assert!(median(&lowcost) > median(&reference));
    let e_ref = find_spots(&reference, 5.0)[0].ellipticity;
    let e_low = find_spots(&lowcost, 5.0)[0].ellipticity;
    assert!(e_low > e_ref, "{e_low} vs {e_ref}");
}
