use ecas_core::model::{BitrateLadder, EcasParams, RadioTrace, ScreenResolution, TraceCategory};
use ecas_core::oracle::{label_dataset, read_dataset, write_dataset, OracleConfig, ParamGrid};
use ecas_core::predictor::{load_prediction_table, ParamsSource, PredictionTable};
use ecas_core::qoe::{export_p1203, import_p1203, metrics_from_record, session_records, QoeWeights};
use ecas_core::sim::download::{step_download, PlaybackState};
use ecas_core::sim::events::Event;
use ecas_core::sim::{run_session, Algorithm, ClientSpec, SessionConfig};

fn stalling_session() -> SessionConfig {
    let samples: Vec<f64> = (0..60).map(|s| if s % 20 < 12 { 3000.0 } else { 40.0 }).collect();
    let t = RadioTrace::new("stall", TraceCategory::Bus, samples).unwrap();
    let c = ClientSpec::new(t, ScreenResolution::R2160p, Algorithm::Tba);
    let mut cfg = SessionConfig::new(vec![c], BitrateLadder::default_ladder(), 120.0);
    cfg.baselines.tba_safety_factor = 1.0;
    cfg
}

#[test]
fn p1203_round_trip() {
    let cfg = stalling_session();
    let out = run_session(&cfg, &ParamsSource::Static(EcasParams::default())).unwrap();
    let rec = &session_records(&out.log).unwrap()[0];
    assert!(!rec.stalls.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("client0.json");
    export_p1203(rec, &path).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["I13"]["segments"].as_array().unwrap().len(), rec.segments.len());
    // startup entry plus one per stall
    assert_eq!(doc["I23"]["stalling"].as_array().unwrap().len(), rec.stalls.len() + 1);

    let back = import_p1203(&path).unwrap();
    let w = QoeWeights::default();
    assert_eq!(metrics_from_record(&back, &w), metrics_from_record(rec, &w));
    assert_eq!(metrics_from_record(&back, &w), out.metrics[0]);
}

#[test]
fn engine_matches_isolated_download() {
    // one client never shares the backhaul, so each transfer can be redone in isolation
    let samples: Vec<f64> = (0..50).map(|s| 300.0 + 97.0 * ((s * 7) % 23) as f64).collect();
    let trace = RadioTrace::new("iso", TraceCategory::Car, samples).unwrap();
    let c = ClientSpec::new(trace.clone(), ScreenResolution::R720p, Algorithm::Bba);
    let cfg = SessionConfig::new(vec![c], BitrateLadder::default_ladder(), 90.0);
    let out = run_session(&cfg, &ParamsSource::Static(EcasParams::default())).unwrap();

    let mut requested = None;
    let mut checked = 0;
    for r in &out.log {
        match &r.event {
            Event::Request { .. } => requested = Some(r.time_s),
            Event::DownloadEnd(d) => {
                let start = requested.take().unwrap();
                let (dt, _) = step_download(
                    &PlaybackState::new(),
                    &trace,
                    d.bitrate_kbps,
                    2.0,
                    &cfg.path,
                    start,
                    1,
                    1,
                )
                .unwrap();
                assert!((dt - d.download_time_s).abs() < 1e-6, "{dt} vs {}", d.download_time_s);
                checked += 1;
            }
            _ => {}
        }
    }
    assert!(checked > 20);
}

#[test]
fn dataset_and_table_round_trip() {
    let grid = ParamGrid {
        switches_penalty_factor: vec![0, 2],
        stalls_penalty_factor: vec![1],
        buffer_threshold_1: vec![2, 3],
        buffer_threshold_2: vec![6],
    };
    let traces: Vec<RadioTrace> = (0..2)
        .map(|k| {
            let samples = (0..12).map(|s| 800.0 + 400.0 * ((s + k) % 4) as f64).collect();
            RadioTrace::new(format!("tr{k}"), TraceCategory::Static, samples).unwrap()
        })
        .collect();
    let samples = label_dataset(&traces, &grid, &OracleConfig::default(), 3).unwrap();
    assert_eq!(samples.len(), 2 * (12 - 4));
    assert_eq!(samples, label_dataset(&traces, &grid, &OracleConfig::default(), 3).unwrap());

    let mut buf = Vec::new();
    write_dataset(&samples, &mut buf).unwrap();
    assert_eq!(read_dataset(buf.as_slice()).unwrap(), samples);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let table = PredictionTable::from_samples(&samples);
    table.write(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = load_prediction_table(&path).unwrap();
    assert_eq!(loaded.total_records, samples.len());
    assert_eq!(loaded.repaired_records, 0);
    for s in &samples {
        assert_eq!(
            loaded.lookup(&s.input.trace_id, s.input.upto_second as u64).unwrap(),
            Some(s.label)
        );
    }
}
