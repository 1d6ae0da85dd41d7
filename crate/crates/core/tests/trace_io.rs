use lfps::synth::{generate, SyntheticSpec};
use lfps::trace::{read_trace_file, write_trace_file};
use lfps::{LfpsConfig, TraceFile};

#[test]
fn long_trace_roundtrip_through_file() {
    // 131072 prefill rows
    let spec = SyntheticSpec {
        n_prefill: 131_072,
        steps: 3,
        head_dim: 16,
        vertical_positions: vec![100, 90_000],
        slash_offsets: vec![64],
        slash_channels: 12,
        prefill_window: 4,
        ..SyntheticSpec::default()
    };
    let t = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("long.lfps");
    write_trace_file(&t, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), t.header.file_len().unwrap());
    let back = read_trace_file(&path).unwrap();
    assert_eq!(back, t);

    let mut cfg = LfpsConfig::with_head_dim(16);
    cfg.prefill_window = 4;
    let mut s = back.head_session(0, &cfg).unwrap();
    for step in &back.steps {
        let r = &step[0];
        let out = s
            .decode_step(
                &lfps::trace::widen(&r.query),
                &lfps::trace::widen(&r.key),
                &lfps::trace::widen(&r.value),
                0.02,
            )
            .unwrap();
        assert!(out.output.vector().iter().all(|x| x.is_finite()));
    }
    assert_eq!(s.store().len(), 131_075);
}

#[test]
fn truncation_at_every_section_is_rejected() {
    let t = generate(&SyntheticSpec {
        n_prefill: 64,
        steps: 2,
        head_dim: 8,
        vertical_positions: vec![20],
        slash_offsets: vec![],
        prefill_window: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let bytes = t.to_bytes().unwrap();
    for cut in 0..bytes.len() {
        assert!(
            TraceFile::from_bytes(&bytes[..cut]).is_err(),
            "accepted prefix of {cut} bytes"
        );
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(TraceFile::from_bytes(&long).is_err());
}
