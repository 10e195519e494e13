use pzvem::experiment::*;
use pzvem::parallel::Execution;
use pzvem::synthesis::SynthSpec;

fn config(methods: Vec<MethodSpec>, f0s: Vec<f64>, runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        f0s,
        runs,
        methods,
        ..ExperimentConfig::reference_grid()
    }
}

#[test]
fn rows_cover_the_grid_and_are_sorted() {
    let c = config(
        vec![
            MethodSpec::new(Method::TsLsPz, 5, 5, None),
            MethodSpec::new(Method::Lp2, 10, 0, None),
            MethodSpec::new(Method::VemPz, 5, 5, Some(8)),
            MethodSpec::new(Method::VemPz, 5, 5, Some(1)),
        ],
        vec![300.0, 200.0],
        2,
    );
    let rows = run_experiment(&c, Execution::default()).unwrap();
    assert_eq!(rows.len(), 8);
    let keys: Vec<(String, Option<usize>, f64)> = rows
        .iter()
        .map(|r| (r.method.name().to_string(), r.block_size, r.f0_hz))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)).then(a.2.total_cmp(&b.2)));
    assert_eq!(keys, sorted);
    assert!(rows
        .iter()
        .all(|r| r.runs == 2 && r.failed_runs == 0 && r.sd_mean >= 0.0));
}

#[test]
fn execution_modes_agree_bitwise() {
    let c = config(
        vec![
            MethodSpec::new(Method::Lp1, 10, 0, None),
            MethodSpec::new(Method::VemAp, 10, 0, Some(6)),
        ],
        vec![250.0, 400.0],
        3,
    );
    let seq = run_experiment(&c, Execution::Sequential).unwrap();
    let par = run_experiment(&c, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_csv(&seq, &mut a).unwrap();
    write_csv(&par, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn failures_are_counted_not_fatal() {
    let mut c = config(
        vec![MethodSpec::new(Method::TsLsPz, 5, 5, None)],
        vec![200.0],
        3,
    );
    c.synth = SynthSpec {
        n_samples: 40,
        onset: Some(0),
        ..SynthSpec::nasal_n(200.0, 0)
    };
    let rows = run_experiment(&c, Execution::Sequential).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].failed_runs, 3);
    assert!(rows[0].sd_mean.is_nan());
}

#[test]
fn config_json_round_trip() {
    let c = ExperimentConfig::reference_grid();
    let text = pzvem::io::to_json(pzvem::io::RecordKind::Experiment, &c).unwrap();
    let back: ExperimentConfig =
        pzvem::io::from_json(pzvem::io::RecordKind::Experiment, &text).unwrap();
    assert_eq!(back, c);
}

#[test]
fn methods_share_frames() {
    let c = config(
        vec![MethodSpec::new(Method::Lp2, 10, 0, None)],
        vec![200.0],
        1,
    );
    let a = score_run(&c, &c.methods[0], 0, 0).unwrap();
    let b = score_run(&c, &c.methods[0], 0, 0).unwrap();
    assert_eq!(a, b);
    assert_eq!(c.frame_spec(0, 4).seed, run_seed(c.master_seed, 0, 4));
}
