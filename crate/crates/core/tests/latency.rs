use std::time::Duration;

use pairbench_core::gate::{gate_submission, measure_latency, Extractor, MeasuredProfile, SubmissionMeta, SubtrackRules};
use pairbench_core::Error;

struct Sleeper {
    per_image: Duration,
    dim: usize,
    emitted: usize,
    /// Calls at which to sleep ten times longer.
    slow_calls: Vec<usize>,
    calls: usize,
}

impl Sleeper {
    fn new(ms: u64, dim: usize) -> Self {
        Sleeper {
            per_image: Duration::from_millis(ms),
            dim,
            emitted: dim,
            slow_calls: Vec::new(),
            calls: 0,
        }
    }
}

impl Extractor for Sleeper {
    fn declared_dim(&self) -> usize {
        self.dim
    }

    fn extract(&mut self, input: &[u8]) -> Result<Vec<f32>, String> {
        if input.is_empty() {
            return Err("empty image".into());
        }
        let factor = if self.slow_calls.contains(&self.calls) { 10 } else { 1 };
        self.calls += 1;
        if !self.per_image.is_zero() {
            std::thread::sleep(self.per_image * factor);
        }
        Ok(vec![0.0; self.emitted])
    }
}

fn meta(dim: u32) -> SubmissionMeta {
    SubmissionMeta {
        participant: "stub".into(),
        declared_dim: dim,
        model_bytes: 1 << 20,
        digest: String::new(),
    }
}

fn batch(n: usize) -> Vec<Vec<u8>> {
    (0..n).map(|i| vec![i as u8; 16]).collect()
}

#[test]
fn sleeping_stub_measures_near_its_sleep() {
    let mut stub = Sleeper::new(5, 512);
    let p = measure_latency(&mut stub, &batch(2), 1, 5).unwrap();
    assert!(p.ms_per_image >= 5.0 && p.ms_per_image < 8.0, "{}", p.ms_per_image);
    assert_eq!((p.batch_size, p.warmup, p.reps), (2, 1, 5));
    assert!(gate_submission(&meta(512), &p, &SubtrackRules::ms1m()).pass);
}

#[test]
fn zero_cost_stub_is_under_a_millisecond() {
    let mut stub = Sleeper::new(0, 128);
    let p = measure_latency(&mut stub, &batch(8), 10, 50).unwrap();
    assert!(p.ms_per_image < 1.0);
}

#[test]
fn one_outlier_rep_does_not_flip_the_verdict() {
    // Budget 10 ms, stub at 5 ms; the fourth timed pass runs at 50 ms.
    let mut stub = Sleeper::new(5, 512);
    stub.slow_calls = vec![1 + 3];
    let p = measure_latency(&mut stub, &batch(1), 1, 5).unwrap();
    assert!(p.ms_per_image < 8.0);
    assert!(gate_submission(&meta(512), &p, &SubtrackRules::ms1m()).pass);
}

#[test]
fn emitted_dim_must_match_declared() {
    let mut stub = Sleeper::new(0, 512);
    stub.emitted = 256;
    let err = measure_latency(&mut stub, &batch(1), 0, 3).unwrap_err();
    assert!(matches!(err, Error::ExtractorDim { declared: 512, emitted: 256 }));
    let text = err.to_string();
    assert!(text.contains("512") && text.contains("256"), "{text}");
}

#[test]
fn extractor_failure_names_the_input() {
    let mut stub = Sleeper::new(0, 4);
    let mut inputs = batch(3);
    inputs[2].clear();
    let err = measure_latency(&mut stub, &inputs, 0, 3).unwrap_err();
    assert!(matches!(err, Error::Extractor { index: 2, .. }));
}

#[test]
fn fewer_than_three_reps_is_rejected() {
    let mut stub = Sleeper::new(0, 4);
    assert!(measure_latency(&mut stub, &batch(1), 0, 2).is_err());
}

#[test]
fn verdicts_are_pure() {
    let rules = SubtrackRules::glint360k();
    for ms in [1.0, 19.999, 20.0, 25.0] {
        let p = MeasuredProfile::reported(ms);
        let a = gate_submission(&meta(1025), &p, &rules);
        assert_eq!(a, gate_submission(&meta(1025), &p, &rules));
        assert!(!a.pass && a.reasons.contains(&"feat_dim".to_string()));
        assert_eq!(a.reasons.contains(&"latency".to_string()), ms >= 20.0);
    }
}
