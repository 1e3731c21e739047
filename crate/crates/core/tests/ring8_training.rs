use jtve_core::trainer::{load_training_data, TrainConfig, Trainer};

/// Mean of `energy_pos − energy_neg` over steps 1–100 and 401–500.
fn early_and_late_gap(seed: u64) -> (f64, f64) {
    let mut c = TrainConfig::default();
    c.trainer.seed = seed;
    c.trainer.steps = 500;
    let data = load_training_data(&c).unwrap();
    let mut t = Trainer::new(c, data.train).unwrap();
    let gaps: Vec<f64> = (0..500)
        .map(|_| {
            let m = t.advance().unwrap();
            m.energy_pos - m.energy_neg
        })
        .collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&gaps[..100]), mean(&gaps[400..]))
}

#[test]
fn energy_gap_grows_over_first_500_steps() {
    let mut rises: Vec<f64> = (0..5)
        .map(|seed| {
            let (early, late) = early_and_late_gap(seed);
            println!("seed {seed}: gap {early:.4} -> {late:.4}");
            late - early
        })
        .collect();
    rises.sort_by(f64::total_cmp);
    assert!(rises[2] > 0.0, "median rise {}", rises[2]);
}
