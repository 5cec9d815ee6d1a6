use phasorwatch_core::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for trial in 0..40 {
        let cx = rng.random_range(-10.0..10.0);
        let cy = rng.random_range(-10.0..10.0);
        let r = rng.random_range(0.01..=10.0f64);
        let n = rng.random_range(3..=100usize);
        let angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let pts: Vec<ComplexSample> = angles.iter()
            .map(|a| ComplexSample { re: cx + r * a.cos(), im: cy + r * a.sin() })
            .collect();
        if trial == 29 {
            println!("trial 29: center ({cx}, {cy}) r {r} n {n}");
            println!("angles: {angles:?}");
            let mut sorted = angles.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let span = sorted.last().unwrap() - sorted.first().unwrap();
            println!("angle span: {span}");
            match fit_circle(&pts) {
                Ok(fit) => println!("fit: center {:?} r {} cond {:.3e}", fit.center, fit.radius, fit.condition),
                Err(e) => println!("fit error: {e}"),
            }
        }
    }
}
