use score_bridge::nn::{Arch, ScoreNet};
use std::hint::black_box;

fn main() {
    let arch = Arch {
        dim: 1,
        conditioned_on_x0: false,
        encode_dim: 2,
        time_hidden: vec![],
        time_embed: 1,
        state_hidden: vec![],
        state_embed: 127,
        head_hidden: vec![128, 128],
        leaky_slope: 0.01,
    };
    let net = ScoreNet::<f64>::init(arch, 3).unwrap();
    let xs: Vec<f64> = (0..100).map(|i| (i as f64) * 0.01).collect();
    let mut out = vec![0.0; 100];
    let reps = 2_000;
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        net.forward_batch(0.5, black_box(&xs), None, &mut out).unwrap();
    }
    let dt = t0.elapsed();
    let flops_per_row = 2.0 * (127.0 + 128.0 * 128.0 * 2.0 + 128.0) as f64;
    println!("{:?} -> {:.2} Gflop/s", dt, reps as f64 * 100.0 * flops_per_row / dt.as_secs_f64() / 1e9);
}
