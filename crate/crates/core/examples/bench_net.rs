use std::time::Instant;
use searecon_core::denoiser::{self, DenoiserConfig, DenoiserParams};
use searecon_core::tensor::Tape;

fn main() {
    let cfg = DenoiserConfig::desk_default(8);
    let params = DenoiserParams::init(&cfg, 1).unwrap();
    let n = 8 * 32 * 64;
    let x: Vec<f32> = (0..n).map(|i| ((i * 73 % 97) as f32 - 48.0) / 30.0).collect();

    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut t = Tape::new();
        let b = denoiser::bind(&mut t, &params, false);
        let xi = t.constant(x.clone(), &[1, 8, 32, 64]).unwrap();
        let _ = denoiser::forward_bound(&mut t, &cfg, &b, xi, 500).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    let t1 = Instant::now();
    for _ in 0..reps {
        let mut t = Tape::new();
        let b = denoiser::bind(&mut t, &params, true);
        let xi = t.constant(x.clone(), &[1, 8, 32, 64]).unwrap();
        let y = denoiser::forward_bound(&mut t, &cfg, &b, xi, 500).unwrap();
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
    }
    let both = t1.elapsed().as_secs_f64() / reps as f64;
    println!("forward: {:.1} ms, fwd+bwd: {:.1} ms (ratio {:.2})", fwd * 1000.0, both * 1000.0, both / fwd);
}
