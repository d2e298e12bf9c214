use std::time::Instant;
use searecon_core::tensor::Tape;

fn time_op(name: &str, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let reps = 50;
    for _ in 0..reps { f(); }
    println!("{name}: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    // level-0 sized tensors: [1,32,32,64]
    let n = 32 * 32 * 64;
    let x: Vec<f32> = (0..n).map(|i| ((i * 73 % 97) as f32 - 48.0) / 30.0).collect();
    let w: Vec<f32> = (0..32 * 32 * 9).map(|i| ((i * 31 % 41) as f32 - 20.0) / 120.0).collect();

    time_op("conv2d 32->32 @32x64 fwd", || {
        let mut t = Tape::new();
        let xi = t.constant(x.clone(), &[1, 32, 32, 64]).unwrap();
        let wi = t.constant(w.clone(), &[32, 32, 3, 3]).unwrap();
        let bi = t.constant(vec![0.0; 32], &[32]).unwrap();
        let _ = t.conv2d(xi, wi, bi, 1, 1).unwrap();
    });
    time_op("conv2d fwd+bwd", || {
        let mut t = Tape::new();
        let xi = t.variable(x.clone(), &[1, 32, 32, 64]).unwrap();
        let wi = t.variable(w.clone(), &[32, 32, 3, 3]).unwrap();
        let bi = t.variable(vec![0.0; 32], &[32]).unwrap();
        let y = t.conv2d(xi, wi, bi, 1, 1).unwrap();
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
    });
    time_op("group_norm fwd", || {
        let mut t = Tape::new();
        let xi = t.constant(x.clone(), &[1, 32, 32, 64]).unwrap();
        let g = t.constant(vec![1.0; 32], &[32]).unwrap();
        let b = t.constant(vec![0.0; 32], &[32]).unwrap();
        let _ = t.group_norm(xi, 8, g, b).unwrap();
    });
    time_op("silu fwd", || {
        let mut t = Tape::new();
        let xi = t.constant(x.clone(), &[1, 32, 32, 64]).unwrap();
        let _ = t.silu(xi).unwrap();
    });
    time_op("silu fwd+bwd", || {
        let mut t = Tape::new();
        let xi = t.variable(x.clone(), &[1, 32, 32, 64]).unwrap();
        let y = t.silu(xi).unwrap();
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
    });
    time_op("mul+sum fwd", || {
        let mut t = Tape::new();
        let a = t.constant(x.clone(), &[n]).unwrap();
        let b = t.constant(x.clone(), &[n]).unwrap();
        let m = t.mul(a, b).unwrap();
        let _ = t.sum_all(m).unwrap();
    });
}
