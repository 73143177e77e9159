use algoformer::Tensor;
use std::time::Instant;

fn main() {
    for (m, k, n) in [(64usize, 64usize, 81usize), (81, 64, 81), (256, 64, 81), (128, 64, 81)] {
        let a = Tensor::<f64>::from_fn(m, k, |i, j| ((i * 7 + j) % 13) as f64 * 0.1);
        let b = Tensor::<f64>::from_fn(k, n, |i, j| ((i * 5 + j) % 11) as f64 * 0.1);
        let iters = 3000;
        let t = Instant::now();
        let mut acc = 0.0;
        for _ in 0..iters {
            let c = a.matmul_plain(&b).unwrap();
            acc += c.data()[0];
        }
        let secs = t.elapsed().as_secs_f64();
        let gf = (2.0 * m as f64 * k as f64 * n as f64 * iters as f64) / secs / 1e9;
        println!("dgemm {}x{}x{}: {:.2} GFLOP/s (acc {acc:.1})", m, k, n, gf);
    }
}
