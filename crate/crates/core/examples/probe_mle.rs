use sixo_core::dre::generate_training_batch;
use sixo_core::models::{GddModel, StateSpaceModel};
use sixo_core::numerics::RngStream;

// Convex logistic fit: logit(f, x) = sum_ij A[i][j] f_i p_j with p = [x^2, x, 1],
// f the 7 quadratic-head features plus nothing else; plus 3 bias coefficients
// folded in as an eighth constant feature. Newton with a tiny ridge.
const NF: usize = 8; // 7 features + constant
const NP: usize = 3;
const DIM: usize = NF * NP;

fn features(t_max: usize, y: f64, t: usize) -> [f64; NF] {
    let tf = t_max as f64;
    let r = tf - t as f64 + 1.0;
    let rho = 1.0 / r;
    let yh = y / (tf + 1.0).sqrt();
    [yh, t as f64 / tf, rho, yh * rho, yh * yh * rho, yh * yh, r.ln(), 1.0]
}

fn design(t_max: usize, y: f64, t: usize, x: f64) -> [f64; DIM] {
    let f = features(t_max, y, t);
    let p = [x * x, x, 1.0];
    let mut g = [0.0; DIM];
    for i in 0..NF { for j in 0..NP { g[i * NP + j] = f[i] * p[j]; } }
    g
}

fn main() {
    let t_max = 10;
    let model = GddModel::new(t_max, 0.0);
    let m = 65_536;
    let mut rng = RngStream::new(4242).split("mle");
    let batch = generate_training_batch(&model, &mut rng, m);
    let y = batch.observations.value(t_max).unwrap().data().to_vec();

    let mut w = [0.0f64; DIM];
    for iter in 0..40 {
        let mut grad = [0.0f64; DIM];
        let mut hess = [[0.0f64; DIM]; DIM];
        let mut loss = 0.0;
        for t in 1..t_max {
            let pos = batch.positives[t - 1].data();
            let neg = batch.negatives[t - 1].data();
            for i in 0..m {
                for (x, label) in [(pos[i], 1.0), (neg[i], 0.0)] {
                    let g = design(t_max, y[i], t, x);
                    let ell: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
                    let s = 1.0 / (1.0 + (-ell).exp());
                    loss += if label > 0.5 { s.max(1e-300).ln() } else { (1.0 - s).max(1e-300).ln() };
                    let resid = label - s;
                    let wgt = s * (1.0 - s);
                    for a in 0..DIM {
                        grad[a] += resid * g[a];
                        let ga = g[a];
                        if ga != 0.0 {
                            for b in a..DIM { hess[a][b] += wgt * ga * g[b]; }
                        }
                    }
                }
            }
        }
        for a in 0..DIM { for b in 0..a { hess[a][b] = hess[b][a]; } hess[a][a] += 1e-6; }
        // Solve H d = grad by Gaussian elimination.
        let mut aug = vec![[0.0f64; DIM + 1]; DIM];
        for a in 0..DIM { aug[a][..DIM].copy_from_slice(&hess[a]); aug[a][DIM] = grad[a]; }
        for col in 0..DIM {
            let piv = (col..DIM).max_by(|&r1, &r2| aug[r1][col].abs().total_cmp(&aug[r2][col].abs())).unwrap();
            aug.swap(col, piv);
            let p = aug[col][col];
            for r in 0..DIM {
                if r != col && aug[r][col] != 0.0 {
                    let f = aug[r][col] / p;
                    for c in col..=DIM { aug[r][c] -= f * aug[col][c]; }
                }
            }
        }
        let mut step_sq = 0.0;
        for a in 0..DIM { let d = aug[a][DIM] / aug[a][a]; w[a] += d; step_sq += d * d; }
        if iter % 5 == 0 || step_sq.sqrt() < 1e-9 {
            println!("iter {iter}: mean CE {:.6} step {:.2e}", loss / ((m * (t_max - 1)) as f64), step_sq.sqrt());
        }
        if step_sq.sqrt() < 1e-9 { break; }
    }

    // Grid errors of the convex MLE.
    for yv in [2.0, 3.2, 5.0, 10.0] {
        let mut worst: (f64, usize, f64) = (0.0, 0, 0.0);
        for t in 1..t_max {
            let base: f64 = design(t_max, yv, t, 0.0).iter().zip(&w).map(|(a, b)| a * b).sum();
            for xv in [-2.0, -1.0, 1.0, 2.0] {
                let got: f64 = design(t_max, yv, t, xv).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - base;
                let r = (t_max - t + 1) as f64;
                let want = xv * (2.0 * yv - xv) / (2.0 * r);
                let err = (got - want).abs();
                if err > worst.0 { worst = (err, t, xv); }
            }
        }
        println!("y={yv:4.1}: worst grid err {:.4} at t={} x={}", worst.0, worst.1, worst.2);
    }
    let g5: f64 = design(t_max, 10.0, 5, 1.0).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        - design(t_max, 10.0, 5, 0.0).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    println!("t5/y10 gap {:.4} want {:.4}", g5, 19.0 / 12.0);
}
