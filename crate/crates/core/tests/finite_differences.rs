use multifair::model::{loss_subgradient, loss_value, predict, Hypothesis, Individual, LabeledExample, LossKind, LossSpec};
use multifair::residuals::residual_subgradient;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const MARGIN: f64 = 1e-3;

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let l1: f64 = raw.iter().map(|v| f64::abs(*v)).sum();
    let scale = rng.gen_range(0.1..1.0) / l1.max(1e-12);
    raw.into_iter().map(|v| v * scale).collect()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], j: usize) -> f64 {
    let mut up = w.to_vec();
    let mut down = w.to_vec();
    up[j] += STEP;
    down[j] -= STEP;
    (f(&up) - f(&down)) / (2.0 * STEP)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn residual_subgradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(1..7);
        let bound = 2.0;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let x = random_point(&mut rng, n);
        let xp = random_point(&mut rng, n);
        let diff: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
        if dot(&w, &diff).abs() <= MARGIN {
            continue;
        }
        checked += 1;
        let h = Hypothesis::new(w.clone(), bound).unwrap();
        let g = residual_subgradient(
            &h,
            &Individual::new("x", x).unwrap(),
            &Individual::new("y", xp).unwrap(),
        )
        .unwrap();
        for j in 0..n {
            let fd = central_difference(|v| dot(v, &diff).abs(), &w, j);
            assert!((fd - g[j]).abs() <= 1e-4, "coordinate {j}: {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn loss_subgradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for kind in [LossKind::Squared, LossKind::Hinge] {
        let spec = LossSpec::new(kind);
        let mut checked = 0;
        while checked < 1000 {
            let n = rng.gen_range(1..7);
            let bound = 2.0;
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            let x = random_point(&mut rng, n);
            let y = match kind {
                LossKind::Hinge => {
                    if rng.gen() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                LossKind::Squared => rng.gen_range(-1.0..1.0),
            };
            let t = dot(&w, &x);
            if (t.abs() - 1.0).abs() <= MARGIN || (kind == LossKind::Hinge && (1.0 - t.clamp(-1.0, 1.0) * y).abs() <= MARGIN) {
                continue;
            }
            checked += 1;
            let ind = Individual::new("x", x.clone()).unwrap();
            let h = Hypothesis::new(w.clone(), bound).unwrap();
            let g = loss_subgradient(spec, &h, &LabeledExample::new(ind.clone(), y).unwrap()).unwrap();
            let f = |v: &[f64]| {
                let p = predict(&Hypothesis::new(v.to_vec(), bound + 1.0).unwrap(), &ind).unwrap();
                loss_value(spec, p, y).unwrap()
            };
            for j in 0..n {
                let fd = central_difference(f, &w, j);
                assert!((fd - g[j]).abs() <= 1e-4, "{kind:?} coordinate {j}: {fd} vs {}", g[j]);
            }
        }
    }
}
