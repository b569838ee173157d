//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tape, Tensor};

/// Worst relative error between the analytic gradient and central finite
/// differences (step 1e-5) of the scalar loss `f` over `inputs`.
///
/// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
/// `f` must build the same computation whether its arguments are tracked
/// or not; it is re-evaluated untracked for every perturbed element.
pub fn grad_check<T, F>(inputs: &[Tensor<T>], f: F) -> T
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Tensor<T>,
{
    let tape: Tape<T> = Tape::new();
    let vars: Vec<Tensor<T>> = inputs.iter().map(|t| tape.var(t)).collect();
    let loss = f(&vars);
    assert_eq!(loss.len(), 1, "grad_check loss must be scalar");
    let grads = loss.backward();
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .map(|v| {
            grads
                .wrt(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![T::zero(); v.len()])
        })
        .collect();

    let h = T::from_f64(1e-5).unwrap();
    let floor = T::from_f64(1e-8).unwrap();
    let two = T::from_f64(2.0).unwrap();
    let mut worst = T::zero();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            let eval = |delta: T| -> T {
                let probe: Vec<Tensor<T>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(tj, u)| {
                        if tj == ti {
                            let mut d = u.data().to_vec();
                            d[e] += delta;
                            Tensor::from_vec(d, u.shape().to_vec())
                        } else {
                            u.detach()
                        }
                    })
                    .collect();
                f(&probe).item()
            };
            let numeric = (eval(h) - eval(-h)) / (two * h);
            let a = analytic[ti][e];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Deterministic uniform(-1, 1) tensor for gradient-check inputs.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, shape.to_vec())
}
