//! Small fixed and randomized models shared by the unit tests.

use crate::model::DecPomdpModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 2-state / 2-action / 2-observation model with asymmetric dynamics,
/// noisy observations, and a mix of reward signs.
pub fn two_state_model() -> DecPomdpModel {
    let mut m = DecPomdpModel::zeroed(
        "two-state",
        0.9,
        vec!["s0".into(), "s1".into()],
        [
            vec!["a0".into(), "a1".into()],
            vec!["b0".into(), "b1".into()],
        ],
        [
            vec!["y0".into(), "y1".into()],
            vec!["z0".into(), "z1".into()],
        ],
    );
    m.start = vec![0.7, 0.3];
    for a in 0..2 {
        for b in 0..2 {
            // Staying probability depends on the joint action.
            let stay = 0.2 + 0.15 * (a + 2 * b) as f64;
            for s in 0..2 {
                m.set_t(s, a, b, s, stay);
                m.set_t(s, a, b, 1 - s, 1.0 - stay);
            }
            // Observations are noisy readings of the new state, correlated
            // with different accuracy per agent.
            let (acc1, acc2) = (0.8 - 0.1 * a as f64, 0.6 + 0.1 * b as f64);
            for s2 in 0..2 {
                for y in 0..2 {
                    for z in 0..2 {
                        let py = if y == s2 { acc1 } else { 1.0 - acc1 };
                        let pz = if z == s2 { acc2 } else { 1.0 - acc2 };
                        m.set_o(s2, a, b, y, z, py * pz);
                    }
                }
            }
            for s in 0..2 {
                m.set_r(s, a, b, (s as f64 - 0.5) * 4.0 + a as f64 - 2.0 * b as f64);
            }
        }
    }
    m.validate().unwrap();
    m
}

/// A random model with the given dimensions; rows get sparse support but stay
/// stochastic. Pure function of the seed.
pub fn random_model(
    seed: u64,
    ns: usize,
    na: usize,
    nb: usize,
    ny: usize,
    nz: usize,
    discount: f64,
) -> DecPomdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DecPomdpModel::zeroed(
        format!("random-{seed}"),
        discount,
        (0..ns).map(|i| format!("s{i}")).collect(),
        [
            (0..na).map(|i| format!("a{i}")).collect(),
            (0..nb).map(|i| format!("b{i}")).collect(),
        ],
        [
            (0..ny).map(|i| format!("y{i}")).collect(),
            (0..nz).map(|i| format!("z{i}")).collect(),
        ],
    );
    let row = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        // Keep at least one entry positive; drop others at random for sparsity.
        let keep: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.6).collect();
        let anchor = rng.gen_range(0..n);
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                if keep[i] || i == anchor {
                    rng.gen::<f64>() + 1e-3
                } else {
                    0.0
                }
            })
            .collect();
        let sum: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= sum;
        }
        v
    };
    m.start = row(&mut rng, ns);
    for s in 0..ns {
        for a in 0..na {
            for b in 0..nb {
                let t = row(&mut rng, ns);
                for (s2, p) in t.into_iter().enumerate() {
                    m.set_t(s, a, b, s2, p);
                }
            }
        }
    }
    for s2 in 0..ns {
        for a in 0..na {
            for b in 0..nb {
                let o = row(&mut rng, ny * nz);
                for (yz, p) in o.into_iter().enumerate() {
                    m.set_o(s2, a, b, yz / nz, yz % nz, p);
                }
            }
        }
    }
    for s in 0..ns {
        for a in 0..na {
            for b in 0..nb {
                m.set_r(s, a, b, rng.gen_range(-5.0..5.0));
            }
        }
    }
    m.validate().unwrap();
    m
}
