use btme::data::ComparisonArray;
use btme::model::{log_likelihood, BtmeLikelihood, LogLikelihood, ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn binom(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Product of the per-pair binomial probabilities, raised to the importance,
/// then logged once.
fn direct_product(y: &ComparisonArray, d: &[f64], w: &[Vec<f64>], imp: &[f64]) -> f64 {
    let k = y.num_treatments();
    let mut prod = 1.0f64;
    for (j, &g) in imp.iter().enumerate() {
        for r in 0..k {
            for s in (r + 1)..k {
                let n = y.trials(r, s);
                let wins = y.get(j, r, s);
                let p = 1.0 / (1.0 + (-(d[r] * w[r][j] - d[s] * w[s][j])).exp());
                let term = binom(n, wins) * p.powi(wins as i32) * (1.0 - p).powi((n - wins) as i32);
                prod *= term.powf(g);
            }
        }
    }
    prod.ln()
}

fn random_simplex(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).unwrap();
    let x: Vec<f64> = (0..m).map(|_| g.sample(rng)).collect();
    let t: f64 = x.iter().sum();
    x.into_iter().map(|v| v / t).collect()
}

struct Instance {
    y: ComparisonArray,
    d: Vec<f64>,
    w: Vec<Vec<f64>>,
    importances: Vec<f64>,
}

fn random_instance(rng: &mut impl Rng) -> Instance {
    random_instance_with(rng, true)
}

/// `ties = false` makes every pair complementary, the only case in which the
/// upper-triangle likelihood is invariant to treatment order.
fn random_instance_with(rng: &mut impl Rng, ties: bool) -> Instance {
    let k = rng.random_range(2..=4);
    let m = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=3)).collect();
    let mut y = ComparisonArray::zeros(m, sizes.clone());
    for j in 0..m {
        for r in 0..k {
            for s in (r + 1)..k {
                let n = (sizes[r] * sizes[s]) as u64;
                let a = rng.random_range(0..=n);
                let b = if ties { rng.random_range(0..=n - a) } else { n - a };
                y.set(j, r, s, a);
                y.set(j, s, r, b);
            }
        }
    }
    let d = (0..k).map(|_| rng.random::<f64>() * 3.0).collect();
    let w = (0..k).map(|_| random_simplex(rng, m)).collect();
    let importances = (0..m).map(|_| 0.5 + rng.random::<f64>()).collect();
    Instance { y, d, w, importances }
}

#[test]
fn matches_direct_product_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let mut cfg = ModelConfig::new(inst.importances.len());
        cfg.importances = inst.importances.clone();
        let params = ModelParams::from_rows(inst.d.clone(), &inst.w);
        let got = log_likelihood(&inst.y, &params, &cfg).unwrap();
        let want = direct_product(&inst.y, &inst.d, &inst.w, &inst.importances);
        assert!(want.is_finite());
        let rel = (got - want).abs() / want.abs().max(1e-300);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-10, "worst relative error {worst:e}");
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let lik = BtmeLikelihood::new(&inst.y, &inst.importances).unwrap();
        let params = ModelParams::from_rows(inst.d.clone(), &inst.w);
        let grad = lik.grad_d(&params.d, &params.w);
        let h = 1e-6;
        for i in 0..params.d.len() {
            let mut up = params.d.clone();
            let mut dn = params.d.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (lik.log_likelihood(&up, &params.w) - lik.log_likelihood(&dn, &params.w)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-5 * (1.0 + grad[i].abs()),
                "fd {fd} vs {}",
                grad[i]
            );
        }
    }
}

#[test]
fn saturated_differences_stay_finite() {
    let mut y = ComparisonArray::zeros(1, vec![10, 10]);
    y.set(0, 0, 1, 100);
    let lik = BtmeLikelihood::new(&y, &[1.0]).unwrap();
    assert!(lik.log_likelihood(&[0.0, 800.0], &[1.0, 1.0]).is_finite());
    assert!(lik.log_likelihood(&[800.0, 0.0], &[1.0, 1.0]).abs() < 1e-12);
}

proptest! {
    #[test]
    fn relabeling_treatments_leaves_likelihood_unchanged(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance_with(&mut rng, false);
        let k = inst.y.num_treatments();
        let m = inst.y.num_features();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..k).rev() {
            perm.swap(i, prng.random_range(0..=i));
        }
        // new treatment i is old treatment perm[i]
        let sizes: Vec<usize> = perm.iter().map(|&p| inst.y.sample_sizes()[p]).collect();
        let mut y2 = ComparisonArray::zeros(m, sizes);
        for j in 0..m {
            for r in 0..k {
                for s in 0..k {
                    if r != s {
                        y2.set(j, r, s, inst.y.get(j, perm[r], perm[s]));
                    }
                }
            }
        }
        let d2: Vec<f64> = perm.iter().map(|&p| inst.d[p]).collect();
        let w2: Vec<Vec<f64>> = perm.iter().map(|&p| inst.w[p].clone()).collect();
        let a = BtmeLikelihood::new(&inst.y, &inst.importances).unwrap()
            .log_likelihood(&inst.d, &ModelParams::from_rows(inst.d.clone(), &inst.w).w);
        let b = BtmeLikelihood::new(&y2, &inst.importances).unwrap()
            .log_likelihood(&d2, &ModelParams::from_rows(d2.clone(), &w2).w);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn per_treatment_terms_cover_the_total(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let lik = BtmeLikelihood::new(&inst.y, &inst.importances).unwrap();
        let p = ModelParams::from_rows(inst.d.clone(), &inst.w);
        // every pair term is counted once by each of its two treatments
        let twice: f64 = (0..inst.d.len()).map(|k| lik.treatment_log_likelihood(k, &p.d, &p.w)).sum();
        let total = lik.log_likelihood(&p.d, &p.w);
        prop_assert!((twice - 2.0 * total).abs() <= 1e-9 * (1.0 + total.abs()));
    }
}
