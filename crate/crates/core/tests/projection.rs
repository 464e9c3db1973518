use proptest::prelude::*;

use decap::{project, Embedding, ProjectionConfig, SupportMemory};

fn unit(v: &[f64]) -> Option<Embedding> {
    Embedding::normalize(v).ok().map(|(e, _)| e)
}

/// Memory of `n` rows in `d` dims plus a query, all from plain vectors.
fn instance(max_n: usize, max_d: usize) -> impl Strategy<Value = (SupportMemory, Embedding)> {
    (1..=max_n, 2..=max_d).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
            prop::collection::vec(-1.0f64..1.0, d),
        )
            .prop_filter_map("degenerate vector", |(rows, q)| {
                let mut m = SupportMemory::new(q.len());
                for (i, r) in rows.iter().enumerate() {
                    m.push(&unit(r)?, 1.0, format!("r{i}")).ok()?;
                }
                Some((m, unit(&q)?))
            })
    })
}

fn temperature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1e-6), Just(0.01), Just(1.0 / 150.0), 0.05f64..5.0, Just(1e6)]
}

fn widened(m: &SupportMemory, i: usize) -> Vec<f64> {
    m.row(i).iter().map(|&x| f64::from(x)).collect()
}

/// Direct evaluation in double precision with max subtraction.
fn naive(q: &Embedding, m: &SupportMemory, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..m.len()).map(|i| widened(m, i)).collect();
    let sims: Vec<f64> = rows.iter().map(|r| r.iter().zip(q.as_slice()).map(|(a, b)| a * b).sum()).collect();
    let top = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = sims.iter().map(|s| ((s - top) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut v = vec![0.0; m.dim()];
    for (wi, r) in w.iter().zip(&rows) {
        for (a, b) in v.iter_mut().zip(r) {
            *a += wi * b;
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (w, v.into_iter().map(|x| x / n).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_naive_evaluation((m, q) in instance(100, 16), tau in temperature()) {
        let r = project(&q, &m, &ProjectionConfig::new(tau).unwrap()).unwrap();
        let (w, p) = naive(&q, &m, tau);
        for (a, b) in r.weights.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        for (a, b) in r.projected.as_slice().iter().zip(&p) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn combination_stays_in_hull((m, q) in instance(30, 8), tau in temperature(), f in prop::collection::vec(-1.0f64..1.0, 8)) {
        let r = project(&q, &m, &ProjectionConfig::new(tau).unwrap()).unwrap();
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let apply = |v: &[f64]| v.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        let values: Vec<f64> = (0..m.len()).map(|i| apply(&widened(&m, i))).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x = apply(&r.raw_combination);
        prop_assert!(lo - 1e-12 <= x && x <= hi + 1e-12, "{lo} <= {x} <= {hi}");
    }

    #[test]
    fn permuting_memory_permutes_weights((m, q) in instance(60, 12), tau in temperature(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..m.len()).collect();
        // Fisher-Yates driven by a simple LCG keeps the strategy small
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = m.select(&order);
        let cfg = ProjectionConfig::new(tau).unwrap();
        let a = project(&q, &m, &cfg).unwrap();
        let b = project(&q, &shuffled, &cfg).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert!((b.weights[j] - a.weights[i]).abs() <= 1e-15);
        }
        for (x, y) in a.projected.as_slice().iter().zip(b.projected.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn temperature_limits((m, q) in instance(40, 12)) {
        let sims = m.similarities(&q).unwrap();
        let mut sorted = sims.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let hot = project(&q, &m, &ProjectionConfig::new(1e6).unwrap()).unwrap();
        for w in &hot.weights {
            prop_assert!((w - 1.0 / m.len() as f64).abs() <= 1e-6);
        }
        // a unique argmax needs a margin well above τ for the limit to bite
        prop_assume!(m.len() == 1 || sorted[0] - sorted[1] > 1e-4);
        let best = sims.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let cold = project(&q, &m, &ProjectionConfig::new(1e-6).unwrap()).unwrap();
        for (a, b) in cold.projected.as_slice().iter().zip(m.embedding(best).as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn duplicate_doubles_relative_mass((m, q) in instance(40, 10), pick in any::<prop::sample::Index>(), tau in 0.05f64..5.0) {
        let i = pick.index(m.len());
        let mut dup = m.clone();
        dup.extend_from(&m.select(&[i])).unwrap();
        let cfg = ProjectionConfig::new(tau).unwrap();
        let a = project(&q, &m, &cfg).unwrap().weights;
        let b = project(&q, &dup, &cfg).unwrap().weights;
        let mass_i = b[i] + b[m.len()];
        // compare against any other entry so normalization cancels
        for j in (0..m.len()).filter(|&j| j != i) {
            let before = a[i] / a[j];
            let after = mass_i / b[j];
            prop_assert!((after / before - 2.0).abs() <= 1e-9);
        }
        if m.len() == 1 {
            prop_assert!((b[0] - 0.5).abs() < 1e-15 && (b[1] - 0.5).abs() < 1e-15);
        }
    }
}

#[test]
fn two_entry_hand_value() {
    let mut m = SupportMemory::new(2);
    m.push(&unit(&[1.0, 0.0]).unwrap(), 1.0, "x").unwrap();
    m.push(&unit(&[0.0, 1.0]).unwrap(), 1.0, "y").unwrap();
    let r = project(&unit(&[1.0, 0.0]).unwrap(), &m, &ProjectionConfig::new(1.0).unwrap()).unwrap();
    // e/(1+e) from an independent evaluation
    let w0 = 0.731_058_578_630_004_9;
    assert!((r.weights[0] - w0).abs() < 1e-12);
    assert!((r.weights[1] - (1.0 - w0)).abs() < 1e-12);
    assert!((r.raw_combination[0] - w0).abs() < 1e-12);
    let n = (w0 * w0 + (1.0 - w0) * (1.0 - w0)).sqrt();
    assert!((r.projected.as_slice()[1] - (1.0 - w0) / n).abs() < 1e-12);
}

#[test]
fn sharp_temperature_does_not_overflow() {
    let mut m = SupportMemory::new(3);
    for (i, v) in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]].iter().enumerate() {
        m.push(&unit(v).unwrap(), 1.0, format!("{i}")).unwrap();
    }
    let q = unit(&[0.9, 0.1, 0.0]).unwrap();
    let r = project(&q, &m, &ProjectionConfig::new(1e-6).unwrap()).unwrap();
    assert!(r.weights.iter().all(|w| w.is_finite()));
    assert_eq!(r.weights[0], 1.0);
}
