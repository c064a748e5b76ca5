use crate::embed::{check_dims, dot, Embedding};
use crate::scalar::Scalar;

use super::{Adapter, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNce<T> {
    pub loss: T,
    pub positive: T,
    pub negatives: Vec<T>,
}

/// InfoNCE loss from raw similarities.
///
/// With logits `l = s / tau` and `m = max(l)`, the loss is
/// `(m - l_pos) + ln(1 + sum_{j != argmax} exp(l_j - m))`, which stays finite for any `tau > 0`
/// and keeps full relative precision when the positive dominates. The positive wins ties for the
/// argmax.
pub fn infonce_from_scores<T: Scalar>(positive: T, negatives: &[T], tau: T) -> Result<T, TrainError> {
    if !(tau > T::zero()) {
        return Err(TrainError::InvalidTau(tau.as_f64()));
    }
    let l_pos = positive / tau;
    let mut max = l_pos;
    let mut argmax = None;
    for (i, &s) in negatives.iter().enumerate() {
        let l = s / tau;
        if l > max {
            max = l;
            argmax = Some(i);
        }
    }
    let mut tail = if argmax.is_some() { (l_pos - max).exp() } else { T::zero() };
    for (i, &s) in negatives.iter().enumerate() {
        if Some(i) != argmax {
            tail += (s / tau - max).exp();
        }
    }
    Ok((max - l_pos) + tail.ln_1p())
}

/// InfoNCE over unit vectors; similarities are dot products.
pub fn infonce_loss<T: Scalar>(
    query: &Embedding<T>,
    positive: &Embedding<T>,
    negatives: &[Embedding<T>],
    tau: T,
) -> Result<InfoNce<T>, TrainError> {
    let s_pos = query.dot(positive)?;
    let s_neg = negatives
        .iter()
        .map(|n| query.dot(n))
        .collect::<Result<Vec<T>, _>>()?;
    Ok(InfoNce {
        loss: infonce_from_scores(s_pos, &s_neg, tau)?,
        positive: s_pos,
        negatives: s_neg,
    })
}

/// Borrowed base embeddings of one training triple.
#[derive(Debug, Clone)]
pub struct TripleVectors<'a, T> {
    pub query: &'a Embedding<T>,
    pub positive: &'a Embedding<T>,
    pub negatives: Vec<&'a Embedding<T>>,
}

struct Projected<T> {
    z: Vec<T>,
    norm: T,
}

fn project<T: Scalar>(adapter: &Adapter<T>, x: &Embedding<T>) -> Result<Projected<T>, TrainError> {
    check_dims(adapter.dim(), x.dim())?;
    let mut z = adapter.project(x.values());
    let norm = dot(&z, &z).sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(TrainError::ZeroProjection);
    }
    z.iter_mut().for_each(|v| *v /= norm);
    Ok(Projected { z, norm })
}

/// Loss of one triple under `adapter`.
pub fn triple_loss<T: Scalar>(
    adapter: &Adapter<T>,
    triple: &TripleVectors<'_, T>,
    tau: T,
) -> Result<T, TrainError> {
    let q = project(adapter, triple.query)?;
    let p = project(adapter, triple.positive)?;
    let negs = triple
        .negatives
        .iter()
        .map(|n| project(adapter, n).map(|pr| dot(&q.z, &pr.z)))
        .collect::<Result<Vec<T>, _>>()?;
    infonce_from_scores(dot(&q.z, &p.z), &negs, tau)
}

/// Adds `outer((I - z z^T) upstream / |u|, x)` to the row-major gradient.
fn backprop_normalized<T: Scalar>(grad: &mut [T], proj: &Projected<T>, upstream: &[T], x: &[T]) {
    let along = dot(upstream, &proj.z);
    let dim = x.len();
    for (r, row) in grad.chunks_exact_mut(dim).enumerate() {
        let du = (upstream[r] - along * proj.z[r]) / proj.norm;
        if du == T::zero() {
            continue;
        }
        for (g, &xc) in row.iter_mut().zip(x) {
            *g += du * xc;
        }
    }
}

/// Loss of one triple; adds its exact gradient with respect to the adapter weights into `grad`.
pub fn triple_loss_and_grad<T: Scalar>(
    adapter: &Adapter<T>,
    triple: &TripleVectors<'_, T>,
    tau: T,
    grad: &mut [T],
) -> Result<T, TrainError> {
    check_dims(adapter.dim() * adapter.dim(), grad.len())?;
    let q = project(adapter, triple.query)?;
    let docs: Vec<(Projected<T>, &Embedding<T>)> = std::iter::once(triple.positive)
        .chain(triple.negatives.iter().copied())
        .map(|x| project(adapter, x).map(|p| (p, x)))
        .collect::<Result<_, _>>()?;
    let scores: Vec<T> = docs.iter().map(|(p, _)| dot(&q.z, &p.z)).collect();
    let loss = infonce_from_scores(scores[0], &scores[1..], tau)?;

    // dL/ds_j = (softmax_j - [j = 0]) / tau
    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s / tau));
    let weights: Vec<T> = scores.iter().map(|&s| (s / tau - max).exp()).collect();
    let total: T = weights.iter().copied().sum();
    let coeffs: Vec<T> = weights
        .iter()
        .enumerate()
        .map(|(j, &w)| {
            let target = if j == 0 { T::one() } else { T::zero() };
            (w / total - target) / tau
        })
        .collect();

    let dim = adapter.dim();
    let mut dq = vec![T::zero(); dim];
    for ((proj, x), &c) in docs.iter().zip(&coeffs) {
        for (d, &zp) in dq.iter_mut().zip(&proj.z) {
            *d += c * zp;
        }
        let dp: Vec<T> = q.z.iter().map(|&zq| c * zq).collect();
        backprop_normalized(grad, proj, &dp, x.values());
    }
    backprop_normalized(grad, &q, &dq, triple.query.values());
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over all weights.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares the analytic gradient against central finite differences, one triple at a time.
pub fn gradient_check(
    adapter: &Adapter<f64>,
    triples: &[TripleVectors<'_, f64>],
    tau: f64,
    step: f64,
) -> Result<GradCheck, TrainError> {
    const FLOOR: f64 = 1e-8;
    let n = adapter.dim() * adapter.dim();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for triple in triples {
        let mut analytic = vec![0.0; n];
        triple_loss_and_grad(adapter, triple, tau, &mut analytic)?;
        let mut probe = adapter.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let w = adapter.weights()[i];
            probe.weights_mut()[i] = w + step;
            let up = triple_loss(&probe, triple, tau)?;
            probe.weights_mut()[i] = w - step;
            let down = triple_loss(&probe, triple, tau)?;
            probe.weights_mut()[i] = w;
            let numeric = (up - down) / (2.0 * step);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Gradient check on seeded random unit vectors and a random perturbation of the identity.
pub fn gradient_check_random(
    dim: usize,
    triples: usize,
    negatives: usize,
    tau: f64,
    seed: u64,
) -> Result<GradCheck, TrainError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| {
        Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let vecs = (0..triples)
        .map(|_| (0..negatives + 2).map(|_| unit(&mut rng)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let views: Vec<TripleVectors<'_, f64>> = vecs
        .iter()
        .map(|v| TripleVectors { query: &v[0], positive: &v[1], negatives: v[2..].iter().collect() })
        .collect();
    let mut adapter = Adapter::identity(dim);
    for w in adapter.weights_mut() {
        *w += rng.random_range(-0.3..0.3);
    }
    gradient_check(&adapter, &views, tau, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding<f64> {
        Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn equal_scores_give_ln2() {
        for tau in [0.01, 0.1, 1.0, 7.5] {
            let l = infonce_from_scores(0.3_f64, &[0.3], tau).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() <= 1e-12);
        }
    }

    #[test]
    fn no_negatives_is_zero() {
        assert_eq!(infonce_from_scores(0.7_f64, &[], 0.01).unwrap(), 0.0);
    }

    #[test]
    fn tiny_loss_keeps_precision() {
        // ln(1 + e^-40) = 4.248354255291589e-18 to 16 digits.
        let l = infonce_from_scores(0.9_f64, &[0.5], 0.01).unwrap();
        assert!((l - 4.248_354_255_291_589e-18).abs() <= 1e-10 * 4.25e-18, "{l:e}");
    }

    #[test]
    fn rejects_non_positive_tau() {
        assert!(matches!(infonce_from_scores(0.1_f64, &[0.0], 0.0), Err(TrainError::InvalidTau(_))));
        assert!(matches!(infonce_from_scores(0.1_f64, &[0.0], -1.0), Err(TrainError::InvalidTau(_))));
    }

    #[test]
    fn vector_form_matches_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, p) = (unit(&mut rng, 6), unit(&mut rng, 6));
        let negs: Vec<_> = (0..3).map(|_| unit(&mut rng, 6)).collect();
        let r = infonce_loss(&q, &p, &negs, 0.05).unwrap();
        let direct = infonce_from_scores(q.dot(&p).unwrap(), &r.negatives, 0.05).unwrap();
        assert_eq!(r.loss, direct);
        assert!(matches!(
            infonce_loss(&q, &Embedding::basis(3, 0), &[], 0.1),
            Err(TrainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identity_triple_loss_equals_base_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, p) = (unit(&mut rng, 5), unit(&mut rng, 5));
        let negs: Vec<_> = (0..4).map(|_| unit(&mut rng, 5)).collect();
        let t = TripleVectors { query: &q, positive: &p, negatives: negs.iter().collect() };
        let a = triple_loss(&Adapter::identity(5), &t, 0.1).unwrap();
        let b = infonce_loss(&q, &p, &negs, 0.1).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 8;
        let vecs: Vec<Vec<Embedding<f64>>> = (0..5)
            .map(|_| (0..6).map(|_| unit(&mut rng, dim)).collect())
            .collect();
        let triples: Vec<TripleVectors<'_, f64>> = vecs
            .iter()
            .map(|v| TripleVectors { query: &v[0], positive: &v[1], negatives: v[2..].iter().collect() })
            .collect();
        let mut adapter = Adapter::identity(dim);
        for w in adapter.weights_mut() {
            *w += rng.random_range(-0.3..0.3);
        }
        for tau in [0.01, 0.1, 1.0] {
            let check = gradient_check(&adapter, &triples, tau, 1e-5).unwrap();
            assert!(check.max_rel_error < 1e-4, "tau {tau}: {check:?}");
        }
    }

    proptest! {
        #[test]
        fn loss_is_finite_and_non_negative(
            pos in -1.0f64..=1.0,
            negs in prop::collection::vec(-1.0f64..=1.0, 0..20),
        ) {
            let l = infonce_from_scores(pos, &negs, 0.01).unwrap();
            prop_assert!(l.is_finite());
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn adding_a_negative_never_lowers_loss(
            pos in -1.0f64..=1.0,
            negs in prop::collection::vec(-1.0f64..=1.0, 0..10),
            extra in -1.0f64..=1.0,
            tau in 0.01f64..2.0,
        ) {
            let before = infonce_from_scores(pos, &negs, tau).unwrap();
            let mut more = negs.clone();
            more.push(extra);
            let after = infonce_from_scores(pos, &more, tau).unwrap();
            prop_assert!(after >= before - 1e-12 * before.abs().max(1.0));
        }

        #[test]
        fn loss_invariant_under_input_rescaling(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let unit: Vec<Embedding<f64>> = raw.iter().map(|v| Embedding::new(v.clone())).collect();
            let scaled: Vec<Embedding<f64>> = raw.iter().map(|v| Embedding::new(v.iter().map(|x| x * 3.7).collect())).collect();
            let mut adapter = Adapter::identity(6);
            for w in adapter.weights_mut() {
                *w += rng.random_range(-0.2..0.2);
            }
            let t = |v: &'_ [Embedding<f64>]| triple_loss(
                &adapter,
                &TripleVectors { query: &v[0], positive: &v[1], negatives: v[2..].iter().collect() },
                0.05,
            ).unwrap();
            let (a, b) = (t(&unit), t(&scaled));
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
