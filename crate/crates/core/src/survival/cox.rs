//! Cox partial likelihood with risk sets `{j : t_j ≥ t_i}` (ties included).
//!
//! With log-hazard `η = sign · H` the loss is
//! `Σ_{i: δ_i = 1} (−η_i + log Σ_{j ∈ R_i} exp η_j)`. Both the value and the
//! gradient run in `O(n log n)` over the time-sorted cohort with running
//! log-sum-exps, so large scores never overflow.

use crate::error::{Error, Result};
use crate::hetgraph::SurvivalLabel;
use crate::numeric::{Graph, Tensor, Var};
use crate::scalar::Scalar;

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check<T: Scalar>(scores: &[T], labels: &[SurvivalLabel<T>]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::config("cox loss needs at least one patient"));
    }
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

/// Indices sorted by time descending, grouped into runs of equal time.
fn tie_groups<T: Scalar>(labels: &[SurvivalLabel<T>]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].time.partial_cmp(&labels[a].time).expect("finite times"));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if labels[g[0]].time == labels[i].time => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Loss and `dL/dH`.
fn cox_parts<T: Scalar>(scores: &[T], labels: &[SurvivalLabel<T>], sign: T) -> (T, Vec<T>) {
    let eta: Vec<T> = scores.iter().map(|&h| sign * h).collect();
    let groups = tie_groups(labels);

    // Descending sweep: the running LSE after absorbing a tie group is the
    // log-denominator shared by every event in that group.
    let mut lse = T::neg_infinity();
    let mut group_lse = Vec::with_capacity(groups.len());
    let mut loss = T::zero();
    for g in &groups {
        for &j in g {
            lse = log_add(lse, eta[j]);
        }
        group_lse.push(lse);
        for &i in g.iter().filter(|&&i| labels[i].event) {
            loss = loss + lse - eta[i];
        }
    }

    // Ascending sweep: A_j = log Σ_{events i, t_i ≤ t_j} exp(−LSE_i), so
    // dL/dη_j = exp(η_j + A_j) − δ_j.
    let mut grad = vec![T::zero(); scores.len()];
    let mut acc = T::neg_infinity();
    for (g, &l) in groups.iter().zip(&group_lse).rev() {
        for _ in g.iter().filter(|&&i| labels[i].event) {
            acc = log_add(acc, -l);
        }
        for &j in g {
            let share = if acc == T::neg_infinity() { T::zero() } else { (eta[j] + acc).exp() };
            let d = if labels[j].event { T::one() } else { T::zero() };
            grad[j] = sign * (share - d);
        }
    }
    (loss, grad)
}

/// `I_Cox` under the default `η = −H` orientation.
pub fn cox_loss<T: Scalar>(scores: &[T], labels: &[SurvivalLabel<T>]) -> Result<T> {
    cox_loss_signed(scores, labels, -1.0)
}

/// `I_Cox` with log-hazard `sign · H`.
pub fn cox_loss_signed<T: Scalar>(scores: &[T], labels: &[SurvivalLabel<T>], sign: f64) -> Result<T> {
    check(scores, labels)?;
    Ok(cox_parts(scores, labels, T::lit(sign)).0)
}

/// `dI_Cox/dH` with log-hazard `sign · H`.
pub fn cox_gradient<T: Scalar>(scores: &[T], labels: &[SurvivalLabel<T>], sign: f64) -> Result<Vec<T>> {
    check(scores, labels)?;
    Ok(cox_parts(scores, labels, T::lit(sign)).1)
}

impl<T: Scalar> Graph<T> {
    /// Differentiable Cox loss of a length-`n` score vector.
    pub fn cox_loss(&mut self, scores: Var, labels: &[SurvivalLabel<T>], sign: f64) -> Result<Var> {
        let h = self.value(scores).data().to_vec();
        check(&h, labels)?;
        let (loss, grad) = cox_parts(&h, labels, T::lit(sign));
        let shape = self.value(scores).shape().to_vec();
        let grad = Tensor::new(shape, grad)?;
        Ok(self.push(
            Tensor::vector(vec![loss]),
            &[scores],
            Box::new(move |c| vec![Some(grad.scale(c.grad.data()[0]))]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn labels(times: &[f64], events: &[u8]) -> Vec<SurvivalLabel<f64>> {
        times.iter().zip(events).map(|(&t, &e)| SurvivalLabel::new(t, e == 1).unwrap()).collect()
    }

    /// Direct double sum over risk sets.
    fn oracle(h: &[f64], l: &[SurvivalLabel<f64>], sign: f64) -> f64 {
        let mut loss = 0.0;
        for i in 0..h.len() {
            if !l[i].event {
                continue;
            }
            let denom: f64 =
                (0..h.len()).filter(|&j| l[j].time >= l[i].time).map(|j| (sign * h[j]).exp()).sum();
            loss += -sign * h[i] + denom.ln();
        }
        loss
    }

    #[test]
    fn no_events_is_zero() {
        let l = labels(&[1.0, 2.0, 3.0], &[0, 0, 0]);
        assert_eq!(cox_loss(&[0.3, -1.0, 2.0], &l).unwrap(), 0.0);
    }

    #[test]
    fn singleton_is_zero() {
        for h in [-3.0, 0.0, 7.5] {
            assert_eq!(cox_loss(&[h], &labels(&[1.0], &[1])).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_patient_example() {
        let l = labels(&[1.0, 2.0], &[1, 0]);
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let (h1, h2) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let expect = h1 + ((-h1).exp() + (-h2).exp()).ln();
            assert!((cox_loss(&[h1, h2], &l).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(cox_loss::<f64>(&[], &[]), Err(Error::Config(_))));
        assert!(matches!(cox_loss(&[1.0], &labels(&[1.0, 2.0], &[1, 1])), Err(Error::Dimension(_))));
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let l = labels(&[1.0, 2.0, 3.0], &[1, 1, 0]);
        let v = cox_loss(&[800.0, -900.0, 0.0], &l).unwrap();
        assert!(v.is_finite());
        assert!(cox_gradient(&[800.0, -900.0, 0.0], &l, -1.0).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn graph_op_matches_value_and_gradient() {
        let l = labels(&[2.0, 1.0, 2.0, 5.0], &[1, 1, 0, 1]);
        let h = [0.4, -0.2, 1.1, 0.0];
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::vector(h.to_vec()));
        let loss = g.cox_loss(s, &l, -1.0).unwrap();
        let w = g.scale(loss, 3.0);
        g.backward(w).unwrap();
        assert_eq!(g.item(loss), cox_loss(&h, &l).unwrap());
        let expect = cox_gradient(&h, &l, -1.0).unwrap();
        for (a, b) in g.grad(s).unwrap().data().iter().zip(expect) {
            assert!((a - 3.0 * b).abs() < 1e-15);
        }
    }

    fn cohort() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<u8>)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(1u8..=4, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_double_sum((h, t, e) in cohort(), flip in any::<bool>()) {
            let sign = if flip { 1.0 } else { -1.0 };
            let l = labels(&t, &e);
            let v = cox_loss_signed(&h, &l, sign).unwrap();
            prop_assert!((v - oracle(&h, &l, sign)).abs() <= 1e-10);
        }

        #[test]
        fn shift_invariant((h, t, e) in cohort(), c in -50.0f64..50.0) {
            let l = labels(&t, &e);
            let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
            let a = cox_loss(&h, &l).unwrap();
            let b = cox_loss(&shifted, &l).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn gradient_matches_finite_differences((h, t, e) in cohort()) {
            let l = labels(&t, &e);
            let g = cox_gradient(&h, &l, -1.0).unwrap();
            let eps = 1e-6;
            for k in 0..h.len() {
                let mut p = h.clone();
                p[k] += eps;
                let mut m = h.clone();
                m[k] -= eps;
                let fd = (oracle(&p, &l, -1.0) - oracle(&m, &l, -1.0)) / (2.0 * eps);
                let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3);
                prop_assert!(err <= 1e-6, "k={} analytic={} fd={}", k, g[k], fd);
            }
        }
    }
}
