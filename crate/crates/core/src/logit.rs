//! Closed-form type-I extreme-value kernels.
//!
//! All exponentials are shifted by the largest entry.

use crate::error::{Error, Result};
use crate::model::{Action, ModelSpec, State, ThetaVector, N_ACTIONS};
use crate::scalar::Scalar;

/// Euler–Mascheroni constant, the mean of a standard Gumbel variable.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Anything that assigns a value to a state.
pub trait ValueFunction<F> {
    fn value(&self, s: &State) -> F;
}

impl<F, V: ValueFunction<F> + ?Sized> ValueFunction<F> for &V {
    #[inline]
    fn value(&self, s: &State) -> F {
        (**self).value(s)
    }
}

/// Adapter turning a closure into a [`ValueFunction`].
pub struct FnValue<G>(pub G);

impl<F, G: Fn(&State) -> F> ValueFunction<F> for FnValue<G> {
    #[inline]
    fn value(&self, s: &State) -> F {
        (self.0)(s)
    }
}

/// Alternative-specific values `ū(s,a;θ) + β V(s')`, one per action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionValues<F>(pub [F; N_ACTIONS]);

impl<F: Scalar> ActionValues<F> {
    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn probabilities(&self) -> [F; N_ACTIONS] {
        let mut out = [F::zero(); N_ACTIONS];
        softmax_into(&self.0, &mut out);
        out
    }

    #[inline]
    pub fn emax(&self) -> F {
        F::of(EULER_GAMMA) + lse(&self.0)
    }
}

/// `log Σ exp(v_i)`.
pub fn log_sum_exp<F: Scalar>(values: &[F]) -> Result<F> {
    if values.is_empty() {
        return Err(Error::Empty("log_sum_exp needs at least one value"));
    }
    Ok(lse(values))
}

#[inline]
pub(crate) fn lse<F: Scalar>(values: &[F]) -> F {
    let m = values.iter().copied().fold(F::neg_infinity(), F::max);
    if !m.is_finite() {
        return m;
    }
    let sum: F = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

#[inline]
pub(crate) fn softmax_into<F: Scalar>(values: &[F], out: &mut [F]) {
    let m = values.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &v) in out.iter_mut().zip(values) {
        *o = (v - m).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Multinomial-logit choice probabilities (softmax).
pub fn choice_probabilities<F: Scalar>(values: &[F]) -> Result<Vec<F>> {
    if values.is_empty() {
        return Err(Error::Empty("choice_probabilities needs at least one value"));
    }
    let mut out = vec![F::zero(); values.len()];
    softmax_into(values, &mut out);
    Ok(out)
}

/// `E[ε_a | a chosen] = LSE(v) − v_a + γ`.
pub fn conditional_eps_mean<F: Scalar>(values: &[F], a: usize) -> Result<F> {
    let l = log_sum_exp(values)?;
    let va = values
        .get(a)
        .copied()
        .ok_or(Error::Empty("action slot outside the value vector"))?;
    Ok(l - va + F::of(EULER_GAMMA))
}

/// `ū(s,a;θ) + β V(transition(s,a))` for every action.
pub fn action_values<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    value: &V,
    s: &State,
    theta: &ThetaVector<F>,
) -> Result<ActionValues<F>> {
    if model.is_terminal(s) {
        return Err(Error::TerminalState(s.coords().to_vec()));
    }
    Ok(action_values_unchecked(model, value, s, theta))
}

#[inline]
pub(crate) fn action_values_unchecked<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    value: &V,
    s: &State,
    theta: &ThetaVector<F>,
) -> ActionValues<F> {
    let beta = F::of(model.beta());
    let mut v = [F::zero(); N_ACTIONS];
    for a in Action::ALL {
        let next = model.successor(s, a);
        v[a.index()] = model.reward(s, a, theta) + beta * value.value(&next);
    }
    ActionValues(v)
}

/// Bellman operator `T[V](s,a) = ū + E[ε_a | a] + β V(s')`.
pub fn bellman_operator<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    value: &V,
    s: &State,
    a: Action,
    theta: &ThetaVector<F>,
) -> Result<F> {
    let av = action_values(model, value, s, theta)?;
    let eps = conditional_eps_mean(av.as_slice(), a.index())?;
    Ok(av.0[a.index()] + eps)
}

/// Right-hand side of the Bellman equation, `γ + LSE(action values)`.
pub fn bellman_rhs<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    value: &V,
    s: &State,
    theta: &ThetaVector<F>,
) -> Result<F> {
    Ok(action_values(model, value, s, theta)?.emax())
}

/// `rhs(s) − V(s)`; at terminal states the right-hand side is 0.
pub fn bellman_residual<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    value: &V,
    s: &State,
    theta: &ThetaVector<F>,
) -> F {
    let lhs = value.value(s);
    if model.is_terminal(s) {
        F::zero() - lhs
    } else {
        action_values_unchecked(model, value, s, theta).emax() - lhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_career_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gamma() -> f64 {
        EULER_GAMMA
    }

    #[test]
    fn lse_basic_cases() {
        assert_eq!(log_sum_exp(&[4.2f64]).unwrap(), 4.2);
        assert!((log_sum_exp(&[0.0f64, 0.0, 0.0]).unwrap() - 3f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0f64, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp::<f64>(&[]).is_err());
    }

    #[test]
    fn lse_shift_stability_against_unshifted_formula() {
        // At small offsets the naive formula is exact enough to act as reference.
        let v = [0.3f64, -1.2, 2.5];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        for c in [0.0, 10.0, 500.0, 5000.0] {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            assert!((log_sum_exp(&shifted).unwrap() - (naive + c)).abs() < 1e-9 * (1.0 + c));
        }
    }

    #[test]
    fn uniform_probabilities() {
        let p = choice_probabilities(&[0.0f64, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_match_gumbel_argmax_frequencies() {
        let v = [1.0f64, 2.0, 3.0];
        let p = choice_probabilities(&v).unwrap();
        let draws = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (a, &va) in v.iter().enumerate() {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let x = va - (-u.ln()).ln();
                if x > best_val {
                    best_val = x;
                    best = a;
                }
            }
            counts[best] += 1;
        }
        for a in 0..3 {
            let freq = counts[a] as f64 / draws as f64;
            let se = (p[a] * (1.0 - p[a]) / draws as f64).sqrt();
            assert!((freq - p[a]).abs() < 3.0 * se, "action {a}: {freq} vs {}", p[a]);
        }
    }

    #[test]
    fn eps_mean_cases() {
        assert!((conditional_eps_mean(&[7.0f64], 0).unwrap() - gamma()).abs() < 1e-15);
        for a in 0..3 {
            let e = conditional_eps_mean(&[0.0f64, 0.0, 0.0], a).unwrap();
            assert!((e - (3f64.ln() + gamma())).abs() < 1e-15);
        }
        assert!(conditional_eps_mean(&[0.0f64], 1).is_err());
    }

    #[test]
    fn emax_identity_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let p = choice_probabilities(&v).unwrap();
            let lhs: f64 = (0..3)
                .map(|a| p[a] * (v[a] + conditional_eps_mean(&v, a).unwrap()))
                .sum();
            let rhs = gamma() + log_sum_exp(&v).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn f32_kernels() {
        let p = choice_probabilities(&[1.0f32, 2.0, 3.0]).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((log_sum_exp(&[100.0f32, 100.0]).unwrap() - (100.0 + 2f32.ln())).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn probabilities_form_a_simplex(v in prop::collection::vec(-700.0f64..700.0, 1..6)) {
            let p = choice_probabilities(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn probabilities_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 3),
            c in -500.0f64..500.0,
        ) {
            let p = choice_probabilities(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = choice_probabilities(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn theta() -> ThetaVector<f64> {
        ThetaVector::from_f64([1.0, 2.0, 1.0, 9.0]).unwrap()
    }

    #[test]
    fn bellman_rhs_at_last_decision_age() {
        let m = build_career_model(4, 15, 0.95).unwrap();
        let zero = FnValue(|_: &State| 0.0f64);
        let s = m.state(&[13, 10, 0, 0]).unwrap();
        let rhs = bellman_rhs(&m, &zero, &s, &theta()).unwrap();
        let expected = gamma() + (10f64.exp() + 20f64.exp() + 9f64.exp()).ln();
        assert!((rhs - expected).abs() < 1e-12);
        assert!((rhs - gamma() - 20.000_062_1).abs() < 1e-7);
        let res = bellman_residual(&m, &zero, &s, &theta());
        assert!((res - expected).abs() < 1e-12);
    }

    #[test]
    fn myopic_operator_and_rhs() {
        let m = build_career_model(4, 10, 0.0).unwrap();
        let v = FnValue(|s: &State| s.index() as f64);
        let s = m.state(&[2, 0, 0, 1]).unwrap();
        let th = ThetaVector::from_f64([0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((bellman_rhs(&m, &v, &s, &th).unwrap() - (gamma() + 3f64.ln())).abs() < 1e-14);
        let s = m.state(&[2, 3, 1, 1]).unwrap();
        let t = theta();
        let u: Vec<f64> = Action::ALL.iter().map(|&a| m.reward(&s, a, &t)).collect();
        for a in Action::ALL {
            let op = bellman_operator(&m, &v, &s, a, &t).unwrap();
            let expected = u[a.index()] + conditional_eps_mean(&u, a.index()).unwrap();
            assert!((op - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_with_zero_value_is_flow_utility() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let zero = FnValue(|_: &State| 0.0f64);
        let s = m.state(&[8, 4, 2, 1]).unwrap();
        let t = theta();
        let u: Vec<f64> = Action::ALL.iter().map(|&a| m.reward(&s, a, &t)).collect();
        for a in Action::ALL {
            let op = bellman_operator(&m, &zero, &s, a, &t).unwrap();
            assert!((op - (u[a.index()] + conditional_eps_mean(&u, a.index()).unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_rejects_terminal_state() {
        let m = build_career_model(3, 5, 0.95).unwrap();
        let zero = FnValue(|_: &State| 0.0f64);
        let s = m.state(&[4, 0, 0]).unwrap();
        assert!(bellman_operator(&m, &zero, &s, Action::HOME, &theta()).is_err());
        assert!(bellman_rhs(&m, &zero, &s, &theta()).is_err());
        assert_eq!(bellman_residual(&m, &FnValue(|_: &State| 2.5f64), &s, &theta()), -2.5);
    }

    #[test]
    fn rhs_equals_probability_weighted_operator() {
        let m = build_career_model(4, 8, 0.95).unwrap();
        let v = FnValue(|s: &State| ((s.index() * 7919) % 101) as f64 * 0.37 - 10.0);
        let t = theta();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = m.unpack_state(rng.gen_range(0..m.n_states())).unwrap();
            if m.is_terminal(&s) {
                continue;
            }
            let av = action_values(&m, &v, &s, &t).unwrap();
            let p = av.probabilities();
            let two_route: f64 = Action::ALL
                .iter()
                .map(|&a| p[a.index()] * bellman_operator(&m, &v, &s, a, &t).unwrap())
                .sum();
            assert!((two_route - bellman_rhs(&m, &v, &s, &t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn rhs_monotone_in_successor_values() {
        let m = build_career_model(4, 8, 0.95).unwrap();
        let t = theta();
        let s = m.state(&[3, 2, 1, 0]).unwrap();
        let base = FnValue(|_: &State| 1.0f64);
        let r0 = bellman_rhs(&m, &base, &s, &t).unwrap();
        for a in Action::ALL {
            let bumped_idx = m.transition(&s, a).unwrap().index();
            let bumped = FnValue(move |x: &State| if x.index() == bumped_idx { 3.0 } else { 1.0 });
            assert!(bellman_rhs(&m, &bumped, &s, &t).unwrap() >= r0);
        }
    }

    #[test]
    fn rhs_map_is_a_beta_contraction() {
        let m = build_career_model(3, 4, 0.9).unwrap();
        let t = theta();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let a: Vec<f64> = (0..m.n_states()).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let b: Vec<f64> = (0..m.n_states()).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let va = FnValue(|s: &State| a[s.index()]);
            let vb = FnValue(|s: &State| b[s.index()]);
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let mut image_dist = 0.0f64;
            for s in m.states().filter(|s| !m.is_terminal(s)) {
                let ta = bellman_rhs(&m, &va, &s, &t).unwrap();
                let tb = bellman_rhs(&m, &vb, &s, &t).unwrap();
                image_dist = image_dist.max((ta - tb).abs());
            }
            assert!(image_dist <= 0.9 * dist + 1e-12);
        }
    }
}
