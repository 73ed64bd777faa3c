use proptest::prelude::*;

use super::*;
use crate::kernels::RVariant;
use crate::moments::ScalarMoments;

fn moments() -> impl Strategy<Value = ScalarMoments> {
    (-8.0f64..8.0, 0.0f64..25.0).prop_map(|(mean, var)| ScalarMoments { mean, var })
}

fn activations() -> Vec<Activation> {
    vec![
        Activation::Heaviside { assumption: Assumption::Normal },
        Activation::Heaviside { assumption: Assumption::Logistic },
        Activation::Relu { assumption: Assumption::Normal, var: RVariant::Exact },
        Activation::Relu { assumption: Assumption::Normal, var: RVariant::Fitted },
        Activation::Relu { assumption: Assumption::Logistic, var: RVariant::Exact },
        Activation::LeakyRelu { alpha: 0.1, var: RVariant::Exact },
        Activation::LogisticBernoulli { mean: BernoulliMean::Ap2b },
        Activation::LogisticTransform { var: TransformVariance::Heuristic },
        Activation::Probit,
        Activation::NormalCdf,
        Activation::Abs,
    ]
}

proptest! {
    #[test]
    fn activation_outputs_are_finite_with_nonnegative_variance(x in moments()) {
        for act in activations() {
            let (y, _) = act.moments_jac(x);
            prop_assert!(y.mean.is_finite() && y.var.is_finite(), "{} at {x:?}: {y:?}", act.name());
            prop_assert!(y.var >= 0.0, "{} at {x:?}: {y:?}", act.name());
        }
    }

    #[test]
    fn binary_ops_keep_variance_nonnegative(a in moments(), b in moments()) {
        for y in [max2_moments(a, b, RVariant::Exact), max2_moments(a, b, RVariant::Fitted), product_moments(a, b)] {
            prop_assert!(y.var >= 0.0 && y.mean.is_finite());
        }
        let m = max2_moments(a, b, RVariant::Exact);
        prop_assert!(m.mean >= a.mean.max(b.mean) - 1e-9);
    }

    #[test]
    fn softmax_posteriors_are_normalized(logits in prop::collection::vec(moments(), 2..8)) {
        for v in [SoftmaxVariant::Standard, SoftmaxVariant::Normal, SoftmaxVariant::Logistic, SoftmaxVariant::Simplified] {
            let p = softmax_posterior(&logits, v).unwrap();
            let total: f64 = p.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{v:?}: {total}");
        }
    }
}
