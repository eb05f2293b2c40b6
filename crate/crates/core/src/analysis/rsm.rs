use std::collections::BTreeMap;

use super::AnalysisError;

/// A term of the second-order model, factors indexed from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Intercept,
    Main(usize),
    /// Interaction of factors `i < j`.
    Interaction(usize, usize),
}

impl Term {
    fn sign(self, x: &[i8]) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::Main(i) => f64::from(x[i]),
            Term::Interaction(i, j) => f64::from(x[i] * x[j]),
        }
    }
}

/// Least-squares fit of `y = a0 + sum a_i x_i + sum_{i<j} a_ij x_i x_j`
/// over a full two-level factorial design.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub k: usize,
    /// Every term with its coefficient, intercept first, then main effects,
    /// then interactions in `(i, j)` order.
    pub coefficients: Vec<(Term, f64)>,
    pub sst: f64,
    pub sse: f64,
    /// Coefficient of determination in percent.
    pub r2_pct: f64,
    pub min: f64,
    pub max: f64,
}

impl RegressionModel {
    pub fn coefficient(&self, term: Term) -> f64 {
        self.coefficients
            .iter()
            .find(|(t, _)| *t == term)
            .map_or(0.0, |(_, a)| *a)
    }

    pub fn intercept(&self) -> f64 {
        self.coefficient(Term::Intercept)
    }

    /// Share of the total variation explained by `term`, in percent. Zero
    /// for the intercept and for constant responses.
    pub fn contribution_pct(&self, term: Term) -> f64 {
        if term == Term::Intercept || self.sst == 0.0 {
            return 0.0;
        }
        let a = self.coefficient(term);
        100.0 * (1u64 << self.k) as f64 * a * a / self.sst
    }

    /// Summed contribution of all interaction terms, in percent.
    pub fn interactions_pct(&self) -> f64 {
        self.coefficients
            .iter()
            .filter(|(t, _)| matches!(t, Term::Interaction(..)))
            .map(|(t, _)| self.contribution_pct(*t))
            .sum()
    }

    pub fn predict(&self, x: &[i8]) -> f64 {
        self.coefficients.iter().map(|(t, a)| a * t.sign(x)).sum()
    }
}

fn terms(k: usize) -> Vec<Term> {
    let mut v = vec![Term::Intercept];
    v.extend((0..k).map(Term::Main));
    for i in 0..k {
        for j in i + 1..k {
            v.push(Term::Interaction(i, j));
        }
    }
    v
}

/// Fits the model to responses keyed by factor levels in `{-1, 1}^k`.
/// Orthogonality of the design makes each coefficient the mean of `y`
/// times the term's sign.
pub fn rsm_fit(responses: &BTreeMap<Vec<i8>, f64>) -> Result<RegressionModel, AnalysisError> {
    let incomplete = |m: String| Err(AnalysisError::IncompleteDesign(m));
    let Some(first) = responses.keys().next() else {
        return incomplete("no responses".into());
    };
    let k = first.len();
    if k == 0 || k > 20 {
        return incomplete(format!("{k} factors"));
    }
    for (x, y) in responses {
        if x.len() != k {
            return incomplete(format!("cell {x:?} has {} levels, expected {k}", x.len()));
        }
        if x.iter().any(|l| *l != -1 && *l != 1) {
            return incomplete(format!("cell {x:?} has a level other than -1 or 1"));
        }
        if !y.is_finite() {
            return Err(AnalysisError::InvalidInput(format!("response {y} at {x:?}")));
        }
    }
    let cells = 1usize << k;
    if responses.len() != cells {
        return incomplete(format!("{} of {cells} cells present", responses.len()));
    }
    let n = cells as f64;
    let coefficients: Vec<(Term, f64)> = terms(k)
        .into_iter()
        .map(|t| (t, responses.iter().map(|(x, y)| y * t.sign(x)).sum::<f64>() / n))
        .collect();
    let mut model = RegressionModel {
        k,
        coefficients,
        sst: 0.0,
        sse: 0.0,
        r2_pct: 100.0,
        min: responses.values().copied().fold(f64::INFINITY, f64::min),
        max: responses.values().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let mean = model.intercept();
    model.sst = responses.values().map(|y| (y - mean).powi(2)).sum();
    model.sse = responses.iter().map(|(x, y)| (y - model.predict(x)).powi(2)).sum();
    if model.sst > 0.0 {
        model.r2_pct = 100.0 * (model.sst - model.sse) / model.sst;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(k: usize, f: impl Fn(&[i8]) -> f64) -> BTreeMap<Vec<i8>, f64> {
        (0..1u32 << k)
            .map(|c| {
                let x: Vec<i8> = (0..k).map(|i| if c >> i & 1 == 1 { 1 } else { -1 }).collect();
                let y = f(&x);
                (x, y)
            })
            .collect()
    }

    #[test]
    fn single_factor_line() {
        let m = rsm_fit(&design(1, |x| 3.0 + 2.0 * f64::from(x[0]))).unwrap();
        assert_eq!(m.intercept(), 3.0);
        assert_eq!(m.coefficient(Term::Main(0)), 2.0);
        assert_eq!(m.r2_pct, 100.0);
        assert_eq!(m.contribution_pct(Term::Main(0)), 100.0);
    }

    #[test]
    fn hand_computed_two_factor_example() {
        let r = BTreeMap::from([
            (vec![-1, -1], 1.0),
            (vec![-1, 1], 2.0),
            (vec![1, -1], 3.0),
            (vec![1, 1], 4.0),
        ]);
        let m = rsm_fit(&r).unwrap();
        assert_eq!(m.intercept(), 2.5);
        assert_eq!(m.coefficient(Term::Main(0)), 1.0);
        assert_eq!(m.coefficient(Term::Main(1)), 0.5);
        assert_eq!(m.coefficient(Term::Interaction(0, 1)), 0.0);
        assert_eq!(m.sst, 5.0);
        assert_eq!(m.sse, 0.0);
        assert_eq!(m.contribution_pct(Term::Main(0)), 80.0);
        assert_eq!(m.contribution_pct(Term::Main(1)), 20.0);
        assert_eq!(m.r2_pct, 100.0);
        assert_eq!((m.min, m.max), (1.0, 4.0));
    }

    #[test]
    fn constant_response() {
        let m = rsm_fit(&design(3, |_| 7.0)).unwrap();
        assert_eq!(m.sst, 0.0);
        assert_eq!(m.r2_pct, 100.0);
        assert_eq!(m.contribution_pct(Term::Main(1)), 0.0);
        assert_eq!(m.interactions_pct(), 0.0);
    }

    #[test]
    fn three_way_interaction_is_unexplained() {
        let m = rsm_fit(&design(3, |x| f64::from(x[0] * x[1] * x[2]))).unwrap();
        assert_eq!(m.sst, 8.0);
        assert_eq!(m.sse, 8.0);
        assert_eq!(m.r2_pct, 0.0);
    }

    #[test]
    fn incomplete_designs_are_rejected() {
        let mut r = design(2, |x| f64::from(x[0]));
        r.remove(&vec![1, 1]);
        assert!(matches!(rsm_fit(&r), Err(AnalysisError::IncompleteDesign(_))));
        assert!(rsm_fit(&BTreeMap::new()).is_err());
        let bad = BTreeMap::from([(vec![0], 1.0), (vec![1], 2.0)]);
        assert!(rsm_fit(&bad).is_err());
        let mut mixed = design(1, |_| 1.0);
        mixed.insert(vec![1, 1], 1.0);
        assert!(rsm_fit(&mixed).is_err());
    }

    fn coefficients(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, terms(k).len())
    }

    proptest! {
        #[test]
        fn recovers_second_order_responses(
            (k, alpha) in (1usize..=5).prop_flat_map(|k| (Just(k), coefficients(k)))
        ) {
            let ts = terms(k);
            let m = rsm_fit(&design(k, |x| ts.iter().zip(&alpha).map(|(t, a)| a * t.sign(x)).sum())).unwrap();
            for (t, a) in ts.iter().zip(&alpha) {
                prop_assert!((m.coefficient(*t) - a).abs() < 1e-9, "{t:?}");
            }
            prop_assert!(m.sse < 1e-9 * m.sst.max(1.0));
            prop_assert!((m.r2_pct - 100.0).abs() < 1e-9);
            let squares: f64 = alpha[1..].iter().map(|a| a * a).sum();
            prop_assert!((m.sst - (1u64 << k) as f64 * squares).abs() < 1e-9 * m.sst.max(1.0));
            let total: f64 = ts[1..].iter().map(|t| m.contribution_pct(*t)).sum();
            prop_assert!(total <= 100.0 + 1e-9);
        }

        #[test]
        fn r2_stays_in_range(k in 1usize..=4, ys in proptest::collection::vec(-50.0f64..50.0, 16)) {
            let m = rsm_fit(&design(k, |x| {
                let idx = x.iter().enumerate().map(|(i, l)| usize::from(*l > 0) << i).sum::<usize>();
                ys[idx]
            })).unwrap();
            prop_assert!((-1e-9..=100.0 + 1e-9).contains(&m.r2_pct));
            let total: f64 = m.coefficients.iter().map(|(t, _)| m.contribution_pct(*t)).sum();
            prop_assert!(total <= 100.0 + 1e-9);
        }
    }
}
