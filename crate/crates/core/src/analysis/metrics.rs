use std::collections::BTreeSet;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;
use crate::sim::Sample;

/// Raw sums for one producer/consumer pair in one replication.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReplicationMetrics {
    pub delay_sum: f64,
    pub received: u64,
    pub gap_sum: u64,
    pub gaps: u64,
    pub issued: u64,
}

impl ReplicationMetrics {
    pub fn mean_delay(&self) -> Option<f64> {
        (self.received > 0).then(|| self.delay_sum / self.received as f64)
    }

    pub fn mean_gap(&self) -> Option<f64> {
        (self.gaps > 0).then(|| self.gap_sum as f64 / self.gaps as f64)
    }

    pub fn pct_received(&self) -> Option<f64> {
        (self.issued > 0).then(|| 100.0 * self.received as f64 / self.issued as f64)
    }
}

/// Reduces the samples of one `(producer, consumer)` pair. Samples of other
/// pairs are ignored; order does not matter.
pub fn pair_metrics(samples: &[Sample], producer: u64, consumer: u64, issued: u64) -> ReplicationMetrics {
    let mut mine: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.producer == producer && s.consumer == consumer)
        .collect();
    mine.sort_by(|a, b| a.recv_time.total_cmp(&b.recv_time).then(a.app_seqno.cmp(&b.app_seqno)));
    let mut m = ReplicationMetrics {
        issued,
        ..Default::default()
    };
    let mut distinct = BTreeSet::new();
    for s in &mine {
        if distinct.insert(s.app_seqno) {
            m.received += 1;
            m.delay_sum += s.delay();
        }
    }
    for w in mine.windows(2) {
        if w[1].app_seqno > w[0].app_seqno {
            m.gap_sum += u64::from(w[1].app_seqno - w[0].app_seqno);
            m.gaps += 1;
        }
    }
    m
}

/// Pooled metrics over replications, with 95% confidence half-widths from
/// the spread of per-replication means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean_delay: f64,
    /// Absent when no two consecutive updates were received.
    pub mean_gap: Option<f64>,
    /// Absent when nothing was issued.
    pub pct_received: Option<f64>,
    pub delay_ci95: Option<f64>,
    pub gap_ci95: Option<f64>,
    pub pct_ci95: Option<f64>,
    pub received: u64,
    pub gaps: u64,
    pub issued: u64,
    pub replications: usize,
}

/// Half-width of the two-sided 95% Student-t interval of the mean of
/// `values`; `None` for fewer than two values.
pub fn student_t_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0).ok()?.inverse_cdf(0.975);
    Some(t * (var / nf).sqrt())
}

pub fn compute_metrics(reps: &[ReplicationMetrics]) -> Result<MetricSummary, AnalysisError> {
    let received: u64 = reps.iter().map(|r| r.received).sum();
    if received == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let delay_sum: f64 = reps.iter().map(|r| r.delay_sum).sum();
    let gap_sum: u64 = reps.iter().map(|r| r.gap_sum).sum();
    let gaps: u64 = reps.iter().map(|r| r.gaps).sum();
    let issued: u64 = reps.iter().map(|r| r.issued).sum();
    let per_rep = |f: fn(&ReplicationMetrics) -> Option<f64>| -> Vec<f64> {
        reps.iter().filter_map(f).collect()
    };
    Ok(MetricSummary {
        mean_delay: delay_sum / received as f64,
        mean_gap: (gaps > 0).then(|| gap_sum as f64 / gaps as f64),
        pct_received: (issued > 0).then(|| 100.0 * received as f64 / issued as f64),
        delay_ci95: student_t_half_width(&per_rep(ReplicationMetrics::mean_delay)),
        gap_ci95: student_t_half_width(&per_rep(ReplicationMetrics::mean_gap)),
        pct_ci95: student_t_half_width(&per_rep(ReplicationMetrics::pct_received)),
        received,
        gaps,
        issued,
        replications: reps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(app_seqno: u32, gen_time: f64, recv_time: f64) -> Sample {
        Sample {
            consumer: 1,
            producer: 0,
            var_id: 0,
            app_seqno,
            gen_time,
            recv_time,
        }
    }

    fn seq(seqnos: &[u32]) -> Vec<Sample> {
        seqnos
            .iter()
            .map(|&n| sample(n, f64::from(n), f64::from(n) + 0.1))
            .collect()
    }

    #[test]
    fn gaps_from_seqnos() {
        let m = pair_metrics(&seq(&[1, 2, 3, 4]), 0, 1, 4);
        assert_eq!(m.mean_gap(), Some(1.0));
        assert_eq!(m.pct_received(), Some(100.0));
        let m = pair_metrics(&seq(&[1, 3, 5]), 0, 1, 6);
        assert_eq!(m.mean_gap(), Some(2.0));
        assert_eq!(m.pct_received(), Some(50.0));
    }

    #[test]
    fn delay_is_mean_of_differences() {
        let s = vec![sample(1, 0.0, 0.25), sample(2, 5.0, 5.35)];
        let m = pair_metrics(&s, 0, 1, 2);
        assert!((m.mean_delay().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn order_and_other_pairs_do_not_matter() {
        let mut s = seq(&[4, 1, 3, 2]);
        s.push(Sample {
            consumer: 9,
            ..sample(7, 0.0, 1.0)
        });
        let m = pair_metrics(&s, 0, 1, 4);
        assert_eq!(m.received, 4);
        assert_eq!(m.mean_gap(), Some(1.0));
    }

    #[test]
    fn no_samples_is_an_error() {
        assert_eq!(compute_metrics(&[]), Err(AnalysisError::NoSamples));
        let empty = pair_metrics(&[], 0, 1, 10);
        assert_eq!(compute_metrics(&[empty]), Err(AnalysisError::NoSamples));
    }

    #[test]
    fn pooled_estimates_and_intervals() {
        let a = pair_metrics(&seq(&[1, 2, 3]), 0, 1, 3);
        let b = pair_metrics(&seq(&[1, 3, 5, 7]), 0, 1, 8);
        let s = compute_metrics(&[a, b]).unwrap();
        assert_eq!(s.received, 7);
        assert_eq!(s.gaps, 5);
        assert!((s.mean_gap.unwrap() - 8.0 / 5.0).abs() < 1e-12);
        assert!((s.pct_received.unwrap() - 700.0 / 11.0).abs() < 1e-12);
        // Two replication means 1 and 2: t(0.975, 1) * 0.5.
        assert!((s.gap_ci95.unwrap() - 12.706_204_736 * 0.5).abs() < 1e-6);
        assert_eq!(compute_metrics(&[a]).unwrap().gap_ci95, None);
    }

    #[test]
    fn t_interval_matches_tables() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        // t(0.975, 4) = 2.776445; sd = sqrt(2.5).
        let hw = student_t_half_width(&v).unwrap();
        assert!((hw - 2.776_445_105 * (2.5f64 / 5.0).sqrt()).abs() < 1e-6);
        assert_eq!(student_t_half_width(&[3.0]), None);
    }

    #[test]
    fn iid_losses_give_gap_of_issued_over_received() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000u32;
        let keep = 0.7;
        let received: Vec<u32> = (1..=n).filter(|_| rng.random_bool(keep)).collect();
        let m = pair_metrics(&seq(&received), 0, 1, u64::from(n));
        let gap = m.mean_gap().unwrap();
        assert!((gap - 1.0 / keep).abs() < 0.01, "{gap}");
        assert!((m.pct_received().unwrap() - 100.0 / gap).abs() < 0.5);
    }

    proptest! {
        #[test]
        fn gap_is_at_least_one(mut seqnos in proptest::collection::btree_set(1u32..10_000, 2..200)) {
            let v: Vec<u32> = std::mem::take(&mut seqnos).into_iter().collect();
            let m = pair_metrics(&seq(&v), 0, 1, 10_000);
            let gap = m.mean_gap().unwrap();
            prop_assert!(gap >= 1.0);
            let span = f64::from(v[v.len() - 1] - v[0]);
            prop_assert!((gap - span / (v.len() - 1) as f64).abs() < 1e-9);
        }
    }
}
