//! Per-layer neural-atom counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KStrategy {
    Fixed,
    Decremental,
    Incremental,
}

impl std::str::FromStr for KStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "decremental" => Ok(Self::Decremental),
            "incremental" => Ok(Self::Incremental),
            other => Err(Error::InvalidArgument(format!("unknown K strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSchedule {
    pub strategy: KStrategy,
    pub proportion: f64,
    pub counts: Vec<usize>,
}

fn floor_at_least_one(x: f64) -> usize {
    (x.floor() as usize).max(1)
}

/// `K₀ = max(1, ⌊proportion · avg_nodes⌋)`.
///
/// * fixed: every layer uses `K₀`;
/// * decremental: `K_ℓ = max(1, ⌊proportion · K_{ℓ−1}⌋)`;
/// * incremental: the decremental sequence reversed.
pub fn compute_k_schedule(strategy: KStrategy, proportion: f64, avg_nodes: f64, n_layers: usize) -> Result<KSchedule> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidArgument(format!("proportion must be in (0, 1], got {proportion}")));
    }
    if !(avg_nodes >= 1.0) || !avg_nodes.is_finite() {
        return Err(Error::InvalidArgument(format!("average node count must be >= 1, got {avg_nodes}")));
    }
    if n_layers == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one layer".into()));
    }
    let k0 = floor_at_least_one(proportion * avg_nodes);
    let counts = match strategy {
        KStrategy::Fixed => vec![k0; n_layers],
        KStrategy::Decremental | KStrategy::Incremental => {
            let mut counts = Vec::with_capacity(n_layers);
            counts.push(k0);
            for l in 1..n_layers {
                counts.push(floor_at_least_one(proportion * counts[l - 1] as f64));
            }
            if strategy == KStrategy::Incremental {
                counts.reverse();
            }
            counts
        }
    };
    Ok(KSchedule {
        strategy,
        proportion,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn peptides_gcn_configuration() {
        let s = compute_k_schedule(KStrategy::Fixed, 0.15, 150.94, 5).unwrap();
        assert_eq!(s.counts, vec![22; 5]);
    }

    #[test]
    fn decremental_by_hand() {
        let s = compute_k_schedule(KStrategy::Decremental, 0.5, 40.0, 3).unwrap();
        assert_eq!(s.counts, vec![20, 10, 5]);
        let s = compute_k_schedule(KStrategy::Incremental, 0.5, 40.0, 3).unwrap();
        assert_eq!(s.counts, vec![5, 10, 20]);
    }

    #[test]
    fn identity_proportion() {
        assert_eq!(compute_k_schedule(KStrategy::Fixed, 1.0, 7.0, 2).unwrap().counts, vec![7, 7]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(compute_k_schedule(KStrategy::Fixed, 0.0, 10.0, 2).is_err());
        assert!(compute_k_schedule(KStrategy::Fixed, 1.5, 10.0, 2).is_err());
        assert!(compute_k_schedule(KStrategy::Fixed, 0.5, 0.5, 2).is_err());
        assert!(compute_k_schedule(KStrategy::Fixed, 0.5, 10.0, 0).is_err());
        assert!("linear".parse::<KStrategy>().is_err());
        assert_eq!("incremental".parse::<KStrategy>().unwrap(), KStrategy::Incremental);
    }

    proptest! {
        #[test]
        fn counts_are_positive_and_monotone(
            p in 0.001f64..=1.0,
            avg in 1.0f64..500.0,
            layers in 1usize..10,
        ) {
            let fixed = compute_k_schedule(KStrategy::Fixed, p, avg, layers).unwrap().counts;
            let dec = compute_k_schedule(KStrategy::Decremental, p, avg, layers).unwrap().counts;
            let inc = compute_k_schedule(KStrategy::Incremental, p, avg, layers).unwrap().counts;
            for c in [&fixed, &dec, &inc] {
                prop_assert_eq!(c.len(), layers);
                prop_assert!(c.iter().all(|&k| k >= 1));
            }
            prop_assert!(fixed.windows(2).all(|w| w[0] == w[1]));
            prop_assert!(dec.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(inc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(dec[0], fixed[0]);
        }
    }
}
