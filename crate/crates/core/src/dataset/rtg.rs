//! Return-to-go targets used as conditioning values.

use std::fmt::Write as _;

use super::Packet;
use crate::error::{Error, Result};

/// Discounted return of a packet from attempt `k` to its last attempt.
pub fn rtg_vanilla(rewards: &[f64], k: usize, gamma: f64) -> Result<f64> {
    if k >= rewards.len() {
        return Err(Error::domain("attempt index", k));
    }
    Ok(rewards[k..].iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

/// Discounted average of the rewards in `[n, n + window)`, truncated at the
/// end of the stream.
pub fn rtg_davg(rewards: &[f64], n: usize, gamma: f64, window: usize) -> Result<f64> {
    if n >= rewards.len() {
        return Err(Error::domain("stream position", n));
    }
    if window == 0 {
        return Err(Error::domain("window", 0));
    }
    let end = (n + window).min(rewards.len());
    let sum = rewards[n..end].iter().rev().fold(0.0, |acc, r| r + gamma * acc);
    Ok((1.0 - gamma) * sum)
}

/// Lower-interpolation quantile: the `ceil(q n)`-th order statistic.
pub fn lower_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("quantile of no values".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain("quantile", q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Per-CQI conditioning targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CqiTargets {
    pub targets: Vec<f64>,
    /// Quantile over all packets, used for buckets without data.
    pub global: f64,
    /// Number of packets that fell in each bucket.
    pub counts: Vec<usize>,
}

impl CqiTargets {
    pub fn target(&self, cqi: usize) -> f64 {
        self.targets.get(cqi).copied().unwrap_or(self.global)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cqi,target,packets\n");
        for (i, (t, c)) in self.targets.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(s, "{i},{t},{c}");
        }
        s
    }
}

/// The `q`-quantile of first-attempt returns of the packets in each CQI bucket.
///
/// Only complete packets contribute.
pub fn cctr_targets(packets: &[Packet], q: f64, n_cqi: usize, gamma: f64) -> Result<CqiTargets> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_cqi];
    let mut all = Vec::new();
    for p in packets.iter().filter(|p| p.is_complete()) {
        let w = rtg_vanilla(&p.rewards(), 0, gamma)?;
        if let Some(b) = buckets.get_mut(p.first_cqi()) {
            b.push(w);
        }
        all.push(w);
    }
    if all.is_empty() {
        return Err(Error::EmptyDataset("no complete packets for CQI targets".into()));
    }
    let global = lower_quantile(&all, q)?;
    let targets = buckets
        .iter()
        .map(|b| if b.is_empty() { Ok(global) } else { lower_quantile(b, q) })
        .collect::<Result<Vec<_>>>()?;
    Ok(CqiTargets { targets, global, counts: buckets.iter().map(Vec::len).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::tr;
    use proptest::prelude::*;

    fn brute_vanilla(r: &[f64], k: usize, g: f64) -> f64 {
        (k..r.len()).map(|t| g.powi((t - k) as i32) * r[t]).sum()
    }

    #[test]
    fn vanilla_examples() {
        let r = [-0.5, -1.0, 0.7];
        assert!((rtg_vanilla(&r, 0, 0.8).unwrap() - -0.852).abs() < 1e-12);
        assert!((rtg_vanilla(&r, 1, 0.8).unwrap() - -0.44).abs() < 1e-12);
        assert_eq!(rtg_vanilla(&r, 2, 0.8).unwrap(), 0.7);
        assert_eq!(rtg_vanilla(&[1.0, -0.5], 0, 1.0).unwrap(), 0.5);
        assert_eq!(rtg_vanilla(&[0.3], 0, 0.9).unwrap(), 0.3);
        assert!(rtg_vanilla(&r, 3, 0.8).is_err());
    }

    #[test]
    fn davg_examples() {
        let r = vec![0.5; 100];
        let expected = 0.5 * (1.0 - 0.8f64.powi(35));
        assert!((rtg_davg(&r, 0, 0.8, 35).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.499_797_175_9).abs() < 1e-9);
        let long = vec![0.5; 5000];
        assert!((rtg_davg(&long, 0, 0.8, 5000).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rtg_davg(&[0.0; 10], 3, 0.8, 35).unwrap(), 0.0);
        // shorter tail truncates at the end of the stream
        assert!((rtg_davg(&[1.0, 1.0], 1, 0.5, 35).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantile_convention() {
        assert_eq!(lower_quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(lower_quantile(&[4.0, 1.0, 3.0, 2.0], 1.0).unwrap(), 4.0);
        assert_eq!(lower_quantile(&[4.0, 1.0, 3.0, 2.0], 0.1).unwrap(), 1.0);
        assert!(lower_quantile(&[1.0], 0.0).is_err());
        assert!(lower_quantile(&[], 0.5).is_err());
    }

    fn packet(id: u64, cqi: usize, rewards: &[f64]) -> Packet {
        let n = rewards.len();
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let mut t = tr(id, k, r, k as u64, 1, k + 1 == n);
                t.obs.cqi = cqi;
                t
            })
            .collect();
        Packet { packet_id: id, transitions }
    }

    #[test]
    fn cctr_per_bucket() {
        let packets: Vec<Packet> = (0..3).map(|c| packet(c as u64, c, &[0.1 * (c as f64 + 1.0)])).collect();
        for q in [0.1, 0.5, 1.0] {
            let t = cctr_targets(&packets, q, 4, 1.0).unwrap();
            for c in 0..3 {
                assert!((t.target(c) - 0.1 * (c as f64 + 1.0)).abs() < 1e-15);
            }
            // empty bucket falls back to the global quantile
            assert_eq!(t.targets[3], t.global);
        }

        let bucket: Vec<Packet> = [1.0, 2.0, 3.0, 4.0].iter().enumerate().map(|(i, &r)| packet(i as u64, 0, &[r])).collect();
        assert_eq!(cctr_targets(&bucket, 0.5, 1, 1.0).unwrap().target(0), 2.0);
        assert_eq!(cctr_targets(&bucket, 1.0, 1, 1.0).unwrap().target(0), 4.0);
        assert!(cctr_targets(&[], 0.5, 15, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn vanilla_bellman_recursion(r in prop::collection::vec(-3.0f64..1.0, 1..6), g in 0.01f64..1.0) {
            let n = r.len();
            for k in 0..n - 1 {
                let lhs = rtg_vanilla(&r, k, g).unwrap();
                let rhs = r[k] + g * rtg_vanilla(&r, k + 1, g).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
                prop_assert!((lhs - brute_vanilla(&r, k, g)).abs() < 1e-12);
            }
            prop_assert_eq!(rtg_vanilla(&r, n - 1, g).unwrap(), r[n - 1]);
        }

        #[test]
        fn cctr_monotone_in_q(rs in prop::collection::vec(-3.0f64..1.0, 1..30), q1 in 0.01f64..1.0, q2 in 0.01f64..1.0) {
            let packets: Vec<Packet> = rs.iter().enumerate().map(|(i, &r)| packet(i as u64, i % 3, &[r])).collect();
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = cctr_targets(&packets, lo, 3, 1.0).unwrap();
            let b = cctr_targets(&packets, hi, 3, 1.0).unwrap();
            for c in 0..3 {
                prop_assert!(a.target(c) <= b.target(c));
            }
        }
    }
}
