//! Synthetic bias landscapes: closed-form bias functions over the attribute
//! space that stand in for a real audited model at desk scale.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{enumerate_space, AttributeSpace, AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::nn::softplus;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseTerm {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// A planted high-bias cohort: every vector agreeing with `values` on the
/// `support` indices receives `boost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub support: Vec<usize>,
    pub values: Vec<u8>,
    pub boost: f64,
}

impl Cohort {
    pub fn matches(&self, a: &AttributeVector) -> bool {
        self.support
            .iter()
            .zip(&self.values)
            .all(|(&i, &v)| a.bit(i) == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLandscape {
    pub dimension: usize,
    pub offset: f64,
    pub linear: Vec<f64>,
    #[serde(default)]
    pub pairwise: Vec<PairwiseTerm>,
    #[serde(default)]
    pub cohorts: Vec<Cohort>,
    pub marginals: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_names: Option<Vec<String>>,
}

impl SyntheticLandscape {
    /// Landscape with all weights zero and uniform marginals.
    pub fn flat(dimension: usize) -> Self {
        Self {
            dimension,
            offset: 0.0,
            linear: vec![0.0; dimension],
            pairwise: Vec::new(),
            cohorts: Vec::new(),
            marginals: vec![0.5; dimension],
            noise_sigma: 0.0,
            seed: 0,
            attribute_names: None,
        }
    }

    /// Randomized landscape with a handful of planted cohorts, used by the demo
    /// configuration and the end-to-end tests.
    ///
    /// Cohort supports have three attributes each; matching groups are lifted
    /// well above the bulk of the distribution.
    pub fn planted(dimension: usize, n_cohorts: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(rng::derive_seed(seed, "planted-landscape"));
        let linear = (0..dimension)
            .map(|_| 0.3 * rng::standard_normal(&mut rng))
            .collect();
        let mut pairwise = Vec::new();
        for _ in 0..dimension / 2 {
            let i = rng.gen_range(0..dimension);
            let j = rng.gen_range(0..dimension);
            if i != j {
                pairwise.push(PairwiseTerm {
                    i: i.min(j),
                    j: i.max(j),
                    weight: 0.3 * rng::standard_normal(&mut rng),
                });
            }
        }
        let support_size = 3.min(dimension);
        let cohorts = (0..n_cohorts)
            .map(|_| {
                let mut support = BTreeSet::new();
                while support.len() < support_size {
                    support.insert(rng.gen_range(0..dimension));
                }
                Cohort {
                    support: support.into_iter().collect(),
                    values: (0..support_size).map(|_| rng.gen_range(0..2u8)).collect(),
                    boost: 2.0 + rng.gen_range(0.0..1.0),
                }
            })
            .collect();
        let marginals = (0..dimension).map(|_| rng.gen_range(0.25..0.75)).collect();
        Self {
            dimension,
            offset: -1.5,
            linear,
            pairwise,
            cohorts,
            marginals,
            noise_sigma: 0.5,
            seed,
            attribute_names: None,
        }
    }

    pub fn space(&self) -> AttributeSpace {
        AttributeSpace {
            dimension: self.dimension,
            attribute_names: self.attribute_names.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::invalid("landscape dimension must be at least 1"));
        }
        if self.linear.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.linear.len(),
            });
        }
        if self.marginals.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.marginals.len(),
            });
        }
        if let Some(p) = self.marginals.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(format!(
                "marginal probability {p} outside (0, 1)"
            )));
        }
        for term in &self.pairwise {
            if term.i >= d || term.j >= d {
                return Err(Error::invalid(format!(
                    "pairwise term ({}, {}) out of range",
                    term.i, term.j
                )));
            }
        }
        for cohort in &self.cohorts {
            if cohort.support.len() != cohort.values.len() {
                return Err(Error::invalid("cohort support and values differ in length"));
            }
            if cohort.support.iter().any(|&i| i >= d) || cohort.values.iter().any(|&v| v > 1) {
                return Err(Error::invalid("cohort assignment out of range"));
            }
            if !(cohort.boost >= 0.0) {
                return Err(Error::invalid("cohort boost must be non-negative"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if let Some(names) = &self.attribute_names {
            if names.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: names.len(),
                });
            }
        }
        Ok(())
    }

    /// softplus(offset + linear + pairwise + matched cohort boosts).
    pub fn bias(&self, a: &AttributeVector) -> Result<f64> {
        a.check_dimension(self.dimension)?;
        let mut x = self.offset;
        for (w, bit) in self.linear.iter().zip(a.as_f64()) {
            x += w * bit;
        }
        for term in &self.pairwise {
            x += term.weight * f64::from(a.bit(term.i) * a.bit(term.j));
        }
        for cohort in &self.cohorts {
            if cohort.matches(a) {
                x += cohort.boost;
            }
        }
        Ok(softplus(x))
    }

    /// Samples `n_groups` distinct vectors from the product-Bernoulli marginals
    /// and records a noisy observed bias for each.
    pub fn sample_dataset(
        &self,
        n_groups: usize,
        samples_per_group: u64,
    ) -> Result<GroupBiasTable> {
        self.validate()?;
        if samples_per_group == 0 {
            return Err(Error::invalid("samples_per_group must be at least 1"));
        }
        let capacity = if self.dimension >= 64 {
            u64::MAX
        } else {
            1u64 << self.dimension
        };
        if n_groups as u64 > capacity {
            return Err(Error::invalid(format!(
                "cannot draw {n_groups} distinct groups from a space of size 2^{}",
                self.dimension
            )));
        }
        let mut rng = rng::seeded(self.seed);
        let mut chosen: BTreeSet<AttributeVector> = BTreeSet::new();
        let mut order: Vec<AttributeVector> = Vec::with_capacity(n_groups);
        if n_groups as u64 == capacity {
            order.extend(enumerate_space(&self.space())?);
        } else {
            let max_attempts = 1000 * n_groups.max(1);
            let mut attempts = 0;
            while order.len() < n_groups && attempts < max_attempts {
                attempts += 1;
                let bits = self
                    .marginals
                    .iter()
                    .map(|&p| u8::from(rng.gen::<f64>() < p))
                    .collect();
                let a = AttributeVector(bits);
                if chosen.insert(a.clone()) {
                    order.push(a);
                }
            }
            if order.len() < n_groups {
                // marginals too peaked for rejection; fill uniformly from what is left
                let rest: Vec<AttributeVector> = enumerate_space(&self.space())?
                    .filter(|a| !chosen.contains(a))
                    .collect();
                let mut rest = rest;
                rand::seq::SliceRandom::shuffle(rest.as_mut_slice(), &mut rng);
                order.extend(rest.into_iter().take(n_groups - order.len()));
            }
        }
        let noise_scale = self.noise_sigma / (samples_per_group as f64).sqrt();
        let mut table = GroupBiasTable::new(self.dimension)?;
        for a in order {
            let truth = self.bias(&a)?;
            let observed = if noise_scale > 0.0 {
                (truth + noise_scale * rng::standard_normal(&mut rng)).max(0.0)
            } else {
                truth
            };
            table.insert(a, observed, samples_per_group)?;
        }
        Ok(table)
    }

    /// Noise-free table over the full space.
    pub fn exhaustive_table(&self) -> Result<GroupBiasTable> {
        let mut table = GroupBiasTable::new(self.dimension)?;
        for a in enumerate_space(&self.space())? {
            let bias = self.bias(&a)?;
            table.insert(a, bias, 1)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let landscape: Self = serde_json::from_str(&text)?;
        landscape.validate()?;
        Ok(landscape)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn constant_landscape_is_ln2() {
        let land = SyntheticLandscape::flat(5);
        for a in enumerate_space(&land.space()).unwrap() {
            assert!((land.bias(&a).unwrap() - LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_cohort_closed_form() {
        let h = 1.7;
        let mut land = SyntheticLandscape::flat(4);
        land.cohorts.push(Cohort {
            support: vec![0, 1],
            values: vec![1, 1],
            boost: h,
        });
        let ones = AttributeVector::from_index(0b1111, 4);
        let zeros = AttributeVector::from_index(0, 4);
        let diff = land.bias(&ones).unwrap() - land.bias(&zeros).unwrap();
        assert!((diff - (h.exp().ln_1p() - LN_2)).abs() < 1e-12);
    }

    #[test]
    fn randomized_landscape_matches_term_by_term() {
        let land = SyntheticLandscape::planted(4, 2, 99);
        for index in 0..16u64 {
            let a = AttributeVector::from_index(index, 4);
            let bits: Vec<f64> = (0..4).map(|i| ((index >> (3 - i)) & 1) as f64).collect();
            let mut x = land.offset;
            for i in 0..4 {
                x += land.linear[i] * bits[i];
            }
            for t in &land.pairwise {
                x += t.weight * bits[t.i] * bits[t.j];
            }
            for c in &land.cohorts {
                let hit = c
                    .support
                    .iter()
                    .zip(&c.values)
                    .all(|(&i, &v)| bits[i] == f64::from(v));
                if hit {
                    x += c.boost;
                }
            }
            let expected = (1.0 + x.exp()).ln();
            assert!((land.bias(&a).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_rejects_wrong_dimension() {
        let land = SyntheticLandscape::flat(3);
        let a = AttributeVector::from_index(1, 4);
        assert!(matches!(
            land.bias(&a),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn noiseless_sampling_is_exact() {
        let mut land = SyntheticLandscape::planted(6, 2, 3);
        land.noise_sigma = 0.0;
        let table = land.sample_dataset(20, 10).unwrap();
        assert_eq!(table.len(), 20);
        for (a, s) in table.iter() {
            assert_eq!(s.bias, land.bias(a).unwrap());
            assert_eq!(s.count, 10);
        }
    }

    #[test]
    fn full_support_sampling_enumerates_space() {
        let land = SyntheticLandscape::planted(5, 1, 8);
        let table = land.sample_dataset(32, 4).unwrap();
        let keys: Vec<_> = table.keys().cloned().collect();
        let all: Vec<_> = enumerate_space(&land.space()).unwrap().collect();
        assert_eq!(keys, all);
    }

    #[test]
    fn sampling_too_many_groups_fails() {
        let land = SyntheticLandscape::flat(3);
        assert!(land.sample_dataset(9, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let land = SyntheticLandscape::planted(8, 2, 21);
        assert_eq!(
            land.sample_dataset(50, 5).unwrap(),
            land.sample_dataset(50, 5).unwrap()
        );
    }

    #[test]
    fn noise_shrinks_with_sample_count() {
        // Monte Carlo over 100 repetitions: RMS error should scale as 1/sqrt(n).
        let mut land = SyntheticLandscape::flat(4);
        land.offset = 3.0;
        land.noise_sigma = 1.0;
        let mut rms = |spg: u64| {
            let mut sq = 0.0;
            let mut n = 0.0;
            for rep in 0..100 {
                land.seed = rep;
                let table = land.sample_dataset(16, spg).unwrap();
                for (a, s) in table.iter() {
                    sq += (s.bias - land.bias(a).unwrap()).powi(2);
                    n += 1.0;
                }
            }
            (sq / n).sqrt()
        };
        let coarse = rms(4);
        let fine = rms(64);
        assert!((coarse - 0.5).abs() < 0.05, "rms at 4 samples: {coarse}");
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn json_round_trip_uses_documented_keys() {
        let land = SyntheticLandscape::planted(6, 2, 4);
        let json = land.to_json().unwrap();
        for key in [
            "dimension",
            "offset",
            "linear",
            "pairwise",
            "cohorts",
            "marginals",
            "noise_sigma",
            "seed",
        ] {
            assert!(json.contains(&format!("\"{key}\"")), "missing {key}");
        }
        let back: SyntheticLandscape = serde_json::from_str(&json).unwrap();
        assert_eq!(back, land);
        assert!(serde_json::from_str::<SyntheticLandscape>(&json.replacen(
            "\"offset\"",
            "\"offsett\"",
            1
        ))
        .is_err());
    }

    proptest! {
        #[test]
        fn landscape_bias_is_non_negative(seed in any::<u64>(), index in 0u64..256) {
            let mut land = SyntheticLandscape::planted(8, 3, seed);
            land.offset = -40.0;
            let b = land.bias(&AttributeVector::from_index(index, 8)).unwrap();
            prop_assert!(b >= 0.0);
        }
    }
}
