//! Binary attribute spaces, per-group bias tables, and group-level splits.

mod io;
mod landscape;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{
    read_group_csv, read_sample_csv, table_from_samples, write_group_csv, write_sample_csv,
    GroupCsvOptions,
};
pub use landscape::{Cohort, PairwiseTerm, SyntheticLandscape};

/// Largest dimension [`enumerate_space`] walks without an explicit override.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// One intersectional attribute: a full assignment of `d` binary attributes.
///
/// Ordering is lexicographic over the bits with `a0` as the most significant
/// position, which coincides with ascending binary encoding for vectors of
/// equal length.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeVector(Vec<u8>);

impl AttributeVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Empty("attribute vector"));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!("attribute bit {bad} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| u8::from(b)).collect())
    }

    /// Builds the vector whose binary encoding (a0 most significant) is `index`.
    pub fn from_index(index: u64, dimension: usize) -> Self {
        let bits = (0..dimension)
            .map(|i| ((index >> (dimension - 1 - i)) & 1) as u8)
            .collect();
        Self(bits)
    }

    /// Binary encoding with `a0` as the most significant bit. Only meaningful for d ≤ 64.
    pub fn to_index(&self) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn bit(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn as_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&b| f64::from(b))
    }

    pub fn check_dimension(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.0.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for AttributeVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::invalid(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }
}

impl Serialize for AttributeVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttributeVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The space of all `2^d` attribute vectors, with optional human-readable names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpace {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_names: Option<Vec<String>>,
}

impl AttributeSpace {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid(
                "attribute space dimension must be at least 1",
            ));
        }
        Ok(Self {
            dimension,
            attribute_names: None,
        })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut space = Self::new(names.len())?;
        space.attribute_names = Some(names);
        Ok(space)
    }

    pub fn name(&self, i: usize) -> String {
        self.attribute_names
            .as_ref()
            .and_then(|names| names.get(i).cloned())
            .unwrap_or_else(|| format!("a{i}"))
    }
}

/// Yields every vector of the space exactly once, in ascending binary order.
pub fn enumerate_space(space: &AttributeSpace) -> Result<SpaceIter> {
    enumerate_space_with_cap(space, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_space_with_cap(space: &AttributeSpace, cap: usize) -> Result<SpaceIter> {
    if space.dimension > cap || space.dimension >= 64 {
        return Err(Error::EnumerationCap {
            dimension: space.dimension,
            cap,
        });
    }
    Ok(SpaceIter {
        dimension: space.dimension,
        next: 0,
        end: 1u64 << space.dimension,
    })
}

#[derive(Debug, Clone)]
pub struct SpaceIter {
    dimension: usize,
    next: u64,
    end: u64,
}

impl Iterator for SpaceIter {
    type Item = AttributeVector;

    fn next(&mut self) -> Option<AttributeVector> {
        if self.next >= self.end {
            return None;
        }
        let v = AttributeVector::from_index(self.next, self.dimension);
        self.next += 1;
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SpaceIter {}

/// Loss of the audited model on one sample, tagged with the sample's attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLossRecord {
    pub attribute: AttributeVector,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub bias: f64,
    pub count: u64,
}

/// Per-group bias values (mean loss) with support counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBiasTable {
    dimension: usize,
    entries: BTreeMap<AttributeVector, GroupStats>,
}

impl GroupBiasTable {
    pub fn new(dimension: usize) -> Result<Self> {
        AttributeSpace::new(dimension)?;
        Ok(Self {
            dimension,
            entries: BTreeMap::new(),
        })
    }

    /// Adds a group. A key already present is merged by count-weighted mean.
    pub fn insert(&mut self, attribute: AttributeVector, bias: f64, count: u64) -> Result<()> {
        attribute.check_dimension(self.dimension)?;
        if !bias.is_finite() || bias < 0.0 {
            return Err(Error::invalid(format!(
                "bias for group {attribute} must be finite and non-negative, got {bias}"
            )));
        }
        if count == 0 {
            return Err(Error::invalid(format!("group {attribute} has zero count")));
        }
        self.entries
            .entry(attribute)
            .and_modify(|s| {
                let total = s.count + count;
                s.bias = (s.bias * s.count as f64 + bias * count as f64) / total as f64;
                s.count = total;
            })
            .or_insert(GroupStats { bias, count });
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, a: &AttributeVector) -> Option<&GroupStats> {
        self.entries.get(a)
    }

    pub fn bias(&self, a: &AttributeVector) -> Option<f64> {
        self.entries.get(a).map(|s| s.bias)
    }

    pub fn contains(&self, a: &AttributeVector) -> bool {
        self.entries.contains_key(a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AttributeVector, &GroupStats)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &AttributeVector> {
        self.entries.keys()
    }

    /// Groups with bias ≥ `tau`.
    pub fn high_bias(&self, tau: f64) -> impl Iterator<Item = (&AttributeVector, &GroupStats)> {
        self.entries.iter().filter(move |(_, s)| s.bias >= tau)
    }

    pub fn count_at_least(&self, tau: f64) -> usize {
        self.high_bias(tau).count()
    }

    pub fn max_bias(&self) -> Option<f64> {
        self.entries.values().map(|s| s.bias).reduce(f64::max)
    }

    /// Count-weighted mean bias across groups.
    pub fn mean_bias(&self) -> f64 {
        let (sum, n) = self.entries.values().fold((0.0, 0u64), |(sum, n), s| {
            (sum + s.bias * s.count as f64, n + s.count)
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Empirical quantile (linear interpolation) of the group bias values.
    pub fn bias_quantile(&self, q: f64) -> Option<f64> {
        let mut values: Vec<f64> = self.entries.values().map(|s| s.bias).collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        Some(values[lo] + (values[hi] - values[lo]) * frac)
    }

    fn subset<'a>(&self, keys: impl Iterator<Item = &'a AttributeVector>) -> Self {
        let entries = keys
            .map(|k| (k.clone(), self.entries[k]))
            .collect::<BTreeMap<_, _>>();
        Self {
            dimension: self.dimension,
            entries,
        }
    }

    /// Union of two tables over the same space; shared keys are merged by count.
    pub fn union(&self, other: &GroupBiasTable) -> Result<GroupBiasTable> {
        if other.dimension != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: other.dimension,
            });
        }
        let mut out = self.clone();
        for (k, s) in other.iter() {
            out.insert(k.clone(), s.bias, s.count)?;
        }
        Ok(out)
    }
}

/// Groups the records by attribute and averages their losses.
pub fn aggregate_bias(records: &[SampleLossRecord]) -> Result<GroupBiasTable> {
    let first = records.first().ok_or(Error::Empty("sample loss records"))?;
    let dimension = first.attribute.dimension();
    let mut sums: BTreeMap<&AttributeVector, (f64, u64)> = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        record.attribute.check_dimension(dimension)?;
        if !record.loss.is_finite() {
            return Err(Error::non_finite("sample loss"));
        }
        if record.loss < 0.0 {
            return Err(Error::NegativeLoss {
                index,
                loss: record.loss,
            });
        }
        let slot = sums.entry(&record.attribute).or_insert((0.0, 0));
        slot.0 += record.loss;
        slot.1 += 1;
    }
    let mut table = GroupBiasTable::new(dimension)?;
    for (attribute, (sum, count)) in sums {
        table.insert(attribute.clone(), sum / count as f64, count)?;
    }
    Ok(table)
}

/// Group-level observation/holdout partition with disjoint key sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub observation: GroupBiasTable,
    pub holdout: GroupBiasTable,
}

/// Partitions table keys into observation and holdout groups.
///
/// The holdout receives `round(fraction × keys)` groups, kept within
/// `[1, keys − 1]` so neither side is empty.
pub fn split_by_group(
    table: &GroupBiasTable,
    holdout_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    if table.len() < 2 {
        return Err(Error::invalid("splitting requires at least two groups"));
    }
    let mut keys: Vec<&AttributeVector> = table.keys().collect();
    let mut rng = rng::seeded(seed);
    keys.shuffle(&mut rng);
    let n_holdout =
        ((holdout_fraction * keys.len() as f64).round() as usize).clamp(1, keys.len() - 1);
    let (holdout_keys, observation_keys) = keys.split_at(n_holdout);
    Ok(DatasetSplit {
        observation: table.subset(observation_keys.iter().copied()),
        holdout: table.subset(holdout_keys.iter().copied()),
    })
}
