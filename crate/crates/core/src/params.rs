//! Flat parameter vector with a named, contiguous group partition.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};
use crate::rng::Rng;

/// One named contiguous block of the parameter vector (a weight matrix or a
/// bias vector).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Group {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered partition of `[0, d)` into non-empty contiguous groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Group>,
    dim: usize,
}

impl Partition {
    /// Lays groups out back to back in the given order.
    pub fn build<S: AsRef<str>>(sizes: &[(S, usize)]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(EpiError::InvalidPartition("no groups given".into()));
        }
        let mut groups = Vec::with_capacity(sizes.len());
        let mut offset = 0usize;
        for (name, len) in sizes {
            let name = name.as_ref();
            if *len == 0 {
                return Err(EpiError::InvalidPartition(format!("group `{name}` has length 0")));
            }
            if groups.iter().any(|g: &Group| g.name == name) {
                return Err(EpiError::InvalidPartition(format!("duplicate group `{name}`")));
            }
            groups.push(Group {
                name: name.to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
        Ok(Self { groups, dim: offset })
    }

    /// Checks the contiguity invariants; used after deserialising.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for g in &self.groups {
            if g.len == 0 || g.offset != expected {
                return Err(EpiError::InvalidPartition(format!(
                    "group `{}` breaks contiguity",
                    g.name
                )));
            }
            expected += g.len;
        }
        if self.groups.is_empty() || expected != self.dim {
            return Err(EpiError::InvalidPartition("groups do not cover [0, d)".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `(offset, length)` of the named group.
    pub fn group_view(&self, name: &str) -> Result<(usize, usize)> {
        self.group(name).map(|g| (g.offset, g.len))
    }

    pub fn group(&self, name: &str) -> Result<&Group> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| EpiError::UnknownGroup(name.to_string()))
    }

    /// Index of the group containing coordinate `j`.
    pub fn group_of(&self, j: usize) -> Option<usize> {
        if j >= self.dim {
            return None;
        }
        let idx = self.groups.partition_point(|g| g.offset + g.len <= j);
        Some(idx)
    }
}

/// The model parameters θ together with their layer partition.
///
/// Every mutable access bumps a version counter so forward caches can detect
/// that they were produced from an older state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    partition: Partition,
    version: u64,
}

impl ParamStore {
    /// Zero-initialised store over `partition`.
    pub fn zeros(partition: Partition) -> Self {
        Self {
            values: vec![0.0; partition.dim()],
            partition,
            version: 0,
        }
    }

    pub fn from_values(partition: Partition, values: Vec<f64>) -> Result<Self> {
        EpiError::check_len(partition.dim(), values.len())?;
        Ok(Self {
            values,
            partition,
            version: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version = self.version.wrapping_add(1);
        &mut self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn group_values(&self, name: &str) -> Result<&[f64]> {
        let g = self.partition.group(name)?;
        Ok(&self.values[g.range()])
    }

    /// Fills every coordinate with an i.i.d. `N(0, scale²)` draw.
    pub fn gaussian_init(&mut self, rng: &mut Rng, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(EpiError::InvalidArgument(format!(
                "init scale must be positive, got {scale}"
            )));
        }
        let normal = Normal::new(0.0, scale).expect("scale checked above");
        for v in self.values_mut() {
            *v = normal.sample(rng);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;

    fn two_group() -> Partition {
        Partition::build(&[("w1", 6), ("b1", 2)]).unwrap()
    }

    #[test]
    fn cumulative_offsets() {
        let p = two_group();
        assert_eq!(p.dim(), 8);
        assert_eq!(p.groups()[0].offset, 0);
        assert_eq!(p.groups()[1].offset, 6);

        let single = Partition::build(&[("only", 5)]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.groups()[0].range(), 0..5);

        let three = Partition::build(&[("a", 3), ("b", 3), ("c", 3)]).unwrap();
        assert_eq!(three.dim(), 9);
        assert_eq!(three.group_view("c").unwrap(), (6, 3));
    }

    #[test]
    fn rejects_bad_partitions() {
        let empty: [(&str, usize); 0] = [];
        assert!(Partition::build(&empty).is_err());
        assert!(Partition::build(&[("a", 3), ("z", 0)]).is_err());
        assert!(Partition::build(&[("a", 3), ("a", 1)]).is_err());
    }

    #[test]
    fn group_lookup() {
        let p = two_group();
        assert_eq!(p.group_view("w1").unwrap(), (0, 6));
        assert_eq!(p.group_view("b1").unwrap(), (6, 2));
        assert!(matches!(p.group_view("nope"), Err(EpiError::UnknownGroup(_))));
    }

    #[test]
    fn init_is_seeded() {
        let mut a = ParamStore::zeros(two_group());
        let mut b = ParamStore::zeros(two_group());
        a.gaussian_init(&mut SeedTree::new(7).stream("init"), 1.0).unwrap();
        b.gaussian_init(&mut SeedTree::new(7).stream("init"), 1.0).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_scale_matches_sample_std() {
        let part = Partition::build(&[("w", 10_000)]).unwrap();
        let mut s = ParamStore::zeros(part);
        s.gaussian_init(&mut SeedTree::new(11).stream("init"), 0.1).unwrap();
        let n = s.dim() as f64;
        let mean = s.values().iter().sum::<f64>() / n;
        let var = s.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.09..=0.11).contains(&std), "std {std}");
    }

    #[test]
    fn two_params_differ() {
        let mut s = ParamStore::zeros(Partition::build(&[("w", 2)]).unwrap());
        s.gaussian_init(&mut SeedTree::new(0).stream("init"), 1.0).unwrap();
        assert_ne!(s.values()[0], s.values()[1]);
    }

    #[test]
    fn init_rejects_non_positive_scale() {
        let mut s = ParamStore::zeros(two_group());
        let mut rng = SeedTree::new(0).stream("init");
        assert!(s.gaussian_init(&mut rng, 0.0).is_err());
        assert!(s.gaussian_init(&mut rng, -1.0).is_err());
    }

    #[test]
    fn version_bumps_on_mutation() {
        let mut s = ParamStore::zeros(two_group());
        let v0 = s.version();
        s.values_mut()[0] = 1.0;
        assert_ne!(s.version(), v0);
    }

    proptest! {
        #[test]
        fn every_index_in_exactly_one_group(sizes in proptest::collection::vec(1usize..20, 1..8)) {
            let named: Vec<(String, usize)> =
                sizes.iter().enumerate().map(|(i, &n)| (format!("g{i}"), n)).collect();
            let p = Partition::build(&named).unwrap();
            prop_assert_eq!(p.dim(), sizes.iter().sum::<usize>());
            p.validate().unwrap();
            for j in 0..p.dim() {
                let owners = p.groups().iter().filter(|g| g.range().contains(&j)).count();
                prop_assert_eq!(owners, 1);
                let gi = p.group_of(j).unwrap();
                prop_assert!(p.groups()[gi].range().contains(&j));
            }
            prop_assert_eq!(p.group_of(p.dim()), None);
        }
    }
}
