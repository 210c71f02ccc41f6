use serde::{Deserialize, Serialize};

/// One labelled example. Labels are zero-based class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self { x, y }
    }
}

/// Ordered list of examples drawn from a single task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dataset(pub Vec<Sample>);

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self(samples)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.0.iter()
    }

    /// Examples whose indices are not in `excluded` (which must be sorted).
    pub fn without(&self, excluded: &[usize]) -> Vec<Sample> {
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| excluded.binary_search(i).is_err())
            .map(|(_, s)| s.clone())
            .collect()
    }

    /// Copy reordered by `perm` (position i takes element `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        Dataset(perm.iter().map(|&i| self.0[i].clone()).collect())
    }
}

impl From<Vec<Sample>> for Dataset {
    fn from(v: Vec<Sample>) -> Self {
        Dataset(v)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
