use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Named dense parameter arrays.
///
/// Names are kept sorted, so the flat view and the serialized form have a
/// stable layout independent of insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for v in self.params.values() {
            out.extend_from_slice(v.as_slice());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for v in self.params.values_mut() {
            let k = v.len();
            v.as_mut_slice().copy_from_slice(&flat[offset..offset + k]);
            offset += k;
        }
        Ok(())
    }

    /// Adds `grad` into the entry `name`, creating a zero entry if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        match self.params.get_mut(name) {
            Some(m) => {
                if m.shape() != grad.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "accumulate",
                        lhs: m.shape(),
                        rhs: grad.shape(),
                    });
                }
                m.add_assign(grad);
            }
            None => {
                self.params.insert(name.to_string(), grad.clone());
            }
        }
        Ok(())
    }

    /// Element-wise `self += scale * other` over the names both stores share.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        for (name, m) in other.iter() {
            self.accumulate(name, &m.scale(scale))?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Matrix::is_finite)
    }

    /// Names and shapes, in layout order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store(a: Vec<f64>, b: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let (na, nb) = (a.len(), b.len());
        s.insert("z.w", Matrix::from_vec(1, na, a).unwrap());
        s.insert("a.b", Matrix::from_vec(nb, 1, b).unwrap());
        s
    }

    #[test]
    fn layout_is_sorted_by_name() {
        let s = sample_store(vec![1.0, 2.0], vec![3.0]);
        assert_eq!(s.flatten(), vec![3.0, 1.0, 2.0]);
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, vec!["a.b", "z.w"]);
    }

    #[test]
    fn wrong_length_unflatten_fails() {
        let mut s = sample_store(vec![1.0], vec![2.0]);
        assert!(s.unflatten(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(
            a in prop::collection::vec(-10.0f64..10.0, 1..8),
            b in prop::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            let s = sample_store(a, b);
            let flat = s.flatten();
            prop_assert_eq!(flat.len(), s.len());
            let mut t = s.zeros_like();
            t.unflatten(&flat).unwrap();
            prop_assert_eq!(t, s);
        }
    }
}
