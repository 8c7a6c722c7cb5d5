//! Named parameter registry used for optimizer state and checkpointing.

use std::collections::HashMap;

use crate::real::Real;
use crate::tensor::Tensor;

/// Insertion-ordered map of named parameter tensors. The insertion order is
/// the canonical order for optimizer state, checkpoints and tape binding.
#[derive(Debug, Clone)]
pub struct ParamRegistry<R: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> Default for ParamRegistry<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamRegistry<R> {
    pub fn new() -> Self {
        ParamRegistry {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<R>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter '{}'",
            name
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        let i = *self.index.get(name)?;
        Some(&mut self.tensors[i])
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<R> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<R> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    /// Sum of squared Frobenius norms, for diagnostics dumps.
    pub fn norms(&self) -> Vec<(String, R)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.frobenius_norm()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut reg: ParamRegistry<f64> = ParamRegistry::new();
        reg.insert("b", Tensor::zeros(1, 1));
        reg.insert("a", Tensor::zeros(2, 2));
        let names: Vec<&str> = reg.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(reg.get("a").unwrap().shape(), &[2, 2]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_name_panics() {
        let mut reg: ParamRegistry<f64> = ParamRegistry::new();
        reg.insert("a", Tensor::zeros(1, 1));
        reg.insert("a", Tensor::zeros(1, 1));
    }
}
