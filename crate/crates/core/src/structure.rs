//! Layer-block decomposition of model lists.
//!
//! A [`LayerTable`] holds one list per layer index; list `k` holds the `k`-th
//! layer of every model, tagged with the model it came from. Shuffling the
//! entries of each list and reassembling yields recombined models.
//! Weight and bias of a layer always travel together as one block.

use crate::error::{Error, Result};
use crate::nn::{Layer, LayeredModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub layer_index: usize,
    /// Position of the originating model in the decomposed sequence.
    pub source_model: usize,
    pub layer: Layer,
}

impl LayerBlock {
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        self.layer.params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    input_shape: Vec<usize>,
    architecture_id: String,
    lists: Vec<Vec<LayerBlock>>,
}

impl LayerTable {
    pub fn lists(&self) -> &[Vec<LayerBlock>] {
        &self.lists
    }

    pub fn num_layers(&self) -> usize {
        self.lists.len()
    }

    pub fn num_models(&self) -> usize {
        self.lists.first().map_or(0, Vec::len)
    }

    pub fn architecture_id(&self) -> &str {
        &self.architecture_id
    }

    /// Reorders list `k` so slot `j` receives the block previously at
    /// `perm[j]`.
    pub fn permute_list(&mut self, k: usize, perm: &[usize]) -> Result<()> {
        let list = self
            .lists
            .get_mut(k)
            .ok_or_else(|| Error::MalformedTable(format!("no list {k}")))?;
        if !is_permutation(perm, list.len()) {
            return Err(Error::MalformedTable(format!(
                "{perm:?} is not a permutation of 0..{}",
                list.len()
            )));
        }
        let old = std::mem::take(list);
        let mut slots: Vec<Option<LayerBlock>> = old.into_iter().map(Some).collect();
        *list = perm
            .iter()
            .map(|&src| slots[src].take().expect("permutation visits each slot once"))
            .collect();
        Ok(())
    }

    /// `source_map()[k][j]` is the model that slot `j` of list `k` came from.
    pub fn source_map(&self) -> Vec<Vec<usize>> {
        self.lists
            .iter()
            .map(|list| list.iter().map(|b| b.source_model).collect())
            .collect()
    }
}

pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

/// Checks that every model shares the first model's architecture.
pub fn check_compatible(models: &[LayeredModel]) -> Result<()> {
    let Some(first) = models.first() else {
        return Err(Error::MalformedTable("no models".into()));
    };
    for (index, m) in models.iter().enumerate().skip(1) {
        if m.architecture_id() != first.architecture_id() {
            return Err(Error::ArchitectureMismatch {
                index,
                expected: first.architecture_id().into(),
                found: m.architecture_id().into(),
            });
        }
    }
    Ok(())
}

pub fn decompose(models: &[LayeredModel]) -> Result<LayerTable> {
    check_compatible(models)?;
    let first = &models[0];
    let mut lists: Vec<Vec<LayerBlock>> = (0..first.layers().len())
        .map(|_| Vec::with_capacity(models.len()))
        .collect();
    for (source_model, model) in models.iter().enumerate() {
        for (layer_index, layer) in model.layers().iter().enumerate() {
            lists[layer_index].push(LayerBlock {
                layer_index,
                source_model,
                layer: layer.clone(),
            });
        }
    }
    Ok(LayerTable {
        input_shape: first.input_shape().to_vec(),
        architecture_id: first.architecture_id().into(),
        lists,
    })
}

/// Model `j` takes entry `j` of every list, in layer order.
pub fn reassemble(table: &LayerTable) -> Result<Vec<LayeredModel>> {
    let k = table.num_models();
    if k == 0 {
        return Err(Error::MalformedTable("table holds no models".into()));
    }
    for (i, list) in table.lists.iter().enumerate() {
        if list.len() != k {
            return Err(Error::MalformedTable(format!(
                "list {i} has {} entries, expected {k}",
                list.len()
            )));
        }
        if let Some(b) = list.iter().find(|b| b.layer_index != i) {
            return Err(Error::MalformedTable(format!(
                "list {i} holds a block for layer {}",
                b.layer_index
            )));
        }
        if !is_permutation(&list.iter().map(|b| b.source_model).collect::<Vec<_>>(), k) {
            return Err(Error::MalformedTable(format!("list {i} sources are not a bijection")));
        }
    }
    (0..k)
        .map(|j| {
            let layers = table.lists.iter().map(|list| list[j].layer.clone()).collect();
            let model = LayeredModel::new(table.input_shape.clone(), layers)?;
            if model.architecture_id() != table.architecture_id {
                return Err(Error::MalformedTable(format!(
                    "slot {j} reassembles to `{}`",
                    model.architecture_id()
                )));
            }
            Ok(model)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    fn models(k: usize) -> Vec<LayeredModel> {
        (0..k)
            .map(|s| ArchSpec::Mlp { hidden: vec![3] }.build(&[2], 2, s as u64).unwrap())
            .collect()
    }

    #[test]
    fn single_model_round_trips() {
        let m = models(1);
        let back = reassemble(&decompose(&m).unwrap()).unwrap();
        assert!(back[0].bit_eq(&m[0]));
    }

    #[test]
    fn table_shape_and_empty_parameterless_blocks() {
        let t = decompose(&models(3)).unwrap();
        // dense, relu, dense, softmax
        assert_eq!(t.num_layers(), 4);
        assert!(t.lists().iter().all(|l| l.len() == 3));
        assert!(t.lists()[1].iter().all(|b| b.params().is_empty()));
    }

    #[test]
    fn rotation_swaps_two_models() {
        let m = models(2);
        let mut t = decompose(&m).unwrap();
        t.permute_list(0, &[1, 0]).unwrap();
        let out = reassemble(&t).unwrap();
        assert_eq!(out[0].layers()[0], m[1].layers()[0]);
        assert_eq!(out[0].layers()[2], m[0].layers()[2]);
        assert_eq!(out[1].layers()[0], m[0].layers()[0]);
        assert_eq!(out[1].layers()[2], m[1].layers()[2]);
        assert_eq!(t.source_map()[0], vec![1, 0]);
    }

    #[test]
    fn mismatched_architectures_are_named() {
        let mut m = models(2);
        m.push(ArchSpec::Mlp { hidden: vec![4] }.build(&[2], 2, 0).unwrap());
        assert!(matches!(decompose(&m), Err(Error::ArchitectureMismatch { index: 2, .. })));
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let mut t = decompose(&models(2)).unwrap();
        assert!(t.permute_list(0, &[0, 0]).is_err());
        assert!(t.permute_list(9, &[0, 1]).is_err());
        t.lists[1].pop();
        assert!(reassemble(&t).is_err());
    }
}
