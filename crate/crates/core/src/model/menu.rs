use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite set of admissible impulse sizes with their costs. Item order is
/// the tie-breaking order everywhere a maximizing size is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseMenu {
    dim: usize,
    items: Vec<Vec<f64>>,
    costs: Vec<f64>,
}

impl ImpulseMenu {
    pub fn new(items: Vec<Vec<f64>>, costs: Vec<f64>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidMenu("menu needs at least one item".into()));
        }
        if items.len() != costs.len() {
            return Err(Error::InvalidMenu(format!(
                "{} items but {} costs",
                items.len(),
                costs.len()
            )));
        }
        let dim = items[0].len();
        if dim == 0 {
            return Err(Error::InvalidMenu("items must have dimension >= 1".into()));
        }
        for (j, item) in items.iter().enumerate() {
            if item.len() != dim {
                return Err(Error::InvalidMenu(format!(
                    "item {j} has dimension {}, expected {dim}",
                    item.len()
                )));
            }
            if item.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMenu(format!("item {j} is not finite")));
            }
        }
        for (j, &c) in costs.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidMenu(format!(
                    "cost of item {j} must be finite and >= 0, got {c}"
                )));
            }
        }
        for j in 0..items.len() {
            for k in 0..j {
                if items[j] == items[k] {
                    return Err(Error::DistinctItems(k, j));
                }
            }
        }
        Ok(ImpulseMenu { dim, items, costs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j]
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn cost(&self, j: usize) -> f64 {
        self.costs[j]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().cloned().fold(0.0, f64::max)
    }

    /// Same items with every cost shifted by `shift`.
    pub fn with_cost_shift(&self, shift: f64) -> Result<Self> {
        ImpulseMenu::new(
            self.items.clone(),
            self.costs.iter().map(|c| c + shift).collect(),
        )
    }
}

const KEY_SCALE: f64 = 1e9;

fn key_of(v: &[f64]) -> Vec<i64> {
    v.iter().map(|x| (x * KEY_SCALE).round() as i64).collect()
}

/// All distinct sums of at most `depth` menu items, in breadth-first order
/// (the zero vector has id 0). `children[id][j]` is the id of
/// `value(id) + item j` whenever that sum is still within the depth.
#[derive(Debug, Clone)]
pub struct CumulativeLattice {
    values: Vec<Vec<f64>>,
    depths: Vec<usize>,
    children: Vec<Vec<Option<usize>>>,
    index: HashMap<Vec<i64>, usize>,
    max_depth: usize,
}

pub const DEFAULT_LATTICE_LIMIT: usize = 1_000_000;

impl CumulativeLattice {
    pub fn new(menu: &ImpulseMenu, max_depth: usize) -> Result<Self> {
        Self::with_limit(menu, max_depth, DEFAULT_LATTICE_LIMIT)
    }

    pub fn with_limit(menu: &ImpulseMenu, max_depth: usize, limit: usize) -> Result<Self> {
        let zero = vec![0.0; menu.dim()];
        let mut lattice = CumulativeLattice {
            index: HashMap::from([(key_of(&zero), 0)]),
            values: vec![zero],
            depths: vec![0],
            children: vec![vec![None; menu.len()]],
            max_depth,
        };
        let mut frontier = vec![0usize];
        for depth in 1..=max_depth {
            let mut next = Vec::new();
            for &parent in &frontier {
                for j in 0..menu.len() {
                    let child: Vec<f64> = lattice.values[parent]
                        .iter()
                        .zip(menu.item(j))
                        .map(|(a, b)| a + b)
                        .collect();
                    let key = key_of(&child);
                    let id = match lattice.index.get(&key) {
                        Some(&id) => id,
                        None => {
                            let id = lattice.values.len();
                            if id >= limit {
                                return Err(Error::TooLarge(format!(
                                    "cumulative lattice exceeds {limit} values at depth {depth}"
                                )));
                            }
                            lattice.index.insert(key, id);
                            lattice.values.push(child);
                            lattice.depths.push(depth);
                            lattice.children.push(vec![None; menu.len()]);
                            next.push(id);
                            id
                        }
                    };
                    lattice.children[parent][j] = Some(id);
                }
            }
            frontier = next;
        }
        Ok(lattice)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn value(&self, id: usize) -> &[f64] {
        &self.values[id]
    }

    /// Minimal number of menu items summing to `value(id)`.
    pub fn depth(&self, id: usize) -> usize {
        self.depths[id]
    }

    pub fn child(&self, id: usize, item: usize) -> Option<usize> {
        self.children[id][item]
    }

    pub fn id_of(&self, value: &[f64]) -> Option<usize> {
        self.index.get(&key_of(value)).copied()
    }

    /// Ids with depth at most `depth`, in id order.
    pub fn ids_within(&self, depth: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&id| self.depths[id] <= depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_scalars(l: &CumulativeLattice) -> Vec<f64> {
        let mut v: Vec<f64> = (0..l.len()).map(|id| l.value(id)[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn single_item_chain() {
        let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.1]).unwrap();
        let l = CumulativeLattice::new(&menu, 2).unwrap();
        assert_eq!(sorted_scalars(&l), vec![0.0, 1.0, 2.0]);
        assert_eq!(l.child(0, 0), Some(1));
        assert_eq!(l.child(1, 0), Some(2));
        assert_eq!(l.child(2, 0), None);
    }

    #[test]
    fn symmetric_items_deduplicate() {
        let menu = ImpulseMenu::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap();
        let l = CumulativeLattice::new(&menu, 2).unwrap();
        assert_eq!(sorted_scalars(&l), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        // +1 then -1 lands back on the origin.
        let up = l.child(0, 0).unwrap();
        assert_eq!(l.child(up, 1), Some(0));
    }

    #[test]
    fn duplicate_items_rejected() {
        let err = ImpulseMenu::new(vec![vec![1.0], vec![1.0]], vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DistinctItems(0, 1)));
    }

    #[test]
    fn negative_cost_rejected() {
        assert!(ImpulseMenu::new(vec![vec![1.0]], vec![-0.1]).is_err());
    }

    #[test]
    fn size_bound_and_arc_consistency() {
        let menu = ImpulseMenu::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            vec![0.0, 0.1, 0.2],
        )
        .unwrap();
        let depth = 3;
        let l = CumulativeLattice::new(&menu, depth).unwrap();
        let bound: usize = (0..=depth).map(|k| menu.len().pow(k as u32)).sum();
        assert!(l.len() <= bound);
        for id in 0..l.len() {
            for j in 0..menu.len() {
                if let Some(c) = l.child(id, j) {
                    for k in 0..2 {
                        assert_eq!(l.value(c)[k], l.value(id)[k] + menu.item(j)[k]);
                    }
                } else {
                    assert_eq!(l.depth(id), depth);
                }
            }
        }
    }

    #[test]
    fn limit_is_enforced() {
        let menu = ImpulseMenu::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            CumulativeLattice::with_limit(&menu, 10, 20),
            Err(Error::TooLarge(_))
        ));
    }
}
