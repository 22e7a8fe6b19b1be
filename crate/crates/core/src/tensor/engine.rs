use std::collections::{HashMap, HashSet};

use super::{no_grad, ops, Tensor};
use crate::error::{Error, Result};

/// Tensors reachable from `root` that require gradients, ordered so every
/// tensor appears after all of its inputs.
fn topological_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (tensor, inputs already pushed)
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for input in node.inputs.iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

/// Propagates `seed` from `root` in reverse topological order. Gradients of
/// tensors in `keep` (and of all leaves) are retained; intermediate gradients
/// are dropped once consumed.
fn propagate(root: &Tensor, seed: Tensor, keep: &HashSet<u64>) -> Result<HashMap<u64, Tensor>> {
    let order = topological_order(root);
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    grads.insert(root.id(), seed);
    for t in order.iter().rev() {
        let Some(node) = t.node() else { continue };
        let g = if keep.contains(&t.id()) {
            match grads.get(&t.id()) {
                Some(g) => g.clone(),
                None => continue,
            }
        } else {
            match grads.remove(&t.id()) {
                Some(g) => g,
                None => continue,
            }
        };
        let input_grads = node.op.backward(&node.inputs, t, &g)?;
        debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op.name());
        for (input, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !input.requires_grad() {
                continue;
            }
            if ig.shape() != input.shape() {
                return Err(Error::shape(
                    node.op.name(),
                    format!("backward produced {:?} for input {:?}", ig.shape(), input.shape()),
                ));
            }
            let acc = match grads.remove(&input.id()) {
                Some(prev) => ops::add(&prev, &ig)?,
                None => ig,
            };
            grads.insert(input.id(), acc);
        }
    }
    Ok(grads)
}

fn check_root(root: &Tensor) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    Ok(())
}

pub(super) fn backward(root: &Tensor) -> Result<()> {
    check_root(root)?;
    if !root.requires_grad() {
        return Ok(());
    }
    let grads = no_grad(|| propagate(root, Tensor::constant(root.shape().to_vec(), vec![1.0]), &HashSet::new()))?;
    for t in topological_order(root) {
        if t.is_leaf() {
            if let Some(g) = grads.get(&t.id()) {
                t.accumulate_grad(g.data());
            }
        }
    }
    Ok(())
}

/// Gradients of scalar `root` with respect to each tensor in `wrt`.
///
/// Tensors that `root` does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are themselves recorded on the tape
/// and can be differentiated again; otherwise they are constants.
pub fn grad(root: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    check_root(root)?;
    let keep: HashSet<u64> = wrt.iter().map(Tensor::id).collect();
    let seed = Tensor::constant(root.shape().to_vec(), vec![1.0]);
    let grads = if !root.requires_grad() {
        HashMap::new()
    } else if create_graph {
        propagate(root, seed, &keep)?
    } else {
        no_grad(|| propagate(root, seed, &keep))?
    };
    Ok(wrt
        .iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::constant(t.shape().to_vec(), vec![0.0; t.numel()]))
        })
        .collect())
}
