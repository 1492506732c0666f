// Synthetic long-range task: do the two ends of a path share a colour?

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Label, MolecularGraph};
use crate::error::{Error, Result};

/// Path of `path_len` nodes whose end nodes carry colours `first` and `last`.
///
/// Features have `num_colors + 1` channels: a one-hot colour (zeros for
/// interior nodes) followed by a constant 1. The label is class 1 when the two
/// end colours match.
pub fn path_graph(path_len: usize, num_colors: usize, first: usize, last: usize) -> Result<MolecularGraph> {
    if path_len < 2 || num_colors < 2 {
        return Err(Error::InvalidArgument(format!(
            "path task needs length >= 2 and colours >= 2 (got {path_len}, {num_colors})"
        )));
    }
    if first >= num_colors || last >= num_colors {
        return Err(Error::InvalidArgument(format!(
            "colour out of range: {first}, {last} with {num_colors} colours"
        )));
    }
    let mut feats = vec![vec![0.0; num_colors + 1]; path_len];
    for row in feats.iter_mut() {
        row[num_colors] = 1.0;
    }
    feats[0][first] = 1.0;
    feats[path_len - 1][last] = 1.0;
    let edges = (1..path_len).map(|i| (i - 1, i)).collect();
    MolecularGraph::new(
        path_len,
        edges,
        feats,
        Some(Label::Class(usize::from(first == last))),
    )
}

/// `num_graphs` coloured paths with exactly `num_graphs / 2` positives, in an
/// order fixed by `seed`.
pub fn generate_lri_task(
    num_graphs: usize,
    path_len: usize,
    num_colors: usize,
    seed: u64,
) -> Result<Vec<MolecularGraph>> {
    if path_len < 2 || num_colors < 2 {
        return Err(Error::InvalidArgument(format!(
            "path task needs length >= 2 and colours >= 2 (got {path_len}, {num_colors})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = num_graphs / 2;
    let mut labels: Vec<bool> = (0..num_graphs).map(|i| i < positives).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|same| {
            let first = rng.gen_range(0..num_colors);
            let last = if same {
                first
            } else {
                (first + rng.gen_range(1..num_colors)) % num_colors
            };
            path_graph(path_len, num_colors, first, last)
        })
        .collect()
}
