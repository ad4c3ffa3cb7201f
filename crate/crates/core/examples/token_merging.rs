//! Token integration on hand-made keys: the most similar cross-half pairs
//! are averaged, and the trace shows which patch cells each token covers.

use epir::model::integration::{merge_groups, merge_pairs, pair_similarity, select_top_pairs, split_halves};
use epir::model::BlockMerge;
use epir::report::merge_visualization;
use epir::Tensor;

fn main() -> epir::Result<()> {
    // class token plus a 2x2 patch grid; patch 1 and patch 3 point the same way
    let keys: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.1, 1.0], vec![-1.0, 0.2]];
    let (n1, _) = split_halves(keys.len() - 1)?;
    let sim = pair_similarity(&keys[1..1 + n1], &keys[1 + n1..]);
    println!("cross-half cosine similarity {sim:.3?}");
    let pairs = select_top_pairs(&sim, 1)?;
    let groups = merge_groups(keys.len(), n1, &pairs)?;
    println!("pairs {pairs:?}");
    println!("groups {groups:?}");

    let values: Vec<f64> = keys.iter().flatten().cloned().collect();
    let tokens = Tensor::new(values, &[1, keys.len(), 2])?;
    let merge = BlockMerge { pairs, groups };
    let merged = merge_pairs(&tokens, std::slice::from_ref(&merge))?;
    println!("merged tokens {:?}: {:?}", merged.shape(), merged.data());

    let viz = merge_visualization("demo", 2, &[&merge], &[1])?;
    for t in viz.final_tokens() {
        println!("token {} covers {:?}", t.index, t.cells);
    }
    Ok(())
}
