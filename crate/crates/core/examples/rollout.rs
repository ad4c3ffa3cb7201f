//! Attention rollout across a merge: the earlier block's map is projected
//! onto the merged token set, multiplied through, and the class row picks
//! the most attended token.

use epir::model::dtsm::{attention_rollout, project_attention, select_token};

fn main() -> epir::Result<()> {
    // block 1 sees 4 tokens and merges tokens 1 and 3
    let a1 = vec![
        0.1, 0.6, 0.2, 0.1, //
        0.25, 0.25, 0.25, 0.25, //
        0.3, 0.3, 0.3, 0.1, //
        0.1, 0.1, 0.1, 0.7,
    ];
    let groups: Vec<Vec<usize>> = vec![vec![0], vec![1, 3], vec![2]];
    let p1 = project_attention(&a1, 4, &[&groups])?;
    println!("projected block 1:");
    for row in p1.chunks(3) {
        println!("  {row:.3?}");
    }

    let a2 = vec![
        0.2, 0.3, 0.5, //
        0.3, 0.4, 0.3, //
        0.1, 0.1, 0.8,
    ];
    let rolled = attention_rollout(&[p1, a2], 3)?;
    println!("rollout:");
    for row in rolled.chunks(3) {
        println!("  {row:.3?}");
    }
    println!("selected token {}", select_token(&rolled, 3)?);
    Ok(())
}
