//! Ambiguity flags and pseudo complementary labels for a small activation
//! sequence with classes {0, 2} present and background at index 3.
//!
//! cargo run --example labeling

use procl::labeling::{ambiguity, assign_pseudo_complementary, AmbiguityRule, CategorySet};
use procl::numeric::Tensor;

fn main() -> procl::Result<()> {
    let s = Tensor::from_rows(&[
        vec![3.0, 0.5, 0.2, -1.0],
        vec![1.2, 0.0, 1.0, 0.9],
        vec![-0.5, 0.3, 0.1, 2.5],
        vec![0.4, 2.0, 0.6, 0.3],
        vec![0.0, 0.0, 0.0, 0.0],
    ])?;
    let set = CategorySet::from_labels(&[true, false, true])?;
    let state = ambiguity(&s, &set, 0.45, AmbiguityRule::HighEntropy);
    let mask = assign_pseudo_complementary(&s, &state.flags, &set)?;
    println!("category set {:?}", set.members());
    println!(" t  entropy ambiguous  excluded");
    for t in 0..s.rows() {
        let excluded: Vec<usize> = set
            .members()
            .iter()
            .copied()
            .filter(|&c| mask.is_excluded(t, c))
            .collect();
        println!(
            "{t:>2}  {:7.4} {:>9}  {:?}",
            state.entropy[t], state.flags[t], excluded
        );
    }
    println!("unambiguous snippets: {}", mask.unambiguous);
    Ok(())
}
