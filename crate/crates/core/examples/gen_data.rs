//! Generates the default synthetic benchmark, saves it and reloads it.
//!
//! cargo run --release --example gen_data [out_dir]

use procl::data::{load_dataset, save_dataset, SyntheticSpec};

fn main() -> procl::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/synthetic".into());
    let spec = SyntheticSpec::default();
    let data = spec.generate()?;
    save_dataset(out.as_ref(), &data)?;
    let back = load_dataset(out.as_ref())?;
    assert_eq!(back, data);

    let fg: usize = data
        .train
        .iter()
        .flat_map(|v| v.snippet_labels.as_deref().unwrap_or_default())
        .filter(|l| l.is_some())
        .count();
    let total: usize = data.train.iter().map(|v| v.num_snippets()).sum();
    println!(
        "{} classes, {}-d features",
        data.num_classes, data.feature_dim
    );
    println!(
        "train {} videos, test {} videos",
        data.train.len(),
        data.test.len()
    );
    println!("foreground fraction {:.3}", fg as f64 / total as f64);
    let v = &data.train[0];
    println!(
        "{}: {} snippets, labels {:?}",
        v.video_id,
        v.num_snippets(),
        v.labels
    );
    for s in &v.segments {
        println!("  class {} [{:.2}s, {:.2}s]", s.class, s.t_start, s.t_end);
    }
    println!("saved to {out}");
    Ok(())
}
