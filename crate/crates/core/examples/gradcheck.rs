//! Finite-difference check of every loss on one random instance.
//!
//! cargo run --release --example gradcheck

use procl::labeling::{
    ambiguity, assign_pseudo_complementary, multiscale_fuse, AmbiguityRule, CategorySet,
};
use procl::losses::{cl_loss, fbd_loss, mil_loss, mpcl_loss, pcl_loss};
use procl::numeric::gradcheck::check_gradients;
use procl::numeric::{Graph, Tensor, Var};
use procl::rng::{substream, Stream};
use procl::Result;
use rand::Rng;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap()
}

fn softmax(g: &mut Graph, v: Var) -> Var {
    g.softmax(v).unwrap()
}

fn main() -> Result<()> {
    let mut rng = substream(7, Stream::Init);
    let (t, c) = (6, 3);
    let labels = [true, false, true];
    let set = CategorySet::from_labels(&labels)?;
    let s = random(t, c + 1, &mut rng);
    let a = Tensor::column(
        &(0..t)
            .map(|_| rng.random_range(0.05..0.95))
            .collect::<Vec<_>>(),
    );
    let state = ambiguity(&s, &set, 0.45, AmbiguityRule::HighEntropy);
    let mask = assign_pseudo_complementary(&s, &state.flags, &set)?;
    let scales: Vec<Tensor> = (0..3).map(|_| random(t, c + 1, &mut rng)).collect();

    let report = |name: &str, r: procl::numeric::gradcheck::GradCheckReport| {
        println!(
            "{name:>5}: max rel error {:.2e} over {} entries",
            r.max_rel_error, r.checked
        );
    };
    report(
        "mil",
        check_gradients(&[s.clone(), a.clone()], 1e-4, |g, v| {
            let s_hat = g.mul_column(v[0], v[1])?;
            mil_loss(g, v[0], s_hat, &labels, 2.0)
        })?,
    );
    report(
        "cl",
        check_gradients(std::slice::from_ref(&s), 1e-4, |g, v| {
            let p = softmax(g, v[0]);
            cl_loss(g, p, &labels)
        })?,
    );
    report(
        "pcl",
        check_gradients(std::slice::from_ref(&s), 1e-4, |g, v| {
            let p = softmax(g, v[0]);
            pcl_loss(g, p, &mask, &state.flags, &set)
        })?,
    );
    let all = vec![true; t];
    report(
        "fbd",
        check_gradients(&[s.clone(), a.clone()], 1e-4, |g, v| {
            let p = softmax(g, v[0]);
            let p_bg = g.slice_cols(p, c, c + 1)?;
            let b = g.affine(v[1], -1.0, 1.0);
            fbd_loss(g, b, p_bg, &all)
        })?,
    );
    report(
        "mpcl",
        check_gradients(&scales, 1e-4, |g, v| {
            let probs: Vec<Var> = v.iter().map(|&x| softmax(g, x)).collect();
            let mut values = Vec::new();
            for &p in &probs {
                let d = g.detach(p)?;
                values.push(g.value(d).clone());
            }
            let fused = multiscale_fuse(&values, &set, 0.45, AmbiguityRule::HighEntropy)?;
            let sum = g.add(probs[0], probs[1])?;
            let sum = g.add(sum, probs[2])?;
            let j = g.scale(sum, 1.0 / 3.0);
            mpcl_loss(g, j, &fused.s_sigma, &fused.r_ddot, &fused.f_ddot, &set)
        })?,
    );
    Ok(())
}
