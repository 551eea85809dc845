//! Walks through the class-swap triplet loss on one synthetic mask. Three
//! predictions are scored: one matching the true mask, an uninformative
//! one, and one matching the class-swapped negative. The loss should rank
//! them in that order.
//!
//! `cargo run --example samcl_walkthrough [seed]`

use thermoseg::dataset::synth::{synth_dataset, NUM_CLASSES};
use thermoseg::dataset::SyntheticFaceConfig;
use thermoseg::rng;
use thermoseg::samcl::{class_swap, one_hot, rmi_distance, samcl_loss, AuxNet, LossConfig};
use thermoseg::{Graph, Tensor};

fn main() -> thermoseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut r = rng::seeded(seed);
    let face = synth_dataset(&SyntheticFaceConfig::default(), 1, 1)?.remove(0);
    let y = one_hot(&[&face.mask], NUM_CLASSES)?;
    let neg = class_swap(&y, &mut r)?;
    println!("derangement: {:?}", neg.permutation);

    let aux = AuxNet::new(NUM_CLASSES, &mut r);
    let cfg = LossConfig::default();
    // Confident logits for a one-hot target: +4 on the labelled channel, -4 elsewhere.
    let confident = |t: &Tensor| Tensor::from_fn(t.shape(), |i| 8.0 * t.data()[i] - 4.0);
    let cases = [
        ("matches positive", confident(&y)),
        ("uniform", Tensor::zeros(y.shape())),
        ("matches negative", confident(&neg.tensor)),
    ];
    println!("{:<18} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "prediction", "d_ap", "d_an", "s0", "s1", "s2", "s3", "total");
    for (name, logits) in cases {
        let g = Graph::new();
        let x = g.constant(logits);
        let d_ap = g.item(rmi_distance(&g, x, &y, &cfg)?);
        let d_an = g.item(rmi_distance(&g, x, &neg.tensor, &cfg)?);
        let vars = aux.params().bind(&g, false);
        let terms = samcl_loss(&g, x, &y, &neg.tensor, &aux, &vars, &cfg)?;
        print!("{name:<18} {d_ap:>8.3} {d_an:>8.3}");
        for t in terms.terms {
            print!(" {:>8.3}", g.item(t));
        }
        println!(" {:>8.3}", g.item(terms.total));
    }
    Ok(())
}
