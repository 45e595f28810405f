//! Every loss term on a small hand-made batch.

use ramoe::autodiff::Tensor;
use ramoe::losses::{
    center_loss, classification_loss, decorrelation_loss, relation_alignment_loss, relevance_matrix, softmax_triplet_relation,
    triplet_batch_hard, weights, LossBundle,
};
use ramoe::model::SigmaFn;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels = [0, 0, 1, 1, 2, 2];
    let emb = Tensor::from_rows(&[
        vec![1.0, 0.1, 0.0],
        vec![0.9, 0.0, 0.2],
        vec![0.0, 1.0, 0.1],
        vec![0.2, 0.8, 0.0],
        vec![0.0, 0.1, 1.0],
        vec![0.3, 0.0, 0.9],
    ])?;
    let logits = emb.scale(4.0)?;
    let protos = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])?;

    let cls = classification_loss(&logits, &labels)?.item();
    let tri = triplet_batch_hard(&emb, &labels, 0.3)?.item();
    let cent = center_loss(&emb, &labels, &protos)?.item();
    let peer = emb.index_rows(&[1, 0, 3, 2, 5, 4])?;
    let decor = decorrelation_loss(&emb.l2_normalize()?, &[peer.l2_normalize()?])?.item();

    let r_v = softmax_triplet_relation(&emb, &labels)?;
    let r_m = softmax_triplet_relation(&emb.scale(0.5)?, &labels)?;
    let relation = relation_alignment_loss(&r_v, &r_m.detach())?.item();
    println!("relation per anchor {:?}", r_v.values());

    let bundle = LossBundle::new(cls, tri, cent, decor, relation, 5e-4);
    println!("{bundle:#?}");

    // Relevance of two rows to three domains, each with two prototypes.
    let sets: Vec<Tensor> = (0..3).map(|l| emb.index_rows(&[2 * l, 2 * l + 1])).collect::<Result<_, _>>()?;
    let q = emb.index_rows(&[0, 4])?;
    let s = relevance_matrix(&q, &sets.iter().collect::<Vec<_>>())?;
    println!("relevance {:?}", s.values());
    println!("softmax weights {:?}", weights(&s, SigmaFn::Softmax)?.values());
    Ok(())
}
