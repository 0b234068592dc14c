//! Nearest-centroid classification on a hand-built two-block bank, with and
//! without down-weighting the noisy block.

use sur::ncc::{predict_queries, Labeled};
use sur::{
    accuracy, compute_centroids, normalize_block, select_features, Episode, FeatureBank, FeatureBlock,
    NormalizedView, SelectionVector,
};

fn main() -> sur::Result<()> {
    // "shape" separates the two classes, "noise" pulls item 5 toward class 0
    let shape = [[1.0, 0.1], [0.9, 0.0], [1.0, -0.1], [0.1, 1.0], [0.0, 0.8], [-0.1, 1.0]];
    let noise = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [5.0, 0.0]];
    let bank = FeatureBank::from_blocks(
        "toy",
        vec![0, 0, 0, 1, 1, 1],
        vec![FeatureBlock::from_rows("shape", &shape), FeatureBlock::from_rows("noise", &noise)],
    )?;

    println!("normalize [3, 4] -> {:?}", normalize_block(&[3.0, 4.0]));
    let view = NormalizedView::new(&bank);
    let selected = select_features(&view.item_blocks(5), &SelectionVector::new(vec![1.0, 0.5])?)?;
    println!("item 5 with λ = [1, 0.5]: {selected:.3?}");

    let l = |index, label| Labeled { index, label };
    let episode = Episode::new(vec![l(0, 0), l(1, 0), l(3, 1), l(4, 1)], vec![l(2, 0), l(5, 1)]);

    for lambda in [vec![1.0, 1.0], vec![1.0, 0.1], vec![0.0, 1.0]] {
        let lambda = SelectionVector::new(lambda)?;
        let model = compute_centroids(&view, &episode, &lambda)?;
        let query = select_features(&view.item_blocks(5), &lambda)?;
        println!(
            "λ = {:?}: predictions {:?}, accuracy {:.2}, cosines of item 5 {:.3?}",
            lambda.as_slice(),
            predict_queries(&view, &episode, &lambda)?,
            accuracy(&view, &episode, &lambda)?,
            model.similarities(&query)?,
        );
    }
    Ok(())
}
