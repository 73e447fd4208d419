use ndarray::ArrayView2;

use crate::encoder::normalize_rows;
use crate::error::{Error, Result};

/// Cosine k-nearest-neighbour classification. Each query takes the majority
/// label of its `k` most similar gallery rows (ties in similarity broken by
/// gallery order); equal vote counts go to the class with the larger summed
/// similarity, then to the lower class index. With `exclude_self`, query `i`
/// never matches gallery row `i`.
pub fn knn_predict(
    gallery: ArrayView2<f64>,
    gallery_labels: &[usize],
    queries: ArrayView2<f64>,
    k: usize,
    exclude_self: bool,
) -> Result<Vec<usize>> {
    let available = gallery.nrows().saturating_sub(usize::from(exclude_self));
    if gallery.nrows() == 0 {
        return Err(Error::config("eval.k", "gallery is empty"));
    }
    if k == 0 || k > available {
        return Err(Error::config(
            "eval.k",
            format!("k = {k} but the gallery offers {available} neighbours"),
        ));
    }
    if gallery_labels.len() != gallery.nrows() {
        return Err(Error::Data(format!(
            "{} gallery labels for {} gallery rows",
            gallery_labels.len(),
            gallery.nrows()
        )));
    }
    if gallery.ncols() != queries.ncols() {
        return Err(Error::Shape(format!(
            "gallery width {} vs query width {}",
            gallery.ncols(),
            queries.ncols()
        )));
    }
    let classes = gallery_labels.iter().max().map_or(0, |m| m + 1);
    let (g, _) = normalize_rows(gallery);
    let (q, _) = normalize_rows(queries);
    let sims = q.dot(&g.t());
    Ok(sims
        .rows()
        .into_iter()
        .enumerate()
        .map(|(qi, row)| {
            let mut idx: Vec<usize> = (0..row.len()).filter(|&j| !(exclude_self && j == qi)).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut votes = vec![0usize; classes];
            let mut weight = vec![0.0f64; classes];
            for &j in &idx[..k] {
                votes[gallery_labels[j]] += 1;
                weight[gallery_labels[j]] += row[j];
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] || (votes[c] == votes[best] && weight[c] > weight[best]) {
                    best = c;
                }
            }
            best
        })
        .collect())
}
