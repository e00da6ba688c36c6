//! Text-image alignment heatmaps.

use alloc::vec::Vec;

use crate::data::Sample;
use crate::graph::Graph;
use crate::model::ClfaModel;
use crate::nn::ForwardCtx;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Entry `(i, j)` is the cosine similarity of text row `i` and image row `j`.
pub fn cosine_matrix(text: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (b, d) = text.dims2()?;
    let (bi, di) = image.dims2()?;
    if d != di {
        return Err(Error::shape("heatmap", text.shape(), image.shape()));
    }
    let norms = |t: &Tensor, rows: usize| -> Result<Vec<f64>> {
        (0..rows)
            .map(|r| {
                let n = libm::sqrt(t.row_slice(r).iter().map(|x| x * x).sum::<f64>());
                if n == 0.0 {
                    Err(Error::Domain(alloc::format!("row {r} has zero norm")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let nt = norms(text, b)?;
    let ni = norms(image, bi)?;
    let mut out = Vec::with_capacity(b * bi);
    for (i, a) in nt.iter().enumerate() {
        for (j, b) in ni.iter().enumerate() {
            let dot: f64 = text.row_slice(i).iter().zip(image.row_slice(j)).map(|(x, y)| x * y).sum();
            out.push(dot / (a * b));
        }
    }
    Tensor::matrix(b, bi, out)
}

/// Fraction of rows whose diagonal entry is (one of) the row maximum.
pub fn diagonal_max_rate(m: &Tensor) -> f64 {
    let rows = m.rows().min(m.cols());
    if rows == 0 {
        return 0.0;
    }
    let hits = (0..rows)
        .filter(|&i| {
            let row = m.row_slice(i);
            row.iter().all(|&v| v <= row[i])
        })
        .count();
    hits as f64 / rows as f64
}

/// Eval-mode pooled projections, one row per sample: `(text, image)`.
pub fn projections(model: &ClfaModel, samples: &[Sample]) -> Result<(Tensor, Tensor)> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to project".into()));
    }
    let mut text = Vec::new();
    let mut image = Vec::new();
    for s in samples {
        let mut g = Graph::new();
        let (t, i) = model.project_sample(&mut g, s, &ForwardCtx::eval())?;
        text.extend_from_slice(g.value(t).data());
        image.extend_from_slice(g.value(i).data());
    }
    let w = model.config.teacher_width;
    Ok((
        Tensor::matrix(samples.len(), w, text)?,
        Tensor::matrix(samples.len(), w, image)?,
    ))
}

/// Heatmap of the model's text and image projections for `samples`.
pub fn heatmap(model: &ClfaModel, samples: &[Sample]) -> Result<Tensor> {
    let (t, i) = projections(model, samples)?;
    cosine_matrix(&t, &i)
}

/// Diagonal-maximum rate pooled over consecutive groups of `batch` samples
/// (a trailing short group counts too).
pub fn heatmap_rate(model: &ClfaModel, samples: &[Sample], batch: usize) -> Result<f64> {
    if batch == 0 {
        return Err(Error::Parameter("batch must be at least 1".into()));
    }
    let (t, i) = projections(model, samples)?;
    let w = t.cols();
    let mut hits = 0.0;
    for start in (0..samples.len()).step_by(batch) {
        let end = (start + batch).min(samples.len());
        let rows = |m: &Tensor| Tensor::matrix(end - start, w, m.data()[start * w..end * w].to_vec());
        let h = cosine_matrix(&rows(&t)?, &rows(&i)?)?;
        hits += diagonal_max_rate(&h) * (end - start) as f64;
    }
    Ok(hits / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_have_unit_diagonal() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.1]]).unwrap();
        let h = cosine_matrix(&a, &a).unwrap();
        for i in 0..3 {
            assert!((h.get(i, i) - 1.0).abs() < 1e-15);
        }
        assert_eq!(diagonal_max_rate(&h), 1.0);
    }

    #[test]
    fn rate_counts_rows() {
        let m = Tensor::from_rows(&[[1.0, 0.0], [0.9, 0.1]]).unwrap();
        assert_eq!(diagonal_max_rate(&m), 0.5);
    }
}
