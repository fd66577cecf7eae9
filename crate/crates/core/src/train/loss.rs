use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::math::{self, Real};
use crate::tensor::Tensor;
use crate::text::DiacriticLabel;

/// Mean of `−log softmax(logits)[label]` over positions where `mask` is set.
/// Labels at masked-out positions are never read.
pub fn masked_cross_entropy(logits: &Tensor, labels: &[Option<DiacriticLabel>], mask: &[bool]) -> Result<Real> {
    let targets = targets(logits.rows(), labels, mask)?;
    let n = targets.iter().flatten().count();
    if n == 0 {
        return Err(Error::NoValidPositions);
    }
    let mut total = 0.0f64;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let row = logits.row(r);
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let sum: Real = row.iter().map(|v| math::exp(v - max)).sum();
        total += (max + math::ln(sum) - row[t]) as f64;
    }
    Ok((total / n as f64) as Real)
}

pub(crate) fn targets(rows: usize, labels: &[Option<DiacriticLabel>], mask: &[bool]) -> Result<Vec<Option<usize>>> {
    if labels.len() != rows || mask.len() != rows {
        return Err(Error::Shape {
            op: "masked_cross_entropy",
            detail: alloc::format!("{} rows, {} labels, {} mask flags", rows, labels.len(), mask.len()),
        });
    }
    labels
        .iter()
        .zip(mask)
        .map(|(l, &m)| match (m, l) {
            (false, _) => Ok(None),
            (true, Some(l)) => Ok(Some(l.index())),
            (true, None) => Err(Error::Shape {
                op: "masked_cross_entropy",
                detail: "valid position without a label".into(),
            }),
        })
        .collect()
}

/// Records the forward pass of every example in `batch` on `g` and returns
/// the batch-mean loss node. `use_speech[i]` selects whether example `i`
/// gets its spectrogram (which may also be replaced, e.g. augmented).
pub fn batch_loss(
    g: &mut Graph,
    model: &FusionModel,
    batch: &Batch,
    mels: &[Option<&crate::audio::MelSpectrogram>],
) -> Result<Var> {
    let n_valid = batch.valid_positions();
    if n_valid == 0 {
        return Err(Error::NoValidPositions);
    }
    let weight = 1.0 / n_valid as Real;
    let mut total: Option<Var> = None;
    for i in 0..batch.len() {
        let logits = model.forward(g, &batch.token_ids[i], &batch.text_mask[i], mels[i])?;
        let t = targets(batch.max_len(), &batch.labels[i], &batch.text_mask[i])?;
        let ce = g.cross_entropy(logits, &t, weight)?;
        total = Some(match total {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
    }
    total.ok_or(Error::NoValidPositions)
}
