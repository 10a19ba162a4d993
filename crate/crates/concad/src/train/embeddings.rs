//! Export fused context vectors for external analysis (e.g. 2-D
//! projections of the learned representation).

use crate::error::{Error, Result};
use crate::model::{ConcadModel, ModelInput};
use crate::signal::segments::SegmentBundle;
use crate::tensor::Mode;
use std::io::Write;
use std::path::Path;

/// Write one CSV row per bundle: `record_id,epoch_index,label,c1..ck`
/// where `c` is the attention context vector in inference mode. A header
/// row names the columns.
pub fn export_embeddings(
    model: &ConcadModel,
    bundles: &[SegmentBundle],
    path: &Path,
    batch_size: usize,
) -> Result<()> {
    if bundles.is_empty() {
        return Err(Error::Data("no bundles to export".into()));
    }
    let k = model.config.attention_dim;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = ["record_id", "epoch_index", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=k).map(|i| format!("c{i}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for chunk in bundles.chunks(batch_size.max(1)) {
        let refs: Vec<&SegmentBundle> = chunk.iter().collect();
        let input = ModelInput::from_bundles(&refs, &model.standardizer, &model.config)?;
        let (out, _) = model.forward(&input, Mode::Infer, None, false)?;
        for (row, b) in chunk.iter().enumerate() {
            let c = &out.attention.context.data()[row * k..(row + 1) * k];
            let mut line = format!("{},{},{}", b.record_id, b.epoch_index, b.label.index());
            for v in c {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
