use super::state::{Annotation, BatchItem, BatchState, Ordering, ReviewBatch, StoreState};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::util::sha256_hex;

pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Content hash of the member frame ids, stable across restarts.
pub fn batch_id<'a>(frame_ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut joined = String::new();
    for id in frame_ids {
        joined.push_str(id);
        joined.push('\n');
    }
    format!("b-{}", &sha256_hex(joined.as_bytes())[..16])
}

fn sort_pending(pending: &mut [&Annotation], ordering: Ordering) {
    match ordering {
        Ordering::ByVideo => pending.sort_by(|a, b| {
            (a.video_id.as_str(), a.frame_index, a.frame_id.as_str()).cmp(&(
                b.video_id.as_str(),
                b.frame_index,
                b.frame_id.as_str(),
            ))
        }),
        Ordering::ByConfidenceAsc => {
            pending.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then_with(|| a.frame_id.cmp(&b.frame_id)))
        }
    }
}

/// Partition pending work (auto annotations not already in an open batch)
/// into batches of `batch_size`; only the last may be short.
pub fn make_batches(state: &StoreState, batch_size: usize, ordering: Ordering) -> Result<Vec<ReviewBatch>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let mut pending = state.free_pending();
    sort_pending(&mut pending, ordering);
    Ok(pending
        .chunks(batch_size)
        .map(|chunk| {
            let items: Vec<BatchItem> = chunk
                .iter()
                .map(|a| BatchItem {
                    frame_id: a.frame_id.clone(),
                    crop_path: a.crop_path.clone(),
                    auto_label: a.auto_label,
                    confidence: a.confidence,
                    flagged: a.auto_label == Label::NoFace,
                })
                .collect();
            ReviewBatch {
                batch_id: batch_id(items.iter().map(|i| i.frame_id.as_str())),
                items,
                state: BatchState::Open,
                lock: None,
                opened_seq: 0,
                decisions: None,
            }
        })
        .collect())
}
