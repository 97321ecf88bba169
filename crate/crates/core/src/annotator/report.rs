use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::{Status, StoreState};
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoAgreement {
    pub video_id: String,
    pub verified: usize,
    pub agreed: usize,
    pub agreement_rate: f64,
    pub fp: usize,
    pub fn_: usize,
}

/// Per-frame agreement between machine and human labels, yawn = positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub verified: usize,
    pub agreed: usize,
    pub agreement_rate: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_video: Vec<VideoAgreement>,
}

pub fn agreement_report(state: &StoreState) -> Result<AgreementReport> {
    let mut per_video: BTreeMap<&str, VideoAgreement> = BTreeMap::new();
    for a in state.annotations.values().filter(|a| a.status == Status::Verified) {
        let row = per_video
            .entry(&a.video_id)
            .or_insert_with(|| VideoAgreement { video_id: a.video_id.clone(), ..Default::default() });
        row.verified += 1;
        row.agreed += (a.label == a.auto_label) as usize;
        row.fp += (a.auto_label == Label::Yawn && a.label != Label::Yawn) as usize;
        row.fn_ += (a.auto_label != Label::Yawn && a.label == Label::Yawn) as usize;
    }
    let mut report = AgreementReport::default();
    for row in per_video.values_mut() {
        row.agreement_rate = row.agreed as f64 / row.verified as f64;
        report.verified += row.verified;
        report.agreed += row.agreed;
        report.fp += row.fp;
        report.fn_ += row.fn_;
    }
    if report.verified == 0 {
        return Err(Error::NothingVerified);
    }
    report.agreement_rate = report.agreed as f64 / report.verified as f64;
    report.per_video = per_video.into_values().collect();
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoProgress {
    pub video_id: String,
    pub total: usize,
    pub auto: usize,
    pub verified: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub total: usize,
    pub auto: usize,
    pub verified: usize,
    /// Frames that could not be annotated (not part of `total`).
    pub failed: usize,
    pub open_batches: usize,
    pub agreement_rate: Option<f64>,
    pub per_video: Vec<VideoProgress>,
    pub store_hash: String,
}

pub fn progress(state: &StoreState) -> ProgressReport {
    let mut per_video: BTreeMap<&str, VideoProgress> = BTreeMap::new();
    for a in state.annotations.values() {
        let row = per_video
            .entry(&a.video_id)
            .or_insert_with(|| VideoProgress { video_id: a.video_id.clone(), ..Default::default() });
        row.total += 1;
        match a.status {
            Status::Auto => row.auto += 1,
            Status::Verified => row.verified += 1,
        }
    }
    let per_video: Vec<VideoProgress> = per_video.into_values().collect();
    ProgressReport {
        total: per_video.iter().map(|r| r.total).sum(),
        auto: per_video.iter().map(|r| r.auto).sum(),
        verified: per_video.iter().map(|r| r.verified).sum(),
        failed: state.failures.len(),
        open_batches: state.batches.values().filter(|b| b.state == super::BatchState::Open).count(),
        agreement_rate: agreement_report(state).ok().map(|r| r.agreement_rate),
        per_video,
        store_hash: state.hash(),
    }
}
