use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::batching::make_batches;
use super::events::{apply, replay, Event, EventBody};
use super::state::{Annotation, BatchLock, BatchState, Decision, FrameFailure, Ordering, ReviewBatch, StoreState};
use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::util;

pub const SNAPSHOT_FILE: &str = "annotations.snapshot.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CROPS_DIR: &str = "crops";

const SNAPSHOT_EVERY: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    last_ts: Option<DateTime<Utc>>,
    state: StoreState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Checkout {
    Batch(ReviewBatch),
    /// Work remains but every open batch is locked by someone else.
    Busy {
        retry_after_secs: u64,
    },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub batch_id: String,
    /// Annotations that moved from auto to verified.
    pub verified_delta: usize,
    /// Items whose final label differs from the machine label.
    pub corrected: usize,
    /// The batch had already been submitted with the same decisions.
    pub noop: bool,
}

/// Event-sourced annotation store.
///
/// Every mutation is an [`Event`] appended to `events.jsonl` before it is
/// applied; `annotations.snapshot.json` caches the folded state and is
/// rewritten periodically. Without a directory the store lives in memory
/// and keeps its log in memory too.
pub struct AnnotationStore {
    dir: Option<PathBuf>,
    state: StoreState,
    last_seq: u64,
    last_ts: Option<DateTime<Utc>>,
    clock: Arc<dyn Clock>,
    log: Option<File>,
    memory_log: Vec<Event>,
    since_snapshot: usize,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("dir", &self.dir)
            .field("last_seq", &self.last_seq)
            .field("annotations", &self.state.annotations.len())
            .finish()
    }
}

fn parse_log(path: &Path) -> Result<Vec<Event>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!("{}: dropping torn trailing record ({} bytes)", path.display(), bytes.len() - complete);
        let file = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        file.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
        file.sync_all().map_err(|e| Error::io(path, e))?;
    }
    let mut events = Vec::new();
    for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let event: Event =
            serde_json::from_slice(line).map_err(|e| Error::json(format!("{} line {}", path.display(), n + 1), e))?;
        events.push(event);
    }
    Ok(events)
}

impl AnnotationStore {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            dir: None,
            state: StoreState::default(),
            last_seq: 0,
            last_ts: None,
            clock,
            log: None,
            memory_log: Vec::new(),
            since_snapshot: 0,
        }
    }

    /// Open (or create) the store in `dir`, replaying events newer than the
    /// snapshot. A torn final line left by a crash is truncated.
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        util::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot: Option<Snapshot> = if snap_path.exists() { Some(util::read_json(&snap_path)?) } else { None };
        let (mut state, mut last_seq, mut last_ts) = match snapshot {
            Some(s) => (s.state, s.last_seq, s.last_ts),
            None => (StoreState::default(), 0, None),
        };
        let log_path = dir.join(EVENTS_FILE);
        let events = parse_log(&log_path)?;
        let log_last = events.last().map_or(0, |e| e.seq);
        if log_last < last_seq {
            return Err(Error::Store(format!("snapshot is at seq {last_seq} but the event log ends at {log_last}")));
        }
        let mut tail = 0;
        let base = last_seq;
        for e in events.iter().filter(|e| e.seq > base) {
            if e.seq != last_seq + 1 {
                return Err(Error::Store(format!("event log gap: expected seq {}, found {}", last_seq + 1, e.seq)));
            }
            apply(&mut state, e);
            last_seq = e.seq;
            last_ts = Some(e.ts);
            tail += 1;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            state,
            last_seq,
            last_ts,
            clock,
            log: Some(log),
            memory_log: Vec::new(),
            since_snapshot: tail,
        })
    }

    pub fn open_default(dir: &Path) -> Result<Self> {
        Self::open(dir, Arc::new(SystemClock))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn crops_dir(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(CROPS_DIR))
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Timestamp of the newest event, if any.
    pub fn last_event_ts(&self) -> Option<DateTime<Utc>> {
        self.last_ts
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn hash(&self) -> String {
        self.state.hash()
    }

    /// The full event log in sequence order.
    pub fn events(&self) -> Result<Vec<Event>> {
        match &self.dir {
            Some(dir) => parse_log(&dir.join(EVENTS_FILE)),
            None => Ok(self.memory_log.clone()),
        }
    }

    /// Fold the full log from an empty state.
    pub fn replay(&self) -> Result<StoreState> {
        Ok(replay(&self.events()?))
    }

    fn commit(&mut self, body: EventBody) -> Result<Event> {
        let now = self.clock.now();
        let ts = self.last_ts.map_or(now, |last| last.max(now));
        let event = Event { seq: self.last_seq + 1, ts, body };
        match (&mut self.log, &self.dir) {
            (Some(file), Some(dir)) => {
                let mut line = serde_json::to_vec(&event).map_err(|e| Error::json("event", e))?;
                line.push(b'\n');
                let path = dir.join(EVENTS_FILE);
                file.write_all(&line).map_err(|e| Error::io(&path, e))?;
                file.sync_data().map_err(|e| Error::io(&path, e))?;
            }
            _ => self.memory_log.push(event.clone()),
        }
        apply(&mut self.state, &event);
        self.last_seq = event.seq;
        self.last_ts = Some(event.ts);
        self.since_snapshot += 1;
        if self.since_snapshot >= SNAPSHOT_EVERY {
            self.checkpoint()?;
        }
        Ok(event)
    }

    /// Rewrite the snapshot so the next open replays nothing.
    pub fn checkpoint(&mut self) -> Result<()> {
        if let Some(dir) = &self.dir {
            let snap = Snapshot { last_seq: self.last_seq, last_ts: self.last_ts, state: self.state.clone() };
            util::write_json(&dir.join(SNAPSHOT_FILE), &snap)?;
        }
        self.since_snapshot = 0;
        Ok(())
    }

    /// Record machine annotations; frames that already have one are skipped.
    /// Returns how many were added.
    pub fn add_annotations(&mut self, annotations: Vec<Annotation>) -> Result<usize> {
        let mut seen = std::collections::HashSet::new();
        let fresh: Vec<Annotation> = annotations
            .into_iter()
            .filter(|a| !self.state.annotations.contains_key(&a.frame_id) && seen.insert(a.frame_id.clone()))
            .collect();
        for a in &fresh {
            if !(0.0..=1.0).contains(&a.confidence) {
                return Err(Error::InvalidInput(format!("{}: confidence {} outside [0, 1]", a.frame_id, a.confidence)));
            }
            if a.label != a.auto_label || a.status != super::Status::Auto {
                return Err(Error::InvalidInput(format!("{}: new annotations must be unreviewed", a.frame_id)));
            }
        }
        let n = fresh.len();
        if n > 0 {
            self.commit(EventBody::AutoAnnotated { annotations: fresh })?;
        }
        Ok(n)
    }

    pub fn record_failure(&mut self, failure: FrameFailure) -> Result<()> {
        if self.state.annotations.contains_key(&failure.frame_id)
            || self.state.failures.get(&failure.frame_id) == Some(&failure)
        {
            return Ok(());
        }
        self.commit(EventBody::FrameFailed { failure }).map(|_| ())
    }

    /// Open the next batch from free pending work, without locking it.
    pub fn open_next_batch(&mut self, batch_size: usize, ordering: Ordering) -> Result<Option<ReviewBatch>> {
        self.open_batch_locked(batch_size, ordering, None)
    }

    fn open_batch_locked(
        &mut self,
        batch_size: usize,
        ordering: Ordering,
        lock: Option<BatchLock>,
    ) -> Result<Option<ReviewBatch>> {
        let Some(mut batch) = make_batches(&self.state, batch_size, ordering)?.into_iter().next() else {
            return Ok(None);
        };
        batch.lock = lock;
        let id = batch.batch_id.clone();
        self.commit(EventBody::BatchOpened { batch })?;
        Ok(self.state.batches.get(&id).cloned())
    }

    /// Hand a batch to `session`: its own active batch first, then an
    /// abandoned or unlocked open batch, then a freshly opened one.
    pub fn checkout(
        &mut self,
        session: &str,
        reviewer: &str,
        ordering: Ordering,
        batch_size: usize,
        lock_ttl: Duration,
    ) -> Result<Checkout> {
        let now = self.clock.now();
        let open: Vec<&ReviewBatch> = {
            let mut v: Vec<&ReviewBatch> =
                self.state.batches.values().filter(|b| b.state == BatchState::Open).collect();
            v.sort_by(|a, b| a.opened_seq.cmp(&b.opened_seq).then_with(|| a.batch_id.cmp(&b.batch_id)));
            v
        };
        if let Some(own) = open.iter().find(|b| b.lock_active(now).is_some_and(|l| l.session == session)) {
            return Ok(Checkout::Batch((*own).clone()));
        }
        let lock =
            BatchLock { session: session.to_string(), reviewer: reviewer.to_string(), expires_at: now + lock_ttl };
        if let Some(free) = open.iter().find(|b| b.lock_active(now).is_none()) {
            let batch_id = free.batch_id.clone();
            self.commit(EventBody::BatchLocked { batch_id: batch_id.clone(), lock: Some(lock) })?;
            return Ok(Checkout::Batch(self.state.batches[&batch_id].clone()));
        }
        let soonest = open.iter().filter_map(|b| b.lock_active(now)).map(|l| l.expires_at).min();
        if let Some(batch) = self.open_batch_locked(batch_size, ordering, Some(lock))? {
            return Ok(Checkout::Batch(batch));
        }
        match soonest {
            Some(t) => Ok(Checkout::Busy { retry_after_secs: (t - now).num_seconds().max(1) as u64 }),
            None => Ok(Checkout::Empty),
        }
    }

    /// Drop `session`'s lock on a batch it holds.
    pub fn release(&mut self, session: &str, batch_id: &str) -> Result<()> {
        let batch = self.state.batches.get(batch_id).ok_or_else(|| Error::UnknownBatch(batch_id.to_string()))?;
        match &batch.lock {
            Some(l) if l.session == session => {
                self.commit(EventBody::BatchLocked { batch_id: batch_id.to_string(), lock: None })?;
                Ok(())
            }
            _ => Err(Error::LockConflict { batch_id: batch_id.to_string() }),
        }
    }

    /// Submit on behalf of a session: the batch must be locked by it,
    /// unless this is an identical resubmission.
    pub fn submit(
        &mut self,
        session: &str,
        batch_id: &str,
        decisions: &[Decision],
        reviewer: &str,
    ) -> Result<CorrectionSummary> {
        let batch = self.state.batches.get(batch_id).ok_or_else(|| Error::UnknownBatch(batch_id.to_string()))?;
        if batch.state == BatchState::Open {
            // an expired lock still counts until another session reclaims it
            if !matches!(&batch.lock, Some(l) if l.session == session) {
                return Err(Error::LockConflict { batch_id: batch_id.to_string() });
            }
        }
        self.apply_corrections(batch_id, decisions, reviewer)
    }

    /// Verify every item of an open batch with the given final labels.
    /// Identical resubmission is a logged no-op; nothing is written on error.
    pub fn apply_corrections(
        &mut self,
        batch_id: &str,
        decisions: &[Decision],
        reviewer: &str,
    ) -> Result<CorrectionSummary> {
        let batch = self.state.batches.get(batch_id).ok_or_else(|| Error::UnknownBatch(batch_id.to_string()))?;
        if reviewer.trim().is_empty() {
            return Err(Error::InvalidInput("reviewer name is empty".into()));
        }
        let mut map: BTreeMap<String, Label> = BTreeMap::new();
        for d in decisions {
            if !batch.items.iter().any(|i| i.frame_id == d.frame_id) {
                return Err(Error::UnknownFrame(d.frame_id.clone()));
            }
            if let Some(prev) = map.insert(d.frame_id.clone(), d.final_label) {
                if prev != d.final_label {
                    return Err(Error::InvalidInput(format!("conflicting decisions for {}", d.frame_id)));
                }
            }
        }
        let missing: Vec<String> = batch.frame_ids().filter(|f| !map.contains_key(*f)).map(str::to_string).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteDecisions { batch_id: batch_id.to_string(), missing });
        }
        if batch.state == BatchState::Submitted {
            if batch.decisions.as_ref() == Some(&map) {
                self.commit(EventBody::NoopResubmission {
                    batch_id: batch_id.to_string(),
                    reviewer: reviewer.to_string(),
                })?;
                return Ok(CorrectionSummary {
                    batch_id: batch_id.to_string(),
                    verified_delta: 0,
                    corrected: 0,
                    noop: true,
                });
            }
            return Err(Error::AlreadySubmitted(batch_id.to_string()));
        }
        let verified_delta = batch
            .frame_ids()
            .filter(|f| self.state.annotations.get(*f).is_some_and(|a| a.status == super::Status::Auto))
            .count();
        let corrected = batch.items.iter().filter(|i| map[&i.frame_id] != i.auto_label).count();
        let ordered: Vec<Decision> = batch
            .items
            .iter()
            .map(|i| Decision { frame_id: i.frame_id.clone(), final_label: map[&i.frame_id] })
            .collect();
        self.commit(EventBody::CorrectionsApplied {
            batch_id: batch_id.to_string(),
            reviewer: reviewer.to_string(),
            decisions: ordered,
        })?;
        Ok(CorrectionSummary { batch_id: batch_id.to_string(), verified_delta, corrected, noop: false })
    }
}

impl Drop for AnnotationStore {
    fn drop(&mut self) {
        if self.since_snapshot > 0 && self.dir.is_some() {
            if let Err(e) = self.checkpoint() {
                log::warn!("failed to write store snapshot: {e}");
            }
        }
    }
}
