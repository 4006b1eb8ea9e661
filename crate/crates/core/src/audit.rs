//! Line-oriented audit log of every data access, tagged by split.
//!
//! The log exists so that look-ahead bugs are mechanically checkable: a
//! benchmark run can assert that no test-split access happens before the
//! `fit_complete` marker and that fitting operations only ever touch training
//! rows. In deterministic mode the timestamp column is a logical sequence
//! number instead of wall-clock seconds, so two identical runs produce
//! byte-identical logs.

use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Full,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Full => "full",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub seq: u64,
    /// Wall-clock seconds since the epoch; None in deterministic mode.
    pub wall_secs: Option<u64>,
    pub operation: String,
    pub split: SplitTag,
    /// Global row range into the full chronological panel.
    pub rows: (usize, usize),
}

#[derive(Debug)]
pub struct AuditLog {
    deterministic: bool,
    entries: Vec<AuditEntry>,
    fit_complete_seq: Option<u64>,
}

/// Shared handle; the pipeline is single-threaded but the handle keeps the
/// log usable from anywhere in a run without borrow gymnastics.
pub type AuditHandle = Arc<Mutex<AuditLog>>;

pub fn new_handle(deterministic: bool) -> AuditHandle {
    Arc::new(Mutex::new(AuditLog::new(deterministic)))
}

impl AuditLog {
    pub fn new(deterministic: bool) -> Self {
        Self { deterministic, entries: Vec::new(), fit_complete_seq: None }
    }

    pub fn record(&mut self, operation: &str, split: SplitTag, rows: (usize, usize)) {
        let seq = self.entries.len() as u64;
        let wall_secs = if self.deterministic {
            None
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        self.entries.push(AuditEntry { seq, wall_secs, operation: operation.to_string(), split, rows });
    }

    /// Marks the end of all fitting; later test-split accesses are legal.
    pub fn mark_fit_complete(&mut self) {
        self.record("fit_complete", SplitTag::Full, (0, 0));
        self.fit_complete_seq = Some(self.entries.last().unwrap().seq);
    }

    pub fn fit_complete_seq(&self) -> Option<u64> {
        self.fit_complete_seq
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    /// Test-split accesses recorded before the fit-complete marker (or at any
    /// time, if fitting never completed). Empty on a leakage-free run.
    ///
    /// `standardize_apply` is exempt: it writes train-fitted statistics onto
    /// a split and reads nothing back into the fit, so it is part of the
    /// sanctioned protocol rather than a look-ahead.
    pub fn test_accesses_before_fit(&self) -> Vec<&AuditEntry> {
        let cutoff = self.fit_complete_seq.unwrap_or(u64::MAX);
        self.entries
            .iter()
            .filter(|e| {
                e.split == SplitTag::Test && e.seq < cutoff && e.operation != "standardize_apply"
            })
            .collect()
    }

    /// Fitting-path operations (gradients, grid updates, standardization
    /// statistics) recorded against anything other than the training split.
    pub fn non_train_fit_operations(&self) -> Vec<&AuditEntry> {
        const FIT_OPS: [&str; 4] = ["train_epoch", "grid_update", "standardize_fit", "pca_fit"];
        self.entries
            .iter()
            .filter(|e| FIT_OPS.contains(&e.operation.as_str()) && e.split != SplitTag::Train)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# seq  timestamp  operation  split  rows\n");
        for e in &self.entries {
            let ts = match e.wall_secs {
                Some(s) => s.to_string(),
                None => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:06}  {}  {}  {}  rows {}..{}",
                e.seq,
                ts,
                e.operation,
                e.split.as_str(),
                e.rows.0,
                e.rows.1
            );
        }
        out
    }

    /// One-line counts per split plus the leakage verdict, for embedding in
    /// benchmark reports.
    pub fn summary(&self) -> String {
        let count = |tag: SplitTag| self.entries.iter().filter(|e| e.split == tag).count();
        format!(
            "audit: train={} validation={} test={} full={} test_before_fit={} non_train_fit_ops={}",
            count(SplitTag::Train),
            count(SplitTag::Validation),
            count(SplitTag::Test),
            count(SplitTag::Full),
            self.test_accesses_before_fit().len(),
            self.non_train_fit_operations().len(),
        )
    }
}

/// Convenience recorder on the shared handle.
pub fn record(handle: &AuditHandle, operation: &str, split: SplitTag, rows: (usize, usize)) {
    handle.lock().expect("audit log lock").record(operation, split, rows);
}
