//! Byte accounting per directed link and frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hlfdc::HEADER_LEN;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub frame: u32,
    pub sender: u16,
    pub receiver: u16,
    /// Whole message on the wire, header included.
    pub bytes: usize,
    /// Message minus the fixed header.
    pub payload_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthLedger {
    pub strategy: String,
    /// Payload bytes of one uncompressed BEV map, the ratio-1 reference.
    pub full_map_payload: usize,
    pub records: Vec<LinkRecord>,
}

impl BandwidthLedger {
    pub fn new(strategy: impl Into<String>, full_map_payload: usize) -> Self {
        Self {
            strategy: strategy.into(),
            full_map_payload,
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, frame: u32, sender: u16, receiver: u16, bytes: usize) {
        self.records.push(LinkRecord {
            frame,
            sender,
            receiver,
            bytes,
            payload_bytes: bytes.saturating_sub(HEADER_LEN),
        });
    }

    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.bytes).sum()
    }

    /// Mean payload per link over one full map's payload; `None` without links.
    pub fn mean_ratio(&self) -> Option<f64> {
        if self.records.is_empty() || self.full_map_payload == 0 {
            return None;
        }
        let payload: usize = self.records.iter().map(|r| r.payload_bytes).sum();
        Some(payload as f64 / (self.records.len() * self.full_map_payload) as f64)
    }

    pub fn ratio(&self, r: &LinkRecord) -> f64 {
        r.payload_bytes as f64 / self.full_map_payload as f64
    }

    /// `frame,sender,receiver,strategy,bytes,payload_bytes,ratio`, one row per link.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
        w.write_record(["frame", "sender", "receiver", "strategy", "bytes", "payload_bytes", "ratio"])?;
        for r in &self.records {
            w.write_record([
                r.frame.to_string(),
                r.sender.to_string(),
                r.receiver.to_string(),
                self.strategy.clone(),
                r.bytes.to_string(),
                r.payload_bytes.to_string(),
                format!("{:.6}", self.ratio(r)),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
