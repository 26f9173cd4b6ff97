//! Maintenance orders and the ERP stub they are submitted to.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::predict::OrderAction;
use super::store::read_lines;
use crate::canonical;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderStatus {
    Proposed,
    Approved,
    Submitted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OrderTransition {
    Approve,
    Reject,
    /// ERP receipt obtained.
    Submit,
}

impl OrderStatus {
    pub const ALL: [OrderStatus; 4] = [
        OrderStatus::Proposed,
        OrderStatus::Approved,
        OrderStatus::Submitted,
        OrderStatus::Rejected,
    ];

    /// The only legal moves are PROPOSED→APPROVED, PROPOSED→REJECTED and
    /// APPROVED→SUBMITTED.
    pub fn apply(self, t: OrderTransition) -> Result<OrderStatus, OrderError> {
        match (self, t) {
            (OrderStatus::Proposed, OrderTransition::Approve) => Ok(OrderStatus::Approved),
            (OrderStatus::Proposed, OrderTransition::Reject) => Ok(OrderStatus::Rejected),
            (OrderStatus::Approved, OrderTransition::Submit) => Ok(OrderStatus::Submitted),
            (from, t) => Err(OrderError::IllegalTransition { from, transition: t }),
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, OrderStatus::Proposed | OrderStatus::Approved)
    }
}

impl OrderTransition {
    pub const ALL: [OrderTransition; 3] = [OrderTransition::Approve, OrderTransition::Reject, OrderTransition::Submit];
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrderError {
    #[error("order {0} not found")]
    NotFound(String),
    #[error("cannot {transition:?} an order in state {from:?}")]
    IllegalTransition { from: OrderStatus, transition: OrderTransition },
    #[error("prediction {prediction_id} already has open order {order_id}")]
    AlreadyOpen { prediction_id: String, order_id: String },
    #[error("prediction {0} not found")]
    UnknownPrediction(String),
    #[error("erp: {0}")]
    Erp(String),
    #[error("storage: {0}")]
    Storage(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: OrderStatus,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceOrder {
    pub order_id: String,
    pub equipment_id: String,
    pub part: String,
    pub action: OrderAction,
    pub cause: String,
    pub status: OrderStatus,
    pub prediction_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erp_receipt: Option<String>,
    pub history: Vec<StatusChange>,
}

impl MaintenanceOrder {
    pub fn transition(&mut self, t: OrderTransition, at_ms: u64) -> Result<(), OrderError> {
        let next = self.status.apply(t)?;
        self.status = next;
        self.history.push(StatusChange { status: next, at_ms });
        Ok(())
    }
}

/// One line of `erp-orders.log`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErpLine {
    pub receipt_id: String,
    pub order_id: String,
    pub equipment_id: String,
    pub part: String,
    pub action: OrderAction,
    pub submitted_at_ms: u64,
}

pub const ERP_LOG: &str = "erp-orders.log";

/// File-backed ERP stand-in. Submissions are idempotent per order id: a
/// resubmitted order gets its original receipt back and no new line.
pub struct ErpStub {
    path: PathBuf,
    file: File,
    receipts: HashMap<String, String>,
    available: AtomicBool,
}

impl ErpStub {
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(ERP_LOG);
        let mut receipts = HashMap::new();
        if path.exists() {
            super::store::truncate_torn_tail(&path)?;
            for line in read_lines::<ErpLine>(&path)? {
                receipts.insert(line.order_id, line.receipt_id);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ErpStub {
            path,
            file,
            receipts,
            available: AtomicBool::new(true),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Simulates the ERP endpoint going down or coming back.
    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn is_available(&self) -> bool {
        self.available.load(Ordering::SeqCst)
    }

    pub fn submit(&mut self, order: &MaintenanceOrder, at_ms: u64) -> Result<String, OrderError> {
        if !self.is_available() {
            return Err(OrderError::Erp("erp endpoint unavailable".into()));
        }
        if let Some(r) = self.receipts.get(&order.order_id) {
            return Ok(r.clone());
        }
        let receipt_id = format!("erp-{:06}", self.receipts.len() + 1);
        let line = ErpLine {
            receipt_id: receipt_id.clone(),
            order_id: order.order_id.clone(),
            equipment_id: order.equipment_id.clone(),
            part: order.part.clone(),
            action: order.action,
            submitted_at_ms: at_ms,
        };
        let text = canonical::to_framed_line(&line).map_err(|e| OrderError::Erp(e.to_string()))?;
        self.file
            .write_all(text.as_bytes())
            .map_err(|e| OrderError::Erp(e.to_string()))?;
        self.receipts.insert(order.order_id.clone(), receipt_id.clone());
        Ok(receipt_id)
    }
}
