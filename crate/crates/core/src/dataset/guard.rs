//! Runtime guard against reading target-domain strong labels while a
//! weak-only training phase is running.

use std::cell::Cell;

thread_local! {
    static LOCK_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// While alive, reading frame labels or events of a target-domain sample on
/// this thread panics.
#[must_use = "the lock is released when dropped"]
pub struct TargetLabelLock {
    _private: (),
}

impl TargetLabelLock {
    pub fn acquire() -> Self {
        LOCK_DEPTH.with(|d| d.set(d.get() + 1));
        Self { _private: () }
    }
}

impl Drop for TargetLabelLock {
    fn drop(&mut self) {
        LOCK_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

pub fn target_labels_locked() -> bool {
    LOCK_DEPTH.with(|d| d.get() > 0)
}

/// Lifts every [`TargetLabelLock`] on this thread until dropped. Used around
/// model selection on validation samples.
#[must_use = "the locks return when dropped"]
pub struct LockSuspension {
    depth: u32,
}

impl LockSuspension {
    pub fn begin() -> Self {
        Self {
            depth: LOCK_DEPTH.with(|d| d.replace(0)),
        }
    }
}

impl Drop for LockSuspension {
    fn drop(&mut self) {
        LOCK_DEPTH.with(|d| d.set(self.depth));
    }
}
