use std::sync::atomic::{AtomicUsize, Ordering};

/// Counts chunk activations that are alive at once.
#[derive(Debug, Default)]
pub struct ActivationTracker {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl ActivationTracker {
    pub fn acquire(&self) {
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    pub fn release(&self) {
        self.live.fetch_sub(1, Ordering::SeqCst);
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}
