use std::collections::BTreeMap;
use std::sync::Mutex;

/// Per-stage invocation counts. Counters only ever increase.
#[derive(Debug, Default)]
pub struct CallLedger {
    counters: Mutex<BTreeMap<String, u64>>,
}

impl CallLedger {
    pub fn record(&self, stage: &str) {
        let mut counters = self.counters.lock().expect("ledger lock poisoned");
        *counters.entry(stage.to_string()).or_insert(0) += 1;
    }

    pub fn count(&self, stage: &str) -> u64 {
        self.counters
            .lock()
            .expect("ledger lock poisoned")
            .get(stage)
            .copied()
            .unwrap_or(0)
    }

    /// Sum over stages whose label starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> u64 {
        self.counters
            .lock()
            .expect("ledger lock poisoned")
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counters
            .lock()
            .expect("ledger lock poisoned")
            .values()
            .sum()
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.counters.lock().expect("ledger lock poisoned").clone()
    }
}
