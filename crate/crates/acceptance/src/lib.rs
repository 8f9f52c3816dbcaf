//! Result bookkeeping for the acceptance run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs criteria one by one and prints a line for each as it finishes.
#[derive(Default)]
pub struct Ledger {
    pub verdicts: Vec<Verdict>,
}

impl Ledger {
    /// `check` returns `Ok(detail)` on success and `Err(detail)` on failure; a panic counts as failure.
    pub fn run(&mut self, name: &str, check: impl FnOnce() -> Result<String, String>) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(Ok(d)) => (true, d),
            Ok(Err(d)) => (false, d),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                (false, format!("panicked: {msg}"))
            }
        };
        let v = Verdict {
            name: name.to_string(),
            passed,
            detail,
            elapsed,
        };
        println!("{}", v.line());
        self.verdicts.push(v);
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// `Ok(detail)` when `cond` holds, else `Err(detail)`.
pub fn verdict(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}
