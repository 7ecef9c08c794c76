//! Runner for the acceptance target: each criterion prints one line with its
//! verdict, runtime and budget.

use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub elapsed: Duration,
    pub budget: Duration,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} ({:.3} s, budget {} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// Runs `check`, failing it on error, panic or a blown time budget.
pub fn run(
    id: usize,
    name: &'static str,
    budget_secs: u64,
    check: impl FnOnce() -> Result<String, String> + std::panic::UnwindSafe,
) -> Outcome {
    let budget = Duration::from_secs(budget_secs);
    let start = Instant::now();
    let result = std::panic::catch_unwind(check);
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(Ok(d)) => (true, d),
        Ok(Err(e)) => (false, e),
        Err(p) => (false, format!("panicked: {}", panic_message(&p))),
    };
    if passed && elapsed > budget {
        passed = false;
        detail = format!("{detail}; over time budget");
    }
    let outcome = Outcome { id, name, passed, elapsed, budget, detail };
    println!("{}", outcome.line());
    outcome
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown".into())
}

/// `Ok(detail)` when `cond` holds, else `Err(detail)`.
pub fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}
