//! Retry with jittered exponential backoff, and a token-bucket rate limiter.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

/// Whether a failed attempt may be retried.
pub trait Retryable {
    fn is_retryable(&self) -> bool;
}

/// Outcome of a retried operation, successful or not.
#[derive(Debug)]
pub struct Attempted<T> {
    pub value: T,
    pub attempts: u32,
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` is 1-based.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(30))
            .min(self.max_delay_ms);
        let ms = if self.jitter && exp > 0 {
            // equal jitter: half fixed, half random
            exp / 2 + rand::rng().random_range(0..=exp / 2)
        } else {
            exp
        };
        Duration::from_millis(ms)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. `op` receives the 1-based attempt number.
    pub fn run<T, E, F>(&self, mut op: F) -> Result<Attempted<T>, Attempted<E>>
    where
        E: Retryable + std::fmt::Display,
        F: FnMut(u32) -> Result<T, E>,
    {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok(Attempted { value, attempts: attempt }),
                Err(e) if attempt < max && e.is_retryable() => {
                    let wait = self.delay(attempt);
                    tracing::warn!(attempt, max, ?wait, error = %e, "retrying");
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(Attempted { value: e, attempts: attempt }),
            }
        }
    }
}

/// Blocking token bucket shared by every caller of one backend.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            refill_per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Bucket allowing `per_minute` calls per minute with a burst of the same size.
    pub fn per_minute(per_minute: u32) -> Self {
        Self::new(per_minute, f64::from(per_minute) / 60.0)
    }

    /// Takes one token, sleeping until one is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("token bucket poisoned");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.refill_per_sec)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                if self.refill_per_sec <= 0.0 {
                    Duration::from_millis(50)
                } else {
                    Duration::from_secs_f64((1.0 - *tokens) / self.refill_per_sec)
                }
            };
            thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct E(bool);
    impl Retryable for E {
        fn is_retryable(&self) -> bool {
            self.0
        }
    }
    impl std::fmt::Display for E {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, "E({})", self.0)
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 1,
            max_delay_ms: 4,
            jitter: true,
        }
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let r = fast().run(|a| if a < 4 { Err(E(true)) } else { Ok(a) }).unwrap();
        assert_eq!(r.value, 4);
        assert_eq!(r.attempts, 4);
    }

    #[test]
    fn gives_up_after_budget() {
        let err = fast().run::<(), _, _>(|_| Err(E(true))).unwrap_err();
        assert_eq!(err.attempts, 5);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let err = fast().run::<(), _, _>(|_| Err(E(false))).unwrap_err();
        assert_eq!(err.attempts, 1);
    }

    #[test]
    fn delay_is_capped_and_jittered() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
            jitter: true,
        };
        for attempt in 1..10 {
            let d = p.delay(attempt).as_millis() as u64;
            let exp = (100u64 << (attempt - 1)).min(1000);
            assert!(d >= exp / 2 && d <= exp, "attempt {attempt}: {d}");
        }
    }

    #[test]
    fn bucket_allows_burst() {
        let b = TokenBucket::new(3, 1000.0);
        let t = Instant::now();
        for _ in 0..3 {
            b.acquire();
        }
        assert!(t.elapsed() < Duration::from_millis(50));
    }
}
