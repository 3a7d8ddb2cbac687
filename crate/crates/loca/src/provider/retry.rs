//! Retry backoff and request-rate limiting for the live provider.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;

/// Exponential backoff policy. Delay before attempt `n+1` is
/// `base * factor^n`, optionally jittered by a factor in `[0.5, 1.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Backoff before the retry following failed attempt number `attempt`
    /// (1-based), or `None` once the attempt budget is spent.
    pub fn backoff_after(&self, attempt: u32) -> Option<Duration> {
        if attempt >= self.max_attempts {
            return None;
        }
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        let mut delay = self.base.as_secs_f64() * exp;
        if self.jitter {
            delay *= rand::rng().random_range(0.5..1.5);
        }
        Some(Duration::from_secs_f64(delay))
    }
}

/// Shared token bucket limiting sustained request rate. One token per
/// request; refills continuously at `requests_per_minute / 60` per second
/// up to a burst capacity of one minute's allowance.
pub struct RateLimiter {
    state: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> Self {
        let capacity = f64::from(requests_per_minute.max(1));
        Self {
            state: Mutex::new(BucketState {
                tokens: capacity,
                last_refill: Instant::now(),
            }),
            capacity,
            refill_per_sec: capacity / 60.0,
        }
    }

    /// Takes one token, sleeping until one is available.
    pub fn acquire(&self) {
        loop {
            match self.try_take(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait),
            }
        }
    }

    /// Attempts to take a token at `now`; on failure returns how long to
    /// wait before the next token matures.
    fn try_take(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let elapsed = now.duration_since(state.last_refill).as_secs_f64();
        state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        state.last_refill = now;
        if state.tokens >= 1.0 {
            state.tokens -= 1.0;
            Ok(())
        } else {
            let deficit = 1.0 - state.tokens;
            Err(Duration::from_secs_f64(deficit / self.refill_per_sec))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_exponentially_without_jitter() {
        let policy = RetryPolicy {
            base: Duration::from_millis(100),
            factor: 2.0,
            max_attempts: 4,
            jitter: false,
        };
        assert_eq!(policy.backoff_after(1), Some(Duration::from_millis(100)));
        assert_eq!(policy.backoff_after(2), Some(Duration::from_millis(200)));
        assert_eq!(policy.backoff_after(3), Some(Duration::from_millis(400)));
        assert_eq!(policy.backoff_after(4), None);
    }

    #[test]
    fn jitter_stays_within_half_to_one_and_a_half() {
        let policy = RetryPolicy {
            base: Duration::from_millis(100),
            factor: 2.0,
            max_attempts: 5,
            jitter: true,
        };
        for _ in 0..200 {
            let d = policy.backoff_after(1).unwrap();
            assert!(d >= Duration::from_millis(50), "{d:?}");
            assert!(d < Duration::from_millis(150), "{d:?}");
        }
    }

    #[test]
    fn bucket_blocks_when_drained_and_refills_over_time() {
        let limiter = RateLimiter::new(60); // 1/sec, burst 60
        let start = Instant::now();
        for _ in 0..60 {
            assert!(limiter.try_take(start).is_ok());
        }
        let wait = limiter.try_take(start).unwrap_err();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1));
        // Two seconds later two tokens have matured.
        let later = start + Duration::from_secs(2);
        assert!(limiter.try_take(later).is_ok());
        assert!(limiter.try_take(later).is_ok());
        assert!(limiter.try_take(later).is_err());
    }
}
