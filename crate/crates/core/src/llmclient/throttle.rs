//! Request throttling: concurrency ceiling, rolling rate window, retries.
//!
//! The admission logic lives in [`ThrottleState`], a plain state machine over
//! millisecond timestamps, so tests can drive it under a simulated clock and
//! assert the contract exhaustively. [`ThrottleGate`] wraps it with blocking
//! for production use, and [`ThrottledBackend`] adds the retry loop.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

const WINDOW_MS: u64 = 60_000;

/// Millisecond clock abstraction so the throttle can run on virtual time.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Wall-clock time relative to process start.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Virtual clock for tests: sleeping advances time instantly and every sleep
/// is recorded.
pub struct SimulatedClock {
    state: Mutex<SimClockState>,
}

struct SimClockState {
    now_ms: u64,
    sleeps: Vec<u64>,
}

impl SimulatedClock {
    pub fn new() -> Self {
        SimulatedClock {
            state: Mutex::new(SimClockState {
                now_ms: 0,
                sleeps: Vec::new(),
            }),
        }
    }

    pub fn advance(&self, ms: u64) {
        self.state.lock().unwrap().now_ms += ms;
    }

    /// Durations passed to `sleep_ms`, in call order.
    pub fn sleeps(&self) -> Vec<u64> {
        self.state.lock().unwrap().sleeps.clone()
    }
}

impl Default for SimulatedClock {
    fn default() -> Self {
        SimulatedClock::new()
    }
}

impl Clock for SimulatedClock {
    fn now_ms(&self) -> u64 {
        self.state.lock().unwrap().now_ms
    }

    fn sleep_ms(&self, ms: u64) {
        let mut state = self.state.lock().unwrap();
        state.now_ms += ms;
        state.sleeps.push(ms);
    }
}

/// Throttle and retry policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottlePolicy {
    pub max_concurrent: usize,
    pub requests_per_minute: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    /// Randomize backoff by up to +/-20%. Disabled for deterministic runs.
    pub jitter: bool,
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        ThrottlePolicy {
            max_concurrent: 2,
            requests_per_minute: 5.0,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_factor: 2.0,
            jitter: false,
        }
    }
}

impl ThrottlePolicy {
    fn window_limit(&self) -> usize {
        (self.requests_per_minute.floor() as usize).max(1)
    }

    /// Backoff before retry number `attempt` (0-based): base * factor^attempt.
    pub fn backoff_delay_ms(&self, attempt: u32) -> u64 {
        let raw = self.backoff_base_ms as f64 * self.backoff_factor.powi(attempt as i32);
        let jittered = if self.jitter {
            use rand::Rng;
            raw * rand::rng().random_range(0.8..=1.2)
        } else {
            raw
        };
        jittered.round() as u64
    }
}

/// Outcome of one admission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    /// The rate window is full; retry at the given timestamp.
    RateLimitedUntil(u64),
    /// The concurrency ceiling is reached; retry after a release.
    ConcurrencyBlocked,
}

/// Pure admission state machine over millisecond timestamps.
#[derive(Debug)]
pub struct ThrottleState {
    policy: ThrottlePolicy,
    in_flight: usize,
    issued: VecDeque<u64>,
}

impl ThrottleState {
    pub fn new(policy: ThrottlePolicy) -> Self {
        ThrottleState {
            policy,
            in_flight: 0,
            issued: VecDeque::new(),
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    fn prune(&mut self, now_ms: u64) {
        while let Some(&front) = self.issued.front() {
            if front + WINDOW_MS <= now_ms {
                self.issued.pop_front();
            } else {
                break;
            }
        }
    }

    /// Admits the request (recording it as issued and in flight) or reports
    /// why it must wait. Failed attempts do not mutate the state.
    pub fn try_acquire(&mut self, now_ms: u64) -> Admission {
        self.prune(now_ms);
        if self.in_flight >= self.policy.max_concurrent {
            return Admission::ConcurrencyBlocked;
        }
        let limit = self.policy.window_limit();
        if self.issued.len() >= limit {
            let blocking = self.issued[self.issued.len() - limit];
            return Admission::RateLimitedUntil(blocking + WINDOW_MS);
        }
        self.in_flight += 1;
        self.issued.push_back(now_ms);
        Admission::Admit
    }

    pub fn release(&mut self) {
        debug_assert!(self.in_flight > 0, "release without acquire");
        self.in_flight = self.in_flight.saturating_sub(1);
    }
}

/// Blocking facade over [`ThrottleState`].
pub struct ThrottleGate {
    state: Mutex<ThrottleState>,
    released: Condvar,
    clock: Arc<dyn Clock>,
}

impl ThrottleGate {
    pub fn new(policy: ThrottlePolicy, clock: Arc<dyn Clock>) -> Self {
        ThrottleGate {
            state: Mutex::new(ThrottleState::new(policy)),
            released: Condvar::new(),
            clock,
        }
    }

    /// Blocks until the request is admitted. The permit releases on drop.
    pub fn acquire(&self) -> ThrottlePermit<'_> {
        let mut state = self.state.lock().unwrap();
        loop {
            match state.try_acquire(self.clock.now_ms()) {
                Admission::Admit => return ThrottlePermit { gate: self },
                Admission::RateLimitedUntil(at) => {
                    let now = self.clock.now_ms();
                    drop(state);
                    if at > now {
                        self.clock.sleep_ms(at - now);
                    }
                    state = self.state.lock().unwrap();
                }
                Admission::ConcurrencyBlocked => {
                    state = self.released.wait(state).unwrap();
                }
            }
        }
    }

    fn release(&self) {
        self.state.lock().unwrap().release();
        self.released.notify_one();
    }
}

pub struct ThrottlePermit<'a> {
    gate: &'a ThrottleGate,
}

impl Drop for ThrottlePermit<'_> {
    fn drop(&mut self) {
        self.gate.release();
    }
}

/// A backend wrapper enforcing the throttle policy and retrying transient
/// failures with exponential backoff.
pub struct ThrottledBackend<B> {
    inner: B,
    policy: ThrottlePolicy,
    gate: ThrottleGate,
    clock: Arc<dyn Clock>,
}

impl<B: Backend> ThrottledBackend<B> {
    pub fn new(inner: B, policy: ThrottlePolicy, clock: Arc<dyn Clock>) -> Self {
        let gate = ThrottleGate::new(policy.clone(), Arc::clone(&clock));
        ThrottledBackend {
            inner,
            policy,
            gate,
            clock,
        }
    }

    pub fn with_system_clock(inner: B, policy: ThrottlePolicy) -> Self {
        Self::new(inner, policy, Arc::new(SystemClock::new()))
    }

    fn run_with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, LlmError>,
    ) -> Result<(T, u32), LlmError> {
        let mut attempt: u32 = 0;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                call()
            };
            match result {
                Ok(value) => return Ok((value, attempt)),
                Err(err) if err.is_retryable() && attempt < self.policy.max_retries => {
                    self.clock.sleep_ms(self.policy.backoff_delay_ms(attempt));
                    attempt += 1;
                }
                Err(err) if err.is_retryable() => {
                    return Err(LlmError::ExhaustedRetries {
                        attempts: attempt + 1,
                        last: err.to_string(),
                    })
                }
                Err(err) => return Err(err),
            }
        }
    }
}

impl<B: Backend> Backend for ThrottledBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let (mut response, retries) = self.run_with_retries(|| {
            let response = self.inner.complete(request)?;
            if response.text.trim().is_empty() {
                return Err(LlmError::EmptyResponse);
            }
            Ok(response)
        })?;
        response.retry_count = retries;
        Ok(response)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let (vectors, _) = self.run_with_retries(|| self.inner.embed(texts))?;
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_window_delays_the_sixth_request() {
        // rpm = 5: requests 1-5 admit immediately, the 6th must wait for the
        // first to leave the 60s window.
        let mut state = ThrottleState::new(ThrottlePolicy::default());
        for i in 0..5 {
            assert_eq!(state.try_acquire(i * 10), Admission::Admit);
            state.release();
        }
        match state.try_acquire(50) {
            Admission::RateLimitedUntil(at) => assert_eq!(at, 60_000),
            other => panic!("expected rate limit, got {other:?}"),
        }
        assert_eq!(state.try_acquire(60_000), Admission::Admit);
    }

    #[test]
    fn concurrency_ceiling_blocks_the_third_in_flight() {
        let mut state = ThrottleState::new(ThrottlePolicy {
            requests_per_minute: 1000.0,
            ..ThrottlePolicy::default()
        });
        assert_eq!(state.try_acquire(0), Admission::Admit);
        assert_eq!(state.try_acquire(1), Admission::Admit);
        assert_eq!(state.try_acquire(2), Admission::ConcurrencyBlocked);
        state.release();
        assert_eq!(state.try_acquire(3), Admission::Admit);
    }

    #[test]
    fn backoff_delays_follow_the_geometric_schedule() {
        let policy = ThrottlePolicy::default();
        assert_eq!(policy.backoff_delay_ms(0), 500);
        assert_eq!(policy.backoff_delay_ms(1), 1000);
        assert_eq!(policy.backoff_delay_ms(2), 2000);
    }

    #[test]
    fn jitter_stays_within_twenty_percent() {
        let policy = ThrottlePolicy {
            jitter: true,
            ..ThrottlePolicy::default()
        };
        for attempt in 0..3 {
            let nominal = 500.0 * 2f64.powi(attempt);
            for _ in 0..50 {
                let delay = policy.backoff_delay_ms(attempt as u32) as f64;
                assert!(delay >= nominal * 0.8 - 1.0 && delay <= nominal * 1.2 + 1.0);
            }
        }
    }
}
