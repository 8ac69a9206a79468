use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Blocking token bucket shared by the calls of one gateway.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(burst: u32, per_sec: f64) -> Self {
        let capacity = f64::from(burst.max(1));
        Self { capacity, per_sec: per_sec.max(f64::MIN_POSITIVE), state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes a token if one is available.
    pub fn try_acquire(&self) -> bool {
        self.take().is_none()
    }

    /// Waits until a token is available, then takes it.
    pub fn acquire(&self) {
        while let Some(wait) = self.take() {
            std::thread::sleep(wait);
        }
    }

    /// `None` when a token was taken, otherwise the time until the next one.
    fn take(&self) -> Option<Duration> {
        let mut guard = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let (tokens, last) = &mut *guard;
        let now = Instant::now();
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_sec).min(self.capacity);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - *tokens) / self.per_sec))
        }
    }
}
