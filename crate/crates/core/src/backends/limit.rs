use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Token bucket refilled continuously at `rate` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until one token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("token bucket poisoned");
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens =
                    (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Caps concurrent requests and, optionally, their rate.
#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    bucket: Option<TokenBucket>,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(max_in_flight: usize, requests_per_second: Option<f64>) -> Self {
        Limiter {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            bucket: requests_per_second.map(TokenBucket::new),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            bucket.acquire();
        }
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("limiter poisoned")
    }
}
