//! Token-bucket rate limiting.

use std::time::Duration;

use crate::units::DataRate;

#[derive(Clone, Debug, PartialEq)]
pub struct ShaperConfig {
    pub rate: DataRate,
    pub bucket_depth_bits: u64,
    pub added_one_way_delay: Duration,
}

impl ShaperConfig {
    /// Checks that the bucket can hold a whole chunk of `chunk_bits`;
    /// otherwise that chunk could never be released.
    pub fn validate(&self, chunk_bits: u64) -> Result<(), String> {
        if self.rate.is_zero() {
            return Err("shaper rate must be positive".into());
        }
        if self.bucket_depth_bits < chunk_bits {
            return Err(format!(
                "bucket depth {} bits is smaller than a {} bit chunk",
                self.bucket_depth_bits, chunk_bits
            ));
        }
        Ok(())
    }
}

/// Clock-agnostic token bucket. Times are offsets from an arbitrary epoch
/// supplied by the caller; the bucket starts full.
#[derive(Clone, Debug)]
pub struct TokenBucket {
    rate_bps: f64,
    depth: f64,
    tokens: f64,
    last: Duration,
}

impl TokenBucket {
    pub fn new(rate: DataRate, depth_bits: u64, now: Duration) -> Self {
        TokenBucket { rate_bps: rate.as_bps_f64(), depth: depth_bits as f64, tokens: depth_bits as f64, last: now }
    }

    fn refill(&mut self, now: Duration) {
        if now > self.last {
            let dt = (now - self.last).as_secs_f64();
            self.tokens = (self.tokens + dt * self.rate_bps).min(self.depth);
            self.last = now;
        }
    }

    pub fn tokens(&mut self, now: Duration) -> f64 {
        self.refill(now);
        self.tokens
    }

    /// How long from `now` until `bits` tokens are available.
    pub fn wait_for(&mut self, bits: u64, now: Duration) -> Duration {
        self.refill(now);
        let missing = bits as f64 - self.tokens;
        if missing <= 0.0 {
            Duration::ZERO
        } else {
            // Round up so waiting exactly this long always suffices.
            Duration::from_secs_f64(missing / self.rate_bps) + Duration::from_nanos(1)
        }
    }

    /// Removes `bits` tokens if available.
    pub fn try_consume(&mut self, bits: u64, now: Duration) -> bool {
        self.refill(now);
        // Tolerate float dust left by the wait computation.
        if self.tokens + 1e-6 >= bits as f64 {
            self.tokens = (self.tokens - bits as f64).max(0.0);
            true
        } else {
            false
        }
    }
}
