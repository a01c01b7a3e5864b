use std::thread;
use std::time::Duration;

use super::GatewayError;

/// Exponential backoff: attempt `n` (0-based) waits `base_delay * factor^n`
/// before attempt `n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent. `op` receives the 1-based attempt number.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok(value),
                Err(err) if !err.is_retryable() => return Err(err),
                Err(err) if attempt > self.max_retries => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(err),
                    })
                }
                Err(err) => {
                    let wait = self.delay(attempt - 1);
                    log::warn!("attempt {attempt} failed ({err}); retrying in {wait:?}");
                    thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            factor: 2.0,
        }
    }

    #[test]
    fn default_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_retries, 3);
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn transient_failures_exhaust_after_max_retries_plus_one() {
        let mut attempts = 0;
        let err = fast(2)
            .run::<()>(|_| {
                attempts += 1;
                Err(GatewayError::Transport("down".into()))
            })
            .unwrap_err();
        assert_eq!(attempts, 3);
        assert!(matches!(
            err,
            GatewayError::RetriesExhausted { attempts: 3, .. }
        ));
    }

    #[test]
    fn recovers_after_transient_failure() {
        let out = fast(3).run(|attempt| {
            if attempt < 3 {
                Err(GatewayError::Status {
                    status: 503,
                    body: "busy".into(),
                })
            } else {
                Ok(attempt)
            }
        });
        assert_eq!(out.unwrap(), 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let mut attempts = 0;
        let err = fast(3)
            .run::<()>(|_| {
                attempts += 1;
                Err(GatewayError::Auth("bad key".into()))
            })
            .unwrap_err();
        assert_eq!(attempts, 1);
        assert!(matches!(err, GatewayError::Auth(_)));
    }
}
