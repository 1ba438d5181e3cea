//! Daily scheduling at a fixed UTC time with catch-up on start.
//!
//! The most recent window is today's `HH:MM` if it has passed, otherwise
//! yesterday's. A run is due whenever the last run started before that
//! window, so a process that slept through its window (or has never run)
//! runs once immediately and then waits for the next day.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};

use crate::config::ScheduleTime;
use crate::runner::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextAction {
    RunNow,
    WaitUntil(DateTime<Utc>),
}

/// Latest scheduled instant that is not after `now`.
pub fn latest_window(schedule: ScheduleTime, now: DateTime<Utc>) -> DateTime<Utc> {
    let today = now.date_naive().and_time(schedule.time()).and_utc();
    if today <= now {
        today
    } else {
        today - TimeDelta::days(1)
    }
}

pub fn next_action(schedule: ScheduleTime, last_run: Option<DateTime<Utc>>, now: DateTime<Utc>) -> NextAction {
    let window = latest_window(schedule, now);
    match last_run {
        Some(last) if last >= window => NextAction::WaitUntil(window + TimeDelta::days(1)),
        _ => NextAction::RunNow,
    }
}

pub trait Clock {
    fn now(&self) -> DateTime<Utc>;
    /// Block until `t` or until `stop` is set, whichever is first.
    fn sleep_until(&self, t: DateTime<Utc>, stop: &AtomicBool);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>, stop: &AtomicBool) {
        // Short naps keep the loop responsive to `stop` and to wall-clock jumps.
        while !stop.load(Ordering::Acquire) {
            let left = t - Utc::now();
            if left <= TimeDelta::zero() {
                return;
            }
            let nap = left.to_std().unwrap_or_default().min(Duration::from_secs(1));
            std::thread::sleep(nap);
        }
    }
}

/// Manually driven clock; sleeping jumps straight to the target time.
pub struct SimulatedClock {
    now: Mutex<DateTime<Utc>>,
}

impl SimulatedClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self { now: Mutex::new(start) }
    }

    pub fn advance(&self, by: TimeDelta) {
        *self.now.lock().unwrap() += by;
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: DateTime<Utc>, _stop: &AtomicBool) {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }
}

/// Invoke `run` at every daily window until `stop` is set. Returns the
/// number of runs attempted, skipped ones excluded.
///
/// A run that fails is logged and counts as that day's run. A run refused
/// because another is in progress is skipped with a warning.
pub fn schedule_loop<C, F>(
    schedule: ScheduleTime,
    mut last_run: Option<DateTime<Utc>>,
    clock: &C,
    stop: &AtomicBool,
    mut run: F,
) -> u64
where
    C: Clock,
    F: FnMut() -> Result<(), RunError>,
{
    let mut attempted = 0;
    while !stop.load(Ordering::Acquire) {
        let now = clock.now();
        match next_action(schedule, last_run, now) {
            NextAction::WaitUntil(t) => {
                tracing::debug!(until = %t, "waiting for next window");
                clock.sleep_until(t, stop);
            }
            NextAction::RunNow => {
                last_run = Some(now);
                match run() {
                    Ok(()) => attempted += 1,
                    Err(RunError::Busy) => {
                        tracing::warn!(window = %latest_window(schedule, now), "previous run still active; window skipped")
                    }
                    Err(e) => {
                        attempted += 1;
                        tracing::error!(error = %e, "scheduled run failed");
                    }
                }
            }
        }
    }
    attempted
}
