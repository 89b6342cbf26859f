//! Sensor buffering and scheduling of propagation and updates on the IMU
//! time stream.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use log::{debug, warn};
use thiserror::Error;

use crate::ego_velocity::RadarScan;
use crate::filter::{Filter, FilterError, SkipReason, UpdateRecord};
use crate::propagation::ImuSample;

pub const DEFAULT_HORIZON: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("{stream} stamp {stamp} does not follow {last}")]
    NonMonotonic { stream: &'static str, stamp: f64, last: f64 },
    #[error("non-finite {0} sample")]
    NonFinite(&'static str),
    #[error("retention horizon must be at least 1 s, got {0}")]
    Horizon(f64),
    #[error("filter time {filter} is ahead of the newest IMU sample {newest}")]
    FilterAhead { filter: f64, newest: f64 },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// IMU-stream time of a radar stamp.
pub fn correction_time(scan_stamp: f64, td_hat: f64) -> f64 {
    scan_stamp + td_hat
}

#[derive(Clone, Debug)]
pub struct SensorBuffer {
    imu: VecDeque<ImuSample>,
    radar: VecDeque<RadarScan>,
    horizon: f64,
}

impl SensorBuffer {
    pub fn new(horizon: f64) -> Result<Self, TemporalError> {
        if !(horizon.is_finite() && horizon >= 1.0) {
            return Err(TemporalError::Horizon(horizon));
        }
        Ok(Self { imu: VecDeque::new(), radar: VecDeque::new(), horizon })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn imu(&self) -> &VecDeque<ImuSample> {
        &self.imu
    }

    pub fn radar(&self) -> &VecDeque<RadarScan> {
        &self.radar
    }

    pub fn newest_imu_stamp(&self) -> Option<f64> {
        self.imu.back().map(|s| s.stamp)
    }

    pub fn push_imu(&mut self, s: ImuSample) -> Result<(), TemporalError> {
        if !s.is_finite() {
            return Err(TemporalError::NonFinite("imu"));
        }
        if let Some(last) = self.imu.back() {
            if s.stamp <= last.stamp {
                return Err(TemporalError::NonMonotonic { stream: "imu", stamp: s.stamp, last: last.stamp });
            }
        }
        self.imu.push_back(s);
        Ok(())
    }

    pub fn push_radar(&mut self, scan: RadarScan) -> Result<(), TemporalError> {
        if !scan.stamp.is_finite() {
            return Err(TemporalError::NonFinite("radar"));
        }
        if let Some(last) = self.radar.back() {
            if scan.stamp <= last.stamp {
                return Err(TemporalError::NonMonotonic { stream: "radar", stamp: scan.stamp, last: last.stamp });
            }
        }
        self.radar.push_back(scan);
        Ok(())
    }

    /// Interpolated IMU reading at `t` and the sample rate of the
    /// bracketing interval.
    pub fn imu_at(&self, t: f64) -> Option<(ImuSample, f64)> {
        let k = self.imu.partition_point(|s| s.stamp < t);
        if k < self.imu.len() && self.imu[k].stamp == t {
            let rate = match (k.checked_sub(1), self.imu.get(k + 1)) {
                (Some(j), _) => 1.0 / (t - self.imu[j].stamp),
                (None, Some(b)) => 1.0 / (b.stamp - t),
                (None, None) => return None,
            };
            return Some((self.imu[k], rate));
        }
        if k == 0 || k >= self.imu.len() {
            return None;
        }
        let (a, b) = (&self.imu[k - 1], &self.imu[k]);
        Some((ImuSample::interpolate(a, b, t), 1.0 / (b.stamp - a.stamp)))
    }

    /// Drops IMU samples older than the horizon, keeping the sample that
    /// brackets `filter_stamp` from below.
    pub fn evict(&mut self, filter_stamp: f64) {
        let Some(newest) = self.newest_imu_stamp() else { return };
        let cutoff = newest - self.horizon;
        while self.imu.len() >= 2 && self.imu[0].stamp < cutoff && self.imu[1].stamp <= filter_stamp {
            self.imu.pop_front();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Propagated { from: f64, to: f64 },
    Updated { scan_stamp: f64, correction_time: f64, record: UpdateRecord },
    Skipped { scan_stamp: f64, correction_time: f64, reason: SkipReason },
}

/// Drains the buffer into the filter. Scans are taken in arrival order;
/// a scan waits while its corrected time lies beyond the buffered IMU data.
pub fn step(buf: &mut SensorBuffer, filter: &mut Filter) -> Result<Vec<Event>, TemporalError> {
    let mut events = Vec::new();
    let Some(newest) = buf.newest_imu_stamp() else { return Ok(events) };
    if filter.stamp() > newest {
        return Err(TemporalError::FilterAhead { filter: filter.stamp(), newest });
    }
    while let Some(scan) = buf.radar.front() {
        let t_corr = correction_time(scan.stamp, filter.state().t_d);
        // on the newest sample alone there is no rate yet; wait for the next
        if t_corr > newest || (t_corr == newest && buf.imu.len() < 2) {
            break;
        }
        let scan = buf.radar.pop_front().expect("front exists");
        let lag = filter.stamp() - t_corr;
        if lag > filter.config().stale_tolerance {
            warn!("dropping radar scan {}: {}", scan.stamp, SkipReason::Stale { lag });
            events.push(Event::Skipped { scan_stamp: scan.stamp, correction_time: t_corr, reason: SkipReason::Stale { lag } });
            continue;
        }
        if lag < 0.0 {
            filter.propagate_to(t_corr, &buf.imu, |from, to| events.push(Event::Propagated { from, to }))?;
        }
        let Some((u, rate)) = buf.imu_at(t_corr) else {
            warn!("dropping radar scan {}: no IMU data at {t_corr}", scan.stamp);
            events.push(Event::Skipped { scan_stamp: scan.stamp, correction_time: t_corr, reason: SkipReason::Stale { lag } });
            continue;
        };
        match filter.update(&scan, &u, rate) {
            Ok(record) => events.push(Event::Updated { scan_stamp: scan.stamp, correction_time: t_corr, record }),
            Err(reason) => {
                debug!("skipping radar scan {}: {reason}", scan.stamp);
                events.push(Event::Skipped { scan_stamp: scan.stamp, correction_time: t_corr, reason });
            }
        }
    }
    filter.propagate_to(newest, &buf.imu, |from, to| events.push(Event::Propagated { from, to }))?;
    buf.evict(filter.stamp());
    Ok(events)
}

/// Buffer shared between one producer and one consumer thread.
#[derive(Clone, Debug)]
pub struct SharedSensorBuffer {
    inner: Arc<Mutex<SensorBuffer>>,
}

impl SharedSensorBuffer {
    pub fn new(buf: SensorBuffer) -> Self {
        Self { inner: Arc::new(Mutex::new(buf)) }
    }

    fn lock(&self) -> MutexGuard<'_, SensorBuffer> {
        // a panicking holder cannot leave the queues half-updated
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push_imu(&self, s: ImuSample) -> Result<(), TemporalError> {
        self.lock().push_imu(s)
    }

    pub fn push_radar(&self, scan: RadarScan) -> Result<(), TemporalError> {
        self.lock().push_radar(scan)
    }

    pub fn step(&self, filter: &mut Filter) -> Result<Vec<Event>, TemporalError> {
        step(&mut self.lock(), filter)
    }
}
