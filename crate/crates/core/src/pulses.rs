//! Envelope programming for the pump, Stokes and 674 nm qubit drives.
//!
//! A [`PulseSequence`] is a list of envelope segments plus instantaneous
//! qubit rotations. Ramps follow sin² so that both the amplitude and its
//! derivative are continuous at segment joins.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::SystemParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("time {t} outside sequence [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("segment must have t_end > t_start (got {t_start}..{t_end})")]
    EmptySegment { t_start: f64, t_end: f64 },
    #[error("segment peak must be non-negative, got {0}")]
    NegativePeak(f64),
    #[error("overlapping {channel:?} segments at t = {t}")]
    Overlap { channel: Channel, t: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("rotation angle must lie in (0, π], got {0}")]
    BadAngle(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Pump,
    Stokes,
    Qubit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    SinRise,
    SinFall,
    Flat,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSegment {
    pub channel: Channel,
    pub t_start: f64,
    pub t_end: f64,
    pub shape: Shape,
    pub peak: f64,
    pub phase: f64,
}

impl EnvelopeSegment {
    pub fn new(
        channel: Channel,
        t_start: f64,
        t_end: f64,
        shape: Shape,
        peak: f64,
        phase: f64,
    ) -> Result<Self, PulseError> {
        if !(t_end > t_start) {
            return Err(PulseError::EmptySegment { t_start, t_end });
        }
        if peak < 0.0 {
            return Err(PulseError::NegativePeak(peak));
        }
        Ok(Self { channel, t_start, t_end, shape, peak, phase })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn is_ramp(&self) -> bool {
        matches!(self.shape, Shape::SinRise | Shape::SinFall)
    }

    /// Amplitude at `t`, assumed inside the segment.
    pub fn amplitude(&self, t: f64) -> f64 {
        let x = ((t - self.t_start) / self.duration()).clamp(0.0, 1.0);
        match self.shape {
            Shape::SinRise => self.peak * (0.5 * PI * x).sin().powi(2),
            Shape::SinFall => self.peak * (0.5 * PI * x).cos().powi(2),
            Shape::Flat => self.peak,
            Shape::Off => 0.0,
        }
    }

    fn mirrored(&self, total: f64) -> Self {
        let shape = match self.shape {
            Shape::SinRise => Shape::SinFall,
            Shape::SinFall => Shape::SinRise,
            s => s,
        };
        Self { t_start: total - self.t_end, t_end: total - self.t_start, shape, ..self.clone() }
    }

    fn shifted(&self, dt: f64) -> Self {
        Self { t_start: self.t_start + dt, t_end: self.t_end + dt, ..self.clone() }
    }
}

/// Ideal rotation exp(−iθ/2·(cos ϕ σx + sin ϕ σy)) of the {|0⟩, |1⟩} qubit,
/// applied instantaneously at `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitRotation {
    pub time: f64,
    pub angle: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub segments: Vec<EnvelopeSegment>,
    #[serde(default)]
    pub rotations: Vec<QubitRotation>,
    pub total_duration: f64,
}

impl PulseSequence {
    /// Validates segment ordering and overlap, then builds the sequence.
    pub fn new(
        mut segments: Vec<EnvelopeSegment>,
        rotations: Vec<QubitRotation>,
        total_duration: f64,
    ) -> Result<Self, PulseError> {
        segments.sort_by(|a, b| {
            (a.channel as u8, a.t_start).partial_cmp(&(b.channel as u8, b.t_start)).unwrap()
        });
        for pair in segments.windows(2) {
            if pair[0].channel == pair[1].channel && pair[1].t_start < pair[0].t_end - 1e-12 {
                return Err(PulseError::Overlap { channel: pair[0].channel, t: pair[1].t_start });
            }
        }
        let max_end = segments.iter().map(|s| s.t_end).fold(0.0, f64::max);
        let max_rot = rotations.iter().map(|r| r.time).fold(0.0, f64::max);
        let total_duration = total_duration.max(max_end).max(max_rot);
        let mut rotations = rotations;
        rotations.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { segments, rotations, total_duration })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn segments_on(&self, channel: Channel) -> impl Iterator<Item = &EnvelopeSegment> {
        self.segments.iter().filter(move |s| s.channel == channel)
    }

    pub fn peak(&self, channel: Channel) -> f64 {
        self.segments_on(channel).map(|s| s.peak).fold(0.0, f64::max)
    }

    /// (amplitude, phase) of a channel at time `t`.
    ///
    /// At a join between two segments the later one wins; amplitudes agree
    /// there for every generated sequence.
    pub fn envelope_at(&self, channel: Channel, t: f64) -> Result<(f64, f64), PulseError> {
        let tol = 1e-12 * (1.0 + self.total_duration);
        if !(t >= -tol && t <= self.total_duration + tol) {
            return Err(PulseError::OutOfRange { t, total: self.total_duration });
        }
        Ok(self.envelope_unchecked(channel, t))
    }

    pub(crate) fn envelope_unchecked(&self, channel: Channel, t: f64) -> (f64, f64) {
        let mut hit = None;
        for seg in self.segments_on(channel) {
            if t >= seg.t_start && t <= seg.t_end {
                hit = Some(seg);
                if t < seg.t_end {
                    break;
                }
            }
        }
        hit.map_or((0.0, 0.0), |s| (s.amplitude(t), s.phase))
    }

    /// Time at which the last Stokes segment ends.
    pub fn stokes_end(&self) -> Option<f64> {
        self.segments_on(Channel::Stokes).map(|s| s.t_end).reduce(f64::max)
    }

    /// Every segment boundary and rotation time, ascending and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .segments
            .iter()
            .flat_map(|s| [s.t_start, s.t_end])
            .chain(self.rotations.iter().map(|r| r.time))
            .chain([0.0, self.total_duration])
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        ts
    }

    pub fn shortest_ramp(&self) -> Option<f64> {
        self.segments.iter().filter(|s| s.is_ramp()).map(|s| s.duration()).reduce(f64::min)
    }

    pub fn ramp_count(&self) -> usize {
        self.segments.iter().filter(|s| s.is_ramp()).count()
    }

    /// Time-reversed copy, t → total − t.
    pub fn mirrored(&self) -> Self {
        let total = self.total_duration;
        let segments = self.segments.iter().map(|s| s.mirrored(total)).collect();
        let rotations = self
            .rotations
            .iter()
            .rev()
            .map(|r| QubitRotation { time: total - r.time, ..r.clone() })
            .collect();
        Self::new(segments, rotations, total).expect("mirroring preserves validity")
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Self {
        let offset = self.total_duration;
        let segments = self
            .segments
            .iter()
            .cloned()
            .chain(next.segments.iter().map(|s| s.shifted(offset)))
            .collect();
        let rotations = self
            .rotations
            .iter()
            .cloned()
            .chain(next.rotations.iter().map(|r| QubitRotation { time: r.time + offset, ..r.clone() }))
            .collect();
        Self::new(segments, rotations, offset + next.total_duration)
            .expect("concatenation preserves validity")
    }

    /// Adds `dphi` to the phase of every Stokes segment.
    pub fn with_stokes_phase_advanced(&self, dphi: f64) -> Self {
        let mut out = self.clone();
        for s in out.segments.iter_mut().filter(|s| s.channel == Channel::Stokes) {
            s.phase += dphi;
        }
        out
    }

    /// Exchanges pump and Stokes segments.
    pub fn with_swapped_channels(&self) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let channel = match s.channel {
                    Channel::Pump => Channel::Stokes,
                    Channel::Stokes => Channel::Pump,
                    c => c,
                };
                EnvelopeSegment { channel, ..s.clone() }
            })
            .collect();
        Self::new(segments, self.rotations.clone(), self.total_duration).expect("swap preserves validity")
    }
}

fn seg(channel: Channel, t0: f64, t1: f64, shape: Shape, peak: f64, phase: f64) -> EnvelopeSegment {
    EnvelopeSegment { channel, t_start: t0, t_end: t1, shape, peak, phase }
}

fn check_rise(t_rise: f64) -> Result<(), PulseError> {
    if t_rise > 0.0 && t_rise.is_finite() {
        Ok(())
    } else {
        Err(PulseError::NonPositive("t_rise"))
    }
}

/// Counterintuitive transfer: Stokes rises, then the pump rises while the
/// Stokes falls. Ends with the pump at its peak and the population in −|r⟩.
pub fn stirap_transfer(p: &SystemParams, t_rise: f64) -> Result<PulseSequence, PulseError> {
    check_rise(t_rise)?;
    let tr = t_rise;
    PulseSequence::new(
        vec![
            seg(Channel::Stokes, 0.0, tr, Shape::SinRise, p.omega_s, p.phi),
            seg(Channel::Stokes, tr, 2.0 * tr, Shape::SinFall, p.omega_s, p.phi),
            seg(Channel::Pump, tr, 2.0 * tr, Shape::SinRise, p.omega_p, 0.0),
        ],
        vec![],
        2.0 * tr,
    )
}

/// Single STIRAP pulse: the transfer followed by the pump ramping down.
pub fn single_stirap(p: &SystemParams, t_rise: f64) -> Result<PulseSequence, PulseError> {
    let transfer = stirap_transfer(p, t_rise)?;
    let mut segments = transfer.segments;
    segments.push(seg(Channel::Pump, 2.0 * t_rise, 3.0 * t_rise, Shape::SinFall, p.omega_p, 0.0));
    PulseSequence::new(segments, vec![], 3.0 * t_rise)
}

/// Excitation, a wait with the pump held on, and the mirrored de-excitation
/// with the Stokes phase advanced by `phi`.
pub fn double_stirap(
    p: &SystemParams,
    t_rise: f64,
    wait: f64,
    phi: f64,
) -> Result<PulseSequence, PulseError> {
    if !(wait >= 0.0 && wait.is_finite()) {
        return Err(PulseError::NonPositive("wait"));
    }
    let transfer = stirap_transfer(p, t_rise)?;
    let back = transfer.mirrored().with_stokes_phase_advanced(phi);
    if wait == 0.0 {
        return Ok(transfer.then(&back));
    }
    let hold = PulseSequence::new(
        vec![seg(Channel::Pump, 0.0, wait, Shape::Flat, p.omega_p, 0.0)],
        vec![],
        wait,
    )?;
    Ok(transfer.then(&hold).then(&back))
}

/// Surrounds `inner` with two instantaneous qubit rotations of equal angle.
pub fn ramsey_wrap(
    inner: &PulseSequence,
    pulse_angle: f64,
    pulse_phase_1: f64,
    pulse_phase_2: f64,
) -> Result<PulseSequence, PulseError> {
    if !(pulse_angle > 0.0 && pulse_angle <= PI + 1e-12) {
        return Err(PulseError::BadAngle(pulse_angle));
    }
    let mut rotations = vec![QubitRotation { time: 0.0, angle: pulse_angle, phase: pulse_phase_1 }];
    rotations.extend(inner.rotations.iter().cloned());
    rotations.push(QubitRotation {
        time: inner.total_duration,
        angle: pulse_angle,
        phase: pulse_phase_2,
    });
    PulseSequence::new(inner.segments.clone(), rotations, inner.total_duration)
}

/// Like [`ramsey_wrap`], but with square qubit pulses of finite duration
/// driven through the master equation.
pub fn ramsey_wrap_finite(
    inner: &PulseSequence,
    pulse_angle: f64,
    pulse_phase_1: f64,
    pulse_phase_2: f64,
    pulse_duration: f64,
) -> Result<PulseSequence, PulseError> {
    if !(pulse_angle > 0.0 && pulse_angle <= PI + 1e-12) {
        return Err(PulseError::BadAngle(pulse_angle));
    }
    if !(pulse_duration > 0.0) {
        return Err(PulseError::NonPositive("pulse_duration"));
    }
    let rabi = pulse_angle / pulse_duration;
    let first = PulseSequence::new(
        vec![seg(Channel::Qubit, 0.0, pulse_duration, Shape::Flat, rabi, pulse_phase_1)],
        vec![],
        pulse_duration,
    )?;
    let last = PulseSequence::new(
        vec![seg(Channel::Qubit, 0.0, pulse_duration, Shape::Flat, rabi, pulse_phase_2)],
        vec![],
        pulse_duration,
    )?;
    Ok(first.then(inner).then(&last))
}

/// Constant pump and Stokes illumination for `t_ex`, as used for absorption
/// spectroscopy.
pub fn continuous_illumination(p: &SystemParams, t_ex: f64) -> Result<PulseSequence, PulseError> {
    if !(t_ex > 0.0) {
        return Err(PulseError::NonPositive("t_ex"));
    }
    let mut segments = Vec::new();
    if p.omega_p > 0.0 {
        segments.push(seg(Channel::Pump, 0.0, t_ex, Shape::Flat, p.omega_p, 0.0));
    }
    if p.omega_s > 0.0 {
        segments.push(seg(Channel::Stokes, 0.0, t_ex, Shape::Flat, p.omega_s, p.phi));
    }
    PulseSequence::new(segments, vec![], t_ex)
}
