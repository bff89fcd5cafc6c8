//! Trajectory data model, file ingestion and model-input construction.
//!
//! A [`MatchTrajectories`] stores one dense sample per frame for every
//! tracked object, with a presence flag for frames where the object was not
//! observed. Tracks are kept in canonical order: the ball first, then players
//! sorted by id.

mod io;
mod occlusion;
mod window;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_labels, load_match, load_trajectories, write_labels, write_trajectories};
pub use occlusion::{occlude, OcclusionPolicy};
pub use window::{build_window, k_nearest_players, nearest_player_tracks, PlayerSelection, WindowSpec, WindowTensor};

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchSpec {
    pub length: f64,
    pub width: f64,
}

impl Default for PitchSpec {
    fn default() -> Self {
        PitchSpec {
            length: 105.0,
            width: 68.0,
        }
    }
}

impl PitchSpec {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) || !(width > 0.0 && width.is_finite()) {
            return Err(Error::Contract(format!(
                "pitch dimensions must be positive, got {length} x {width}"
            )));
        }
        Ok(PitchSpec { length, width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Ball,
    Player,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Home,
    Away,
}

impl Team {
    pub fn opponent(self) -> Team {
        match self {
            Team::Home => Team::Away,
            Team::Away => Team::Home,
        }
    }
}

/// Position of one object at one frame. The frame is the index in
/// [`ObjectTrack::samples`]. Absent samples hold `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub present: bool,
}

impl Sample {
    pub const ABSENT: Sample = Sample {
        x: 0.0,
        y: 0.0,
        present: false,
    };

    pub fn at(x: f64, y: f64) -> Sample {
        Sample { x, y, present: true }
    }

    pub fn position(&self) -> Option<(f64, f64)> {
        self.present.then_some((self.x, self.y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: String,
    pub kind: ObjectKind,
    pub team: Option<Team>,
    pub samples: Vec<Sample>,
}

impl ObjectTrack {
    pub fn sample(&self, frame: usize) -> Sample {
        self.samples.get(frame).copied().unwrap_or(Sample::ABSENT)
    }

    pub fn is_ball(&self) -> bool {
        self.kind == ObjectKind::Ball
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Meters,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchTrajectories {
    pub id: String,
    pub pitch: PitchSpec,
    pub fps: f64,
    pub frame_count: usize,
    tracks: Vec<ObjectTrack>,
    units: Units,
}

impl MatchTrajectories {
    /// Validates and canonicalizes the track set: exactly one ball, dense
    /// samples of length `frame_count`, unique ids.
    pub fn new(
        id: impl Into<String>,
        pitch: PitchSpec,
        fps: f64,
        frame_count: usize,
        mut tracks: Vec<ObjectTrack>,
    ) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Contract(format!("fps must be positive, got {fps}")));
        }
        let balls = tracks.iter().filter(|t| t.is_ball()).count();
        if balls != 1 {
            return Err(Error::Contract(format!(
                "expected exactly one ball track, found {balls}"
            )));
        }
        for t in &mut tracks {
            if t.samples.len() > frame_count {
                return Err(Error::Range {
                    what: "track length",
                    value: t.samples.len(),
                    limit: frame_count,
                });
            }
            t.samples.resize(frame_count, Sample::ABSENT);
            if t.is_ball() {
                t.team = None;
            }
        }
        tracks.sort_by(|a, b| b.is_ball().cmp(&a.is_ball()).then_with(|| a.id.cmp(&b.id)));
        if tracks.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Contract("duplicate object id".into()));
        }
        Ok(MatchTrajectories {
            id: id.into(),
            pitch,
            fps,
            frame_count,
            tracks,
            units: Units::Meters,
        })
    }

    pub fn tracks(&self) -> &[ObjectTrack] {
        &self.tracks
    }

    pub fn ball(&self) -> &ObjectTrack {
        &self.tracks[0]
    }

    /// Player tracks, in id order.
    pub fn players(&self) -> &[ObjectTrack] {
        &self.tracks[1..]
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn is_normalized(&self) -> bool {
        self.units == Units::Normalized
    }

    /// Divides x by pitch length and y by pitch width, clamping present
    /// samples into `[0, 1]`. Already-normalized input is returned unchanged.
    pub fn normalize(&self) -> MatchTrajectories {
        if self.is_normalized() {
            return self.clone();
        }
        let (length, width) = (self.pitch.length, self.pitch.width);
        let tracks = self
            .tracks
            .iter()
            .map(|t| ObjectTrack {
                samples: t
                    .samples
                    .iter()
                    .map(|s| match s.present {
                        true => Sample::at((s.x / length).clamp(0.0, 1.0), (s.y / width).clamp(0.0, 1.0)),
                        false => Sample::ABSENT,
                    })
                    .collect(),
                ..t.clone()
            })
            .collect();
        MatchTrajectories {
            tracks,
            units: Units::Normalized,
            ..self.clone_header()
        }
    }

    /// Coordinates in meters regardless of the current units.
    pub fn position_m(&self, track: usize, frame: usize) -> Option<(f64, f64)> {
        let (x, y) = self.tracks[track].sample(frame).position()?;
        Some(match self.units {
            Units::Meters => (x, y),
            Units::Normalized => (x * self.pitch.length, y * self.pitch.width),
        })
    }

    /// Same match with every track replaced by `f(track)`.
    pub(crate) fn map_tracks(&self, mut f: impl FnMut(usize, &ObjectTrack) -> Vec<Sample>) -> MatchTrajectories {
        let tracks = self
            .tracks
            .iter()
            .enumerate()
            .map(|(i, t)| ObjectTrack {
                samples: f(i, t),
                ..t.clone()
            })
            .collect();
        MatchTrajectories {
            tracks,
            ..self.clone_header()
        }
    }

    /// Copy with `offset` absent frames prepended to every track.
    pub fn shifted(&self, offset: usize) -> MatchTrajectories {
        let mut out = self.map_tracks(|_, t| {
            let mut s = vec![Sample::ABSENT; offset];
            s.extend_from_slice(&t.samples);
            s
        });
        out.frame_count += offset;
        out
    }

    /// Uniformly scales and translates every present coordinate. Used to
    /// probe ordering invariants; the result is left in its current units.
    pub fn transformed(&self, scale: f64, dx: f64, dy: f64) -> MatchTrajectories {
        self.map_tracks(|_, t| {
            t.samples
                .iter()
                .map(|s| match s.present {
                    true => Sample::at(s.x * scale + dx, s.y * scale + dy),
                    false => Sample::ABSENT,
                })
                .collect()
        })
    }

    fn clone_header(&self) -> MatchTrajectories {
        MatchTrajectories {
            id: self.id.clone(),
            pitch: self.pitch,
            fps: self.fps,
            frame_count: self.frame_count,
            tracks: Vec::new(),
            units: self.units,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Pass,
    Reception,
    Shot,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::Pass, EventClass::Reception, EventClass::Shot];

    /// Index in a 4-way probability row (0 is background).
    pub fn prob_index(self) -> usize {
        self as usize + 1
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Pass => "pass",
            EventClass::Reception => "reception",
            EventClass::Shot => "shot",
        }
    }

    pub fn parse(s: &str) -> Option<EventClass> {
        match s {
            "pass" => Some(EventClass::Pass),
            "reception" => Some(EventClass::Reception),
            "shot" => Some(EventClass::Shot),
            _ => None,
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth event at a single frame. Background is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventLabel {
    pub frame: usize,
    pub class: EventClass,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_track_match(frames: usize) -> MatchTrajectories {
        let ball = ObjectTrack {
            id: "ball".into(),
            kind: ObjectKind::Ball,
            team: None,
            samples: (0..frames).map(|f| Sample::at(f as f64, 34.0)).collect(),
        };
        let p = ObjectTrack {
            id: "H01".into(),
            kind: ObjectKind::Player,
            team: Some(Team::Home),
            samples: vec![Sample::at(52.5, 34.0); frames],
        };
        MatchTrajectories::new("m", PitchSpec::default(), 30.0, frames, vec![p, ball]).unwrap()
    }

    #[test]
    fn ball_is_first_track() {
        let m = two_track_match(3);
        assert!(m.ball().is_ball());
        assert_eq!(m.players()[0].id, "H01");
    }

    #[test]
    fn normalize_examples() {
        let mut m = two_track_match(1);
        m.tracks[0].samples[0] = Sample::at(0.0, 0.0);
        m.tracks[1].samples[0] = Sample::at(106.0, 34.0);
        let n = m.normalize();
        assert_eq!(n.ball().samples[0], Sample::at(0.0, 0.0));
        assert_eq!(n.players()[0].samples[0], Sample::at(1.0, 0.5));
        let mid = two_track_match(1).transformed(0.0, 52.5, 34.0).normalize();
        assert_eq!(mid.ball().samples[0], Sample::at(0.5, 0.5));
    }

    #[test]
    fn absent_samples_stay_zero_after_normalize() {
        let mut m = two_track_match(2);
        m.tracks[1].samples[1] = Sample::ABSENT;
        let n = m.normalize();
        assert_eq!(n.players()[0].samples[1], Sample::ABSENT);
    }

    #[test]
    fn rejects_two_balls() {
        let m = two_track_match(2);
        let mut tracks = m.tracks().to_vec();
        let mut extra = tracks[0].clone();
        extra.id = "ball2".into();
        tracks.push(extra);
        assert!(MatchTrajectories::new("m", PitchSpec::default(), 30.0, 2, tracks).is_err());
    }
}
