use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MatchTrajectories;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Which players accompany the ball in a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlayerSelection {
    /// The `k` players closest to the ball; `0` means ball only.
    Nearest(usize),
    /// Every player in the match, ordered by distance to the ball.
    All,
}

impl PlayerSelection {
    /// Player slot count for a match with `available` players.
    pub fn slots(self, available: usize) -> usize {
        match self {
            PlayerSelection::Nearest(k) => k,
            PlayerSelection::All => available,
        }
    }
}

impl fmt::Display for PlayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlayerSelection::Nearest(k) => write!(f, "{k}"),
            PlayerSelection::All => f.write_str("all"),
        }
    }
}

impl Serialize for PlayerSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PlayerSelection::Nearest(k) => s.serialize_u64(*k as u64),
            PlayerSelection::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for PlayerSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(PlayerSelection::Nearest(k)),
            Raw::Word(w) if w.eq_ignore_ascii_case("all") => Ok(PlayerSelection::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected a count or \"all\", got {w:?}"))),
        }
    }
}

/// Window length and player selection. The center frame is passed to the
/// functions that build windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub length: usize,
    pub players: PlayerSelection,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: 51,
            players: PlayerSelection::Nearest(5),
        }
    }
}

impl WindowSpec {
    pub fn new(length: usize, players: PlayerSelection) -> Result<Self> {
        let spec = WindowSpec { length, players };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.length % 2 == 0 {
            return Err(Error::config("window.length", format!("must be odd, got {}", self.length)));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.length / 2
    }

    /// Number of object slots (ball plus players) for a match.
    pub fn objects(&self, m: &MatchTrajectories) -> usize {
        1 + self.players.slots(m.players().len())
    }
}

/// Model input slab of shape `2 x T x N` (channel, frame, object) with the
/// ball in object slot 0. `mask[t * N + n]` is false for padded or absent
/// entries, whose values are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    pub frames: usize,
    pub objects: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WindowTensor {
    pub fn shape(&self) -> [usize; 3] {
        [2, self.frames, self.objects]
    }

    pub fn value(&self, channel: usize, frame: usize, object: usize) -> f64 {
        self.values[(channel * self.frames + frame) * self.objects + object]
    }

    pub fn observed(&self, frame: usize, object: usize) -> bool {
        self.mask[frame * self.objects + object]
    }

    /// Frame-major `[T, 2N]` matrix; column `c * N + n` is channel `c` of
    /// object `n`.
    pub fn to_input(&self) -> Tensor {
        let (t_len, n) = (self.frames, self.objects);
        let mut data = vec![0.0; t_len * 2 * n];
        for c in 0..2 {
            for t in 0..t_len {
                for o in 0..n {
                    data[t * 2 * n + c * n + o] = self.value(c, t, o);
                }
            }
        }
        Tensor::new(vec![t_len, 2 * n], data).expect("window shape")
    }
}

/// Player track indices ordered by mean distance to the ball over the frames
/// of the window where both are present. Players never co-present with the
/// ball sort last; ties go to the smaller object id.
pub fn nearest_player_tracks(m: &MatchTrajectories, spec: &WindowSpec, center: usize) -> Result<Vec<usize>> {
    if center >= m.frame_count {
        return Err(Error::Range {
            what: "window center",
            value: center,
            limit: m.frame_count,
        });
    }
    let lo = center.saturating_sub(spec.half());
    let hi = (center + spec.half()).min(m.frame_count - 1);
    let ball = m.ball();
    if !(lo..=hi).any(|f| ball.samples[f].present) {
        return Err(Error::NoBall { center });
    }

    let mut scored: Vec<(f64, usize)> = m
        .tracks()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(idx, track)| {
            let (mut sum, mut count) = (0.0, 0usize);
            for f in lo..=hi {
                let (b, p) = (ball.samples[f], track.samples[f]);
                if b.present && p.present {
                    sum += (b.x - p.x).hypot(b.y - p.y);
                    count += 1;
                }
            }
            let mean = if count == 0 { f64::INFINITY } else { sum / count as f64 };
            (mean, idx)
        })
        .collect();
    // track order is id order, so the index is a valid id tie-break
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = spec.players.slots(m.players().len()).min(scored.len());
    Ok(scored.into_iter().take(k).map(|(_, idx)| idx).collect())
}

pub fn k_nearest_players(m: &MatchTrajectories, spec: &WindowSpec, center: usize) -> Result<Vec<String>> {
    Ok(nearest_player_tracks(m, spec, center)?
        .into_iter()
        .map(|i| m.tracks()[i].id.clone())
        .collect())
}

/// Builds the window centered on `center`. Frames outside the match and
/// absent samples are zero with a false mask.
pub fn build_window(m: &MatchTrajectories, spec: &WindowSpec, center: usize) -> Result<WindowTensor> {
    if !m.is_normalized() {
        return Err(Error::Contract("build_window expects a normalized match".into()));
    }
    let players = nearest_player_tracks(m, spec, center)?;
    let n = spec.objects(m);
    let t_len = spec.length;
    let mut values = vec![0.0; 2 * t_len * n];
    let mut mask = vec![false; t_len * n];
    let slots = std::iter::once(0).chain(players);
    for (slot, track_idx) in slots.enumerate() {
        let track = &m.tracks()[track_idx];
        for t in 0..t_len {
            let frame = center as isize - spec.half() as isize + t as isize;
            if frame < 0 || frame as usize >= m.frame_count {
                continue;
            }
            let s = track.samples[frame as usize];
            if s.present {
                values[t * n + slot] = s.x;
                values[(t_len + t) * n + slot] = s.y;
                mask[t * n + slot] = true;
            }
        }
    }
    Ok(WindowTensor {
        frames: t_len,
        objects: n,
        values,
        mask,
    })
}
