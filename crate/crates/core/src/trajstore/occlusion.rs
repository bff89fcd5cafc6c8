//! Simulated broadcast-camera visibility.
//!
//! A virtual camera follows the ball with exponential smoothing; players
//! farther than `player_radius` meters from the camera center are marked
//! absent, and the ball itself is dropped per frame with probability
//! `1 - ball_retention`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MatchTrajectories, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionPolicy {
    /// Visibility radius in meters; `None` keeps every player.
    pub player_radius: Option<f64>,
    pub ball_retention: f64,
    /// Per-frame blend factor pulling the camera toward the ball, in (0, 1].
    pub camera_smoothing: f64,
}

impl Default for OcclusionPolicy {
    fn default() -> Self {
        OcclusionPolicy {
            player_radius: Some(25.0),
            ball_retention: 0.95,
            camera_smoothing: 0.1,
        }
    }
}

impl OcclusionPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.player_radius {
            if !(r >= 0.0) {
                return Err(Error::config("occlusion.player_radius", "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.ball_retention) {
            return Err(Error::config("occlusion.ball_retention", "must lie in [0, 1]"));
        }
        if !(self.camera_smoothing > 0.0 && self.camera_smoothing <= 1.0) {
            return Err(Error::config("occlusion.camera_smoothing", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

pub fn occlude(m: &MatchTrajectories, policy: &OcclusionPolicy, seed: u64) -> MatchTrajectories {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball_keep: Vec<bool> = (0..m.frame_count)
        .map(|_| rng.random::<f64>() < policy.ball_retention)
        .collect();

    // camera path in meters
    let mut camera = Vec::with_capacity(m.frame_count);
    let mut cam: Option<(f64, f64)> = None;
    for f in 0..m.frame_count {
        if let Some((bx, by)) = m.position_m(0, f) {
            cam = Some(match cam {
                None => (bx, by),
                Some((cx, cy)) => (
                    cx + policy.camera_smoothing * (bx - cx),
                    cy + policy.camera_smoothing * (by - cy),
                ),
            });
        }
        camera.push(cam);
    }

    m.map_tracks(|idx, track| {
        (0..m.frame_count)
            .map(|f| {
                let s = track.samples[f];
                if !s.present {
                    return Sample::ABSENT;
                }
                let keep = if idx == 0 {
                    ball_keep[f]
                } else {
                    match (policy.player_radius, camera[f]) {
                        (None, _) => true,
                        (Some(_), None) => false,
                        (Some(r), Some((cx, cy))) => {
                            let (px, py) = m.position_m(idx, f).expect("present sample");
                            (px - cx).hypot(py - cy) < r
                        }
                    }
                };
                if keep {
                    s
                } else {
                    Sample::ABSENT
                }
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, SimConfig};

    fn sample_match() -> MatchTrajectories {
        let cfg = SimConfig {
            duration_minutes: 0.5,
            ..SimConfig::default()
        };
        generate(&cfg, 0).unwrap().trajectories
    }

    #[test]
    fn unlimited_radius_is_identity() {
        let m = sample_match();
        let policy = OcclusionPolicy {
            player_radius: None,
            ball_retention: 1.0,
            camera_smoothing: 0.2,
        };
        assert_eq!(occlude(&m, &policy, 3), m);
    }

    #[test]
    fn zero_radius_keeps_only_ball() {
        let m = sample_match();
        let policy = OcclusionPolicy {
            player_radius: Some(0.0),
            ball_retention: 1.0,
            camera_smoothing: 0.2,
        };
        let o = occlude(&m, &policy, 3);
        assert_eq!(o.ball(), m.ball());
        assert!(o.players().iter().all(|p| p.samples.iter().all(|s| !s.present)));
    }

    #[test]
    fn deterministic_under_seed() {
        let m = sample_match();
        let policy = OcclusionPolicy::default();
        assert_eq!(occlude(&m, &policy, 11), occlude(&m, &policy, 11));
        assert_ne!(occlude(&m, &policy, 11), occlude(&m, &policy, 12));
    }

    #[test]
    fn default_policy_hides_some_players() {
        let m = sample_match();
        let o = occlude(&m, &OcclusionPolicy::default(), 1);
        let count = |m: &MatchTrajectories| -> usize {
            m.players().iter().map(|p| p.samples.iter().filter(|s| s.present).count()).sum()
        };
        assert!(count(&o) < count(&m));
        assert!(count(&o) > 0);
    }
}
