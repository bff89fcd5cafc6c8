//! Synthetic soccer matches with frame-exact pass, reception and shot labels.
//!
//! The kinematics are deliberately simple: players drift around formation
//! anchors that follow the ball, the possessor dribbles toward the opposing
//! goal and eventually passes or shoots, and the ball flies with exponential
//! drag until someone comes within the control radius.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::trajstore::{EventClass, EventLabel, MatchTrajectories, ObjectKind, ObjectTrack, PitchSpec, Sample, Team};

const GOAL_HALF_WIDTH: f64 = 3.66;
/// Ball speed under control, m/s.
const CONTROL_SPEED: f64 = 10.0;
/// Frames after a kick during which the kicker cannot touch the ball again.
const KICKER_EXCLUSION: usize = 10;
/// Minimum frames between two receptions.
const RECEPTION_GAP: usize = 10;
/// Frames an opponent must stay on the ball to win it.
const TACKLE_FRAMES: usize = 5;
/// A ball slower than this with nobody on it is loose.
const LOOSE_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kinematics {
    pub max_player_speed: f64,
    pub dribble_speed: f64,
    pub press_speed: f64,
    pub pass_speed_min: f64,
    pub pass_speed_max: f64,
    pub shot_speed_min: f64,
    pub shot_speed_max: f64,
    /// Exponential ball drag, 1/s.
    pub drag: f64,
    pub control_radius: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            max_player_speed: 7.0,
            dribble_speed: 4.0,
            press_speed: 4.5,
            pass_speed_min: 11.0,
            pass_speed_max: 19.0,
            shot_speed_min: 22.0,
            shot_speed_max: 30.0,
            drag: 0.35,
            control_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventRates {
    /// Possession time before a pass or shot, seconds, uniform.
    pub hold_min: f64,
    pub hold_max: f64,
    pub pass_min_distance: f64,
    pub pass_max_distance: f64,
    /// Shots are only taken within this distance of the opposing goal.
    pub shot_range: f64,
    /// Probability of shooting instead of passing when in range.
    pub shot_probability: f64,
}

impl Default for EventRates {
    fn default() -> Self {
        EventRates {
            hold_min: 0.5,
            hold_max: 6.5,
            pass_min_distance: 8.0,
            pass_max_distance: 35.0,
            shot_range: 30.0,
            shot_probability: 0.09,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_minutes: f64,
    pub fps: f64,
    pub players_per_team: usize,
    pub kinematics: Kinematics,
    pub rates: EventRates,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            duration_minutes: 10.0,
            fps: 30.0,
            players_per_team: 11,
            kinematics: Kinematics::default(),
            rates: EventRates::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let k = &self.kinematics;
        let r = &self.rates;
        let positive = [
            ("sim.duration_minutes", self.duration_minutes),
            ("sim.fps", self.fps),
            ("sim.kinematics.max_player_speed", k.max_player_speed),
            ("sim.kinematics.dribble_speed", k.dribble_speed),
            ("sim.kinematics.press_speed", k.press_speed),
            ("sim.kinematics.pass_speed_min", k.pass_speed_min),
            ("sim.kinematics.shot_speed_min", k.shot_speed_min),
            ("sim.kinematics.drag", k.drag),
            ("sim.kinematics.control_radius", k.control_radius),
            ("sim.rates.hold_min", r.hold_min),
            ("sim.rates.pass_min_distance", r.pass_min_distance),
            ("sim.rates.shot_range", r.shot_range),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let ordered = [
            ("sim.kinematics.pass_speed_max", k.pass_speed_min, k.pass_speed_max),
            ("sim.kinematics.shot_speed_max", k.shot_speed_min, k.shot_speed_max),
            ("sim.rates.hold_max", r.hold_min, r.hold_max),
            ("sim.rates.pass_max_distance", r.pass_min_distance, r.pass_max_distance),
        ];
        for (field, lo, hi) in ordered {
            if !(hi >= lo && hi.is_finite()) {
                return Err(Error::config(field, format!("must be >= {lo}, got {hi}")));
            }
        }
        if k.dribble_speed > k.max_player_speed || k.press_speed > k.max_player_speed {
            return Err(Error::config("sim.kinematics.max_player_speed", "must bound dribble and press speeds"));
        }
        if k.max_player_speed > CONTROL_SPEED || k.pass_speed_max > k.shot_speed_max {
            return Err(Error::config(
                "sim.kinematics.shot_speed_max",
                "ball speed ordering must be player < pass < shot",
            ));
        }
        if !(0.0..=1.0).contains(&r.shot_probability) {
            return Err(Error::config("sim.rates.shot_probability", "must lie in [0, 1]"));
        }
        if self.players_per_team < 2 {
            return Err(Error::config("sim.players_per_team", "need a keeper and at least one outfield player"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_minutes * 60.0 * self.fps).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PossessionSpan {
    /// First frame the ball is under control.
    pub start: usize,
    /// One past the last frame under control.
    pub end: usize,
    pub team: Team,
    /// Index into the match's player tracks.
    pub player: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMatch {
    pub trajectories: MatchTrajectories,
    pub labels: Vec<EventLabel>,
    pub possession: Vec<PossessionSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct V2 {
    x: f64,
    y: f64,
}

impl V2 {
    fn new(x: f64, y: f64) -> V2 {
        V2 { x, y }
    }
    fn add(self, o: V2) -> V2 {
        V2::new(self.x + o.x, self.y + o.y)
    }
    fn sub(self, o: V2) -> V2 {
        V2::new(self.x - o.x, self.y - o.y)
    }
    fn scale(self, s: f64) -> V2 {
        V2::new(self.x * s, self.y * s)
    }
    fn dot(self, o: V2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    fn dist(self, o: V2) -> f64 {
        self.sub(o).norm()
    }
    fn unit(self) -> V2 {
        let n = self.norm();
        if n > 1e-12 {
            self.scale(1.0 / n)
        } else {
            V2::new(1.0, 0.0)
        }
    }
    /// Moves toward `target` by at most `step`.
    fn toward(self, target: V2, step: f64) -> V2 {
        let d = target.sub(self);
        let n = d.norm();
        if n <= step {
            target
        } else {
            self.add(d.scale(step / n))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Player {
    team: Team,
    keeper: bool,
    anchor: V2,
    pos: V2,
    vel: V2,
    wander: V2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BallState {
    Controlled {
        player: usize,
        since: usize,
        kick_at: usize,
        dribble_y: f64,
    },
    Flight {
        kicker: usize,
        kicked: usize,
        receiver: Option<usize>,
    },
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    pitch: PitchSpec,
    dt: f64,
    rng: ChaCha8Rng,
    players: Vec<Player>,
    ball: V2,
    ball_vel: V2,
    state: BallState,
    labels: Vec<EventLabel>,
    possession: Vec<PossessionSpan>,
    last_reception: Option<usize>,
    tackle_count: usize,
}

/// Attacking direction along x.
fn direction(team: Team) -> f64 {
    match team {
        Team::Home => 1.0,
        Team::Away => -1.0,
    }
}

fn formation(team: Team, players: usize, pitch: &PitchSpec) -> Vec<(V2, bool)> {
    let own_x = |x: f64| match team {
        Team::Home => x,
        Team::Away => pitch.length - x,
    };
    let mut out = vec![(V2::new(own_x(2.0), pitch.width / 2.0), true)];
    let outfield = players - 1;
    let lines = outfield.div_ceil(4);
    for line in 0..lines {
        let in_line = (outfield - line * 4).min(4);
        let x = if lines == 1 {
            45.0
        } else {
            25.0 + 40.0 * line as f64 / (lines - 1) as f64
        };
        for k in 0..in_line {
            let y = pitch.width * (k as f64 + 1.0) / (in_line as f64 + 1.0);
            out.push((V2::new(own_x(x), y), false));
        }
    }
    out
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, index: u64) -> Sim<'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        let pitch = PitchSpec::default();
        let mut players = Vec::new();
        for team in [Team::Home, Team::Away] {
            for (anchor, keeper) in formation(team, cfg.players_per_team, &pitch) {
                players.push(Player {
                    team,
                    keeper,
                    anchor,
                    pos: anchor,
                    vel: V2::default(),
                    wander: V2::default(),
                });
            }
        }
        // kick-off: the home player closest to the centre spot starts with the ball
        let centre = V2::new(pitch.length / 2.0, pitch.width / 2.0);
        let starter = (0..cfg.players_per_team)
            .filter(|&i| !players[i].keeper)
            .min_by(|&a, &b| players[a].anchor.dist(centre).total_cmp(&players[b].anchor.dist(centre)))
            .expect("outfield player exists");
        players[starter].pos = centre.sub(V2::new(0.6, 0.0));
        let mut sim = Sim {
            cfg,
            pitch,
            dt: 1.0 / cfg.fps,
            rng,
            players,
            ball: centre,
            ball_vel: V2::default(),
            state: BallState::Flight {
                kicker: usize::MAX,
                kicked: 0,
                receiver: None,
            },
            labels: Vec::new(),
            possession: Vec::new(),
            last_reception: None,
            tackle_count: 0,
        };
        sim.gain_possession(starter, 0, false);
        sim
    }

    fn clamp(&self, p: V2) -> V2 {
        V2::new(p.x.clamp(0.0, self.pitch.length), p.y.clamp(0.0, self.pitch.width))
    }

    fn goal(&self, team: Team) -> V2 {
        let x = match team {
            Team::Home => self.pitch.length,
            Team::Away => 0.0,
        };
        V2::new(x, self.pitch.width / 2.0)
    }

    fn hold_frames(&mut self) -> usize {
        let r = &self.cfg.rates;
        let secs = self.rng.random_range(r.hold_min..=r.hold_max);
        ((secs * self.cfg.fps).round() as usize).max(RECEPTION_GAP + 2)
    }

    fn gain_possession(&mut self, player: usize, frame: usize, label: bool) {
        if let BallState::Controlled { player: p, since, .. } = self.state {
            self.possession.push(PossessionSpan {
                start: since,
                end: frame + 1,
                team: self.players[p].team,
                player: p,
            });
        }
        if label {
            self.labels.push(EventLabel {
                frame,
                class: EventClass::Reception,
            });
            self.last_reception = Some(frame);
        }
        let hold = self.hold_frames();
        let dribble_y = self.rng.random_range(8.0..self.pitch.width - 8.0);
        self.state = BallState::Controlled {
            player,
            since: frame + 1,
            kick_at: frame + 1 + hold,
            dribble_y,
        };
        self.ball_vel = V2::default();
        self.tackle_count = 0;
    }

    fn release(&mut self, frame: usize) {
        if let BallState::Controlled { player, since, .. } = self.state {
            self.possession.push(PossessionSpan {
                start: since,
                end: frame,
                team: self.players[player].team,
                player,
            });
        }
    }

    /// Kicks the ball at `frame`: a shot when in range and the draw says so,
    /// otherwise a pass to a teammate.
    fn kick(&mut self, kicker: usize, frame: usize) {
        let team = self.players[kicker].team;
        let goal = self.goal(team);
        let r = self.cfg.rates;
        let k = self.cfg.kinematics;
        let in_range = self.ball.dist(goal) <= r.shot_range && !self.players[kicker].keeper;
        self.release(frame);
        if in_range && self.rng.random_bool(r.shot_probability) {
            let aim = V2::new(goal.x, goal.y + self.rng.random_range(-GOAL_HALF_WIDTH..=GOAL_HALF_WIDTH));
            let speed = self.rng.random_range(k.shot_speed_min..=k.shot_speed_max);
            self.ball_vel = aim.sub(self.ball).unit().scale(speed);
            self.labels.push(EventLabel {
                frame,
                class: EventClass::Shot,
            });
            self.state = BallState::Flight {
                kicker,
                kicked: frame,
                receiver: None,
            };
            return;
        }

        let from = self.ball;
        let mut options: Vec<(usize, f64)> = (0..self.players.len())
            .filter(|&i| i != kicker && self.players[i].team == team)
            .map(|i| (i, self.players[i].pos.dist(from)))
            .collect();
        let in_band: Vec<(usize, f64)> = options
            .iter()
            .copied()
            .filter(|(_, d)| (r.pass_min_distance..=r.pass_max_distance).contains(d))
            .collect();
        let (receiver, dist) = if in_band.is_empty() {
            // nearest to the band
            let gap = |d: f64| (r.pass_min_distance - d).max(d - r.pass_max_distance);
            options.sort_by(|a, b| gap(a.1).total_cmp(&gap(b.1)).then(a.0.cmp(&b.0)));
            options[0]
        } else {
            // forward passes are preferred
            let weights: Vec<f64> = in_band
                .iter()
                .map(|&(i, _)| {
                    let gain = (self.players[i].pos.x - from.x) * direction(team);
                    (1.0 + gain / 20.0).clamp(0.3, 2.0)
                })
                .collect();
            let mut pick = self.rng.random_range(0.0..weights.iter().sum::<f64>());
            let mut chosen = in_band[in_band.len() - 1];
            for (opt, w) in in_band.iter().zip(&weights) {
                if pick < *w {
                    chosen = *opt;
                    break;
                }
                pick -= w;
            }
            chosen
        };
        // fast enough that the drag-limited range exceeds the distance by 30%
        let floor = (1.3 * dist * k.drag).max(k.pass_speed_min).min(k.pass_speed_max);
        let speed = self.rng.random_range(floor..=k.pass_speed_max);
        let target = self.players[receiver].pos;
        self.ball_vel = target.sub(from).unit().scale(speed);
        self.labels.push(EventLabel {
            frame,
            class: EventClass::Pass,
        });
        self.state = BallState::Flight {
            kicker,
            kicked: frame,
            receiver: Some(receiver),
        };
    }

    /// Where player `i` wants to be this frame.
    fn player_target(&self, i: usize, frame: usize) -> (V2, f64) {
        let p = &self.players[i];
        let k = &self.cfg.kinematics;
        let mid = V2::new(self.pitch.length / 2.0, self.pitch.width / 2.0);
        if p.keeper {
            let gx = p.anchor.x;
            let y = self.ball.y.clamp(mid.y - GOAL_HALF_WIDTH, mid.y + GOAL_HALF_WIDTH);
            let loose_nearby = matches!(self.state, BallState::Flight { receiver: None, .. })
                && self.ball_vel.norm() < LOOSE_SPEED
                && self.ball.dist(p.anchor) < 16.0;
            if loose_nearby {
                return (self.ball, k.max_player_speed);
            }
            return (V2::new(gx, y), k.max_player_speed);
        }
        match self.state {
            BallState::Controlled { player, dribble_y, .. } if player == i => {
                let goal = self.goal(p.team);
                let stop = goal.x - direction(p.team) * 12.0;
                let forward = if (stop - p.pos.x) * direction(p.team) > 0.0 { stop } else { p.pos.x };
                (V2::new(forward, dribble_y), k.dribble_speed)
            }
            BallState::Controlled { player, .. } if self.presser(player) == Some(i) => (self.ball, k.press_speed),
            BallState::Flight { receiver: Some(r), .. } if r == i => {
                // run onto the ball's line
                let v = self.ball_vel;
                let along = p.pos.sub(self.ball).dot(v.unit()).max(0.0);
                (self.ball.add(v.unit().scale(along)), k.max_player_speed)
            }
            BallState::Flight { .. } if self.ball_vel.norm() < LOOSE_SPEED && self.chasers().contains(&i) => {
                (self.ball, k.max_player_speed)
            }
            _ => {
                let shift = V2::new((self.ball.x - mid.x) * 0.5, (self.ball.y - mid.y) * 0.3);
                let base = self.clamp(p.anchor.add(shift).add(p.wander));
                let _ = frame;
                (base, k.max_player_speed * 0.6)
            }
        }
    }

    /// Nearest outfield opponent of the ball carrier.
    fn presser(&self, carrier: usize) -> Option<usize> {
        let team = self.players[carrier].team.opponent();
        (0..self.players.len())
            .filter(|&i| self.players[i].team == team && !self.players[i].keeper)
            .min_by(|&a, &b| self.players[a].pos.dist(self.ball).total_cmp(&self.players[b].pos.dist(self.ball)))
    }

    /// Nearest outfield player of each team to a loose ball.
    fn chasers(&self) -> [usize; 2] {
        let nearest = |team: Team| {
            (0..self.players.len())
                .filter(|&i| self.players[i].team == team && !self.players[i].keeper)
                .min_by(|&a, &b| self.players[a].pos.dist(self.ball).total_cmp(&self.players[b].pos.dist(self.ball)))
                .expect("outfield player exists")
        };
        [nearest(Team::Home), nearest(Team::Away)]
    }

    fn move_players(&mut self, frame: usize) {
        let dt = self.dt;
        let accel = 6.0;
        for i in 0..self.players.len() {
            // wander: Ornstein-Uhlenbeck offset around the anchor
            let nx: f64 = self.rng.sample(StandardNormal);
            let ny: f64 = self.rng.sample(StandardNormal);
            let p = &mut self.players[i];
            p.wander = p.wander.add(p.wander.scale(-0.2 * dt)).add(V2::new(nx, ny).scale(2.5 * dt.sqrt()));
            let (target, speed) = self.player_target(i, frame);
            let p = &mut self.players[i];
            let to = target.sub(p.pos);
            let desired = to.unit().scale(speed.min(to.norm() * 1.5));
            p.vel = p.vel.toward(desired, accel * dt);
            p.pos = p.pos.add(p.vel.scale(dt));
        }
        for i in 0..self.players.len() {
            let clamped = self.clamp(self.players[i].pos);
            self.players[i].pos = clamped;
        }
    }

    fn move_ball(&mut self) {
        match self.state {
            BallState::Controlled { player, .. } => {
                let p = self.players[player];
                let heading = if p.vel.norm() > 0.3 {
                    p.vel.unit()
                } else {
                    V2::new(direction(p.team), 0.0)
                };
                let target = self.clamp(p.pos.add(heading.scale(0.6)));
                self.ball = self.ball.toward(target, CONTROL_SPEED * self.dt);
            }
            BallState::Flight { .. } => {
                let next = self.ball.add(self.ball_vel.scale(self.dt));
                let clamped = self.clamp(next);
                if clamped != next {
                    // out of play or over the goal line: the ball stops there
                    self.ball_vel = V2::default();
                } else {
                    self.ball_vel = self.ball_vel.scale((-self.cfg.kinematics.drag * self.dt).exp());
                }
                self.ball = clamped;
            }
        }
    }

    /// Possession changes decided on this frame's recorded positions.
    fn resolve_contact(&mut self, frame: usize) {
        let radius = self.cfg.kinematics.control_radius;
        if self.last_reception.is_some_and(|f| frame < f + RECEPTION_GAP) {
            return;
        }
        match self.state {
            BallState::Flight { kicker, kicked, .. } => {
                if frame <= kicked {
                    return;
                }
                let nearest = (0..self.players.len())
                    .filter(|&i| i != kicker || frame > kicked + KICKER_EXCLUSION)
                    .map(|i| (i, self.players[i].pos.dist(self.ball)))
                    .filter(|(_, d)| *d <= radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                if let Some((i, _)) = nearest {
                    self.gain_possession(i, frame, true);
                }
            }
            BallState::Controlled { player, since, .. } => {
                if frame < since + RECEPTION_GAP {
                    return;
                }
                let team = self.players[player].team.opponent();
                let tackler = (0..self.players.len())
                    .filter(|&i| self.players[i].team == team && self.players[i].pos.dist(self.ball) <= radius)
                    .min_by(|&a, &b| {
                        self.players[a].pos.dist(self.ball).total_cmp(&self.players[b].pos.dist(self.ball))
                    });
                match tackler {
                    Some(i) => {
                        self.tackle_count += 1;
                        if self.tackle_count >= TACKLE_FRAMES {
                            self.gain_possession(i, frame, true);
                        }
                    }
                    None => self.tackle_count = 0,
                }
            }
        }
    }

    fn run(mut self, frames: usize) -> (Vec<ObjectTrack>, Vec<EventLabel>, Vec<PossessionSpan>) {
        let n_players = self.players.len();
        let mut ball_samples = Vec::with_capacity(frames);
        let mut player_samples = vec![Vec::with_capacity(frames); n_players];
        // no new kicks near the end so every pass can complete
        let last_kick = frames.saturating_sub((10.0 * self.cfg.fps) as usize);
        for frame in 0..frames {
            if let BallState::Controlled { player, kick_at, .. } = self.state {
                if frame >= kick_at && frame < last_kick {
                    self.kick(player, frame);
                }
            }
            let kicked_now = matches!(self.state, BallState::Flight { kicked, .. } if kicked == frame);
            self.move_players(frame);
            if !kicked_now {
                self.move_ball();
            }
            ball_samples.push(Sample::at(self.ball.x, self.ball.y));
            for (i, p) in self.players.iter().enumerate() {
                player_samples[i].push(Sample::at(p.pos.x, p.pos.y));
            }
            self.resolve_contact(frame);
        }
        self.release(frames);

        let mut tracks = vec![ObjectTrack {
            id: "ball".into(),
            kind: ObjectKind::Ball,
            team: None,
            samples: ball_samples,
        }];
        let per_team = self.cfg.players_per_team;
        for (i, samples) in player_samples.into_iter().enumerate() {
            let team = self.players[i].team;
            let prefix = match team {
                Team::Home => 'H',
                Team::Away => 'A',
            };
            tracks.push(ObjectTrack {
                id: format!("{prefix}{:02}", i % per_team + 1),
                kind: ObjectKind::Player,
                team: Some(team),
                samples,
            });
        }
        let mut labels = self.labels;
        labels.sort();
        (tracks, labels, self.possession)
    }
}

pub fn match_id(index: u64) -> String {
    format!("sim{index:03}")
}

/// Generates match `index` of the series defined by `config.seed`. Each index
/// draws from its own random stream, so matches can be generated in any
/// order or in parallel.
pub fn generate(config: &SimConfig, index: u64) -> Result<SimMatch> {
    config.validate()?;
    let frames = config.frame_count();
    let (tracks, labels, possession) = Sim::new(config, index).run(frames);
    let trajectories = MatchTrajectories::new(match_id(index), PitchSpec::default(), config.fps, frames, tracks)?;
    Ok(SimMatch {
        trajectories,
        labels,
        possession,
    })
}

pub fn generate_many(config: &SimConfig, count: usize, exec: Exec) -> Result<Vec<SimMatch>> {
    exec.map_range(0..count, |i| generate(config, i as u64)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles `items` under `seed` and cuts them into train/val/test parts
/// proportional to `ratios` (largest remainder). Each part keeps input order.
pub fn train_test_split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<Split<T>> {
    let n = items.len();
    if n < 3 {
        return Err(Error::Contract(format!("need at least 3 matches to split, got {n}")));
    }
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::config("split", "ratios must be positive"));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    // every part gets at least one item, taken from the largest part
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).expect("three parts");
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    idx.shuffle(&mut rng);
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    let mut at = 0;
    for (part, &size) in parts.iter_mut().zip(&sizes) {
        let mut chosen = idx[at..at + size].to_vec();
        chosen.sort_unstable();
        *part = chosen.into_iter().map(|i| items[i].clone()).collect();
        at += size;
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(minutes: f64, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            duration_minutes: minutes,
            ..SimConfig::default()
        }
    }

    fn count(labels: &[EventLabel], class: EventClass) -> usize {
        labels.iter().filter(|l| l.class == class).count()
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = short(1.0, 7);
        assert_eq!(generate(&cfg, 3).unwrap(), generate(&cfg, 3).unwrap());
        assert_ne!(generate(&cfg, 3).unwrap().labels, generate(&cfg, 4).unwrap().labels);
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let cfg = short(0.5, 1);
        let a = generate_many(&cfg, 3, Exec::Sequential).unwrap();
        let b = generate_many(&cfg, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn structure() {
        let m = generate(&short(0.5, 0), 0).unwrap();
        let t = &m.trajectories;
        assert_eq!(t.frame_count, 900);
        assert_eq!(t.tracks().len(), 23);
        assert_eq!(t.ball().id, "ball");
        assert!(t.tracks().iter().all(|tr| tr.samples.iter().all(|s| s.present)));
    }

    #[test]
    fn generator_postconditions() {
        let cfg = short(5.0, 11);
        let k = cfg.kinematics;
        let m = generate(&cfg, 0).unwrap();
        let t = &m.trajectories;
        let pitch = t.pitch;
        for tr in t.tracks() {
            for s in &tr.samples {
                assert!((0.0..=pitch.length).contains(&s.x) && (0.0..=pitch.width).contains(&s.y));
            }
        }
        let ball = &t.ball().samples;
        for w in ball.windows(2) {
            let speed = (w[1].x - w[0].x).hypot(w[1].y - w[0].y) * cfg.fps;
            assert!(speed <= k.shot_speed_max + 1e-9, "ball speed {speed}");
        }
        for l in m.labels.iter().filter(|l| l.class == EventClass::Reception) {
            let b = ball[l.frame];
            let nearest = t
                .players()
                .iter()
                .map(|p| (p.samples[l.frame].x - b.x).hypot(p.samples[l.frame].y - b.y))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= k.control_radius + 1e-12, "reception at {} with gap {nearest}", l.frame);
        }
        for class in EventClass::ALL {
            let frames: Vec<usize> = m.labels.iter().filter(|l| l.class == class).map(|l| l.frame).collect();
            assert!(frames.windows(2).all(|w| w[1] - w[0] >= 10), "{class} labels too close");
        }
        // every pass or shot is followed by a strictly later reception
        for kick in m.labels.iter().filter(|l| l.class != EventClass::Reception) {
            let next_kick = m
                .labels
                .iter()
                .find(|l| l.frame > kick.frame && l.class != EventClass::Reception)
                .map_or(usize::MAX, |l| l.frame);
            assert!(
                m.labels
                    .iter()
                    .any(|l| l.class == EventClass::Reception && l.frame > kick.frame && l.frame <= next_kick),
                "kick at {} never received",
                kick.frame
            );
        }
    }

    #[test]
    fn possession_log_is_ordered_and_disjoint() {
        let m = generate(&short(2.0, 5), 0).unwrap();
        assert!(!m.possession.is_empty());
        for w in m.possession.windows(2) {
            assert!(w[0].end <= w[1].start + 1);
        }
        for span in &m.possession {
            assert!(span.start <= span.end);
        }
    }

    #[test]
    fn shots_are_aimed_from_range() {
        let cfg = short(30.0, 2);
        let m = generate(&cfg, 0).unwrap();
        let ball = &m.trajectories.ball().samples;
        let shots: Vec<_> = m.labels.iter().filter(|l| l.class == EventClass::Shot).collect();
        assert!(!shots.is_empty());
        for s in shots {
            let b = ball[s.frame];
            let to_goal = (105.0 - b.x).hypot(34.0 - b.y).min(b.x.hypot(34.0 - b.y));
            assert!(to_goal <= cfg.rates.shot_range + 0.5, "shot from {to_goal} m");
        }
    }

    #[test]
    #[ignore = "slow: full-length match calibration"]
    fn ninety_minute_rates() {
        let m = generate(&short(90.0, 0), 0).unwrap();
        let passes = count(&m.labels, EventClass::Pass);
        eprintln!(
            "passes {passes} receptions {} shots {}",
            count(&m.labels, EventClass::Reception),
            count(&m.labels, EventClass::Shot)
        );
        assert!((730..=1094).contains(&passes));
    }

    #[test]
    fn pass_rate_per_minute_is_calibrated() {
        let m = generate(&short(20.0, 3), 0).unwrap();
        let per_minute = count(&m.labels, EventClass::Pass) as f64 / 20.0;
        assert!((8.1..=12.2).contains(&per_minute), "{per_minute} passes/min");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..14).collect();
        let s = train_test_split(&items, [10.0, 2.0, 2.0], 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 2, 2));
        assert_eq!(s, train_test_split(&items, [10.0, 2.0, 2.0], 4).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(train_test_split(&items[..2], [1.0, 1.0, 1.0], 0).is_err());
        let tiny = train_test_split(&items[..3], [10.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((tiny.train.len(), tiny.val.len(), tiny.test.len()), (1, 1, 1));
    }

    #[test]
    fn config_validation_names_field() {
        let mut cfg = SimConfig::default();
        cfg.kinematics.control_radius = 0.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("control_radius"), "{err}");
    }
}
