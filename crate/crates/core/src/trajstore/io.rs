//! JSON-lines trajectory files and CSV label files.
//!
//! Trajectory files start with a metadata line
//! `{"pitch_length", "pitch_width", "fps", "frame_count"}` followed by one
//! record per observed (frame, object). A missing record means the object
//! was absent at that frame.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EventClass, EventLabel, MatchTrajectories, ObjectKind, ObjectTrack, PitchSpec, Sample, Team, Units, DEFAULT_FPS};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pitch_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pitch_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record<'a> {
    frame: usize,
    #[serde(borrow)]
    id: std::borrow::Cow<'a, str>,
    kind: ObjectKind,
    team: Option<Team>,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    frame: usize,
    class: String,
}

pub fn load_match(trajectory_file: &Path, label_file: &Path) -> Result<(MatchTrajectories, Vec<EventLabel>)> {
    let m = load_trajectories(trajectory_file)?;
    let labels = load_labels(label_file, m.frame_count)?;
    Ok((m, labels))
}

/// Match id is the file stem (without a trailing `.jsonl`).
pub fn load_trajectories(path: &Path) -> Result<MatchTrajectories> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad metadata header: {e}")))?
        }
        None => return Err(parse_err(1, "empty file".into())),
    };

    struct Partial {
        kind: ObjectKind,
        team: Option<Team>,
        points: Vec<(usize, f64, f64)>,
    }
    let mut objects: BTreeMap<String, Partial> = BTreeMap::new();
    let mut seen: HashSet<(usize, String)> = HashSet::new();
    let mut max_frame: Option<usize> = None;

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if !rec.x.is_finite() || !rec.y.is_finite() {
            return Err(parse_err(lineno, "non-finite coordinate".into()));
        }
        if let Some(fc) = header.frame_count {
            if rec.frame >= fc {
                return Err(parse_err(lineno, format!("frame {} >= frame_count {fc}", rec.frame)));
            }
        }
        if !seen.insert((rec.frame, rec.id.to_string())) {
            return Err(parse_err(lineno, format!("duplicate record for {} at frame {}", rec.id, rec.frame)));
        }
        max_frame = Some(max_frame.map_or(rec.frame, |m| m.max(rec.frame)));
        let entry = objects.entry(rec.id.to_string()).or_insert_with(|| Partial {
            kind: rec.kind,
            team: rec.team,
            points: Vec::new(),
        });
        if entry.kind != rec.kind || entry.team != rec.team {
            return Err(parse_err(lineno, format!("object {} changes kind or team", rec.id)));
        }
        entry.points.push((rec.frame, rec.x, rec.y));
    }

    let frame_count = header.frame_count.unwrap_or(max_frame.map_or(0, |m| m + 1));
    let pitch = match (header.pitch_length, header.pitch_width) {
        (Some(l), Some(w)) => PitchSpec::new(l, w).map_err(|e| parse_err(1, e.to_string()))?,
        _ => PitchSpec::default(),
    };
    let fps = header.fps.unwrap_or(DEFAULT_FPS);
    let tracks = objects
        .into_iter()
        .map(|(id, p)| {
            let mut samples = vec![Sample::ABSENT; frame_count];
            for (f, x, y) in p.points {
                samples[f] = Sample::at(x, y);
            }
            ObjectTrack {
                id,
                kind: p.kind,
                team: p.team,
                samples,
            }
        })
        .collect();
    let id = match_id_from_path(path);
    MatchTrajectories::new(id, pitch, fps, frame_count, tracks).map_err(|e| parse_err(1, e.to_string()))
}

fn match_id_from_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("match");
    name.strip_suffix(".jsonl").unwrap_or(name).to_string()
}

/// Writes records frame by frame in canonical track order. Coordinates are
/// written as stored, so normalized matches should be written only when the
/// reader expects that.
pub fn write_trajectories(m: &MatchTrajectories, path: &Path) -> Result<()> {
    if m.units() == Units::Normalized {
        return Err(Error::Contract("trajectory files store meters; write the unnormalized match".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        pitch_length: Some(m.pitch.length),
        pitch_width: Some(m.pitch.width),
        fps: Some(m.fps),
        frame_count: Some(m.frame_count),
    };
    let io_err = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(io_err)?;
    for frame in 0..m.frame_count {
        for t in m.tracks() {
            let s = t.sample(frame);
            if !s.present {
                continue;
            }
            let rec = Record {
                frame,
                id: t.id.as_str().into(),
                kind: t.kind,
                team: t.team,
                x: s.x,
                y: s.y,
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::io(path, e.into()))?;
            out.write_all(b"\n").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Loads `frame,class` rows, sorted by frame. Duplicated (frame, class)
/// pairs and frames past the end of the match are rejected.
pub fn load_labels(path: &Path, frame_count: usize) -> Result<Vec<EventLabel>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut labels = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let class = EventClass::parse(row.class.trim()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: labels.len() + 2,
            message: format!("unknown class `{}`", row.class),
        })?;
        if row.frame >= frame_count {
            return Err(Error::Range {
                what: "label frame",
                value: row.frame,
                limit: frame_count,
            });
        }
        labels.push(EventLabel { frame: row.frame, class });
    }
    labels.sort();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("duplicate label ({}, {})", w[0].frame, w[0].class),
        });
    }
    Ok(labels)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_labels(labels: &[EventLabel], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["frame", "class"]).map_err(|e| csv_err(path, e))?;
    for l in labels {
        w.write_record([l.frame.to_string(), l.class.name().to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m1.jsonl",
            r#"{"pitch_length": 105.0, "pitch_width": 68.0, "fps": 30.0, "frame_count": 2}
{"frame": 0, "id": "ball", "kind": "ball", "team": null, "x": 50.0, "y": 30.0}
{"frame": 1, "id": "p1", "kind": "player", "team": "home", "x": 10.0, "y": 20.0}
"#,
        );
        let m = load_trajectories(&p).unwrap();
        assert_eq!(m.tracks().len(), 2);
        assert_eq!(m.frame_count, 2);
        assert_eq!(m.id, "m1");
        assert!(!m.ball().sample(1).present);
        assert_eq!(m.players()[0].sample(1), Sample::at(10.0, 20.0));
    }

    #[test]
    fn missing_pitch_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{}\n{\"frame\": 3, \"id\": \"ball\", \"kind\": \"ball\", \"team\": null, \"x\": 1.0, \"y\": 2.0}\n",
        );
        let m = load_trajectories(&p).unwrap();
        assert_eq!(m.pitch, PitchSpec::default());
        assert_eq!(m.fps, 30.0);
        assert_eq!(m.frame_count, 4);
    }

    #[test]
    fn nan_coordinate_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"frame_count\": 2}\n{\"frame\": 0, \"id\": \"ball\", \"kind\": \"ball\", \"team\": null, \"x\": 1.0, \"y\": 2.0}\n{\"frame\": 1, \"id\": \"ball\", \"kind\": \"ball\", \"team\": null, \"x\": \"NaN\", \"y\": 2.0}\n",
        );
        match load_trajectories(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn labels_sorted_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "l.csv", "frame,class\n150,reception\n120,pass\n");
        let labels = load_labels(&p, 200).unwrap();
        assert_eq!(
            labels,
            vec![
                EventLabel { frame: 120, class: EventClass::Pass },
                EventLabel { frame: 150, class: EventClass::Reception },
            ]
        );
        assert!(matches!(load_labels(&p, 150), Err(Error::Range { value: 150, .. })));
        let dup = write(dir.path(), "d.csv", "frame,class\n5,pass\n5,pass\n");
        assert!(matches!(load_labels(&dup, 10), Err(Error::Parse { .. })));
        let bad = write(dir.path(), "b.csv", "frame,class\n5,tackle\n");
        assert!(matches!(load_labels(&bad, 10), Err(Error::Parse { .. })));
        let malformed = write(dir.path(), "c.csv", "frame,class\nabc,pass\n");
        assert!(matches!(load_labels(&malformed, 10), Err(Error::Parse { line: 2, .. })));
    }

    fn arb_match() -> impl Strategy<Value = MatchTrajectories> {
        (1usize..12, 0usize..4).prop_flat_map(|(frames, players)| {
            let track = move || {
                proptest::collection::vec(
                    prop_oneof![
                        1 => Just(Sample::ABSENT),
                        3 => (-5.0f64..110.0, -5.0f64..70.0).prop_map(|(x, y)| Sample::at(x, y)),
                    ],
                    frames,
                )
            };
            (track(), proptest::collection::vec(track(), players)).prop_map(move |(ball, ps)| {
                let mut tracks = vec![ObjectTrack {
                    id: "ball".into(),
                    kind: ObjectKind::Ball,
                    team: None,
                    samples: ball,
                }];
                for (i, mut s) in ps.into_iter().enumerate() {
                    // a track with no present sample cannot be represented in the file
                    s[0] = Sample::at(i as f64, 1.5);
                    tracks.push(ObjectTrack {
                        id: format!("p{i}"),
                        kind: ObjectKind::Player,
                        team: Some(if i % 2 == 0 { Team::Home } else { Team::Away }),
                        samples: s,
                    });
                }
                tracks[0].samples[0] = Sample::at(0.25, 7.0);
                MatchTrajectories::new("rt", PitchSpec::default(), 25.0, frames, tracks).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn trajectory_round_trip(m in arb_match()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.jsonl");
            write_trajectories(&m, &p).unwrap();
            let back = load_trajectories(&p).unwrap();
            prop_assert_eq!(&back, &m);
            let p2 = dir.path().join("rt2.jsonl");
            write_trajectories(&back, &p2).unwrap();
            prop_assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
        }
    }
}
