//! Scenes, trajectory windows and augmented position/velocity states.
//!
//! Text parsing lives here so it stays independent of any filesystem; the std
//! companion crate reads files and hands the contents over.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const HISTORY_LEN: usize = 8;
pub const FUTURE_LEN: usize = 12;
pub const TARGET_FPS: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Meters,
    Pixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub frame: i64,
    pub agent: i64,
    pub position: [f64; 2],
}

/// All annotated positions of one scene, sorted by `(agent, frame)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawScene {
    pub scene_id: String,
    records: Vec<Record>,
    pub unit: Unit,
    pub native_fps: f64,
}

impl RawScene {
    /// Validates uniqueness of `(frame, agent)` and finiteness, then sorts.
    pub fn new(scene_id: impl Into<String>, mut records: Vec<Record>, unit: Unit, native_fps: f64) -> Result<Self> {
        if !(native_fps.is_finite() && native_fps > 0.0) {
            return Err(Error::Config(format!("native fps must be positive, got {native_fps}")));
        }
        if let Some(r) = records.iter().find(|r| !r.position.iter().all(|v| v.is_finite())) {
            return Err(Error::Config(format!(
                "non-finite position for agent {} at frame {}",
                r.agent, r.frame
            )));
        }
        records.sort_by_key(|r| (r.agent, r.frame));
        if let Some(w) = records.windows(2).find(|w| w[0].agent == w[1].agent && w[0].frame == w[1].frame) {
            return Err(Error::Config(format!(
                "duplicate record for agent {} at frame {}",
                w[0].agent, w[0].frame
            )));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            records,
            unit,
            native_fps,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped per agent, each group in frame order.
    pub fn tracks(&self) -> impl Iterator<Item = (i64, &[Record])> {
        self.records
            .chunk_by(|a, b| a.agent == b.agent)
            .map(|c| (c[0].agent, c))
    }

    pub fn delta_t(&self) -> f64 {
        1.0 / self.native_fps
    }
}

/// Which whitespace-separated column holds which field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub frame: usize,
    pub agent: usize,
    pub x: usize,
    pub y: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            frame: 0,
            agent: 1,
            x: 2,
            y: 3,
        }
    }
}

impl ColumnMap {
    /// Parses a field order such as `"frame agent x y"` or `"frame,agent,y,x"`.
    pub fn parse(order: &str) -> Result<Self> {
        let fields: Vec<&str> = order
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let pos = |name: &str| {
            fields
                .iter()
                .position(|f| f.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Config(format!("column order {order:?} is missing field {name:?}")))
        };
        let map = Self {
            frame: pos("frame")?,
            agent: pos("agent")?,
            x: pos("x")?,
            y: pos("y")?,
        };
        if fields.len() != 4 {
            return Err(Error::Config(format!("column order {order:?} must name exactly 4 fields")));
        }
        Ok(map)
    }

    fn width(&self) -> usize {
        self.frame.max(self.agent).max(self.x).max(self.y) + 1
    }
}

fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {tok:?}"),
    })
}

fn parse_id(tok: &str, line: usize, what: &str) -> Result<i64> {
    let v = parse_num(tok, line, what)?;
    if !v.is_finite() || libm::trunc(v) != v {
        return Err(Error::Parse {
            line,
            message: format!("{what} {tok:?} is not an integer"),
        });
    }
    Ok(v as i64)
}

/// Parses ETH/UCY-style text: one `(frame, agent, x, y)` row per line in the
/// order given by `columns`. Blank lines are skipped. Positions are meters.
pub fn parse_eth_ucy(text: &str, scene_id: &str, columns: ColumnMap, native_fps: f64) -> Result<RawScene> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < columns.width() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", columns.width(), toks.len()),
            });
        }
        let x = parse_num(toks[columns.x], lineno, "x coordinate")?;
        let y = parse_num(toks[columns.y], lineno, "y coordinate")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite coordinate".to_string(),
            });
        }
        records.push(Record {
            frame: parse_id(toks[columns.frame], lineno, "frame")?,
            agent: parse_id(toks[columns.agent], lineno, "agent id")?,
            position: [x, y],
        });
    }
    RawScene::new(scene_id, records, Unit::Meters, native_fps)
}

/// Parses Stanford Drone annotations:
/// `agent xmin ymin xmax ymax frame lost occluded generated "label"`.
///
/// Positions are bounding-box centers in pixels; rows flagged `lost` are
/// dropped. Only `Pedestrian` rows are kept when `pedestrians_only` is set.
pub fn parse_sdd(text: &str, scene_id: &str, native_fps: f64, pedestrians_only: bool) -> Result<RawScene> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 10 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 10 columns, found {}", toks.len()),
            });
        }
        let agent = parse_id(toks[0], lineno, "agent id")?;
        let xmin = parse_num(toks[1], lineno, "xmin")?;
        let ymin = parse_num(toks[2], lineno, "ymin")?;
        let xmax = parse_num(toks[3], lineno, "xmax")?;
        let ymax = parse_num(toks[4], lineno, "ymax")?;
        let frame = parse_id(toks[5], lineno, "frame")?;
        let lost = parse_id(toks[6], lineno, "lost flag")?;
        parse_id(toks[7], lineno, "occluded flag")?;
        parse_id(toks[8], lineno, "generated flag")?;
        let label = toks[9].trim_matches('"');
        if lost == 1 || (pedestrians_only && label != "Pedestrian") {
            continue;
        }
        records.push(Record {
            frame,
            agent,
            position: [(xmin + xmax) / 2.0, (ymin + ymax) / 2.0],
        });
    }
    RawScene::new(scene_id, records, Unit::Pixels, native_fps)
}

/// Keeps frames whose index is a multiple of `k = native_fps / target_fps`
/// and renumbers them to `frame / k`, so consecutive kept frames differ by one.
pub fn downsample(scene: &RawScene, target_fps: f64) -> Result<RawScene> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::Config(format!("target fps must be positive, got {target_fps}")));
    }
    let ratio = scene.native_fps / target_fps;
    let k = libm::round(ratio);
    if k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "native fps {} is not an integer multiple of target fps {target_fps}",
            scene.native_fps
        )));
    }
    let k = k as i64;
    let records = scene
        .records
        .iter()
        .filter(|r| r.frame.rem_euclid(k) == 0)
        .map(|r| Record {
            frame: r.frame.div_euclid(k),
            ..*r
        })
        .collect();
    RawScene::new(scene.scene_id.clone(), records, scene.unit, target_fps)
}

/// One sample: `history` then `future`, contiguous at `delta_t` spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
    pub delta_t: f64,
    pub scene_id: String,
    pub agent_id: i64,
    pub start_frame: i64,
}

impl TrajectoryWindow {
    pub fn horizon(&self) -> usize {
        self.history.len() + self.future.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.history.iter().chain(&self.future).copied()
    }

    pub fn last_observed(&self) -> [f64; 2] {
        *self.history.last().expect("window has an empty history")
    }

    /// Window translated so that the last observed position is the origin,
    /// plus the offset that undoes it.
    pub fn normalized(&self) -> (TrajectoryWindow, [f64; 2]) {
        let o = self.last_observed();
        (self.translated([-o[0], -o[1]]), o)
    }

    pub fn translated(&self, by: [f64; 2]) -> TrajectoryWindow {
        let shift = |p: &[f64; 2]| [p[0] + by[0], p[1] + by[1]];
        TrajectoryWindow {
            history: self.history.iter().map(shift).collect(),
            future: self.future.iter().map(shift).collect(),
            ..self.clone()
        }
    }
}

/// Cuts every agent track into windows of `history_len + future_len`
/// consecutive frames, advancing by `stride`. Windows never span a gap.
pub fn extract_windows(scene: &RawScene, history_len: usize, future_len: usize, stride: usize) -> Result<Vec<TrajectoryWindow>> {
    if history_len == 0 || future_len == 0 || stride == 0 {
        return Err(Error::Config("history, future and stride must all be at least 1".to_string()));
    }
    let total = history_len + future_len;
    let delta_t = scene.delta_t();
    let mut out = Vec::new();
    for (agent, track) in scene.tracks() {
        for run in track.chunk_by(|a, b| b.frame == a.frame + 1) {
            let mut start = 0;
            while start + total <= run.len() {
                let w = &run[start..start + total];
                out.push(TrajectoryWindow {
                    history: w[..history_len].iter().map(|r| r.position).collect(),
                    future: w[history_len..].iter().map(|r| r.position).collect(),
                    delta_t,
                    scene_id: scene.scene_id.clone(),
                    agent_id: agent,
                    start_frame: w[0].frame,
                });
                start += stride;
            }
        }
    }
    Ok(out)
}

/// A `T × 4` state, channels `(px, py, vx, vy)`; velocities in units per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub values: Matrix,
}

impl AugmentedState {
    pub const CHANNELS: usize = 4;

    pub fn horizon(&self) -> usize {
        self.values.rows()
    }

    pub fn position(&self, t: usize) -> [f64; 2] {
        [self.values[(t, 0)], self.values[(t, 1)]]
    }

    pub fn velocity(&self, t: usize) -> [f64; 2] {
        [self.values[(t, 2)], self.values[(t, 3)]]
    }
}

/// Backward-difference velocities over the full window; `v₁` copies `v₂`.
pub fn augment_velocity(window: &TrajectoryWindow) -> AugmentedState {
    augment_positions(&window.positions().collect::<Vec<_>>())
}

pub fn augment_positions(positions: &[[f64; 2]]) -> AugmentedState {
    let t = positions.len();
    let mut values = Matrix::zeros(t, 4);
    for (i, p) in positions.iter().enumerate() {
        values[(i, 0)] = p[0];
        values[(i, 1)] = p[1];
        if i > 0 {
            values[(i, 2)] = p[0] - positions[i - 1][0];
            values[(i, 3)] = p[1] - positions[i - 1][1];
        }
    }
    if t > 1 {
        values[(0, 2)] = values[(1, 2)];
        values[(0, 3)] = values[(1, 3)];
    }
    AugmentedState { values }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Line,
    Arc,
    Sine,
    StopAndGo,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [Self::Line, Self::Arc, Self::Sine, Self::StopAndGo];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "line" => Ok(Self::Line),
            "arc" => Ok(Self::Arc),
            "sine" => Ok(Self::Sine),
            "stop-and-go" | "stop_and_go" => Ok(Self::StopAndGo),
            other => Err(Error::Config(format!("unknown synthetic trajectory kind {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Line => "line",
            Self::Arc => "arc",
            Self::Sine => "sine",
            Self::StopAndGo => "stop-and-go",
        }
    }
}

/// Parameter ranges of the synthetic generator. Distances are meters,
/// times are frames at 2.5 FPS.
pub mod synthetic_ranges {
    /// Start position, each coordinate.
    pub const START: (f64, f64) = (-5.0, 5.0);
    /// Walking speed per frame (0.5–1.5 m/s).
    pub const SPEED: (f64, f64) = (0.2, 0.6);
    /// Arc turn rate magnitude, radians per frame; the sign is random.
    pub const TURN_RATE: (f64, f64) = (0.04, 0.15);
    /// Sine lateral amplitude.
    pub const AMPLITUDE: (f64, f64) = (0.2, 0.8);
    /// Sine period.
    pub const PERIOD: (f64, f64) = (8.0, 20.0);
    /// First stopped frame (inclusive range) for stop-and-go.
    pub const STOP_START: (usize, usize) = (4, 14);
    /// Stop duration (inclusive range).
    pub const STOP_LEN: (usize, usize) = (2, 6);
}

/// Deterministic synthetic windows of 8 + 12 frames.
pub fn synthesize(kind: SyntheticKind, count: usize, seed: u64) -> Result<Vec<TrajectoryWindow>> {
    synthesize_with(kind, count, seed, HISTORY_LEN, FUTURE_LEN)
}

pub fn synthesize_with(
    kind: SyntheticKind,
    count: usize,
    seed: u64,
    history_len: usize,
    future_len: usize,
) -> Result<Vec<TrajectoryWindow>> {
    use synthetic_ranges as r;
    if count == 0 {
        return Err(Error::Config("synthetic count must be at least 1".to_string()));
    }
    if history_len == 0 || future_len == 0 {
        return Err(Error::Config("history and future lengths must be at least 1".to_string()));
    }
    let total = history_len + future_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = [rng.gen_range(r::START.0..r::START.1), rng.gen_range(r::START.0..r::START.1)];
        let heading = rng.gen_range(0.0..2.0 * PI);
        let speed = rng.gen_range(r::SPEED.0..r::SPEED.1);
        let dir = [libm::cos(heading), libm::sin(heading)];
        let mut pts = Vec::with_capacity(total);
        match kind {
            SyntheticKind::Line => {
                for t in 0..total {
                    let s = speed * t as f64;
                    pts.push([start[0] + s * dir[0], start[1] + s * dir[1]]);
                }
            }
            SyntheticKind::Arc => {
                let mag = rng.gen_range(r::TURN_RATE.0..r::TURN_RATE.1);
                let turn = if rng.gen_bool(0.5) { mag } else { -mag };
                let mut p = start;
                let mut theta = heading;
                pts.push(p);
                for _ in 1..total {
                    p = [p[0] + speed * libm::cos(theta), p[1] + speed * libm::sin(theta)];
                    pts.push(p);
                    theta += turn;
                }
            }
            SyntheticKind::Sine => {
                let amp = rng.gen_range(r::AMPLITUDE.0..r::AMPLITUDE.1);
                let period = rng.gen_range(r::PERIOD.0..r::PERIOD.1);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let normal = [-dir[1], dir[0]];
                for t in 0..total {
                    let s = speed * t as f64;
                    let lat = amp * (libm::sin(2.0 * PI * t as f64 / period + phase) - libm::sin(phase));
                    pts.push([
                        start[0] + s * dir[0] + lat * normal[0],
                        start[1] + s * dir[1] + lat * normal[1],
                    ]);
                }
            }
            SyntheticKind::StopAndGo => {
                let stop = rng.gen_range(r::STOP_START.0..=r::STOP_START.1);
                let len = rng.gen_range(r::STOP_LEN.0..=r::STOP_LEN.1);
                let mut p = start;
                pts.push(p);
                for t in 1..total {
                    if !(stop..stop + len).contains(&t) {
                        p = [p[0] + speed * dir[0], p[1] + speed * dir[1]];
                    }
                    pts.push(p);
                }
            }
        }
        out.push(TrajectoryWindow {
            history: pts[..history_len].to_vec(),
            future: pts[history_len..].to_vec(),
            delta_t: 1.0 / TARGET_FPS,
            scene_id: format!("synthetic-{}", kind.name()),
            agent_id: i as i64,
            start_frame: 0,
        });
    }
    Ok(out)
}

/// Equal share of every kind, interleaved; `count` windows in total.
pub fn synthesize_mixed(count: usize, seed: u64) -> Result<Vec<TrajectoryWindow>> {
    synthesize_kinds(&SyntheticKind::ALL, count, seed)
}

/// Equal share of each listed kind, interleaved; `count` windows in total.
/// Kind `i` of the list draws from seed `seed + i`.
pub fn synthesize_kinds(kinds: &[SyntheticKind], count: usize, seed: u64) -> Result<Vec<TrajectoryWindow>> {
    if kinds.is_empty() {
        return Err(Error::Config("synthetic data needs at least one trajectory kind".into()));
    }
    let mut per_kind = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let n = count / kinds.len() + usize::from(i < count % kinds.len());
        per_kind.push(if n == 0 {
            Vec::new()
        } else {
            synthesize(*kind, n, seed.wrapping_add(i as u64))?
        });
    }
    let mut out = Vec::with_capacity(count);
    let mut idx = 0;
    while out.len() < count {
        for list in &per_kind {
            if let Some(w) = list.get(idx) {
                out.push(w.clone());
            }
        }
        idx += 1;
    }
    out.truncate(count);
    Ok(out)
}

/// Scene ids present in a window set, sorted.
pub fn scene_ids(windows: &[TrajectoryWindow]) -> Vec<String> {
    windows
        .iter()
        .map(|w| w.scene_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn window_from(points: &[[f64; 2]], history: usize) -> TrajectoryWindow {
        TrajectoryWindow {
            history: points[..history].to_vec(),
            future: points[history..].to_vec(),
            delta_t: 0.4,
            scene_id: "t".into(),
            agent_id: 0,
            start_frame: 0,
        }
    }

    #[test]
    fn eth_rows_parse() {
        let s = parse_eth_ucy("0 1 0.0 0.0\n10 1 1.0 0.0\n", "eth", ColumnMap::default(), 25.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.records().iter().all(|r| r.agent == 1));
        assert_eq!(s.records()[1].position, [1.0, 0.0]);
        assert_eq!(s.unit, Unit::Meters);
    }

    #[test]
    fn eth_empty_and_malformed() {
        assert!(parse_eth_ucy("", "e", ColumnMap::default(), 25.0).unwrap().is_empty());
        let err = parse_eth_ucy("0 1 abc 0.0\n", "e", ColumnMap::default(), 25.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let err = parse_eth_ucy("0 1 0 0\n\n10 1 0\n", "e", ColumnMap::default(), 25.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn eth_column_order_and_sorting() {
        let cols = ColumnMap::parse("frame,agent,y,x").unwrap();
        let s = parse_eth_ucy("10 2 5.0 1.0\n0 2 4.0 0.0\n0 1 7 7\n", "e", cols, 25.0).unwrap();
        let r = s.records();
        assert_eq!((r[0].agent, r[0].frame), (1, 0));
        assert_eq!((r[1].agent, r[1].frame), (2, 0));
        assert_eq!(r[2].position, [1.0, 5.0]);
        assert!(ColumnMap::parse("frame agent x").is_err());
    }

    #[test]
    fn duplicate_records_rejected() {
        assert!(parse_eth_ucy("0 1 0 0\n0 1 1 1\n", "e", ColumnMap::default(), 25.0).is_err());
    }

    #[test]
    fn sdd_rows() {
        let text = "1 0 0 10 10 0 0 0 0 \"Pedestrian\"\n\
                    1 0 0 10 10 1 1 0 0 \"Pedestrian\"\n\
                    2 2 2 4 4 0 0 0 0 \"Pedestrian\"\n\
                    1 2 2 12 12 12 0 0 0 \"Pedestrian\"\n";
        let s = parse_sdd(text, "sdd", 30.0, true).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.unit, Unit::Pixels);
        let tracks: Vec<_> = s.tracks().collect();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].1.len(), 2);
        assert_eq!(tracks[0].1[0].position, [5.0, 5.0]);
        assert_eq!(tracks[1].1[0].position, [3.0, 3.0]);
        assert!(matches!(parse_sdd("1 0 0 x 10 0 0 0 0 P\n", "s", 30.0, false), Err(Error::Parse { line: 1, .. })));
        let biker = parse_sdd("3 0 0 2 2 0 0 0 0 \"Biker\"\n", "s", 30.0, true).unwrap();
        assert!(biker.is_empty());
    }

    #[test]
    fn downsample_ratio_rules() {
        let recs = (0..30)
            .map(|f| Record {
                frame: f,
                agent: 1,
                position: [f as f64, 0.0],
            })
            .collect();
        let s = RawScene::new("s", recs, Unit::Meters, 25.0).unwrap();
        let d = downsample(&s, 2.5).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.records().iter().map(|r| r.position[0]).collect::<Vec<_>>(), vec![0.0, 10.0, 20.0]);
        assert_eq!(d.records().iter().map(|r| r.frame).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((d.delta_t() - 0.4).abs() < 1e-15);
        assert_eq!(downsample(&s, 25.0).unwrap().records(), s.records());

        let s30 = RawScene::new("s", vec![], Unit::Pixels, 30.0).unwrap();
        assert!(downsample(&s30, 2.5).is_ok());
        let s24 = RawScene::new("s", vec![], Unit::Pixels, 24.0).unwrap();
        assert!(matches!(downsample(&s24, 2.5), Err(Error::Config(_))));
    }

    fn scene_with_runs(runs: &[(i64, core::ops::Range<i64>)]) -> RawScene {
        let mut recs = Vec::new();
        for (agent, frames) in runs {
            for f in frames.clone() {
                recs.push(Record {
                    frame: f,
                    agent: *agent,
                    position: [f as f64, *agent as f64],
                });
            }
        }
        RawScene::new("s", recs, Unit::Meters, 2.5).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(extract_windows(&scene_with_runs(&[(1, 0..20)]), 8, 12, 1).unwrap().len(), 1);
        assert_eq!(extract_windows(&scene_with_runs(&[(1, 0..21)]), 8, 12, 1).unwrap().len(), 2);
        // gap at frame 15: runs 0..15 and 16..40
        let gap = scene_with_runs(&[(1, 0..15), (1, 16..40)]);
        let ws = extract_windows(&gap, 8, 12, 1).unwrap();
        assert_eq!(ws.len(), 5);
        assert!(ws.iter().all(|w| w.start_frame >= 16));
        assert!(extract_windows(&gap, 8, 12, 0).is_err());
    }

    #[test]
    fn window_contents_are_contiguous() {
        let ws = extract_windows(&scene_with_runs(&[(3, 5..30)]), 8, 12, 2).unwrap();
        assert_eq!(ws.len(), 3);
        for w in &ws {
            let xs: Vec<f64> = w.positions().map(|p| p[0]).collect();
            assert!(xs.windows(2).all(|p| p[1] - p[0] == 1.0));
            assert_eq!(w.agent_id, 3);
            assert_eq!(xs[0], w.start_frame as f64);
        }
    }

    #[test]
    fn velocity_examples() {
        let line: Vec<[f64; 2]> = (0..20).map(|t| [t as f64, 0.0]).collect();
        let s = augment_velocity(&window_from(&line, 8));
        assert!((0..20).all(|t| s.velocity(t) == [1.0, 0.0]));

        let still = vec![[3.0, 3.0]; 20];
        let s = augment_velocity(&window_from(&still, 8));
        assert!((0..20).all(|t| s.velocity(t) == [0.0, 0.0]));

        let s = augment_positions(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(s.velocity(0), [1.0, 0.0]);
        assert_eq!(s.velocity(1), [1.0, 0.0]);
        assert_eq!(s.velocity(2), [0.0, 1.0]);
    }

    #[test]
    fn synthesize_is_deterministic_and_shaped() {
        let a = synthesize(SyntheticKind::Line, 4, 0).unwrap();
        assert_eq!(a, synthesize(SyntheticKind::Line, 4, 0).unwrap());
        let one = synthesize(SyntheticKind::Line, 1, 0).unwrap();
        assert_eq!(one[0].horizon(), 20);
        assert!(one[0].positions().all(|p| p[0].is_finite() && p[1].is_finite()));
        assert!(SyntheticKind::parse("spiral").is_err());
        assert!(synthesize(SyntheticKind::Sine, 0, 0).is_err());
        for kind in SyntheticKind::ALL {
            assert_eq!(SyntheticKind::parse(kind.name()).unwrap(), kind);
        }
    }

    #[test]
    fn arc_turns_at_constant_rate() {
        for seed in 0..5 {
            let w = &synthesize(SyntheticKind::Arc, 1, seed).unwrap()[0];
            let pts: Vec<_> = w.positions().collect();
            let angles: Vec<f64> = pts
                .windows(2)
                .map(|p| libm::atan2(p[1][1] - p[0][1], p[1][0] - p[0][0]))
                .collect();
            let turns: Vec<f64> = angles
                .windows(2)
                .map(|a| {
                    let mut d = a[1] - a[0];
                    while d > PI {
                        d -= 2.0 * PI;
                    }
                    while d < -PI {
                        d += 2.0 * PI;
                    }
                    d
                })
                .collect();
            for t in &turns {
                assert!((t - turns[0]).abs() < 1e-9, "{turns:?}");
            }
            assert!(turns[0].abs() >= synthetic_ranges::TURN_RATE.0 - 1e-12);
        }
    }

    #[test]
    fn mixed_set_cycles_kinds() {
        let ws = synthesize_mixed(8, 3).unwrap();
        assert_eq!(ws.len(), 8);
        assert_eq!(ws[0].scene_id, "synthetic-line");
        assert_eq!(ws[1].scene_id, "synthetic-arc");
        assert_eq!(ws[3].scene_id, "synthetic-stop-and-go");
        assert_eq!(scene_ids(&ws).len(), 4);
    }

    #[test]
    fn normalization_anchors_last_observation() {
        let w = &synthesize(SyntheticKind::Sine, 1, 9).unwrap()[0];
        let (n, origin) = w.normalized();
        assert_eq!(n.last_observed(), [0.0, 0.0]);
        assert_eq!(origin, w.last_observed());
        let back = n.translated(origin);
        for (a, b) in back.positions().zip(w.positions()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}
