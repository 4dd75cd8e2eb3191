//! Dataset files and JSON/CSV persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use mgtraj_core::data::{
    downsample, extract_windows, parse_eth_ucy, parse_sdd, synthesize_kinds, ColumnMap, RawScene, TrajectoryWindow, Unit,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{DatasetConfig, DatasetFormat, TEST_SEED_OFFSET};
use crate::error::{AppError, AppResult};

fn read_text(path: &Path) -> AppResult<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

fn with_path<T>(path: &Path, r: mgtraj_core::Result<T>) -> AppResult<T> {
    r.map_err(|e| match AppError::from(e) {
        AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
        AppError::Runtime(m) => AppError::Runtime(format!("{}: {m}", path.display())),
    })
}

/// Whitespace-separated ETH/UCY annotations in meters.
pub fn load_eth_ucy(path: &Path, scene_id: &str, columns: ColumnMap, native_fps: f64) -> AppResult<RawScene> {
    let text = read_text(path)?;
    with_path(path, parse_eth_ucy(&text, scene_id, columns, native_fps))
}

/// SDD annotations in pixels; boxes become their centers and lost rows are dropped.
pub fn load_sdd(path: &Path, scene_id: &str, native_fps: f64, pedestrians_only: bool) -> AppResult<RawScene> {
    let text = read_text(path)?;
    with_path(path, parse_sdd(&text, scene_id, native_fps, pedestrians_only))
}

/// Train and test windows of one configuration, in scene coordinates.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<TrajectoryWindow>,
    pub test: Vec<TrajectoryWindow>,
    pub unit: Unit,
}

fn scene_windows(cfg: &DatasetConfig, ids: &[String]) -> AppResult<Vec<TrajectoryWindow>> {
    let columns = ColumnMap::parse(&cfg.columns)?;
    let mut out = Vec::new();
    for id in ids {
        let source = cfg
            .scenes
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| AppError::Config(format!("scene `{id}` is not listed in dataset.scenes")))?;
        let raw = match cfg.format {
            DatasetFormat::EthUcy => load_eth_ucy(&source.path, id, columns, cfg.native_fps)?,
            DatasetFormat::Sdd => load_sdd(&source.path, id, cfg.native_fps, cfg.pedestrians_only)?,
            DatasetFormat::Synthetic => unreachable!("synthetic data has no scene files"),
        };
        let scene = downsample(&raw, cfg.target_fps)?;
        out.extend(extract_windows(&scene, cfg.history_len, cfg.future_len, cfg.stride)?);
    }
    Ok(out)
}

pub fn load_splits(cfg: &DatasetConfig) -> AppResult<Splits> {
    let splits = match cfg.format {
        DatasetFormat::Synthetic => {
            let s = &cfg.synthetic;
            let make = |count, seed| -> AppResult<Vec<TrajectoryWindow>> {
                let windows = synthesize_kinds(&s.kinds, count, seed)?;
                if windows.iter().any(|w| w.history.len() != cfg.history_len || w.future.len() != cfg.future_len) {
                    return Err(AppError::Config(format!(
                        "synthetic windows have {}+{} frames; dataset lengths must match",
                        mgtraj_core::data::HISTORY_LEN,
                        mgtraj_core::data::FUTURE_LEN
                    )));
                }
                Ok(windows)
            };
            Splits {
                train: make(s.train_count, s.seed)?,
                test: make(s.test_count, s.seed.wrapping_add(TEST_SEED_OFFSET))?,
                unit: Unit::Meters,
            }
        }
        DatasetFormat::EthUcy | DatasetFormat::Sdd => Splits {
            train: scene_windows(cfg, &cfg.train_scenes)?,
            test: scene_windows(cfg, &cfg.test_scenes)?,
            unit: if cfg.format == DatasetFormat::Sdd { Unit::Pixels } else { Unit::Meters },
        },
    };
    Ok(splits)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

/// Appends `row`, writing `header` first when the file is new or empty.
pub fn append_csv_row(path: &Path, header: &str, row: &str) -> AppResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    file.write_all(text.as_bytes())
        .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Preset, SceneSource};

    #[test]
    fn eth_ucy_file_examples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.txt");
        let cols = ColumnMap::parse("frame agent x y").unwrap();
        fs::write(&path, "0 1 0.0 0.0\n10 1 1.0 0.0\n").unwrap();
        let scene = load_eth_ucy(&path, "s", cols, 25.0).unwrap();
        assert_eq!(scene.len(), 2);
        assert_eq!(scene.unit, Unit::Meters);
        fs::write(&path, "").unwrap();
        assert!(load_eth_ucy(&path, "s", cols, 25.0).unwrap().is_empty());
        fs::write(&path, "0 1 abc 0.0\n").unwrap();
        let err = load_eth_ucy(&path, "s", cols, 25.0).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let missing = load_eth_ucy(&dir.path().join("nope.txt"), "s", cols, 25.0).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }

    #[test]
    fn sdd_file_examples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.txt");
        fs::write(
            &path,
            "1 0 0 10 10 0 0 0 0 \"Pedestrian\"\n2 0 0 4 4 0 1 0 0 \"Pedestrian\"\n",
        )
        .unwrap();
        let scene = load_sdd(&path, "s", 30.0, true).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.records()[0].position, [5.0, 5.0]);
        assert_eq!(scene.unit, Unit::Pixels);
    }

    #[test]
    fn scene_splits_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = String::new();
        for f in 0..25 {
            rows.push_str(&format!("{} 7 {} 0.5\n", f * 10, f as f64 * 0.4));
        }
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        fs::write(&a, &rows).unwrap();
        let half: String = rows.lines().take(12).map(|l| format!("{l}\n")).collect();
        fs::write(&b, half).unwrap();
        let mut cfg = Preset::Paper.config().dataset;
        cfg.scenes = vec![
            SceneSource { id: "a".into(), path: a },
            SceneSource { id: "b".into(), path: b },
        ];
        cfg.train_scenes = vec!["a".into()];
        cfg.test_scenes = vec!["b".into()];
        let splits = load_splits(&cfg).unwrap();
        assert_eq!(splits.train.len(), 6);
        assert!(splits.test.is_empty());
        assert_eq!(splits.train[0].delta_t, 0.4);
    }

    #[test]
    fn synthetic_splits_are_disjoint_and_sized() {
        let cfg = Preset::Desk.config().dataset;
        let s = load_splits(&cfg).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (32, 32));
        assert_ne!(s.train[0].future, s.test[0].future);
    }

    #[test]
    fn csv_header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        append_csv_row(&path, "a,b", "1,2").unwrap();
        append_csv_row(&path, "a,b", "3,4").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n1,2\n3,4\n");
    }
}
