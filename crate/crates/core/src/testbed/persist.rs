//! Dataset directory layout: a structured key-value manifest plus a raw
//! little-endian f32 tensor file.
//!
//! ```text
//! <dir>/manifest.txt    header lines, then one `sample=` line per sample
//! <dir>/features.bin    n * H * W * C little-endian f32, in sample order
//! ```

use std::path::Path;

use super::{Dataset, GridShape, NormStats, SampleId, SampleMeta, Split};
use crate::error::{Error, Result};

const MAGIC: &str = "spursever-dataset v1";

pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "split={}", data.split());
    let _ = writeln!(m, "classes={}", data.classes());
    let grid = data.grid();
    let _ = writeln!(m, "grid={},{},{}", grid.height, grid.width, grid.channels);
    let _ = writeln!(m, "seed={}", data.seed());
    let counts: Vec<String> = data.class_counts().iter().map(|c| c.to_string()).collect();
    let _ = writeln!(m, "class_counts={}", counts.join(","));
    if let Some(norm) = data.norm_stats() {
        let _ = writeln!(m, "norm_mean={}", join_f32(&norm.mean));
        let _ = writeln!(m, "norm_std={}", join_f32(&norm.std));
    }
    let _ = writeln!(m, "samples={}", data.len());
    for meta in data.meta() {
        let _ = writeln!(
            m,
            "sample={},{},{},{},{}",
            meta.id,
            meta.label,
            meta.core_noise,
            u8::from(meta.has_spurious),
            meta.group_id
        );
    }
    let manifest_path = dir.join("manifest.txt");
    std::fs::write(&manifest_path, m).map_err(|e| Error::io(&manifest_path, e))?;

    let mut bytes = Vec::with_capacity(data.len() * data.feature_dim() * 4);
    for p in 0..data.len() {
        for v in data.features_at(p) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin_path = dir.join("features.bin");
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format(&manifest_path, "bad magic line"));
    }

    let mut split = None;
    let mut classes = None;
    let mut grid = None;
    let mut seed = None;
    let mut class_counts: Option<Vec<usize>> = None;
    let mut norm_mean: Option<Vec<f32>> = None;
    let mut norm_std: Option<Vec<f32>> = None;
    let mut declared_samples = None;
    let mut meta: Vec<SampleMeta> = Vec::new();

    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&manifest_path, format!("bad line: {line}")))?;
        match key {
            "split" => {
                split = Some(match value {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(Error::format(
                            &manifest_path,
                            format!("unknown split {other}"),
                        ))
                    }
                })
            }
            "classes" => classes = Some(parse::<usize>(&manifest_path, value)?),
            "grid" => {
                let parts = parse_list::<usize>(&manifest_path, value)?;
                if parts.len() != 3 {
                    return Err(Error::format(&manifest_path, "grid needs 3 fields"));
                }
                grid = Some(GridShape {
                    height: parts[0],
                    width: parts[1],
                    channels: parts[2],
                });
            }
            "seed" => seed = Some(parse::<u64>(&manifest_path, value)?),
            "class_counts" => class_counts = Some(parse_list::<usize>(&manifest_path, value)?),
            "norm_mean" => norm_mean = Some(parse_list::<f32>(&manifest_path, value)?),
            "norm_std" => norm_std = Some(parse_list::<f32>(&manifest_path, value)?),
            "samples" => declared_samples = Some(parse::<usize>(&manifest_path, value)?),
            "sample" => {
                let f = value.split(',').collect::<Vec<_>>();
                if f.len() != 5 {
                    return Err(Error::format(&manifest_path, "sample line needs 5 fields"));
                }
                meta.push(SampleMeta {
                    id: parse::<SampleId>(&manifest_path, f[0])?,
                    label: parse::<usize>(&manifest_path, f[1])?,
                    core_noise: parse::<f32>(&manifest_path, f[2])?,
                    has_spurious: f[3] == "1",
                    group_id: parse::<usize>(&manifest_path, f[4])?,
                });
            }
            other => {
                return Err(Error::format(
                    &manifest_path,
                    format!("unknown manifest key {other}"),
                ))
            }
        }
    }

    let grid = grid.ok_or_else(|| Error::format(&manifest_path, "missing grid"))?;
    let declared =
        declared_samples.ok_or_else(|| Error::format(&manifest_path, "missing samples"))?;
    if declared != meta.len() {
        return Err(Error::format(
            &manifest_path,
            format!("declared {declared} samples, found {}", meta.len()),
        ));
    }
    let norm = match (norm_mean, norm_std) {
        (Some(mean), Some(std)) => Some(NormStats { mean, std }),
        (None, None) => None,
        _ => {
            return Err(Error::format(
                &manifest_path,
                "norm_mean and norm_std must appear together",
            ))
        }
    };

    let bin_path = dir.join("features.bin");
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = meta.len() * grid.pixel_count() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &bin_path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let features: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    Dataset::from_parts(
        classes.ok_or_else(|| Error::format(&manifest_path, "missing classes"))?,
        grid,
        split.ok_or_else(|| Error::format(&manifest_path, "missing split"))?,
        seed.ok_or_else(|| Error::format(&manifest_path, "missing seed"))?,
        meta,
        features,
        class_counts.ok_or_else(|| Error::format(&manifest_path, "missing class_counts"))?,
        norm,
    )
}

fn join_f32(values: &[f32]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::format(path, format!("bad value: {s}")))
}

fn parse_list<T: std::str::FromStr>(path: &Path, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| parse::<T>(path, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{generate_base, inject_spurious, BaseParams, NoiseSpread, SelectionRule};

    #[test]
    fn roundtrip_is_bit_exact() {
        let base = generate_base(&BaseParams {
            classes: 3,
            n_per_class: 12,
            grid: GridShape {
                height: 6,
                width: 5,
                channels: 2,
            },
            noise: NoiseSpread::uniform(0.1, 0.6),
            seed: 31,
            split: Split::Train,
        })
        .unwrap();
        let data = inject_spurious(
            &base,
            &crate::testbed::SpuriousSpec {
                target_class: 1,
                channel: 0,
                position: crate::testbed::BarPosition::Column(2),
                width: 2,
                value: 1.0,
                selection: SelectionRule::Random { k: 5, seed: 1 },
            },
            None,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds");
        write_dataset(&data, &path).unwrap();
        let loaded = read_dataset(&path).unwrap();
        assert_eq!(loaded, data);

        // Writing again produces identical bytes.
        let manifest1 = std::fs::read(path.join("manifest.txt")).unwrap();
        let bin1 = std::fs::read(path.join("features.bin")).unwrap();
        write_dataset(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(path.join("manifest.txt")).unwrap(), manifest1);
        assert_eq!(std::fs::read(path.join("features.bin")).unwrap(), bin1);
    }

    #[test]
    fn corrupt_feature_file_is_rejected() {
        let data = generate_base(&BaseParams {
            classes: 2,
            n_per_class: 3,
            grid: GridShape {
                height: 2,
                width: 2,
                channels: 1,
            },
            noise: NoiseSpread::uniform(0.0, 0.0),
            seed: 1,
            split: Split::Test,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds");
        write_dataset(&data, &path).unwrap();
        let mut bytes = std::fs::read(path.join("features.bin")).unwrap();
        bytes.pop();
        std::fs::write(path.join("features.bin"), bytes).unwrap();
        assert!(matches!(
            read_dataset(&path).unwrap_err(),
            Error::Format { .. }
        ));
    }
}
