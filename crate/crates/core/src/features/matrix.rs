use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::temporal::{
    ewma_features, lag_features, rolling_cv, rolling_features, rolling_fourier, static_fourier, AdjustedLevels,
};
use super::{calendar_features, Column, ColumnKind, FeatureConfig, CALENDAR_NAMES};
use crate::codec::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::ingest::HolidayCalendar;
use crate::labeling::{LabelConfig, Labeler};
use crate::series::{DemandPanel, Partition, SplitIndices};

const MAGIC: &[u8; 5] = b"MBFM1";
const VERSION: u16 = 1;

/// Everything needed to interpret a matrix beyond its numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub horizons: Vec<usize>,
    pub warmup: usize,
    pub split: SplitIndices,
    pub entities: Vec<String>,
    pub labeler: Labeler,
    /// Adjusted-demand level cuts per entity code (empty when disabled).
    pub adjusted: Vec<AdjustedLevels>,
    pub scaled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTarget {
    pub horizon: usize,
    pub values: Vec<f64>,
    pub classes: Vec<u8>,
}

/// Row-major pooled feature matrix, rows ordered by `(entity_code, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub data: Vec<f64>,
    pub entity: Vec<u32>,
    pub step: Vec<usize>,
    pub partition: Vec<Partition>,
    pub targets: Vec<HorizonTarget>,
    pub meta: MatrixMeta,
}

fn kind_for(name: &str) -> ColumnKind {
    if name == "entity_code" || CALENDAR_NAMES.contains(&name) {
        ColumnKind::Categorical
    } else {
        ColumnKind::Numeric
    }
}

fn entity_columns(
    values: &[f64],
    code: u32,
    config: &FeatureConfig,
    calendar: &[Column],
    train_end: usize,
    adjusted: Option<&AdjustedLevels>,
) -> Result<Vec<Column>> {
    let n = values.len();
    let inc = &config.include;
    let mut cols = vec![
        Column {
            name: "entity_code".into(),
            values: vec![code as f64; n],
            valid_from: 0,
            kind: ColumnKind::Categorical,
        },
        Column {
            name: "demand".into(),
            values: values.to_vec(),
            valid_from: 0,
            kind: ColumnKind::Numeric,
        },
    ];
    if inc.lags {
        cols.extend(lag_features(values, &config.lag_offsets)?);
    }
    if inc.rolling {
        cols.extend(rolling_features(values, &config.rolling_windows)?);
    }
    if inc.ewma {
        cols.extend(ewma_features(values, &config.ewma_spans)?);
    }
    if let Some(levels) = adjusted {
        cols.push(levels.apply(values));
    }
    if inc.cv {
        cols.extend(rolling_cv(values, &config.cv_windows)?);
    }
    if inc.fourier {
        let f = &config.fourier;
        if f.static_fit {
            cols.extend(static_fourier(values, f.period, f.harmonics, train_end)?);
        } else {
            cols.extend(rolling_fourier(values, f.period, f.harmonics));
        }
    }
    if inc.calendar {
        cols.extend(calendar.iter().cloned());
    }
    Ok(cols)
}

/// Builds the pooled matrix: per-entity features, warm-up rows dropped,
/// per-horizon regression and class targets, and a partition per row.
///
/// A row with origin `t` belongs to training when every target index
/// `t + H` is still inside the training span, to validation when
/// `t ≥ train_end` and all targets precede `valid_end`, and to test when
/// `t ≥ valid_end`. Rows straddling a boundary are dropped.
pub fn assemble_matrix(
    panel: &DemandPanel,
    config: &FeatureConfig,
    holidays: &HolidayCalendar,
    horizons: &[usize],
    label_config: LabelConfig,
    split: &SplitIndices,
) -> Result<FeatureMatrix> {
    config.validate()?;
    let len = panel.len();
    let h_max = horizons.iter().copied().max().ok_or(Error::InvalidConfig("no horizons".into()))?;
    if let Some(&h) = horizons.iter().find(|h| **h == 0 || **h >= len) {
        return Err(Error::HorizonExceedsGrid { horizon: h, len });
    }
    let labeler = Labeler::fit(panel, split.train_end, label_config)?;
    let warmup = config.warmup();
    let calendar = if config.include.calendar {
        calendar_features(panel.grid(), config.timezone_offset_minutes, holidays)
    } else {
        Vec::new()
    };
    let adjusted: Vec<AdjustedLevels> = if config.include.adjusted {
        panel
            .series()
            .iter()
            .map(|s| {
                let a = &config.adjusted;
                AdjustedLevels::fit(&s.values[..split.train_end.min(len)], a.levels, a.scale, a.direction)
            })
            .collect()
    } else {
        Vec::new()
    };

    let origins: Vec<usize> = (warmup..len.saturating_sub(h_max))
        .filter(|&t| partition_for(t, h_max, split).is_some())
        .collect();

    struct Block {
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        data: Vec<f64>,
        targets: Vec<(Vec<f64>, Vec<u8>)>,
    }

    let blocks: Vec<Block> = panel
        .series()
        .par_iter()
        .map(|s| -> Result<Block> {
            let code = s.entity.code;
            let cols = entity_columns(
                &s.values,
                code,
                config,
                &calendar,
                split.train_end,
                adjusted.get(code as usize),
            )?;
            let mut data = Vec::with_capacity(origins.len() * cols.len());
            for &t in &origins {
                for c in &cols {
                    debug_assert!(t >= c.valid_from, "{} used before warm-up", c.name);
                    data.push(c.values[t]);
                }
            }
            let targets = horizons
                .iter()
                .map(|&h| {
                    let values: Vec<f64> = origins.iter().map(|&t| s.values[t + h]).collect();
                    let classes = values.iter().map(|v| labeler.label(code, *v) as u8).collect();
                    (values, classes)
                })
                .collect();
            Ok(Block {
                names: cols.iter().map(|c| c.name.clone()).collect(),
                kinds: cols.iter().map(|c| c.kind).collect(),
                data,
                targets,
            })
        })
        .collect::<Result<_>>()?;

    if origins.is_empty() || blocks.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let names = blocks[0].names.clone();
    let kinds = blocks[0].kinds.clone();
    let n_rows = origins.len() * blocks.len();
    let mut data = Vec::with_capacity(n_rows * names.len());
    let mut targets: Vec<HorizonTarget> = horizons
        .iter()
        .map(|&h| HorizonTarget {
            horizon: h,
            values: Vec::with_capacity(n_rows),
            classes: Vec::with_capacity(n_rows),
        })
        .collect();
    let mut entity = Vec::with_capacity(n_rows);
    let mut step = Vec::with_capacity(n_rows);
    let mut partition = Vec::with_capacity(n_rows);
    for (code, block) in blocks.into_iter().enumerate() {
        data.extend(block.data);
        for (target, (values, classes)) in targets.iter_mut().zip(block.targets) {
            target.values.extend(values);
            target.classes.extend(classes);
        }
        for &t in &origins {
            entity.push(code as u32);
            step.push(t);
            partition.push(partition_for(t, h_max, split).expect("filtered"));
        }
    }
    Ok(FeatureMatrix {
        names,
        kinds,
        data,
        entity,
        step,
        partition,
        targets,
        meta: MatrixMeta {
            horizons: horizons.to_vec(),
            warmup,
            split: *split,
            entities: panel.entities().map(|e| e.name.clone()).collect(),
            labeler,
            adjusted,
            scaled: false,
        },
    })
}

fn partition_for(t: usize, h_max: usize, split: &SplitIndices) -> Option<Partition> {
    if t + h_max < split.train_end {
        Some(Partition::Train)
    } else if t >= split.train_end && t + h_max < split.valid_end {
        Some(Partition::Valid)
    } else if t >= split.valid_end {
        Some(Partition::Test)
    } else {
        None
    }
}

fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Train => "train",
        Partition::Valid => "valid",
        Partition::Test => "test",
    }
}

fn parse_partition(s: &str) -> Option<Partition> {
    match s {
        "train" => Some(Partition::Train),
        "valid" => Some(Partition::Valid),
        "test" => Some(Partition::Test),
        _ => None,
    }
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.entity.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_features().max(1))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn target(&self, horizon: usize) -> Result<&HorizonTarget> {
        self.targets
            .iter()
            .find(|t| t.horizon == horizon)
            .ok_or(Error::HorizonExceedsGrid {
                horizon,
                len: self.meta.split.len,
            })
    }

    pub fn indices_of(&self, p: Partition) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.partition[i] == p).collect()
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        let m = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            data,
            entity: indices.iter().map(|&i| self.entity[i]).collect(),
            step: indices.iter().map(|&i| self.step[i]).collect(),
            partition: indices.iter().map(|&i| self.partition[i]).collect(),
            targets: self
                .targets
                .iter()
                .map(|t| HorizonTarget {
                    horizon: t.horizon,
                    values: indices.iter().map(|&i| t.values[i]).collect(),
                    classes: indices.iter().map(|&i| t.classes[i]).collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn select(&self, p: Partition) -> FeatureMatrix {
        self.subset(&self.indices_of(p))
    }

    pub fn select_entity(&self, code: u32) -> FeatureMatrix {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| self.entity[i] == code).collect();
        self.subset(&idx)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut writer = writer;
        let meta = serde_json::to_string(&self.meta)?;
        writeln!(writer, "#meta {meta}").map_err(|e| Error::io("<matrix csv>", e))?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.names.clone();
        for t in &self.targets {
            header.push(format!("target_h{}", t.horizon));
            header.push(format!("class_h{}", t.horizon));
        }
        header.push("step".into());
        header.push("partition".into());
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            for t in &self.targets {
                record.push(t.values[i].to_string());
                record.push(t.classes[i].to_string());
            }
            record.push(self.step[i].to_string());
            record.push(partition_name(self.partition[i]).into());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let bad = |m: &str| Error::BadMatrixFile(m.to_string());
        let mut reader = BufReader::new(reader);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io("<matrix csv>", e))?;
        let meta_json = first.trim_end().strip_prefix("#meta ").ok_or_else(|| bad("missing #meta line"))?;
        let meta: MatrixMeta = serde_json::from_str(meta_json)?;
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let n_h = meta.horizons.len();
        if header.len() < 2 * n_h + 2 {
            return Err(bad("header too short"));
        }
        let m = header.len() - 2 * n_h - 2;
        let names = header[..m].to_vec();
        for (k, &h) in meta.horizons.iter().enumerate() {
            if header[m + 2 * k] != format!("target_h{h}") || header[m + 2 * k + 1] != format!("class_h{h}") {
                return Err(bad("target columns do not match metadata horizons"));
            }
        }
        let ec = names.iter().position(|n| n == "entity_code").ok_or_else(|| bad("no entity_code column"))?;
        let mut out = FeatureMatrix {
            kinds: names.iter().map(|n| kind_for(n)).collect(),
            names,
            data: Vec::new(),
            entity: Vec::new(),
            step: Vec::new(),
            partition: Vec::new(),
            targets: meta
                .horizons
                .iter()
                .map(|&h| HorizonTarget {
                    horizon: h,
                    values: Vec::new(),
                    classes: Vec::new(),
                })
                .collect(),
            meta,
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::MalformedRow {
                    line: line + 3,
                    reason: format!("not a number: {s:?}"),
                })
            };
            for field in rec.iter().take(m) {
                out.data.push(num(field)?);
            }
            out.entity.push(out.data[out.data.len() - m + ec] as u32);
            for (k, t) in out.targets.iter_mut().enumerate() {
                t.values.push(num(&rec[m + 2 * k])?);
                t.classes.push(num(&rec[m + 2 * k + 1])? as u8);
            }
            out.step.push(num(&rec[m + 2 * n_h])? as usize);
            out.partition.push(parse_partition(&rec[m + 2 * n_h + 1]).ok_or_else(|| bad("unknown partition"))?);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut e = Encoder::default();
        e.bytes(MAGIC);
        e.u16(VERSION);
        e.str(&serde_json::to_string(&self.meta)?);
        e.u32(self.n_features() as u32);
        for (name, kind) in self.names.iter().zip(&self.kinds) {
            e.str(name);
            e.u8(matches!(kind, ColumnKind::Categorical) as u8);
        }
        e.u64(self.n_rows() as u64);
        for i in 0..self.n_rows() {
            e.u32(self.entity[i]);
            e.u64(self.step[i] as u64);
            e.u8(self.partition[i] as u8);
            for v in self.row(i) {
                e.f64(*v);
            }
            for t in &self.targets {
                e.f64(t.values[i]);
                e.u8(t.classes[i]);
            }
        }
        Ok(e.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::BadMatrixFile("truncated or malformed binary matrix".into());
        let mut d = Decoder::new(bytes);
        if d.take(MAGIC.len()) != Some(MAGIC.as_slice()) {
            return Err(Error::BadMatrixFile("missing MBFM1 magic".into()));
        }
        let version = d.u16().ok_or_else(bad)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let meta: MatrixMeta = serde_json::from_str(&d.str().ok_or_else(bad)?)?;
        let m = d.u32().ok_or_else(bad)? as usize;
        let mut names = Vec::with_capacity(m.min(d.remaining()));
        let mut kinds = Vec::with_capacity(m.min(d.remaining()));
        for _ in 0..m {
            names.push(d.str().ok_or_else(bad)?);
            kinds.push(if d.u8().ok_or_else(bad)? == 1 {
                ColumnKind::Categorical
            } else {
                ColumnKind::Numeric
            });
        }
        let n = d.u64().ok_or_else(bad)? as usize;
        let row_bytes = 13 + 8 * m + 9 * meta.horizons.len();
        if n.checked_mul(row_bytes) != Some(d.remaining()) {
            return Err(bad());
        }
        let mut out = FeatureMatrix {
            names,
            kinds,
            data: Vec::with_capacity(n * m),
            entity: Vec::with_capacity(n),
            step: Vec::with_capacity(n),
            partition: Vec::with_capacity(n),
            targets: meta
                .horizons
                .iter()
                .map(|&h| HorizonTarget {
                    horizon: h,
                    values: Vec::with_capacity(n),
                    classes: Vec::with_capacity(n),
                })
                .collect(),
            meta,
        };
        for _ in 0..n {
            out.entity.push(d.u32().ok_or_else(bad)?);
            out.step.push(d.u64().ok_or_else(bad)? as usize);
            out.partition.push(match d.u8().ok_or_else(bad)? {
                0 => Partition::Train,
                1 => Partition::Valid,
                2 => Partition::Test,
                _ => return Err(bad()),
            });
            for _ in 0..m {
                out.data.push(d.f64().ok_or_else(bad)?);
            }
            for t in &mut out.targets {
                t.values.push(d.f64().ok_or_else(bad)?);
                t.classes.push(d.u8().ok_or_else(bad)?);
            }
        }
        Ok(out)
    }

    /// Writes CSV when the extension is `.csv`, the binary format otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e == "csv") {
            let mut buf = Vec::new();
            self.write_csv(&mut buf)?;
            buf
        } else {
            self.to_bytes()?
        };
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            Self::read_csv(bytes.as_slice())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFamilies;
    use crate::ingest::{generate_synthetic, SynthSpec};
    use crate::series::{chronological_split, DEFAULT_RATIOS};

    fn small_config() -> FeatureConfig {
        FeatureConfig {
            lag_offsets: vec![1, 5, 60],
            rolling_windows: vec![5, 60],
            ewma_spans: vec![5, 60],
            cv_windows: vec![60],
            fourier: crate::features::FourierConfig {
                period: 120,
                harmonics: 2,
                static_fit: false,
            },
            ..Default::default()
        }
    }

    fn panel(days: usize, entities: usize) -> DemandPanel {
        generate_synthetic(&SynthSpec {
            entities,
            days,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn shape_and_targets() {
        let p = panel(2, 2);
        let split = chronological_split(p.len(), DEFAULT_RATIOS).unwrap();
        let m = assemble_matrix(&p, &small_config(), &HolidayCalendar::default(), &[5, 15, 30, 60], LabelConfig::default(), &split).unwrap();
        assert_eq!(m.targets.len(), 4);
        assert_eq!(m.meta.warmup, 120);
        assert_eq!(m.data.len(), m.n_rows() * m.n_features());
        assert_eq!(m.n_rows() % 2, 0);
        let di = m.column_index("demand").unwrap();
        for i in 0..m.n_rows() {
            let s = &p.series()[m.entity[i] as usize].values;
            assert_eq!(m.row(i)[di], s[m.step[i]]);
            assert_eq!(m.target(60).unwrap().values[i], s[m.step[i] + 60]);
            assert!(m.row(i).iter().all(|v| v.is_finite()));
        }
        assert!(m.step.iter().all(|&t| t >= 120 && t + 60 < p.len()));
    }

    #[test]
    fn minimal_families_leave_code_demand_and_calendar() {
        let p = panel(1, 1);
        let split = chronological_split(p.len(), DEFAULT_RATIOS).unwrap();
        let cfg = FeatureConfig {
            include: FeatureFamilies::minimal(),
            ..Default::default()
        };
        let m = assemble_matrix(&p, &cfg, &HolidayCalendar::default(), &[5], LabelConfig::default(), &split).unwrap();
        let mut expected = vec!["entity_code".to_string(), "demand".to_string()];
        expected.extend(CALENDAR_NAMES.iter().map(|s| s.to_string()));
        assert_eq!(m.names, expected);
        assert_eq!(m.meta.warmup, 0);
    }

    #[test]
    fn partitions_respect_the_embargo() {
        let p = panel(2, 1);
        let split = chronological_split(p.len(), DEFAULT_RATIOS).unwrap();
        let m = assemble_matrix(&p, &small_config(), &HolidayCalendar::default(), &[5, 60], LabelConfig::default(), &split).unwrap();
        for i in 0..m.n_rows() {
            let t = m.step[i];
            match m.partition[i] {
                Partition::Train => assert!(t + 60 < split.train_end),
                Partition::Valid => assert!(t >= split.train_end && t + 60 < split.valid_end),
                Partition::Test => assert!(t >= split.valid_end),
            }
        }
        for part in [Partition::Train, Partition::Valid, Partition::Test] {
            assert!(!m.indices_of(part).is_empty());
        }
    }

    #[test]
    fn persistence_round_trips() {
        let p = panel(1, 2);
        let split = chronological_split(p.len(), DEFAULT_RATIOS).unwrap();
        let m = assemble_matrix(&p, &small_config(), &HolidayCalendar::default(), &[5, 15], LabelConfig::default(), &split).unwrap();
        let back = FeatureMatrix::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        let back = FeatureMatrix::read_csv(csv.as_slice()).unwrap();
        assert_eq!(back, m);

        let bytes = m.to_bytes().unwrap();
        assert!(FeatureMatrix::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn too_short_panel_has_no_rows() {
        let p = panel(1, 1).truncated(1440).unwrap();
        let split = chronological_split(p.len(), DEFAULT_RATIOS).unwrap();
        let err = assemble_matrix(&p, &FeatureConfig::default(), &HolidayCalendar::default(), &[5], LabelConfig::default(), &split)
            .unwrap_err();
        assert!(matches!(err, Error::NoUsableRows));
    }
}
