//! Overlap and volume scores for segmentation masks.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::BinaryMask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("mask grids differ: {0:?} vs {1:?}")]
    GridMismatch([usize; 3], [usize; 3]),
    #[error("undefined DSC: both masks are empty")]
    UndefinedDsc,
    #[error("empty batch")]
    EmptyBatch,
}

/// Dice similarity coefficient in percent: `100 * 2|A ∩ R| / (|A| + |R|)`.
pub fn dsc(a: &BinaryMask, r: &BinaryMask) -> Result<f64, EvalError> {
    if !a.same_grid(r) {
        return Err(EvalError::GridMismatch(a.dims(), r.dims()));
    }
    let (mut both, mut na, mut nr) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(r.bits()) {
        na += x as usize;
        nr += y as usize;
        both += (x && y) as usize;
    }
    if na + nr == 0 {
        return Err(EvalError::UndefinedDsc);
    }
    Ok(100.0 * (2 * both) as f64 / (na + nr) as f64)
}

/// Occupied volume in cm³: voxel count times voxel size.
pub fn mask_volume_cm3(m: &BinaryMask) -> f64 {
    m.count() as f64 * m.grid().voxel_volume_mm3() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dsc_percent: f64,
    pub volume_auto_cm3: f64,
    pub volume_ref_cm3: f64,
    pub voxels_auto: usize,
    pub voxels_ref: usize,
}

pub fn compare(auto: &BinaryMask, reference: &BinaryMask) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        dsc_percent: dsc(auto, reference)?,
        volume_auto_cm3: mask_volume_cm3(auto),
        volume_ref_cm3: mask_volume_cm3(reference),
        voxels_auto: auto.count(),
        voxels_ref: reference.count(),
    })
}

/// Min, max, mean and population standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub volume_auto_cm3: Summary,
    pub volume_ref_cm3: Summary,
    pub voxels_auto: Summary,
    pub voxels_ref: Summary,
    pub dsc_percent: Summary,
}

/// Per-case reports plus column statistics.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub cases: Vec<(String, EvalReport)>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    vol_auto: f64,
    vol_ref: f64,
    voxels_auto: f64,
    voxels_ref: f64,
    dsc: f64,
}

impl Batch {
    pub fn push(&mut self, id: impl Into<String>, report: EvalReport) {
        self.cases.push((id.into(), report));
    }

    pub fn summary(&self) -> Result<BatchSummary, EvalError> {
        let col = |f: fn(&EvalReport) -> f64| {
            let v: Vec<f64> = self.cases.iter().map(|(_, r)| f(r)).collect();
            Summary::of(&v).ok_or(EvalError::EmptyBatch)
        };
        Ok(BatchSummary {
            volume_auto_cm3: col(|r| r.volume_auto_cm3)?,
            volume_ref_cm3: col(|r| r.volume_ref_cm3)?,
            voxels_auto: col(|r| r.voxels_auto as f64)?,
            voxels_ref: col(|r| r.voxels_ref as f64)?,
            dsc_percent: col(|r| r.dsc_percent)?,
        })
    }

    /// One row per case, then `min`, `max`, `mean` and `std` rows.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (id, r) in &self.cases {
            w.serialize(CsvRow {
                id,
                vol_auto: r.volume_auto_cm3,
                vol_ref: r.volume_ref_cm3,
                voxels_auto: r.voxels_auto as f64,
                voxels_ref: r.voxels_ref as f64,
                dsc: r.dsc_percent,
            })?;
        }
        if let Ok(s) = self.summary() {
            type Pick = fn(&Summary) -> f64;
            let pick: [(&str, Pick); 4] =
                [("min", |s| s.min), ("max", |s| s.max), ("mean", |s| s.mean), ("std", |s| s.std)];
            for (label, f) in pick {
                w.serialize(CsvRow {
                    id: label,
                    vol_auto: f(&s.volume_auto_cm3),
                    vol_ref: f(&s.volume_ref_cm3),
                    voxels_auto: f(&s.voxels_auto),
                    voxels_ref: f(&s.voxels_ref),
                    dsc: f(&s.dsc_percent),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// CSV header and a single row for one comparison.
pub fn report_csv(id: &str, r: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        vol_auto: f64,
        vol_ref: f64,
        voxels_auto: usize,
        voxels_ref: usize,
        dsc: f64,
    }
    w.serialize(Row {
        id,
        vol_auto: r.volume_auto_cm3,
        vol_ref: r.volume_ref_cm3,
        voxels_auto: r.voxels_auto,
        voxels_ref: r.voxels_ref,
        dsc: r.dsc_percent,
    })
    .expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use proptest::prelude::*;

    fn grid8() -> Grid {
        Grid::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn mask(indices: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::empty(&grid8());
        for &i in indices {
            m.set(i, true);
        }
        m
    }

    #[test]
    fn dsc_edge_values() {
        let a = mask(&[[0, 0, 0], [1, 0, 0], [2, 3, 4], [7, 7, 7]]);
        assert_eq!(dsc(&a, &a), Ok(100.0));
        let b = mask(&[[0, 1, 0]]);
        assert_eq!(dsc(&a, &b), Ok(0.0));
        let r = mask(&[[0, 0, 0], [1, 0, 0], [5, 5, 5], [6, 6, 6]]);
        assert_eq!(dsc(&a, &r), Ok(50.0));
        let e = BinaryMask::empty(&grid8());
        assert_eq!(dsc(&e, &e), Err(EvalError::UndefinedDsc));
        let other = BinaryMask::empty(&Grid::new([8, 8, 9], [1.0; 3], [0.0; 3]).unwrap());
        assert!(matches!(dsc(&a, &other), Err(EvalError::GridMismatch(..))));
        let shifted = BinaryMask::empty(&Grid::new([8, 8, 8], [1.0; 3], [0.5, 0.0, 0.0]).unwrap());
        assert!(dsc(&a, &shifted).is_err());
    }

    #[test]
    fn volumes() {
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(mask_volume_cm3(&BinaryMask::full(&g)), 1.0);
        assert_eq!(mask_volume_cm3(&BinaryMask::empty(&g)), 0.0);
        let g = Grid::new([4492, 1, 1], [0.5, 0.5, 0.75], [0.0; 3]).unwrap();
        let v = mask_volume_cm3(&BinaryMask::full(&g));
        assert!((v - 0.842_25).abs() < 1e-12);
    }

    #[test]
    fn compare_and_batch() {
        let a = mask(&[[1, 1, 1], [2, 2, 2]]);
        let r = compare(&a, &a).unwrap();
        assert_eq!(r.dsc_percent, 100.0);
        assert_eq!(r.volume_auto_cm3, r.volume_ref_cm3);

        let mut one = Batch::default();
        one.push("a", r.clone());
        let s = one.summary().unwrap();
        assert_eq!((s.dsc_percent.mean, s.dsc_percent.std), (100.0, 0.0));

        let mut two = Batch::default();
        two.push("a", EvalReport { dsc_percent: 70.0, ..r.clone() });
        two.push("b", EvalReport { dsc_percent: 80.0, ..r.clone() });
        let s = two.summary().unwrap();
        assert_eq!(s.dsc_percent, Summary { min: 70.0, max: 80.0, mean: 75.0, std: 5.0 });

        let mut buf = Vec::new();
        two.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,vol_auto,vol_ref,voxels_auto,voxels_ref,dsc");
        assert_eq!(lines[1], "a,0.002,0.002,2.0,2.0,70.0");
        assert_eq!(lines[5], "mean,0.002,0.002,2.0,2.0,75.0");
        assert_eq!(lines[6], "std,0.0,0.0,0.0,0.0,5.0");
        assert_eq!(Batch::default().summary(), Err(EvalError::EmptyBatch));
    }

    #[test]
    fn single_report_row() {
        let a = mask(&[[1, 1, 1]]);
        let text = report_csv("case", &compare(&a, &a).unwrap());
        assert_eq!(text, "id,vol_auto,vol_ref,voxels_auto,voxels_ref,dsc\ncase,0.001,0.001,1,1,100.0\n");
    }

    fn random_mask(bits: Vec<bool>) -> BinaryMask {
        BinaryMask::from_bits(&grid8(), bits).unwrap()
    }

    proptest! {
        #[test]
        fn dsc_symmetric(a in proptest::collection::vec(any::<bool>(), 512),
                         r in proptest::collection::vec(any::<bool>(), 512)) {
            let (a, r) = (random_mask(a), random_mask(r));
            if a.count() + r.count() > 0 {
                prop_assert_eq!(dsc(&a, &r).unwrap(), dsc(&r, &a).unwrap());
            }
            if a.count() > 0 {
                prop_assert_eq!(dsc(&a, &a).unwrap(), 100.0);
            }
        }

        #[test]
        fn dsc_grows_with_overlap(k in 1usize..20, shift in 0usize..20) {
            // |A| = |R| = 20 fixed; overlap 20 - shift.
            let idx = |o: usize| grid8().index_of(o);
            let a = mask(&(0..20).map(idx).collect::<Vec<_>>());
            let r1 = mask(&(shift..shift + 20).map(idx).collect::<Vec<_>>());
            let s2 = shift.saturating_sub(k);
            let r2 = mask(&(s2..s2 + 20).map(idx).collect::<Vec<_>>());
            prop_assert!(dsc(&a, &r2).unwrap() >= dsc(&a, &r1).unwrap());
        }

        #[test]
        fn volume_linear(n in 0usize..512, m in 0usize..512) {
            let g = Grid::new([512, 1, 1], [0.5, 1.25, 2.0], [0.0; 3]).unwrap();
            let vol = |c: usize| mask_volume_cm3(&BinaryMask::from_fn(&g, |[i, _, _]| i < c));
            let per = g.voxel_volume_mm3() / 1000.0;
            prop_assert!((vol(n) - n as f64 * per).abs() < 1e-12);
            prop_assert!((vol(n) + vol(m) - (n + m) as f64 * per).abs() < 1e-12);
        }
    }
}
