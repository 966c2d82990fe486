//! Reconstruction quality: shifted SNR, RMSE and Pearson correlation after
//! zero-centering, with a ±100 ms alignment search.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::Series1D;

pub const SHIFT_WINDOW_MS: f64 = 100.0;
/// Rate at which signals are compared.
pub const EVAL_FS: f64 = 1000.0;
/// Minimum fraction of the shorter series that must overlap after shifting.
pub const MIN_OVERLAP: f64 = 0.5;
/// How an infinite SNR is written in reports.
pub const INF_SENTINEL: &str = "inf";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeadMetrics {
    /// Decibels; `f64::INFINITY` for a perfect reconstruction.
    pub snr_db: f64,
    pub rmse_uv: f64,
    pub correlation: f64,
    pub shift_ms: f64,
    pub nan_fraction: f64,
}

/// Zero-centred overlap of a reference and a shifted reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Aligned {
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// Samples by which the reconstruction lags the reference.
    pub shift_samples: i64,
    pub shift_ms: f64,
}

fn centred_pairs(y: &[f64], y_hat: &[f64], k: i64) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (t, &v) in y.iter().enumerate() {
        let u = t as i64 + k;
        if u < 0 || u >= y_hat.len() as i64 {
            continue;
        }
        let w = y_hat[u as usize];
        if v.is_nan() || w.is_nan() {
            continue;
        }
        a.push(v);
        b.push(w);
    }
    if !a.is_empty() {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        a.iter_mut().for_each(|v| *v -= ma);
        b.iter_mut().for_each(|v| *v -= mb);
    }
    (a, b)
}

/// `10·log10(Σy² / Σ(y − ŷ)²)` over samples where both are present.
pub fn snr_db(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let (mut sig, mut noise) = (0.0, 0.0);
    for (&a, &b) in y.iter().zip(y_hat) {
        if a.is_nan() || b.is_nan() {
            continue;
        }
        sig += a * a;
        noise += (a - b) * (a - b);
    }
    if sig <= 0.0 {
        return Err(Error::UndefinedSnr);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sig / noise).log10())
}

/// Finds the integer shift within ±100 ms that maximizes the SNR of the
/// zero-centred overlap; ties go to the smaller shift magnitude, then the
/// earlier shift.
pub fn align(y: &Series1D, y_hat: &Series1D) -> Result<Aligned> {
    if y.sample_rate != y_hat.sample_rate {
        return Err(Error::Alignment(format!(
            "sample rates differ: {} vs {}",
            y.sample_rate, y_hat.sample_rate
        )));
    }
    let fs = y.sample_rate;
    let valid = |s: &Series1D| s.values.iter().filter(|v| !v.is_nan()).count();
    let need = (MIN_OVERLAP * valid(y).min(valid(y_hat)) as f64).ceil().max(1.0) as usize;
    let max_k = (SHIFT_WINDOW_MS * fs / 1000.0).floor() as i64;
    let mut best: Option<(f64, i64, Vec<f64>, Vec<f64>)> = None;
    for k in -max_k..=max_k {
        let (a, b) = centred_pairs(&y.values, &y_hat.values, k);
        if a.len() < need {
            continue;
        }
        let Ok(s) = snr_db(&a, &b) else { continue };
        let better = match &best {
            None => true,
            Some((bs, bk, _, _)) => s > *bs || (s == *bs && (k.abs(), k) < (bk.abs(), *bk)),
        };
        if better {
            best = Some((s, k, a, b));
        }
    }
    let (_, k, a, b) = best.ok_or_else(|| {
        Error::Alignment(format!("no shift within ±{SHIFT_WINDOW_MS} ms leaves {need} overlapping samples with signal power"))
    })?;
    Ok(Aligned {
        y: a,
        y_hat: b,
        shift_samples: k,
        shift_ms: k as f64 * 1000.0 / fs,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Metrics of an aligned pair (millivolt inputs; RMSE reported in µV).
pub fn score(aligned: &Aligned) -> Result<LeadMetrics> {
    let (y, y_hat) = (&aligned.y, &aligned.y_hat);
    let snr = snr_db(y, y_hat)?;
    let pairs: Vec<(f64, f64)> = y.iter().zip(y_hat).filter(|(a, b)| !a.is_nan() && !b.is_nan()).map(|(a, b)| (*a, *b)).collect();
    let mse = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pairs.len().max(1) as f64;
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(LeadMetrics {
        snr_db: snr,
        rmse_uv: mse.sqrt() * 1000.0,
        correlation: pearson(&a, &b),
        shift_ms: aligned.shift_ms,
        nan_fraction: 0.0,
    })
}

/// Linear resampling that yields `NaN` wherever either neighbour is `NaN`.
pub fn resample_linear(s: &Series1D, fs: f64) -> Result<Series1D> {
    if s.sample_rate == fs {
        return Ok(s.clone());
    }
    if s.is_empty() {
        return Series1D::new(Vec::new(), fs);
    }
    let n = ((s.len() as f64) * fs / s.sample_rate).round() as usize;
    let last = s.len() - 1;
    let values = (0..n)
        .map(|k| {
            let x = k as f64 * s.sample_rate / fs;
            let i = x.floor() as usize;
            if i >= last {
                return if i == last && x == i as f64 { s.values[last] } else { f64::NAN };
            }
            let f = x - i as f64;
            if f == 0.0 {
                s.values[i]
            } else {
                s.values[i] * (1.0 - f) + s.values[i + 1] * f
            }
        })
        .collect();
    Series1D::new(values, fs)
}

/// Resamples both series to [`EVAL_FS`], aligns and scores them. The NaN
/// fraction is taken over the reconstruction's samples.
pub fn evaluate_lead(y: &Series1D, y_hat: &Series1D) -> Result<LeadMetrics> {
    let nan_fraction = y_hat.nan_fraction();
    let y = resample_linear(y, EVAL_FS)?;
    let y_hat = resample_linear(y_hat, EVAL_FS)?;
    let mut m = score(&align(&y, &y_hat)?)?;
    m.nan_fraction = nan_fraction;
    Ok(m)
}

/// Per-lead evaluation outcome for the report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub record: String,
    pub group: String,
    pub lead: String,
    pub result: std::result::Result<LeadMetrics, String>,
}

pub fn fmt_snr(v: f64) -> String {
    if v == f64::INFINITY {
        INF_SENTINEL.to_string()
    } else {
        format!("{v:.4}")
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("record,lead,snr_db,rmse_uv,corr,shift_ms,nan_frac,error\n");
    for r in rows {
        match &r.result {
            Ok(m) => writeln!(
                s,
                "{},{},{},{:.4},{:.6},{:.1},{:.6},",
                r.record,
                r.lead,
                fmt_snr(m.snr_db),
                m.rmse_uv,
                m.correlation,
                m.shift_ms,
                m.nan_fraction
            ),
            Err(e) => writeln!(s, "{},{},,,,,,{}", r.record, r.lead, e.replace(',', ";")),
        }
        .unwrap();
    }
    s
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub group: String,
    pub leads: usize,
    pub failed: usize,
    /// Leads with a perfect reconstruction; left out of the SNR statistics.
    pub infinite_snr: usize,
    pub snr: (f64, f64),
    pub rmse: (f64, f64),
    pub corr: (f64, f64),
}

/// Mean ± s.d. per group and over everything (group `all`).
pub fn aggregate(rows: &[MetricsRow]) -> Vec<Aggregate> {
    let mut groups: Vec<String> = rows.iter().map(|r| r.group.clone()).collect();
    groups.sort();
    groups.dedup();
    groups.push("all".into());
    groups
        .into_iter()
        .map(|g| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| g == "all" || r.group == g).collect();
            let ok: Vec<&LeadMetrics> = sel.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let finite: Vec<f64> = ok.iter().map(|m| m.snr_db).filter(|v| v.is_finite()).collect();
            Aggregate {
                group: g,
                leads: sel.len(),
                failed: sel.len() - ok.len(),
                infinite_snr: ok.len() - finite.len(),
                snr: mean_sd(&finite),
                rmse: mean_sd(&ok.iter().map(|m| m.rmse_uv).collect::<Vec<_>>()),
                corr: mean_sd(&ok.iter().map(|m| m.correlation).collect::<Vec<_>>()),
            }
        })
        .collect()
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from("group,leads,failed,inf_snr,snr_mean,snr_sd,rmse_mean,rmse_sd,corr_mean,corr_sd\n");
    for a in aggs {
        writeln!(
            s,
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
            a.group, a.leads, a.failed, a.infinite_snr, a.snr.0, a.snr.1, a.rmse.0, a.rmse.1, a.corr.0, a.corr.1
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: Vec<f64>) -> Series1D {
        Series1D::new(v, 1000.0).unwrap()
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.013).sin() + 0.4 * (i as f64 * 0.071).cos()).collect()
    }

    #[test]
    fn zero_reconstruction_is_zero_db() {
        let y = wave(500);
        assert_eq!(snr_db(&y, &vec![0.0; 500]).unwrap(), 0.0);
        let a = align(&series(y), &series(vec![0.0; 500])).unwrap();
        assert_eq!(score(&a).unwrap().snr_db, 0.0);
        assert_eq!(a.shift_ms, 0.0);
    }

    #[test]
    fn ten_percent_residual_is_twenty_db() {
        let y = [1.0, -1.0, 1.0, -1.0];
        let yh = [0.9, -0.9, 0.9, -0.9];
        assert!((snr_db(&y, &yh).unwrap() - 20.0).abs() < 1e-9);
        let a = Aligned {
            y: y.to_vec(),
            y_hat: yh.to_vec(),
            shift_samples: 0,
            shift_ms: 0.0,
        };
        assert!((score(&a).unwrap().correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubled_reconstruction() {
        let y = wave(300);
        let yh: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let m = score(&Aligned { y, y_hat: yh, shift_samples: 0, shift_ms: 0.0 }).unwrap();
        assert!(m.snr_db.abs() < 1e-12);
        assert!((m.correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delay_is_recovered() {
        let y = wave(2000);
        let mut yh = vec![f64::NAN; 10];
        yh.extend_from_slice(&y[..1990]);
        let a = align(&series(y), &series(yh)).unwrap();
        assert_eq!(a.shift_ms, 10.0);
        assert_eq!(score(&a).unwrap().snr_db, f64::INFINITY);
    }

    #[test]
    fn centering_absorbs_offset() {
        let a = align(&series(vec![1.0, -1.0]), &series(vec![2.0, 0.0])).unwrap();
        assert_eq!(a.y_hat, vec![1.0, -1.0]);
        assert_eq!(score(&a).unwrap().snr_db, f64::INFINITY);
    }

    #[test]
    fn long_delay_clamps_to_window() {
        let y = wave(3000);
        let mut yh = vec![0.0; 150];
        yh.extend_from_slice(&y[..2850]);
        let a = align(&series(y), &series(yh)).unwrap();
        assert!(a.shift_ms.abs() <= 100.0);
        assert!(score(&a).unwrap().snr_db.is_finite());
    }

    #[test]
    fn zero_reference_is_undefined() {
        assert!(matches!(snr_db(&[0.0; 4], &[1.0; 4]), Err(Error::UndefinedSnr)));
    }

    #[test]
    fn disjoint_support_fails_alignment() {
        let mut y = wave(1000);
        let mut yh = wave(1000);
        y[500..].iter_mut().for_each(|v| *v = f64::NAN);
        yh[..700].iter_mut().for_each(|v| *v = f64::NAN);
        assert!(matches!(align(&series(y), &series(yh)), Err(Error::Alignment(_))));
    }

    #[test]
    fn resampling_keeps_nan_and_values() {
        let s = Series1D::new(vec![0.0, 1.0, f64::NAN, 3.0], 500.0).unwrap();
        let r = resample_linear(&s, 1000.0).unwrap();
        assert_eq!(r.len(), 8);
        assert_eq!(&r.values[..3], &[0.0, 0.5, 1.0]);
        assert!(r.values[3].is_nan() && r.values[4].is_nan() && r.values[5].is_nan());
        assert_eq!(r.values[6], 3.0);
    }

    #[test]
    fn aggregates_skip_infinite_snr() {
        let m = |s| LeadMetrics { snr_db: s, rmse_uv: 1.0, correlation: 1.0, shift_ms: 0.0, nan_fraction: 0.0 };
        let rows = vec![
            MetricsRow { record: "a".into(), group: "g".into(), lead: "I".into(), result: Ok(m(10.0)) },
            MetricsRow { record: "a".into(), group: "g".into(), lead: "II".into(), result: Ok(m(20.0)) },
            MetricsRow { record: "a".into(), group: "g".into(), lead: "III".into(), result: Ok(m(f64::INFINITY)) },
            MetricsRow { record: "b".into(), group: "h".into(), lead: "I".into(), result: Err("x".into()) },
        ];
        let a = aggregate(&rows);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].snr.0, 15.0);
        assert_eq!(a[0].infinite_snr, 1);
        assert_eq!((a[2].leads, a[2].failed), (4, 1));
        assert!(metrics_csv(&rows).contains(",inf,"));
    }

    proptest! {
        #[test]
        fn shift_recovery_is_exact(delay in -100i64..=100) {
            let y = wave(1500);
            let yh: Vec<f64> = (0..1500i64).map(|t| {
                let s = t - delay;
                if (0..1500).contains(&s) { y[s as usize] } else { f64::NAN }
            }).collect();
            let a = align(&series(y), &series(yh)).unwrap();
            prop_assert_eq!(a.shift_samples, delay);
            prop_assert_eq!(score(&a).unwrap().snr_db, f64::INFINITY);
        }

        #[test]
        fn correlation_invariant_under_positive_affine(scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
            let y = wave(400);
            let yh: Vec<f64> = y.iter().map(|v| scale * v + offset + 0.05 * (v * 7.0).sin()).collect();
            let yh2: Vec<f64> = yh.iter().map(|v| 3.0 * v - 1.0).collect();
            let a = |b: &Vec<f64>| score(&Aligned { y: y.clone(), y_hat: b.clone(), shift_samples: 0, shift_ms: 0.0 }).unwrap().correlation;
            prop_assert!((a(&yh) - a(&yh2)).abs() < 1e-9);
        }

        #[test]
        fn nan_handling_is_symmetric(mask in proptest::collection::vec(0u8..3, 200)) {
            let y0 = wave(200);
            let yh0: Vec<f64> = y0.iter().map(|v| v * 0.8).collect();
            let mut y = y0.clone();
            let mut yh = yh0.clone();
            for (i, m) in mask.iter().enumerate() {
                match m { 1 => y[i] = f64::NAN, 2 => yh[i] = f64::NAN, _ => {} }
            }
            let mut y2 = y0.clone();
            let mut yh2 = yh0.clone();
            for (i, m) in mask.iter().enumerate() {
                match m { 1 => yh2[i] = f64::NAN, 2 => y2[i] = f64::NAN, _ => {} }
            }
            // Excluding a sample from one series or the other gives the same result.
            let a = snr_db(&y, &yh);
            let b = snr_db(&y2, &yh2);
            prop_assert_eq!(a.ok(), b.ok());
        }
    }
}
