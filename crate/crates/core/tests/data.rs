use std::path::Path;

use chrono::NaiveDate;
use vlstm_core::data::{
    make_windows, read_csv, to_log_vol, write_csv, Split, SplitDates, VolSeries,
};
use vlstm_core::synthetic::VolPanel;
use vlstm_core::Error;

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn parse(text: &str) -> vlstm_core::Result<vlstm_core::data::LoadedSeries> {
    read_csv(text.as_bytes(), Path::new("mem.csv"))
}

#[test]
fn two_symbols_three_rows_each() {
    let l = parse(
        "date,symbol,rv\n2001-01-02,B,0.1\n2001-01-03,B,0.2\n2001-01-04,B,0.3\n\
         2001-01-02,A,1\n2001-01-03,A,2\n2001-01-04,A,3\n",
    )
    .unwrap();
    assert_eq!(l.series.len(), 2);
    assert_eq!(l.series[0].symbol, "A");
    assert!(l.series.iter().all(|s| s.len() == 3));
    assert_eq!(l.dropped, 0);
}

#[test]
fn nonpositive_and_missing_rows_are_dropped() {
    let l = parse("date,symbol,rv\n2001-01-02,A,0.1\n2001-01-03,A,-1\n2001-01-04,A,\n2001-01-05,A,0\n2001-01-08,A,0.2\n")
        .unwrap();
    assert_eq!(l.dropped, 3);
    assert_eq!(l.series[0].rv, vec![0.1, 0.2]);
}

#[test]
fn dates_come_back_sorted() {
    let l = parse("date,symbol,rv\n2001-01-05,A,3\n2001-01-02,A,1\n2001-01-03,A,2\n").unwrap();
    assert_eq!(l.series[0].dates, vec![ymd(2001, 1, 2), ymd(2001, 1, 3), ymd(2001, 1, 5)]);
    assert_eq!(l.series[0].rv, vec![1.0, 2.0, 3.0]);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = parse("date,symbol,rv\n2001-01-02,A,0.1\n2001-13-45,A,0.2\n").unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("{e}"),
    }
    let err = parse("date,symbol,rv\n2001-01-02,A,abc\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    assert!(parse("when,symbol,rv\n").is_err());
    assert!(parse("date,symbol,rv\n2001-01-02,A,-1\n").is_err());
    assert!(parse("date,symbol,rv\n2001-01-02,A,1\n2001-01-02,A,2\n").is_err());
}

#[test]
fn csv_round_trip_with_returns() {
    let panel = VolPanel {
        symbols: 3,
        start: ymd(2005, 1, 1),
        end: ymd(2005, 6, 30),
        emit_returns: true,
        ..VolPanel::default()
    };
    let series = panel.generate(4).unwrap();
    let mut buf = Vec::new();
    write_csv(&series, &mut buf).unwrap();
    let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.series, series);
}

#[test]
fn log_vol_is_half_log_rv() {
    let s = VolSeries {
        symbol: "A".into(),
        dates: vec![ymd(2001, 1, 1), ymd(2001, 1, 2), ymd(2001, 1, 3)],
        rv: vec![0.04, 1.0, std::f64::consts::E.powi(2)],
        ret: None,
    };
    let v = to_log_vol(&s).unwrap();
    assert!((v[0] - (-1.609_44)).abs() < 1e-5);
    assert_eq!(v[1], 0.0);
    assert!((v[2] - 1.0).abs() < 1e-15);
}

fn panel() -> Vec<VolSeries> {
    VolPanel {
        symbols: 3,
        start: ymd(2000, 1, 3),
        end: ymd(2004, 12, 31),
        ..VolPanel::default()
    }
    .generate(8)
    .unwrap()
}

fn splits() -> SplitDates {
    SplitDates::new(ymd(2000, 1, 4), ymd(2002, 6, 30), ymd(2003, 9, 30), ymd(2004, 12, 31)).unwrap()
}

#[test]
fn windows_align_with_the_raw_series() {
    let series = panel();
    let t = 12;
    let ds = make_windows(&series, t, &splits(), false).unwrap();
    for split in Split::ALL {
        let d = ds.split(split);
        for i in 0..d.len() {
            let s = &series[d.symbol_ids[i]];
            assert_eq!(s.symbol, ds.symbols[d.symbol_ids[i]]);
            let j = s.dates.binary_search(&d.target_dates[i]).unwrap();
            assert!(j >= t);
            let logv = to_log_vol(s).unwrap();
            assert_eq!(d.targets[i], logv[j]);
            assert_eq!(ds.window(split, i), &logv[j - t..j]);
            assert_eq!(splits().tag(d.target_dates[i]), Some(split));
        }
        // (symbol, date) ascending
        let keys: Vec<_> = (0..d.len()).map(|i| (d.symbol_ids[i], d.target_dates[i])).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn standardization_uses_train_targets_only() {
    let ds = make_windows(&panel(), 5, &splits(), false).unwrap();
    let raw = ds.clone();
    let (z, stats) = ds.standardize().unwrap();
    let n = raw.train.len() as f64;
    let mean = raw.train.targets.iter().sum::<f64>() / n;
    let std = (raw.train.targets.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((stats.mean[0] - mean).abs() < 1e-12);
    assert!((stats.std[0] - std).abs() < 1e-12);
    let last_train = raw.train.target_dates.iter().max().unwrap();
    for split in [Split::Validation, Split::Test] {
        assert!(raw.split(split).target_dates.iter().all(|d| d > last_train));
        for (a, b) in raw.split(split).targets.iter().zip(&z.split(split).targets) {
            assert!((stats.invert(*b, 0) - a).abs() <= 1e-12);
        }
    }
    assert!(z.standardize().is_err(), "double standardization");
}

#[test]
fn return_feature_interleaves_with_log_vol() {
    let series = VolPanel {
        symbols: 1,
        start: ymd(2000, 1, 3),
        end: ymd(2004, 12, 31),
        emit_returns: true,
        ..VolPanel::default()
    }
    .generate(2)
    .unwrap();
    let ds = make_windows(&series, 4, &splits(), true).unwrap();
    assert_eq!(ds.n_features, 2);
    assert_eq!(ds.window(Split::Train, 0).len(), 8);
    let logv = to_log_vol(&series[0]).unwrap();
    let ret = series[0].ret.as_ref().unwrap();
    let j = series[0].dates.binary_search(&ds.train.target_dates[0]).unwrap();
    let w = ds.window(Split::Train, 0);
    for k in 0..4 {
        assert_eq!(w[2 * k], logv[j - 4 + k]);
        assert_eq!(w[2 * k + 1], ret[j - 4 + k]);
    }
    let no_ret = VolPanel { symbols: 1, ..VolPanel::default() }.generate(2).unwrap();
    assert!(make_windows(&no_ret, 4, &splits(), true).is_err());
}

#[test]
fn audit_dump_has_one_row_per_sample() {
    let ds = make_windows(&panel(), 3, &splits(), false).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let total = ds.train.len() + ds.validation.len() + ds.test.len();
    assert_eq!(text.lines().count(), total + 1);
    assert_eq!(text.lines().next().unwrap(), "split,symbol,target_date,target,w0,w1,w2");
}
