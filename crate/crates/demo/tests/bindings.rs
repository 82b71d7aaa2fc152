use uilab_demo::*;

#[test]
fn threshold_curve_shapes() {
    let c = threshold_curve_data(0.5, 2.0, 9).unwrap();
    assert_eq!(c.x.len(), 9);
    assert_eq!(c.soft[4], 0.0);
    assert_eq!(c.soft[0], -1.5);
    assert_eq!(c.trusted[0], -2.0);
    assert_eq!(c.trusted[3], 0.0);
    assert!(threshold_curve_data(0.5, 2.0, 1).is_err());
    assert!(threshold_curve_data(-1.0, 2.0, 5).is_err());
    assert!(threshold(0.5, 2.0, 5).unwrap().contains("\"soft\""));
}

fn threshold(t: f64, r: f64, p: usize) -> Option<String> {
    threshold_curve(t, r, p).ok()
}

#[test]
fn classical_series_start_at_zero_db() {
    let s = classical_data(20, 40, 0.1, 0.1, 10, 1).unwrap();
    assert_eq!(s.len(), 3);
    for series in &s {
        assert_eq!(series.nmse_db.len(), 11);
        assert_eq!(series.nmse_db[0], 0.0);
    }
}

#[test]
fn theory_errors_stay_under_bound() {
    let d = theory_data(40, 80, 2, 8, 12.0, 12).unwrap();
    assert!(d.s_max >= 2);
    for k in 0..=8 {
        assert!(d.cp[k] <= d.bound[k]);
        assert!(d.cpss[k] <= d.cp[k] + 1e-12);
    }
    assert!(theory_data(40, 80, 30, 8, 12.0, 12).unwrap_err().contains("not admissible"));
}
