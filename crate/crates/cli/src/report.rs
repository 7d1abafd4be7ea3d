use std::fmt::Write;

use trajgp::analysis::CompareTable;

/// Mean speed-change standard deviations (m/s) for laps 1 to 4 on the killer
/// hill, black box then grey box, from a published field measurement.
pub const REFERENCE_ROWS: [(usize, f64, f64); 4] = [
    (1, 0.4148, 0.3022),
    (2, 0.4116, 0.2433),
    (3, 0.4204, 0.3066),
    (4, 0.4069, 0.2207),
];

/// Fixed-width table with one row per lap and the reference values as a
/// footer.
pub fn format_compare(table: &CompareTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "skier {} segment {}", table.skier, table.segment);
    let _ = writeln!(out, "mean predictive std of the speed difference between consecutive samples");
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<5} {:>16} {:>16} {:>10}", "Lap", "Black-box (m/s)", "Grey-box (m/s)", "Reduction");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:<5} {:>16.4} {:>16.4} {:>9.1}%",
            r.lap,
            r.black_box,
            r.grey_box,
            100.0 * r.reduction
        );
    }
    if table.rows.is_empty() {
        let _ = writeln!(out, "(no lap has enough samples on this segment)");
    }
    if let Some(m) = table.mean_reduction() {
        let _ = writeln!(out, "{:<5} {:>16} {:>16} {:>9.1}%", "mean", "", "", 100.0 * m);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "reference values, field measurement on the killer hill (not computed from this data):");
    for (lap, black, grey) in REFERENCE_ROWS {
        let _ = writeln!(out, "{lap:<5} {black:>16.4} {grey:>16.4} {:>9.1}%", 100.0 * (1.0 - grey / black));
    }
    out
}
