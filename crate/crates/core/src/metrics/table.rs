use std::fmt::Write;

use super::MetricReport;
use crate::types::CoarseClass;

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_owned(), |v| format!("{v:.prec$}"))
}

/// Fixed-width text rendering: three-way EPE, the class x speed-bucket
/// table (raw EPE in meters for the lowest bucket, normalized elsewhere)
/// and the range table.
pub fn render_table(r: &MetricReport) -> String {
    let mut out = String::new();
    let t = &r.threeway;
    out.push_str("Three-way EPE (cm)\n");
    let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8}", "Mean", "FD", "FS", "BS");
    let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8}", cell(t.mean, 2), cell(t.fd, 2), cell(t.fs, 2), cell(t.bs, 2));
    out.push('\n');

    let sb = &r.config.speed_buckets;
    let _ = writeln!(out, "Dynamic bucket-normalized EPE ({} shows raw EPE in m)", sb.label(0));
    let _ = write!(out, "{:<12}", "Class");
    for b in 0..sb.len() {
        let _ = write!(out, " {:>12}", sb.label(b));
    }
    let _ = writeln!(out, " {:>10}", "Dynamic");
    for class in CoarseClass::ALL {
        if !r.bucket_table.iter().any(|e| e.class == class) {
            continue;
        }
        let _ = write!(out, "{:<12}", class.as_str());
        for b in 0..sb.len() {
            let v = r.bucket(class, b).and_then(|e| if b == 0 { Some(e.raw_epe_m) } else { e.normalized_epe });
            let _ = write!(out, " {:>12}", cell(v, 3));
        }
        let _ = writeln!(out, " {:>10}", cell(r.per_class_dynamic.get(&class).copied(), 3));
    }
    let _ = writeln!(out, "Dynamic Mean: {}", cell(r.dynamic_mean, 3));
    out.push('\n');

    let _ = writeln!(out, "{:<12} {:>12} {:>10}", "Range (m)", "Dynamic Mean", "Points");
    for e in &r.range_table {
        let _ = writeln!(out, "{:<12} {:>12} {:>10}", e.label, cell(e.dynamic_mean, 3), e.count);
    }
    if let Some(s) = &r.semantic {
        out.push('\n');
        let _ = writeln!(out, "mIoU {:.3}  Accuracy {:.3}", s.miou, s.accuracy);
    }
    out
}
