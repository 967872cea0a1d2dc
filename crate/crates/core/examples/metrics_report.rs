//! Confusion matrix and report for a hand-made prediction.
//!
//! cargo run --release --example metrics_report

use kdmsi::data::PixelMask;
use kdmsi::metrics::{confusion, evaluate_masks, f1, F1Mode};

fn main() -> kdmsi::Result<()> {
    let gt = PixelMask::from_fn(32, 32, |y, x| (8..20).contains(&y) && (8..20).contains(&x));
    // shifted by 3 px plus a spurious blob
    let pred = PixelMask::from_fn(32, 32, |y, x| {
        (11..23).contains(&y) && (8..20).contains(&x) || (26..30).contains(&y) && (2..6).contains(&x)
    });

    let cm = confusion(&pred, &gt)?;
    println!("tp {} fp {} fn {} tn {}", cm.tp, cm.fp, cm.fn_, cm.tn);
    println!("F1 change {:.4}, macro {:.4}", f1(&cm, F1Mode::Change), f1(&cm, F1Mode::Macro));

    let empty = PixelMask::zeros(32, 32);
    let (report, rows) = evaluate_masks([("shifted", &pred, &gt), ("empty", &empty, &empty)])?;
    for r in &rows {
        println!("{:<8} ciou {:.4}", r.id, r.ciou);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
