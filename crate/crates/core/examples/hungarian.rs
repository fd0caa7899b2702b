//! Matches predicted mask tubes to ground-truth tubes by minimum total sIoU
//! cost.

use crs::loss::{assignment_cost, hungarian, siou};

fn square(side: usize, y0: usize, x0: usize, size: usize) -> Vec<f64> {
    let mut m = vec![0.0; side * side];
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            m[y * side + x] = 1.0;
        }
    }
    m
}

fn main() -> crs::Result<()> {
    let side = 12;
    let gt = [square(side, 0, 0, 4), square(side, 6, 6, 5), square(side, 1, 7, 3)];
    // predictions are shifted copies in a scrambled order
    let pred = [square(side, 7, 6, 5), square(side, 1, 8, 3), square(side, 0, 1, 4)];
    let cost: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| gt.iter().map(|g| siou(p, g)).collect::<crs::Result<_>>())
        .collect::<crs::Result<_>>()?;
    for row in &cost {
        println!(
            "{}",
            row.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>().join("  ")
        );
    }
    let assignment = hungarian(&cost)?;
    println!("assignment pred -> gt: {assignment:?}");
    println!("total cost {:.4}", assignment_cost(&cost, &assignment));
    Ok(())
}
