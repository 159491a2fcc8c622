use apdiff::apcore::assemble_compose;
use apdiff::grid::{CellField, CellVectorField, Grid, NodeField};
use apdiff::operators::OperatorContext;
use apdiff::study::{loglog_slope, rel_error, Norm};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (3usize..14, 3usize..14, 0.5f64..3.0).prop_map(|(nx, ny, ly)| Grid::new((0.0, 1.0), (0.0, ly), nx, ny).unwrap())
}

fn field(grid: Grid, seed: u64) -> NodeField {
    // Cheap deterministic noise; proptest drives the seed.
    NodeField::from_fn(grid, |i, j| {
        let k = (i as i64 * 7919 + j as i64 * 104_729 + seed as i64) as f64;
        (k * 0.618_033_988_749_895).fract() - 0.5
    })
}

fn cells(grid: Grid, seed: u64) -> CellField {
    let v: Vec<f64> = (0..grid.interior_cell_count())
        .map(|k| ((k as f64 + seed as f64) * 0.754_877_666_246_692_7).fract() - 0.5)
        .collect();
    CellField::from_interior(grid, &v)
}

proptest! {
    #[test]
    fn summation_by_parts(grid in grid_strategy(), angle in 0.0f64..TAU, seed in 0u64..1000) {
        let ctx = OperatorContext::new(CellVectorField::uniform(grid, [angle.cos(), angle.sin()])).unwrap();
        let theta = field(grid, seed);
        let chi = cells(grid, seed + 1);
        let w = grid.dx() * grid.dy();
        let nt = (w * grid.nodes().map(|n| theta[n] * theta[n]).sum::<f64>()).sqrt();
        let nc = (w * grid.interior_cells().map(|c| chi[c] * chi[c]).sum::<f64>()).sqrt();
        prop_assert!(ctx.duality_defect(&theta, &chi).abs() <= 1e-12 * nt * nc);
    }

    #[test]
    fn gradient_is_exact_on_affine_fields(grid in grid_strategy(), angle in 0.0f64..TAU,
                                          a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        let dir = [angle.cos(), angle.sin()];
        let ctx = OperatorContext::new(CellVectorField::uniform(grid, dir)).unwrap();
        let p = NodeField::sample(grid, |x, y| a * x + b * y + c).unwrap();
        let g = ctx.dh(&p);
        let want = dir[0] * a + dir[1] * b;
        for k in grid.cells() {
            prop_assert!((g[k] - want).abs() <= 1e-11 * (1.0 + want.abs()) / grid.h());
        }
    }

    #[test]
    fn unweighted_compose_is_symmetric(grid in grid_strategy(), angle in 0.0f64..TAU, seed in 0u64..1000) {
        let ctx = OperatorContext::new(CellVectorField::uniform(grid, [angle.cos(), angle.sin()])).unwrap();
        let w = field(grid, seed).map(|v| 1.5 + v);
        let a = assemble_compose(&ctx, &CellField::constant(grid, 1.0), &w).unwrap();
        let t = a.transpose();
        let scale = a.frobenius_norm();
        for (r, c, v) in a.triplets() {
            prop_assert!((v - t.get(r, c)).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn relative_error_is_scale_free(grid in grid_strategy(), seed in 0u64..1000, s in 1e-6f64..1e6) {
        let exact = field(grid, seed).map(|v| v + 2.0);
        let noise = field(grid, seed + 3);
        let app_field = NodeField::from_fn(grid, |i, j| exact[(i, j)] + 1e-3 * noise[(i, j)]);
        for norm in Norm::ALL {
            let e1 = rel_error(&exact, &app_field, norm).unwrap();
            let e2 = rel_error(&exact.map(|v| s * v), &app_field.map(|v| s * v), norm).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1);
        }
    }

    #[test]
    fn slope_of_exact_power_law(order in 0.5f64..4.0, c in 1e-6f64..1e3) {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.02, 0.01].iter().map(|&h: &f64| (h, c * h.powf(order))).collect();
        prop_assert!((loglog_slope(&pts, 3).unwrap() - order).abs() < 1e-10);
    }
}
