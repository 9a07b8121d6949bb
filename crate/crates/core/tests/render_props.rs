use proptest::prelude::*;

use voxprior_core::render::{render_view, Camera, ViewParams};
use voxprior_core::synth::{generate_shape, Family, ShapeSpec};
use voxprior_core::VoxelGrid;

fn family(i: usize) -> Family {
    [Family::Table, Family::Chair, Family::Plane][i % 3]
}

fn doubled(grid: &VoxelGrid) -> VoxelGrid {
    VoxelGrid::from_fn(grid.resolution() * 2, |x, y, z| grid.get(x / 2, y / 2, z / 2)).unwrap()
}

fn view() -> impl Strategy<Value = ViewParams> {
    (0.0..std::f64::consts::TAU, -1.3..1.3f64, 1.0..4.0f64).prop_map(|(azimuth, elevation, distance)| ViewParams {
        azimuth,
        elevation,
        distance,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn depth_is_bounded_by_the_enclosing_sphere(f in 0usize..3, seed in 0u64..1000, v in view()) {
        let grid = generate_shape(&ShapeSpec::random(family(f), seed), 12).unwrap();
        let maps = render_view(&grid, &Camera::new(v, 16, 16, 50.0, 35.0).unwrap()).unwrap();
        let near = v.distance - 3f64.sqrt() / 2.0;
        let far = v.distance + 3f64.sqrt() / 2.0;
        for (d, &s) in maps.depth.iter().zip(&maps.silhouette) {
            if s {
                prop_assert!(*d >= near - 1e-12 && *d <= far + 1e-12);
            }
        }
    }

    #[test]
    fn normals_are_unit_axes_facing_the_camera(f in 0usize..3, seed in 0u64..1000, v in view()) {
        let grid = generate_shape(&ShapeSpec::random(family(f), seed), 10).unwrap();
        let cam = Camera::new(v, 12, 12, 50.0, 35.0).unwrap();
        let maps = render_view(&grid, &cam).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let p = maps.pixel(x, y);
                if !maps.silhouette[p] {
                    continue;
                }
                let n = maps.normal[p];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                prop_assert!((len - 1.0).abs() < 1e-12);
                let ray = cam.pixel_ray_camera(x as f64 + 0.5, y as f64 + 0.5);
                prop_assert!(n[0] * ray[0] + n[1] * ray[1] + n[2] * ray[2] < 0.0);
            }
        }
    }

    #[test]
    fn doubling_resolution_preserves_the_render(f in 0usize..3, seed in 0u64..1000, v in view()) {
        let grid = generate_shape(&ShapeSpec::random(family(f), seed), 8).unwrap();
        let cam = Camera::new(v, 16, 16, 50.0, 35.0).unwrap();
        let a = render_view(&grid, &cam).unwrap();
        let b = render_view(&doubled(&grid), &cam).unwrap();
        prop_assert_eq!(&a.silhouette, &b.silhouette);
        for i in 0..a.depth.len() {
            prop_assert!((a.depth[i] - b.depth[i]).abs() < 1e-9);
            prop_assert_eq!(a.normal[i], b.normal[i]);
        }
    }
}
