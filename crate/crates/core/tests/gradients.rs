use proptest::prelude::*;

use vsg_core::composite::{radiance_batch_backward, MarchConfig};
use vsg_core::grad::GradientTape;
use vsg_core::math::{Rgb, Vec3};
use vsg_core::objective::{LossWeights, Objective, ObjectiveOptions};
use vsg_core::scene::{grad_check_objective, Preset};
use vsg_core::shading::{soft_clip_grad, ShadingOptions};
use vsg_core::volume::{Aabb, Interp, Ray, SphericalGaussian, VsgVolume, CHANNELS};

fn random_volume(seed: &[f64], dims: [usize; 3]) -> VsgVolume {
    let mut vol = VsgVolume::empty(dims, Aabb::new(Vec3::zeros(), Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64))).unwrap();
    for i in 0..vol.len() {
        let s = |k: usize| seed[(i * 7 + k) % seed.len()];
        let axis = Vec3::new(s(1) - 0.5, s(2) - 0.5, s(3) - 0.4);
        vol.set(
            i,
            0.05 + 0.9 * s(0),
            &SphericalGaussian::new(Rgb::new(s(4), s(5), s(6)) * 2.0, axis, 0.3 + s(2)),
        );
    }
    vol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn untouched_voxels_get_zero_gradient(
        seed in prop::collection::vec(0.0..1.0f64, 16..64),
        rays in prop::collection::vec((2.6..3.4f64, 2.6..3.4f64, prop::bool::ANY), 1..12),
        g in prop::array::uniform3(-1.0..1.0f64),
    ) {
        // rays run along x (either way) inside the y, z band [2.6, 3.4]; trilinear
        // stencils there only reach rows 2 and 3
        let vol = random_volume(&seed, [8, 8, 8]);
        let rays: Vec<Ray> = rays
            .iter()
            .map(|&(y, z, fwd)| {
                let s = if fwd { 1.0 } else { -1.0 };
                Ray::new(Vec3::new(4.0 - 6.0 * s, y, z), Vec3::new(s, 0.0, 0.0))
            })
            .collect();
        let grads = vec![Rgb::from(g); rays.len()];
        let mut out = vec![[0.0; CHANNELS]; vol.len()];
        radiance_batch_backward(&rays, &grads, &vol, &MarchConfig::uniform(40, Interp::Trilinear), &mut out);
        let mut touched = 0;
        for (i, gr) in out.iter().enumerate() {
            let [_, y, z] = vol.coords(i);
            if (2..=3).contains(&y) && (2..=3).contains(&z) {
                touched += gr.iter().any(|v| *v != 0.0) as usize;
            } else {
                prop_assert!(gr.iter().all(|v| *v == 0.0), "voxel {i} at y={y} z={z}: {gr:?}");
            }
        }
        prop_assert!(touched > 0);
    }

    #[test]
    fn opaque_sample_shadows_everything_behind_it(
        seed in prop::collection::vec(0.0..1.0f64, 16..64),
        wall in 1usize..7,
        y in 0usize..4,
        z in 0usize..4,
    ) {
        let mut vol = random_volume(&seed, [8, 4, 4]);
        let w = vol.index(wall, y, z);
        vol.set_alpha(w, 1.0);
        let ray = Ray::new(Vec3::new(-1.0, y as f64 + 0.5, z as f64 + 0.5), Vec3::x());
        let mut out = vec![[0.0; CHANNELS]; vol.len()];
        radiance_batch_backward(&[ray], &[Rgb::repeat(1.0)], &vol, &MarchConfig::voxel_crossings(), &mut out);
        for x in 0..8 {
            let g = out[vol.index(x, y, z)];
            if x > wall {
                prop_assert!(g.iter().all(|v| *v == 0.0), "x={x}: {g:?}");
            } else {
                prop_assert!(g.iter().any(|v| *v != 0.0), "x={x} should be live");
            }
        }
    }

    #[test]
    fn soft_clip_slope_is_in_unit_interval(t in -1e3..700.0f64, tau in 0.5..0.99f64) {
        // past t = 745 the exponential underflows to zero
        let x = tau + t * (1.0 - tau);
        let g = soft_clip_grad(x, tau);
        prop_assert!(g > 0.0 && g <= 1.0, "{g}");
    }
}

fn options() -> ObjectiveOptions {
    let march = MarchConfig::uniform(16, Interp::Trilinear);
    ObjectiveOptions {
        shading: ShadingOptions {
            k: 12,
            march,
            ..ShadingOptions::default()
        },
        march,
        pixel_budget: usize::MAX,
        fit_surface: true,
    }
}

fn tape_for(base: &Objective, weights: LossWeights) -> GradientTape {
    let mut obj = Objective::new(
        base.volume().clone(),
        base.surface().cloned(),
        base.observations().to_vec(),
        weights,
        options(),
    )
    .unwrap();
    obj.forward(None).unwrap();
    obj.backward().unwrap()
}

#[test]
fn total_gradient_is_the_weighted_sum_of_term_gradients() {
    let base = grad_check_objective(Preset::BoxLamp, [6, 6, 6], 3).unwrap();
    let off = LossWeights {
        lambda_a: 0.0,
        lambda_n: 0.0,
        lambda_d: 0.0,
        lambda_l: 0.0,
        lambda_visible: 0.0,
        lambda_reg: 0.0,
        lambda_rerender: 0.0,
        ..LossWeights::default()
    };
    let setters: [fn(&mut LossWeights, f64); 7] = [
        |w, v| w.lambda_a = v,
        |w, v| w.lambda_n = v,
        |w, v| w.lambda_d = v,
        |w, v| w.lambda_l = v,
        |w, v| w.lambda_visible = v,
        |w, v| w.lambda_reg = v,
        |w, v| w.lambda_rerender = v,
    ];
    let coeffs = [0.7, 1.3, 0.4, 2.0, 0.9, 0.05, 1.7];
    let mut combined = off;
    let first = tape_for(&base, off);
    let mut sum = GradientTape::zeros(first.volume.len(), first.albedo.len());
    for (set, a) in setters.iter().zip(coeffs) {
        let mut w = off;
        set(&mut w, 1.0);
        let t = tape_for(&base, w);
        assert!(!t.is_zero());
        sum.add_scaled(&t, a);
        set(&mut combined, a);
    }
    let mut diff = tape_for(&base, combined);
    let scale = diff.max_abs();
    diff.add_scaled(&sum, -1.0);
    assert!(diff.max_abs() <= 1e-12 * scale, "{} of {scale}", diff.max_abs());
}
