use vsg_core::composite::MarchConfig;
use vsg_core::loss::loss_light_photometric;
use vsg_core::math::Vec3;
use vsg_core::quadrature::fibonacci_hemisphere;
use vsg_core::scene::{
    box_lamp, generate_observations, preset, reference_radiance_scene, voxelize, Preset, Role, Shape,
};
use vsg_core::volume::{Interp, Ray};

#[test]
fn presets_are_valid() {
    for p in [Preset::BoxLamp, Preset::TwoEmitters, Preset::Slab] {
        let ps = preset(p);
        ps.scene.validate().unwrap();
        for prim in &ps.scene.primitives {
            if let Shape::Box { min, max } = prim.shape {
                assert!(ps.scene.bounds.contains(&min) && ps.scene.bounds.contains(&max));
            }
            if let Role::Emitter { radiance, .. } = prim.role {
                assert!(radiance.iter().all(|c| *c >= 0.0));
            }
        }
        assert!(!ps.poses.is_empty());
    }
}

#[test]
fn emitter_radiance_does_not_depend_on_sample_counts() {
    let ps = box_lamp(5.0);
    let mut coarse = ps.scene.clone();
    coarse.emitter_samples = 1;
    let mut fine = ps.scene.clone();
    fine.emitter_samples = 17;
    let p = Vec3::new(0.1, 0.7, -0.1);
    for d in fibonacci_hemisphere(&-Vec3::y(), 60).directions {
        let ray = Ray::new(p, d);
        match ps.scene.trace(&ray) {
            Some(hit) if hit.primitive == 0 => {
                assert_eq!(reference_radiance_scene(&coarse, &ray), reference_radiance_scene(&fine, &ray));
            }
            _ => {}
        }
    }
}

#[test]
fn voxelized_scene_approaches_its_observations_as_the_grid_refines() {
    let ps = box_lamp(5.0);
    let obs = generate_observations(&ps.scene, &ps.poses[..3], (32, 16), true).unwrap();
    let march = MarchConfig::uniform(128, Interp::Trilinear);
    let floors: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| loss_light_photometric(&voxelize(&ps.scene, [n; 3]).unwrap(), &obs, &march))
        .collect();
    assert!(floors.windows(2).all(|w| w[1] < w[0]), "{floors:?}");
}
