use proptest::prelude::*;

use vsg_core::composite::{composite_depth, composite_radiance, MarchConfig};
use vsg_core::math::{Rgb, Vec3};
use vsg_core::scene::composite_rgba;
use vsg_core::volume::{sg_eval, Aabb, Interp, Ray, SphericalGaussian, VsgVolume};

fn unit(v: [f64; 3]) -> Option<Vec3> {
    let v = Vec3::from(v);
    (v.norm() > 0.2).then(|| v.normalize())
}

fn volume_from(dims: [usize; 3], bounds: Aabb, vals: &[(f64, [f64; 3], [f64; 3], f64)]) -> VsgVolume {
    let mut vol = VsgVolume::empty(dims, bounds).unwrap();
    for i in 0..vol.len() {
        let (a, c, mu, s) = vals[i % vals.len()];
        let axis = unit(mu).unwrap_or_else(Vec3::zeros);
        vol.set(i, a, &SphericalGaussian::new(Rgb::from(c), axis, s));
    }
    vol
}

fn voxel() -> impl Strategy<Value = (f64, [f64; 3], [f64; 3], f64)> {
    (
        0.0..1.0f64,
        prop::array::uniform3(0.0..3.0f64),
        prop::array::uniform3(-1.0..1.0f64),
        0.05..4.0f64,
    )
}

fn interp() -> impl Strategy<Value = Interp> {
    prop_oneof![Just(Interp::Nearest), Just(Interp::Trilinear)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radiance_is_nonnegative(
        vals in prop::collection::vec(voxel(), 1..40),
        origin in prop::array::uniform3(-2.0..2.0f64),
        dir in prop::array::uniform3(-1.0..1.0f64),
        n in 1usize..40,
        mode in interp(),
    ) {
        let Some(d) = unit(dir) else { return Ok(()) };
        let vol = volume_from([4, 3, 5], Aabb::centered(Vec3::zeros(), 2.0), &vals);
        let ray = Ray::new(Vec3::from(origin), d);
        for cfg in [MarchConfig::uniform(n, mode), MarchConfig::voxel_crossings()] {
            let r = composite_radiance(&ray, &vol, &cfg);
            prop_assert!(r.iter().all(|c| *c >= 0.0 && c.is_finite()), "{r:?}");
        }
    }

    #[test]
    fn transparent_prefix_changes_nothing(
        vals in prop::collection::vec(voxel(), 1..40),
        yz in prop::array::uniform2(0.05..0.95f64),
        slope in prop::array::uniform2(-0.1..0.1f64),
        start in 0.1..0.9f64,
    ) {
        // layers x = 0 and x = 1 are empty; the ray either starts before the
        // grid or inside layer 1
        let mut vol = volume_from([6, 4, 4], Aabb::new(Vec3::zeros(), Vec3::new(6.0, 4.0, 4.0)), &vals);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..2 {
                    let i = vol.index(x, y, z);
                    vol.set_alpha(i, 0.0);
                }
            }
        }
        let d = Vec3::new(1.0, slope[0], slope[1]).normalize();
        let inner = Vec3::new(1.0 + start, 1.5 + yz[0], 1.5 + yz[1]);
        let outer = inner - d * (inner.x + 2.0) / d.x;
        let cfg = MarchConfig::voxel_crossings();
        let a = composite_radiance(&Ray::new(outer, d), &vol, &cfg);
        let b = composite_radiance(&Ray::new(inner, d), &vol, &cfg);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn opaque_first_sample_hides_the_rest(
        vals in prop::collection::vec(voxel(), 1..40),
        target in prop::array::uniform3(-0.8..0.8f64),
        dir in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let Some(d) = unit(dir) else { return Ok(()) };
        let mut vol = volume_from([5, 5, 5], Aabb::centered(Vec3::zeros(), 2.0), &vals);
        for i in 0..vol.len() {
            vol.set_alpha(i, 1.0);
        }
        let ray = Ray::new(Vec3::from(target) - d * 4.0, d);
        let (t0, t1) = vol.bounds().intersect(&ray).unwrap();
        let cfg = MarchConfig::voxel_crossings();
        // the first crossed voxel holds the midpoint of its segment; find it
        // by walking forward until the voxel index changes
        let first = vol.voxel_at(&ray.at(t0 + 1e-9)).unwrap();
        let mut t = t0 + 1e-9;
        while t < t1 && vol.voxel_at(&ray.at(t)) == Some(first) {
            t += 1e-4;
        }
        prop_assume!(t - t0 > 1e-3);
        let want = sg_eval(&-d, &vol.sg(first));
        let got = composite_radiance(&ray, &vol, &cfg);
        prop_assert!((got - want).abs().max() <= 1e-12 * want.abs().max().max(1.0), "{got:?} vs {want:?}");
    }

    #[test]
    fn sharp_lobes_reduce_to_rgba(
        vals in prop::collection::vec(voxel(), 1..40),
        origin in prop::array::uniform3(-3.0..3.0f64),
        target in prop::array::uniform3(-0.9..0.9f64),
        n in 4usize..64,
        mode in interp(),
    ) {
        let vals: Vec<_> = vals.into_iter().map(|(a, c, mu, _)| (a, c, mu, 100.0)).collect();
        let vol = volume_from([4, 4, 4], Aabb::centered(Vec3::zeros(), 2.0), &vals);
        let d = Vec3::from(target) - Vec3::from(origin);
        prop_assume!(d.norm() > 1e-3);
        let ray = Ray::new(Vec3::from(origin), d);
        let cfg = MarchConfig::uniform(n, mode);
        let got = composite_radiance(&ray, &vol, &cfg);
        let want = composite_rgba(&ray, &vol, &cfg);
        prop_assert!((got - want).abs().max() <= 2e-4 * want.abs().max().max(1e-12), "{got:?} vs {want:?}");
    }

    #[test]
    fn depth_lies_within_the_traversed_span(
        vals in prop::collection::vec(voxel(), 1..40),
        origin in prop::array::uniform3(-3.0..3.0f64),
        target in prop::array::uniform3(-0.9..0.9f64),
        mode in interp(),
    ) {
        let vol = volume_from([4, 4, 4], Aabb::centered(Vec3::zeros(), 2.0), &vals);
        let d = Vec3::from(target) - Vec3::from(origin);
        prop_assume!(d.norm() > 1e-3);
        let ray = Ray::new(Vec3::from(origin), d);
        let (t0, t1) = vol.bounds().intersect(&ray).unwrap();
        let z = composite_depth(&ray, &vol, &MarchConfig::uniform(32, mode));
        prop_assert!(z >= t0.max(0.0) - 1e-12 && z <= t1 + 1e-12, "{z} not in [{t0}, {t1}]");
    }
}

#[test]
fn opaque_wall_depth_is_its_front_face() {
    let bounds = Aabb::new(Vec3::zeros(), Vec3::new(8.0, 2.0, 2.0));
    let mut vol = VsgVolume::empty([8, 2, 2], bounds).unwrap();
    for z in 0..2 {
        for y in 0..2 {
            let i = vol.index(5, y, z);
            vol.set(i, 1.0, &SphericalGaussian::isotropic(Rgb::repeat(1.0)));
        }
    }
    let ray = Ray::new(Vec3::new(-1.0, 1.0, 1.0), Vec3::x());
    let z = composite_depth(&ray, &vol, &MarchConfig::voxel_crossings());
    // first sample inside voxel 5 sits at its center
    assert!((z - 6.5).abs() < 1e-12, "{z}");
}
