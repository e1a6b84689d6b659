use vsg_core::composite::MarchConfig;
use vsg_core::io::write_vsg1;
use vsg_core::math::Rgb;
use vsg_core::objective::{LossWeights, Observation};
use vsg_core::optim::{fit_volume, FitConfig, FitResult};
use vsg_core::scene::{box_lamp, generate_observations};
use vsg_core::shading::ShadingOptions;
use vsg_core::volume::{Interp, SphericalGaussian, VsgVolume};

fn problem() -> (VsgVolume, Vec<Observation>) {
    let ps = box_lamp(5.0);
    let obs = generate_observations(&ps.scene, &ps.poses[..2], (16, 8), true).unwrap();
    let mut init = VsgVolume::empty([6, 6, 6], ps.scene.bounds).unwrap();
    let sg = SphericalGaussian::isotropic(Rgb::repeat(0.5));
    for i in 0..init.len() {
        init.set(i, 0.1, &sg);
    }
    (init, obs)
}

fn run(seed: u64, iterations: usize) -> FitResult {
    let (init, obs) = problem();
    let march = MarchConfig::uniform(12, Interp::Trilinear);
    let config = FitConfig {
        iterations,
        eval_every: 5,
        seed,
        pixel_budget: 64,
        march,
        shading: ShadingOptions {
            k: 8,
            march,
            ..ShadingOptions::default()
        },
        ..FitConfig::default()
    };
    fit_volume(&init, &obs, &LossWeights::default(), &config).unwrap()
}

fn bytes(fit: &FitResult) -> Vec<u8> {
    let mut out = Vec::new();
    write_vsg1(&mut out, &fit.volume).unwrap();
    out
}

#[test]
fn median_best_loss_drops_below_the_start() {
    let mut ratios: Vec<f64> = (0..5)
        .map(|seed| {
            let fit = run(seed, 30);
            fit.best.terms.total / fit.history[0].terms.total
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[2] < 1.0, "{ratios:?}");
}

#[test]
fn history_is_monotone_in_best_so_far() {
    let fit = run(1, 20);
    assert_eq!(fit.history[0].iteration, 0);
    let min = fit.history.iter().map(|h| h.terms.total).fold(f64::INFINITY, f64::min);
    assert_eq!(fit.best.terms.total, min);
}

#[test]
fn fits_are_reproducible_across_thread_counts() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| bytes(&run(7, 10)));
    let b = one.install(|| bytes(&run(7, 10)));
    let c = three.install(|| bytes(&run(7, 10)));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, one.install(|| bytes(&run(8, 10))));
}
