use std::path::Path;
use std::process::{Command, Output};

use vsg_core::io::{load_pfm, load_png, save_vsg1, PfmImage};
use vsg_core::math::{Rgb, Vec3};
use vsg_core::volume::{Aabb, VsgVolume};

fn vsg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsg"))
        .args(args)
        .current_dir(dir)
        .env("VSG_THREADS", "1")
        .output()
        .expect("run vsg")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn scalar(path: &Path) -> Vec<f64> {
    match load_pfm(path).unwrap() {
        PfmImage::Gray(img) => img.pixels().to_vec(),
        PfmImage::Rgb(_) => panic!("expected a single channel map"),
    }
}

#[test]
fn slab_depth_matches_analytic_within_a_voxel() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vsg(&["gen-scene", "--preset", "slab", "--out", "s", "--dims", "32", "--fit-dims", "8"], d));
    ok(&vsg(
        &["render-view", "--volume", "s/truth.vsg", "--camera", "s/camera.json", "--out", "v.png", "--depth-out", "d.pfm"],
        d,
    ));
    let got = scalar(&d.join("d.pfm"));
    let want = scalar(&d.join("s/view_depth.pfm"));
    assert_eq!(got.len(), want.len());
    let edge = 2.0 / 32.0;
    let close = got.iter().zip(&want).filter(|(g, w)| (*g - *w).abs() <= edge).count();
    assert!(close * 100 >= got.len() * 99, "{close} of {}", got.len());
}

#[test]
fn empty_volume_panorama_is_black() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let vol = VsgVolume::empty([4, 4, 4], Aabb::centered(Vec3::zeros(), 2.0)).unwrap();
    save_vsg1(&d.join("empty.vsg"), &vol).unwrap();
    ok(&vsg(
        &["render-pano", "--volume", "empty.vsg", "--pos", "0,0,0", "--width", "16", "--height", "8", "--hdr", "--out", "p.pfm"],
        d,
    ));
    let PfmImage::Rgb(img) = load_pfm(&d.join("p.pfm")).unwrap() else {
        panic!("expected color");
    };
    assert_eq!((img.width(), img.height()), (16, 8));
    assert!(img.pixels().iter().all(|p| *p == Rgb::zeros()));
}

#[test]
fn grad_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsg(&["grad-check", "--probes", "40", "--dims", "8"], tmp.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn failed_grad_check_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsg(&["grad-check", "--probes", "20", "--dims", "8", "--tol", "1e-14"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("junk.vsg"), b"VSG0 not a volume").unwrap();
    let out = vsg(&["render-pano", "--volume", "junk.vsg", "--pos", "0,0,0", "--out", "p.pfm"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = vsg(&["render-pano", "--volume", "junk.vsg", "--pos", "0,0"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = vsg(&["no-such-command"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&vsg(&["--help"], tmp.path()));
    ok(&vsg(&["fit", "--help"], tmp.path()));
}

#[test]
fn fit_is_deterministic_and_writes_history() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vsg(&["gen-scene", "--preset", "box-lamp", "--out", "s", "--dims", "16", "--fit-dims", "6"], d));
    for name in ["a", "b"] {
        let vol = format!("{name}.vsg");
        ok(&vsg(&["fit", "--config", "s/scene.json", "--out", &vol, "--iterations", "4", "--seed", "3"], d));
    }
    assert_eq!(std::fs::read(d.join("a.vsg")).unwrap(), std::fs::read(d.join("b.vsg")).unwrap());
    let csv = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert!(csv.starts_with("iteration,"));
    assert!(csv.lines().count() >= 3);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.json")).unwrap()).unwrap();
    assert!(meta.get("weights").is_some());
}

#[test]
fn rerender_and_insert_write_images() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vsg(&["gen-scene", "--preset", "box-lamp", "--out", "s", "--dims", "16", "--fit-dims", "6"], d));
    ok(&vsg(
        &["rerender", "--volume", "s/truth.vsg", "--surf", "s/surface", "--K", "10", "--image", "s/view.png", "--out", "r.png"],
        d,
    ));
    assert!(d.join("r.png").exists());
    ok(&vsg(
        &[
            "insert", "--volume", "s/truth.vsg", "--image", "s/view.png", "--surf", "s/surface", "--sphere", "0.1,0.6,-0.1,0.1",
            "--material", "diffuse:0.7", "--K", "10", "--out", "i.png",
        ],
        d,
    ));
    let a = load_png(&d.join("s/view.png")).unwrap();
    let b = load_png(&d.join("i.png")).unwrap();
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    assert_ne!(a.pixels(), b.pixels());
}
