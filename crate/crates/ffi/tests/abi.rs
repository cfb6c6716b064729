use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use mdpsim_ffi::*;

const STATES: [f64; 2] = [1.0, 2.0];
const GENERATOR: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const DRIFT: [f64; 2] = [1.0, 0.0];

fn last_error() -> String {
    unsafe { CStr::from_ptr(mdpsim_last_error()) }.to_string_lossy().into_owned()
}

fn two_state() -> *mut MdpsimChain {
    let mut chain = ptr::null_mut();
    let status = unsafe { mdpsim_chain_new(STATES.as_ptr(), GENERATOR.as_ptr(), DRIFT.as_ptr(), 2, &mut chain) };
    assert_eq!(status, MdpsimStatus::Ok);
    assert!(!chain.is_null());
    chain
}

#[test]
fn homogenized_constants_through_the_abi() {
    let chain = two_state();
    let (mut b, mut a) = (0.0, 0.0);
    unsafe {
        assert_eq!(mdpsim_chain_homogenize(chain, &mut b, &mut a), MdpsimStatus::Ok);
        mdpsim_chain_free(chain);
    }
    assert!((b - 0.8).abs() < 1e-12);
    assert!((a - 1.6).abs() < 1e-12);
}

#[test]
fn invalid_generator_reports_the_row() {
    let bad = [-1.0, 1.0, 1.0, -2.0];
    let mut chain = ptr::null_mut();
    let status = unsafe { mdpsim_chain_new(STATES.as_ptr(), bad.as_ptr(), DRIFT.as_ptr(), 2, &mut chain) };
    assert_eq!(status, MdpsimStatus::InvalidArgument);
    assert!(chain.is_null());
    assert!(last_error().contains("row 1"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut chain = ptr::null_mut();
    let status = unsafe { mdpsim_chain_new(ptr::null(), GENERATOR.as_ptr(), DRIFT.as_ptr(), 2, &mut chain) };
    assert_eq!(status, MdpsimStatus::NullPointer);
    let status = unsafe { mdpsim_bound_continuous(1.0, 1.0, ptr::null_mut()) };
    assert_eq!(status, MdpsimStatus::NullPointer);
    unsafe { mdpsim_chain_free(ptr::null_mut()) };
}

#[test]
fn stationary_and_buffer_size() {
    let chain = two_state();
    let mut pi = [0.0; 2];
    let mut short = [0.0; 1];
    unsafe {
        assert_eq!(mdpsim_chain_stationary(chain, pi.as_mut_ptr(), 2), MdpsimStatus::Ok);
        assert_eq!(mdpsim_chain_stationary(chain, short.as_mut_ptr(), 1), MdpsimStatus::BufferTooSmall);
        let mut m = 0usize;
        assert_eq!(mdpsim_chain_len(chain, &mut m), MdpsimStatus::Ok);
        assert_eq!(m, 2);
        mdpsim_chain_free(chain);
    }
    assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
}

#[test]
fn poisson_for_raw_observable() {
    let chain = two_state();
    let raw = [1.0, -1.0];
    let (mut h, mut qv, mut k) = ([0.0; 2], [0.0; 2], 0.0);
    let status = unsafe {
        mdpsim_chain_poisson(chain, MdpsimObservable::Raw, raw.as_ptr(), h.as_mut_ptr(), qv.as_mut_ptr(), 2, &mut k)
    };
    assert_eq!(status, MdpsimStatus::Ok);
    assert!((h[0] + 0.5).abs() < 1e-12 && (h[1] - 0.5).abs() < 1e-12);
    assert!(qv.iter().all(|m| (m - 1.0).abs() < 1e-12));
    assert!((k - 1.0).abs() < 1e-12);
    let status = unsafe {
        mdpsim_chain_poisson(chain, MdpsimObservable::Drift, ptr::null(), h.as_mut_ptr(), qv.as_mut_ptr(), 2, ptr::null_mut())
    };
    assert_eq!(status, MdpsimStatus::Ok);
    assert!((h[1] - h[0]).abs() > 0.0);
    unsafe { mdpsim_chain_free(chain) };
}

#[test]
fn bounds_and_rates() {
    let (mut c, mut j, mut t, mut r) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(mdpsim_bound_continuous(3.0, 2.0, &mut c), MdpsimStatus::Ok);
        assert_eq!(mdpsim_bound_jump(3.0, 2.0, 0.0, &mut j), MdpsimStatus::Ok);
        assert_eq!(mdpsim_tube_exit_rate(0.5, 1.0, 0.8, 1.6, &mut t), MdpsimStatus::Ok);
        let times = [0.0, 1.0];
        let values = [0.0, 1.2];
        assert_eq!(mdpsim_rate_j(times.as_ptr(), values.as_ptr(), 2, 0.0, 0.8, 1.6, &mut r), MdpsimStatus::Ok);
        assert_eq!(mdpsim_tube_exit_rate(-1.0, 1.0, 0.8, 1.6, &mut t), MdpsimStatus::InvalidArgument);
    }
    assert_eq!(c, j);
    assert!((c - 2.0 * (-2.25f64).exp()).abs() < 1e-15);
    assert!((t - 0.25 / 3.2).abs() < 1e-15);
    assert!((r - 0.05).abs() < 1e-15);
}

#[test]
fn periodic_homogenize() {
    let sigma = [1.0, 2.0];
    let drift = [1.0, 0.0];
    let (mut b, mut a, mut err) = (0.0, 0.0, 0.0);
    let status = unsafe { mdpsim_periodic_homogenize(sigma.as_ptr(), drift.as_ptr(), 2, &mut b, &mut a, &mut err) };
    assert_eq!(status, MdpsimStatus::Ok);
    assert!((a - 1.6).abs() < 1e-12 && (b - 0.8).abs() < 1e-12);
}

#[test]
fn environment_path_is_deterministic() {
    let chain = two_state();
    let (mut p, mut q) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mdpsim_env_path_new(chain, 11, &mut p), MdpsimStatus::Ok);
        assert_eq!(mdpsim_env_path_new(chain, 11, &mut q), MdpsimStatus::Ok);
        mdpsim_chain_free(chain);
        for k in -50..50 {
            let u = k as f64 * 0.37;
            let (mut s1, mut s2, mut sig, mut b) = (0usize, 0usize, 0.0, 0.0);
            assert_eq!(mdpsim_env_path_eval(p, u, &mut s1, &mut sig, &mut b), MdpsimStatus::Ok);
            assert_eq!(mdpsim_env_path_eval(q, u, &mut s2, ptr::null_mut(), ptr::null_mut()), MdpsimStatus::Ok);
            assert_eq!(s1, s2);
            assert_eq!(sig, STATES[s1]);
            assert_eq!(b, DRIFT[s1]);
        }
        assert_eq!(mdpsim_env_path_eval(p, f64::NAN, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), MdpsimStatus::InvalidArgument);
        mdpsim_env_path_free(p);
        mdpsim_env_path_free(q);
    }
}

#[test]
fn simulate_into_caller_buffer() {
    let chain = two_state();
    let params = MdpsimSimParams { epsilon: 0.1, kappa: 0.1, x0: 0.25, horizon: 1.0, dt: 0.01, seed: 5 };
    let mut len = 0usize;
    unsafe {
        let status = mdpsim_simulate(chain, &params, MdpsimScheme::Euler, true, 3, ptr::null_mut(), &mut len);
        assert_eq!(status, MdpsimStatus::BufferTooSmall);
        assert_eq!(len, 101);
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        assert_eq!(mdpsim_simulate(chain, &params, MdpsimScheme::Euler, true, 3, a.as_mut_ptr(), &mut len), MdpsimStatus::Ok);
        assert_eq!(mdpsim_simulate(chain, &params, MdpsimScheme::Euler, true, 3, b.as_mut_ptr(), &mut len), MdpsimStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(a[0], 0.25);
        let status = mdpsim_simulate(chain, &params, MdpsimScheme::Timechange, true, 3, b.as_mut_ptr(), &mut len);
        assert_eq!(status, MdpsimStatus::InvalidArgument);
        assert_eq!(mdpsim_simulate(chain, &params, MdpsimScheme::Timechange, false, 3, b.as_mut_ptr(), &mut len), MdpsimStatus::Ok);
        mdpsim_chain_free(chain);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mdpsim.h");
    let text = std::fs::read_to_string(&header).expect("header is generated by the build script");
    for name in ["mdpsim_chain_new", "mdpsim_chain_free", "mdpsim_simulate", "MDPSIM_STATUS_OK", "MdpsimChain"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax check with the system C compiler when one is installed.
    let probe = tempfile_path("probe.c");
    std::fs::write(&probe, format!("#include \"{}\"\nint main(void) {{ return MDPSIM_STATUS_OK; }}\n", header.display())).unwrap();
    if let Ok(out) = Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg(&probe).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_client_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/abi-… → target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libmdpsim_ffi.a");
    // the test harness builds only the rlib; refresh the archive
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "--quiet", "-p", "mdpsim-ffi", "--lib"]).current_dir(manifest);
    if profile_dir.file_name().is_some_and(|n| n == "release") {
        build.arg("--release");
    }
    let built = build.status().is_ok_and(|s| s.success());
    if !built || !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let bin = tempfile_path("smoke");
    let out = Command::new("cc")
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}");
    assert!(stdout.contains("b_eff=0.80000000000000004"));
    assert!(stdout.contains("row 1"));
}

fn tempfile_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("mdpsim-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}
