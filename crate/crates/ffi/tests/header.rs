use std::path::{Path, PathBuf};
use std::process::Command;

use streamkey_ffi::*;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/streamkey.h")).unwrap();
    for name in [
        "sk_last_error",
        "sk_version",
        "sk_shor_preskill_rate",
        "sk_seed_length",
        "sk_toeplitz_generate",
        "sk_toeplitz_from_diag",
        "sk_toeplitz_apply",
        "sk_toeplitz_free",
        "sk_pad_new",
        "sk_pad_finalize",
        "sk_pad_free",
        "sk_ledger_new",
        "sk_ledger_register",
        "sk_ledger_draw",
        "sk_ledger_free",
        "SK_STATUS_BUDGET_EXHAUSTED",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !have_cc() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let include = crate_dir().join("include");
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let status = Command::new("cc")
            .args(["-x", lang, std, "-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(&include)
            .arg(crate_dir().join("tests/c/roundtrip.c"))
            .status()
            .unwrap();
        assert!(status.success(), "header failed to compile as {lang}");
    }
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libstreamkey_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping link test");
        return;
    };
    if !have_cc() {
        return;
    }
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("roundtrip");
    let status = Command::new("cc")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/roundtrip.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

#[test]
fn toeplitz_apply_matches_core() {
    use streamkey::{BitString, ToeplitzMatrix};
    let diag = BitString::from_binary("1011001").unwrap();
    let core = ToeplitzMatrix::new(3, 5, diag.clone()).unwrap();
    let x = BitString::from_binary("11010").unwrap();
    let expected = core.apply(&x).unwrap().to_le_bytes();
    unsafe {
        let mut m = std::ptr::null_mut();
        assert_eq!(sk_toeplitz_from_diag(3, 5, diag.to_le_bytes().as_ptr(), &mut m), SkStatus::Ok);
        assert_eq!(sk_toeplitz_rows(m), 3);
        assert_eq!(sk_toeplitz_cols(m), 5);
        let mut out = [0u8; 1];
        assert_eq!(sk_toeplitz_apply(m, x.to_le_bytes().as_ptr(), out.as_mut_ptr(), 1), SkStatus::Ok);
        assert_eq!(out.to_vec(), expected);
        assert_eq!(sk_toeplitz_apply(m, x.to_le_bytes().as_ptr(), out.as_mut_ptr(), 0), SkStatus::BufferTooSmall);
        sk_toeplitz_free(m);
    }
}

#[test]
fn stream_pad_matches_core_pad() {
    use streamkey::privacy_amp::make_pad;
    use streamkey::{BitString, HashSeedSource, ToeplitzMatrix};
    let mut src = HashSeedSource::from_seed(9, "ffi-test");
    let m = ToeplitzMatrix::generate(6, 20, &mut src).unwrap();
    let d = src.take(6).unwrap();
    let a = src.take(20).unwrap();
    let expected = make_pad(&m, &d).unwrap().pad().xor(&a).unwrap();
    let diag = m.diag().to_le_bytes();
    unsafe {
        let mut h = std::ptr::null_mut();
        assert_eq!(sk_toeplitz_from_diag(6, 20, diag.as_ptr(), &mut h), SkStatus::Ok);
        let mut p = std::ptr::null_mut();
        assert_eq!(sk_pad_new(h, d.to_le_bytes().as_ptr(), &mut p), SkStatus::Ok);
        let head = a.slice(0, 8);
        let tail = a.slice(8, 12);
        let mut k1 = [0u8; 1];
        let mut k2 = [0u8; 2];
        assert_eq!(sk_pad_finalize(p, head.to_le_bytes().as_ptr(), 8, k1.as_mut_ptr(), 1), SkStatus::Ok);
        assert_eq!(sk_pad_finalize(p, tail.to_le_bytes().as_ptr(), 12, k2.as_mut_ptr(), 2), SkStatus::Ok);
        let got = BitString::concat([
            &BitString::from_le_bytes(8, &k1).unwrap(),
            &BitString::from_le_bytes(12, &k2).unwrap(),
        ]);
        assert_eq!(got, expected);
        sk_pad_free(p);
        sk_toeplitz_free(h);
    }
}
