//! Compiles `smoke.c` against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_parses_as_c_and_cpp() {
    let header = crate_dir().join("include/phlab.h");
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let st = Command::new(cc())
            .args(["-x", lang, std, "-Wall", "-Werror", "-fsyntax-only"])
            .arg(&header)
            .status()
            .expect("C compiler available");
        assert!(st.success(), "{lang}");
    }
}

#[test]
fn c_program_links_and_runs() {
    // target/<profile>/deps/<this test>
    let target: PathBuf = std::env::current_exe().unwrap().ancestors().nth(3).unwrap().to_path_buf();
    let st =
        Command::new(env!("CARGO")).args(["build", "--quiet", "-p", "phlab-ffi", "--target-dir"]).arg(&target).status().unwrap();
    assert!(st.success());
    let lib = target.join("debug/libphlab_ffi.a");
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("phlab_smoke");
    let st = Command::new(cc())
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
