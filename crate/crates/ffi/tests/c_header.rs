//! Compile and run a small C program against the generated header and the
//! shared library. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "pdl.h"

int main(void) {
    double c[4] = {2.0, 1.0, 1.0, 2.0};
    size_t subset[1] = {0};
    double out[4];
    if (pdl_nystrom_reconstruct(c, 2, subset, 1, out) != PDL_STATUS_OK) return 1;
    if (out[3] < 0.49 || out[3] > 0.51) return 2;
    PdlModel *m = NULL;
    if (pdl_model_open("/nonexistent.bin", 1, &m) != PDL_STATUS_IO) return 3;
    if (m != NULL || pdl_last_error_message() == NULL) return 4;
    pdl_model_free(NULL);
    printf("ok\n");
    return 0;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .map(|c| c.to_string())
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(|p| p.parent())
        .unwrap()
        .to_path_buf();
    if !lib_dir.join("libpdl_ffi.so").exists() {
        eprintln!(
            "shared library not found in {}; skipping",
            lib_dir.display()
        );
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = tmp.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lpdl_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
