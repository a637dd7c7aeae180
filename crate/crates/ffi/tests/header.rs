use std::path::PathBuf;
use std::process::Command;

// Skipped when no C compiler is on PATH.
#[test]
fn generated_header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/bipartite.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    assert!(text.contains("BP_STATUS_OK"));
    assert!(text.contains("bp_estimate_fit"));

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint probe(void) {{\n  BpDataset *ds = 0;\n  BpStatus s = bp_dataset_simulate(0, &ds);\n  bp_dataset_free(ds);\n  return s == BP_STATUS_OK ? 0 : 1;\n}}\n",
            header.display()
        ),
    )
    .unwrap();
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
