use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::process::{Command, Output};

fn nlinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlinv")).args(args).env_remove("RUST_BACKTRACE").output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn check_manifest(dir: &Path) -> Value {
    let m = json(&dir.join("manifest.json"));
    let files = m["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = std::fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), digest);
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    for entry in std::fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(name == "manifest.json" || files.iter().any(|f| f["path"] == name), "{name} missing from manifest");
    }
    m
}

#[test]
fn verify_on_defaults_passes_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let r = nlinv(&["--kind", "verify", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 13, "{stdout}");
    let csv = std::fs::read_to_string(out.join("verify.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14);
    let m = check_manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["kind"], "verify");
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unknown_kind_exits_with_usage() {
    let r = nlinv(&["--kind", "bogus"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "kind = \"bogus\"\n");
    let r = nlinv(&["--config", &cfg]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("unknown experiment kind 'bogus'") && err.contains("Usage"), "{err}");
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[system]\nspecies = 0\n");
    let r = nlinv(&["--config", &cfg, "--kind", "forward", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("system.species"));

    let cfg = write_config(tmp.path(), "d.toml", "[inverse]\nlambda = \"sharp\"\n");
    let r = nlinv(&["--config", &cfg, "--kind", "invert-potential", "--out", tmp.path().join("p").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("inverse.lambda"));
}

#[test]
fn invert_potential_noiseless_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let r = nlinv(&["--kind", "invert-potential", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&out.join("summary.json"));
    assert!(s["rel_l2_error"].as_f64().unwrap() <= 0.05, "{s}");
    check_manifest(&out);
}

#[test]
fn identical_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "kind = \"invert-potential\"\nseed = 5\n[layout]\nn_interior = 12\nn_time = 8\n[inverse]\nnoise = 1e-2\n",
    );
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let r = nlinv(&["--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let m = check_manifest(&out);
        assert_eq!(m["seed"], 5);
        let csv: Vec<(String, String)> = m["files"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|f| f["path"].as_str().unwrap().ends_with(".csv"))
            .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
            .collect();
        assert!(csv.len() >= 3);
        digests.push(csv);
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn gray_scott_interaction_from_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "kind = \"invert-interaction\"\n[layout]\nn_interior = 12\nn_time = 8\n\
         [system.preset]\nid = \"gray_scott\"\ngamma = 0.04\nc = 0.06\nm = 1.0\n",
    );
    let out = tmp.path().join("i");
    let r = nlinv(&["--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&out.join("summary.json"));
    assert!(s["max_abs_error"].as_f64().unwrap() < 1e-6, "{s}");
    let rec = std::fs::read_to_string(out.join("recovered.csv")).unwrap();
    assert!(rec.lines().any(|l| l.starts_with("F1:(1,2)")), "{rec}");
}

#[test]
fn order_discrimination_ranks_the_true_pair_first() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "kind = \"invert-order\"\n[layout]\nn_interior = 16\nt_final = 4.0\nn_time = 800\n\
         [system]\nmodel = \"time\"\norders = [[[0.3, 1.0], [0.7, 1.0]]]\npotential = [[{ c = -1.0 }]]\n\
         [inverse]\ncandidates = [{ fixed = [0.5] }, { fixed = [0.3, 0.7] }]\n",
    );
    let out = tmp.path().join("o");
    let r = nlinv(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["best_candidate"], "fixed(0.3,0.7)");
    assert!(s["extra"]["misfit_ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn solver_failure_is_reported_with_its_cause() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let r = nlinv(&["--kind", "invert-order", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("caused by: system: order recovery needs a time-fractional model"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "failed");
}

#[test]
fn forward_adjoint_and_linearize_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[layout]\nn_interior = 10\nn_time = 8\n[[system.interaction]]\nspecies = 0\nindex = [2]\nvalue = 0.5\n",
    );
    for (kind, file, header) in [
        ("forward", "state.csv", "species,level,t,node,x,y,class,value"),
        ("adjoint", "adjoint.csv", "species,level,t,node,x,y,class,value"),
        ("linearize", "linearize.csv", "eps,first_order_error,second_order_error"),
    ] {
        let out = tmp.path().join(kind);
        let r = nlinv(&["--config", &cfg, "--kind", kind, "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{kind}: {}", String::from_utf8_lossy(&r.stderr));
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), header);
        check_manifest(&out);
    }
    let s = json(&tmp.path().join("linearize/summary.json"));
    assert!((s["first_order_slope"].as_f64().unwrap() - 1.0).abs() < 0.2);
}
