use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pplus_core::conditioning::Vocabulary;
use pplus_core::diffusion::{checkpoint, NoiseSchedule, ToyModel, UNetConfig};

fn pplus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pplus"))
        .args(args)
        .env_remove("PPLUS_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn checkpoint_in(dir: &Path) -> String {
    let m = ToyModel::new(UNetConfig::micro5(), Vocabulary::toy(), NoiseSchedule::default(), 5).unwrap();
    let p = dir.join("model.ckpt");
    checkpoint::save(&m, &p).unwrap();
    p.to_string_lossy().into_owned()
}

fn out(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_documents_exit_codes() {
    let o = pplus(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Exit codes"));
    for sub in ["corpus", "pretrain", "invert", "generate", "mix", "attn-ratio", "subset-sweep", "density", "eval", "selftest"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn failures_map_to_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let o = pplus(&["generate", "--nope"]);
    assert_eq!(code(&o), 2);
    let o = pplus(&["generate", "--checkpoint", "/definitely/missing", "--prompt", "red square"]);
    assert_eq!(code(&o), 4);
    let line = String::from_utf8(o.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(v["exit_code"], 4);
    assert_eq!(v["error"], "missing-input");
    let o = pplus(&["generate", "--checkpoint", &ck, "--prompt", "red qwerty", "--out", &out(dir.path(), "a")]);
    assert_eq!(code(&o), 5);
    let o = pplus(&["generate", "--checkpoint", &ck, "--out", &out(dir.path(), "b")]);
    assert_eq!(code(&o), 5);
    let concept = dir.path().join("bad.txt");
    std::fs::write(&concept, "not a concept\n").unwrap();
    let c = concept.to_string_lossy();
    let o = pplus(&["generate", "--checkpoint", &ck, "--concept", &c, "--out", &out(dir.path(), "c")]);
    assert_eq!(code(&o), 7);
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"nope").unwrap();
    let o = pplus(&["generate", "--checkpoint", &garbage.to_string_lossy(), "--prompt", "red square", "--out", &out(dir.path(), "d")]);
    assert_eq!(code(&o), 7);
}

#[test]
fn layer_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let c = out(dir.path(), "inv");
    assert_eq!(code(&pplus(&["invert", "--checkpoint", &ck, "--mode", "ti", "--steps", "1", "--out", &c])), 0);
    let concept = out(dir.path(), "inv/concept.txt");
    let o = pplus(&[
        "mix", "--checkpoint", &ck, "--shape-concept", &concept, "--style-concept", &concept,
        "--range", "(16,'down',9)", "--steps", "2", "--out", &out(dir.path(), "m"),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn config_echo_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let a = out(dir.path(), "a");
    let o = pplus(&["generate", "--checkpoint", &ck, "--prompt", "red square", "--steps", "3", "--seed", "42", "--out", &a]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a/config.json"))).unwrap();
    assert_eq!(echo["schema_version"], 1);
    assert_eq!(echo["command"], "generate");
    assert_eq!(echo["seed"], 42);
    assert_eq!(echo["params"]["steps"], 3);
    assert_eq!(echo["params"]["cfg"], 7.5);
    let b = out(dir.path(), "b");
    let cfg = out(dir.path(), "a/config.json");
    assert_eq!(code(&pplus(&["generate", "--config", &cfg, "--out", &b])), 0);
    for f in ["config.json", "sample_000.png", "routing.csv"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
    let c = out(dir.path(), "c");
    assert_eq!(code(&pplus(&["generate", "--config", &cfg, "--seed", "43", "--out", &c])), 0);
    assert_ne!(read(dir.path().join("a/sample_000.png")), read(dir.path().join("c/sample_000.png")));
    let o = pplus(&["mix", "--config", &cfg, "--out", &out(dir.path(), "x")]);
    assert_eq!(code(&o), 5);
}

#[test]
fn flags_override_file_and_env_is_the_seed_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let cfg = dir.path().join("c.json");
    let body = serde_json::json!({
        "schema_version": 1, "command": "generate",
        "params": {"checkpoint": ck, "prompt": "blue circle", "steps": 2, "cfg": 3.0}
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let a = out(dir.path(), "a");
    let o = Command::new(env!("CARGO_BIN_EXE_pplus"))
        .args(["generate", "--config", &cfg.to_string_lossy(), "--cfg", "5", "--out", &a])
        .env("PPLUS_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a/config.json"))).unwrap();
    assert_eq!(echo["seed"], 77);
    assert_eq!(echo["params"]["cfg"], 5.0);
    assert_eq!(echo["params"]["steps"], 2);
    let routing = String::from_utf8(read(dir.path().join("a/routing.csv"))).unwrap();
    assert!(routing.starts_with("sample,seed,layer,prompt,source,embedding"));
    assert!(routing.lines().nth(1).unwrap().starts_with("0,77,"));

    std::fs::write(&cfg, body.to_string().replace("\"schema_version\":1", "\"schema_version\":2")).unwrap();
    assert_eq!(code(&pplus(&["generate", "--config", &cfg.to_string_lossy(), "--out", &a])), 5);
    std::fs::write(&cfg, body.to_string().replace("\"cfg\"", "\"guidance\"")).unwrap();
    assert_eq!(code(&pplus(&["generate", "--config", &cfg.to_string_lossy(), "--out", &a])), 5);
}

#[test]
fn mixing_a_concept_with_itself_matches_generate() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let inv = out(dir.path(), "inv");
    assert_eq!(code(&pplus(&["invert", "--checkpoint", &ck, "--steps", "2", "--out", &inv])), 0);
    let concept = out(dir.path(), "inv/concept.txt");
    let g = out(dir.path(), "g");
    assert_eq!(code(&pplus(&["generate", "--checkpoint", &ck, "--concept", &concept, "--steps", "3", "--out", &g])), 0);
    let m = out(dir.path(), "m");
    let o = pplus(&[
        "mix", "--checkpoint", &ck, "--shape-concept", &concept, "--style-concept", &concept, "--k", "1", "--K", "4",
        "--steps", "3", "--out", &m,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path().join("g/sample_000.png")), read(dir.path().join("m/sample_000.png")));
    let routing = String::from_utf8(read(dir.path().join("m/routing.csv"))).unwrap();
    assert_eq!(routing.lines().filter(|l| l.contains(",shape,")).count(), 3);
}

#[test]
fn analysis_commands_write_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_in(dir.path());
    let run = |args: &[&str]| {
        let o = pplus(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    let (ti, xti) = (out(dir.path(), "ti"), out(dir.path(), "xti"));
    run(&["invert", "--checkpoint", &ck, "--mode", "ti", "--steps", "2", "--out", &ti]);
    run(&["invert", "--checkpoint", &ck, "--mode", "xti", "--steps", "2", "--reg-lambda", "0.002", "--out", &xti]);
    let (tc, xc) = (out(dir.path(), "ti/concept.txt"), out(dir.path(), "xti/concept.txt"));
    run(&["density", "--checkpoint", &ck, "--concepts", &tc, &xc, "--out", &out(dir.path(), "d")]);
    run(&["attn-ratio", "--checkpoint", &ck, "--pairs", "2", "--seeds", "1", "--steps", "2", "--out", &out(dir.path(), "a")]);
    run(&["subset-sweep", "--checkpoint", &ck, "--pairs", "1", "--seeds", "1", "--steps", "2", "--out", &out(dir.path(), "s")]);
    run(&["eval", "--checkpoint", &ck, "--concept", &xc, "--seeds", "1", "--steps", "2", "--out", &out(dir.path(), "e")]);
    run(&["corpus", "--images", "30", "--min-per-pair", "1", "--out", &out(dir.path(), "c")]);
    for f in [
        "d/density.csv", "d/summary.json", "a/ratios.csv", "a/summary.json", "s/sweep.csv", "s/routing.csv",
        "e/eval.csv", "e/summary.json", "c/manifest.csv", "c/held_out.csv", "ti/losses.csv", "xti/references/00.png",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let d: serde_json::Value = serde_json::from_slice(&read(dir.path().join("d/summary.json"))).unwrap();
    assert!(d["median_ti"].is_number() && d["median_xti"].is_number());
}
