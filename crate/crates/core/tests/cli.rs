use std::path::Path;
use std::process::{Command, Output};

fn pairlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairlearn"))
        .args(args)
        .env("PAIRLEARN_THREADS", "2")
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = pairlearn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const DATA: &str = r#""data":{"blobs":{"classes":3,"n_per_class":30,"dim":2,"seed":4}}"#;
const MODEL: &str = r#""model":{"layer_sizes":[2,16,3],"seed":1}"#;

fn train_config(objective: &str, paradigm: &str) -> String {
    format!(
        r#"{{{DATA},{MODEL},"paradigm":"{paradigm}",
            "train":{{"objective":"{objective}","epochs":8,"decay_epochs":[6],"learning_rate":0.01}},
            "similarity":{{"labeled_fraction":0.2}},
            "output":{{"checkpoint":"{objective}.ckpt","metrics":"{objective}.csv"}}}}"#
    )
}

#[test]
fn gen_data_writes_every_row_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"data":{"blobs":{}}}"#);
    let out = dir.path().to_str().unwrap();
    run_ok(&["gen-data", "--config", &cfg, "--out", out]);
    let first = std::fs::read(dir.path().join("dataset.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().filter(|l| !l.trim().is_empty()).count(), 2000);
    run_ok(&["gen-data", "--config", &cfg, "--out", out]);
    assert_eq!(std::fs::read(dir.path().join("dataset.csv")).unwrap(), first);

    run_ok(&["gen-data", "--config", &cfg, "--out", out, "--seed", "9"]);
    assert_ne!(std::fs::read(dir.path().join("dataset.csv")).unwrap(), first);
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let usage = pairlearn(&["gen-data", "--config", "x.json"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(pairlearn(&["frobnicate"]).status.code(), Some(2));

    let missing = pairlearn(&["train", "--config", "/nonexistent.json", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));

    let strict = write(dir.path(), "strict.json", &format!(r#"{{{DATA},{MODEL},"trian":{{}}}}"#));
    let e = pairlearn(&["train", "--config", &strict, "--out", out]);
    assert_eq!(e.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&e.stderr).contains("trian"));

    let ce = write(dir.path(), "ce.json", &train_config("ce", "transfer"));
    assert_eq!(pairlearn(&["train", "--config", &ce, "--out", out]).status.code(), Some(1));
}

#[test]
fn train_is_deterministic_and_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "t.json", &train_config("mcl", "supervised"));
    let printed = run_ok(&["train", "--config", &cfg, "--out", out]);
    assert!(printed.contains("accuracy="));
    let ckpt = std::fs::read(dir.path().join("mcl.ckpt")).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("mcl.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 9);
    assert!(metrics.starts_with("epoch,loss,accuracy,nmi\n"));
    run_ok(&["train", "--config", &cfg, "--out", out]);
    assert_eq!(std::fs::read(dir.path().join("mcl.ckpt")).unwrap(), ckpt);

    let gen = write(dir.path(), "g.json", &format!("{{{DATA}}}"));
    run_ok(&["gen-data", "--config", &gen, "--out", out]);
    let data = dir.path().join("dataset.csv");
    let ckpt_path = dir.path().join("mcl.ckpt");
    let (data, ckpt_path) = (data.to_str().unwrap(), ckpt_path.to_str().unwrap());
    let scored = run_ok(&["eval", "--checkpoint", ckpt_path, "--data", data, "--loss", "kcl"]);
    assert!(scored.contains("cluster_sizes=") && scored.contains("loss="));
    let wrong_k = pairlearn(&["eval", "--checkpoint", ckpt_path, "--data", data, "--k", "5"]);
    assert_eq!(wrong_k.status.code(), Some(1));

    for paradigm in ["transfer", "semi"] {
        let cfg = write(dir.path(), "p.json", &train_config("kcl", paradigm));
        assert!(run_ok(&["train", "--config", &cfg, "--out", out]).contains("nmi="));
    }
}

fn loss_line(printed: &str) -> f64 {
    printed
        .lines()
        .find_map(|l| l.strip_prefix("loss="))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn landscape_grids_match_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for objective in ["mcl", "ce", "kcl"] {
        let cfg = write(dir.path(), "t.json", &train_config(objective, "supervised"));
        run_ok(&["train", "--config", &cfg, "--out", out]);
    }
    let gen = write(dir.path(), "g.json", &format!("{{{DATA}}}"));
    run_ok(&["gen-data", "--config", &gen, "--out", out]);
    let ckpt = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let random = write(
        dir.path(),
        "r.json",
        &format!(
            r#"{{{DATA},"landscape":{{"method":"random","checkpoints":["{}"],"grid":{{"resolution":3}}}},
                "output":{{"surface":"random.csv"}}}}"#,
            ckpt("mcl.ckpt")
        ),
    );
    run_ok(&["landscape", "--config", &random, "--out", out]);
    let text = std::fs::read_to_string(dir.path().join("random.csv")).unwrap();
    assert_eq!(text.lines().count(), 10);

    let mutual = write(
        dir.path(),
        "m.json",
        &format!(
            r#"{{{DATA},"landscape":{{"method":"mutual","loss":"mcl","checkpoints":["{}","{}","{}"],
                "grid":{{"alpha":[0,1],"beta":[0,1],"resolution":2}}}},"output":{{"surface":"mutual.csv"}}}}"#,
            ckpt("mcl.ckpt"),
            ckpt("ce.ckpt"),
            ckpt("kcl.ckpt")
        ),
    );
    run_ok(&["landscape", "--config", &mutual, "--out", out]);
    let text = std::fs::read_to_string(dir.path().join("mutual.csv")).unwrap();
    let cells: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect();
    let data = dir.path().join("dataset.csv");
    let data = data.to_str().unwrap();
    for (a, b, name) in [(0.0, 0.0, "mcl.ckpt"), (1.0, 0.0, "ce.ckpt"), (0.0, 1.0, "kcl.ckpt")] {
        let direct = loss_line(&run_ok(&["eval", "--checkpoint", &ckpt(name), "--data", data, "--loss", "mcl"]));
        let cell = cells.iter().find(|c| c.0 == a && c.1 == b).unwrap().2;
        assert!((cell - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{name}: {cell} vs {direct}");
    }

    let three = write(
        dir.path(),
        "bad.json",
        &format!(
            r#"{{{DATA},"landscape":{{"method":"mutual","checkpoints":["{}"]}}}}"#,
            ckpt("mcl.ckpt")
        ),
    );
    assert_eq!(pairlearn(&["landscape", "--config", &three, "--out", out]).status.code(), Some(1));
}
