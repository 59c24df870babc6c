use std::path::Path;
use std::process::{Command, Output};

fn superfeed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superfeed"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "dataset = \"ch.cpd\"\nampl_model = \"ampl.json\"\nampf_model = \"ampf.json\"\ndataset_size = 300\nn_trials = 40\n{extra}"
    );
    std::fs::write(dir.join("cfg.toml"), text).unwrap();
    "cfg.toml".into()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_is_reproducible_and_validates_first() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = superfeed(dir.path(), &["gen", "--config", &cfg, "--out", "a.cpd"]);
    let b = superfeed(dir.path(), &["gen", "--config", &cfg, "--out", "b.cpd"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a.cpd")).unwrap(),
        std::fs::read(dir.path().join("b.cpd")).unwrap()
    );

    let bad = write_config(dir.path(), "s = 65\n");
    let o = superfeed(dir.path(), &["gen", "--config", &bad, "--out", "bad.cpd"]);
    assert!(!o.status.success());
    assert!(!dir.path().join("bad.cpd").exists());

    std::fs::write(dir.path().join("typo.toml"), "n_trails = 3\n").unwrap();
    let o = superfeed(dir.path(), &["gen", "--config", "typo.toml", "--out", "x.cpd"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_trails"));
}

#[test]
fn training_order_is_enforced_and_sweeps_are_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nepochs = 3\n");
    let run = |args: &[&str]| {
        let o = superfeed(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["gen", "--config", &cfg, "--out", "ch.cpd"]);

    let o = superfeed(
        dir.path(),
        &["train", "--which", "ampf", "--config", &cfg, "--out", "ampf.json"],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train ampl first"), "{}", stderr(&o));

    run(&["train", "--which", "ampl", "--config", &cfg, "--out", "ampl.json"]);
    run(&["train", "--which", "ampl", "--config", &cfg, "--out", "ampl2.json"]);
    assert_eq!(
        std::fs::read(dir.path().join("ampl.json")).unwrap(),
        std::fs::read(dir.path().join("ampl2.json")).unwrap()
    );
    assert!(dir.path().join("ampl.json.loss.json").exists());
    run(&["train", "--which", "ampf", "--config", &cfg, "--out", "ampf.json"]);
    assert!(dir.path().join("ampf.json.corpus.cpf").exists());

    let sweep = |threads: &str, out: &str| {
        run(&[
            "sweep",
            "--config",
            &cfg,
            "--scheme",
            "proposed,ref_y1,ref_r1_tdm",
            "--snr-db",
            "-5,10",
            "--rho",
            "0.1,0.2",
            "--threads",
            threads,
            "--out",
            out,
        ]);
        std::fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let one = sweep("1", "one.csv");
    let four = sweep("4", "four.csv");
    assert_eq!(one, four);
    assert_eq!(one.lines().count(), 1 + 3 * 2 * 2);
    assert!(one.starts_with("scheme,snr_db,rho,c,alpha_or_beta,"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("one.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["snr_definition"], "E_over_sigma2_per_antenna");
    assert_eq!(meta["config"]["n_trials"], 40);

    let o = superfeed(
        dir.path(),
        &["sweep", "--config", &cfg, "--snr-db", "", "--out", "empty.csv"],
    );
    assert!(!o.status.success());

    let o = run(&[
        "bench",
        "--config",
        &cfg,
        "--scheme",
        "proposed,ref_y1",
        "--trials",
        "5",
        "--out",
        "bench.csv",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ref_y1"));
    let bench = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = superfeed::harness::ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
    let default = superfeed::harness::ExperimentConfig::load(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml"),
    )
    .unwrap();
    assert_eq!(default, superfeed::harness::ExperimentConfig::default());
}
