use std::path::Path;
use std::process::{Command, Output};

fn itt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itt")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn small_cartpole(dir: &Path, kind: &str) -> String {
    let out = dir.join(format!("run_{kind}"));
    write_config(
        dir,
        &format!("{kind}.toml"),
        &format!(
            "[env]\nid = \"cartpole\"\nmax_steps = 50\n[policy]\nkind = \"{kind}\"\n[es]\niterations = 3\n[run]\nseeds = [1, 2]\nout_dir = \"{}\"\n",
            out.display()
        ),
    )
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cartpole(dir.path(), "itt");
    let o = itt(&["train", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("seed,score\n1,"));
    let run = dir.path().join("run_itt");
    let log = std::fs::read_to_string(run.join("seed_1/log.csv")).unwrap();
    assert!(log.starts_with("iter,reward_mean,reward_p10,reward_p90,wall_ms,tower_updated\n0,"));
    assert_eq!(log.lines().count(), 4);

    let ck = run.join("seed_1/checkpoint.json").display().to_string();
    let e1 = itt(&["eval", &ck, "--episodes", "3", "--seed", "9"]);
    let e2 = itt(&["eval", &ck, "--episodes", "3", "--seed", "9"]);
    assert!(e1.status.success());
    assert_eq!(e1.stdout, e2.stdout);
    assert!(stdout(&e1).contains("\"returns\":["));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[env]\nid = \"cartpole\"\nspeed = 3\n");
    let o = itt(&["train", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("env.speed"));

    let iot_srp = write_config(
        dir.path(),
        "iot.toml",
        "[env]\nid = \"cartpole\"\n[policy]\nkind = \"iot\"\n[fast]\nmode = \"srp\"\n",
    );
    assert_eq!(itt(&["train", &iot_srp]).status.code(), Some(1));
    assert_eq!(itt(&["train", "/nonexistent/config.toml"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = itt(&["eval", &dir.path().join("missing.json").display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    let a = write_config(dir.path(), "a.csv", "seed,score\n1,5\n");
    assert_eq!(itt(&["ttest", &a, &a]).status.code(), Some(2));
}

#[test]
fn ttest_on_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.csv", "seed,score\n1,3\n2,5\n3,4\n");
    let b = write_config(dir.path(), "b.csv", "seed,score\n3,1\n2,2\n1,2\n");
    let o = itt(&["ttest", &a, &b]);
    assert!(o.status.success());
    let out = stdout(&o);
    let row: Vec<f64> = out.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // d = (1, 3, 3): mean 7/3, sd 2/√3
    assert_eq!(row[0], 3.0);
    assert!((row[1] - (7.0 / 3.0) / ((2.0 / 3f64.sqrt()) / 3f64.sqrt())).abs() < 1e-12);
}

#[test]
fn verify_es_small() {
    let o = itt(&["verify-es", "--trials", "2000"]);
    let out = stdout(&o);
    assert!(out.starts_with("check,dim,m,fixture,measured,reference,rel_err,tolerance,pass\n"));
    assert!(out.contains("at_mse_closed_form,16,16,"));
}

#[test]
fn bench_select_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.toml", "[env]\nid = \"pendulum\"\n[policy]\nlatent_dim = 4\nhidden_dim = 4\n");
    let o = itt(&["bench-select", &cfg, "--n-list", "256,512", "--trials", "5", "--action-dim", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("backend,n,mean_candidates,mean_us,exact_fraction\n"));
    assert_eq!(out.lines().count(), 1 + 2 * 4);
}

#[test]
fn compare_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_cartpole(dir.path(), "itt");
    let b = small_cartpole(dir.path(), "iot");
    let out = dir.path().join("cmp");
    let o = itt(&["compare", &a, &b, "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(summary.starts_with("task,arch,mean,std,seeds\ncartpole,itt,"));
    assert!(std::fs::read_to_string(out.join("ttest.csv")).unwrap().starts_with("arch_a,arch_b,t,p\nitt,iot,"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        itt_core::harness::load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 6);
}
